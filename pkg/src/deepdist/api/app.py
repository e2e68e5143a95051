"""HTTP service wrapping simulation, distance estimation, reconstruction and sweeps."""
from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..deep import DeepConfig
from ..distances import all_pairs_distances, read_distance_csv, write_distance_csv
from ..errors import ConfigError, InputError, NoDecisionError, UnsupportedError, ValidationError
from ..gtr import RateMatrix, model_from_config, model_to_config, preset_models
from ..harness import ExperimentConfig, alignment_seed, tree_seed, generate_phylogeny, parse_experiment, sweep
from ..reconstruct import run_reconstruction
from ..simulate import read_alignment, read_fasta, sample_alignment, write_alignment, write_fasta
from ..tree import to_newick
from ..verify import run_checks
from .schemas import (
    CheckResult,
    DistancesRequest,
    DistancesResponse,
    ModelSpec,
    ReconstructRequest,
    ReconstructResponse,
    SimulateRequest,
    SimulateResponse,
    SweepRequest,
    SweepResponse,
    VerifyResponse,
)

_CLIENT_ERRORS = (InputError, ValidationError, ConfigError, UnsupportedError, NoDecisionError)

app = FastAPI(title="deepdist", version=__version__)


def _model(spec: ModelSpec) -> RateMatrix:
    if spec.config is not None:
        return model_from_config(spec.config)
    return preset_models(spec.preset, *spec.params)


def _guard(fn):
    try:
        return fn()
    except _CLIENT_ERRORS as e:
        raise HTTPException(status_code=422, detail=f"{type(e).__name__}: {e}") from None


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/simulate", response_model=SimulateResponse)
def simulate(req: SimulateRequest):
    """Random tree plus alignment; ``seed`` reproduces trial 0 of a sweep with that master seed."""

    def run():
        model = _model(req.model)
        cfg = ExperimentConfig(family=req.family, Delta=req.Delta, f=req.f, g=req.g, n_grid=(req.n,), seed=req.seed)
        tree = generate_phylogeny(cfg, tree_seed(req.seed, 0, req.n), req.n)
        aln = sample_alignment(tree, model, req.k, alignment_seed(req.seed, 0, req.n, req.k))
        text = write_fasta(aln) if req.format == "fasta" else write_alignment(aln)
        return SimulateResponse(alignment=text, tree=to_newick(tree), model=model_to_config(model))

    return _guard(run)


@app.post("/distances", response_model=DistancesResponse)
def distances(req: DistancesRequest):
    def run():
        model = _model(req.model)
        if req.format == "fasta":
            aln = read_fasta(req.alignment, model.phi)
        else:
            aln = read_alignment(req.alignment)
        if aln.phi != model.phi:
            raise InputError(f"alignment has {aln.phi} states, model has {model.phi}")
        dm = all_pairs_distances(aln, model.nu, estimator=req.estimator)
        inf = int(np.count_nonzero(np.isinf(np.triu(dm.tau_hat, 1))))
        return DistancesResponse(matrix=write_distance_csv(dm), n=dm.n, infinite_pairs=inf)

    return _guard(run)


@app.post("/reconstruct", response_model=ReconstructResponse)
def reconstruct(req: ReconstructRequest):
    def run():
        dm = read_distance_csv(req.matrix)
        cfg = DeepConfig(**req.config.model_dump())
        log = run_reconstruction(dm, cfg, mode=req.method)
        if log.failure is not None:
            return ReconstructResponse(
                success=False,
                log=log.text(),
                failure_level=log.failure.level,
                failure_reason=log.failure.reason,
            )
        return ReconstructResponse(success=True, tree=to_newick(log.tree), log=log.text())

    return _guard(run)


@app.post("/sweep", response_model=SweepResponse)
def run_sweep(req: SweepRequest):
    def run():
        cfg = parse_experiment(req.config)
        res = sweep(cfg)
        k90 = {}
        for est, meth in sorted({(r.estimator, r.method) for r in res.rows}):
            k90[f"{est}/{meth}"] = {str(n): k for n, k in res.k90(est, meth).items()}
        return SweepResponse(csv=res.to_csv(timing=req.timing), k90=k90, flags=res.baseline_flags())

    return _guard(run)


@app.post("/verify", response_model=VerifyResponse)
def verify():
    checks = [CheckResult(name=c.name, passed=c.passed, detail=c.detail) for c in run_checks()]
    return VerifyResponse(passed=all(c.passed for c in checks), checks=checks)

