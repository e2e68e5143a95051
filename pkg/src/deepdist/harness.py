"""Experiment orchestration: tree generation, seeded trials and (n, k) sweeps.

Seeding rule: the tree of trial ``t`` at size ``n`` is drawn from
``SeedSequence([master, t, n])`` and its alignment of length ``k`` from
``SeedSequence([master, t, n, k])``.  Every trial is therefore reproducible
on its own, whatever order or process it runs in, and all ``k`` values of a
trial share the same tree.
"""
from __future__ import annotations

import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import binomtest

from .deep import G_STAR, DeepConfig
from .distances import all_pairs_distances
from .errors import ConfigError, InputError, TrialTimeout
from .gtr import RateMatrix, parse_kv, preset_models
from .reconstruct import run_reconstruction
from .simulate import sample_alignment
from .tree import Phylogeny, robinson_foulds, unrooted_equal

EXPERIMENT_HEADER = "# deepdist-experiment v1"
SWEEP_HEADER = "# deepdist-sweep v1"
ESTIMATORS = ("eigenvector", "cfn", "logdet")
METHODS = ("deep", "naive")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "cfn"
    model_params: tuple[float, ...] = ()
    family: str = "homogeneous"
    Delta: float = 0.05
    f: float = 0.25
    g: float = 0.25
    n_grid: tuple[int, ...] = (32,)
    k_grid: tuple[int, ...] = (1000, 10000, 100000)
    trials: int = 20
    seed: int = 0
    alpha: float = 1.5
    D: float | None = None
    W: float = 6.0
    gamma: float = 3.0
    quartet_budget: int | None = None
    estimator: str = "eigenvector"
    method: str = "deep"
    baselines: bool = False
    timeout: float | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.n_grid or not self.k_grid:
            raise ConfigError("n and k grids must be nonempty")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if any(k < 1 for k in self.k_grid):
            raise ConfigError("sequence lengths must be positive")
        if self.family not in ("homogeneous", "random"):
            raise ConfigError(f"unknown tree family {self.family!r}")
        if self.family == "homogeneous" and any(n < 1 or n & (n - 1) for n in self.n_grid):
            raise ConfigError("homogeneous trees need n to be a power of two")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not (0 < self.Delta <= self.f <= self.g):
            raise ConfigError("need 0 < Delta <= f <= g")
        if self.g >= G_STAR:
            raise ConfigError("g must stay below ln(sqrt 2) for the deep pipeline")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        _multiples(self.f, self.g, self.Delta)

    def deep_config(self) -> DeepConfig:
        return DeepConfig(
            Delta=self.Delta,
            f=self.f,
            g=self.g,
            alpha=self.alpha,
            W=self.W,
            D=self.D,
            gamma=self.gamma,
            quartet_budget=self.quartet_budget,
        )

    def rate_matrix(self) -> RateMatrix:
        return preset_models(self.model, *self.model_params)


_INT_KEYS = {"trials", "seed", "quartet_budget", "workers"}
_FLOAT_KEYS = {"delta", "f", "g", "alpha", "d", "w", "gamma", "timeout"}
_FIELD = {"delta": "Delta", "d": "D", "w": "W"}


def parse_experiment(text: str) -> ExperimentConfig:
    """Read a key-value experiment file.

    Keys: ``model`` (preset name and parameters), ``family``, ``delta``,
    ``f``, ``g``, ``n`` and ``k`` (whitespace-separated grids), ``trials``,
    ``seed``, ``alpha``, ``d``, ``w``, ``gamma``, ``quartet_budget``,
    ``estimator``, ``method``, ``baselines``, ``timeout``, ``workers``.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != EXPERIMENT_HEADER:
        raise ConfigError(f"experiment file must start with {EXPERIMENT_HEADER!r}")
    kv = parse_kv("\n".join(lines[1:]))
    args: dict = {}
    try:
        for key, val in kv.items():
            if key == "model":
                name, *params = val.split()
                args["model"] = name
                args["model_params"] = tuple(float(p) for p in params)
            elif key in ("family", "estimator", "method"):
                args[key] = val
            elif key == "n":
                args["n_grid"] = tuple(int(x) for x in val.split())
            elif key == "k":
                args["k_grid"] = tuple(int(float(x)) for x in val.split())
            elif key == "baselines":
                args["baselines"] = val.lower() in ("1", "true", "yes", "on")
            elif key in _INT_KEYS:
                args[key] = None if val.lower() == "none" else int(val)
            elif key in _FLOAT_KEYS:
                args[_FIELD.get(key, key)] = None if val.lower() in ("none", "default") else float(val)
            else:
                raise ConfigError(f"unknown key {key!r}")
    except ValueError as e:
        raise ConfigError(f"bad value in experiment file: {e}") from None
    return ExperimentConfig(**args)


def experiment_to_text(cfg: ExperimentConfig) -> str:
    fmt = lambda x: "none" if x is None else str(x)  # noqa: E731
    lines = [
        EXPERIMENT_HEADER,
        f"model = {' '.join([cfg.model, *map(str, cfg.model_params)])}",
        f"family = {cfg.family}",
        f"delta = {cfg.Delta}",
        f"f = {cfg.f}",
        f"g = {cfg.g}",
        f"n = {' '.join(map(str, cfg.n_grid))}",
        f"k = {' '.join(map(str, cfg.k_grid))}",
        f"trials = {cfg.trials}",
        f"seed = {cfg.seed}",
        f"alpha = {cfg.alpha}",
        f"d = {fmt(cfg.D)}",
        f"w = {cfg.W}",
        f"gamma = {cfg.gamma}",
        f"quartet_budget = {fmt(cfg.quartet_budget)}",
        f"estimator = {cfg.estimator}",
        f"method = {cfg.method}",
        f"baselines = {cfg.baselines}",
        f"timeout = {fmt(cfg.timeout)}",
        f"workers = {cfg.workers}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# tree generation


def _multiples(f: float, g: float, Delta: float) -> np.ndarray:
    lo = math.ceil(f / Delta - 1e-9)
    hi = math.floor(g / Delta + 1e-9)
    if lo > hi:
        raise ConfigError("no multiple of Delta lies in [f, g]")
    return np.arange(lo, hi + 1)


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(rng))
    if isinstance(rng, (int, np.integer)):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(rng))))
    raise InputError("rng must be a Generator, SeedSequence or integer")


def homogeneous_tree(h: int, weights, labels=None) -> Phylogeny:
    """Complete binary tree of height ``h``; ``weights`` lists edges in preorder."""
    weights = list(weights)
    if len(weights) != 2 ** (h + 1) - 2:
        raise InputError("wrong number of edge weights")
    n = 2**h
    labels = list(range(n)) if labels is None else list(labels)
    edges = []
    leaf_label = {}
    it = iter(weights)
    counter = [1]
    leaf_counter = [0]

    def grow(v, depth):
        if depth == h:
            leaf_label[v] = labels[leaf_counter[0]]
            leaf_counter[0] += 1
            return
        for _ in range(2):
            c = counter[0]
            counter[0] += 1
            edges.append((v, c, next(it)))
            grow(c, depth + 1)

    if h == 0:
        return Phylogeny(children={0: ()}, weight={}, root=0, leaf_label={0: labels[0]})
    grow(0, 0)
    return Phylogeny.from_edges(edges, leaf_label, root=0)


def random_topology(n: int, rng) -> tuple[list[tuple[int, int]], dict[int, int], int]:
    """Uniform rooted binary topology by inserting leaves on random edges.

    Leaf ``i`` is attached to one of the ``2i - 1`` edges of the current
    tree, counting the edge above the root, which gives every labelled
    rooted topology the same probability.
    """
    gen = _generator(rng)
    parent: dict[int, int | None] = {0: None}
    leaf_label = {0: 0}
    next_id = 1
    root = 0
    for i in range(1, n):
        vertices = sorted(parent)
        target = vertices[int(gen.integers(len(vertices)))]
        mid, leaf = next_id, next_id + 1
        next_id += 2
        parent[mid] = parent[target]
        parent[target] = mid
        parent[leaf] = mid
        if parent[mid] is None:
            root = mid
        leaf_label[leaf] = i
    edges = [(p, c) for c, p in parent.items() if p is not None]
    return edges, leaf_label, root


def generate_phylogeny(cfg: ExperimentConfig, rng, n: int | None = None) -> Phylogeny:
    """Tree of ``n`` leaves with independent edge weights uniform on the allowed multiples of Delta."""
    gen = _generator(rng)
    n = cfg.n_grid[0] if n is None else int(n)
    mult = _multiples(cfg.f, cfg.g, cfg.Delta)
    if cfg.family == "homogeneous":
        if n < 1 or n & (n - 1):
            raise ConfigError("homogeneous trees need n to be a power of two")
        h = n.bit_length() - 1
        weights = gen.choice(mult, size=2 ** (h + 1) - 2) * cfg.Delta
        labels = gen.permutation(n)
        return homogeneous_tree(h, weights.tolist(), labels.tolist())
    edges, leaf_label, root = random_topology(n, gen)
    if not edges:
        return Phylogeny(children={root: ()}, weight={}, root=root, leaf_label=leaf_label)
    weights = gen.choice(mult, size=len(edges)) * cfg.Delta
    return Phylogeny.from_edges(
        [(p, c, float(w)) for (p, c), w in zip(edges, weights)], leaf_label, root=root
    )


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class TrialResult:
    n: int
    k: int
    trial: int
    seed: int
    estimator: str
    method: str
    success: bool
    rf_distance: int
    failure_level: int | None = None
    failure_reason: str | None = None
    timed_out: bool = False
    wall_time: float = field(default=0.0, compare=False)


def tree_seed(master: int, trial: int, n: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, trial, n])


def alignment_seed(master: int, trial: int, n: int, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, trial, n, k])


def run_trial(
    cfg: ExperimentConfig,
    n: int,
    k: int,
    seed: int,
    estimator: str | None = None,
    method: str | None = None,
) -> TrialResult:
    """Generate, simulate, estimate, reconstruct and compare one instance.

    ``seed`` is the trial index under the config's master seed.  Aborts and
    timeouts are recorded as failures.
    """
    estimator = cfg.estimator if estimator is None else estimator
    method = cfg.method if method is None else method
    start = time.monotonic()
    deadline = None if cfg.timeout is None else start + cfg.timeout
    model = cfg.rate_matrix()
    tree = generate_phylogeny(cfg, tree_seed(cfg.seed, seed, n), n)
    failure_level = None
    failure_reason = None
    timed_out = False
    rf = len_splits_bound(n)
    success = False
    try:
        aln = sample_alignment(tree, model, k, alignment_seed(cfg.seed, seed, n, k))
        _check_deadline(deadline)
        dm = all_pairs_distances(aln, model.nu, estimator=estimator)
        _check_deadline(deadline)
        log = run_reconstruction(dm, cfg.deep_config(), n=n, mode=method, deadline=deadline)
        if log.failure is not None:
            failure_level = log.failure.level
            failure_reason = log.failure.reason
        else:
            rf = robinson_foulds(log.tree, tree)
            success = unrooted_equal(log.tree, tree)
            if success != (rf == 0):
                raise AssertionError("split comparison disagrees with Robinson-Foulds")
    except TrialTimeout:
        timed_out = True
        failure_reason = "timeout"
    return TrialResult(
        n=n,
        k=k,
        trial=seed,
        seed=cfg.seed,
        estimator=estimator,
        method=method,
        success=success,
        rf_distance=int(rf),
        failure_level=failure_level,
        failure_reason=failure_reason,
        timed_out=timed_out,
        wall_time=time.monotonic() - start,
    )


def len_splits_bound(n: int) -> int:
    """Robinson-Foulds distance charged when no tree is produced.

    Every nontrivial split of the truth counts as missed, with a floor of 1
    so an abort never reads as a perfect score.
    """
    return max(n - 3, 1)


def _check_deadline(deadline):
    if deadline is not None and time.monotonic() > deadline:
        raise TrialTimeout("trial exceeded its wall-clock budget")


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepRow:
    n: int
    k: int
    estimator: str
    method: str
    successes: int
    trials: int
    ci_lo: float
    ci_hi: float
    mean_time: float
    timeouts: int = 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials


@dataclass
class SweepResult:
    rows: list[SweepRow]
    trials: list[TrialResult]

    def to_csv(self, timing: bool = True) -> str:
        return sweep_csv(self.rows, timing=timing)

    def k90(self, estimator: str = "eigenvector", method: str = "deep", level: float = 0.9) -> dict[int, int | None]:
        """Smallest grid ``k`` whose success rate reaches ``level``, per ``n``."""
        out: dict[int, int | None] = {}
        for n in sorted({r.n for r in self.rows}):
            ks = sorted(
                (r.k, r.success_rate)
                for r in self.rows
                if r.n == n and r.estimator == estimator and r.method == method
            )
            out[n] = next((k for k, rate in ks if rate >= level), None)
        return out

    def baseline_flags(self) -> list[str]:
        """Cells where the naive pipeline beat the deep one."""
        deep = {(r.n, r.k, r.estimator): r for r in self.rows if r.method == "deep"}
        flags = []
        for r in self.rows:
            if r.method != "naive":
                continue
            d = deep.get((r.n, r.k, r.estimator))
            if d is not None and r.success_rate > d.success_rate:
                flags.append(
                    f"n={r.n} k={r.k}: naive {r.success_rate:.2f} > deep {d.success_rate:.2f}"
                )
        return flags


def clopper_pearson(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=confidence, method="exact")
    return float(ci.low), float(ci.high)


def _combos(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    combos = [(cfg.estimator, cfg.method)]
    if cfg.baselines:
        extra = [("eigenvector", "naive"), ("logdet", "deep")]
        if cfg.rate_matrix().phi == 2:
            extra.insert(0, ("cfn", "deep"))
        for c in extra:
            if c not in combos:
                combos.append(c)
    return combos


def _run_job(args) -> TrialResult:
    cfg, n, k, t, est, meth = args
    return run_trial(cfg, n, k, t, estimator=est, method=meth)


def sweep(cfg: ExperimentConfig) -> SweepResult:
    """Every (n, k, estimator, method) cell over ``cfg.trials`` seeded trials."""
    jobs = [
        (cfg, n, k, t, est, meth)
        for n in cfg.n_grid
        for k in cfg.k_grid
        for est, meth in _combos(cfg)
        for t in range(cfg.trials)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        results = [_run_job(j) for j in jobs]
    rows = []
    cells: dict[tuple, list[TrialResult]] = {}
    for r in results:
        cells.setdefault((r.n, r.k, r.estimator, r.method), []).append(r)
    for (n, k, est, meth), rs in cells.items():
        s = sum(r.success for r in rs)
        lo, hi = clopper_pearson(s, len(rs))
        rows.append(
            SweepRow(
                n=n,
                k=k,
                estimator=est,
                method=meth,
                successes=s,
                trials=len(rs),
                ci_lo=lo,
                ci_hi=hi,
                mean_time=float(np.mean([r.wall_time for r in rs])),
                timeouts=sum(r.timed_out for r in rs),
            )
        )
    return SweepResult(rows=rows, trials=results)


SWEEP_COLUMNS = ("n", "k", "estimator", "method", "success_rate", "ci_lo", "ci_hi", "mean_time")


def sweep_csv(rows, timing: bool = True) -> str:
    """Results table; ``timing=False`` blanks the wall-clock column so reruns compare equal."""
    buf = io.StringIO()
    buf.write(SWEEP_HEADER + "\n")
    buf.write(",".join(SWEEP_COLUMNS) + "\n")
    for r in rows:
        t = f"{r.mean_time:.6f}" if timing else ""
        buf.write(
            f"{r.n},{r.k},{r.estimator},{r.method},{r.success_rate:.6f},{r.ci_lo:.6f},{r.ci_hi:.6f},{t}\n"
        )
    return buf.getvalue()


def trial_to_dict(r: TrialResult) -> dict:
    return asdict(r)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
