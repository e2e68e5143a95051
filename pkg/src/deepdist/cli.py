"""Command-line client.

Every subcommand is a request to the HTTP service.  With ``--server URL``
requests go over the network; otherwise the app is mounted in-process.
"""
from __future__ import annotations

import sys
import warnings

import click
import httpx

from .gtr import parse_kv

_DEEP_KEYS = {
    "delta": ("Delta", float),
    "f": ("f", float),
    "g": ("g", float),
    "alpha": ("alpha", float),
    "w": ("W", float),
    "d": ("D", float),
    "gamma": ("gamma", float),
    "quartet_budget": ("quartet_budget", int),
}


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .api import app

    return TestClient(app)


def _call(ctx, path: str, payload: dict | None = None) -> dict:
    try:
        with _client(ctx.obj["server"]) as c:
            resp = c.post(path, json=payload or {})
    except httpx.TransportError as e:
        raise click.ClickException(f"cannot reach {ctx.obj['server']}: {e}") from None
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise click.ClickException(f"{path} failed ({resp.status_code}): {detail}")
    return resp.json()


def _emit(text: str, out):
    if out is None:
        click.echo(text, nl=not text.endswith("\n"))
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _model_spec(preset: str, params: tuple[float, ...], model_file) -> dict:
    if model_file is not None:
        return {"config": open(model_file).read()}
    return {"preset": preset, "params": list(params)}


model_options = [
    click.option("--preset", default="cfn", show_default=True, help="cfn, binary_asymmetric or jukes_cantor_like"),
    click.option("--param", "params", type=float, multiple=True, help="preset parameter (repeatable)"),
    click.option("--model-file", type=click.Path(exists=True, dir_okay=False), help="model config file"),
]


def with_model(fn):
    for opt in reversed(model_options):
        fn = opt(fn)
    return fn


@click.group()
@click.option("--server", envvar="DEEPDIST_SERVER", default=None, help="base URL of a running service")
@click.pass_context
def main(ctx, server):
    """Simulate, estimate and reconstruct phylogenies."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@with_model
@click.option("--n", "n", type=int, default=16, show_default=True)
@click.option("--k", "k", type=int, default=1000, show_default=True)
@click.option("--family", type=click.Choice(["homogeneous", "random"]), default="homogeneous")
@click.option("--delta", type=float, default=0.05, show_default=True)
@click.option("--f", "f", type=float, default=0.25, show_default=True)
@click.option("--g", "g", type=float, default=0.25, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["native", "fasta"]), default="native")
@click.option("--out", type=click.Path(dir_okay=False), help="alignment file (default stdout)")
@click.option("--tree-out", type=click.Path(dir_okay=False), help="write the true tree as Newick")
@click.pass_context
def simulate(ctx, preset, params, model_file, n, k, family, delta, f, g, seed, fmt, out, tree_out):
    """Emit an alignment and its true tree."""
    body = {
        "model": _model_spec(preset, params, model_file),
        "family": family,
        "n": n,
        "k": k,
        "Delta": delta,
        "f": f,
        "g": g,
        "seed": seed,
        "format": fmt,
    }
    res = _call(ctx, "/simulate", body)
    _emit(res["alignment"], out)
    if tree_out:
        _emit(res["tree"] + "\n", tree_out)
    elif out is not None:
        click.echo(res["tree"])


@main.command()
@click.argument("alignment", type=click.Path(exists=True, dir_okay=False))
@with_model
@click.option("--estimator", type=click.Choice(["eigenvector", "cfn", "logdet"]), default="eigenvector")
@click.option("--format", "fmt", type=click.Choice(["native", "fasta"]), default="native")
@click.option("--out", type=click.Path(dir_okay=False), help="matrix CSV (default stdout)")
@click.pass_context
def distances(ctx, alignment, preset, params, model_file, estimator, fmt, out):
    """Alignment to distance matrix CSV."""
    body = {
        "alignment": open(alignment).read(),
        "format": fmt,
        "model": _model_spec(preset, params, model_file),
        "estimator": estimator,
    }
    res = _call(ctx, "/distances", body)
    _emit(res["matrix"], out)
    if res["infinite_pairs"]:
        click.echo(f"{res['infinite_pairs']} pairs have infinite estimated distance", err=True)


@main.command()
@click.argument("matrix", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), help="key = value file")
@click.option("--delta", type=float)
@click.option("--f", "f", type=float)
@click.option("--g", "g", type=float)
@click.option("--alpha", type=float)
@click.option("--W", "W", type=float)
@click.option("--D", "D", type=float)
@click.option("--gamma", type=float)
@click.option("--quartet-budget", type=int)
@click.option("--method", type=click.Choice(["deep", "naive"]), default="deep")
@click.option("--out", type=click.Path(dir_okay=False), help="Newick output (default stdout)")
@click.option("--log", "log_file", type=click.Path(dir_okay=False), help="per-level diagnostic log")
@click.pass_context
def reconstruct(ctx, matrix, config_file, delta, f, g, alpha, W, D, gamma, quartet_budget, method, out, log_file):
    """Distance matrix CSV to Newick."""
    cfg: dict = {}
    if config_file:
        for key, val in parse_kv(open(config_file).read()).items():
            if key not in _DEEP_KEYS:
                raise click.ClickException(f"unknown config key {key!r}")
            name, conv = _DEEP_KEYS[key]
            cfg[name] = None if val.lower() == "none" else conv(val)
    flags = dict(Delta=delta, f=f, g=g, alpha=alpha, W=W, D=D, gamma=gamma, quartet_budget=quartet_budget)
    cfg.update({k: v for k, v in flags.items() if v is not None})
    res = _call(ctx, "/reconstruct", {"matrix": open(matrix).read(), "config": cfg, "method": method})
    if log_file:
        _emit(res["log"] + "\n", log_file)
    else:
        click.echo(res["log"], err=True)
    if not res["success"]:
        click.echo(f"reconstruction failed at level {res['failure_level']}: {res['failure_reason']}", err=True)
        sys.exit(1)
    _emit(res["tree"] + "\n", out)


@main.command("sweep")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="results CSV (default stdout)")
@click.option("--no-timing", is_flag=True, help="leave the wall-clock column empty")
@click.pass_context
def sweep_cmd(ctx, config, out, no_timing):
    """Experiment config file to results CSV."""
    res = _call(ctx, "/sweep", {"config": open(config).read(), "timing": not no_timing})
    _emit(res["csv"], out)
    for combo, table in res["k90"].items():
        cells = ", ".join(f"n={n}: {k if k is not None else '-'}" for n, k in table.items())
        click.echo(f"k90 {combo}: {cells}", err=True)
    for flag in res["flags"]:
        click.echo(f"baseline warning: {flag}", err=True)


@main.command()
@click.pass_context
def verify(ctx):
    """Run the built-in oracle checks."""
    res = _call(ctx, "/verify")
    for c in res["checks"]:
        click.echo(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['detail']}")
    if not res["passed"]:
        sys.exit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("deepdist.api:app", host=host, port=port)


if __name__ == "__main__":
    main()
