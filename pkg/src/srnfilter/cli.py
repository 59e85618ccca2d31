"""Command-line front end: model I/O, simulation, filtering, convergence
studies and the numerical validation suite."""

from __future__ import annotations

import functools
import json
import sys

import click
import numpy as np

from .builtin import BuiltinModel, builtin_model
from .errors import (
    AllUnreliable,
    BadParam,
    Degenerate,
    EmptyMatch,
    ExplosionGuard,
    MissingTable,
    SizeCap,
    SrnFilterError,
    StepUnstable,
    TableGap,
    UnknownModel,
    ZeroMass,
)
from .filters import FilterConfig, run_filter
from .harness import convergence_study, fmp_consistency_check, mp_consistency_check, parse_qoi
from .model import StatePartition, model_from_json
from .simulate import extract_observation, sample_initial, ssa_simulate, stream_rng

_USAGE_ERRORS = (UnknownModel, BadParam)
_DEGENERATE_ERRORS = (Degenerate, AllUnreliable, EmptyMatch)
_NUMERICAL_ERRORS = (StepUnstable, ZeroMass, SizeCap, ExplosionGuard, TableGap,
                     MissingTable)


def _fail(code, err):
    sys.stderr.write(json.dumps({"error": type(err).__name__, "detail": str(err)}) + "\n")
    sys.exit(code)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _USAGE_ERRORS as err:
            _fail(2, err)
        except _DEGENERATE_ERRORS as err:
            _fail(4, err)
        except _NUMERICAL_ERRORS as err:
            _fail(3, err)
        except SrnFilterError as err:
            _fail(3, err)

    return wrapper


def _apply_config(config_path, values: dict) -> dict:
    """Config-file entries override command-line values of the same name."""
    if not config_path:
        return values
    with open(config_path) as fh:
        overrides = json.load(fh)
    out = dict(values)
    for k, v in overrides.items():
        key = k.replace("-", "_")
        if key not in out:
            raise BadParam(f"unknown config key {k!r}")
        out[key] = v
    return out


def _parse_partition(spec: str, names) -> StatePartition:
    """Parse 'interest=S1;observed=S3' into a partition (nuisance inferred)."""
    groups = {"interest": [], "observed": []}
    for part in spec.split(";"):
        key, _, rest = part.partition("=")
        key = key.strip()
        if key not in groups:
            raise BadParam(f"unknown partition group {key!r}")
        groups[key] = [s.strip() for s in rest.split(",") if s.strip()]
    try:
        interest = tuple(names.index(s) for s in groups["interest"])
        observed = tuple(names.index(s) for s in groups["observed"])
    except ValueError as err:
        raise BadParam(f"partition names a missing species: {err}")
    nuisance = tuple(i for i in range(len(names))
                     if i not in interest and i not in observed)
    return StatePartition(interest, nuisance, observed)


def _load_setup(model_src, d, partition_spec) -> BuiltinModel:
    if model_src.startswith("builtin:"):
        name = model_src[len("builtin:"):]
        params = {"d": d} if name == "linear-cascade" and d else {}
        return builtin_model(name, **params)
    with open(model_src) as fh:
        model, initial, partition = model_from_json(fh.read())
    if partition_spec:
        partition = _parse_partition(partition_spec, list(model.species_names))
    if partition is None:
        raise BadParam("a partition is required (in the model file or via --partition)")
    box = tuple((0, 10) for _ in partition.hidden_idx)
    return BuiltinModel("file", model, partition, initial, box,
                        tuple((0, 10) for _ in partition.interest_idx), 5.0)


def _parse_box(spec: str, dims: int):
    pairs = []
    for part in spec.split(","):
        lo, _, hi = part.partition(":")
        try:
            pairs.append((int(lo), int(hi)))
        except ValueError:
            raise BadParam(f"bad box component {part!r}; expected lo:hi")
    if len(pairs) == 1:
        pairs = pairs * dims
    if len(pairs) != dims:
        raise BadParam(f"box needs 1 or {dims} components, got {len(pairs)}")
    return tuple(pairs)


def _observed_path(setup: BuiltinModel, T, seed):
    traj = ssa_simulate(setup.model,
                        sample_initial(setup.initial, stream_rng(seed)),
                        T, stream_rng(seed, 1))
    return extract_observation(traj, setup.partition)


_model_opts = [
    click.option("--model", required=True,
                 help="builtin:<name> or a path to a model JSON file"),
    click.option("--d", type=int, default=None, help="cascade species count"),
    click.option("--partition", "partition_spec", default=None,
                 help="'interest=A;observed=C' (file models only)"),
    click.option("--config", default=None,
                 help="JSON file whose entries override the flags"),
]


def _with_model_opts(fn):
    for opt in reversed(_model_opts):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Exact-observation stochastic filtering for reaction networks."""


@main.command()
@_with_model_opts
@click.option("--T", "horizon", type=float, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, help="trajectory CSV path")
@_guarded
def simulate(model, d, partition_spec, config, horizon, seed, out):
    """Sample one exact trajectory and write it as CSV."""
    v = _apply_config(config, dict(model=model, d=d, partition_spec=partition_spec,
                                   horizon=horizon, seed=seed, out=out))
    setup = _load_setup(v["model"], v["d"], v["partition_spec"])
    T = v["horizon"] if v["horizon"] is not None else setup.horizon
    traj = ssa_simulate(setup.model,
                        sample_initial(setup.initial, stream_rng(v["seed"])),
                        T, stream_rng(v["seed"], 1))
    traj.to_csv(v["out"], setup.model.species_names)
    click.echo(f"wrote {v['out']} ({len(traj.times)} rows)")


@main.command()
@_with_model_opts
@click.option("--T", "horizon", type=float, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, help="observed path JSON")
@_guarded
def observe(model, d, partition_spec, config, horizon, seed, out):
    """Sample a trajectory and extract the observed-species jump path."""
    v = _apply_config(config, dict(model=model, d=d, partition_spec=partition_spec,
                                   horizon=horizon, seed=seed, out=out))
    setup = _load_setup(v["model"], v["d"], v["partition_spec"])
    T = v["horizon"] if v["horizon"] is not None else setup.horizon
    path = _observed_path(setup, T, v["seed"])
    with open(v["out"], "w") as fh:
        json.dump(path.to_json(), fh, indent=2)
    click.echo(f"wrote {v['out']} ({path.num_jumps} observed jumps)")


@main.command("filter")
@_with_model_opts
@click.option("--method", type=click.Choice(["ffsp", "pf", "ump", "cmp"]),
              default="cmp")
@click.option("--M", "M", type=int, default=1000)
@click.option("--dt", type=float, default=0.01)
@click.option("--box", default=None, help="lo:hi[,lo:hi...] truncation bounds")
@click.option("--T", "horizon", type=float, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--obs", default=None, help="observed path JSON (generated when absent)")
@click.option("--path-seed", type=int, default=0)
@click.option("--out", default=None, help="output file prefix")
@click.option("--dry-run", is_flag=True,
              help="report the full hidden-space state count and exit")
@_guarded
def filter_cmd(model, d, partition_spec, config, method, M, dt, box, horizon,
               seed, obs, path_seed, out, dry_run):
    """Run a filtering method against an observed path."""
    v = _apply_config(config, dict(model=model, d=d, partition_spec=partition_spec,
                                   method=method, M=M, dt=dt, box=box,
                                   horizon=horizon, seed=seed, obs=obs,
                                   path_seed=path_seed, out=out, dry_run=dry_run))
    setup = _load_setup(v["model"], v["d"], v["partition_spec"])
    n_hidden = len(setup.partition.hidden_idx)
    n_int = len(setup.partition.interest_idx)

    if v["dry_run"]:
        hidden_box = (_parse_box(v["box"], n_hidden) if v["box"]
                      else setup.hidden_box)
        n_states = int(np.prod([hi - lo + 1 for lo, hi in hidden_box]))
        click.echo(json.dumps({"model": setup.name,
                               "hidden_dimensions": n_hidden,
                               "num_states": n_states}))
        return

    dims = n_hidden if v["method"] == "ffsp" else n_int
    box_t = (_parse_box(v["box"], dims) if v["box"]
             else (setup.hidden_box if v["method"] == "ffsp" else setup.interest_box))
    T = v["horizon"] if v["horizon"] is not None else setup.horizon
    from .simulate import ObservedPath
    if v["obs"]:
        with open(v["obs"]) as fh:
            observed = ObservedPath.from_json(fh.read())
    else:
        observed = _observed_path(setup, T, v["path_seed"])
    cfg = FilterConfig(method=v["method"], M=v["M"], dt=v["dt"], box=box_t,
                       seed=v["seed"])
    result = run_filter(setup.model, setup.partition, setup.initial, observed, cfg)
    prefix = v["out"] or f"{setup.name}_{v['method']}"
    result.to_csv(prefix)
    with open(f"{prefix}_diagnostics.json", "w") as fh:
        json.dump({"method": result.method, **result.diagnostics}, fh, indent=2)
    click.echo(f"wrote {prefix}_pmf.csv, {prefix}_summary.csv, "
               f"{prefix}_diagnostics.json")


@main.command()
@_with_model_opts
@click.option("--qoi", default="tail:Z1>=8", help="tail quantity, e.g. tail:Z1>=8")
@click.option("--M", "M_list", default="125,250,500,1000,2000")
@click.option("--reps", type=int, default=30)
@click.option("--methods", default="cmp")
@click.option("--dt", type=float, default=0.01)
@click.option("--box", default=None)
@click.option("--T", "horizon", type=float, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--path-seed", type=int, default=0)
@click.option("--out", default="convergence.csv")
@_guarded
def convergence(model, d, partition_spec, config, qoi, M_list, reps, methods,
                dt, box, horizon, seed, path_seed, out):
    """Sweep M with seeded repetitions; report mean errors and the fitted slope."""
    v = _apply_config(config, dict(model=model, d=d, partition_spec=partition_spec,
                                   qoi=qoi, M_list=M_list, reps=reps,
                                   methods=methods, dt=dt, box=box,
                                   horizon=horizon, seed=seed,
                                   path_seed=path_seed, out=out))
    setup = _load_setup(v["model"], v["d"], v["partition_spec"])
    T = v["horizon"] if v["horizon"] is not None else setup.horizon
    observed = _observed_path(setup, T, v["path_seed"])
    dim, threshold = parse_qoi(v["qoi"])
    M_values = [int(x) for x in str(v["M_list"]).split(",")]
    methods_t = tuple(m.strip() for m in v["methods"].split(","))
    n_int = len(setup.partition.interest_idx)
    box_int = _parse_box(v["box"], n_int) if v["box"] else setup.interest_box

    ref_cfg = FilterConfig(method="ffsp", dt=v["dt"], box=setup.hidden_box)
    ref = run_filter(setup.model, setup.partition, setup.initial, observed, ref_cfg)
    q_ref = ref.tail_probability(threshold, dim)

    cfg_base = FilterConfig(method="cmp", dt=v["dt"], box=box_int)
    report = convergence_study(setup.model, setup.partition, setup.initial,
                               observed, q_ref, (dim, threshold), M_values,
                               v["reps"], cfg_base, methods_t, seed0=v["seed"])
    report.to_csv(v["out"])
    summary = {"q_ref": q_ref,
               "slopes": {m: report.slope(m) for m in methods_t}}
    click.echo(json.dumps(summary))


@main.command()
@click.option("--tol", type=float, default=1e-5)
@click.option("--dt", type=float, default=0.005)
@_guarded
def validate(tol, dt):
    """Run the projected-dynamics consistency oracles; nonzero exit on failure."""
    mp_err, _ = mp_consistency_check(dt=dt)
    ok_mp = mp_err <= tol
    click.echo(f"time-marginal projection check: max L1 = {mp_err:.3e} "
               f"({'pass' if ok_mp else 'FAIL'}, tol {tol:g})")
    fmp_err, _, _ = fmp_consistency_check(dt=dt)
    ok_fmp = fmp_err <= tol
    click.echo(f"filtering-marginal projection check: max L1 = {fmp_err:.3e} "
               f"({'pass' if ok_fmp else 'FAIL'}, tol {tol:g})")
    if not (ok_mp and ok_fmp):
        sys.exit(3)


if __name__ == "__main__":
    main()
