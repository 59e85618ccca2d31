"""Numerical validation oracles and Monte Carlo convergence studies.

The two consistency checks verify, on a three-species production chain, that
the projected dynamics with exact conditional-expectation propensities
reproduce the corresponding marginals of the full system: time-marginals for
the unconditional projection, filtering marginals for the conditional one.
The propensity tables are extracted from a reference solve at half the ODE
step, so every Runge-Kutta stage time of the projected solve hits a table
grid point exactly and the residual discrepancy is dominated by the O(dt^4)
integrator error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .builtin import linear_cascade
from .errors import BadParam
from .ffsp import (
    UnnormalizedPmf,
    enumerate_space,
    filter_interjump,
    filter_jump,
    normalize,
    solve_cme,
)
from .filters import FilterConfig, product_pi0, run_cmp, run_filter
from .model import matching_reactions
from .projection import (
    TableSource,
    build_projected_model,
    exact_fmp_tables,
    exact_mp_tables,
)
from .simulate import extract_observation, sample_initial, ssa_simulate, stream_rng


def _toy_chain():
    """Three-species chain: S1 of interest, S2 nuisance, S3 observed."""
    return linear_cascade(3)


def mp_consistency_check(T=2.0, dt=0.005, n_checks=20):
    """Max L1 distance between the projected-model CME marginal and the full
    CME marginal over (S1, S3), with exact projected propensities.

    Returns (max_l1, l1_per_check_time).
    """
    bm = _toy_chain()
    model, partition, initial = bm.model, bm.partition, bm.initial
    space_full = enumerate_space(((0, 12), (0, 15), (0, 25)))
    p0 = product_pi0(initial, range(model.d), space_full)
    n = max(1, math.ceil(T / dt - 1e-12))
    dt_fine = T / (2 * n - 0.5)          # forces exactly 2n reference steps
    series, _ = solve_cme(model, space_full, p0, T, dt_fine)
    assert len(series) == 2 * n + 1

    tables = exact_mp_tables(model, partition, space_full, series)
    sources = {j: TableSource([tab]) for j, tab in tables.items()}
    pmodel = build_projected_model(model, partition, sources)
    space_z = enumerate_space(((0, 12), (0, 25)))
    p0z = product_pi0(initial, partition.projected_idx, space_z)
    proj_series, _ = solve_cme(pmodel, space_z, p0z, T, dt)
    assert len(proj_series) == n + 1

    keep_dims = (0, 2)                   # (S1, S3) axes of the full box
    l1 = []
    stride = max(1, n // n_checks)
    for i in range(stride, n + 1, stride):
        marg = series[2 * i][1].marginal(keep_dims)
        l1.append(float(np.abs(proj_series[i][1].probs - marg.probs).sum()))
    return max(l1), np.asarray(l1)


def fmp_consistency_check(T=2.0, dt=0.005, path_seed=20):
    """Max L1 distance, over every grid time of a generated observed path,
    between the projected filter with exact conditional tables and the
    marginalized full-space filter. Returns (max_l1, l1_series, observed)."""
    bm = _toy_chain()
    model, partition, initial = bm.model, bm.partition, bm.initial
    traj = ssa_simulate(model, sample_initial(initial, stream_rng(path_seed)),
                        T, stream_rng(path_seed, 1))
    observed = extract_observation(traj, partition)

    space_h = enumerate_space(((0, 12), (0, 15)))
    pi0 = product_pi0(initial, partition.hidden_idx, space_h)
    rho = UnnormalizedPmf(space_h, pi0.probs.astype(float).copy(), 0.0, 0.0)
    interval_series = []
    ref_marginals = []                   # mirrors the projected run's records
    intervals = list(observed.intervals())
    for k, a, b, y_val in intervals:
        n = max(1, math.ceil((b - a) / dt - 1e-12))
        dt_fine = (b - a) / (2 * n - 0.5)
        this = []
        filter_interjump(model, partition, space_h, rho, y_val, (a, b), dt_fine,
                         collect=lambda t, r, _acc=this: _acc.append((t, normalize(r))))
        assert len(this) == 2 * n + 1
        interval_series.append(this)
        ref_marginals.extend(pmf.marginal((0,)).probs for _, pmf in this[::2])
        if k < len(intervals) - 1:
            O_k = matching_reactions(model, partition,
                                     np.asarray(observed.values[k]) - np.asarray(y_val))
            rho = filter_jump(model, partition, space_h, rho, O_k, y_val, b)
            ref_marginals.append(normalize(rho).marginal((0,)).probs)

    tables = exact_fmp_tables(model, partition, space_h, interval_series, observed)
    cfg = FilterConfig(method="cmp", M=1, dt=dt, box=((0, 12),))
    res = run_cmp(model, partition, initial, observed, cfg, oracle_tables=tables)

    assert len(ref_marginals) == len(res.times)
    l1 = np.abs(res.pmfs - np.asarray(ref_marginals)).sum(axis=1)
    return float(l1.max()), l1, observed


# --- convergence studies ----------------------------------------------------


def parse_qoi(spec: str):
    """Parse a tail quantity spec like 'tail:Z1>=8' into (dim, threshold)."""
    m = re.fullmatch(r"tail:[A-Za-z]*(\d+)\s*>=\s*(\d+)", spec.strip())
    if not m:
        raise BadParam(f"cannot parse quantity of interest {spec!r}")
    return int(m.group(1)) - 1, int(m.group(2))


@dataclass
class ConvergenceReport:
    """Relative errors of a tail quantity against a fixed reference value."""

    M_values: list
    q_ref: float
    errors: dict = field(default_factory=dict)   # method -> (n_M, reps) array

    def mean_errors(self, method) -> np.ndarray:
        return self.errors[method].mean(axis=1)

    def sem_errors(self, method) -> np.ndarray:
        e = self.errors[method]
        return e.std(axis=1, ddof=1) / math.sqrt(e.shape[1])

    def slope(self, method) -> float:
        return fit_slope(self.M_values, self.mean_errors(method))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("method,M,mean_rel_error,sem\n")
            for method in self.errors:
                means = self.mean_errors(method)
                sems = self.sem_errors(method)
                for M, m, s in zip(self.M_values, means, sems):
                    fh.write(f"{method},{M},{m},{s}\n")


def fit_slope(M_values, mean_errors) -> float:
    """Least-squares slope of log(error) against log(M)."""
    x = np.log(np.asarray(M_values, dtype=float))
    y = np.log(np.asarray(mean_errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def run_seed(seed0, *key) -> int:
    return int(np.random.SeedSequence([int(seed0), *map(int, key)]).generate_state(1)[0])


def convergence_study(model, partition, initial, observed, q_ref: float,
                      qoi, M_values, reps: int, cfg_base: FilterConfig,
                      methods=("cmp",), seed0=0) -> ConvergenceReport:
    """Mean relative error of the tail quantity per (method, M) over seeded
    repetitions, against the fixed reference value ``q_ref``.

    ``qoi`` is (dim, threshold) over the interest coordinates. Method sweeps
    may restrict M: pass a dict method -> list of M to run subsets.
    """
    dim, threshold = qoi
    if isinstance(M_values, dict):
        M_map = {m: list(v) for m, v in M_values.items()}
        all_M = sorted({M for v in M_map.values() for M in v})
    else:
        all_M = list(M_values)
        M_map = {m: all_M for m in methods}
    report = ConvergenceReport(all_M, q_ref)
    for mi, method in enumerate(methods):
        errs = np.full((len(all_M), reps), np.nan)
        for Mi, M in enumerate(all_M):
            if M not in M_map[method]:
                continue
            for rep in range(reps):
                cfg = replace(cfg_base, method=method, M=M,
                              seed=run_seed(seed0, mi, M, rep))
                res = run_filter(model, partition, initial, observed, cfg)
                q = res.tail_probability(threshold, dim)
                errs[Mi, rep] = abs(q - q_ref) / abs(q_ref)
        report.errors[method] = errs
    return report
