"""End-to-end filters over an observed path: full-dimensional references
(FFSP, particle filter) and the two projection filters (UMP, CMP)."""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .errors import AllUnreliable, EmptyMatch, ZeroMass
from .ffsp import (
    Pmf,
    TruncatedSpace,
    UnnormalizedPmf,
    enumerate_space,
    filter_interjump,
    filter_jump,
    normalize,
)
from .model import (
    InitialDistribution,
    SrnModel,
    StatePartition,
    matching_reactions,
)
from .particle import (
    Ensemble,
    pf_ess,
    pf_init,
    pf_jump,
    pf_pmf,
    pf_propagate,
    pf_resample,
)
from .projection import (
    PropensityTable,
    TableSource,
    _affine_fill,
    build_projected_model,
    cmp_estimate,
    extrapolate,
    needs_table_reactions,
    ump_estimate,
)
from .simulate import ObservedPath


@dataclass
class FilterConfig:
    """Inputs of one filter run.

    ``box`` bounds the hidden space the method solves on: all hidden species
    (interest first, nuisance after) for the full FFSP reference, only the
    interest species for UMP/CMP/PF output. ``obs_box`` bounds the observed
    coordinates of UMP propensity tables (defaults to the first interest
    bounds replicated).
    """

    method: str = "cmp"                  # ffsp | pf | ump | cmp
    M: int = 1000
    dt: float = 0.01
    box: tuple = ((0, 10),)
    obs_box: tuple = None
    seed: int = 0
    resample: str = "multinomial"
    table_interp: str = "constant"
    table_min_count: float = 6.0     # effective samples a table cell needs
    ess_trigger: float = 0.0         # resample mid-run when ESS < trigger * M

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not self.box:
            raise ValueError("box must be nonempty")
        if not 0.0 <= self.ess_trigger < 1.0:
            raise ValueError("ess_trigger must be in [0, 1)")


@dataclass
class FilterResult:
    """PMF time series over the interest space plus run diagnostics.

    Jump times appear twice in ``times``: once with the pre-jump PMF and once
    with the post-jump PMF.
    """

    method: str
    space: TruncatedSpace
    times: np.ndarray
    pmfs: np.ndarray             # (n_times, N)
    means: np.ndarray            # (n_times, n_interest)
    variances: np.ndarray
    ess: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def final_pmf(self) -> Pmf:
        return Pmf(self.space, self.pmfs[-1], float(self.times[-1]))

    def tail_probability(self, threshold: int, dim: int = 0) -> float:
        mask = self.space.states[:, dim] >= threshold
        return float(self.pmfs[-1][mask].sum())

    def to_csv(self, prefix):
        with open(f"{prefix}_pmf.csv", "w") as fh:
            dims = self.space.dims
            cols = ",".join(f"x{k}" for k in range(dims))
            fh.write(f"time,{cols},prob\n")
            for t, row in zip(self.times, self.pmfs):
                for st, p in zip(self.space.states, row):
                    fh.write(f"{t}," + ",".join(str(int(v)) for v in st) + f",{p}\n")
        with open(f"{prefix}_summary.csv", "w") as fh:
            fh.write("time," + ",".join(f"mean{k}" for k in range(self.means.shape[1]))
                     + "," + ",".join(f"var{k}" for k in range(self.means.shape[1]))
                     + ",ess\n")
            for i, t in enumerate(self.times):
                ess = "" if self.ess is None else f"{self.ess[i]}"
                fh.write(f"{t}," + ",".join(f"{v}" for v in self.means[i])
                         + "," + ",".join(f"{v}" for v in self.variances[i]) + f",{ess}\n")


def marginalize(pmf: Pmf, partition: StatePartition) -> Pmf:
    """Sum a full-hidden-space PMF down to the interest coordinates."""
    n_int = len(partition.interest_idx)
    return pmf.marginal(range(n_int))


def product_pi0(initial: InitialDistribution, species_idx, space: TruncatedSpace) -> Pmf:
    """Initial conditional PMF on a box, as the product of per-species marginals.

    With product-form mu the conditioning on Y(0) = y(0) drops out.
    """
    w = np.ones(space.size)
    states = space.states
    for k, s in enumerate(species_idx):
        lo, hi = int(space.lower[k]), int(space.upper[k])
        marg = initial.marginal_pmf(s, lo, hi)
        w = w * marg[states[:, k] - lo]
    tot = w.sum()
    if tot <= 0:
        raise ZeroMass("initial distribution has no mass inside the box")
    return Pmf(space, w / tot, 0.0)


def restricted_initial(initial: InitialDistribution, species_idx) -> InitialDistribution:
    return InitialDistribution(tuple(initial.marginals[s] for s in species_idx))


def interval_grid(a: float, b: float, dt: float) -> np.ndarray:
    n = max(1, int(np.ceil((b - a) / dt - 1e-12)))
    return a + (b - a) * np.arange(n + 1) / n


def _matching_projected(pmodel, delta_y) -> set:
    delta_y = np.asarray(delta_y, dtype=np.int64)
    match = {r.orig_j for r in pmodel.reactions if np.array_equal(r.obs_net, delta_y)}
    if not match:
        raise EmptyMatch(f"no projected reaction produces observed jump {delta_y.tolist()}")
    return match


class _Recorder:
    """Accumulates (time, pmf) snapshots and summary moments."""

    def __init__(self, out_space, project=None):
        self.space = out_space
        self.project = project
        self.times, self.pmfs = [], []

    def add_rho(self, t, rho: UnnormalizedPmf):
        self.add_pmf(t, normalize(rho))

    def add_pmf(self, t, pmf: Pmf):
        if self.project is not None:
            pmf = self.project(pmf)
        self.times.append(t)
        self.pmfs.append(pmf.probs)

    def result(self, method, ess=None, diagnostics=None) -> FilterResult:
        pmfs = np.asarray(self.pmfs)
        states = self.space.states
        means = pmfs @ states.astype(float)
        second = pmfs @ (states.astype(float) ** 2)
        return FilterResult(
            method=method,
            space=self.space,
            times=np.asarray(self.times),
            pmfs=pmfs,
            means=means,
            variances=second - means**2,
            ess=None if ess is None else np.asarray(ess),
            diagnostics=diagnostics or {},
        )


def ffsp_filter(model_like, partition, space, observed: ObservedPath, pi0: Pmf,
                dt: float, recorder: _Recorder = None, full_series_out=None,
                jump_matcher=None):
    """Alternate inter-jump integration and jump updates over the whole path.

    ``full_series_out``, when a list, receives per-interval lists of
    (t, normalized Pmf over ``space``) used for oracle table construction.
    Returns the recorder (a fresh one over ``space`` when not supplied).
    """
    if recorder is None:
        recorder = _Recorder(space)
    rho = UnnormalizedPmf(space, pi0.probs.astype(float).copy(), 0.0, 0.0)
    intervals = list(observed.intervals())
    for k, a, b, y_val in intervals:
        this_interval = [] if full_series_out is not None else None

        def collect(t, r, _acc=this_interval):
            recorder.add_rho(t, r)
            if _acc is not None:
                _acc.append((t, normalize(r)))

        filter_interjump(model_like, partition, space, rho, y_val, (a, b), dt,
                         collect=collect)
        if full_series_out is not None:
            full_series_out.append(this_interval)
        if k < len(intervals) - 1:
            y_next = observed.values[k]
            delta_y = np.asarray(y_next) - np.asarray(y_val)
            if jump_matcher is not None:
                O_k = jump_matcher(delta_y)
            elif isinstance(model_like, SrnModel):
                O_k = matching_reactions(model_like, partition, delta_y)
            else:
                O_k = _matching_projected(model_like, delta_y)
            rho = filter_jump(model_like, partition, space, rho, O_k, y_val, b)
            recorder.add_rho(b, rho)
    return recorder


# --- reference methods ------------------------------------------------------


def run_reference(model: SrnModel, partition: StatePartition, initial,
                  observed: ObservedPath, cfg: FilterConfig,
                  full_series_out=None) -> FilterResult:
    """Full-dimensional reference: FFSP on the whole hidden space, or the
    plain particle filter; output is marginalized to the interest species."""
    if cfg.method == "ffsp":
        return _run_full_ffsp(model, partition, initial, observed, cfg, full_series_out)
    if cfg.method == "pf":
        return _run_pf(model, partition, initial, observed, cfg)
    raise ValueError(f"run_reference does not handle method {cfg.method!r}")


def _run_full_ffsp(model, partition, initial, observed, cfg, full_series_out=None):
    t_start = _time.perf_counter()
    n_hidden = len(partition.hidden_idx)
    if len(cfg.box) != n_hidden:
        raise ValueError(f"full FFSP needs {n_hidden} box dimensions, got {len(cfg.box)}")
    space = enumerate_space(cfg.box)
    n_int = len(partition.interest_idx)
    out_space = TruncatedSpace(space.lower[:n_int], space.upper[:n_int])
    pi0 = product_pi0(initial, partition.hidden_idx, space)
    recorder = _Recorder(out_space, project=lambda p: p.marginal(range(n_int)))
    ffsp_filter(model, partition, space, observed, pi0, cfg.dt, recorder,
                full_series_out=full_series_out)
    return recorder.result("ffsp", diagnostics={
        "wall_time": _time.perf_counter() - t_start,
        "num_states": space.size,
    })


def _run_pf(model, partition, initial, observed, cfg):
    t_start = _time.perf_counter()
    n_int = len(partition.interest_idx)
    if len(cfg.box) != n_int:
        raise ValueError(f"PF output box needs {n_int} dimensions, got {len(cfg.box)}")
    out_space = enumerate_space(cfg.box)
    mu_hidden = restricted_initial(initial, partition.hidden_idx)
    ens = pf_init(mu_hidden, cfg.M, cfg.seed)
    times, pmfs, ess = [], [], []
    intervals = list(observed.intervals())
    for k, a, b, y_val in intervals:
        grid = interval_grid(a, b, cfg.dt)
        ens, (snap_states, snap_logw) = pf_propagate(ens, model, partition, y_val,
                                                     (a, b), grid)
        for gi, t in enumerate(grid):
            snap = Ensemble(snap_states[gi], snap_logw[gi], t, ens.master_seed, ens.rngs)
            pmfs.append(pf_pmf(snap, out_space, dims=range(n_int)).probs)
            times.append(t)
            ess.append(pf_ess(snap))
        if cfg.ess_trigger > 0.0 and pf_ess(ens) < cfg.ess_trigger * cfg.M:
            ens = pf_resample(ens, systematic=cfg.resample == "systematic")
        if k < len(intervals) - 1:
            delta_y = np.asarray(observed.values[k]) - np.asarray(y_val)
            O_k = matching_reactions(model, partition, delta_y)
            ens = pf_jump(ens, model, partition, O_k, y_val)
            times.append(b)
            pmfs.append(pf_pmf(ens, out_space, dims=range(n_int)).probs)
            ess.append(pf_ess(ens))
            ens = pf_resample(ens, systematic=cfg.resample == "systematic")
    rec = _Recorder(out_space)
    rec.times, rec.pmfs = times, pmfs
    return rec.result("pf", ess=ess, diagnostics={
        "wall_time": _time.perf_counter() - t_start,
        "M": cfg.M,
    })


# --- projection filters -----------------------------------------------------


def run_ump(model: SrnModel, partition: StatePartition, initial,
            observed: ObservedPath, cfg: FilterConfig) -> FilterResult:
    """Unconditional Markovian projection filter.

    Estimates all projected propensities up front from M unconditional
    full-model simulations (tables keyed by the full projected state (x', y)),
    then solves the low-dimensional filtering equations.
    """
    t_start = _time.perf_counter()
    n_int = len(partition.interest_idx)
    if len(cfg.box) != n_int:
        raise ValueError(f"UMP box needs {n_int} dimensions, got {len(cfg.box)}")
    space = enumerate_space(cfg.box)
    targets = needs_table_reactions(model, partition)
    diagnostics = {"M": cfg.M}
    sources = {}
    if targets:
        obs_box = cfg.obs_box or tuple(cfg.box[0] for _ in partition.observed_idx)
        space_z = enumerate_space(list(cfg.box) + list(obs_box))
        grids = [interval_grid(a, b, cfg.dt) for _, a, b, _ in observed.intervals()]
        tables = ump_estimate(model, partition, cfg.M, grids, space_z, cfg.seed,
                              mu=initial)
        unreliable = []
        for j in targets:
            filled = []
            last = None
            for tab in tables[j]:
                tab.interp = cfg.table_interp
                filled.append(_fill_with_carry(tab, last))
                last = filled[-1].values[-1]
                unreliable.append(1.0 - tab.reliable_fraction())
            sources[j] = TableSource(filled)
        diagnostics["unreliable_fraction"] = float(np.mean(unreliable))
        diagnostics["table_gap"] = bool(np.mean(unreliable) > 0.5)
    pmodel = build_projected_model(model, partition, sources)
    pi0 = product_pi0(initial, partition.interest_idx, space)
    recorder = ffsp_filter(pmodel, None, space, observed, pi0, cfg.dt)
    diagnostics["wall_time"] = _time.perf_counter() - t_start
    return recorder.result("ump", diagnostics=diagnostics)


def _fill_with_carry(table: PropensityTable, carry_values) -> PropensityTable:
    """Extrapolate a table, seeding an all-unreliable leading slice from the
    previous interval's last filled slice."""
    try:
        return extrapolate(table, carry_forward=True)
    except AllUnreliable:
        if carry_values is None:
            raise
        values = table.values.copy()
        coords = table.space.states.astype(float)
        last = carry_values
        for ti in range(len(table.times)):
            try:
                values[ti] = _affine_fill(coords, values[ti], table.reliable[ti],
                                          table.support[ti])
            except AllUnreliable:
                values[ti] = last
            last = values[ti]
        out = PropensityTable(table.j, table.space, table.times, values,
                              table.reliable, table.support, table.key, table.interp)
        return out


def run_cmp(model: SrnModel, partition: StatePartition, initial,
            observed: ObservedPath, cfg: FilterConfig,
            oracle_tables=None) -> FilterResult:
    """Conditional Markovian projection filter.

    Per inter-jump interval: propagate a particle filter on the full model,
    estimate the conditional projected propensities on the ODE grid from the
    weighted ensemble, solve the projected filtering equations, apply the
    jump update, then resample the ensemble.

    ``oracle_tables`` (dict j -> list of per-interval tables) bypasses the
    particle estimation entirely; used for consistency validation.
    """
    t_start = _time.perf_counter()
    n_int = len(partition.interest_idx)
    if len(cfg.box) != n_int:
        raise ValueError(f"CMP box needs {n_int} dimensions, got {len(cfg.box)}")
    space = enumerate_space(cfg.box)
    targets = needs_table_reactions(model, partition)
    diagnostics = {"M": cfg.M}

    if not targets:
        pmodel = build_projected_model(model, partition, {})
        pi0 = product_pi0(initial, partition.interest_idx, space)
        recorder = ffsp_filter(pmodel, None, space, observed, pi0, cfg.dt)
        diagnostics["wall_time"] = _time.perf_counter() - t_start
        return recorder.result("cmp", diagnostics=diagnostics)

    sources = {j: TableSource() for j in targets}
    pmodel = build_projected_model(model, partition, sources)
    pi0 = product_pi0(initial, partition.interest_idx, space)

    if oracle_tables is not None:
        # exact conditional tables supplied: no particle filter, but keep the
        # per-interval table swap so jump updates see the pre-jump table
        rho = UnnormalizedPmf(space, pi0.probs.astype(float).copy(), 0.0, 0.0)
        recorder = _Recorder(space)
        intervals = list(observed.intervals())
        for k, a, b, y_val in intervals:
            for j in targets:
                sources[j].set_tables([oracle_tables[j][k]])
            filter_interjump(pmodel, None, space, rho, y_val, (a, b), cfg.dt,
                             collect=recorder.add_rho)
            if k < len(intervals) - 1:
                delta_y = np.asarray(observed.values[k]) - np.asarray(y_val)
                O_k = _matching_projected(pmodel, delta_y)
                rho = filter_jump(pmodel, None, space, rho, O_k, y_val, b)
                recorder.add_rho(b, rho)
        diagnostics["wall_time"] = _time.perf_counter() - t_start
        return recorder.result("cmp", diagnostics=diagnostics)
    mu_hidden = restricted_initial(initial, partition.hidden_idx)
    ens = pf_init(mu_hidden, cfg.M, cfg.seed)
    rho = UnnormalizedPmf(space, pi0.probs.astype(float).copy(), 0.0, 0.0)
    recorder = _Recorder(space)
    ess_series = []
    unreliable = []
    carry = {j: None for j in targets}
    intervals = list(observed.intervals())
    for k, a, b, y_val in intervals:
        grid = interval_grid(a, b, cfg.dt)
        ens, snaps = pf_propagate(ens, model, partition, y_val, (a, b), grid)
        tables = cmp_estimate(snaps, grid, model, partition, y_val, space, targets,
                              weight_share=cfg.table_min_count / cfg.M)
        for j in targets:
            tab = tables[j]
            tab.interp = cfg.table_interp
            unreliable.append(1.0 - tab.reliable_fraction())
            filled = _fill_with_carry(tab, carry[j])
            carry[j] = filled.values[-1]
            sources[j].set_tables([filled])
        filter_interjump(pmodel, None, space, rho, y_val, (a, b), cfg.dt,
                         collect=recorder.add_rho)
        snap_logw = snaps[1]
        for gi in range(len(grid)):
            lw = snap_logw[gi]
            finite = np.isfinite(lw)
            if finite.any():
                w = np.exp(lw[finite] - lw[finite].max())
                ess_series.append(float(w.sum() ** 2 / np.sum(w**2)))
            else:
                ess_series.append(0.0)
        if k < len(intervals) - 1:
            delta_y = np.asarray(observed.values[k]) - np.asarray(y_val)
            O_k = _matching_projected(pmodel, delta_y)
            rho = filter_jump(pmodel, None, space, rho, O_k, y_val, b)
            recorder.add_rho(b, rho)
            O_k_full = matching_reactions(model, partition, delta_y)
            ens = pf_jump(ens, model, partition, O_k_full, y_val)
            ess_series.append(pf_ess(ens))
            ens = pf_resample(ens, systematic=cfg.resample == "systematic")
    diagnostics["unreliable_fraction"] = float(np.mean(unreliable)) if unreliable else 0.0
    diagnostics["wall_time"] = _time.perf_counter() - t_start
    return recorder.result("cmp", ess=ess_series, diagnostics=diagnostics)


def run_filter(model, partition, initial, observed, cfg: FilterConfig) -> FilterResult:
    """Dispatch on cfg.method."""
    if cfg.method in ("ffsp", "pf"):
        return run_reference(model, partition, initial, observed, cfg)
    if cfg.method == "ump":
        return run_ump(model, partition, initial, observed, cfg)
    if cfg.method == "cmp":
        return run_cmp(model, partition, initial, observed, cfg)
    raise ValueError(f"unknown method {cfg.method!r}")
