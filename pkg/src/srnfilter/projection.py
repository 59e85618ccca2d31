"""Estimation of projected propensities (conditional expectations of the
full-model propensities) on state/time lattices, reliability handling with
linear extrapolation, and construction of projected reaction networks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AllUnreliable, MissingTable, TableGap
from .ffsp import Pmf, ReactionRow, TruncatedSpace
from .model import SrnModel, StatePartition, project_stoichiometry, propensity_vector
from .simulate import sample_initial, ssa_simulate, stream_rng

UMP_MIN_SUPPORT = 10          # samples below this make a cell unreliable
CMP_WEIGHT_SHARE = 1e-3       # minimum weight share of the ensemble per cell


@dataclass
class PropensityTable:
    """Estimated projected propensity of one reaction on a state x time lattice.

    ``key`` records which coordinates index the state axis: 'interest' for
    conditional (filtered) propensities that depend on x' alone, 'zprime' for
    unconditional ones keyed by the full projected state (x', y).
    """

    j: int
    space: TruncatedSpace
    times: np.ndarray
    values: np.ndarray          # (n_times, N)
    reliable: np.ndarray        # (n_times, N) bool
    support: np.ndarray         # (n_times, N) sample count or weight share
    key: str = "interest"
    interp: str = "constant"    # 'constant' | 'linear' | 'nearest'

    def covers(self, t: float) -> bool:
        return self.times[0] - 1e-9 <= t <= self.times[-1] + 1e-9

    def row(self, t: float) -> np.ndarray:
        """Table values at time t under the configured interpolation mode."""
        ts = self.times
        if self.interp == "nearest":
            i = int(np.argmin(np.abs(ts - t)))
            return self.values[i]
        i = int(np.searchsorted(ts, t + 1e-12, side="right") - 1)
        i = min(max(i, 0), len(ts) - 1)
        if self.interp == "linear" and i < len(ts) - 1 and ts[i + 1] > ts[i]:
            lam = (t - ts[i]) / (ts[i + 1] - ts[i])
            lam = min(max(lam, 0.0), 1.0)
            return (1 - lam) * self.values[i] + lam * self.values[i + 1]
        return self.values[i]

    def reliable_fraction(self) -> float:
        return float(self.reliable.mean())

    def to_csv(self, path):
        dims = self.space.dims
        with open(path, "w") as fh:
            cols = ",".join(f"x{k}" for k in range(dims))
            fh.write(f"reaction,time,{cols},value,reliable,support\n")
            for ti, t in enumerate(self.times):
                for si, st in enumerate(self.space.states):
                    fh.write(
                        f"{self.j},{t}," + ",".join(str(int(v)) for v in st)
                        + f",{self.values[ti, si]},{int(self.reliable[ti, si])},{self.support[ti, si]}\n"
                    )


def _affine_fill(coords: np.ndarray, values: np.ndarray, mask: np.ndarray,
                 weights=None) -> np.ndarray:
    """Least-squares affine fit over reliable cells; fill the rest, clamped at 0.

    ``weights`` (e.g. per-cell sample support) turn the fit into weighted
    least squares so sparsely populated cells do not dominate it.
    """
    rel = np.nonzero(mask)[0]
    if len(rel) == 0:
        raise AllUnreliable("no reliable cells in time slice")
    out = values.copy()
    if len(rel) == 1:
        out[~mask] = values[rel[0]]
        return np.maximum(out, 0.0)
    X = np.column_stack([np.ones(len(rel)), coords[rel]])
    y = values[rel]
    if weights is not None:
        sw = np.sqrt(np.maximum(weights[rel], 0.0))
        X = X * sw[:, None]
        y = y * sw
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    fill = np.column_stack([np.ones(len(coords)), coords]) @ beta
    out[~mask] = fill[~mask]
    out[~mask] = np.maximum(out[~mask], 0.0)
    return out


def extrapolate(table: PropensityTable, carry_forward=True) -> PropensityTable:
    """Fill unreliable cells per time slice via an affine least-squares fit.

    Reliable cells are untouched; fits predicting negative rates are clamped
    at zero. A slice with no reliable cells copies the previous filled slice
    (``carry_forward``), or raises AllUnreliable when there is none.
    """
    coords = table.space.states.astype(float)
    values = table.values.copy()
    last_filled = None
    for ti in range(len(table.times)):
        try:
            values[ti] = _affine_fill(coords, values[ti], table.reliable[ti],
                                      table.support[ti])
        except AllUnreliable:
            if carry_forward and last_filled is not None:
                values[ti] = last_filled
            else:
                raise
        last_filled = values[ti]
    return replace(table, values=values)


# --- projected models -------------------------------------------------------


@dataclass
class AnalyticSource:
    """Closed-form mass-action propensity that depends only on Z' = (X', Y)."""

    theta: float
    consumed: np.ndarray        # (d', ) consumed counts on projected coordinates


@dataclass
class TableSource:
    """Per-interval estimated propensity tables for one reaction."""

    tables: list = field(default_factory=list)

    def table_covering(self, t: float) -> PropensityTable:
        for tab in self.tables:
            if tab.covers(t):
                return tab
        raise TableGap(f"no propensity table covers t={t:.6g}")

    def set_tables(self, tables):
        self.tables = list(tables)


@dataclass
class ProjReaction:
    orig_j: int
    net: np.ndarray             # net change over projected coordinates
    obs_net: np.ndarray         # net change of the observed part
    source: object              # AnalyticSource | TableSource


@dataclass
class ProjectedModel:
    """The reduced SRN over Z' = (X', Y) with mixed analytic/table propensities."""

    species_names: tuple
    n_interest: int
    n_observed: int
    reactions: list

    @property
    def dims(self) -> int:
        return self.n_interest + self.n_observed

    def _mass_action(self, theta, consumed, states):
        out = np.full(states.shape[0], theta, dtype=float)
        for i, m in enumerate(consumed):
            if m > 0:
                col = states[:, i]
                for k in range(m):
                    out *= np.maximum(col - k, 0)
                out[col < m] = 0.0
        return out

    def _table_rates(self, source: TableSource, key_states: np.ndarray):
        """Time-dependent rate callable for a table-backed reaction; the key
        states are looked up once per table."""
        cache = {}

        def rates(t):
            tab = source.table_covering(t)
            idx = cache.get(id(tab))
            if idx is None:
                idx = tab.space.index_of(key_states)
                if np.any(idx < 0):
                    raise TableGap("required table cell outside the table box")
                cache[id(tab)] = idx
            return tab.row(t)[idx]

        return rates

    def _key_states(self, source_tables, space_states, y):
        """Assemble lookup keys matching the table's key convention."""
        key = source_tables.tables[0].key if source_tables.tables else "interest"
        if key == "interest":
            return space_states[:, : self.n_interest]
        y_arr = np.atleast_1d(np.asarray(y, dtype=np.int64))
        if space_states.shape[1] == self.dims:
            return space_states
        tiled = np.broadcast_to(y_arr, (space_states.shape[0], self.n_observed))
        return np.concatenate([space_states[:, : self.n_interest], tiled], axis=1)

    def reaction_rows(self, space: TruncatedSpace, y) -> list:
        """Rows for the filtering equations over the interest-space box."""
        states = space.states
        y_arr = np.atleast_1d(np.asarray(y, dtype=np.int64))
        full = np.concatenate(
            [states, np.broadcast_to(y_arr, (space.size, self.n_observed))], axis=1
        )
        rows = []
        for r in self.reactions:
            if isinstance(r.source, AnalyticSource):
                rates = self._mass_action(r.source.theta, r.source.consumed, full)
            else:
                if not r.source.tables:
                    raise MissingTable(f"reaction {r.orig_j} has no propensity table")
                rates = self._table_rates(r.source, self._key_states(r.source, full, y))
            rows.append(
                ReactionRow(
                    j=r.orig_j,
                    shift=r.net[: self.n_interest],
                    obs_net=r.obs_net,
                    rates=rates,
                )
            )
        return rows

    def cme_reaction_rows(self, space: TruncatedSpace) -> list:
        """Rows for the plain CME over the full projected box (forward problem)."""
        states = space.states
        rows = []
        for r in self.reactions:
            if isinstance(r.source, AnalyticSource):
                rates = self._mass_action(r.source.theta, r.source.consumed, states)
            else:
                if not r.source.tables:
                    raise MissingTable(f"reaction {r.orig_j} has no propensity table")
                key = r.source.tables[0].key
                keys = states if key == "zprime" else states[:, : self.n_interest]
                rates = self._table_rates(r.source, keys)
            rows.append(
                ReactionRow(j=r.orig_j, shift=r.net, obs_net=np.empty(0, dtype=np.int64),
                            rates=rates)
            )
        return rows

    # -- scalar access used by the next-reaction simulator --

    def rate_at(self, jr: int, z, t: float, allow_extrapolation=True) -> float:
        r = self.reactions[jr]
        z = np.asarray(z, dtype=np.int64).reshape(1, -1)
        if isinstance(r.source, AnalyticSource):
            return float(self._mass_action(r.source.theta, r.source.consumed, z)[0])
        tab = r.source.table_covering(t)
        keys = z if tab.key == "zprime" else z[:, : self.n_interest]
        idx = tab.space.index_of(keys)
        if idx[0] < 0:
            if not allow_extrapolation:
                raise TableGap(f"state {z.ravel().tolist()} outside table box at t={t:.6g}")
            return 0.0
        return float(tab.row(t)[idx[0]])

    def time_boundaries(self, a: float, b: float) -> np.ndarray:
        """Sorted union of table grid times inside (a, b]."""
        pts = set()
        for r in self.reactions:
            if isinstance(r.source, TableSource):
                for tab in r.source.tables:
                    for t in tab.times:
                        if a < t <= b:
                            pts.add(float(t))
        return np.array(sorted(pts))


def detect_analytic(model: SrnModel, partition: StatePartition, j: int) -> bool:
    """A mass-action propensity is analytic under projection iff every consumed
    species belongs to X' or Y."""
    keep = set(partition.projected_idx)
    cons = model.reactions[j].consumed
    return all(i in keep for i in np.nonzero(cons)[0])


def build_projected_model(model: SrnModel, partition: StatePartition,
                          tables=None) -> ProjectedModel:
    """Assemble the reduced SRN over (X', Y).

    ``tables`` maps original reaction index -> TableSource (or a list of
    PropensityTable); every surviving non-analytic reaction must have an entry.
    """
    tables = tables or {}
    keep = list(partition.projected_idx)
    names = tuple(model.species_names[i] for i in keep)
    obs = list(partition.observed_idx)
    reactions = []
    for j, net in project_stoichiometry(model, partition):
        r = model.reactions[j]
        if detect_analytic(model, partition, j):
            source = AnalyticSource(theta=float(r.rate_constant), consumed=r.consumed[keep])
        else:
            entry = tables.get(j)
            if entry is None:
                raise MissingTable(f"reaction {j} requires an estimated propensity table")
            source = entry if isinstance(entry, TableSource) else TableSource(list(np.atleast_1d(entry)))
        reactions.append(ProjReaction(orig_j=j, net=net, obs_net=r.net[obs], source=source))
    return ProjectedModel(
        species_names=names,
        n_interest=len(partition.interest_idx),
        n_observed=len(partition.observed_idx),
        reactions=reactions,
    )


def needs_table_reactions(model: SrnModel, partition: StatePartition) -> list:
    """Original indices of surviving reactions whose propensity must be estimated."""
    return [j for j, _ in project_stoichiometry(model, partition)
            if not detect_analytic(model, partition, j)]


# --- estimators -------------------------------------------------------------


def _binned_conditional_mean(cell_idx, values, weights, n_cells):
    """Weighted conditional mean per cell; returns (means, denom)."""
    keep = cell_idx >= 0
    denom = np.bincount(cell_idx[keep], weights=weights[keep], minlength=n_cells)
    numer = np.bincount(cell_idx[keep], weights=(weights * values)[keep], minlength=n_cells)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(denom > 0, numer / np.maximum(denom, 1e-300), 0.0)
    return means, denom


def ump_estimate(model: SrnModel, partition: StatePartition, M: int,
                 interval_grids, space_zprime: TruncatedSpace, seed,
                 mu=None, trajectories=None):
    """Monte Carlo estimate of the unconditional projected propensities.

    Simulates ``M`` independent full-model trajectories from ``mu`` (unless
    ``trajectories`` is given) and bins samples by the projected state (x', y)
    at every grid time. Cells with fewer than 10 samples are unreliable.

    Returns dict j -> list of per-interval PropensityTable (key 'zprime').
    """
    if trajectories is None:
        horizon = max(g[-1] for g in interval_grids)
        trajectories = []
        for i in range(M):
            rng = stream_rng(seed, i)
            z0 = sample_initial(mu, rng)
            trajectories.append(ssa_simulate(model, z0, horizon, rng))
    keep = list(partition.projected_idx)
    targets = needs_table_reactions(model, partition)
    N = space_zprime.size
    out = {j: [] for j in targets}
    for grid in interval_grids:
        grid = np.asarray(grid, dtype=float)
        n_t = len(grid)
        # full states of all trajectories at all grid times: (n_t, M, d)
        samples = np.stack([traj.states_at(grid) for traj in trajectories], axis=1)
        vals = {j: np.zeros((n_t, N)) for j in targets}
        rel = {j: np.zeros((n_t, N), dtype=bool) for j in targets}
        sup = {j: np.zeros((n_t, N)) for j in targets}
        ones = np.ones(len(trajectories))
        for ti in range(n_t):
            cell_idx = space_zprime.index_of(samples[ti][:, keep])
            for j in targets:
                a = propensity_vector(model, j, samples[ti])
                means, denom = _binned_conditional_mean(cell_idx, a, ones, N)
                vals[j][ti] = means
                sup[j][ti] = denom
                rel[j][ti] = denom >= UMP_MIN_SUPPORT
        for j in targets:
            out[j].append(
                PropensityTable(j=j, space=space_zprime, times=grid, values=vals[j],
                                reliable=rel[j], support=sup[j], key="zprime")
            )
    return out


def cmp_estimate(snapshots, times, model: SrnModel, partition: StatePartition,
                 y_k, space_interest: TruncatedSpace, targets=None,
                 weight_share=CMP_WEIGHT_SHARE):
    """Particle-filter estimate of the conditional projected propensities on
    one inter-jump interval.

    ``snapshots`` is (states, log_w) with shapes (n_t, M, d_hidden) and
    (n_t, M) taken at ``times``; the observed slice is frozen at ``y_k``.
    Cells receiving less than ``weight_share`` of the total ensemble weight
    are marked unreliable.

    Returns dict j -> PropensityTable (key 'interest').
    """
    if targets is None:
        targets = needs_table_reactions(model, partition)
    snap_states, snap_logw = snapshots
    n_t, M, dh = snap_states.shape
    hidden = list(partition.hidden_idx)
    obs = list(partition.observed_idx)
    n_int = len(partition.interest_idx)
    y_arr = np.atleast_1d(np.asarray(y_k, dtype=np.int64))
    N = space_interest.size
    vals = {j: np.zeros((n_t, N)) for j in targets}
    rel = {j: np.zeros((n_t, N), dtype=bool) for j in targets}
    sup = {j: np.zeros((n_t, N)) for j in targets}
    d = model.d
    full = np.empty((M, d), dtype=np.int64)
    full[:, obs] = y_arr
    for ti in range(n_t):
        full[:, hidden] = snap_states[ti]
        lw = snap_logw[ti]
        finite = np.isfinite(lw)
        w = np.zeros(M)
        if finite.any():
            mx = lw[finite].max()
            w[finite] = np.exp(lw[finite] - mx)
        total = w.sum()
        cell_idx = space_interest.index_of(snap_states[ti][:, :n_int])
        for j in targets:
            a = propensity_vector(model, j, full)
            means, denom = _binned_conditional_mean(cell_idx, a, w, N)
            vals[j][ti] = means
            share = denom / total if total > 0 else denom
            sup[j][ti] = share
            rel[j][ti] = share >= weight_share
    times = np.asarray(times, dtype=float)
    return {
        j: PropensityTable(j=j, space=space_interest, times=times, values=vals[j],
                           reliable=rel[j], support=sup[j], key="interest")
        for j in targets
    }


# --- exact conditional-expectation oracles ---------------------------------


def exact_mp_tables(model: SrnModel, partition: StatePartition,
                    space_full: TruncatedSpace, series, targets=None):
    """Exact unconditional projected propensities from a full CME solution.

    ``space_full`` covers all d species in model order and ``series`` is a
    list of (t, Pmf) over that box. Conditional means are computed by direct
    summation; every cell with positive marginal mass is reliable. Tables use
    'nearest' time interpolation so solver stage times hit grid points exactly.
    """
    if targets is None:
        targets = needs_table_reactions(model, partition)
    keep = list(partition.projected_idx)
    lo = space_full.lower[keep]
    hi = space_full.upper[keep]
    space_z = TruncatedSpace(lo, hi)
    states = space_full.states
    cell_idx = space_z.index_of(states[:, keep])
    N = space_z.size
    times = np.array([t for t, _ in series])
    out = {}
    a_cache = {j: propensity_vector(model, j, states) for j in targets}
    for j in targets:
        vals = np.zeros((len(series), N))
        rel = np.zeros((len(series), N), dtype=bool)
        sup = np.zeros((len(series), N))
        for ti, (_, pmf) in enumerate(series):
            means, denom = _binned_conditional_mean(cell_idx, a_cache[j], pmf.probs, N)
            vals[ti] = means
            sup[ti] = denom
            rel[ti] = denom > 0
        out[j] = PropensityTable(j=j, space=space_z, times=times, values=vals,
                                 reliable=rel, support=sup, key="zprime",
                                 interp="nearest")
    return out


def exact_fmp_tables(model: SrnModel, partition: StatePartition,
                     hidden_space: TruncatedSpace, interval_series, observed_path,
                     targets=None):
    """Exact conditional projected propensities from a full filtering solution.

    ``interval_series`` holds, per inter-jump interval, a list of (t, Pmf over
    ``hidden_space``); the observed value on interval k is taken from the path.
    Returns dict j -> list of per-interval tables (key 'interest', 'nearest').
    """
    if targets is None:
        targets = needs_table_reactions(model, partition)
    hidden = list(partition.hidden_idx)
    obs = list(partition.observed_idx)
    n_int = len(partition.interest_idx)
    space_x = TruncatedSpace(hidden_space.lower[:n_int], hidden_space.upper[:n_int])
    cell_idx = space_x.index_of(hidden_space.states[:, :n_int])
    N = space_x.size
    d = model.d
    full = np.empty((hidden_space.size, d), dtype=np.int64)
    full[:, hidden] = hidden_space.states
    out = {j: [] for j in targets}
    for (k, _, _, y_val), series in zip(observed_path.intervals(), interval_series):
        full[:, obs] = np.atleast_1d(y_val)
        times = np.array([t for t, _ in series])
        a_cache = {j: propensity_vector(model, j, full) for j in targets}
        for j in targets:
            vals = np.zeros((len(series), N))
            rel = np.zeros((len(series), N), dtype=bool)
            sup = np.zeros((len(series), N))
            for ti, (_, pmf) in enumerate(series):
                means, denom = _binned_conditional_mean(cell_idx, a_cache[j], pmf.probs, N)
                vals[ti] = means
                sup[ti] = denom
                rel[ti] = denom > 0
            out[j].append(
                PropensityTable(j=j, space=space_x, times=times, values=vals,
                                reliable=rel, support=sup, key="interest",
                                interp="nearest")
            )
    return out
