"""Truncated-state-space solvers: the CME and the exact-observation filtering
equations (inter-jump ODE, jump update, normalization)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SizeCap, StepUnstable, ZeroMass
from .model import SrnModel, StatePartition, propensity_vector

DEFAULT_SIZE_CAP = 50_000_000

# weights are rebased into log_norm outside this window
_REBASE_HI = 1e100
_REBASE_LO = 1e-100


@dataclass(frozen=True)
class TruncatedSpace:
    """Axis-aligned box of integer states with a row-major flat-index bijection."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.int64)
        hi = np.asarray(self.upper, dtype=np.int64)
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dims(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple:
        return tuple((self.upper - self.lower + 1).tolist())

    @property
    def size(self) -> int:
        return int(np.prod(self.upper - self.lower + 1, dtype=np.int64))

    @property
    def states(self) -> np.ndarray:
        """All states in flat-index order, shape (N, dims)."""
        cached = getattr(self, "_states", None)
        if cached is None:
            grids = [np.arange(lo, hi + 1) for lo, hi in zip(self.lower, self.upper)]
            mesh = np.meshgrid(*grids, indexing="ij")
            cached = np.stack([m.ravel() for m in mesh], axis=1).astype(np.int64)
            cached.setflags(write=False)
            object.__setattr__(self, "_states", cached)
        return cached

    def index_of(self, states) -> np.ndarray:
        """Flat indices of the given states; -1 for states outside the box."""
        s = np.atleast_2d(np.asarray(states, dtype=np.int64))
        rel = s - self.lower
        inside = np.all((rel >= 0) & (s <= self.upper), axis=1)
        rel_c = np.clip(rel, 0, np.asarray(self.shape) - 1)
        idx = np.ravel_multi_index(tuple(rel_c.T), self.shape)
        return np.where(inside, idx, -1)


def enumerate_space(bounds, size_cap=DEFAULT_SIZE_CAP) -> TruncatedSpace:
    """Build a TruncatedSpace from per-dimension (lower, upper) bounds."""
    lo = np.array([b[0] for b in bounds], dtype=np.int64)
    hi = np.array([b[1] for b in bounds], dtype=np.int64)
    n = int(np.prod(hi - lo + 1, dtype=np.int64))
    if n > size_cap:
        raise SizeCap(f"truncated space has {n} states (cap {size_cap})")
    return TruncatedSpace(lo, hi)


@dataclass
class Pmf:
    """Normalized distribution over a truncated space."""

    space: TruncatedSpace
    probs: np.ndarray
    time: float = 0.0

    def mean(self, dim=0) -> float:
        return float(self.probs @ self.space.states[:, dim])

    def variance(self, dim=0) -> float:
        x = self.space.states[:, dim]
        m = self.probs @ x
        return float(self.probs @ (x - m) ** 2)

    def marginal(self, dims) -> "Pmf":
        """Sum out all axes except ``dims`` (given in desired output order)."""
        dims = list(dims)
        sub = TruncatedSpace(self.space.lower[dims], self.space.upper[dims])
        grid = self.probs.reshape(self.space.shape)
        drop = tuple(i for i in range(self.space.dims) if i not in dims)
        m = grid.sum(axis=drop)
        m = np.moveaxis(m, [sorted(dims).index(d) for d in dims], range(len(dims)))
        return Pmf(sub, m.ravel(), self.time)


@dataclass
class UnnormalizedPmf:
    """Nonnegative weights with an accumulated log-normalization factor.

    The represented function is ``weights * exp(log_norm)``.
    """

    space: TruncatedSpace
    weights: np.ndarray
    log_norm: float = 0.0
    time: float = 0.0

    def rebase(self):
        m = float(self.weights.max())
        if m <= 0:
            raise ZeroMass("unnormalized PMF is identically zero")
        self.weights = self.weights / m
        self.log_norm += math.log(m)

    def log_total(self) -> float:
        s = float(self.weights.sum())
        if s <= 0:
            raise ZeroMass("unnormalized PMF is identically zero")
        return math.log(s) + self.log_norm

    def copy(self) -> "UnnormalizedPmf":
        return UnnormalizedPmf(self.space, self.weights.copy(), self.log_norm, self.time)


def normalize(rho: UnnormalizedPmf) -> Pmf:
    """Normalize into a proper PMF; the log-normalizer cancels."""
    w = np.maximum(rho.weights, 0.0)
    s = w.sum()
    if s <= 0:
        raise ZeroMass("cannot normalize a zero PMF")
    return Pmf(rho.space, w / s, rho.time)


# --- reaction rows: the generic interface between models and the solvers ----


@dataclass
class ReactionRow:
    """One reaction's action on a truncated space.

    ``rates`` is either a static (N,) array of propensities evaluated at every
    space state, or a callable t -> (N,) array for time-dependent propensities.
    ``shift`` is the net change restricted to the space's dimensions and
    ``obs_net`` the net change of the observed slice (empty for CME use).
    """

    j: int
    shift: np.ndarray
    obs_net: np.ndarray
    rates: object

    def rates_at(self, t: float) -> np.ndarray:
        if callable(self.rates):
            return self.rates(t)
        return self.rates

    @property
    def static(self) -> bool:
        return not callable(self.rates)

    @property
    def unobservable(self) -> bool:
        return self.obs_net.size == 0 or not np.any(self.obs_net != 0)


def full_model_rows(model: SrnModel, partition: StatePartition, space: TruncatedSpace,
                    y) -> list:
    """Rows of the full model on a hidden-space box with the observed slice frozen at y."""
    hidden = list(partition.hidden_idx)
    obs = list(partition.observed_idx)
    N = space.size
    full_states = np.empty((N, model.d), dtype=np.int64)
    full_states[:, hidden] = space.states
    full_states[:, obs] = np.asarray(y, dtype=np.int64)
    rows = []
    for j, r in enumerate(model.reactions):
        rows.append(
            ReactionRow(
                j=j,
                shift=r.net[hidden],
                obs_net=r.net[obs],
                rates=propensity_vector(model, j, full_states),
            )
        )
    return rows


def cme_rows(model: SrnModel, space: TruncatedSpace) -> list:
    """Rows of the plain CME over a box covering all species."""
    states = space.states
    rows = []
    for j, r in enumerate(model.reactions):
        rows.append(
            ReactionRow(
                j=j,
                shift=r.net,
                obs_net=np.empty(0, dtype=np.int64),
                rates=propensity_vector(model, j, states),
            )
        )
    return rows


def model_rows(model_like, partition, space, y):
    """Dispatch row construction for SrnModel or projected models."""
    if isinstance(model_like, SrnModel):
        return full_model_rows(model_like, partition, space, y)
    return model_like.reaction_rows(space, y)


class SpaceOperator:
    """Sparse right-hand side of a CME-like system on a truncated space.

    drho/dt = sum_{j in inflow} shift_j(a_j * rho) - (sum_{all j} a_j) * rho.
    """

    def __init__(self, space: TruncatedSpace, rows, inflow):
        self.space = space
        self.rows = rows
        self.inflow = [bool(b) for b in inflow]
        self._prep = []
        states = space.states
        for row in rows:
            tgt = space.index_of(states + row.shift)
            valid = np.nonzero(tgt >= 0)[0]
            self._prep.append((valid, tgt[valid]))
        self._static_matrix = None
        self._cache_t = None
        self._cache_A = None

    def matrix(self, t: float = 0.0) -> sp.csr_matrix:
        if self._static_matrix is not None:
            return self._static_matrix
        all_static = all(row.static for row in self.rows)
        if not all_static and self._cache_t is not None and abs(t - self._cache_t) < 1e-13:
            return self._cache_A
        N = self.space.size
        data_parts, row_parts, col_parts = [], [], []
        diag = np.zeros(N)
        for row, use_inflow, (src, tgt) in zip(self.rows, self.inflow, self._prep):
            a = row.rates_at(t)
            diag -= a
            if use_inflow and len(src):
                data_parts.append(a[src])
                row_parts.append(tgt)
                col_parts.append(src)
        data_parts.append(diag)
        idx = np.arange(N)
        row_parts.append(idx)
        col_parts.append(idx)
        A = sp.csr_matrix(
            (np.concatenate(data_parts), (np.concatenate(row_parts), np.concatenate(col_parts))),
            shape=(N, N),
        )
        if all_static:
            self._static_matrix = A
        else:
            self._cache_t, self._cache_A = t, A
        return A


def cme_operator(model_like, space: TruncatedSpace) -> SpaceOperator:
    if isinstance(model_like, SrnModel):
        rows = cme_rows(model_like, space)
    else:
        rows = model_like.cme_reaction_rows(space)
    return SpaceOperator(space, rows, [True] * len(rows))


def filtering_operator(rows, space: TruncatedSpace) -> SpaceOperator:
    """Inter-jump filtering RHS: inflow over unobservable reactions only."""
    return SpaceOperator(space, rows, [row.unobservable for row in rows])


def _rk4_integrate(op: SpaceOperator, rho: UnnormalizedPmf, t0, t1, dt, collect=None):
    """Fixed-step RK4 on d(rho)/dt = A(t) rho with under/overflow rebasing.

    ``collect`` is a callback(t, rho) invoked at every step time including both
    endpoints; rho is mutated in place.
    """
    span = t1 - t0
    if span <= 0:
        if collect is not None:
            collect(t0, rho)
        return rho
    n = max(1, math.ceil(span / dt - 1e-12))
    h = span / n
    if collect is not None:
        rho.time = t0
        collect(t0, rho)
    w = rho.weights
    for i in range(n):
        t = t0 + i * h
        A1 = op.matrix(t)
        Amid = op.matrix(t + h / 2)
        A2 = op.matrix(t + h)
        k1 = A1 @ w
        k2 = Amid @ (w + (h / 2) * k1)
        k3 = Amid @ (w + (h / 2) * k2)
        k4 = A2 @ (w + h * k3)
        w = w + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        mx = w.max()
        if w.min() < -1e-8 * max(1.0, mx):
            raise StepUnstable(f"negative weights at t={t + h:.6g}; decrease dt")
        rho.weights = w
        rho.time = t0 + (i + 1) * h
        if mx > _REBASE_HI or (0 < mx < _REBASE_LO):
            rho.rebase()
            w = rho.weights
        if collect is not None:
            collect(rho.time, rho)
    return rho


def solve_cme(model_like, space: TruncatedSpace, p0: Pmf, T: float, dt: float,
              snapshot_times=None):
    """Integrate the truncated CME with fixed-step RK4.

    Returns (series, leak) where series is a list of (t, Pmf) at every step
    time and leak = 1 - sum(p(T)) is the mass lost through the truncation
    boundary.
    """
    op = cme_operator(model_like, space)
    rho = UnnormalizedPmf(space, p0.probs.astype(float).copy(), 0.0, 0.0)
    series = []

    def collect(t, r):
        p = np.maximum(r.weights, 0.0) * math.exp(r.log_norm)
        series.append((t, Pmf(space, p, t)))

    _rk4_integrate(op, rho, 0.0, float(T), dt, collect)
    leak = 1.0 - float(series[-1][1].probs.sum())
    return series, leak


def filter_interjump(model_like, partition, space, rho: UnnormalizedPmf, y_k,
                     interval, dt, collect=None):
    """Advance the unnormalized filtering PMF over one inter-jump interval.

    Inflow runs over unobservable reactions only; outflow over all reactions.
    Returns the list of (t, UnnormalizedPmf-copy) at step times unless a
    ``collect`` callback is supplied.
    """
    rows = model_rows(model_like, partition, space, y_k)
    op = filtering_operator(rows, space)
    out = None
    if collect is None:
        out = []

        def collect(t, r):
            out.append((t, r.copy()))

    _rk4_integrate(op, rho, interval[0], interval[1], dt, collect)
    return out if out is not None else rho


def filter_jump(model_like, partition, space, rho_minus: UnnormalizedPmf, O_k,
                y_prev, t_k: float) -> UnnormalizedPmf:
    """Apply the observed-jump update at time t_k.

    rho(x, t_k) = (1/|O_k|) * sum_{j in O_k} a_j(x - nu_x_j, y_prev) *
    rho(x - nu_x_j, t_k^-); shifts leaving the box contribute nothing.
    """
    rows = {row.j: row for row in model_rows(model_like, partition, space, y_prev)}
    states = space.states
    new_w = np.zeros(space.size)
    for j in sorted(O_k):
        row = rows[j]
        a = row.rates_at(t_k)
        tgt = space.index_of(states + row.shift)
        valid = tgt >= 0
        np.add.at(new_w, tgt[valid], a[valid] * rho_minus.weights[valid])
    new_w /= len(O_k)
    out = UnnormalizedPmf(space, new_w, rho_minus.log_norm, t_k)
    out.rebase()  # mandatory rebase at each jump; raises ZeroMass if empty
    return out
