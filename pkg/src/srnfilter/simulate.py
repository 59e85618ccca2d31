"""Exact stochastic simulation and observation-path extraction."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ExplosionGuard
from .model import Deterministic, InitialDistribution, SrnModel, StatePartition

DEFAULT_JUMP_CAP = 10_000_000


def stream_rng(master_seed: int, *indices) -> np.random.Generator:
    """Independent, reproducible RNG stream for (master seed, run index, ...)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, indices)]))


@dataclass
class Trajectory:
    """Piecewise-constant CTMC path: states[i] holds on [times[i], times[i+1])."""

    times: np.ndarray          # (n,) jump times, times[0] == start of interval
    states: np.ndarray         # (n, d) states
    fired: np.ndarray          # (n,) reaction index per jump, fired[0] == -1
    horizon: float

    def state_at(self, t: float) -> np.ndarray:
        i = np.searchsorted(self.times, t, side="right") - 1
        return self.states[max(i, 0)]

    def states_at(self, grid: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.times, grid, side="right") - 1
        return self.states[np.maximum(idx, 0)]

    def to_csv(self, path, species_names=None):
        d = self.states.shape[1]
        names = species_names or [f"s{i}" for i in range(d)]
        with open(path, "w") as fh:
            fh.write("time," + ",".join(names) + "\n")
            for t, z in zip(self.times, self.states):
                fh.write(f"{t}," + ",".join(str(int(v)) for v in z) + "\n")


@dataclass
class ObservedPath:
    """Jump times and values of the observed species slice."""

    t0_value: np.ndarray
    jump_times: np.ndarray
    values: np.ndarray         # (N, dim_y) value AFTER each jump
    horizon: float

    @property
    def num_jumps(self) -> int:
        return len(self.jump_times)

    def value_before(self, k: int) -> np.ndarray:
        """Observed value on the interval ending at jump k (y(t_k^-))."""
        return self.t0_value if k == 0 else self.values[k - 1]

    def intervals(self):
        """Iterate (k, t_start, t_end, y_on_interval) over the N+1 inter-jump intervals."""
        times = [0.0, *self.jump_times.tolist(), self.horizon]
        vals = [self.t0_value, *list(self.values)]
        for k in range(len(vals)):
            yield k, times[k], times[k + 1], np.asarray(vals[k])

    def to_json(self):
        return {
            "t0_value": [int(v) for v in self.t0_value],
            "jump_times": [float(t) for t in self.jump_times],
            "values": [[int(v) for v in row] for row in self.values],
            "horizon": float(self.horizon),
        }

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        n = len(doc["jump_times"])
        dim = len(doc["t0_value"])
        return cls(
            t0_value=np.asarray(doc["t0_value"], dtype=np.int64),
            jump_times=np.asarray(doc["jump_times"], dtype=float),
            values=np.asarray(doc["values"], dtype=np.int64).reshape(n, dim),
            horizon=float(doc["horizon"]),
        )


def sample_initial(mu: InitialDistribution, seed) -> np.ndarray:
    """Draw one state from a product-form initial distribution."""
    rng = seed if isinstance(seed, np.random.Generator) else stream_rng(seed)
    out = np.empty(len(mu.marginals), dtype=np.int64)
    for i, m in enumerate(mu.marginals):
        if isinstance(m, Deterministic):
            out[i] = m.value
        else:
            out[i] = m.support[rng.choice(len(m.support), p=m.probs)]
    return out


def _ssa_core(fast, z, t, t_end, rng, cap, record):
    """Gillespie direct method on plain-Python state; mutates ``z`` in place.

    ``record`` is a callback(t, j) invoked after each accepted jump, or None.
    Returns the number of jumps taken.
    """
    J = len(fast)
    exp = rng.exponential
    unif = rng.random
    props = [0.0] * J
    njumps = 0
    while True:
        tot = 0.0
        for j in range(J):
            theta, cons, _ = fast[j]
            p = theta
            for i, m in cons:
                zi = z[i]
                if zi < m:
                    p = 0.0
                    break
                for k in range(m):
                    p *= zi - k
            props[j] = p
            tot += p
        if tot <= 0.0:
            break
        t += exp(1.0 / tot)
        if t >= t_end:
            break
        u = unif() * tot
        acc = 0.0
        j = J - 1
        for jj in range(J):
            acc += props[jj]
            if acc >= u:
                j = jj
                break
        for i, dv in fast[j][2]:
            z[i] += dv
        njumps += 1
        if njumps > cap:
            raise ExplosionGuard(f"simulation exceeded {cap} jumps")
        if record is not None:
            record(t, j)
    return njumps


def ssa_simulate(model: SrnModel, z0, T: float, seed, jump_cap=DEFAULT_JUMP_CAP) -> Trajectory:
    """Statistically exact sample of the SRN on [0, T] (Gillespie direct method)."""
    rng = seed if isinstance(seed, np.random.Generator) else stream_rng(seed)
    z = [int(v) for v in z0]
    times = [0.0]
    states = [list(z)]
    fired = [-1]

    def record(t, j):
        times.append(t)
        states.append(list(z))
        fired.append(j)

    _ssa_core(model.fast_reactions(), z, 0.0, float(T), rng, jump_cap, record)
    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states, dtype=np.int64),
        fired=np.asarray(fired, dtype=np.int64),
        horizon=float(T),
    )


def ssa_final_states(model: SrnModel, z0, T: float, n_runs: int, master_seed,
                     jump_cap=DEFAULT_JUMP_CAP) -> np.ndarray:
    """Terminal states of ``n_runs`` independent SSA runs (no path storage)."""
    fast = model.fast_reactions()
    out = np.empty((n_runs, model.d), dtype=np.int64)
    z0 = [int(v) for v in z0]
    for r in range(n_runs):
        rng = stream_rng(master_seed, r)
        z = list(z0)
        _ssa_core(fast, z, 0.0, float(T), rng, jump_cap, None)
        out[r] = z
    return out


def extract_observation(traj: Trajectory, partition: StatePartition) -> ObservedPath:
    """Keep only the jumps at which the observed slice changes."""
    obs = list(partition.observed_idx)
    y = traj.states[:, obs]
    jump_times, values = [], []
    for i in range(1, len(traj.times)):
        if not np.array_equal(y[i], y[i - 1]):
            jump_times.append(traj.times[i])
            values.append(y[i])
    return ObservedPath(
        t0_value=y[0].copy(),
        jump_times=np.asarray(jump_times, dtype=float),
        values=np.asarray(values, dtype=np.int64).reshape(len(values), len(obs)),
        horizon=traj.horizon,
    )


def mnrm_simulate(projected_model, z0, interval, seed, jump_cap=DEFAULT_JUMP_CAP,
                  allow_extrapolation=True) -> Trajectory:
    """Modified next reaction method for time-dependent (table) propensities.

    Rates are piecewise constant on the table time grid; the internal-time
    integrals are inverted exactly cell by cell, so the sample is exact for
    the piecewise-constant rate model.
    """
    rng = seed if isinstance(seed, np.random.Generator) else stream_rng(seed)
    a, b = float(interval[0]), float(interval[1])
    reactions = projected_model.reactions
    J = len(reactions)
    z = np.asarray(z0, dtype=np.int64).copy()

    times = [a]
    states = [z.copy()]
    fired = [-1]

    # next reaction method bookkeeping: internal clocks and next firing levels
    Tj = np.zeros(J)
    Pj = rng.exponential(1.0, size=J)

    boundaries = projected_model.time_boundaries(a, b)
    t = a
    njumps = 0
    while t < b:
        cell_end = b
        for tb in boundaries:
            if tb > t + 1e-12:
                cell_end = min(tb, b)
                break
        rates = np.array(
            [projected_model.rate_at(j, z, t, allow_extrapolation) for j in range(J)]
        )
        # candidate firing times within the constant-rate cell
        with np.errstate(divide="ignore"):
            dt_j = np.where(rates > 0, (Pj - Tj) / np.where(rates > 0, rates, 1.0), np.inf)
        jmin = int(np.argmin(dt_j))
        t_fire = t + dt_j[jmin]
        if t_fire >= cell_end:
            Tj += rates * (cell_end - t)
            t = cell_end
            continue
        Tj += rates * (t_fire - t)
        Pj[jmin] += rng.exponential(1.0)
        z = z + reactions[jmin].net
        t = t_fire
        njumps += 1
        if njumps > jump_cap:
            raise ExplosionGuard(f"simulation exceeded {jump_cap} jumps")
        times.append(t)
        states.append(z.copy())
        fired.append(jmin)
    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states, dtype=np.int64),
        fired=np.asarray(fired, dtype=np.int64),
        horizon=b,
    )
