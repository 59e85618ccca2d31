"""Weighted-particle approximation of the unnormalized filtering PMF for
exact observations: propagation with observable reactions removed, exact
weight computation, jump handling and resampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import Degenerate, ExplosionGuard
from .ffsp import Pmf, TruncatedSpace
from .model import InitialDistribution, SrnModel, StatePartition, classify_reactions
from .simulate import DEFAULT_JUMP_CAP, sample_initial, stream_rng


@dataclass
class Ensemble:
    """M weighted particles over the hidden species (vectorized storage).

    Particle i keeps RNG stream i for its whole life; resampling reassigns
    states to slots but never shares streams.
    """

    states: np.ndarray        # (M, d_hidden) int64
    log_w: np.ndarray         # (M,)
    time: float
    master_seed: int
    rngs: list

    @property
    def M(self) -> int:
        return self.states.shape[0]

    def weights(self) -> np.ndarray:
        """Weights normalized to sum 1; raises Degenerate if all are zero."""
        finite = np.isfinite(self.log_w)
        if not finite.any():
            raise Degenerate("all particles have zero weight")
        w = np.zeros(self.M)
        m = self.log_w[finite].max()
        w[finite] = np.exp(self.log_w[finite] - m)
        return w / w.sum()

    def to_csv(self, path):
        """Write a particle snapshot as particle_id,state...,log_weight rows."""
        dims = self.states.shape[1]
        cols = ",".join(f"x{k}" for k in range(dims))
        with open(path, "w") as fh:
            fh.write(f"particle_id,{cols},log_weight\n")
            for i in range(self.M):
                st = ",".join(str(int(v)) for v in self.states[i])
                fh.write(f"{i},{st},{self.log_w[i]}\n")


def pf_init(pi0, M: int, seed) -> Ensemble:
    """Draw M i.i.d. particles from the initial conditional distribution.

    ``pi0`` is either a Pmf over a hidden-space box or an InitialDistribution
    restricted to the hidden species (a sequence of marginals).
    """
    rngs = [stream_rng(seed, i) for i in range(M)]
    if isinstance(pi0, Pmf):
        draw_rng = stream_rng(seed, M)  # dedicated stream for the initial draw
        idx = draw_rng.choice(pi0.space.size, size=M, p=pi0.probs)
        states = pi0.space.states[idx].copy()
    elif isinstance(pi0, InitialDistribution):
        states = np.stack([sample_initial(pi0, rngs[i]) for i in range(M)])
    else:
        raise TypeError("pi0 must be a Pmf or an InitialDistribution")
    return Ensemble(states, np.zeros(M), 0.0, int(seed), rngs)


def _hidden_reaction_data(model: SrnModel, partition: StatePartition):
    """Split fast-reaction data into U-propagation data and O-rate data, both
    expressed on the hidden coordinate order (interest, nuisance)."""
    hidden = list(partition.hidden_idx)
    obs = list(partition.observed_idx)
    pos_hidden = {s: k for k, s in enumerate(hidden)}
    pos_obs = {s: k for k, s in enumerate(obs)}
    O, U = classify_reactions(model, partition)

    def remap(cons_or_net):
        out = []
        for i, v in cons_or_net:
            if i in pos_hidden:
                out.append(("h", pos_hidden[i], v))
            else:
                out.append(("y", pos_obs[i], v))
        return out

    u_data, o_data = [], []
    for j, (theta, cons, net) in enumerate(model.fast_reactions()):
        entry = (j, theta, remap(cons), [(pos_hidden[i], v) for i, v in net if i in pos_hidden])
        if j in U:
            u_data.append(entry)
        else:
            o_data.append(entry)
    return u_data, o_data


def _rate(theta, cons, v, y):
    p = theta
    for kind, k, m in cons:
        zi = v[k] if kind == "h" else y[k]
        if zi < m:
            return 0.0
        for q in range(m):
            p *= zi - q
    return p


def pf_propagate(ens: Ensemble, model: SrnModel, partition: StatePartition, y_k,
                 interval, grid=None, jump_cap=DEFAULT_JUMP_CAP):
    """Evolve every particle over [t0, t1) by SSA restricted to the
    unobservable reactions, with the observed slice frozen at y_k.

    The log-weight decreases by the exact integral of the total observable
    propensity along the particle's piecewise-constant path. If ``grid`` is
    given, returns (ensemble, snapshots) where snapshots[g] = (states, log_w)
    at grid time g; grid times must lie in [t0, t1].
    """
    t0, t1 = float(interval[0]), float(interval[1])
    u_data, o_data = _hidden_reaction_data(model, partition)
    y = [int(v) for v in np.atleast_1d(y_k)]
    M = ens.M
    dh = ens.states.shape[1]

    ngrid = 0 if grid is None else len(grid)
    snap_states = np.empty((ngrid, M, dh), dtype=np.int64) if ngrid else None
    snap_logw = np.empty((ngrid, M)) if ngrid else None

    new_states = ens.states.copy()
    new_logw = ens.log_w.copy()

    for i in range(M):
        rng = ens.rngs[i]
        v = [int(x) for x in new_states[i]]
        lw = float(new_logw[i])
        alive = math.isfinite(lw)
        exp = rng.exponential
        unif = rng.random
        t = t0
        gi = 0
        njumps = 0
        nu = len(u_data)
        props = [0.0] * nu
        while True:
            tot = 0.0
            for q in range(nu):
                _, theta, cons, _ = u_data[q]
                p = _rate(theta, cons, v, y)
                props[q] = p
                tot += p
            obs_rate = 0.0
            for _, theta, cons, _ in o_data:
                obs_rate += _rate(theta, cons, v, y)
            t_next = t + exp(1.0 / tot) if tot > 0.0 else t1
            if t_next > t1:
                t_next = t1
            while gi < ngrid and grid[gi] <= t_next + 1e-12:
                snap_states[gi, i] = v
                snap_logw[gi, i] = lw - obs_rate * max(grid[gi] - t, 0.0) if alive else -math.inf
                gi += 1
            if alive:
                lw -= obs_rate * (t_next - t)
            if t_next >= t1:
                break
            u = unif() * tot
            acc = 0.0
            q = nu - 1
            for qq in range(nu):
                acc += props[qq]
                if acc >= u:
                    q = qq
                    break
            for k, dv in u_data[q][3]:
                v[k] += dv
            t = t_next
            njumps += 1
            if njumps > jump_cap:
                raise ExplosionGuard(f"particle {i} exceeded {jump_cap} jumps")
        new_states[i] = v
        new_logw[i] = lw
    out = Ensemble(new_states, new_logw, t1, ens.master_seed, ens.rngs)
    if grid is None:
        return out
    return out, (snap_states, snap_logw)


def pf_jump(ens: Ensemble, model: SrnModel, partition: StatePartition, O_k,
            y_minus) -> Ensemble:
    """Apply the observed jump: each particle fires a uniformly drawn reaction
    from O_k, scaling its weight by that reaction's propensity at the pre-jump
    state; zero propensity kills the particle."""
    hidden = list(partition.hidden_idx)
    obs = list(partition.observed_idx)
    pos_hidden = {s: k for k, s in enumerate(hidden)}
    pos_obs = {s: k for k, s in enumerate(obs)}
    y = [int(v) for v in np.atleast_1d(y_minus)]
    Ok = sorted(O_k)
    fast = model.fast_reactions()
    # pre-translate the candidate reactions to hidden coordinates
    cand = []
    for j in Ok:
        theta, cons, net = fast[j]
        cons_t = []
        for i, m in cons:
            cons_t.append(("h", pos_hidden[i], m) if i in pos_hidden else ("y", pos_obs[i], m))
        net_t = [(pos_hidden[i], v) for i, v in net if i in pos_hidden]
        cand.append((theta, cons_t, net_t))

    states = ens.states.copy()
    log_w = ens.log_w.copy()
    for i in range(ens.M):
        rng = ens.rngs[i]
        c = int(rng.integers(len(cand)))
        theta, cons_t, net_t = cand[c]
        v = states[i]
        a = _rate(theta, cons_t, v, y)
        if a <= 0.0 or not math.isfinite(log_w[i]):
            log_w[i] = -math.inf
        else:
            log_w[i] += math.log(a)
        for k, dv in net_t:
            v[k] += dv
    if not np.isfinite(log_w).any():
        raise Degenerate("all particles killed by the observed jump")
    return Ensemble(states, log_w, ens.time, ens.master_seed, ens.rngs)


def pf_resample(ens: Ensemble, seed=None, systematic=False) -> Ensemble:
    """Resample to equal weights; multinomial by default, systematic optionally."""
    p = ens.weights()
    rng = stream_rng(ens.master_seed if seed is None else seed,
                     0x5E5A, int(round(ens.time * 1e9)) & 0xFFFFFFFF)
    if systematic:
        u = (rng.random() + np.arange(ens.M)) / ens.M
        idx = np.searchsorted(np.cumsum(p), u)
    else:
        counts = rng.multinomial(ens.M, p)
        idx = np.repeat(np.arange(ens.M), counts)
    return Ensemble(ens.states[idx].copy(), np.zeros(ens.M), ens.time,
                    ens.master_seed, ens.rngs)


def pf_estimate(ens: Ensemble) -> dict:
    """Sparse estimate of the unnormalized PMF: state tuple -> mean weight.

    Implements (1/M) * sum_i 1{V_i = x} w_i with w_i = exp(log_w_i).
    """
    out = {}
    w = np.where(np.isfinite(ens.log_w), np.exp(ens.log_w), 0.0)
    for i in range(ens.M):
        key = tuple(int(v) for v in ens.states[i])
        out[key] = out.get(key, 0.0) + w[i] / ens.M
    return out


def pf_pmf(ens: Ensemble, space: TruncatedSpace, dims=None) -> Pmf:
    """Normalized weighted histogram of (a projection of) the particle states.

    ``dims`` selects hidden coordinates (default: all); particles outside the
    box are dropped.
    """
    pts = ens.states if dims is None else ens.states[:, list(dims)]
    idx = space.index_of(pts)
    w = ens.weights()
    keep = idx >= 0
    probs = np.bincount(idx[keep], weights=w[keep], minlength=space.size)
    s = probs.sum()
    if s <= 0:
        raise Degenerate("no particle inside the estimation box")
    return Pmf(space, probs / s, ens.time)


def weighted_mean(ens: Ensemble, f) -> float:
    """Self-normalized weighted average of f over the ensemble."""
    w = ens.weights()
    vals = np.array([f(ens.states[i]) for i in range(ens.M)], dtype=float)
    return float(w @ vals)


def pf_ess(ens: Ensemble) -> float:
    """Effective sample size (sum w)^2 / sum w^2."""
    finite = np.isfinite(ens.log_w)
    if not finite.any():
        return 0.0
    w = np.where(finite, np.exp(ens.log_w - np.max(ens.log_w[finite])), 0.0)
    s = w.sum()
    if s <= 0:
        return 0.0
    return float(s * s / np.sum(w * w))
