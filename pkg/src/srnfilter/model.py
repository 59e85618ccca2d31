"""Reaction network definitions, state partitions and propensity evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatch


def _as_int_vec(v, d=None):
    a = np.asarray(v, dtype=np.int64)
    if d is not None and a.shape != (d,):
        raise ValueError(f"expected length-{d} vector, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Reaction:
    """One reaction: consumed/produced molecule counts and a mass-action rate."""

    consumed: np.ndarray
    produced: np.ndarray
    rate_constant: float

    def __post_init__(self):
        object.__setattr__(self, "consumed", _as_int_vec(self.consumed))
        object.__setattr__(self, "produced", _as_int_vec(self.produced, len(self.consumed)))

    @property
    def net(self) -> np.ndarray:
        return self.produced - self.consumed


@dataclass(frozen=True)
class SrnModel:
    """A stochastic reaction network over ``d`` species with mass-action kinetics."""

    species_names: tuple
    reactions: tuple

    def __post_init__(self):
        object.__setattr__(self, "species_names", tuple(self.species_names))
        object.__setattr__(self, "reactions", tuple(self.reactions))

    @property
    def d(self) -> int:
        return len(self.species_names)

    @property
    def num_reactions(self) -> int:
        return len(self.reactions)

    def stoichiometry(self) -> np.ndarray:
        """Net change matrix of shape (J, d)."""
        return np.array([r.net for r in self.reactions], dtype=np.int64)

    def fast_reactions(self):
        """Plain-Python reaction data for tight simulation loops.

        Returns a list of (rate_constant, [(species, consumed_count), ...],
        [(species, net_change), ...]) tuples.
        """
        cached = getattr(self, "_fast", None)
        if cached is None:
            cached = []
            for r in self.reactions:
                cons = [(i, int(m)) for i, m in enumerate(r.consumed) if m > 0]
                net = [(i, int(v)) for i, v in enumerate(r.net) if v != 0]
                cached.append((float(r.rate_constant), cons, net))
            object.__setattr__(self, "_fast", cached)
        return cached


@dataclass(frozen=True)
class StatePartition:
    """Index sets splitting species into interest (X'), nuisance (X'') and observed (Y)."""

    interest_idx: tuple
    nuisance_idx: tuple
    observed_idx: tuple

    def __post_init__(self):
        object.__setattr__(self, "interest_idx", tuple(int(i) for i in self.interest_idx))
        object.__setattr__(self, "nuisance_idx", tuple(int(i) for i in self.nuisance_idx))
        object.__setattr__(self, "observed_idx", tuple(int(i) for i in self.observed_idx))
        all_idx = self.interest_idx + self.nuisance_idx + self.observed_idx
        if len(set(all_idx)) != len(all_idx):
            raise ValueError("partition index lists overlap")

    @property
    def hidden_idx(self) -> tuple:
        """Hidden species in filter order: interest first, nuisance after."""
        return self.interest_idx + self.nuisance_idx

    @property
    def projected_idx(self) -> tuple:
        """Species of the projected process Z' = (X', Y)."""
        return self.interest_idx + self.observed_idx

    def validate(self, model: SrnModel):
        covered = set(self.interest_idx) | set(self.nuisance_idx) | set(self.observed_idx)
        if covered != set(range(model.d)):
            raise ValueError("partition does not cover all species exactly once")


def propensity(model: SrnModel, j: int, z) -> float:
    """Mass-action propensity of reaction ``j`` at state ``z``.

    The falling factorial is accumulated iteratively, never through full
    factorials, so large copy numbers do not overflow.
    """
    theta, cons, _ = model.fast_reactions()[j]
    p = theta
    for i, m in cons:
        zi = z[i]
        if zi < m:
            return 0.0
        for k in range(m):
            p *= zi - k
    return p


def propensity_vector(model: SrnModel, j: int, states: np.ndarray) -> np.ndarray:
    """Vectorized mass-action propensity over an (N, d) array of states."""
    theta, cons, _ = model.fast_reactions()[j]
    out = np.full(states.shape[0], theta, dtype=float)
    for i, m in cons:
        col = states[:, i]
        for k in range(m):
            out *= np.maximum(col - k, 0)
        out[col < m] = 0.0
    return out


def classify_reactions(model: SrnModel, partition: StatePartition):
    """Split reaction indices into observable O (alter Y) and unobservable U."""
    obs = list(partition.observed_idx)
    O, U = set(), set()
    for j, r in enumerate(model.reactions):
        if obs and np.any(r.net[obs] != 0):
            O.add(j)
        else:
            U.add(j)
    return O, U


def matching_reactions(model: SrnModel, partition: StatePartition, delta_y) -> set:
    """Reactions in O whose observed net change equals ``delta_y``."""
    delta_y = np.asarray(delta_y, dtype=np.int64)
    obs = list(partition.observed_idx)
    O, _ = classify_reactions(model, partition)
    match = {j for j in O if np.array_equal(model.reactions[j].net[obs], delta_y)}
    if not match:
        raise EmptyMatch(f"no reaction produces observed jump {delta_y.tolist()}")
    return match


def project_stoichiometry(model: SrnModel, partition: StatePartition):
    """Net vectors of the reactions restricted to Z' = (X', Y).

    Reactions whose projected net vector is zero are dropped; survivors keep
    their original index and ordering.
    """
    keep = list(partition.projected_idx)
    out = []
    for j, r in enumerate(model.reactions):
        net = r.net[keep]
        if np.any(net != 0):
            out.append((j, net))
    return out


def validate_model(model: SrnModel):
    """Collect all structural violations; an empty list means the model is valid."""
    violations = []
    d = model.d
    if len(set(model.species_names)) != d:
        violations.append("duplicate species names")
    for j, r in enumerate(model.reactions):
        if r.consumed.shape != (d,) or r.produced.shape != (d,):
            violations.append(f"reaction {j}: stoichiometry length mismatch")
            continue
        if np.any(r.consumed < 0) or np.any(r.produced < 0):
            violations.append(f"reaction {j}: negative molecule count")
        if not np.isfinite(r.rate_constant):
            violations.append(f"reaction {j}: non-finite rate constant")
        elif r.rate_constant < 0:
            violations.append(f"reaction {j}: negative rate constant")
    return violations


# --- initial distributions -------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    value: int


@dataclass(frozen=True)
class Categorical:
    support: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(int(s) for s in self.support))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if any(s < 0 for s in self.support):
            raise ValueError("categorical support must be nonnegative integers")
        if abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError("categorical probabilities must sum to 1")


@dataclass(frozen=True)
class InitialDistribution:
    """Product of independent per-species marginals."""

    marginals: tuple

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))

    def marginal_pmf(self, i: int, lo: int, hi: int) -> np.ndarray:
        """PMF of species ``i`` restricted to the integer range [lo, hi]."""
        out = np.zeros(hi - lo + 1)
        m = self.marginals[i]
        if isinstance(m, Deterministic):
            if lo <= m.value <= hi:
                out[m.value - lo] = 1.0
        else:
            for s, p in zip(m.support, m.probs):
                if lo <= s <= hi:
                    out[s - lo] += p
        return out

    def mean_vector(self) -> np.ndarray:
        out = np.zeros(len(self.marginals))
        for i, m in enumerate(self.marginals):
            if isinstance(m, Deterministic):
                out[i] = m.value
            else:
                out[i] = sum(s * p for s, p in zip(m.support, m.probs))
        return out


# --- JSON model schema -----------------------------------------------------


def _stoich_from_map(mapping, names):
    v = np.zeros(len(names), dtype=np.int64)
    for sp, count in mapping.items():
        v[names.index(sp)] = int(count)
    return v


def model_from_json(doc):
    """Build (model, initial, partition) from the JSON model schema.

    Species absent from a reaction's stoichiometry map default to 0. Initial
    values may be plain integers or {"support": [...], "probs": [...]}.
    The partition entry is optional; nuisance species are inferred as the
    complement of interest and observed.
    """
    if isinstance(doc, str):
        doc = json.loads(doc)
    names = list(doc["species"])
    reactions = []
    for r in doc["reactions"]:
        reactions.append(
            Reaction(
                consumed=_stoich_from_map(r.get("consumed", {}), names),
                produced=_stoich_from_map(r.get("produced", {}), names),
                rate_constant=float(r["rate"]),
            )
        )
    model = SrnModel(species_names=tuple(names), reactions=tuple(reactions))

    marginals = []
    init_doc = doc.get("initial", {})
    for sp in names:
        val = init_doc.get(sp, 0)
        if isinstance(val, dict):
            marginals.append(Categorical(tuple(val["support"]), tuple(val["probs"])))
        else:
            marginals.append(Deterministic(int(val)))
    initial = InitialDistribution(tuple(marginals))

    partition = None
    if "partition" in doc:
        p = doc["partition"]
        interest = tuple(names.index(s) for s in p.get("interest", []))
        observed = tuple(names.index(s) for s in p.get("observed", []))
        nuisance = tuple(
            i for i in range(len(names)) if i not in interest and i not in observed
        )
        partition = StatePartition(interest, nuisance, observed)
    return model, initial, partition


def model_to_json(model: SrnModel, initial: InitialDistribution = None,
                  partition: StatePartition = None):
    """Serialize back to the JSON model schema (dict)."""
    names = list(model.species_names)
    doc = {"species": names, "reactions": []}
    for r in model.reactions:
        doc["reactions"].append(
            {
                "consumed": {names[i]: int(m) for i, m in enumerate(r.consumed) if m > 0},
                "produced": {names[i]: int(m) for i, m in enumerate(r.produced) if m > 0},
                "rate": float(r.rate_constant),
            }
        )
    if initial is not None:
        init = {}
        for i, m in enumerate(initial.marginals):
            if isinstance(m, Deterministic):
                init[names[i]] = int(m.value)
            else:
                init[names[i]] = {"support": list(m.support), "probs": list(m.probs)}
        doc["initial"] = init
    if partition is not None:
        doc["partition"] = {
            "interest": [names[i] for i in partition.interest_idx],
            "observed": [names[i] for i in partition.observed_idx],
        }
    return doc
