"""Built-in benchmark networks with their standard partitions and defaults."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadParam, UnknownModel
from .model import (
    Deterministic,
    InitialDistribution,
    Reaction,
    SrnModel,
    StatePartition,
)


@dataclass(frozen=True)
class BuiltinModel:
    """A ready-to-run benchmark setup."""

    name: str
    model: SrnModel
    partition: StatePartition
    initial: InitialDistribution
    hidden_box: tuple       # per hidden dim (interest first)
    interest_box: tuple
    horizon: float


def _reaction(names, consumed, produced, rate):
    c = np.zeros(len(names), dtype=np.int64)
    p = np.zeros(len(names), dtype=np.int64)
    for sp, m in consumed.items():
        c[names.index(sp)] = m
    for sp, m in produced.items():
        p[names.index(sp)] = m
    return Reaction(c, p, rate)


def bistable_gene(mrna_max: int = 30) -> BuiltinModel:
    """Two mutually repressing genes; proteins observed, mRNA2 of interest.

    Each gene in its active state transcribes mRNA, mRNA is translated to
    protein, and each protein deactivates the opposite gene.
    """
    names = ["mRNA1", "mRNA2", "G1", "G1a", "G2", "G2a", "protein1", "protein2"]
    rx = []
    # degradation and basal production of mRNA
    for i in (1, 2):
        rx.append(_reaction(names, {f"mRNA{i}": 1}, {}, 0.1))
    for i in (1, 2):
        rx.append(_reaction(names, {}, {f"mRNA{i}": 1}, 0.05))
    # translation and protein degradation
    for i in (1, 2):
        rx.append(_reaction(names, {f"mRNA{i}": 1},
                            {f"mRNA{i}": 1, f"protein{i}": 1}, 5.0))
    for i in (1, 2):
        rx.append(_reaction(names, {f"protein{i}": 1}, {}, 0.2))
    # protein i deactivates the opposite gene j
    for i, j in ((1, 2), (2, 1)):
        rx.append(_reaction(names, {f"G{j}a": 1, f"protein{i}": 1},
                            {f"G{j}": 1, f"protein{i}": 1}, 0.1))
    # transcription from the active gene
    for i in (1, 2):
        rx.append(_reaction(names, {f"G{i}a": 1},
                            {f"G{i}a": 1, f"mRNA{i}": 1}, 1.0))
    # spontaneous deactivation and reactivation
    for i in (1, 2):
        rx.append(_reaction(names, {f"G{i}a": 1}, {f"G{i}": 1}, 0.03))
    for i in (1, 2):
        rx.append(_reaction(names, {f"G{i}": 1}, {f"G{i}a": 1}, 1e-6))

    model = SrnModel(tuple(names), tuple(rx))
    partition = StatePartition(
        interest_idx=(names.index("mRNA2"),),
        nuisance_idx=tuple(names.index(s) for s in
                           ("mRNA1", "G1", "G1a", "G2", "G2a")),
        observed_idx=(names.index("protein1"), names.index("protein2")),
    )
    start = {"G1a": 1, "G2a": 1}
    initial = InitialDistribution(
        tuple(Deterministic(start.get(s, 0)) for s in names)
    )
    hidden_box = ((0, mrna_max), (0, mrna_max), (0, 1), (0, 1), (0, 1), (0, 1))
    return BuiltinModel("bistable-gene", model, partition, initial,
                        hidden_box, ((0, mrna_max),), 4.5)


def linear_cascade(d: int = 5, box_max: int = 10) -> BuiltinModel:
    """Production chain S1 -> S2 -> ... -> Sd with unit degradation of every
    species; the last species is observed, the first is of interest."""
    if d < 2:
        raise BadParam("linear cascade needs d >= 2 (one hidden and one observed species)")
    names = [f"S{i}" for i in range(1, d + 1)]
    rx = [_reaction(names, {}, {"S1": 1}, 10.0)]
    for i in range(2, d + 1):
        rx.append(_reaction(names, {f"S{i-1}": 1}, {f"S{i}": 1}, 5.0))
    for i in range(1, d + 1):
        rx.append(_reaction(names, {f"S{i}": 1}, {}, 1.0))
    model = SrnModel(tuple(names), tuple(rx))
    partition = StatePartition(
        interest_idx=(0,),
        nuisance_idx=tuple(range(1, d - 1)),
        observed_idx=(d - 1,),
    )
    initial = InitialDistribution(tuple(Deterministic(0) for _ in names))
    hidden_box = tuple((0, box_max) for _ in range(d - 1))
    return BuiltinModel("linear-cascade", model, partition, initial,
                        hidden_box, ((0, box_max),), 5.0)


def builtin_model(name: str, **params) -> BuiltinModel:
    if name == "bistable-gene":
        return bistable_gene(**params)
    if name == "linear-cascade":
        return linear_cascade(**params)
    raise UnknownModel(f"no built-in model named {name!r}")
