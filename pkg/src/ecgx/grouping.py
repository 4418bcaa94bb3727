"""Feature-grouping strategies for multi-output models.

Four kinds of schemes: seeded random pairs, the fixed semantic pairs, the
fixed semantic clusters, and seeded partitions of a lead-specific feature's
12 per-lead instances. The semantic tables are deliberately hard-coded
constants rather than configuration; ``GroupingScheme.custom`` is the
escape hatch for anything else.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidGroupSize, OddFeatureCount
from .io import STANDARD_LEADS
from .synth import lead_feature

RANDOM_PAIRS = "RANDOM_PAIRS"
SEMANTIC_PAIRS = "SEMANTIC_PAIRS"
SEMANTIC_CLUSTERS = "SEMANTIC_CLUSTERS"
LEAD_INSTANCE_GROUPS = "LEAD_INSTANCE_GROUPS"
CUSTOM = "CUSTOM"

# The 16 global features, in reported-result order.
GLOBAL_FEATURES = (
    "T_Off", "QRS_Off", "HR_Ventr", "QRS_On", "RR_Mean",
    "QT_IntFramingham", "QT_IntFridericia", "QT_Int", "QT_IntBazett",
    "T_On", "QT_IntCorr", "P_Off", "QRS_Dur", "P_On", "PR_Int",
    "P_AxisFront",
)

_SEMANTIC_PAIRS = (
    ("QT_IntFramingham", "QT_IntBazett"),
    ("QT_Int", "QT_IntCorr"),
    ("QRS_On", "QRS_Off"),
    ("P_On", "P_Off"),
    ("T_On", "T_Off"),
    ("RR_Mean", "HR_Ventr"),
    ("QRS_Dur", "PR_Int"),
    ("P_AxisFront", "QT_IntFridericia"),
)

_SEMANTIC_CLUSTERS = (
    ("QT Interval-Related",
     ("QT_Int", "QT_IntCorr", "QT_IntBazett", "QT_IntFramingham",
      "QT_IntFridericia")),
    ("QRS Complex Timing", ("QRS_On", "QRS_Off", "QRS_Dur")),
    ("P Wave Timing", ("P_On", "P_Off", "P_AxisFront")),
    ("T Wave Timing", ("T_On", "T_Off")),
    ("Heart Rate & Interval", ("RR_Mean", "HR_Ventr", "PR_Int")),
)


@dataclass(frozen=True)
class GroupingScheme:
    name: str
    kind: str
    groups: tuple[tuple[str, ...], ...]
    group_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "groups",
                           tuple(tuple(g) for g in self.groups))
        seen: set[str] = set()
        for group in self.groups:
            for feat in group:
                if feat in seen:
                    raise ValueError(f"{self.name}: feature {feat!r} "
                                     f"appears in two groups")
                seen.add(feat)
        if self.kind in (RANDOM_PAIRS, SEMANTIC_PAIRS):
            for group in self.groups:
                if len(group) != 2:
                    raise ValueError(f"{self.name}: pair scheme has a group "
                                     f"of size {len(group)}")
        if self.group_names is not None and len(self.group_names) != len(self.groups):
            raise ValueError(f"{self.name}: {len(self.group_names)} names for "
                             f"{len(self.groups)} groups")

    @property
    def universe(self) -> tuple[str, ...]:
        return tuple(feat for group in self.groups for feat in group)

    def group(self, key: int | str) -> tuple[str, ...]:
        """Group by 1-based index, or by name for named schemes."""
        if isinstance(key, str):
            if self.group_names is None:
                raise KeyError(f"{self.name} has unnamed groups")
            return self.groups[self.group_names.index(key)]
        return self.groups[key - 1]

    def restrict(self, available: Iterable[str]) -> "GroupingScheme":
        """Keep only the groups whose every member is available."""
        avail = set(available)
        kept, kept_names = [], []
        for i, group in enumerate(self.groups):
            if all(feat in avail for feat in group):
                kept.append(group)
                if self.group_names is not None:
                    kept_names.append(self.group_names[i])
        return GroupingScheme(f"{self.name}_restricted", self.kind, tuple(kept),
                              tuple(kept_names) if self.group_names else None)

    @staticmethod
    def custom(name: str, groups: Sequence[Sequence[str]]) -> "GroupingScheme":
        return GroupingScheme(name, CUSTOM, tuple(tuple(g) for g in groups))

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind,
             "groups": [list(g) for g in self.groups]}
        if self.group_names is not None:
            d["group_names"] = list(self.group_names)
        return d

    @staticmethod
    def from_dict(d: dict) -> "GroupingScheme":
        names = d.get("group_names")
        return GroupingScheme(d["name"], d["kind"],
                              tuple(tuple(g) for g in d["groups"]),
                              tuple(names) if names else None)


def save_scheme(scheme: GroupingScheme, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scheme.to_dict(), indent=2) + "\n")


def load_scheme(path: str | Path) -> GroupingScheme:
    return GroupingScheme.from_dict(json.loads(Path(path).read_text()))


def random_pairs(features: Sequence[str], seed: int) -> GroupingScheme:
    """Seeded uniform shuffle, then consecutive pairing."""
    features = list(features)
    if len(features) % 2 != 0:
        raise OddFeatureCount(f"cannot pair {len(features)} features")
    rng = np.random.default_rng(seed)
    shuffled = [features[i] for i in rng.permutation(len(features))]
    groups = tuple((shuffled[i], shuffled[i + 1])
                   for i in range(0, len(shuffled), 2))
    return GroupingScheme(f"random_pairs_seed{seed}", RANDOM_PAIRS, groups)


def semantic_pairs() -> GroupingScheme:
    """The eight fixed semantically coherent pairs of global features."""
    return GroupingScheme("semantic_pairs", SEMANTIC_PAIRS, _SEMANTIC_PAIRS)


def semantic_clusters() -> GroupingScheme:
    """The five fixed physiological clusters covering the 16 global features."""
    names = tuple(name for name, _ in _SEMANTIC_CLUSTERS)
    groups = tuple(group for _, group in _SEMANTIC_CLUSTERS)
    return GroupingScheme("semantic_clusters", SEMANTIC_CLUSTERS, groups,
                          group_names=names)


def lead_instance_groups(feature: str, group_size: int, seed: int) -> GroupingScheme:
    """Partition a feature's 12 per-lead instances into equal-size groups."""
    if group_size not in (2, 3, 4, 6, 12):
        raise InvalidGroupSize(f"group size {group_size} does not divide 12 "
                               f"(use 2, 3, 4, 6 or 12)")
    instances = [lead_feature(feature, lead) for lead in STANDARD_LEADS]
    rng = np.random.default_rng(seed)
    shuffled = [instances[i] for i in rng.permutation(len(instances))]
    groups = tuple(tuple(shuffled[i:i + group_size])
                   for i in range(0, len(shuffled), group_size))
    return GroupingScheme(f"{feature}_by{group_size}_seed{seed}",
                          LEAD_INSTANCE_GROUPS, groups)
