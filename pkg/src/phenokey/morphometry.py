"""Morphological phenotypes: 23 named body measurements over keypoint pairs.

Each phenotype is the Euclidean distance between two of the 22 keypoints,
e.g. eye diameter ED between the anterior (K-11) and posterior (K-12) ends
of the eye. The table below covers every keypoint at least once.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .dataset import KeypointSet
from .errors import (
    DegenerateMeasurementWarning,
    MissingKeypointError,
    NoMeasurablePhenotypeError,
)
from .schema import KEYPOINT_COUNT


@dataclass(frozen=True)
class PhenotypeDef:
    """One phenotype: abbreviation, full name, and its two keypoint endpoints (1-based)."""

    abbrev: str
    name: str
    endpoints: tuple[int, int]

    def __post_init__(self):
        a, b = self.endpoints
        if a == b:
            raise ValueError(f"{self.abbrev}: endpoints must be distinct, got ({a}, {b})")
        for e in (a, b):
            if not 1 <= e <= KEYPOINT_COUNT:
                raise ValueError(f"{self.abbrev}: endpoint {e} outside 1..{KEYPOINT_COUNT}")


_DEFS = (
    ("TL", "total length", (1, 9)),
    ("SL", "standard length", (1, 10)),
    ("HL", "head length", (1, 2)),
    ("SnL", "snout length", (1, 11)),
    ("ED", "eye diameter", (11, 12)),
    ("PoL", "postorbital length", (12, 2)),
    ("BD", "body depth", (5, 6)),
    ("HD", "head depth", (3, 4)),
    ("PeAD", "pelvic-anal fin origin distance", (15, 17)),
    ("CPD", "caudal peduncle depth", (7, 8)),
    ("CPL", "caudal peduncle length", (18, 10)),
    ("DFL", "dorsal fin length", (20, 21)),
    ("DFH", "dorsal fin height", (20, 22)),
    ("PcL", "pectoral fin length", (13, 14)),
    ("PeL", "pelvic fin length", (15, 16)),
    ("AFL", "anal fin length", (17, 18)),
    ("AFH", "anal fin height", (17, 19)),
    ("TFL", "tail fin length", (10, 9)),
    ("PrDL", "predorsal length", (1, 20)),
    ("PoDL", "postdorsal length", (20, 10)),
    ("PcDD", "pectoral-dorsal fin origin distance", (13, 20)),
    ("PcPeD", "pectoral-pelvic fin origin distance", (13, 15)),
    ("PeDD", "pelvic-dorsal fin origin distance", (15, 20)),
)

PHENOTYPE_COUNT = 23


class PhenotypeTable:
    """Ordered collection of phenotype definitions with index lookups."""

    def __init__(self, defs):
        defs = tuple(defs)
        abbrevs = [d.abbrev for d in defs]
        if len(set(abbrevs)) != len(abbrevs):
            raise ValueError("phenotype abbreviations must be unique")
        covered = {e for d in defs for e in d.endpoints}
        missing = set(range(1, KEYPOINT_COUNT + 1)) - covered
        if missing:
            raise ValueError(f"keypoints not covered by any phenotype: {sorted(missing)}")
        self.defs = defs
        self._by_abbrev = {d.abbrev: d for d in defs}
        # keypoint index -> defs containing it, preserving table order
        self._by_keypoint = {
            i: tuple(d for d in defs if i in d.endpoints) for i in range(1, KEYPOINT_COUNT + 1)
        }

    def __len__(self):
        return len(self.defs)

    def __iter__(self):
        return iter(self.defs)

    def __getitem__(self, abbrev: str) -> PhenotypeDef:
        return self._by_abbrev[abbrev]

    def __contains__(self, abbrev: str) -> bool:
        return abbrev in self._by_abbrev

    def abbrevs(self) -> tuple[str, ...]:
        return tuple(d.abbrev for d in self.defs)

    def related(self, keypoint: int) -> tuple[PhenotypeDef, ...]:
        """All phenotypes whose endpoint pair contains the 1-based ``keypoint``."""
        if keypoint not in self._by_keypoint:
            raise KeyError(f"keypoint index must be in 1..{KEYPOINT_COUNT}, got {keypoint}")
        return self._by_keypoint[keypoint]


def default_table() -> PhenotypeTable:
    """The standard 23-phenotype table."""
    return PhenotypeTable(PhenotypeDef(a, n, e) for a, n, e in _DEFS)


@dataclass(frozen=True)
class PhenotypeMeasurement:
    abbrev: str
    value: float    # pixels, >= 0
    image_id: object


@dataclass(frozen=True)
class SkippedPhenotype:
    """A phenotype that could not be measured, with the blocking endpoint."""

    abbrev: str
    missing_keypoint: int
    image_id: object


def measure(keypoints: KeypointSet, pdef: PhenotypeDef) -> PhenotypeMeasurement:
    """Euclidean distance between the phenotype's two endpoints.

    Both endpoints must be annotated (v > 0). Coincident endpoints yield a
    0.0 measurement and a :class:`DegenerateMeasurementWarning`.
    """
    a, b = pdef.endpoints
    for e in (a, b):
        if keypoints.v[e - 1] <= 0:
            raise MissingKeypointError(
                f"{pdef.abbrev}: keypoint K-{e} is not visible on image {keypoints.image_id!r}"
            )
    ax, ay = keypoints.xy[a - 1]
    bx, by = keypoints.xy[b - 1]
    value = math.hypot(bx - ax, by - ay)
    if value == 0.0:
        warnings.warn(
            f"{pdef.abbrev} on image {keypoints.image_id!r}: coincident endpoints, zero length",
            DegenerateMeasurementWarning,
            stacklevel=2,
        )
    return PhenotypeMeasurement(pdef.abbrev, value, keypoints.image_id)


def measure_all(
    keypoints: KeypointSet, table: PhenotypeTable
) -> tuple[list[PhenotypeMeasurement], list[SkippedPhenotype]]:
    """Measure every phenotype with both endpoints visible; report the rest as skips."""
    measured = []
    skipped = []
    for pdef in table:
        a, b = pdef.endpoints
        hidden = next((e for e in (a, b) if keypoints.v[e - 1] <= 0), None)
        if hidden is not None:
            skipped.append(SkippedPhenotype(pdef.abbrev, hidden, keypoints.image_id))
            continue
        measured.append(measure(keypoints, pdef))
    return measured, skipped


def shortest_related_phenotype(
    keypoint: int, ground_truth: KeypointSet, table: PhenotypeTable
) -> PhenotypeMeasurement:
    """The measurable phenotype containing ``keypoint`` with minimum ground-truth length.

    Ties resolve to the earlier table entry. Raises when no related phenotype
    is measurable on this sample.
    """
    best = None
    for pdef in table.related(keypoint):
        a, b = pdef.endpoints
        if ground_truth.v[a - 1] <= 0 or ground_truth.v[b - 1] <= 0:
            continue
        m = measure(ground_truth, pdef)
        if best is None or m.value < best.value:
            best = m
    if best is None:
        raise NoMeasurablePhenotypeError(
            f"keypoint K-{keypoint}: no measurable related phenotype on image {ground_truth.image_id!r}"
        )
    return best
