"""Synthetic fish populations and controlled prediction perturbations.

Populations are drawn from species templates: a mean normalized layout of the
22 keypoints, per-keypoint truncated-normal jitter (rejection outside 3
standard deviations, so template bounds hold exactly), and a random body size.
Perturbations displace ground truth either uniformly in pixels or with noise
proportional to each keypoint's shortest related phenotype, the quantity the
phenotype-normalized metric is sensitive to.

Each fish derives its own random stream from (seed, fish index), so results
never depend on generation order or scheduling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, FishImageRecord, KeypointSet
from .metrics import shortest_phenotype_lengths
from .morphometry import PhenotypeTable, default_table
from .schema import KEYPOINT_COUNT

PERTURBATION_MODES = ("uniform_px", "proportional_to_shortest_phenotype")


@dataclass(frozen=True)
class SpeciesTemplate:
    """Generative description of one synthetic fish archetype."""

    name: str
    mean_layout: np.ndarray        # (22, 2) normalized coordinates
    spread: np.ndarray             # (22,) per-keypoint standard deviation, normalized units
    body_size_range: tuple         # (min, max) body length in pixels
    aspect: float = 0.5            # body height / body length

    def __post_init__(self):
        object.__setattr__(self, "mean_layout", np.asarray(self.mean_layout, dtype=np.float64))
        object.__setattr__(self, "spread", np.asarray(self.spread, dtype=np.float64))

    def validate(self) -> None:
        if self.mean_layout.shape != (KEYPOINT_COUNT, 2):
            raise ValueError(f"mean_layout must be (22, 2), got {self.mean_layout.shape}")
        if self.spread.shape != (KEYPOINT_COUNT,):
            raise ValueError(f"spread must be (22,), got {self.spread.shape}")
        if np.any(self.spread < 0):
            raise ValueError("spread must be nonnegative")
        lo = self.mean_layout - 3.0 * self.spread[:, None]
        hi = self.mean_layout + 3.0 * self.spread[:, None]
        if np.any(lo < 0) or np.any(hi > 1):
            raise ValueError("mean_layout +/- 3*spread must stay within [0, 1] on both axes")
        s_min, s_max = self.body_size_range
        if not (0 < s_min <= s_max):
            raise ValueError(f"body_size_range must satisfy 0 < min <= max, got {self.body_size_range}")
        if not (0 < self.aspect <= 2):
            raise ValueError(f"aspect must be in (0, 2], got {self.aspect}")


def _auto_spread(layout: np.ndarray, base: float) -> np.ndarray:
    """Per-keypoint spread capped so mean +/- 3 sigma stays inside the unit square."""
    margin = np.minimum(layout, 1.0 - layout).min(axis=1)
    return np.minimum(base, margin / 3.0 * 0.9)


_DEEP_BODIED_LAYOUT = np.array([
    (0.02, 0.48),   # K-1  snout tip
    (0.26, 0.52),   # K-2  posterior end of operculum
    (0.17, 0.22),   # K-3  top end of head
    (0.20, 0.75),   # K-4  isthmus
    (0.42, 0.05),   # K-5  dorsal apex
    (0.44, 0.95),   # K-6  bottom end of ventral margin
    (0.82, 0.40),   # K-7  top end of caudal peduncle
    (0.81, 0.60),   # K-8  bottom end of caudal peduncle
    (0.98, 0.50),   # K-9  posterior end of tail fin
    (0.86, 0.50),   # K-10 posterior end of caudal vertebrae
    (0.07, 0.35),   # K-11 anterior end of eye
    (0.12, 0.35),   # K-12 posterior end of eye
    (0.28, 0.62),   # K-13 anterior end of pectoral fin
    (0.40, 0.66),   # K-14 posterior end of pectoral fin
    (0.44, 0.88),   # K-15 anterior end of pelvic fin
    (0.54, 0.92),   # K-16 posterior end of pelvic fin
    (0.66, 0.85),   # K-17 anterior end of anal fin
    (0.76, 0.78),   # K-18 posterior end of anal fin
    (0.72, 0.97),   # K-19 outer margin of anal fin
    (0.45, 0.08),   # K-20 anterior end of dorsal fin
    (0.68, 0.18),   # K-21 posterior end of dorsal fin
    (0.52, 0.02),   # K-22 outer margin of dorsal fin
])

_ELONGATE_LAYOUT = np.array([
    (0.02, 0.50),   # K-1
    (0.22, 0.52),   # K-2
    (0.15, 0.28),   # K-3
    (0.17, 0.72),   # K-4
    (0.40, 0.10),   # K-5
    (0.42, 0.90),   # K-6
    (0.84, 0.40),   # K-7
    (0.83, 0.60),   # K-8
    (0.98, 0.52),   # K-9
    (0.88, 0.50),   # K-10
    (0.06, 0.40),   # K-11
    (0.10, 0.40),   # K-12
    (0.24, 0.60),   # K-13
    (0.34, 0.64),   # K-14
    (0.42, 0.82),   # K-15
    (0.50, 0.86),   # K-16
    (0.62, 0.82),   # K-17
    (0.74, 0.76),   # K-18
    (0.68, 0.96),   # K-19
    (0.38, 0.12),   # K-20
    (0.58, 0.16),   # K-21
    (0.46, 0.04),   # K-22
])

TEMPLATES = {
    "deep_bodied": SpeciesTemplate(
        name="deep_bodied",
        mean_layout=_DEEP_BODIED_LAYOUT,
        spread=_auto_spread(_DEEP_BODIED_LAYOUT, 0.012),
        body_size_range=(500.0, 900.0),
        aspect=0.52,
    ),
    "elongate": SpeciesTemplate(
        name="elongate",
        mean_layout=_ELONGATE_LAYOUT,
        spread=_auto_spread(_ELONGATE_LAYOUT, 0.012),
        body_size_range=(700.0, 1400.0),
        aspect=0.30,
    ),
}


def template_from_dict(doc: dict) -> SpeciesTemplate:
    tpl = SpeciesTemplate(
        name=str(doc.get("name", "custom")),
        mean_layout=np.asarray(doc["mean_layout"], dtype=np.float64),
        spread=np.asarray(doc["spread"], dtype=np.float64),
        body_size_range=tuple(doc["body_size_range"]),
        aspect=float(doc.get("aspect", 0.5)),
    )
    tpl.validate()
    return tpl


def template_to_dict(template: SpeciesTemplate) -> dict:
    return {
        "name": template.name,
        "mean_layout": template.mean_layout.tolist(),
        "spread": template.spread.tolist(),
        "body_size_range": list(template.body_size_range),
        "aspect": template.aspect,
    }


def load_template(name_or_path: str) -> SpeciesTemplate:
    """Resolve a built-in template name or read one from a JSON file."""
    if name_or_path in TEMPLATES:
        return TEMPLATES[name_or_path]
    with open(name_or_path, encoding="utf-8") as fh:
        return template_from_dict(json.load(fh))


def _truncated_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals with rejection outside +/- 3."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 3.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 3.0
    return out


def generate_population(
    template: SpeciesTemplate,
    n: int,
    seed: int,
    species: str = "other",
    role: str = "train",
) -> Dataset:
    """Draw ``n`` synthetic fish; deterministic per (seed, fish index)."""
    if n < 1:
        raise ValueError(f"population size must be >= 1, got {n}")
    template.validate()
    s_min, s_max = template.body_size_range
    records = []
    for idx in range(n):
        rng = np.random.default_rng([int(seed), idx])
        size = float(rng.uniform(s_min, s_max))
        off_x = float(rng.uniform(0.15, 0.50)) * size
        off_y = float(rng.uniform(0.15, 0.50)) * size * template.aspect
        jitter = _truncated_normal(rng, (KEYPOINT_COUNT, 2)) * template.spread[:, None]
        pos = template.mean_layout + jitter
        xy = np.empty((KEYPOINT_COUNT, 2))
        xy[:, 0] = off_x + pos[:, 0] * size
        xy[:, 1] = off_y + pos[:, 1] * size * template.aspect
        width = float(math.ceil(2 * off_x + size))
        height = float(math.ceil(2 * off_y + size * template.aspect))
        kp = KeypointSet(
            xy=xy,
            v=np.full(KEYPOINT_COUNT, 2, dtype=np.int64),
            image_id=idx + 1,
            species=species,
        )
        records.append(FishImageRecord(image_id=idx + 1, width=width, height=height, keypoints=kp))
    return Dataset(records=tuple(records), role=role)


@dataclass(frozen=True)
class PerturbationModel:
    """How to displace ground truth into synthetic predictions."""

    mode: str
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        if self.mode not in PERTURBATION_MODES:
            raise ValueError(f"mode must be one of {PERTURBATION_MODES}, got {self.mode!r}")
        if self.magnitude < 0:
            raise ValueError(f"magnitude must be nonnegative, got {self.magnitude}")


def perturb(gt: Dataset, model: PerturbationModel, table: PhenotypeTable | None = None) -> Dataset:
    """Displaced copy of ``gt`` acting as a prediction set.

    uniform_px draws per-axis uniform noise in [-magnitude, magnitude].
    proportional_to_shortest_phenotype draws truncated-normal noise with
    per-keypoint sigma = magnitude * shortest related ground-truth phenotype
    (keypoints with no measurable related phenotype stay unperturbed).

    Displaced points are kept on the canvas: the canvas grows to cover
    overshoot on the high side and coordinates clamp at zero on the low side
    (with the margins generated populations carry, the clamp never engages).
    """
    table = table or default_table()
    records = []
    for idx, rec in enumerate(gt):
        rng = np.random.default_rng([int(model.seed), idx, 7919])
        kp = rec.keypoints
        if model.mode == "uniform_px":
            noise = rng.uniform(-model.magnitude, model.magnitude, size=(KEYPOINT_COUNT, 2))
        else:
            pheno = shortest_phenotype_lengths(kp.xy[None, :, :], kp.v[None, :], table)[0]
            sigma = np.where(np.isfinite(pheno), model.magnitude * pheno, 0.0)
            noise = _truncated_normal(rng, (KEYPOINT_COUNT, 2)) * sigma[:, None]
        xy = np.maximum(kp.xy + noise, 0.0)
        width = max(rec.width, float(math.ceil(xy[:, 0].max())))
        height = max(rec.height, float(math.ceil(xy[:, 1].max())))
        new_kp = KeypointSet(xy=xy, v=kp.v.copy(), image_id=kp.image_id, species=kp.species)
        records.append(FishImageRecord(image_id=rec.image_id, width=width, height=height, keypoints=new_kp))
    return Dataset(records=tuple(records), role=gt.role)
