"""Anatomical prior extraction and the box-constraint regularization loss.

Ground-truth keypoints are normalized by the fish body's bounding rectangle;
the per-keypoint extremes of those normalized coordinates over a training set
define where each keypoint may plausibly sit. Mapping the extremes back into
a target image's rectangle yields a per-keypoint box, and predictions outside
their box pay a hinge penalty (the ACR loss) proportional to the violation.

Hinges are evaluated in normalized units and scaled to pixels, so a training
ground truth scored against its own image's box incurs exactly zero loss:
its normalized coordinates are, by construction, within the fitted extremes.
The absolute-pixel box corners are exposed for inspection and reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, KeypointSet
from .errors import DegeneratePoseError
from .schema import KEYPOINT_COUNT


def visible_bbox(keypoints: KeypointSet) -> tuple[float, float, float, float]:
    """(x_min, y_min, x_max, y_max) over the visible keypoints."""
    vis = keypoints.visible
    if vis.sum() < 2:
        raise DegeneratePoseError(
            f"image {keypoints.image_id!r}: need at least 2 visible keypoints, got {int(vis.sum())}"
        )
    pts = keypoints.xy[vis]
    mins = pts.min(axis=0)
    maxs = pts.max(axis=0)
    return float(mins[0]), float(mins[1]), float(maxs[0]), float(maxs[1])


@dataclass(frozen=True)
class NormalizedKeypoints:
    """Body-normalized coordinates in [0,1]²; NaN rows mark invisible keypoints."""

    points: np.ndarray   # (22, 2) float64
    image_id: object
    bbox: tuple          # (x_min, y_min, x_max, y_max) pixels


def normalize(keypoints: KeypointSet) -> NormalizedKeypoints:
    """Scale keypoints into the unit square spanned by their bounding rectangle."""
    x_min, y_min, x_max, y_max = visible_bbox(keypoints)
    if x_max == x_min or y_max == y_min:
        axis = "x" if x_max == x_min else "y"
        raise DegeneratePoseError(
            f"image {keypoints.image_id!r}: zero {axis}-range across visible keypoints"
        )
    origin = np.array([x_min, y_min])
    extent = np.array([x_max - x_min, y_max - y_min])
    points = (keypoints.xy - origin) / extent
    points = np.where(keypoints.visible[:, None], points, np.nan)
    return NormalizedKeypoints(points=points, image_id=keypoints.image_id, bbox=(x_min, y_min, x_max, y_max))


@dataclass(frozen=True)
class AnatomicalPrior:
    """Per-keypoint extremes of normalized coordinates over a training set."""

    mins: np.ndarray   # (22, 2): x'_min, y'_min per keypoint
    maxs: np.ndarray   # (22, 2): x'_max, y'_max per keypoint
    training_set_size: int
    species: str = "other"

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != (KEYPOINT_COUNT, 2) or maxs.shape != (KEYPOINT_COUNT, 2):
            raise ValueError("prior extremes must have shape (22, 2)")
        if np.any(mins > maxs):
            raise ValueError("prior has min > max for some keypoint")
        if np.any(mins < 0) or np.any(maxs > 1):
            raise ValueError("prior extremes must lie in [0, 1]")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)


def fit_prior(train: Dataset, species: str = "other") -> AnatomicalPrior:
    """Extremes of normalized ground-truth coordinates over all training images."""
    if len(train) == 0:
        raise ValueError("cannot fit a prior on an empty training set")
    stacked = []
    for rec in train:
        try:
            stacked.append(normalize(rec.keypoints).points)
        except DegeneratePoseError as exc:
            raise DegeneratePoseError(f"record {rec.image_id!r} failed normalization: {exc}") from exc
    cube = np.stack(stacked)  # (n, 22, 2), NaN where invisible
    never_seen = np.isnan(cube).all(axis=0).any(axis=1)
    if never_seen.any():
        missing = [f"K-{i + 1}" for i in np.flatnonzero(never_seen)]
        raise ValueError(f"keypoints never visible in the training set: {missing}")
    with np.errstate(invalid="ignore"):
        mins = np.nanmin(cube, axis=0)
        maxs = np.nanmax(cube, axis=0)
    return AnatomicalPrior(mins=mins, maxs=maxs, training_set_size=len(train), species=species)


@dataclass(frozen=True)
class BoxConstraint:
    """Per-keypoint admissible boxes placed inside one target image's rectangle."""

    origin: np.ndarray   # (2,) bbox minimum corner, pixels
    extent: np.ndarray   # (2,) bbox width/height, pixels
    nmin: np.ndarray     # (22, 2) normalized lower extremes
    nmax: np.ndarray     # (22, 2) normalized upper extremes

    @property
    def k_min(self) -> np.ndarray:
        """(22, 2) absolute lower corners in pixels."""
        return self.origin + self.nmin * self.extent

    @property
    def k_max(self) -> np.ndarray:
        """(22, 2) absolute upper corners in pixels."""
        return self.origin + self.nmax * self.extent


def box_for_image(prior: AnatomicalPrior, bbox) -> BoxConstraint:
    """Place the prior's boxes inside ``bbox`` = (x_min, y_min, x_max, y_max)."""
    x_min, y_min, x_max, y_max = (float(v) for v in bbox)
    if not (x_max > x_min and y_max > y_min):
        raise ValueError(f"bbox must have positive extent, got {bbox}")
    return BoxConstraint(
        origin=np.array([x_min, y_min]),
        extent=np.array([x_max - x_min, y_max - y_min]),
        nmin=prior.mins,
        nmax=prior.maxs,
    )


def box_for_keypoints(prior: AnatomicalPrior, keypoints: KeypointSet) -> BoxConstraint:
    """Box constraint derived from a keypoint set's own bounding rectangle.

    This is how the constraint is used when no annotated rectangle exists:
    at evaluation time the box follows the predicted keypoints themselves.
    """
    return box_for_image(prior, visible_bbox(keypoints))


def acr_violations(xy: np.ndarray, box: BoxConstraint) -> np.ndarray:
    """Per-keypoint, per-axis hinge magnitudes in pixels, shape (22, 2)."""
    xy = np.asarray(xy, dtype=np.float64)
    if xy.shape != (KEYPOINT_COUNT, 2):
        raise ValueError(f"expected coordinates of shape (22, 2), got {xy.shape}")
    norm = (xy - box.origin) / box.extent
    low = np.maximum(0.0, box.nmin - norm)
    high = np.maximum(0.0, norm - box.nmax)
    return (low + high) * box.extent


def acr_loss(preds, box: BoxConstraint) -> float:
    """Total box-violation penalty in pixels, summed over keypoints and axes."""
    xy = preds.xy if isinstance(preds, KeypointSet) else preds
    return float(acr_violations(xy, box).sum())


def acr_gradient(preds, box: BoxConstraint) -> np.ndarray:
    """Per-coordinate hinge subgradient: -1 below the box, +1 above, 0 inside or on it."""
    xy = preds.xy if isinstance(preds, KeypointSet) else np.asarray(preds, dtype=np.float64)
    if xy.shape != (KEYPOINT_COUNT, 2):
        raise ValueError(f"expected coordinates of shape (22, 2), got {xy.shape}")
    norm = (xy - box.origin) / box.extent
    grad = np.zeros_like(norm)
    grad[norm < box.nmin] = -1.0
    grad[norm > box.nmax] = 1.0
    return grad


def prior_to_dict(prior: AnatomicalPrior) -> dict:
    """JSON-ready form: 22 x 4 extremes plus the training-set size."""
    extremes = []
    for i in range(KEYPOINT_COUNT):
        extremes.append(
            {
                "keypoint": i + 1,
                "x_min": float(prior.mins[i, 0]),
                "x_max": float(prior.maxs[i, 0]),
                "y_min": float(prior.mins[i, 1]),
                "y_max": float(prior.maxs[i, 1]),
            }
        )
    return {
        "schema_version": 1,
        "species": prior.species,
        "training_set_size": prior.training_set_size,
        "extremes": extremes,
    }


def prior_from_dict(doc: dict) -> AnatomicalPrior:
    entries = doc["extremes"]
    if len(entries) != KEYPOINT_COUNT:
        raise ValueError(f"prior file must carry {KEYPOINT_COUNT} extreme entries, got {len(entries)}")
    mins = np.zeros((KEYPOINT_COUNT, 2))
    maxs = np.zeros((KEYPOINT_COUNT, 2))
    for entry in entries:
        i = int(entry["keypoint"]) - 1
        mins[i] = (entry["x_min"], entry["y_min"])
        maxs[i] = (entry["x_max"], entry["y_max"])
    return AnatomicalPrior(
        mins=mins,
        maxs=maxs,
        training_set_size=int(doc["training_set_size"]),
        species=doc.get("species", "other"),
    )
