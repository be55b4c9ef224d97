"""Keypoint and phenotype evaluation metrics.

Implements the full battery used to score coordinate predictors:

* object keypoint similarity (exponential, object-scale normalized),
* percentage of correct keypoints (scale-normalized distance threshold),
* percentage of measured phenotype (distance normalized by the shortest
  ground-truth phenotype related to each keypoint, threshold r, default 0.1),
* MAPE / mMAPE of phenotype measurements, Pearson correlation, and the
  ordinary-least-squares R² between ground-truth and predicted measurements.

All thresholds compare with strict ``<``. Undefined quantities (empty
denominators) are reported as NaN markers in arrays and ``None`` in report
dictionaries, never silently as 0.

Per-sample terms are computed over fixed-size chunks; ``PHENOKEY_THREADS``
caps the worker count and results are bit-identical at any setting because
chunk boundaries and the aggregation order never change.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, KeypointSet
from .errors import DegenerateFitError, DegenerateScaleError, UndefinedMetricError
from .morphometry import PhenotypeTable, default_table
from .schema import KEYPOINT_COUNT

PCK_SCALE_MODES = ("head", "torso", "bbox_diagonal")

# Scale endpoints (1-based): head = snout tip to operculum; torso, which fish
# lack in the human-pose sense, is read as the standard-length axis.
_SCALE_ENDPOINTS = {"head": (1, 2), "torso": (1, 10)}

DEFAULT_OKS_K = 0.025


@dataclass(frozen=True)
class EvalConfig:
    """Metric parameters; defaults follow the evaluation protocol."""

    pmp_threshold: float = 0.1
    pck_threshold: float = 0.1
    pck_scale_mode: str = "bbox_diagonal"
    oks_scale: float | None = None    # None: per-sample gt bounding-box diagonal
    oks_k: tuple = tuple([DEFAULT_OKS_K] * KEYPOINT_COUNT)

    def __post_init__(self):
        if self.pmp_threshold <= 0 or self.pck_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if self.pck_scale_mode not in PCK_SCALE_MODES:
            raise ValueError(f"pck_scale_mode must be one of {PCK_SCALE_MODES}")
        if self.oks_scale is not None and not self.oks_scale > 0:
            raise ValueError("oks_scale must be positive")
        k = tuple(float(v) for v in self.oks_k)
        if len(k) != KEYPOINT_COUNT or any(v <= 0 for v in k):
            raise ValueError(f"oks_k must hold {KEYPOINT_COUNT} positive values")
        object.__setattr__(self, "oks_k", k)

    def k_array(self) -> np.ndarray:
        return np.asarray(self.oks_k, dtype=np.float64)


# ---------------------------------------------------------------------------
# scalar kernels


def keypoint_similarity(d: float, s: float, k: float) -> float:
    """exp(-d² / (2 s² k²)): similarity of one predicted keypoint at deviation d."""
    if not s > 0:
        raise ValueError(f"scale s must be positive, got {s}")
    if not k > 0:
        raise ValueError(f"per-keypoint constant k must be positive, got {k}")
    if d < 0:
        raise ValueError(f"distance must be nonnegative, got {d}")
    return math.exp(-(d * d) / (2.0 * s * s * k * k))


def oks(pred: KeypointSet, gt: KeypointSet, cfg: EvalConfig | None = None) -> float:
    """Mean keypoint similarity over the ground-truth-annotated keypoints."""
    cfg = cfg or EvalConfig()
    vis = gt.visible
    if not vis.any():
        raise UndefinedMetricError(f"image {gt.image_id!r}: no visible ground-truth keypoints")
    s = cfg.oks_scale if cfg.oks_scale is not None else _bbox_diagonal(gt.xy[vis])
    if not s > 0:
        raise DegenerateScaleError(f"image {gt.image_id!r}: object scale is 0")
    k = cfg.k_array()
    total = 0.0
    for i in np.flatnonzero(vis):
        d = math.hypot(*(pred.xy[i] - gt.xy[i]))
        total += keypoint_similarity(d, s, k[i])
    return total / int(vis.sum())


def mape(gt_values, pred_values) -> float:
    """Mean absolute percentage error; ground-truth values must be positive."""
    gt_arr = np.asarray(gt_values, dtype=np.float64)
    pred_arr = np.asarray(pred_values, dtype=np.float64)
    if gt_arr.shape != pred_arr.shape or gt_arr.ndim != 1:
        raise ValueError(f"value lists must be 1-d and equal length, got {gt_arr.shape} vs {pred_arr.shape}")
    if gt_arr.size == 0:
        raise ValueError("cannot compute MAPE of empty lists")
    for i, g in enumerate(gt_arr):
        if g == 0:
            raise ZeroDivisionError(f"ground-truth value at index {i} is 0")
        if g < 0:
            raise ValueError(f"ground-truth value at index {i} is negative")
    return float(np.mean(np.abs(pred_arr - gt_arr) / gt_arr))


def mmape(keypoint: int, per_phenotype_mape: dict, table: PhenotypeTable | None = None) -> float:
    """Unweighted mean MAPE over all phenotypes whose endpoints include ``keypoint``."""
    table = table or default_table()
    values = []
    for pdef in table.related(keypoint):
        if pdef.abbrev not in per_phenotype_mape:
            raise KeyError(f"no MAPE entry for phenotype {pdef.abbrev}")
        values.append(per_phenotype_mape[pdef.abbrev])
    return float(np.mean(values))


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("inputs must be equal-length 1-d lists with at least 2 entries")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("correlation undefined for a constant input")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def ols_fit(gt, pred) -> tuple[float, float, float]:
    """Least-squares line pred ≈ slope·gt + intercept and its R².

    R² = 1 - SS_res / SS_tot. Two points interpolate exactly (R² = 1); with
    more points and zero prediction variance the fit explains nothing (R² = 0).
    """
    gt_arr = np.asarray(gt, dtype=np.float64)
    pred_arr = np.asarray(pred, dtype=np.float64)
    if gt_arr.shape != pred_arr.shape or gt_arr.ndim != 1 or gt_arr.size < 2:
        raise ValueError("inputs must be equal-length 1-d lists with at least 2 entries")
    dx = gt_arr - gt_arr.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        raise DegenerateFitError("ground-truth values are constant; fit undefined")
    slope = float(np.dot(dx, pred_arr)) / sxx
    intercept = float(pred_arr.mean() - slope * gt_arr.mean())
    resid = pred_arr - (slope * gt_arr + intercept)
    ss_res = float(np.dot(resid, resid))
    dy = pred_arr - pred_arr.mean()
    ss_tot = float(np.dot(dy, dy))
    if gt_arr.size == 2:
        r2 = 1.0
    elif ss_tot == 0.0:
        r2 = 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return slope, intercept, r2


# ---------------------------------------------------------------------------
# batched per-keypoint metrics

_CHUNK = 512


def _worker_count() -> int:
    raw = os.environ.get("PHENOKEY_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def _run_chunks(n: int, fn) -> None:
    """Apply fn(lo, hi) over fixed 512-sample chunks, optionally threaded.

    Chunk boundaries do not depend on the worker count and every chunk writes
    a disjoint row slice, so results are identical at any thread setting.
    """
    bounds = [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)]
    workers = _worker_count()
    if workers == 1 or len(bounds) <= 1:
        for lo, hi in bounds:
            fn(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda b: fn(*b), bounds))


def _bbox_diagonal(xy: np.ndarray) -> float:
    mins = xy.min(axis=0)
    maxs = xy.max(axis=0)
    return float(math.hypot(*(maxs - mins)))


def _stack(sets) -> tuple[np.ndarray, np.ndarray]:
    xy = np.stack([s.xy for s in sets]) if sets else np.zeros((0, KEYPOINT_COUNT, 2))
    v = np.stack([s.v for s in sets]) if sets else np.zeros((0, KEYPOINT_COUNT), dtype=np.int64)
    return xy, v


@dataclass(frozen=True)
class PerKeypointResult:
    """Per-keypoint score plus how many samples were counted or skipped.

    ``values[i]`` is NaN when keypoint i+1 had no evaluable samples.
    """

    values: np.ndarray        # (22,) float, NaN = undefined
    sample_counts: np.ndarray  # (22,) int, evaluated samples per keypoint
    skip_counts: np.ndarray    # (22,) int, annotated but unevaluable samples

    def mean(self) -> float | None:
        """Mean over defined keypoints (the aggregate 'All' figure)."""
        defined = ~np.isnan(self.values)
        if not defined.any():
            return None
        return float(self.values[defined].mean())


def _pck_scales(gt_xy, gt_v, mode, image_ids) -> np.ndarray:
    n = gt_xy.shape[0]
    h = np.empty(n, dtype=np.float64)
    if mode == "bbox_diagonal":
        for i in range(n):
            vis = gt_v[i] > 0
            if not vis.any():
                raise DegenerateScaleError(f"image {image_ids[i]!r}: no visible keypoints for scale")
            h[i] = _bbox_diagonal(gt_xy[i][vis])
    else:
        a, b = _SCALE_ENDPOINTS[mode]
        for i in range(n):
            if gt_v[i, a - 1] <= 0 or gt_v[i, b - 1] <= 0:
                raise DegenerateScaleError(
                    f"image {image_ids[i]!r}: scale endpoints K-{a}/K-{b} not visible"
                )
            h[i] = math.hypot(*(gt_xy[i, b - 1] - gt_xy[i, a - 1]))
    zero = np.flatnonzero(h == 0.0)
    if zero.size:
        raise DegenerateScaleError(f"image {image_ids[zero[0]]!r}: scale factor is 0")
    return h


def _paired_arrays(preds, gts):
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    gt_xy, gt_v = _stack(list(gts))
    pred_xy, _ = _stack(list(preds))
    image_ids = [g.image_id for g in gts]
    for p, g in zip(preds, gts):
        if p.image_id != g.image_id:
            raise ValueError(f"prediction/ground-truth id mismatch: {p.image_id!r} vs {g.image_id!r}")
    return pred_xy, gt_xy, gt_v, image_ids


def _deviations(pred_xy, gt_xy) -> np.ndarray:
    n = pred_xy.shape[0]
    d = np.empty((n, KEYPOINT_COUNT), dtype=np.float64)

    def block(lo, hi):
        diff = pred_xy[lo:hi] - gt_xy[lo:hi]
        d[lo:hi] = np.hypot(diff[..., 0], diff[..., 1])

    _run_chunks(n, block)
    return d


def pck(preds, gts, cfg: EvalConfig | None = None) -> PerKeypointResult:
    """Per-keypoint fraction of predictions within the scale-normalized threshold.

    The denominator counts annotated (v > 0) ground-truth keypoints; a sample
    is skipped for no keypoint here because a missing scale factor raises.
    """
    cfg = cfg or EvalConfig()
    pred_xy, gt_xy, gt_v, image_ids = _paired_arrays(preds, gts)
    n = gt_xy.shape[0]
    if n == 0:
        raise UndefinedMetricError("no samples to evaluate")
    d = _deviations(pred_xy, gt_xy)
    h = _pck_scales(gt_xy, gt_v, cfg.pck_scale_mode, image_ids)
    normalized = d / h[:, None]
    annotated = gt_v > 0
    correct = (normalized < cfg.pck_threshold) & annotated
    counts = annotated.sum(axis=0)
    values = np.full(KEYPOINT_COUNT, np.nan)
    nonzero = counts > 0
    values[nonzero] = correct.sum(axis=0)[nonzero] / counts[nonzero]
    return PerKeypointResult(values, counts.astype(np.int64), np.zeros(KEYPOINT_COUNT, dtype=np.int64))


def _phenotype_lengths(gt_xy, gt_v, table) -> np.ndarray:
    """(n_samples, n_phenotypes) ground-truth lengths; NaN where unmeasurable."""
    n = gt_xy.shape[0]
    lengths = np.empty((n, len(table)), dtype=np.float64)

    def block(lo, hi):
        for t, pdef in enumerate(table):
            a, b = pdef.endpoints
            seg = gt_xy[lo:hi, b - 1] - gt_xy[lo:hi, a - 1]
            dist = np.hypot(seg[:, 0], seg[:, 1])
            measurable = (gt_v[lo:hi, a - 1] > 0) & (gt_v[lo:hi, b - 1] > 0)
            lengths[lo:hi, t] = np.where(measurable, dist, np.nan)

    _run_chunks(n, block)
    return lengths


def shortest_phenotype_lengths(gt_xy, gt_v, table) -> np.ndarray:
    """(n_samples, 22) length of each keypoint's shortest measurable phenotype.

    +inf marks keypoints with no measurable related phenotype on a sample.
    """
    lengths = _phenotype_lengths(gt_xy, gt_v, table)
    filled = np.where(np.isnan(lengths), np.inf, lengths)
    out = np.empty((gt_xy.shape[0], KEYPOINT_COUNT), dtype=np.float64)
    for j in range(1, KEYPOINT_COUNT + 1):
        idx = [t for t, pdef in enumerate(table) if j in pdef.endpoints]
        out[:, j - 1] = filled[:, idx].min(axis=1)
    return out


def pmp(preds, gts, table: PhenotypeTable | None = None, cfg: EvalConfig | None = None) -> PerKeypointResult:
    """Per-keypoint fraction of predictions within r of the shortest related phenotype.

    A sample counts for keypoint j when the ground-truth keypoint is annotated
    and its shortest related ground-truth phenotype exists with positive
    length; other annotated samples are recorded as skips. Keypoints with no
    evaluable samples come back as NaN markers.
    """
    cfg = cfg or EvalConfig()
    table = table or default_table()
    pred_xy, gt_xy, gt_v, _ = _paired_arrays(preds, gts)
    n = gt_xy.shape[0]
    if n == 0:
        raise UndefinedMetricError("no samples to evaluate")
    d = _deviations(pred_xy, gt_xy)
    pheno = shortest_phenotype_lengths(gt_xy, gt_v, table)
    annotated = gt_v > 0
    evaluable = annotated & np.isfinite(pheno) & (pheno > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = d / pheno
    correct = evaluable & (ratio < cfg.pmp_threshold)
    counts = evaluable.sum(axis=0)
    skips = (annotated & ~evaluable).sum(axis=0)
    values = np.full(KEYPOINT_COUNT, np.nan)
    nonzero = counts > 0
    values[nonzero] = correct.sum(axis=0)[nonzero] / counts[nonzero]
    return PerKeypointResult(values, counts.astype(np.int64), skips.astype(np.int64))


def oks_per_image(preds, gts, cfg: EvalConfig | None = None) -> list[float | None]:
    """Per-image object keypoint similarity; None where undefined."""
    cfg = cfg or EvalConfig()
    pred_xy, gt_xy, gt_v, image_ids = _paired_arrays(preds, gts)
    n = gt_xy.shape[0]
    d = _deviations(pred_xy, gt_xy)
    k = cfg.k_array()
    out: list[float | None] = [None] * n

    def block(lo, hi):
        for i in range(lo, hi):
            vis = gt_v[i] > 0
            if not vis.any():
                continue
            s = cfg.oks_scale if cfg.oks_scale is not None else _bbox_diagonal(gt_xy[i][vis])
            if not s > 0:
                continue
            ks = np.exp(-(d[i, vis] ** 2) / (2.0 * s * s * k[vis] ** 2))
            out[i] = float(ks.sum() / vis.sum())

    _run_chunks(n, block)
    return out


def phenotype_value_pairs(gt: Dataset, pred: Dataset, abbrev: str, table: PhenotypeTable | None = None):
    """Paired (gt, pred) lengths of one phenotype over all measurable samples."""
    table = table or default_table()
    if abbrev not in table:
        raise KeyError(f"unknown phenotype {abbrev!r}")
    preds, gts = _pair_datasets(gt, pred)
    t = list(table.abbrevs()).index(abbrev)
    pred_xy, _ = _stack(list(preds))
    gt_xy, gt_v = _stack(list(gts))
    gt_len = _phenotype_lengths(gt_xy, gt_v, table)[:, t]
    pred_len = _phenotype_lengths(pred_xy, gt_v, table)[:, t]
    usable = np.isfinite(gt_len)
    return gt_len[usable], pred_len[usable]


# ---------------------------------------------------------------------------
# full report


@dataclass(frozen=True)
class PhenotypeStats:
    mape: float
    pearson: float | None
    r2: float | None
    slope: float | None
    intercept: float | None
    n_samples: int
    n_skipped: int


@dataclass(frozen=True)
class MetricReport:
    """Everything the evaluation protocol reports for one gt/pred pairing."""

    n_samples: int
    config: EvalConfig
    oks_image_ids: list = field(default_factory=list)
    oks_per_image: list = field(default_factory=list)
    oks_mean: float | None = None
    pck: PerKeypointResult | None = None
    pmp: PerKeypointResult | None = None
    phenotypes: dict = field(default_factory=dict)
    mmape_per_keypoint: np.ndarray | None = None


def _pair_datasets(gt: Dataset, pred: Dataset):
    gt_ids = [r.image_id for r in gt]
    pred_by_id = {r.image_id: r for r in pred}
    missing = [i for i in gt_ids if i not in pred_by_id]
    if missing:
        raise ValueError(f"predictions missing for image ids {missing[:5]!r}")
    gts = [r.keypoints for r in gt]
    preds = [pred_by_id[i].keypoints for i in gt_ids]
    return preds, gts


def _phenotype_stats(preds, gts, table) -> dict:
    pred_xy, _ = _stack(list(preds))
    gt_xy, gt_v = _stack(list(gts))
    gt_len = _phenotype_lengths(gt_xy, gt_v, table)
    pred_len = _phenotype_lengths(pred_xy, gt_v, table)  # gt visibility governs
    stats = {}
    for t, pdef in enumerate(table):
        usable = np.isfinite(gt_len[:, t]) & (gt_len[:, t] > 0)
        skipped = int(np.isfinite(gt_len[:, t]).sum() - usable.sum())
        n_usable = int(usable.sum())
        if n_usable == 0:
            stats[pdef.abbrev] = None
            continue
        g = gt_len[usable, t]
        p = pred_len[usable, t]
        m = mape(g, p)
        corr = r2 = slope = intercept = None
        if n_usable >= 2 and np.ptp(g) > 0:
            slope, intercept, r2 = ols_fit(g, p)
            if np.ptp(p) > 0:
                corr = pearson(g, p)
        stats[pdef.abbrev] = PhenotypeStats(m, corr, r2, slope, intercept, n_usable, skipped)
    return stats


def evaluate_datasets(
    gt: Dataset,
    pred: Dataset,
    cfg: EvalConfig | None = None,
    table: PhenotypeTable | None = None,
    metrics: tuple = ("oks", "pck", "pmp", "phenotypes"),
) -> MetricReport:
    """Score a prediction dataset against ground truth on the chosen metrics."""
    cfg = cfg or EvalConfig()
    table = table or default_table()
    preds, gts = _pair_datasets(gt, pred)
    n = len(gts)

    oks_vals: list = []
    oks_mean = None
    pck_res = pmp_res = None
    phen: dict = {}
    mmape_arr = None

    if "oks" in metrics:
        oks_vals = oks_per_image(preds, gts, cfg)
        defined = [v for v in oks_vals if v is not None]
        oks_mean = float(np.mean(defined)) if defined else None
    if "pck" in metrics:
        pck_res = pck(preds, gts, cfg)
    if "pmp" in metrics:
        pmp_res = pmp(preds, gts, table, cfg)
    if "phenotypes" in metrics:
        phen = _phenotype_stats(preds, gts, table)
        mapes = {a: s.mape for a, s in phen.items() if s is not None}
        mmape_arr = np.full(KEYPOINT_COUNT, np.nan)
        for j in range(1, KEYPOINT_COUNT + 1):
            try:
                mmape_arr[j - 1] = mmape(j, mapes, table)
            except KeyError:
                pass
    return MetricReport(
        n_samples=n,
        config=cfg,
        oks_image_ids=[g.image_id for g in gts],
        oks_per_image=oks_vals,
        oks_mean=oks_mean,
        pck=pck_res,
        pmp=pmp_res,
        phenotypes=phen,
        mmape_per_keypoint=mmape_arr,
    )


def _none_if_nan(x) -> float | None:
    x = float(x)
    return None if math.isnan(x) else x


def report_to_dict(report: MetricReport) -> dict:
    """JSON-ready form of a report; undefined entries become explicit nulls."""
    cfg = report.config
    out = {
        "schema_version": 1,
        "config": {
            "pmp_threshold": cfg.pmp_threshold,
            "pck_threshold": cfg.pck_threshold,
            "pck_scale_mode": cfg.pck_scale_mode,
            "oks_scale": cfg.oks_scale,
            "oks_k": list(cfg.oks_k),
        },
        "n_samples": report.n_samples,
    }
    if report.oks_per_image:
        out["oks"] = {
            "mean": report.oks_mean,
            "per_image": [
                {"image_id": i, "oks": v}
                for i, v in zip(report.oks_image_ids, report.oks_per_image)
            ],
        }
    for name, res in (("pck", report.pck), ("pmp", report.pmp)):
        if res is not None:
            out[name] = {
                "per_keypoint": {
                    f"K-{j}": _none_if_nan(res.values[j - 1]) for j in range(1, KEYPOINT_COUNT + 1)
                },
                "mean": res.mean(),
                "sample_counts": res.sample_counts.tolist(),
                "skip_counts": res.skip_counts.tolist(),
            }
    if report.phenotypes:
        out["phenotypes"] = {
            abbrev: (
                None
                if stats is None
                else {
                    "mape": stats.mape,
                    "pearson": stats.pearson,
                    "r2": stats.r2,
                    "slope": stats.slope,
                    "intercept": stats.intercept,
                    "n_samples": stats.n_samples,
                    "n_skipped": stats.n_skipped,
                }
            )
            for abbrev, stats in report.phenotypes.items()
        }
    if report.mmape_per_keypoint is not None:
        defined = report.mmape_per_keypoint[~np.isnan(report.mmape_per_keypoint)]
        out["mmape"] = {
            "per_keypoint": {
                f"K-{j}": _none_if_nan(report.mmape_per_keypoint[j - 1])
                for j in range(1, KEYPOINT_COUNT + 1)
            },
            "mean": float(defined.mean()) if defined.size else None,
        }
    return out
