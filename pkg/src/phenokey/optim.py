"""Desk-scale optimization testbed for the combined MSE + box-constraint loss.

The predictor is a plain affine map from per-image feature vectors to the 44
keypoint coordinates, trained by full-batch gradient descent. The two loss
terms are balanced by gradient-norm equalization: each task's weight moves
toward the point where its weighted gradient norm (measured on the shared
weight matrix) matches the mean norm scaled by the task's relative inverse
training rate raised to ``alpha``; weights are clamped positive and
renormalized to sum to 2 after every step.

Everything is deterministic: no randomness inside the loop, fixed evaluation
order, and analytic gradients that the finite-difference checker verifies.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .anatomy import AnatomicalPrior, BoxConstraint, acr_loss, fit_prior
from .dataset import Dataset, FishImageRecord, KeypointSet
from .errors import DivergenceError, GradNormFallbackWarning
from .schema import KEYPOINT_COUNT
from .synth import generate_population, load_template

N_COORDS = 2 * KEYPOINT_COUNT  # 44


@dataclass
class ToyPredictor:
    """Affine coordinate predictor: coords = weights @ features + bias."""

    weights: np.ndarray   # (44, F)
    bias: np.ndarray      # (44,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != N_COORDS:
            raise ValueError(f"weights must be (44, F), got {self.weights.shape}")
        if self.bias.shape != (N_COORDS,):
            raise ValueError(f"bias must be (44,), got {self.bias.shape}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("parameters must be finite")

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, feature_dim: int) -> "ToyPredictor":
        return cls(np.zeros((N_COORDS, feature_dim)), np.zeros(N_COORDS))

    @classmethod
    def mean_baseline(cls, targets: np.ndarray, feature_dim: int) -> "ToyPredictor":
        """Predict the mean target coordinates regardless of features."""
        return cls(np.zeros((N_COORDS, feature_dim)), np.asarray(targets, dtype=np.float64).mean(axis=0))

    def predict(self, features: np.ndarray) -> np.ndarray:
        """(N, F) features -> (N, 44) coordinates."""
        return features @ self.weights.T + self.bias

    def copy(self) -> "ToyPredictor":
        return ToyPredictor(self.weights.copy(), self.bias.copy())


@dataclass(frozen=True)
class LossWeights:
    """Task weights for the two-term objective plus balancing state."""

    w_mse: float = 1.0
    w_acr: float = 1.0
    alpha: float = 1.5
    initial_losses: tuple | None = None   # (L_mse at step 0, L_acr at step 0)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    lr: float = 2.0
    # harmonic step decay, lr_t = lr / (1 + lr_decay * t): the hinge term is
    # nonsmooth, and subgradient descent needs diminishing steps to settle
    # onto a kink instead of hopping around it. 0 keeps the step constant.
    lr_decay: float = 0.0
    lr_weights: float = 0.025
    alpha: float = 1.5
    use_acr: bool = True
    # classical momentum on the parameter updates; 0 = plain gradient descent
    momentum: float = 0.0
    # starting task weights; with lr_weights = 0 they stay fixed
    init_w_mse: float = 1.0
    init_w_acr: float = 1.0
    divergence_limit: float = 1e12
    # A (sample, keypoint) pair counts as violating when a hinge exceeds this
    # many pixels. Source coordinates live on an integer pixel grid, so
    # sub-half-pixel excursions are below annotation resolution; keypoints
    # that define an image's bounding rectangle sit exactly on a box edge and
    # would otherwise flicker in and out of the count at float precision.
    violation_tolerance_px: float = 0.5


@dataclass(frozen=True)
class TraceRow:
    step: int
    l_mse: float
    l_acr: float
    w_mse: float
    w_acr: float
    grad_norm_mse: float
    grad_norm_acr: float
    violation_count: int


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def violation_counts(self) -> list[int]:
        return [r.violation_count for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "L_mse", "L_acr", "w_mse", "w_acr",
                 "grad_norm_mse", "grad_norm_acr", "violation_count"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.step, repr(r.l_mse), repr(r.l_acr), repr(r.w_mse), repr(r.w_acr),
                     repr(r.grad_norm_mse), repr(r.grad_norm_acr), r.violation_count]
                )


class BoxBatch:
    """Per-sample box constraints sharing one prior, vectorized over the batch."""

    def __init__(self, origins, extents, nmin, nmax):
        self.origins = np.asarray(origins, dtype=np.float64)   # (N, 2)
        self.extents = np.asarray(extents, dtype=np.float64)   # (N, 2)
        self.nmin = np.asarray(nmin, dtype=np.float64)         # (22, 2)
        self.nmax = np.asarray(nmax, dtype=np.float64)
        if np.any(self.extents <= 0):
            raise ValueError("every box frame must have positive extent")

    def __len__(self):
        return self.origins.shape[0]

    @classmethod
    def from_targets(cls, targets: np.ndarray, prior: AnatomicalPrior) -> "BoxBatch":
        """Frames from each target's own bounding rectangle (training-time use)."""
        pts = targets.reshape(-1, KEYPOINT_COUNT, 2)
        mins = pts.min(axis=1)
        maxs = pts.max(axis=1)
        return cls(mins, maxs - mins, prior.mins, prior.maxs)

    def box(self, i: int) -> BoxConstraint:
        return BoxConstraint(self.origins[i], self.extents[i], self.nmin, self.nmax)

    def violations(self, coords: np.ndarray) -> np.ndarray:
        """(N, 22, 2) hinge magnitudes in pixels for coords of shape (N, 44)."""
        pts = coords.reshape(-1, KEYPOINT_COUNT, 2)
        norm = (pts - self.origins[:, None, :]) / self.extents[:, None, :]
        low = np.maximum(0.0, self.nmin[None] - norm)
        high = np.maximum(0.0, norm - self.nmax[None])
        return (low + high) * self.extents[:, None, :]

    def signs(self, coords: np.ndarray) -> np.ndarray:
        """(N, 22, 2) hinge subgradients in {-1, 0, +1}."""
        pts = coords.reshape(-1, KEYPOINT_COUNT, 2)
        norm = (pts - self.origins[:, None, :]) / self.extents[:, None, :]
        out = np.zeros_like(norm)
        out[norm < self.nmin[None]] = -1.0
        out[norm > self.nmax[None]] = 1.0
        return out

    def count_outside(self, coords: np.ndarray, tolerance_px: float = 0.0) -> int:
        """Number of (sample, keypoint) pairs outside their box by more than the tolerance."""
        return int((self.violations(coords) > tolerance_px).any(axis=2).sum())


@dataclass(frozen=True)
class ToyProblem:
    """One training scenario: features, target coordinates, fitted prior."""

    features: np.ndarray       # (N, F)
    targets: np.ndarray        # (N, 44)
    prior: AnatomicalPrior
    population: Dataset | None = None

    def boxes(self) -> BoxBatch:
        return BoxBatch.from_targets(self.targets, self.prior)


def population_coords(population: Dataset) -> np.ndarray:
    """(N, 44) coordinate matrix of a dataset, rows flattened x1,y1,...,x22,y22."""
    return np.stack([rec.keypoints.xy.reshape(-1) for rec in population])


def coords_to_dataset(coords: np.ndarray, like: Dataset) -> Dataset:
    """Wrap predicted coordinates as a dataset mirroring ``like``'s records."""
    coords = coords.reshape(len(like), KEYPOINT_COUNT, 2)
    records = []
    for rec, xy in zip(like, coords):
        kp = KeypointSet(
            xy=xy,
            v=np.full(KEYPOINT_COUNT, 2, dtype=np.int64),
            image_id=rec.image_id,
            species=rec.keypoints.species,
        )
        records.append(FishImageRecord(rec.image_id, rec.width, rec.height, kp))
    return Dataset(records=tuple(records), role=like.role)


# Interior keypoints carrying systematic annotation corruption in the ACR
# demonstration scenario, with a fixed displacement direction each (head top,
# pectoral and pelvic fins, anal fin origin, dorsal posterior). None of them
# ever defines an image's bounding rectangle.
_CORRUPT_KEYPOINTS = (
    (3, (0.6, -0.8)),
    (13, (1.0, 0.0)),
    (14, (0.0, 1.0)),
    (15, (0.8, 0.6)),
    (16, (-0.8, 0.6)),
    (17, (-1.0, 0.0)),
    (21, (0.6, -0.8)),
)


def make_toy_problem(
    n: int = 48,
    feature_dim: int = 6,
    seed: int = 0,
    template: str = "deep_bodied",
    linear_targets: bool = False,
    prior_population: int = 400,
    corruption_px: float = 0.0,
    spread_scale: float = 1.0,
) -> ToyProblem:
    """Build a training scenario from a synthetic population.

    With ``linear_targets`` the targets are an exact affine function of pure
    noise features (so an exact least-squares solution with zero residual
    exists). Otherwise the targets are the population's ground-truth
    coordinates and the first four features carry each fish's bounding
    rectangle (standardized origin and extent); those make the per-image box
    positions learnable while the per-keypoint jitter stays as irreducible
    residual noise. Remaining feature dimensions are pure noise.

    The prior comes from a separate ``prior_population``-sized sample of the
    same species template: the box constraint describes the species, not the
    particular training batch, and the wider extremes of a large sample leave
    the regression's own optimum strictly inside the boxes.

    ``corruption_px`` injects feature-correlated annotation corruption: a few
    interior keypoints' training targets are displaced by that many pixels per
    unit of a feature. The regression can and will chase the corruption (it is
    exactly realizable), while the box constraint blocks it at the anatomical
    boundary; the clean population coordinates stay available for scoring.
    """
    tpl = load_template(template)
    if spread_scale != 1.0:
        from .synth import SpeciesTemplate

        tpl = SpeciesTemplate(
            name=tpl.name,
            mean_layout=tpl.mean_layout,
            spread=tpl.spread * spread_scale,
            body_size_range=tpl.body_size_range,
            aspect=tpl.aspect,
        )
    population = generate_population(tpl, n, seed=seed)
    prior_pop = generate_population(tpl, prior_population, seed=(int(seed) * 2 + 1) * 15485863)
    prior = fit_prior_for(prior_pop)
    rng = np.random.default_rng([int(seed), 104729])
    if linear_targets:
        features = rng.standard_normal((n, feature_dim))
        base = population_coords(population).mean(axis=0)
        true_w = rng.normal(0.0, 8.0, size=(N_COORDS, feature_dim))
        targets = features @ true_w.T + base
    else:
        targets = population_coords(population)
        pts = targets.reshape(n, KEYPOINT_COUNT, 2)
        mins = pts.min(axis=1)
        extents = pts.max(axis=1) - mins
        geometry = np.hstack([mins, extents])
        std = geometry.std(axis=0)
        std[std == 0] = 1.0
        geometry = (geometry - geometry.mean(axis=0)) / std
        # the two extents are nearly collinear (fixed aspect); orthonormalize
        # the block so gradient descent has no near-singular direction while
        # the spanned quantities stay exactly representable
        if n > geometry.shape[1]:
            q, _ = np.linalg.qr(geometry)
            geometry = q * math.sqrt(float(n))
        n_noise = max(0, feature_dim - geometry.shape[1])
        # first noise dimension is bounded uniform; it drives the corruption below
        noise = rng.standard_normal((n, n_noise))
        if n_noise > 0:
            noise[:, 0] = rng.uniform(-1.0, 1.0, size=n)
        features = np.hstack([geometry[:, :feature_dim], noise])
        if corruption_px > 0.0:
            if feature_dim < 5:
                raise ValueError("corruption needs at least one noise feature (feature_dim >= 5)")
            targets = targets.copy()
            driver = features[:, 4]
            for kp, (ux, uy) in _CORRUPT_KEYPOINTS:
                targets[:, 2 * (kp - 1)] += corruption_px * driver * ux
                targets[:, 2 * (kp - 1) + 1] += corruption_px * driver * uy
    return ToyProblem(features=features, targets=targets, prior=prior, population=population)


def fit_prior_for(population: Dataset) -> AnatomicalPrior:
    return fit_prior(population)


def combined_loss(pred_coords, gt_coords, box: BoxConstraint | None, w: LossWeights):
    """(total, L_mse, L_acr) for one sample's 44 coordinates."""
    p = np.asarray(pred_coords, dtype=np.float64).reshape(-1)
    g = np.asarray(gt_coords, dtype=np.float64).reshape(-1)
    if p.shape != g.shape or p.size != N_COORDS:
        raise ValueError(f"expected matching {N_COORDS}-coordinate vectors, got {p.size} vs {g.size}")
    l_mse = float(np.mean((p - g) ** 2))
    l_acr = acr_loss(p.reshape(KEYPOINT_COUNT, 2), box) if box is not None else 0.0
    total = w.w_mse * l_mse + w.w_acr * l_acr
    return total, l_mse, l_acr


def gradnorm_step(w: LossWeights, grad_norms, losses, lr_w: float) -> LossWeights:
    """One balancing update; returns weights clamped positive and summing to 2."""
    if w.initial_losses is None:
        raise ValueError("initial losses must be recorded before balancing")
    l0 = np.asarray(w.initial_losses, dtype=np.float64)
    if np.any(l0 <= 0):
        warnings.warn(
            "initial task loss is zero; balancing disabled, keeping equal weights",
            GradNormFallbackWarning,
            stacklevel=2,
        )
        return replace(w, w_mse=1.0, w_acr=1.0)
    norms = np.asarray(grad_norms, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if norms.shape != (2,) or losses.shape != (2,):
        raise ValueError("grad_norms and losses must each hold two entries")
    if np.any(norms < 0):
        raise ValueError("gradient norms must be nonnegative")
    wv = np.array([w.w_mse, w.w_acr])
    weighted = wv * norms
    ratios = losses / l0
    if np.mean(ratios) == 0.0:
        return w  # both tasks fully converged; nothing to balance
    rate = ratios / np.mean(ratios)
    target = weighted.mean() * rate**w.alpha
    grad_w = np.sign(weighted - target) * norms
    new = np.maximum(wv - lr_w * grad_w, 1e-6)
    new = 2.0 * new / new.sum()
    return replace(w, w_mse=float(new[0]), w_acr=float(new[1]))


def _batch_terms(weights, bias, features, targets, boxes: BoxBatch, violation_tolerance_px=0.0):
    """Losses, parameter gradients, and diagnostics for the full batch."""
    n = features.shape[0]
    preds = features @ weights.T + bias
    err = preds - targets
    l_mse = float(np.mean(err * err))
    d_mse = 2.0 * err / err.size
    g_w_mse = d_mse.T @ features
    g_b_mse = d_mse.sum(axis=0)

    violations = boxes.violations(preds)
    l_acr = float(violations.sum(axis=(1, 2)).mean())
    d_acr = boxes.signs(preds).reshape(n, N_COORDS) / n
    g_w_acr = d_acr.T @ features
    g_b_acr = d_acr.sum(axis=0)

    outside = int((violations > violation_tolerance_px).any(axis=2).sum())
    return l_mse, l_acr, (g_w_mse, g_b_mse), (g_w_acr, g_b_acr), outside


def train(predictor: ToyPredictor, problem: ToyProblem, cfg: TrainConfig) -> tuple[ToyPredictor, TrainTrace]:
    """Gradient descent on the weighted two-term objective with balancing interleaved.

    The trace records one row per step plus a final row for the trained
    parameters. Raises :class:`DivergenceError` (carrying the partial trace)
    if the total loss exceeds the divergence limit or turns non-finite.
    """
    if len(problem.features) == 0:
        raise ValueError("training batch is empty")
    if cfg.lr < 0:
        raise ValueError("learning rate must be nonnegative")
    features = problem.features
    targets = problem.targets
    boxes = problem.boxes()
    weights = predictor.weights.copy()
    bias = predictor.bias.copy()
    vel_w = np.zeros_like(weights)
    vel_b = np.zeros_like(bias)
    w = LossWeights(cfg.init_w_mse, cfg.init_w_acr if cfg.use_acr else 0.0, alpha=cfg.alpha)
    balancing = cfg.use_acr and cfg.lr_weights > 0
    trace = TrainTrace()

    for step in range(cfg.steps + 1):
        l_mse, l_acr, (g_w_mse, g_b_mse), (g_w_acr, g_b_acr), outside = _batch_terms(
            weights, bias, features, targets, boxes, cfg.violation_tolerance_px
        )
        if step == 0:
            w = replace(w, initial_losses=(l_mse, l_acr))
            if balancing and (l_mse <= 0 or l_acr <= 0):
                warnings.warn(
                    "initial task loss is zero; balancing disabled, keeping equal weights",
                    GradNormFallbackWarning,
                    stacklevel=2,
                )
                balancing = False
        n_mse = float(np.linalg.norm(g_w_mse))
        n_acr = float(np.linalg.norm(g_w_acr))
        total = w.w_mse * l_mse + (w.w_acr * l_acr if cfg.use_acr else 0.0)
        trace.rows.append(TraceRow(step, l_mse, l_acr, w.w_mse, w.w_acr, n_mse, n_acr, outside))
        if not np.isfinite(total) or total > cfg.divergence_limit:
            raise DivergenceError(f"training diverged at step {step}: total loss {total}", trace=trace)
        if step == cfg.steps:
            break
        g_w = w.w_mse * g_w_mse
        g_b = w.w_mse * g_b_mse
        if cfg.use_acr:
            g_w = g_w + w.w_acr * g_w_acr
            g_b = g_b + w.w_acr * g_b_acr
        lr_t = cfg.lr / (1.0 + cfg.lr_decay * step)
        vel_w = cfg.momentum * vel_w - lr_t * g_w
        vel_b = cfg.momentum * vel_b - lr_t * g_b
        weights = weights + vel_w
        bias = bias + vel_b
        if balancing:
            w = gradnorm_step(w, (n_mse, n_acr), (l_mse, l_acr), cfg.lr_weights)
    return ToyPredictor(weights, bias), trace


def least_squares_solution(problem: ToyProblem) -> ToyPredictor:
    """Normal-equations solution of the unconstrained regression."""
    n = problem.features.shape[0]
    design = np.hstack([problem.features, np.ones((n, 1))])
    coef, *_ = np.linalg.lstsq(design, problem.targets, rcond=None)
    return ToyPredictor(coef[:-1].T, coef[-1])


def acr_benchmark_scenario(seed: int = 0) -> tuple[ToyProblem, ToyPredictor, TrainConfig, TrainConfig]:
    """The frozen corruption scenario contrasting MSE+ACR against MSE alone.

    A tight-anatomy population whose training targets carry feature-correlated
    annotation corruption on several interior keypoints. Plain regression
    chases the corruption exactly; the box constraint pins those predictions
    at the anatomical boundary instead. Returns the problem, the shared
    mean-baseline initial predictor, and the two training configurations.

    Balancing is off here (fixed asymmetric weights): hinge gradient norms do
    not decay with progress, so norm balancing starves the constraint weight
    in this sustained-conflict regime. The decayed step schedule lets the
    subgradient iteration settle onto the box edges.
    """
    problem = make_toy_problem(
        n=48, feature_dim=6, seed=seed, corruption_px=11.0, spread_scale=0.15
    )
    init = ToyPredictor.mean_baseline(problem.targets, 6)
    with_acr = TrainConfig(
        steps=12_000, lr=4.0, lr_decay=0.006, lr_weights=0.0,
        use_acr=True, init_w_mse=0.4, init_w_acr=1.6,
    )
    mse_only = TrainConfig(steps=12_000, lr=4.0, lr_decay=0.006, lr_weights=0.0, use_acr=False)
    return problem, init, with_acr, mse_only


def _flatten_params(weights, bias):
    return np.concatenate([weights.reshape(-1), bias])


def _unflatten_params(theta, feature_dim):
    w = theta[: N_COORDS * feature_dim].reshape(N_COORDS, feature_dim)
    b = theta[N_COORDS * feature_dim:]
    return w, b


def _total_loss(theta, feature_dim, features, targets, boxes, w: LossWeights) -> float:
    weights, bias = _unflatten_params(theta, feature_dim)
    preds = features @ weights.T + bias
    err = preds - targets
    l_mse = float(np.mean(err * err))
    l_acr = float(boxes.violations(preds).sum(axis=(1, 2)).mean())
    return w.w_mse * l_mse + w.w_acr * l_acr


def _analytic_gradient(theta, feature_dim, features, targets, boxes, w: LossWeights) -> np.ndarray:
    weights, bias = _unflatten_params(theta, feature_dim)
    _, _, (g_w_mse, g_b_mse), (g_w_acr, g_b_acr), _ = _batch_terms(weights, bias, features, targets, boxes)
    g_w = w.w_mse * g_w_mse + w.w_acr * g_w_acr
    g_b = w.w_mse * g_b_mse + w.w_acr * g_b_acr
    return _flatten_params(g_w, g_b)


def grad_check(
    predictor: ToyPredictor,
    problem: ToyProblem,
    w: LossWeights | None = None,
    probes: int = 10_000,
    probes_per_point: int = 100,
    fd_step: float = 1e-5,
    boundary_margin: float = 1e-2,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Parameter points are drawn around the given predictor and resampled until
    every predicted coordinate sits at least ``boundary_margin`` pixels from
    every hinge boundary, so the finite differences never straddle a kink.
    The relative error for one probed parameter uses a unit floor:
    |analytic - fd| / max(1, |analytic|, |fd|).
    """
    w = w or LossWeights()
    features = problem.features
    targets = problem.targets
    boxes = problem.boxes()
    feature_dim = predictor.feature_dim
    base = _flatten_params(predictor.weights, predictor.bias)
    n_params = base.size
    rng = np.random.default_rng(seed)
    # keep perturbed losses moderate: central-difference roundoff grows with
    # the loss magnitude (~eps * L / h), and 1% of the coordinate range still
    # swings predictions across hinge states
    coord_scale = 0.01 * (float(np.ptp(targets)) or 1.0)

    def far_from_boundaries(theta) -> bool:
        weights, bias = _unflatten_params(theta, feature_dim)
        preds = (features @ weights.T + bias).reshape(-1, KEYPOINT_COUNT, 2)
        k_min = boxes.origins[:, None, :] + boxes.nmin[None] * boxes.extents[:, None, :]
        k_max = boxes.origins[:, None, :] + boxes.nmax[None] * boxes.extents[:, None, :]
        dist = np.minimum(np.abs(preds - k_min), np.abs(preds - k_max))
        return bool((dist >= boundary_margin).all())

    worst = 0.0
    done = 0
    while done < probes:
        for _ in range(200):
            theta = base + rng.normal(0.0, coord_scale, size=n_params)
            if far_from_boundaries(theta):
                break
        else:
            raise RuntimeError("could not sample a parameter point clear of hinge boundaries")
        analytic = _analytic_gradient(theta, feature_dim, features, targets, boxes, w)
        todo = min(probes_per_point, probes - done)
        idx = rng.choice(n_params, size=todo, replace=False)
        for k in idx:
            saved = theta[k]
            theta[k] = saved + fd_step
            f_plus = _total_loss(theta, feature_dim, features, targets, boxes, w)
            theta[k] = saved - fd_step
            f_minus = _total_loss(theta, feature_dim, features, targets, boxes, w)
            theta[k] = saved
            fd = (f_plus - f_minus) / (2 * fd_step)
            err = abs(analytic[k] - fd) / max(1.0, abs(analytic[k]), abs(fd))
            worst = max(worst, err)
        done += todo
    return worst
