import numpy as np
import pytest

from phenokey.errors import DivergenceError, GradNormFallbackWarning
from phenokey.metrics import pmp
from phenokey.optim import (
    LossWeights,
    ToyPredictor,
    TrainConfig,
    acr_benchmark_scenario,
    combined_loss,
    coords_to_dataset,
    grad_check,
    gradnorm_step,
    least_squares_solution,
    make_toy_problem,
    population_coords,
    train,
)


def _param_distance(a: ToyPredictor, b: ToyPredictor) -> float:
    return float(
        np.sqrt(np.sum((a.weights - b.weights) ** 2) + np.sum((a.bias - b.bias) ** 2))
    )


def _mean_pmp(predictor: ToyPredictor, problem) -> float:
    coords = predictor.predict(problem.features)
    pred_ds = coords_to_dataset(coords, problem.population)
    gts = [r.keypoints for r in problem.population]
    return pmp([r.keypoints for r in pred_ds], gts).mean()


# ---------------------------------------------------------------------------
# combined loss


def test_combined_loss_zero_at_truth_inside_box():
    problem = make_toy_problem(n=4, feature_dim=5, seed=1)
    coords = problem.targets[0]
    box = problem.boxes().box(0)
    total, l_mse, l_acr = combined_loss(coords, coords, box, LossWeights())
    assert total == 0.0 and l_mse == 0.0 and l_acr == 0.0


def test_combined_loss_pure_mse_when_acr_weight_zero():
    problem = make_toy_problem(n=4, feature_dim=5, seed=1)
    gt = problem.targets[0]
    pred = gt + 1000.0  # far outside every box
    box = problem.boxes().box(0)
    w = LossWeights(w_mse=1.0, w_acr=0.0)
    total, l_mse, l_acr = combined_loss(pred, gt, box, w)
    assert l_acr > 0
    assert total == pytest.approx(l_mse)


def test_combined_loss_one_px_everywhere_inside_box():
    from phenokey.anatomy import AnatomicalPrior, box_for_image
    from phenokey.schema import KEYPOINT_COUNT

    problem = make_toy_problem(n=4, feature_dim=5, seed=1)
    gt = problem.targets[0]
    pts = gt.reshape(KEYPOINT_COUNT, 2)
    # box covering the whole bounding rectangle: any interior point is admissible
    prior = AnatomicalPrior(
        mins=np.zeros((KEYPOINT_COUNT, 2)), maxs=np.ones((KEYPOINT_COUNT, 2)), training_set_size=1
    )
    box = box_for_image(prior, (*(pts.min(axis=0)), *(pts.max(axis=0))))
    center = np.tile((pts.min(axis=0) + pts.max(axis=0)) / 2.0, KEYPOINT_COUNT)
    direction = np.sign(center - gt)
    direction[direction == 0] = 1.0
    pred = gt + direction  # one pixel toward the interior on every coordinate
    total, l_mse, l_acr = combined_loss(pred, gt, box, LossWeights())
    assert l_mse == pytest.approx(1.0)
    assert l_acr == 0.0
    assert total == pytest.approx(1.0)


def test_combined_loss_shape_mismatch():
    with pytest.raises(ValueError, match="44"):
        combined_loss(np.zeros(43), np.zeros(43), None, LossWeights())


# ---------------------------------------------------------------------------
# gradient-norm balancing


def _weights(w_mse=1.0, w_acr=1.0, alpha=1.5, initial=(10.0, 5.0)):
    return LossWeights(w_mse, w_acr, alpha=alpha, initial_losses=initial)


def test_gradnorm_symmetric_fixed_point():
    w = _weights(initial=(10.0, 10.0))
    out = gradnorm_step(w, (3.0, 3.0), (4.0, 4.0), lr_w=0.025)
    assert out.w_mse == 1.0 and out.w_acr == 1.0


def test_gradnorm_zero_norm_task_gains_weight():
    w = _weights(initial=(10.0, 10.0))
    out = gradnorm_step(w, (0.0, 3.0), (4.0, 4.0), lr_w=0.025)
    assert out.w_mse > 1.0  # the zero-gradient task ends up above its old share
    assert out.w_mse + out.w_acr == pytest.approx(2.0)


def test_gradnorm_weights_always_sum_to_two_and_stay_positive():
    rng = np.random.default_rng(0)
    w = _weights()
    for _ in range(200):
        norms = rng.uniform(0, 50, size=2)
        losses = rng.uniform(0.01, 20, size=2)
        w = gradnorm_step(w, norms, losses, lr_w=rng.uniform(0.001, 0.2))
        assert w.w_mse > 0 and w.w_acr > 0
        assert w.w_mse + w.w_acr == pytest.approx(2.0, abs=1e-12)


def test_gradnorm_zero_initial_loss_falls_back():
    w = _weights(w_mse=1.7, w_acr=0.3, initial=(10.0, 0.0))
    with pytest.warns(GradNormFallbackWarning):
        out = gradnorm_step(w, (3.0, 1.0), (4.0, 1.0), lr_w=0.025)
    assert out.w_mse == 1.0 and out.w_acr == 1.0


def test_gradnorm_requires_recorded_initial_losses():
    with pytest.raises(ValueError, match="initial"):
        gradnorm_step(LossWeights(), (1.0, 1.0), (1.0, 1.0), 0.025)


# ---------------------------------------------------------------------------
# training


def test_zero_learning_rate_keeps_everything_constant():
    problem = make_toy_problem(n=8, feature_dim=5, seed=2)
    init = ToyPredictor.mean_baseline(problem.targets, 5)
    cfg = TrainConfig(steps=20, lr=0.0, lr_weights=0.0)
    trained, trace = train(init, problem, cfg)
    assert np.array_equal(trained.weights, init.weights)
    assert np.array_equal(trained.bias, init.bias)
    first = trace[0]
    for row in trace:
        assert row.l_mse == first.l_mse and row.l_acr == first.l_acr
        assert row.w_mse == first.w_mse and row.w_acr == first.w_acr
        assert row.violation_count == first.violation_count


def test_pure_mse_reaches_least_squares_solution():
    problem = make_toy_problem(n=64, feature_dim=6, seed=0, linear_targets=True)
    cfg = TrainConfig(steps=2000, lr=20.0, use_acr=False, lr_weights=0.0)
    trained, trace = train(ToyPredictor.zeros(6), problem, cfg)
    assert trace[-1].l_mse < 1e-6
    assert _param_distance(trained, least_squares_solution(problem)) < 1e-4


def test_training_is_bit_reproducible():
    def once():
        problem = make_toy_problem(n=16, feature_dim=5, seed=11)
        cfg = TrainConfig(steps=50, lr=2.0)
        return train(ToyPredictor.mean_baseline(problem.targets, 5), problem, cfg)

    (pred_a, trace_a), (pred_b, trace_b) = once(), once()
    assert np.array_equal(pred_a.weights, pred_b.weights)
    assert np.array_equal(pred_a.bias, pred_b.bias)
    assert trace_a.rows == trace_b.rows


def test_total_loss_nonincreasing_at_small_fixed_step():
    problem = make_toy_problem(n=16, feature_dim=5, seed=4)
    cfg = TrainConfig(steps=300, lr=0.05, lr_weights=0.0)
    _, trace = train(ToyPredictor.mean_baseline(problem.targets, 5), problem, cfg)
    totals = [r.w_mse * r.l_mse + r.w_acr * r.l_acr for r in trace]
    for a, b in zip(totals, totals[1:]):
        assert b <= a + 1e-9 * max(1.0, abs(a))


def test_momentum_accelerates_small_step_convergence():
    problem = make_toy_problem(n=32, feature_dim=5, seed=12, linear_targets=True)
    plain = TrainConfig(steps=300, lr=1.0, use_acr=False, lr_weights=0.0)
    heavy = TrainConfig(steps=300, lr=1.0, use_acr=False, lr_weights=0.0, momentum=0.9)
    _, trace_plain = train(ToyPredictor.zeros(5), problem, plain)
    _, trace_heavy = train(ToyPredictor.zeros(5), problem, heavy)
    assert trace_heavy[-1].l_mse < trace_plain[-1].l_mse


def test_divergence_aborts_with_trace():
    problem = make_toy_problem(n=8, feature_dim=5, seed=5)
    cfg = TrainConfig(steps=500, lr=1e9, lr_weights=0.0)
    with pytest.raises(DivergenceError) as err:
        train(ToyPredictor.mean_baseline(problem.targets, 5), problem, cfg)
    assert err.value.trace is not None and len(err.value.trace) >= 1


def test_gradnorm_run_keeps_weight_invariants():
    problem = make_toy_problem(n=16, feature_dim=5, seed=6)
    cfg = TrainConfig(steps=120, lr=2.0, lr_weights=0.025)
    _, trace = train(ToyPredictor.mean_baseline(problem.targets, 5), problem, cfg)
    for row in trace:
        assert row.w_mse > 0 and row.w_acr > 0
        assert row.w_mse + row.w_acr == pytest.approx(2.0, abs=1e-9)
    # balancing actually moved the weights at some point
    assert any(row.w_mse != 1.0 for row in trace)


def test_zero_initial_task_loss_disables_balancing():
    problem = make_toy_problem(n=1, feature_dim=5, seed=7)
    exact = ToyPredictor(np.zeros((44, 5)), problem.targets[0].copy())
    cfg = TrainConfig(steps=5, lr=0.01, lr_weights=0.025)
    with pytest.warns(GradNormFallbackWarning):
        _, trace = train(exact, problem, cfg)
    assert trace[0].l_mse == 0.0
    assert all(row.w_mse == 1.0 and row.w_acr == 1.0 for row in trace)


def test_acr_scenario_drives_violations_to_zero_and_helps_pmp():
    problem, init, with_acr, mse_only = acr_benchmark_scenario(seed=0)
    acr_pred, acr_trace = train(init, problem, with_acr)
    mse_pred, mse_trace = train(init, problem, mse_only)

    assert acr_trace[0].violation_count >= 50
    assert acr_trace[-1].violation_count == 0
    assert mse_trace[-1].violation_count > 0

    tail = acr_trace.violation_counts()[-(len(acr_trace) // 10):]
    assert all(a >= b for a, b in zip(tail, tail[1:]))

    assert _mean_pmp(acr_pred, problem) >= _mean_pmp(mse_pred, problem)


def test_trace_csv_round_trip(tmp_path):
    problem = make_toy_problem(n=8, feature_dim=5, seed=8)
    cfg = TrainConfig(steps=10, lr=1.0)
    _, trace = train(ToyPredictor.mean_baseline(problem.targets, 5), problem, cfg)
    out = tmp_path / "trace.csv"
    trace.to_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "step,L_mse,L_acr,w_mse,w_acr,grad_norm_mse,grad_norm_acr,violation_count"
    assert len(lines) == len(trace) + 1
    first = lines[1].split(",")
    assert float(first[1]) == trace[0].l_mse  # repr round-trips exactly


# ---------------------------------------------------------------------------
# gradient verification


def test_grad_check_quadratic_only():
    problem = make_toy_problem(n=8, feature_dim=5, seed=3)
    ls = least_squares_solution(problem)
    err = grad_check(ls, problem, LossWeights(1.0, 0.0), probes=2000, seed=5)
    assert err < 1e-7


def test_grad_check_combined_away_from_kinks():
    problem = make_toy_problem(n=8, feature_dim=5, seed=3)
    init = ToyPredictor.mean_baseline(problem.targets, 5)
    err = grad_check(init, problem, LossWeights(1.0, 1.0), probes=2000, seed=6)
    assert err < 1e-5


def test_gradient_exactly_zero_at_zero_residual():
    from phenokey.optim import _batch_terms

    problem = make_toy_problem(n=6, feature_dim=5, seed=9)
    # targets equal to one fish repeated: the bias alone interpolates exactly
    targets = np.tile(problem.targets[0], (6, 1))
    features = np.zeros((6, 5))
    boxes_problem = make_toy_problem(n=6, feature_dim=5, seed=9)
    bias = problem.targets[0].copy()
    l_mse, l_acr, (gw_m, gb_m), (gw_a, gb_a), _ = _batch_terms(
        np.zeros((44, 5)), bias, features, targets, boxes_problem.boxes()
    )
    assert l_mse == 0.0
    assert np.all(gw_m == 0.0) and np.all(gb_m == 0.0)


def test_population_coords_shape_and_order():
    problem = make_toy_problem(n=3, feature_dim=5, seed=10)
    coords = population_coords(problem.population)
    assert coords.shape == (3, 44)
    rec = problem.population.records[0]
    assert coords[0, 0] == rec.keypoints.xy[0, 0]
    assert coords[0, 1] == rec.keypoints.xy[0, 1]
