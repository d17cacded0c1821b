import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import L, demo_hybrid, demo_layout
from hybridcst.experiment import (
    ComparisonReport,
    ComparisonRow,
    ExperimentError,
    Problem,
    block_errors,
    compare,
    image_error,
    image_error_report,
    improvement,
    log_grid,
    noisy_block,
    prepare_problem,
    regularization_sweep,
)
from hybridcst.geometry import ConvexPolygon
from hybridcst.phantom import PlumeSpec, build_field
from hybridcst.solvers import SolverKind, SolverOptions, solve_tk

SQ = ConvexPolygon.square(L)
FAST = SolverOptions(300, 1e-6)


@pytest.fixture(scope="module")
def problem():
    fields = [build_field(SQ, 0.1, plumes=[PlumeSpec("Gaussian", (c, -c), 1.5, 0.05)]) for c in (0.0, 1.0)]
    return prepare_problem(demo_layout(), demo_hybrid(), fields)


def test_image_error_trivial(rng):
    x = rng.uniform(0.005, 0.1, 30)
    assert image_error(x, x) == 0.0
    assert image_error(2 * x, x) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_image_error_oracle(seed, n):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.001, 1, n)
    r = rng.uniform(-1, 2, n)
    mask = rng.random(n) < 0.6
    mask[0] = True
    want = sum(abs(r[j] - t[j]) / t[j] for j in range(n) if mask[j]) / mask.sum()
    assert abs(image_error(r, t, mask) - want) <= 1e-12
    assert abs(image_error(r, t, np.flatnonzero(mask)) - want) <= 1e-12


def test_image_error_errors():
    with pytest.raises(ExperimentError):
        image_error([1.0, 2.0], [1.0, 0.0])
    with pytest.raises(ExperimentError):
        image_error([1.0], [1.0], np.zeros(1, dtype=bool))
    with pytest.raises(ExperimentError):
        image_error([1.0, 2.0], [1.0])


def test_image_error_report_masks(rng):
    t = rng.uniform(0.01, 1, 20)
    r = rng.uniform(0, 1, 20)
    rep = image_error_report(r, t, 8)
    assert rep.ie_roi == pytest.approx(rep.per_pixel_relerr[:8].mean())
    assert rep.ie_ros == pytest.approx(image_error(r, t))
    assert rep.ie_roi >= 0 and rep.ie_ros >= 0


def test_log_grid():
    g = log_grid(1e-6, 10, 36)
    assert len(g) == 36 and g[0] == 1e-6 and g[-1] == 10.0
    np.testing.assert_allclose(np.diff(np.log10(g)), 7 / 35, rtol=1e-12)
    with pytest.raises(ExperimentError):
        log_grid(1.0, 0.5, 3)
    with pytest.raises(ExperimentError):
        log_grid(1e-3, 1.0, 1)


def test_noisy_block_layout_and_seeds(problem):
    B = noisy_block(problem.b_clean, 40.0, 3, 10)
    assert B.shape == (problem.A.shape[0], 6)
    B2 = noisy_block(problem.b_clean, 40.0, 3, 10)
    np.testing.assert_array_equal(B, B2)
    np.testing.assert_array_equal(noisy_block(problem.b_clean, None, 2, 0)[:, 2:], problem.b_clean)
    # rep 1 of frame 0 uses seed base + 1
    from hybridcst.phantom import Measurement, add_noise

    np.testing.assert_array_equal(B[:, 2], add_noise(Measurement(problem.b_clean[:, 0]), 40.0, 11).b)


def test_sweep_determinism(problem):
    grid = log_grid(1e-4, 1, 4)
    a = regularization_sweep(problem, "TK", grid, 300.0, 1, 0, FAST)
    b = regularization_sweep(problem, "TK", grid, 300.0, 1, 0, FAST)
    np.testing.assert_array_equal(a.mean_ie, b.mean_ie)
    assert a.optimal_value == b.optimal_value
    assert a.optimal_ie == np.nanmin(a.mean_ie)
    assert a.per_rep_ie.shape == (4, 1, 2)


def test_sweep_records_failures(problem):
    sw = regularization_sweep(problem, "ART", [0.5, 1.0, 3.0], 40.0, 2, 0, FAST)
    assert len(sw.failures) == 1 and sw.failures[0][0] == 3.0
    assert np.isnan(sw.mean_ie[2]) and sw.optimal_value in (0.5, 1.0)


def test_sweep_rejects_bad_grid(problem):
    with pytest.raises(ExperimentError):
        regularization_sweep(problem, "TK", [1.0, 0.1], 40.0, 1, 0)
    with pytest.raises(ExperimentError):
        regularization_sweep(problem, "TK", [0.1, 1.0], 40.0, 0, 0)


def test_sweep_parallel_matches_serial(problem):
    grid = log_grid(1e-3, 1, 3)
    a = regularization_sweep(problem, "TV", grid, 40.0, 2, 5, FAST, jobs=1)
    b = regularization_sweep(problem, "TV", grid, 40.0, 2, 5, FAST, jobs=2)
    np.testing.assert_array_equal(a.per_rep_ie, b.per_rep_ie)


def test_degenerate_comparison_is_single_image_error(problem):
    single = Problem(problem.mesh, problem.A, problem.F, problem.b_clean[:, :1], problem.truth[:, :1])
    rep = compare({"h": single}, {"TK": (np.array([1e-3]), FAST)}, None, [None], 1, 0)
    r = rep.row("h", "TK")
    k = solve_tk(single.A, single.b_clean[:, 0], 1e-3, single.F, FAST).k
    assert r.ie_ros == pytest.approx(image_error(k, single.truth[:, 0]), rel=1e-12)
    assert r.ie_roi == pytest.approx(image_error(k, single.truth[:, 0], single.mesh.roi_mask), rel=1e-12)


def test_aggregation_permutation_invariance(problem):
    K = np.random.default_rng(0).uniform(0, 0.05, (problem.mesh.N, 6))
    ros, roi = block_errors(problem, K, 3)
    swapped = Problem(problem.mesh, problem.A, problem.F, problem.b_clean[:, ::-1], problem.truth[:, ::-1])
    K2 = K.reshape(problem.mesh.N, 3, 2)[:, ::-1, ::-1].reshape(problem.mesh.N, 6)
    ros2, roi2 = block_errors(swapped, K2, 3)
    assert ros.mean() == pytest.approx(ros2.mean(), rel=1e-14)
    assert roi.mean() == pytest.approx(roi2.mean(), rel=1e-14)


def test_improvement_formula():
    rows = [ComparisonRow("h", "TK", 40.0, 1.0, 0.3, 0, 0.4, 0, 1),
            ComparisonRow("u", "TK", 40.0, 1.0, 0.6, 0, 0.5, 0, 1)]
    rep = ComparisonReport(rows)
    (solver, snr, roi, ros), = rep.improvements("h", "u")
    assert roi == pytest.approx(50.0) and ros == pytest.approx(20.0)
    assert improvement(0.5, 0.4) == pytest.approx(20.0)


@pytest.mark.parametrize("solver", list(SolverKind))
def test_noise_trend(problem, solver):
    value = {"TK": 1e-3, "ART": 0.2, "TV": 1e-3}[solver.value]
    grid = [value]
    lo = regularization_sweep(problem, solver, grid, 20.0, 8, 0, FAST)
    hi = regularization_sweep(problem, solver, grid, 60.0, 8, 0, FAST)
    spread = 3 * lo.per_rep_ie[0].std() / np.sqrt(lo.per_rep_ie[0].size)
    assert lo.mean_ie[0] + spread >= hi.mean_ie[0]
