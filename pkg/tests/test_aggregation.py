import math

import numpy as np
import pytest

from fedsim import aggregation as agg
from fedsim.attacks import attack_ofom
from fedsim.errors import ConfigError, DimensionMismatchError, WeightCollapseError


def _brute_krum(x: np.ndarray, epsilon: float) -> int:
    n = x.shape[0]
    k = math.floor((1 - epsilon) * n + 1e-9) - 2
    best, best_score = -1, math.inf
    for i in range(n):
        dists = sorted(float(np.sum((x[i] - x[j]) ** 2)) for j in range(n) if j != i)
        score = sum(dists[:k])
        if score < best_score:
            best, best_score = i, score
    return best


# ---------------------------------------------------------------------------
# Media / mediana / media recortada
# ---------------------------------------------------------------------------

def test_mean_uses_data_sizes():
    out = agg.aggregate("mean", [[0.0], [4.0]], data_sizes=[3, 1])
    assert out.vector.tolist() == [1.0]


def test_median_is_coordinatewise_lower_median():
    out = agg.aggregate("median", [[1.0, 9.0], [2.0, 7.0], [3.0, 8.0], [100.0, 0.0]])
    assert out.vector.tolist() == [2.0, 7.0]


def test_weighted_median_follows_data_sizes():
    out = agg.aggregate("median", [[0.0], [1.0], [10.0]], data_sizes=[1, 1, 5])
    assert out.vector.tolist() == [10.0]


def test_trimmed_mean_drops_far_values():
    out = agg.trimmed_mean([[1.0], [2.0], [3.0], [100.0]], 0.25)
    assert out.tolist() == [1.5]


def test_trimmed_mean_with_zero_epsilon_is_mean(rng):
    x = rng.standard_normal((7, 3))
    assert np.allclose(agg.trimmed_mean(x, 0.0), x.mean(axis=0))


# ---------------------------------------------------------------------------
# Krum / Bulyan
# ---------------------------------------------------------------------------

def test_krum_picks_central_point():
    vec, idx = agg.agg_krum(agg.AggregationInput([[0.0], [1.0], [2.0], [100.0]], epsilon=0.0))
    assert idx == 1
    assert vec.tolist() == [1.0]


@pytest.mark.parametrize("n", [4, 5, 6, 7, 8])
@pytest.mark.parametrize("epsilon", [0.0, 0.125])
def test_krum_matches_brute_force(n, epsilon):
    rng = np.random.default_rng(n * 10 + int(epsilon * 8))
    x = rng.standard_normal((n, 5))
    result = agg.aggregate("krum", list(x), epsilon=epsilon)
    assert result.selected_index == _brute_krum(x, epsilon)
    assert np.array_equal(result.vector, x[result.selected_index])


def test_krum_ties_go_to_lowest_index():
    result = agg.aggregate("krum", [[1.0], [1.0], [1.0], [1.0]])
    assert result.selected_index == 0


def test_krum_without_neighbours_is_config_error():
    with pytest.raises(ConfigError):
        agg.aggregate("krum", [[0.0], [1.0], [2.0]], epsilon=0.125)


def test_bulyan_ignores_outliers(rng):
    honest = rng.standard_normal((13, 4)) * 0.1
    outliers = np.full((3, 4), 1e3)
    out = agg.aggregate("bulyan", list(np.vstack([honest, outliers])), epsilon=0.125)
    assert np.linalg.norm(out.vector) < 1.0


def test_bulyan_select_size_and_order(rng):
    x = rng.standard_normal((16, 3))
    chosen = agg.bulyan_select(x, 0.125)
    assert len(chosen) == 12
    assert len(set(chosen)) == 12


def test_bulyan_single_planted_outlier(rng):
    benign = rng.standard_normal(7)
    x = np.append(benign, 1e6)[:, None]
    out = agg.aggregate("bulyan", list(x), epsilon=1 / 8).vector
    assert benign.min() <= out[0] <= benign.max()


def test_bulyan_stays_inside_selected_envelope(rng):
    for _ in range(100):
        n = int(rng.integers(6, 13))
        eps = float(rng.choice([0.0, 0.125, 0.2]))
        x = rng.standard_normal((n, 3)) * rng.uniform(0.1, 100.0)
        chosen = agg.bulyan_select(x, eps)
        out = agg.agg_bulyan(agg.AggregationInput(x, epsilon=eps))
        assert np.all(out >= x[chosen].min(axis=0) - 1e-12)
        assert np.all(out <= x[chosen].max(axis=0) + 1e-12)


# ---------------------------------------------------------------------------
# MWU
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("rule", ["mwu_avg", "mwu_opt"])
def test_mwu_identical_updates(rule):
    out = agg.aggregate(rule, [[1.0, -2.0]] * 5)
    assert np.allclose(out.vector, [1.0, -2.0])


def test_mwu_single_party():
    inp = agg.AggregationInput([[3.0, 4.0]])
    assert agg.agg_mwu(inp, "opt").tolist() == [3.0, 4.0]


def test_mwu_rejects_bad_arguments():
    inp = agg.AggregationInput([[0.0], [1.0]])
    with pytest.raises(ConfigError):
        agg.agg_mwu(inp, "avg", iters=0)
    with pytest.raises(ConfigError):
        agg.agg_mwu(inp, "median")  # type: ignore[arg-type]


def test_mwu_avg_one_step_trace():
    inp = agg.AggregationInput([[0.0], [0.0], [3.0]])
    theta, w = agg.mwu_weights(inp, "avg", iters=1)
    # distancias a la media inicial {1}: 1, 1, 2
    assert theta[0] == pytest.approx(3.0 / (2.0 * math.e + 1.0), rel=1e-12)
    assert theta[0] < 1.0
    assert w[2] / w[0] == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_mwu_avg_weight_ratio_shrinks_with_distance(rng):
    x = rng.standard_normal((9, 4))
    inp = agg.AggregationInput(x)
    _, w = agg.mwu_weights(inp, "avg", iters=1)
    dist = np.linalg.norm(x - x.mean(axis=0), axis=1)
    for i in range(9):
        for j in range(9):
            if dist[i] > dist[j]:
                assert w[i] / w[j] < 1.0


def test_mwu_avg_weight_collapse_is_an_error():
    updates = [[-1e4], [-1e4], [1e4], [1e4]]
    with pytest.raises(WeightCollapseError):
        agg.agg_mwu(agg.AggregationInput(updates), "avg", iters=1)
    with pytest.raises(WeightCollapseError):
        agg.aggregate("mwu_avg", updates)


def test_mwu_avg_tiny_weights_are_still_used():
    # exp(-333) es diminuto pero representable
    out = agg.aggregate("mwu_avg", [[0.0], [0.0], [1000.0]], options=agg.AggregatorOptions(mwu_iters=1))
    assert out.vector[0] == pytest.approx(0.0, abs=1e-100)


def test_ofom_captures_mwu_avg_and_displaces_mwu_opt():
    rng = np.random.default_rng(0)
    benign = rng.standard_normal((14, 20))
    crafted = attack_ofom(list(benign), m=2, magnitude=1e6)
    updates = list(benign) + crafted.updates
    theta_2 = crafted.updates[1]
    benign_mean = benign.mean(axis=0)

    avg = agg.aggregate("mwu_avg", updates).vector
    assert np.linalg.norm(avg - theta_2) / np.linalg.norm(theta_2) < 1e-3

    opt = agg.aggregate("mwu_opt", updates).vector
    assert np.linalg.norm(opt - benign_mean) > 1e3


# ---------------------------------------------------------------------------
# Cronus
# ---------------------------------------------------------------------------

def test_cronus_practical_removes_small_cluster():
    rng = np.random.default_rng(3)
    inliers = np.array([1.0, 0.0, 0.0]) + 0.01 * rng.standard_normal((8, 3))
    outliers = np.tile([0.0, 0.0, 1.0], (2, 1))
    preds = [row[None, :] for row in np.vstack([inliers, outliers])]
    out = agg.agg_cronus(preds, 0.2)
    assert np.allclose(out.matrix[0], [1.0, 0.0, 0.0], atol=0.02)
    assert out.removed_counts == [2]
    assert out.flagged_samples == []


def test_cronus_robust_mean_beats_plain_mean():
    rng = np.random.default_rng(11)
    inliers = rng.standard_normal((160, 10))
    outliers = np.zeros((40, 10))
    outliers[:, 0] = 50.0
    points = np.vstack([inliers, outliers])
    preds = [row[None, :] for row in points]

    out = agg.agg_cronus(preds, 0.2, filter_iterations=2)
    assert out.removed_counts == [38]
    assert np.linalg.norm(out.matrix[0]) < 1.0
    assert np.linalg.norm(points.mean(axis=0)) > 9.0


def test_cronus_handles_each_sample_independently(rng):
    n, k, c = 6, 4, 3
    preds = [rng.dirichlet(np.ones(c), size=k) for _ in range(n)]
    out = agg.agg_cronus(preds, 0.0)
    # con epsilon 0 no se retira nada
    assert np.allclose(out.matrix, np.mean(preds, axis=0))
    assert out.removed_counts == [0] * k


def test_cronus_early_exit_keeps_low_variance_sample():
    preds = [np.array([[0.5, 0.5]]) + 0.01 * i for i in range(6)]
    out = agg.agg_cronus(preds, 0.3, early_exit=True, threshold=9.0)
    assert out.removed_counts == [0]


def test_cronus_randomized_is_seeded():
    rng = np.random.default_rng(5)
    points = np.vstack([rng.standard_normal((20, 2)), np.full((5, 2), 40.0)])
    preds = [row[None, :] for row in points]
    a = agg.agg_cronus(preds, 0.2, mode="randomized", rng_seed=9)
    b = agg.agg_cronus(preds, 0.2, mode="randomized", rng_seed=9)
    assert np.array_equal(a.matrix, b.matrix)
    assert a.removed_counts == b.removed_counts
    assert a.removed_counts[0] >= 1 or a.flagged_samples == [0]


def test_cronus_randomized_below_threshold_is_mean():
    preds = [np.array([[1.0, 2.0]]) for _ in range(4)]
    out = agg.agg_cronus(preds, 0.2, mode="randomized")
    assert out.matrix.tolist() == [[1.0, 2.0]]
    assert out.removed_counts == [0]


def test_cronus_shape_mismatch_names_party():
    with pytest.raises(DimensionMismatchError) as info:
        agg.agg_cronus([np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((3, 3))], 0.1)
    assert info.value.index == 2


def test_cronus_needs_two_parties():
    with pytest.raises(ValueError):
        agg.agg_cronus([np.zeros((2, 3))], 0.1)


# ---------------------------------------------------------------------------
# Despacho
# ---------------------------------------------------------------------------

def test_unknown_rule():
    with pytest.raises(ConfigError):
        agg.aggregate("geomed", [[0.0], [1.0]])


def test_epsilon_out_of_range():
    with pytest.raises(ConfigError):
        agg.aggregate("median", [[0.0], [1.0]], epsilon=0.5)


def test_dimension_mismatch_reports_index():
    with pytest.raises(DimensionMismatchError) as info:
        agg.aggregate("mean", [[0.0, 1.0], [1.0]])
    assert info.value.index == 1


def test_aggregate_cronus_on_flat_vectors():
    out = agg.aggregate("cronus", [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]], epsilon=0.1)
    assert out.vector.tolist() == [0.0, 1.0]
