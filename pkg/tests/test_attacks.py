import math

import numpy as np
import pytest

from fedsim import attacks
from fedsim import model as mdl
from fedsim.config import ThreatSpec
from fedsim.errors import AttackInfeasibleError, ConfigError, DimensionMismatchError


def _quantile_by_bisection(p: float) -> float:
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if 0.5 * (1 + math.erf(mid / math.sqrt(2))) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def test_label_flip_rotates_labels():
    data = mdl.Dataset(np.zeros((4, 2)), [0, 1, 2, 2])
    flipped = attacks.attack_label_flip(data, 3)
    assert flipped.labels.tolist() == [1, 2, 0, 0]
    assert data.labels.tolist() == [0, 1, 2, 2]


def test_label_flip_rejects_out_of_range_label():
    with pytest.raises(ValueError):
        attacks.attack_label_flip(mdl.Dataset(np.zeros((2, 2)), [0, 3]), 3)


def test_paf_is_mean_plus_magnitude():
    out = attacks.attack_paf([[0.0, 2.0], [2.0, 4.0]], m=3, magnitude=10.0)
    assert len(out) == 3
    for upd in out.updates:
        assert upd.tolist() == [11.0, 13.0]


@pytest.mark.parametrize("n,m", [(16, 1), (16, 3), (20, 4), (28, 5)])
def test_lie_z_matches_normal_quantile(n, m):
    s = math.floor(n / 2 + 1) - m
    expected = _quantile_by_bisection((n - s) / n)
    assert attacks.lie_z(n, m) == pytest.approx(expected, abs=1e-9)


def test_lie_infeasible_when_p_leaves_unit_interval():
    with pytest.raises(AttackInfeasibleError):
        attacks.lie_z(4, 3)
    with pytest.raises(AttackInfeasibleError):
        attacks.lie_z(2, 0)


def test_lie_shifts_by_population_std():
    benign = [[0.0, 1.0], [2.0, 1.0]]
    out = attacks.attack_lie(benign, n=16, m=3)
    z = attacks.lie_z(16, 3)
    assert np.allclose(out.updates[0], [1.0 + z, 1.0])
    assert len(out) == 3


def test_lie_needs_two_benign():
    with pytest.raises(ValueError):
        attacks.attack_lie([[1.0]], n=4, m=1)


def test_ofom_second_update_is_mean_with_first(rng):
    benign = rng.standard_normal((6, 3))
    out = attacks.attack_ofom(list(benign), m=3, magnitude=100.0)
    theta_1, theta_2 = out.updates[0], out.updates[1]
    assert np.allclose(theta_1, benign.mean(axis=0) + 100.0)
    assert np.allclose(theta_2, np.vstack([benign, theta_1]).mean(axis=0))
    assert np.array_equal(out.updates[2], theta_2)
    # el agregado por media de todas las partes cae exactamente en theta_2
    everything = np.vstack([benign, *out.updates[:2]])
    assert np.allclose(everything.mean(axis=0), theta_2)


def test_ofom_needs_two_malicious():
    with pytest.raises(AttackInfeasibleError):
        attacks.attack_ofom([[0.0]], m=1, magnitude=1.0)


def test_grad_ascent_zero_gamma_is_identity():
    params = mdl.init_params(mdl.Architecture(3, (4,), 2), 0)
    targets = mdl.Dataset(np.ones((4, 3)), [0, 1, 0, 1])
    out = attacks.attack_grad_ascent(params, targets, 0.0)
    assert np.array_equal(mdl.flatten(out), mdl.flatten(params))


def test_grad_ascent_raises_target_loss(rng):
    params = mdl.init_params(mdl.Architecture(3, (4,), 2), 1)
    targets = mdl.Dataset(rng.standard_normal((10, 3)), rng.integers(0, 2, size=10))
    out = attacks.attack_grad_ascent(params, targets, 0.05)
    assert mdl.mean_loss(out, targets) > mdl.mean_loss(params, targets)


def test_grad_ascent_rejects_empty_targets():
    params = mdl.init_params(mdl.Architecture(3, (), 2), 0)
    with pytest.raises(ValueError):
        attacks.attack_grad_ascent(params, mdl.Dataset(np.zeros((0, 3)), []), 1.0)


# ---------------------------------------------------------------------------
# craft_for_protocol
# ---------------------------------------------------------------------------

def test_craft_keeps_benign_shape():
    benign = [np.full((2, 3), float(i)) for i in range(4)]
    threat = ThreatSpec(attack="paf", total_parties=6, malicious_count=2, paf_magnitude=1.0)
    out = attacks.craft_for_protocol(threat, benign)
    assert len(out) == 2
    assert out.updates[0].shape == (2, 3)
    assert np.allclose(out.updates[0], 2.5)


def test_craft_without_attack_is_empty():
    out = attacks.craft_for_protocol(ThreatSpec(attack="none"), [np.zeros(2)])
    assert len(out) == 0


def test_craft_lie_uses_total_parties():
    benign = [np.array([0.0]), np.array([2.0])]
    threat = ThreatSpec(attack="lie", total_parties=16, malicious_count=3)
    out = attacks.craft_for_protocol(threat, benign)
    assert out.updates[0][0] == pytest.approx(1.0 + attacks.lie_z(16, 3))


def test_craft_label_flip_needs_trainer():
    threat = ThreatSpec(attack="label_flip", total_parties=3, malicious_count=1)
    with pytest.raises(ConfigError):
        attacks.craft_for_protocol(threat, [np.zeros(2), np.ones(2)])
    ctx = attacks.AttackContext(train_flipped=lambda: [np.full(2, 7.0)])
    out = attacks.craft_for_protocol(threat, [np.zeros(2), np.ones(2)], ctx)
    assert out.updates[0].tolist() == [7.0, 7.0]


def test_craft_rejects_wrong_sized_update():
    threat = ThreatSpec(attack="label_flip", total_parties=3, malicious_count=1)
    ctx = attacks.AttackContext(train_flipped=lambda: [np.zeros(5)])
    with pytest.raises(DimensionMismatchError):
        attacks.craft_for_protocol(threat, [np.zeros(2), np.ones(2)], ctx)


def test_craft_grad_ascent_emits_through_context():
    arch = mdl.Architecture(2, (), 2)
    params = mdl.init_params(arch, 0)
    targets = mdl.Dataset(np.ones((2, 2)), [0, 1])
    threat = ThreatSpec(attack="grad_ascent", total_parties=3, malicious_count=1, grad_gamma=0.5)
    threat.target_points = targets
    ctx = attacks.AttackContext(observed_params=params, emit=mdl.flatten)
    benign = [mdl.flatten(params), mdl.flatten(params)]
    out = attacks.craft_for_protocol(threat, benign, ctx)
    expected = mdl.flatten(attacks.attack_grad_ascent(params, targets, 0.5))
    assert np.allclose(out.updates[0], expected)


def test_threat_spec_rejects_malicious_majority():
    with pytest.raises(ValueError):
        ThreatSpec(attack="paf", total_parties=4, malicious_count=4)
