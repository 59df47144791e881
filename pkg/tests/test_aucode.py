import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gshead.aucode import (AU_ORDER, NUM_AUS, AUActivationMask, AUCode,
                           AUValidationError, ModulationParams,
                           aggregation_weights, codes_from_array, codes_from_json,
                           codes_to_array, codes_to_json, mask_from_json,
                           mask_to_json, modulate, sequence_modulate)

au_vectors = st.lists(st.floats(0.0, 5.0, allow_nan=False), min_size=NUM_AUS,
                      max_size=NUM_AUS).map(lambda v: AUCode(np.array(v)))
masks = st.lists(st.integers(0, 1), min_size=NUM_AUS, max_size=NUM_AUS).map(
    lambda v: AUActivationMask(np.array(v)))


def test_au_order_is_the_canonical_17():
    assert len(AU_ORDER) == 17
    assert AU_ORDER[0] == "AU01" and AU_ORDER[-1] == "AU45"


def test_code_validation():
    with pytest.raises(AUValidationError):
        AUCode(np.zeros(16))
    with pytest.raises(AUValidationError):
        AUCode(np.full(17, 5.1))
    with pytest.raises(AUValidationError):
        AUCode(np.full(17, np.nan))
    AUCode(np.full(17, 5.0))  # boundary ok


def test_mask_validation():
    with pytest.raises(AUValidationError):
        AUActivationMask(np.full(17, 2))
    m = AUActivationMask.from_active(["AU06", "AU12"])
    assert m.active_units() == ["AU06", "AU12"]


def test_modulation_params_validation():
    with pytest.raises(AUValidationError):
        ModulationParams(enhance=0.0)
    with pytest.raises(AUValidationError):
        ModulationParams(suppress=1.0)
    with pytest.raises(AUValidationError):
        ModulationParams(suppress=-0.1)


def test_weights_zero_code():
    w = aggregation_weights(AUCode.zeros())
    assert np.all(w == 0.0)


def test_weights_single_support():
    vals = np.zeros(17)
    vals[0] = 5.0
    w = aggregation_weights(AUCode(vals), epsilon=1e-6)
    assert w[0] == pytest.approx(5.0 / (5.0 + 1e-6), abs=0)
    assert np.all(w[1:] == 0.0)


def test_weights_uniform_code():
    w = aggregation_weights(AUCode(np.ones(17)))
    assert np.allclose(w, 1.0 / (17.0 + 1e-6))


def test_weights_reject_bad_epsilon():
    with pytest.raises(AUValidationError):
        aggregation_weights(AUCode.zeros(), epsilon=0.0)
    with pytest.raises(AUValidationError):
        aggregation_weights(AUCode.zeros(), epsilon=float("nan"))


@given(au_vectors)
def test_weights_sum_below_one_and_zero_support(code):
    w = aggregation_weights(code)
    total = code.values.sum()
    assert w.sum() == pytest.approx(total / (total + 1e-6))
    assert np.all(w >= 0.0)
    assert np.all(w[code.values == 0.0] == 0.0)


@given(au_vectors)
def test_weights_direction_preserved_under_scaling(code):
    # doubling intensities preserves the weight direction up to the epsilon term
    w1 = aggregation_weights(code, epsilon=1e-12)
    doubled = AUCode.from_clamped(np.minimum(code.values * 2.0, 5.0))
    if not np.allclose(doubled.values, code.values * 2.0):
        return  # clamping engaged; scaling claim does not apply
    w2 = aggregation_weights(doubled, epsilon=1e-12)
    if code.values.sum() > 1e-6:
        np.testing.assert_allclose(w1, w2, atol=1e-9)


def test_modulate_mask_all_ones_scales_up():
    code = AUCode(np.linspace(0.0, 3.0, 17))
    out = modulate(code, AUActivationMask(np.ones(17, dtype=int)),
                   ModulationParams(enhance=0.5, suppress=0.3))
    np.testing.assert_allclose(out.values, np.clip(code.values * 1.5, 0, 5))


def test_modulate_mask_all_zeros_scales_down():
    code = AUCode(np.linspace(0.0, 5.0, 17))
    out = modulate(code, AUActivationMask(np.zeros(17, dtype=int)),
                   ModulationParams(enhance=0.5, suppress=0.3))
    np.testing.assert_allclose(out.values, code.values * 0.7)


def test_modulate_pointwise_substitution():
    vals = np.zeros(17)
    vals[0] = 2.0
    vals[1] = 2.0
    flags = np.zeros(17, dtype=int)
    flags[0] = 1
    out = modulate(AUCode(vals), AUActivationMask(flags),
                   ModulationParams(enhance=0.5, suppress=0.2))
    assert out.values[0] == pytest.approx(3.0)
    assert out.values[1] == pytest.approx(1.6)


def test_modulate_clamps_to_range():
    code = AUCode(np.full(17, 5.0))
    out = modulate(code, AUActivationMask(np.ones(17, dtype=int)),
                   ModulationParams(enhance=2.0, suppress=0.0))
    assert np.all(out.values == 5.0)


@given(au_vectors, masks, st.floats(0.01, 5.0), st.floats(0.01, 4.0))
@settings(max_examples=50)
def test_modulate_monotone_in_enhance(code, mask, alpha, delta):
    lo = modulate(code, mask, ModulationParams(enhance=alpha, suppress=0.0))
    hi = modulate(code, mask, ModulationParams(enhance=alpha + delta, suppress=0.0))
    active = mask.flags == 1
    assert np.all(hi.values[active] >= lo.values[active])
    np.testing.assert_array_equal(hi.values[~active], lo.values[~active])


@given(au_vectors, masks, st.floats(0.0, 0.5), st.floats(0.01, 0.49))
@settings(max_examples=50)
def test_modulate_monotone_decreasing_in_suppress(code, mask, beta, delta):
    lo = modulate(code, mask, ModulationParams(enhance=0.5, suppress=beta + delta))
    hi = modulate(code, mask, ModulationParams(enhance=0.5, suppress=beta))
    inactive = mask.flags == 0
    assert np.all(lo.values[inactive] <= hi.values[inactive])


@given(au_vectors)
def test_modulate_identity_with_zero_mask_and_zero_suppress(code):
    params = ModulationParams(enhance=0.7, suppress=0.0)
    mask = AUActivationMask(np.zeros(17, dtype=int))
    once = modulate(code, mask, params)
    twice = modulate(once, mask, params)
    np.testing.assert_array_equal(once.values, code.values)
    np.testing.assert_array_equal(twice.values, code.values)


def test_sequence_modulate_empty():
    assert sequence_modulate([], AUActivationMask(np.zeros(17, dtype=int)),
                             ModulationParams()) == []


def test_sequence_modulate_identical_frames():
    code = AUCode(np.full(17, 2.0))
    mask = AUActivationMask.from_active(["AU12"])
    out = sequence_modulate([code] * 4, mask, ModulationParams())
    assert len(out) == 4
    for c in out[1:]:
        np.testing.assert_array_equal(c.values, out[0].values)


def test_codes_array_round_trip():
    arr = np.random.default_rng(1).uniform(0, 5, (6, 17))
    codes = codes_from_array(arr)
    np.testing.assert_array_equal(codes_to_array(codes), arr)
    assert codes_to_array([]).shape == (0, 17)


def test_codes_json_round_trip():
    arr = np.random.default_rng(2).uniform(0, 5, (3, 17))
    codes = codes_from_array(arr)
    back = codes_from_json(codes_to_json(codes))
    np.testing.assert_allclose(codes_to_array(back), arr)


def test_codes_json_rejects_reordered_header():
    text = codes_to_json(codes_from_array(np.zeros((1, 17))))
    tampered = text.replace('"AU01", "AU02"', '"AU02", "AU01"')
    with pytest.raises(AUValidationError):
        codes_from_json(tampered)


def test_mask_json_round_trip():
    mask = AUActivationMask.from_active(["AU01", "AU45"])
    back = mask_from_json(mask_to_json(mask))
    np.testing.assert_array_equal(back.flags, mask.flags)
