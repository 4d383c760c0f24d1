import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restyle.attention import (
    AttentionWeights,
    FeatureMap,
    RegionControl,
    addition_as_rearranged,
    apply_region_control,
    correction_term_C,
    naive_style_cross,
    rearranged_attention,
    scaled_logits,
    self_attention,
    simple_addition,
    style_mass,
)
from restyle.numerics import NEG_LARGE, SeededRng, softmax_rows


def rand_instance(seed, n_q=4, n_k=4, d=2):
    rng = SeededRng(seed)
    return (rng.normal((n_q, d)), rng.normal((n_k, d)), rng.normal((n_k, d)),
            rng.normal((n_k, d)), rng.normal((n_k, d)), 1.0 / np.sqrt(d))


# ---------------------------------------------------------------- self attention

def test_self_attention_single_key_saturates():
    q = np.array([[0.3, -2.0]])
    k = np.array([[5.0, 1.0]])
    v = np.array([[7.0, -1.0]])
    np.testing.assert_allclose(self_attention(q, k, v, 0.5), v)


def test_self_attention_uniform_weights_give_column_mean():
    q = np.zeros((2, 3))
    k = SeededRng(0).normal((5, 3))
    v = SeededRng(1).normal((5, 3))
    out = self_attention(q, k, v, 1.0)
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)))


def test_self_attention_matches_two_step_oracle():
    q, k, v, _, _, scale = rand_instance(3)
    oracle = softmax_rows(q @ k.T * scale) @ v
    np.testing.assert_allclose(self_attention(q, k, v, scale), oracle, atol=1e-12)


def test_self_attention_shape_mismatch():
    with pytest.raises(ValueError):
        self_attention(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros((5, 3)), 1.0)


# ------------------------------------------------------------------- naive cross

def test_naive_cross_degenerate_style_equals_self():
    q, k, v, _, _, scale = rand_instance(4)
    np.testing.assert_array_equal(naive_style_cross(q, k, v, scale),
                                  self_attention(q, k, v, scale))


def test_naive_cross_single_style_token():
    q = SeededRng(5).normal((3, 2))
    k_s = np.array([[1.0, 2.0]])
    v_s = np.array([[9.0, 9.0]])
    out = naive_style_cross(q, k_s, v_s, 1.0)
    np.testing.assert_allclose(out, np.tile(v_s, (3, 1)))


def test_naive_cross_matches_oracle():
    rng = SeededRng(6)
    q, k_s, v_s = rng.normal((3, 2)), rng.normal((2, 2)), rng.normal((2, 2))
    oracle = softmax_rows(q @ k_s.T / np.sqrt(2)) @ v_s
    np.testing.assert_allclose(naive_style_cross(q, k_s, v_s, 1 / np.sqrt(2)), oracle, atol=1e-12)


# --------------------------------------------------------------- simple addition

def test_simple_addition_endpoints():
    q, k_s, v_s, k_c, v_c, scale = rand_instance(7)
    np.testing.assert_array_equal(simple_addition(q, k_s, v_s, k_c, v_c, scale, 0.0),
                                  self_attention(q, k_c, v_c, scale))
    np.testing.assert_array_equal(simple_addition(q, k_s, v_s, k_c, v_c, scale, 1.0),
                                  naive_style_cross(q, k_s, v_s, scale))


def test_simple_addition_single_token_pathology():
    # with one style and one content token both softmaxes saturate, so the
    # mix ignores the logits entirely
    q = np.array([[3.0]])
    out = simple_addition(q, np.array([[10.0]]), np.array([[4.0]]),
                          np.array([[-10.0]]), np.array([[8.0]]), 1.0, 0.5)
    np.testing.assert_allclose(out, [[6.0]])


def test_simple_addition_lambda_out_of_range():
    q, k_s, v_s, k_c, v_c, scale = rand_instance(8)
    with pytest.raises(ValueError):
        simple_addition(q, k_s, v_s, k_c, v_c, scale, 1.5)


# ------------------------------------------------------------------- rearranged

def test_rearranged_worked_single_token_example():
    out, weights = rearranged_attention(
        np.array([[1.0]]), np.array([[0.0]]), np.array([[0.0]]),
        [(np.array([[1.0]]), np.array([[2.0]]))], 1.0, lambda_style=1.0)
    np.testing.assert_allclose(weights.matrix, [[0.7310585786, 0.2689414214]], atol=1e-9)
    np.testing.assert_allclose(out, [[1.4621171573]], atol=1e-9)
    np.testing.assert_allclose(style_mass(weights), [0.7310585786], atol=1e-9)


def test_rearranged_empty_mask_reduces_to_self_attention():
    q, k_s, v_s, k_c, v_c, scale = rand_instance(9)
    control = RegionControl(mode="hard", mask=np.zeros((4, 4), dtype=bool))
    out, weights = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], scale,
                                        lambda_style=1.2, control=control)
    np.testing.assert_allclose(out, self_attention(q, k_c, v_c, scale), atol=1e-9)
    np.testing.assert_array_equal(style_mass(weights), np.zeros(4))


def test_rearranged_single_style_matches_explicit_two_block_formula():
    q, k_s, v_s, k_c, v_c, scale = rand_instance(10)
    lam = 1.2
    out, _ = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], scale, lambda_style=lam)
    explicit = softmax_rows(np.concatenate([lam * (q @ k_s.T * scale), q @ k_c.T * scale],
                                           axis=1)) @ np.concatenate([v_s, v_c])
    np.testing.assert_array_equal(out, explicit)


def test_rearranged_no_styles_is_self_attention():
    q, _, _, k_c, v_c, scale = rand_instance(11)
    out, weights = rearranged_attention(q, k_c, v_c, [], scale)
    np.testing.assert_array_equal(out, self_attention(q, k_c, v_c, scale))
    np.testing.assert_array_equal(style_mass(weights), np.zeros(4))


def test_rearranged_control_without_styles_rejected():
    q, _, _, k_c, v_c, scale = rand_instance(12)
    with pytest.raises(ValueError):
        rearranged_attention(q, k_c, v_c, [], scale,
                             control=RegionControl(mode="hard", mask=np.ones((4, 0), dtype=bool)))


def test_rearranged_negative_lambda_rejected():
    q, k_s, v_s, k_c, v_c, scale = rand_instance(13)
    with pytest.raises(ValueError):
        rearranged_attention(q, k_c, v_c, [(k_s, v_s)], scale, lambda_style=-0.1)


def test_rearranged_duplicate_styles_with_normalization():
    q, k_s, v_s, k_c, v_c, scale = rand_instance(14)
    one, _ = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], scale, normalize_multi=True)
    two, _ = rearranged_attention(q, k_c, v_c, [(k_s, v_s), (k_s, v_s)], scale,
                                  normalize_multi=True)
    np.testing.assert_allclose(two, one, atol=1e-9)


def test_mask_dominates_any_lambda():
    # control applies after lambda scaling, so masked entries stay masked
    q, k_s, v_s, k_c, v_c, scale = rand_instance(15)
    control = RegionControl(mode="hard", mask=np.zeros((4, 4), dtype=bool))
    for lam in (0.0, 1.2, 50.0):
        out, _ = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], scale,
                                      lambda_style=lam, control=control)
        np.testing.assert_allclose(out, self_attention(q, k_c, v_c, scale), atol=1e-9)


# -------------------------------------------------------------- correction term

def test_correction_term_hand_example():
    # d=1, dim_scale=1: style logit 2, content logit 0 -> C = ln(e^0/e^2) = -2
    c = correction_term_C(np.array([[1.0]]), np.array([[2.0]]), np.array([[0.0]]), 1.0)
    np.testing.assert_allclose(c, [-2.0], atol=1e-12)


def test_correction_term_zero_for_identical_keys():
    q, k_s, _, _, _, scale = rand_instance(16)
    np.testing.assert_allclose(correction_term_C(q, k_s, k_s, scale), np.zeros(4), atol=1e-12)


def test_addition_as_rearranged_identity_100_instances():
    rng = SeededRng(17)
    worst = 0.0
    for _ in range(100):
        n_q = int(rng.integers(1, 17))
        n_k = int(rng.integers(1, 17))
        d = int(rng.integers(1, 9))
        scale = 1.0 / np.sqrt(d)
        lim = np.sqrt(5.0 / scale / d)
        q = (rng.uniform((n_q, d)) * 2 - 1) * lim
        k_s = (rng.uniform((n_k, d)) * 2 - 1) * lim
        k_c = (rng.uniform((n_k, d)) * 2 - 1) * lim
        v_s, v_c = rng.normal((n_k, d)), rng.normal((n_k, d))
        a = addition_as_rearranged(q, k_s, v_s, k_c, v_c, scale)
        b = simple_addition(q, k_s, v_s, k_c, v_c, scale, 0.5)
        worst = max(worst, float(np.abs(a - b).max()))
    assert worst <= 1e-9


def test_addition_as_rearranged_trivial_equal_logits():
    out = addition_as_rearranged(np.array([[1.0]]), np.array([[1.0]]), np.array([[3.0]]),
                                 np.array([[1.0]]), np.array([[5.0]]), 1.0)
    np.testing.assert_allclose(out, [[4.0]], atol=1e-12)


def test_addition_as_rearranged_style_shift_cancels():
    # q = ones so adding a constant to k_s shifts every style logit by it
    rng = SeededRng(18)
    q = np.ones((3, 1))
    k_s, v_s = rng.normal((4, 1)), rng.normal((4, 1))
    k_c, v_c = rng.normal((4, 1)), rng.normal((4, 1))
    base = addition_as_rearranged(q, k_s, v_s, k_c, v_c, 1.0)
    shifted = addition_as_rearranged(q, k_s + 3.7, v_s, k_c, v_c, 1.0)
    np.testing.assert_allclose(shifted, base, atol=1e-9)


def test_rewritten_addition_style_mass_is_exactly_lambda():
    q, k_s, v_s, k_c, v_c, scale = rand_instance(19)
    z_s = scaled_logits(q, k_s, scale) + correction_term_C(q, k_s, k_c, scale)[:, None]
    z_c = scaled_logits(q, k_c, scale)
    w = softmax_rows(np.concatenate([z_s, z_c], axis=1))
    weights = AttentionWeights(w, [("style", slice(0, 4)), ("content", slice(4, 8))])
    np.testing.assert_allclose(style_mass(weights), np.full(4, 0.5), atol=1e-9)


# -------------------------------------------------------------------- properties

@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_row_stochastic_for_random_instances(seed):
    q, k_s, v_s, k_c, v_c, scale = rand_instance(seed)
    for lam in (0.0, 0.5, 1.2, 2.0):
        _, w = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], scale, lambda_style=lam)
        np.testing.assert_allclose(w.matrix.sum(axis=1), 1.0, atol=1e-9)
        assert (w.matrix >= 0).all() and (w.matrix <= 1).all()


def test_lambda_monotone_style_mass():
    rng = SeededRng(20)
    q = rng.normal((6, 4))
    k_s = q + 0.1 * rng.normal((6, 4))   # positively correlated style keys
    k_c, v_c = rng.normal((6, 4)), rng.normal((6, 4))
    v_s = rng.normal((6, 4))
    masses = []
    for lam in (0.0, 0.5, 1.0, 1.2, 1.5, 2.0):
        _, w = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], 0.5, lambda_style=lam)
        masses.append(style_mass(w).mean())
    assert all(a <= b + 1e-12 for a, b in zip(masses, masses[1:]))


def test_adaptive_mass_drains_with_style_logit_shift():
    rng = SeededRng(21)
    q = np.ones((5, 1))
    k_c, v_c = rng.normal((8, 1)), rng.normal((8, 1))
    v_s = rng.normal((8, 1))
    masses = []
    for c in (0.0, 2.0, 4.0, 8.0):
        k_s = rng_free = np.zeros((8, 1)) - c   # style logits exactly -c
        _, w = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], 1.0)
        masses.append(style_mass(w).mean())
    assert all(a > b for a, b in zip(masses, masses[1:]))
    assert masses[-1] < 0.01


# ---------------------------------------------------------------- region control

def test_region_control_full_mask_is_identity():
    logits = SeededRng(22).normal((4, 6))
    control = RegionControl(mode="hard", mask=np.ones((4, 6), dtype=bool))
    np.testing.assert_array_equal(apply_region_control(logits, control), logits)


def test_region_control_half_mask_sets_neg_large():
    logits = np.zeros((2, 8))
    mask = np.zeros((2, 8), dtype=bool)
    mask[:, 4:] = True   # only right-half style keys stay live
    out = apply_region_control(logits, RegionControl(mode="hard", mask=mask))
    assert (out[:, :4] == NEG_LARGE).all()
    assert (out[:, 4:] == 0).all()


def test_region_control_shape_mismatch():
    with pytest.raises(ValueError):
        apply_region_control(np.zeros((2, 3)),
                             RegionControl(mode="hard", mask=np.ones((3, 2), dtype=bool)))


def test_linear_gradient_monotone_style_mass():
    h, w = 1, 8
    n_q = h * w
    q = np.ones((n_q, 1))
    k_s, v_s = np.zeros((3, 1)), np.ones((3, 1))
    k_c, v_c = np.zeros((4, 1)), np.zeros((4, 1))
    control = RegionControl(mode="linear_gradient", axis="x", span=(0.0, 1.0),
                            query_spatial=(h, w))
    _, weights = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], 1.0, control=control)
    mass = style_mass(weights)
    assert all(a <= b + 1e-12 for a, b in zip(mass, mass[1:]))
    assert mass[0] < 1e-20         # span start is effectively fully masked
    assert mass[-1] > 100 * max(mass[0], 1e-30)


def test_linear_gradient_offsets_monotone_from_neg_large():
    control = RegionControl(mode="linear_gradient", axis="y", span=(0.2, 1.0),
                            query_spatial=(6, 1))
    offs = control.query_offsets()
    assert offs[0] == NEG_LARGE    # span start is -LARGE exactly
    assert all(a < b for a, b in zip(offs, offs[1:]))
    assert offs[-1] <= 0


def test_feature_map_spatial_invariant():
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((5, 2)), (2, 2))
