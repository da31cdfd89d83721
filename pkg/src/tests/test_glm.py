"""Tests for the per-feature GLM confound tests and the mask."""

import numpy as np
import pytest
from scipy import stats

from ..analysis.glm import (
    ConfoundMask,
    FeatureMatrix,
    GlmDesign,
    alpha_sweep,
    build_confound_mask,
    confounder_group_differences,
    fit_glm,
    test_feature as run_feature_test,
)
from ..utils.errors import ContractError, DegreesOfFreedomError, ShapeError, SingularDesignError


def normal_equations_oracle(y, s, z):
    """Textbook OLS: beta = (X'X)^-1 X'y, scipy t survival function for p."""
    x = np.column_stack([np.ones(len(s)), s, z])
    xtx_inv = np.linalg.inv(x.T @ x)
    beta = xtx_inv @ (x.T @ y)
    residual = y - x @ beta
    dof = len(y) - x.shape[1]
    se = np.sqrt(np.diag(xtx_inv) * (residual @ residual) / dof)
    t = beta / se
    return beta, se, t, 2.0 * stats.t.sf(np.abs(t), dof)


def test_matches_oracle_on_random_instances(rng):
    for _ in range(100):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(k + 4, 51))
        s = rng.uniform(0.0, 1.0, size=n)
        z = rng.normal(size=(n, k))
        y = rng.normal(size=n) + z @ rng.normal(size=k)
        fit = fit_glm(y, s, z)
        beta, se, t, p = normal_equations_oracle(y, s, z)
        assert fit.residual_dof == n - k - 2
        assert np.allclose(fit.beta, beta, rtol=1e-10, atol=1e-10)
        assert np.allclose(fit.se, se, rtol=1e-10, atol=1e-10)
        assert np.allclose(fit.t_stats, t, rtol=1e-9, atol=1e-10)
        assert np.allclose(fit.p_values, p, rtol=1e-8, atol=1e-10)


def test_small_worked_example():
    s = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    z = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    f = np.array([1.1, 1.9, 3.2, 3.8, 5.1])
    # z = 1 + 4s exactly; the perturbation keeps the design full rank
    z = z + np.array([0.0, 0.1, -0.2, 0.05, 0.0])
    fit = fit_glm(f, s, z)
    beta, se, t, p = normal_equations_oracle(f, s, z.reshape(-1, 1))
    assert fit.residual_dof == 2
    assert np.allclose(fit.beta, beta, rtol=1e-10, atol=1e-10)
    assert np.allclose(fit.se, se, rtol=1e-10, atol=1e-10)
    assert np.allclose(fit.p_values, p, rtol=1e-9, atol=1e-10)


def test_collinear_design_names_column():
    s = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    z = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    with pytest.raises(SingularDesignError) as info:
        fit_glm(np.arange(5.0), s, z, confounder_names=["sigma_B"])
    assert info.value.column == "sigma_B"


def test_constant_confounder_is_singular(rng):
    with pytest.raises(SingularDesignError) as info:
        fit_glm(rng.normal(size=10), rng.normal(size=10), np.full(10, 3.0), ["age"])
    assert info.value.column == "age"


def test_too_few_observations():
    with pytest.raises(DegreesOfFreedomError):
        fit_glm(np.arange(4.0), np.arange(4.0), np.ones((4, 2)))


def test_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        fit_glm(rng.normal(size=9), rng.normal(size=10), rng.normal(size=(10, 2)))


def test_constant_response(rng):
    s = rng.uniform(size=20)
    z = rng.normal(size=(20, 2))
    fit = fit_glm(np.full(20, 2.5), s, z)
    assert fit.degenerate
    assert fit.beta[0] == pytest.approx(2.5)
    assert np.allclose(fit.beta[1:], 0.0, atol=1e-8)
    assert np.array_equal(fit.t_stats[2:], [0.0, 0.0])
    assert np.array_equal(fit.p_values[2:], [1.0, 1.0])


def test_residuals_orthogonal_to_design(rng):
    n = 200
    s = rng.normal(size=n)
    z = rng.normal(size=(n, 3))
    y = rng.normal(size=n)
    fit = fit_glm(y, s, z)
    x = np.column_stack([np.ones(n), s, z])
    residual = y - x @ fit.beta
    assert np.abs(x.T @ residual).max() <= 1e-8 * n


def test_affine_rescaling_of_confounder(rng):
    n = 60
    s = rng.uniform(size=n)
    z = rng.normal(size=(n, 2))
    features = np.column_stack([
        0.3 * z[:, 0] + rng.normal(size=n),
        rng.normal(size=n),
        s + 0.2 * z[:, 1] + rng.normal(scale=0.5, size=n),
    ])
    scaled = z.copy()
    scaled[:, 0] = 10.0 * z[:, 0] + 7.0
    for j in range(features.shape[1]):
        a = fit_glm(features[:, j], s, z)
        b = fit_glm(features[:, j], s, scaled)
        assert b.beta[2] == pytest.approx(a.beta[2] / 10.0, rel=1e-9)
        assert np.allclose(a.t_stats[2:], b.t_stats[2:], rtol=1e-9, atol=0)
        assert np.allclose(a.p_values[2:], b.p_values[2:], rtol=0, atol=1e-10)
    mask_a = build_confound_mask(features, s, z, 0.05)
    mask_b = build_confound_mask(features, s, scaled, 0.05)
    assert np.array_equal(mask_a.bits, mask_b.bits)


def test_feature_equal_to_confounder_is_confounded(rng):
    n = 100
    s = rng.uniform(size=n)
    z = rng.normal(size=(n, 2))
    f = z[:, 1] + rng.normal(scale=1e-6, size=n)
    result = run_feature_test(f, s, z, 0.05)
    assert result.confounded
    assert result.confounder_p_values[1] < 1e-12


def test_noise_feature_is_not_confounded_at_tiny_alpha():
    rng = np.random.default_rng(512)
    n = 512
    s = rng.uniform(size=n)
    z = rng.normal(size=(n, 2))
    result = run_feature_test(rng.normal(size=n), s, z, 1e-9)
    assert not result.confounded
    assert result.confounder_p_values.min() > 1e-9


def test_alpha_must_be_inside_unit_interval(rng):
    s, z, f = rng.uniform(size=10), rng.normal(size=(10, 1)), rng.normal(size=10)
    for alpha in (0.0, 1.0, -0.1):
        with pytest.raises(ContractError):
            run_feature_test(f, s, z, alpha)


def test_strict_inequality_at_alpha(rng):
    n = 40
    s = rng.uniform(size=n)
    z = rng.normal(size=(n, 1))
    f = 0.4 * z[:, 0] + rng.normal(size=n)
    p = fit_glm(f, s, z).confounder_p_values[0]
    assert not run_feature_test(f, s, z, p).confounded
    assert run_feature_test(f, s, z, min(0.999, np.nextafter(p, 1.0))).confounded


def make_features(rng, n=80):
    s = rng.uniform(size=n)
    z = rng.normal(size=(n, 2))
    features = np.column_stack([
        2.0 * z[:, 0] + rng.normal(size=n),      # confounded by z0
        rng.normal(size=n),                      # unrelated
        np.full(n, 4.0),                         # zero variance
        s + rng.normal(scale=0.1, size=n),       # score only
        -1.5 * z[:, 1] + rng.normal(size=n),     # confounded by z1
    ])
    return features, s, z


def test_mask_semantics(rng):
    features, s, z = make_features(rng)
    mask = build_confound_mask(FeatureMatrix(features, "m"), s, z, 0.05, confounder_names=["z0", "z1"])
    assert mask.bits[0] == 0 and mask.bits[4] == 0
    assert mask.bits[2] == 1 and mask.zero_variance == [2]
    assert mask.confounder_names == ["z0", "z1"]
    for j in range(len(mask)):
        if j in mask.zero_variance:
            continue
        assert (mask.bits[j] == 0) == (mask.min_p[j] < 0.05)
    assert int(mask.bits.sum()) == len(mask) - mask.count_below(0.05)
    assert mask.as_bitstring() == "".join(str(b) for b in mask.bits)


def test_mask_all_ones_at_tiny_alpha(rng):
    features, s, z = make_features(rng)
    noise = features[:, [1, 2]]
    mask = build_confound_mask(noise, s, z, 1e-300)
    assert mask.as_bitstring() == "11"


def test_bonferroni_divides_alpha(rng):
    features, s, z = make_features(rng)
    mask = build_confound_mask(features, s, z, 0.05, bonferroni=True)
    assert mask.effective_alpha == pytest.approx(0.05 / (5 * 2))
    plain = build_confound_mask(features, s, z, 0.05)
    assert mask.confounded_count <= plain.confounded_count


def test_non_finite_column_is_flagged_not_fatal(rng):
    features, s, z = make_features(rng)
    features[3, 1] = np.nan
    mask = build_confound_mask(features, s, z, 0.05)
    assert 1 in mask.failed
    assert mask.bits[1] == 1
    assert mask.bits[0] == 0


def test_alpha_sweep_counts(rng):
    features, s, z = make_features(rng)
    mask = build_confound_mask(features, s, z, 0.05)
    sweep = alpha_sweep(mask, n_confounders=2)
    assert set(sweep) == {"0.05", "0.01", "0.001", "bonferroni_0.05"}
    assert sweep["0.05"] == mask.confounded_count
    assert sweep["0.05"] >= sweep["0.01"] >= sweep["0.001"]


def test_mask_from_bits():
    mask = ConfoundMask.from_bits([1, 0, 1])
    assert mask.as_bitstring() == "101"
    assert mask.confounded_indices == [1]
    with pytest.raises(ContractError):
        ConfoundMask.from_bits([2, 0])


def test_design_is_shared_across_columns(rng):
    s = rng.uniform(size=30)
    z = rng.normal(size=(30, 2))
    design = GlmDesign(s, z, ["a", "b"])
    y = rng.normal(size=30)
    assert np.array_equal(design.fit(y).beta, fit_glm(y, s, z, ["a", "b"]).beta)
    assert design.covariate_names == ["intercept", "score", "a", "b"]


def test_group_differences(tiny_dataset):
    differences = confounder_group_differences(tiny_dataset, ["sigma_B", "sigma_C"])
    assert set(differences) == {"sigma_B", "sigma_C"}
    for t, p, dof in differences.values():
        assert dof == len(tiny_dataset) - 2
        assert 0.0 <= p <= 1.0
