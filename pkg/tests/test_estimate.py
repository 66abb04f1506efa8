import numpy as np
import pytest

from netexp import covariance as cov
from netexp import estimate as est
from netexp.design import PropensityTable
from netexp.errors import ConfigError, DataError, NetexpWarning, RankDeficientError
from netexp.estimate import Contrast, Dataset, FitSpec
from netexp.exposure import ExposureVector


def dataset(y, t, pi, x=None, support=(0, 1)):
    n = len(y)
    return Dataset(np.arange(n), y, np.zeros((n, 0)) if x is None else x, t, pi, support)


def random_inputs(seed: int, n: int = 60, levels: int = 2, covariates: int = 2):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.full(levels, 3.0), size=n)
    t = np.concatenate([np.arange(levels), rng.integers(0, levels, n - levels)])
    x = rng.normal(size=(n, covariates))
    y = 1 + t + x @ np.arange(1, covariates + 1) + rng.normal(size=n)
    return y, ExposureVector(t, tuple(range(levels))), PropensityTable(pi, tuple(range(levels))), x


def random_dataset(seed: int, n: int = 60, levels: int = 2, covariates: int = 2) -> Dataset:
    y, exposures, pi, x = random_inputs(seed, n, levels, covariates)
    return Dataset.build(y, exposures, pi, np.arange(n), x)


def weighted_lstsq(c, y, w):
    sw = np.sqrt(w)
    return np.linalg.lstsq(c * sw[:, None], y * sw, rcond=None)[0]


def test_hajek():
    ds = dataset([1.0, 3.0], [1, 1], [[0.5, 0.5], [0.75, 0.25]])
    assert est.hajek(ds, 1) == pytest.approx(7 / 3)


def test_horvitz_thompson():
    ds = dataset([1.0, 3.0, 0.0], [1, 1, 0], [[0.5, 0.5], [0.75, 0.25], [0.5, 0.5]])
    assert est.horvitz_thompson(ds, 1) == pytest.approx(14 / 3)
    assert est.one_ht(ds, 1) == pytest.approx(2.0)
    assert est.horvitz_thompson(ds, 0) == 0.0


def test_hajek_empty_cell():
    ds = dataset([1.0, 3.0], [1, 1], [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(DataError, match="No unit has exposure 0"):
        est.hajek(ds, 0)


@pytest.mark.parametrize("seed", range(5))
def test_unadjusted_reproduces_hajek(seed):
    ds = random_dataset(seed, levels=3)
    fit = est.fit(ds, FitSpec.UNADJUSTED)
    expected = [est.hajek(ds, t) for t in range(3)]
    np.testing.assert_allclose(fit.beta, expected, rtol=1e-10)
    assert fit.gamma is None


@pytest.mark.parametrize("seed", range(5))
def test_ht_regression_reproduces_horvitz_thompson(seed):
    ds = random_dataset(seed, levels=3)
    fit = est.fit(ds, FitSpec.HT_TRANSFORMED)
    expected = [est.horvitz_thompson(ds, t) for t in range(3)]
    np.testing.assert_allclose(fit.beta, expected, rtol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_adjusted_fits_match_least_squares(seed):
    ds = random_dataset(seed)
    w = 1 / ds.realized_pi
    z = ds.indicators()

    additive = est.fit(ds, FitSpec.ADDITIVE)
    expected = weighted_lstsq(np.hstack([z, ds.x]), ds.y, w)
    np.testing.assert_allclose(additive.coef, expected, rtol=1e-8, atol=1e-10)
    assert additive.gamma.shape == (2,)

    saturated = est.fit(ds, FitSpec.FULLY_INTERACTED)
    c = np.hstack([z, z[:, [0]] * ds.x, z[:, [1]] * ds.x])
    np.testing.assert_allclose(saturated.coef, weighted_lstsq(c, ds.y, w), rtol=1e-8, atol=1e-10)
    assert saturated.gamma.shape == (2, 2)


def test_bread_inverts_gram():
    fit = est.fit(random_dataset(9), FitSpec.FULLY_INTERACTED)
    gram = fit.design.T @ (fit.weights[:, None] * fit.design)
    np.testing.assert_allclose(fit.bread @ gram, np.eye(len(fit.coef)), atol=1e-8)


def test_additive_without_covariates_is_unadjusted():
    ds = random_dataset(2, covariates=0)
    np.testing.assert_allclose(
        est.fit(ds, FitSpec.ADDITIVE).beta, est.fit(ds, FitSpec.UNADJUSTED).beta
    )


@pytest.mark.parametrize("spec", list(FitSpec))
def test_location_shift(spec):
    ds = random_dataset(4)
    shifted = Dataset(ds.units, ds.y + 5.0, ds.x, ds.t, ds.pi, ds.support, ds.x_names)
    G = Contrast.default(ds.support)
    before = est.fit(ds, spec)
    after = est.fit(shifted, spec)
    if spec != FitSpec.HT_TRANSFORMED:
        np.testing.assert_allclose(after.beta, before.beta + 5.0)
        np.testing.assert_allclose(
            est.contrast_estimate(after, G), est.contrast_estimate(before, G), atol=1e-10
        )
    np.testing.assert_allclose(after.residuals - before.residuals, 0.0, atol=1e-9)


WLS_SPECS = [FitSpec.UNADJUSTED, FitSpec.ADDITIVE, FitSpec.FULLY_INTERACTED]

VECTORS_AFFINE = (
    # scale, shift
    (2.0, 5.0),
    (-0.5, 1.0),
    (3.0, 0.0),
)


@pytest.mark.parametrize("spec", WLS_SPECS)
@pytest.mark.parametrize("a, c", VECTORS_AFFINE)
def test_affine_outcome_transform(spec, a, c):
    ds = random_dataset(5)
    moved = Dataset(ds.units, a * ds.y + c, ds.x, ds.t, ds.pi, ds.support, ds.x_names)
    before, after = est.fit(ds, spec), est.fit(moved, spec)
    np.testing.assert_allclose(after.beta, a * before.beta + c, rtol=1e-9, atol=1e-9)
    if before.gamma is not None:
        np.testing.assert_allclose(after.gamma, a * before.gamma, rtol=1e-9, atol=1e-9)

    G = Contrast.default(ds.support)
    units = np.arange(ds.n)
    band = (np.abs(np.subtract.outer(units, units)) <= 2).astype(np.float64)
    for V_before, V_after in (
        (cov.ehw_cov(before), cov.ehw_cov(after)),
        (cov.hac_cov(before, band), cov.hac_cov(after, band)),
    ):
        np.testing.assert_allclose(V_after, a**2 * V_before, rtol=1e-8, atol=1e-12)
        se_before = cov.contrast_se(V_before, G).se
        np.testing.assert_allclose(cov.contrast_se(V_after, G).se, abs(a) * se_before, rtol=1e-8)


def test_horvitz_thompson_is_not_location_invariant():
    ds = random_dataset(4)
    shifted = Dataset(ds.units, ds.y + 5.0, ds.x, ds.t, ds.pi, ds.support, ds.x_names)
    moved = est.fit(shifted, FitSpec.HT_TRANSFORMED).beta - est.fit(ds, FitSpec.HT_TRANSFORMED).beta
    for t in range(2):
        # the shift is scaled by the HT estimate of 1, which is not exactly 1
        assert moved[t] == pytest.approx(5.0 * est.one_ht(ds, t))
        assert moved[t] == pytest.approx(est.horvitz_thompson(shifted, t) - est.horvitz_thompson(ds, t))
        assert moved[t] != pytest.approx(5.0, abs=1e-6)


@pytest.mark.parametrize("spec", WLS_SPECS)
def test_zero_covariate_column_is_dropped(spec):
    y, exposures, pi, x = random_inputs(6)
    units = np.arange(len(y))
    plain = Dataset.build(y, exposures, pi, units, x)
    with pytest.warns(NetexpWarning, match="constant covariate\\(s\\) x3"):
        padded = Dataset.build(y, exposures, pi, units, np.hstack([x, np.zeros((len(y), 1))]))
    assert padded.x_names == plain.x_names == ("x1", "x2")
    np.testing.assert_allclose(est.fit(padded, spec).coef, est.fit(plain, spec).coef, rtol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_additive_levels_are_adjusted_hajek_means(seed):
    ds = random_dataset(seed, levels=3)
    fit = est.fit(ds, FitSpec.ADDITIVE)
    for t in range(3):
        x_hajek = [
            est.hajek(Dataset(ds.units, ds.x[:, j], ds.x, ds.t, ds.pi, ds.support, ds.x_names), t)
            for j in range(ds.n_covariates)
        ]
        assert fit.beta[t] == pytest.approx(est.hajek(ds, t) - np.dot(x_hajek, fit.gamma), abs=1e-10)


def test_build_centers_and_drops_constant_covariates():
    exposures = ExposureVector(np.array([0, 1, 0, 1]), (0, 1))
    pi = PropensityTable(np.full((4, 2), 0.5), (0, 1))
    x = np.array([[1.0, 7.0], [2.0, 7.0], [3.0, 7.0], [6.0, 7.0]])
    with pytest.warns(NetexpWarning, match="constant covariate\\(s\\) x2"):
        ds = Dataset.build([1, 2, 3, 4], exposures, pi, [0, 1, 2, 3], x)
    assert ds.x_names == ("x1",)
    assert ds.x[:, 0].tolist() == [-2.0, -1.0, 0.0, 3.0]


def test_build_restricts_to_units():
    exposures = ExposureVector(np.array([0, 1, 0, 1]), (0, 1))
    pi = PropensityTable(np.array([[1.0, 0.0], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]), (0, 1))
    ds = Dataset.build([9.0, 2.0, 3.0, 4.0], exposures, pi, [1, 2, 3])
    assert ds.units.tolist() == [1, 2, 3]
    assert ds.y.tolist() == [2.0, 3.0, 4.0]
    assert ds.counts().tolist() == [1, 2]


def test_empty_cell_is_rank_deficient():
    ds = dataset([1.0, 2.0], [1, 1], [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(RankDeficientError, match="cell 0 has 0 unit") as e:
        est.fit(ds, FitSpec.UNADJUSTED)
    assert e.value.column == "t=0"


def test_saturated_needs_enough_units_per_cell():
    x = np.array([[1.0], [-1.0], [0.5], [-0.5]])
    ds = dataset([1.0, 2.0, 3.0, 4.0], [0, 0, 0, 1], np.full((4, 2), 0.5), x)
    with pytest.raises(RankDeficientError, match="at least 2 needed"):
        est.fit(ds, FitSpec.FULLY_INTERACTED)


def test_collinear_covariates():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 1))
    ds = dataset(rng.normal(size=20), np.arange(20) % 2, np.full((20, 2), 0.5), np.hstack([x, 2 * x]))
    with pytest.raises(RankDeficientError, match="rank deficient"):
        est.fit(ds, FitSpec.ADDITIVE)


def test_rank_tolerance_is_relative_to_the_largest_column():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 1))
    y, t, pi = rng.normal(size=20), np.arange(20) % 2, np.full((20, 2), 0.5)
    with pytest.raises(RankDeficientError, match="column x1 is not identified") as e:
        est.fit(dataset(y, t, pi, 1e-7 * x), FitSpec.ADDITIVE)
    assert e.value.column == "x1"
    # the same covariate on a unit scale is identified
    assert est.fit(dataset(y, t, pi, x), FitSpec.ADDITIVE).gamma.shape == (1,)


VECTORS_INVALID_DATASET = (
    ([1.0, np.nan], [0, 1], [[0.5, 0.5], [0.5, 0.5]], DataError, "Outcome of unit 1"),
    ([1.0, 2.0], [0, 1], [[0.5, 0.5], [0.0, 1.0]], DataError, "Unit 1 has realized propensity"),
    ([1.0, 2.0], [0, 2], [[0.5, 0.5], [0.5, 0.5]], ValueError, "outside the support"),
    ([1.0], [0, 1], [[0.5, 0.5], [0.5, 0.5]], ValueError, "one row per unit"),
)


@pytest.mark.parametrize("y, t, pi, exc, match", VECTORS_INVALID_DATASET)
def test_invalid_dataset(y, t, pi, exc, match):
    with pytest.raises(exc, match=match):
        Dataset(np.arange(2), y, np.zeros((2, 0)), t, pi, (0, 1))


def test_factorial_contrast():
    G = Contrast.factorial(2)
    assert G.labels == ("c1", "c2", "c1:c2")
    # support order (0,0), (0,1), (1,0), (1,1)
    mu = np.array([1.0, 2.0, 4.0, 7.0])
    np.testing.assert_allclose(G.matrix @ mu, [4.0, 2.0, 1.0])
    assert Contrast.factorial(3, interactions=False).n_rows == 3
    assert Contrast.factorial(3).n_rows == 6


VECTORS_CONTRAST = (
    ((0, 1), {}, [[-1.0, 1.0]], ("1-0",)),
    (((0, 0), (0, 1), (1, 0), (1, 1)), {}, Contrast.factorial(2).matrix, ("c1", "c2", "c1:c2")),
    ((0, 1), {"kind": "identity"}, np.eye(2), ("mu0", "mu1")),
    ((0, 1), {"kind": "pairwise", "t": 0, "t_prime": 1}, [[1.0, -1.0]], ("0-1",)),
    (
        ((0, 0), (0, 1), (1, 0), (1, 1)),
        {"kind": "pairwise", "t": [1, 1], "t_prime": [0, 0]},
        [[-1.0, 0.0, 0.0, 1.0]],
        ("(1,1)-(0,0)",),
    ),
    ((0, 1), {"rows": [[0.5, 0.5]], "labels": ["avg"]}, [[0.5, 0.5]], ("avg",)),
)


@pytest.mark.parametrize("support, spec, matrix, labels", VECTORS_CONTRAST)
def test_contrast_from_spec(support, spec, matrix, labels):
    G = Contrast.from_spec(spec, support) if spec else Contrast.default(support)
    np.testing.assert_allclose(G.matrix, matrix)
    assert G.labels == labels


VECTORS_BAD_CONTRAST = (
    ({"kind": "pairwise", "t": 2, "t_prime": 0}, "not in the support"),
    ({"kind": "pairwise", "t": 1}, "missing field 't_prime'"),
    ({"kind": "orthogonal"}, "Unknown contrast kind"),
    ({"rows": [[1.0, float("nan")]]}, "finite"),
    ({"rows": [[1.0, 0.0]], "labels": ["a", "b"]}, "One label per contrast row"),
)


@pytest.mark.parametrize("spec, match", VECTORS_BAD_CONTRAST)
def test_contrast_from_spec_errors(spec, match):
    with pytest.raises(ConfigError, match=match):
        Contrast.from_spec(spec, (0, 1))


def test_contrast_width_must_match_fit():
    fit = est.fit(random_dataset(1), FitSpec.UNADJUSTED)
    with pytest.raises(ValueError, match="3 columns"):
        est.contrast_estimate(fit, Contrast(np.ones((1, 3))))


def test_continuous_mu_hat():
    y, t_exp, prob = [1.0, 2.0, 10.0], [0.1, 0.2, 5.0], [0.5, 0.25, 1.0]
    assert est.continuous_mu_hat(y, t_exp, prob, 0.0, 0.5) == pytest.approx(5 / 3)
    with pytest.raises(DataError, match="No unit has exposure within"):
        est.continuous_mu_hat(y, t_exp, prob, 2.0, 0.5)
    with pytest.raises(ValueError, match="positive"):
        est.continuous_mu_hat(y, t_exp, prob, 0.0, 0.0)


def test_continuous_wls_slope():
    t_exp = np.array([0.0, 1.0, 2.0, 4.0])
    mean_t = np.array([1.0, 1.0, 1.5, 2.0])
    var_t = np.array([1.0, 2.0, 0.5, 4.0])
    y = 3.0 * (t_exp - mean_t)
    assert est.continuous_wls_slope(y, t_exp, mean_t, var_t) == pytest.approx(3.0)
    with pytest.raises(DataError, match="Unit 1 has zero exposure variance"):
        est.continuous_wls_slope(y, t_exp, mean_t, [1.0, 0.0, 1.0, 1.0])
    with pytest.raises(DataError, match="slope undefined"):
        est.continuous_wls_slope(y, mean_t, mean_t, var_t)


def test_continuous_mu_hat_with_every_unit_in_window():
    rng = np.random.default_rng(2)
    y, t_exp = rng.normal(size=50), rng.uniform(-1.0, 1.0, 50)
    assert est.continuous_mu_hat(y, t_exp, np.ones(50), 0.0, 1.0) == pytest.approx(y.mean())


@pytest.mark.slow
def test_continuous_wls_slope_is_centered_on_the_true_slope():
    rng = np.random.default_rng(11)
    n, draws, slope = 200, 10_000, 1.5
    mean_t = rng.uniform(0.0, 2.0, n)
    var_t = rng.uniform(0.2, 1.0, n)
    intercepts = rng.normal(size=n)
    estimates = np.empty(draws)
    for r in range(draws):
        t_exp = mean_t + np.sqrt(var_t) * rng.standard_normal(n)
        estimates[r] = est.continuous_wls_slope(intercepts + slope * t_exp, t_exp, mean_t, var_t)
    mc_se = estimates.std(ddof=1) / np.sqrt(draws)
    assert abs(estimates.mean() - slope) <= 3 * mc_se


VECTORS_SPEC_NAMES = (
    ("unadjusted", FitSpec.UNADJUSTED),
    ("Add", FitSpec.ADDITIVE),
    ("sat", FitSpec.FULLY_INTERACTED),
    ("fully_interacted", FitSpec.FULLY_INTERACTED),
    ("HT", FitSpec.HT_TRANSFORMED),
)


@pytest.mark.parametrize("name, spec", VECTORS_SPEC_NAMES)
def test_fit_spec_parse(name, spec):
    assert FitSpec.parse(name) is spec


def test_fit_spec_parse_unknown():
    with pytest.raises(ConfigError, match="Unknown regression specification 'ols'"):
        FitSpec.parse("ols")
