import numpy as np
import pytest

from imcmc.errors import InvalidParameterError, NonErgodicError
from imcmc.measures import dobrushin_coefficient
from imcmc.models import FK3_L, fk3, random_kernel
from imcmc.resolvent import (
    VariationLog,
    alpha_interval,
    alpha_of,
    certify_constants,
    constant_family,
    default_functions,
    direct_phi_family,
    find_n0,
    invariant_measure,
    lipschitz_certificates,
    mixture_family,
    operator_norm,
    poisson_series,
    poisson_solve,
    run_inhomogeneous,
    series_terms_for,
)

TWO = np.array([[0.9, 0.1], [0.2, 0.8]])
RANK_ONE = np.tile([0.2, 0.3, 0.5], (3, 1))


def test_invariant_measure_examples():
    assert np.allclose(invariant_measure(RANK_ONE).weights, [0.2, 0.3, 0.5])
    sym = np.array([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])
    assert np.allclose(invariant_measure(sym).weights, 1 / 3)
    assert np.allclose(invariant_measure(TWO).weights, [2 / 3, 1 / 3])


def test_invariant_measure_rejects_non_ergodic():
    with pytest.raises(NonErgodicError):
        invariant_measure(np.eye(2))
    with pytest.raises(NonErgodicError):
        find_n0(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_find_n0_threshold():
    n0, b = find_n0(TWO)
    assert n0 == 1 and b == pytest.approx(0.7)
    slow = np.array([[0.99, 0.01], [0.01, 0.99]])
    n0, b = find_n0(slow)
    assert b <= 0.95 and dobrushin_coefficient(np.linalg.matrix_power(slow, n0 - 1)) > 0.95


def test_poisson_rank_one():
    sol = poisson_solve(RANK_ONE)
    assert np.allclose(sol.P, np.eye(3) - RANK_ONE, atol=1e-14)
    assert sol.max_residual <= 1e-12


def test_poisson_residuals_on_random_kernels():
    rng = np.random.default_rng(1)
    for _ in range(100):
        K = random_kernel(rng, int(rng.integers(2, 9)))
        assert poisson_solve(K).max_residual <= 1e-10


def test_poisson_matches_truncated_series():
    rng = np.random.default_rng(2)
    for K in [TWO, FK3_L] + [random_kernel(rng, 5) for _ in range(10)]:
        N = series_terms_for(K, 1e-10)
        assert np.abs(poisson_series(K, N) - poisson_solve(K).P).max() <= 1e-8


def test_alpha_examples():
    assert alpha_of(RANK_ONE) == pytest.approx(1.0)
    assert alpha_of(TWO) == pytest.approx(10 / 3, rel=1e-12)
    lo, hi = alpha_interval(FK3_L)
    assert 1.0 <= lo <= hi <= lo + 1e-12


def test_alpha_sandwich_on_random_kernels():
    rng = np.random.default_rng(3)
    for _ in range(100):
        K = random_kernel(rng, int(rng.integers(2, 9)))
        P = poisson_solve(K).P
        a = alpha_of(K)
        assert max(operator_norm(P) / 2, dobrushin_coefficient(P)) <= a * (1 + 1e-12)
        for n0 in (1, 2, 4, 8):
            b = dobrushin_coefficient(np.linalg.matrix_power(K, n0))
            assert a <= n0 / (1 - b) * (1 + 1e-12)


def test_constant_family_has_zero_lipschitz_constant():
    driver = constant_family(FK3_L)
    report = lipschitz_certificates(driver, samples=50, seed=1)
    assert report.c_hat == 0.0 and report.passed
    assert report.max_e1_ratio == 0.0
    assert certify_constants(driver, samples=20)["c"] == 0.0


def test_direct_phi_family_certificates():
    model = fk3()
    for l in range(model.m):
        driver = direct_phi_family(model, l)
        const = certify_constants(driver, samples=100, seed=4)
        assert const["n0"] == 1 and const["b"] == pytest.approx(0.0, abs=1e-15)
        report = lipschitz_certificates(driver, samples=100, seed=4)
        assert report.passed, report.failures[:2]


@pytest.mark.parametrize("theta", [0.1, 0.5, 0.9])
def test_mixture_family_certificates(theta):
    driver = mixture_family(FK3_L, FK3_L, theta)
    report = lipschitz_certificates(driver, samples=100, seed=5)
    assert report.passed
    assert report.max_e1_ratio <= 1.0
    with pytest.raises(InvalidParameterError):
        mixture_family(FK3_L, FK3_L, 1.5)


def test_default_functions_basis():
    F, names = default_functions(4, level=2)
    assert F.shape == (4, 5) and names[-1] == "rand"
    assert np.array_equal(F[:, :4], np.eye(4))
    assert set(np.unique(F[:, 4])) == {-1.0, 1.0}
    assert np.array_equal(F, default_functions(4, level=2)[0])


def test_constant_flow_is_plain_mcmc_rate():
    driver = constant_family(FK3_L, mode="external")
    mu = np.full(3, 1 / 3)
    series = run_inhomogeneous(driver, flow=lambda p: mu, n_max=2**12, replicates=100, seed=8,
                               checkpoints=[2**j for j in range(6, 13)])
    rms = np.sqrt((series.errors[0] ** 2).mean(axis=(1, 2)))
    slope = np.polyfit(np.log(series.checkpoints + 1), np.log(rms), 1)[0]
    assert -0.65 <= slope <= -0.35


def test_self_mode_variation_bounds_and_boundedness():
    log = VariationLog()
    driver = direct_phi_family(fk3(), 0, mode="self")
    cps = [2**j for j in range(6, 12)]
    series = run_inhomogeneous(driver, n_max=2**11, replicates=100, seed=9, checkpoints=cps, log=log)
    assert log.max_eps_ratio <= 1.0 + 1e-9
    assert log.max_eps_bar_ratio <= 1.0 + 1e-9
    scaled = np.sqrt((series.errors[0] ** 2).mean(axis=(1, 2))) * np.sqrt(series.checkpoints + 1)
    assert scaled.max() / scaled.min() < 3.0


def test_external_mode_requires_flow():
    with pytest.raises(InvalidParameterError):
        run_inhomogeneous(constant_family(FK3_L, mode="external"), n_max=4, replicates=2)


def test_replicates_do_not_depend_on_batching():
    driver = direct_phi_family(fk3(), 0)
    full = run_inhomogeneous(driver, n_max=256, replicates=6, seed=3, checkpoints=[64, 128, 256])
    part = run_inhomogeneous(driver, n_max=256, seed=3, checkpoints=[64, 128, 256], replicate_ids=[4, 5])
    assert np.array_equal(full.errors[0][:, 4:], part.errors[0])
