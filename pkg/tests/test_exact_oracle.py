import json

import numpy as np
import pytest

from imcmc.errors import TooLargeError
from imcmc.exact_oracle import brute_force_gamma, exact_path_target, solve_flow
from imcmc.kernels import FeynmanKacModel, phi_step
from imcmc.measures import DiscreteMeasure, StateSpace
from imcmc.models import FK3_L, fk3, random_model
from imcmc.samplers import default_specs, omega_of, product_kernel


def chain_model(L, G, levels=4, pi0=None):
    n = len(G)
    spaces = [StateSpace.range(l, n) for l in range(levels)]
    pi0 = np.full(n, 1 / n) if pi0 is None else np.asarray(pi0)
    return FeynmanKacModel(spaces, DiscreteMeasure(spaces[0], pi0), [G] * (levels - 1), [L] * (levels - 1))


def test_unit_potential_gives_markov_marginals():
    pi0 = np.array([0.5, 0.3, 0.2])
    flow = solve_flow(chain_model(FK3_L, np.ones(3), pi0=pi0))
    for l in range(4):
        assert np.allclose(flow.targets[l].weights, pi0 @ np.linalg.matrix_power(FK3_L, l), atol=1e-15)
    assert np.allclose(flow.log_gamma1, 0.0)


def test_constant_potential_product():
    flow = solve_flow(chain_model(FK3_L, np.full(3, 2.5)))
    assert np.allclose(flow.log_gamma1, np.arange(4) * np.log(2.5), atol=1e-12)


def test_fk3_table_consistency():
    model = fk3()
    flow = solve_flow(model)
    for t in flow.targets:
        assert t.is_probability()
    means = [flow.targets[k].weights @ model.G(k) for k in range(model.m)]
    assert np.allclose(flow.potential_means, means)
    assert np.allclose(flow.log_gamma1, np.concatenate([[0.0], np.cumsum(np.log(means))]), atol=1e-10)
    data = json.loads(flow.to_json())
    assert len(data["targets"]) == 4


def test_brute_force_examples():
    model = fk3()
    f = np.array([2.0, -1.0, 5.0])
    assert brute_force_gamma(model, 0, f) == pytest.approx(model.initial.weights @ f)
    flat = chain_model(FK3_L, np.ones(3))
    assert brute_force_gamma(flat, 3, np.ones(3)) == pytest.approx(1.0, abs=1e-14)
    flow = solve_flow(model)
    for j in range(3):
        ind = np.eye(3)[j]
        assert abs(brute_force_gamma(model, 3, ind) - flow.gamma(3, ind)) <= 1e-12


def test_brute_force_matches_flow_on_random_models():
    rng = np.random.default_rng(20)
    for _ in range(20):
        model = random_model(rng, 3, 4)
        flow = solve_flow(model)
        for l in range(4):
            for j in range(3):
                f = np.eye(3)[j]
                assert abs(brute_force_gamma(model, l, f) - flow.gamma(l, f)) <= 1e-12


def test_brute_force_guard():
    with pytest.raises(TooLargeError):
        brute_force_gamma(fk3(), 3, np.ones(3), guard=10)


def test_exact_path_target_examples():
    model = fk3()
    flow = solve_flow(model)
    assert np.allclose(exact_path_target(model, 0).weights, model.initial.weights)
    target = exact_path_target(model, 2)
    assert len(target.weights) == 27
    expected = np.einsum("i,j,k->ijk", *(flow.targets[k].weights for k in range(3))).ravel()
    assert np.allclose(target.weights, expected, atol=1e-15)
    dirac = chain_model(np.tile([0.0, 1.0, 0.0], (3, 1)), np.ones(3), levels=3, pi0=[1.0, 0.0, 0.0])
    w = exact_path_target(dirac).weights
    assert w.max() == 1.0 and np.count_nonzero(w) == 1
    with pytest.raises(TooLargeError):
        exact_path_target(model, guard=10)


def test_fixed_point_and_product_invariance():
    model = fk3()
    flow = solve_flow(model)
    for l in range(model.m):
        assert np.abs(phi_step(flow.targets[l], model, l).weights - flow.targets[l + 1].weights).max() <= 1e-12
    etas = [t.weights for t in flow.targets]
    assert np.allclose(omega_of(model, etas), exact_path_target(model).weights, atol=1e-15)
    P = product_kernel(model, default_specs(model), etas)
    w = exact_path_target(model).weights
    assert np.abs(w @ P - w).max() <= 1e-12
