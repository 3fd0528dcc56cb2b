import json

import numpy as np
import pytest

from imcmc.errors import (
    AbsoluteContinuityError,
    ConfigError,
    DegeneratePotentialError,
    DesyncError,
    InvalidParameterError,
)
from imcmc.exact_oracle import solve_flow
from imcmc.kernels import FeynmanKacModel, phi_weights
from imcmc.measures import (
    DiscreteMeasure,
    OccupationMeasure,
    StateSpace,
    dobrushin_coefficient,
)
from imcmc.models import FK3_L, fk3, fk3_path, fk3_path_proposal, path_model
from imcmc.samplers import (
    BaseMCMC,
    DirectPhi,
    IMcmcRun,
    MetropolisHastings,
    _r_matrix,
    blend_weights,
    direct_phi_draw,
    estimate_normalizers,
    hybrid_init,
    level_kernel,
    mh_dobrushin_bound,
    mh_ratio,
    mh_step,
    mh_transition_matrix,
    simulate,
    smc_run,
    validate_specs,
)


def flat_model(levels=3):
    spaces = [StateSpace.range(l, 3) for l in range(levels)]
    return FeynmanKacModel(spaces, DiscreteMeasure.uniform(spaces[0]), [np.ones(3)] * (levels - 1),
                           [FK3_L] * (levels - 1), name="flat")


def mh_specs(model):
    return [BaseMCMC()] + [MetropolisHastings(fk3_path_proposal(model, l)) for l in range(1, model.m + 1)]


def test_direct_phi_ancestor_weights():
    spaces = [StateSpace(0, ("a", "b")), StateSpace(1, ("a", "b"))]
    model = FeynmanKacModel(spaces, DiscreteMeasure.uniform(spaces[0]), [np.array([1.0, 3.0])], [np.eye(2)])
    eta = OccupationMeasure.from_states(spaces[0], ["a", "b"])
    rng = np.random.default_rng(0)
    draws = [direct_phi_draw(eta, model, 1, rng) for _ in range(20000)]
    assert np.mean([d == "b" for d in draws]) == pytest.approx(0.75, abs=0.01)


def test_direct_phi_draw_matches_phi_in_tv():
    model = fk3()
    eta = OccupationMeasure.from_states(model.spaces[0], [0, 0, 1, 2, 2, 2])
    rng = np.random.default_rng(1)
    draws = np.array([direct_phi_draw(eta, model, 1, rng) for _ in range(100000)])
    emp = np.bincount(draws, minlength=3) / len(draws)
    exact = phi_weights(eta.counts, model, 0)
    assert np.abs(emp - exact).sum() <= 0.02


def test_direct_phi_draw_errors():
    model = fk3()
    with pytest.raises(DesyncError):
        direct_phi_draw(OccupationMeasure(model.spaces[0]), model, 1, np.random.default_rng(0))


def test_direct_level_kernel_rows_do_not_depend_on_state():
    model = fk3()
    K = level_kernel(model, DirectPhi(), 2, np.array([0.2, 0.5, 0.3]))
    assert dobrushin_coefficient(K) == 0.0
    assert np.allclose(K[0], phi_weights([0.2, 0.5, 0.3], model, 1))


def test_mh_ratio_reciprocity():
    model = fk3_path(3)
    for l in (1, 2):
        K = fk3_path_proposal(model, l)
        n = model.size(l)
        for x in range(n):
            for y in range(n):
                r1, r2 = mh_ratio(model, l, K, x, y), mh_ratio(model, l, K, y, x)
                assert r1 * r2 == pytest.approx(1.0, rel=1e-12)


def test_mh_always_accepts_when_proposal_is_mutation_and_g_constant():
    model = path_model(FK3_L, [np.ones(3)], np.full(3, 1 / 3), 3)
    K = model.mutation_rows(2)
    rng = np.random.default_rng(3)
    for x in range(model.size(2)):
        for y in range(model.size(2)):
            assert mh_ratio(model, 2, K, x, y) == pytest.approx(1.0)
    mu = np.full(model.size(1), 1 / model.size(1))
    x = 4
    moved = sum(mh_step(x, mu, model, 2, K, rng) != x for _ in range(200))
    proposed_same = (mu[x // 3] * K[x // 3, x % 3])
    assert moved >= 200 * (1 - proposed_same) * 0.8


def test_mh_identical_proposal_is_accepted():
    model = fk3_path(3)
    K = fk3_path_proposal(model, 1)
    assert mh_ratio(model, 1, K, 5, 5) == pytest.approx(1.0)


def test_mh_invariance_exact():
    model = fk3_path(4)
    rng = np.random.default_rng(5)
    for l in range(1, model.m + 1):
        K = fk3_path_proposal(model, l)
        for _ in range(5):
            mu = rng.dirichlet(np.ones(model.size(l - 1)))
            M = mh_transition_matrix(model, l, K, mu)
            target = phi_weights(mu, model, l - 1)
            assert np.allclose(M.sum(axis=1), 1.0, atol=1e-14)
            assert np.abs(target @ M - target).max() <= 1e-12


def test_mh_transition_matrix_matches_sampling():
    model = fk3_path(3)
    K = fk3_path_proposal(model, 1)
    mu = np.array([0.5, 0.2, 0.3])
    M = mh_transition_matrix(model, 1, K, mu)
    rng = np.random.default_rng(6)
    x = 2
    draws = np.bincount([mh_step(x, mu, model, 1, K, rng) for _ in range(40000)], minlength=9) / 40000
    assert np.abs(draws - M[x]).sum() <= 0.03


def test_mh_absolute_continuity():
    model = fk3_path(3)
    bad = np.tile([1.0, 0.0, 0.0], (3, 1))
    with pytest.raises(AbsoluteContinuityError):
        mh_dobrushin_bound(model, 1, bad)
    with pytest.raises(AbsoluteContinuityError):
        validate_specs(model, [BaseMCMC(), MetropolisHastings(bad), DirectPhi()])


def test_mh_dobrushin_bound_examples():
    model = path_model(FK3_L, [np.ones(3)], np.full(3, 1 / 3), 3)
    R = _r_matrix(model, 1)
    assert mh_dobrushin_bound(model, 1, R / R.sum(axis=1, keepdims=True)) == pytest.approx(0.0, abs=1e-15)
    bounds = []
    for d in (3, 10, 100):
        peaked = np.full((d, d), 1e-6)
        peaked[:, 0] = 1.0
        peaked /= peaked.sum(axis=1, keepdims=True)
        sharp = path_model(peaked, [np.ones(d)], np.full(d, 1 / d), 2)
        bounds.append(mh_dobrushin_bound(sharp, 1, np.full((d, d), 1 / d)))
    assert bounds == sorted(bounds) and bounds[-1] > 0.98


def test_mh_dobrushin_bound_dominates_exact_coefficient():
    model = fk3_path(4)
    rng = np.random.default_rng(7)
    for l in range(1, model.m + 1):
        K = fk3_path_proposal(model, l)
        bound = mh_dobrushin_bound(model, l, K)
        for _ in range(20):
            mu = rng.dirichlet(np.ones(model.size(l - 1)))
            M = mh_transition_matrix(model, l, K, mu)
            assert dobrushin_coefficient(M) <= mh_dobrushin_bound(model, l, K, mu) + 1e-12
            assert dobrushin_coefficient(M) <= bound + 1e-12


def test_spec_validation():
    model = fk3()
    with pytest.raises(ConfigError):
        validate_specs(model, [DirectPhi()] * 4)
    with pytest.raises(ConfigError):
        validate_specs(model, [BaseMCMC()] * 4)
    with pytest.raises(ConfigError):
        validate_specs(model, [BaseMCMC(), MetropolisHastings(np.eye(3)), DirectPhi(), DirectPhi()])
    with pytest.raises(InvalidParameterError):
        MetropolisHastings(np.eye(3), steps=0)


def test_tick_zero_direct_draw_uses_single_atom():
    model = fk3()
    run = IMcmcRun(model, replicates=4000, seed=11)
    x0 = run.states[:, 0].copy()
    run.step()
    for a in range(3):
        sel = x0 == a
        emp = np.bincount(run.states[sel, 1], minlength=3) / sel.sum()
        assert np.abs(emp - FK3_L[a]).sum() <= 0.1


def test_occupations_count_tick_plus_one_states():
    run = IMcmcRun(fk3(), replicates=3, seed=1).run_to(17)
    for k in range(4):
        assert np.all(run.counts[k].sum(axis=1) == 18)
    eta = run.occupation(2, 1)
    assert eta.total == 18


def test_single_level_is_plain_mcmc():
    space = [StateSpace.range(0, 3)]
    M0 = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    model = FeynmanKacModel(space, DiscreteMeasure.uniform(space[0]), [], [], base_kernel=M0)
    run = IMcmcRun(model, replicates=1, seed=2, keep_history=True).run_to(50)
    path = np.array([h[0, 0] for h in run.history])
    assert all(M0[a, b] > 0 for a, b in zip(path, path[1:]))


def test_determinism_and_batching_independence():
    a = IMcmcRun(fk3(), replicates=6, seed=21).run_to(300)
    b = IMcmcRun(fk3(), replicates=6, seed=21).run_to(300)
    c = IMcmcRun(fk3(), replicate_ids=[3, 4], seed=21).run_to(300)
    for k in range(4):
        assert np.array_equal(a.counts[k], b.counts[k])
        assert np.array_equal(a.counts[k][3:5], c.counts[k])


def test_mh_run_determinism():
    model = fk3_path(3)
    a = IMcmcRun(model, mh_specs(model), replicates=3, seed=5).run_to(200)
    b = IMcmcRun(model, mh_specs(model), replicates=3, seed=5).run_to(200)
    assert np.array_equal(a.states, b.states)


def test_workers_split_does_not_change_results():
    one = simulate(fk3(), n_max=256, replicates=6, seed=3, checkpoints=[64, 128, 256], workers=1)
    two = simulate(fk3(), n_max=256, replicates=6, seed=3, checkpoints=[64, 128, 256], workers=2)
    assert one.levels.to_csv() == two.levels.to_csv()


def test_checkpoint_roundtrip(tmp_path):
    model = fk3()
    ref = IMcmcRun(model, replicates=3, seed=8).run_to(120)
    half = IMcmcRun(model, replicates=3, seed=8).run_to(50)
    path = tmp_path / "ck.json"
    half.dump_checkpoint(path)
    data = json.loads(path.read_text())
    assert data["tick"] == 50 and len(data["normalizer_log"]) == 3
    resumed = IMcmcRun.from_checkpoint(model, data).run_to(120)
    assert np.array_equal(resumed.states, ref.states)
    for k in range(4):
        assert np.array_equal(resumed.counts[k], ref.counts[k])


def test_estimate_normalizers_examples():
    assert np.allclose(estimate_normalizers(IMcmcRun(flat_model(), replicates=3, seed=1).run_to(40)), 0.0)
    model = fk3()
    run = IMcmcRun(model, replicates=5, seed=2)
    expected = np.zeros((5, 4))
    for l in range(1, 4):
        expected[:, l] = expected[:, l - 1] + np.log(model.G(l - 1)[run.states[:, l - 1]])
    assert np.allclose(estimate_normalizers(run), expected)


def test_smc_examples():
    one = smc_run(fk3(), 1, seed=3, replicates=4)
    assert all(p.shape == (4, 1) for p in one.particles)
    flat = smc_run(flat_model(), 200, seed=4)
    assert np.allclose(flat.normalizer_log, 0.0)
    with pytest.raises(InvalidParameterError):
        smc_run(fk3(), 0, seed=0)


def test_smc_accuracy_majority_of_seeds():
    model = fk3()
    flow = solve_flow(model)
    N = 10**4
    run = smc_run(model, N, seed=12, replicates=20)
    ok = 0
    for r in range(20):
        good = all(np.all(np.abs(run.empirical(l)[r] - flow.targets[l].weights) <= 5 / np.sqrt(N))
                   for l in range(4))
        ok += good
    assert ok > 10


def test_blend_weights():
    assert blend_weights(9, 10) == (0.5, 0.5)
    assert blend_weights(-1, 10) == (0.0, 1.0)
    assert blend_weights(5, 0) == (1.0, 0.0)


def test_hybrid_zero_particles_is_a_no_op():
    model = fk3()
    plain = IMcmcRun(model, replicates=3, seed=9).run_to(64)
    empty = smc_run(model, 1, seed=0)
    empty.N = 0
    hybrid = hybrid_init(IMcmcRun(model, replicates=3, seed=9), empty, "blended").run_to(64)
    assert np.array_equal(plain.states, hybrid.states)


def test_hybrid_blended_reads_add_particle_mass():
    model = fk3()
    particles = smc_run(model, 10, seed=1)
    run = hybrid_init(IMcmcRun(model, replicates=2, seed=1), particles, "blended")
    run.run_to(9)
    w = run.read(1)
    total = w.sum(axis=1)
    assert np.allclose(total, 20)
    assert np.allclose(w - run.counts[1], 10 * particles.empirical(1))


def test_hybrid_init_only_draws_from_particles():
    model = fk3()
    particles = smc_run(model, 1, seed=2)
    run = hybrid_init(IMcmcRun(model, replicates=3, seed=1, keep_history=True), particles, "init-only")
    for k in range(4):
        assert np.all(run.states[:, k] == particles.particles[k][0, 0])
        assert np.all(run.counts[k].sum(axis=1) == 1)
    with pytest.raises(ConfigError):
        hybrid_init(IMcmcRun(fk3(3), replicates=1), particles, "init-only")
    with pytest.raises(ConfigError):
        hybrid_init(run, particles, "other")


def test_degenerate_potential_in_engine():
    model = fk3()
    run = IMcmcRun(model, replicates=1)
    run.counts[0][:] = 0
    with pytest.raises(DegeneratePotentialError):
        run.step()
