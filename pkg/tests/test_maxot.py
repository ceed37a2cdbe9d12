import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import LinAlgError

import planted
from meshadv import maxot as mx
from meshadv.classifier import init_model
from meshadv.maxot import (
    JITTER_LADDER,
    MaxOTConfig,
    ObservationLog,
    SurrogateError,
    TransformScorer,
    ascend,
    default_length_scale,
    eot_objective,
    expected_improvement,
    gp_fit,
    gp_predict,
    maxot_objective,
    maxot_search,
    stratified_design,
)
from meshadv.mesh import icosphere
from meshadv.sampling import draw_samples
from meshadv.transforms import TransformSpace, project

# -- Gaussian process ----------------------------------------------------------


def dense_posterior(x, y, t, ell, sf2, noise):
    def k(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        return sf2 * np.exp(-0.5 * d2 / ell ** 2)

    kinv = np.linalg.inv(k(x, x) + noise * np.eye(len(x)))
    ks = k(t, x)
    return ks @ kinv @ y, sf2 - np.einsum("ij,jk,ik->i", ks, kinv, ks)


def test_posterior_matches_dense_solve():
    rng = np.random.default_rng(0)
    x, y, t = rng.random((5, 2)), rng.normal(size=5), rng.random((7, 2))
    gp = gp_fit(x, y, length_scale=0.4, signal_var=1.3, noise_var=1e-6)
    mean, var = gp_predict(gp, t)
    m_ref, v_ref = dense_posterior(x, y, t, 0.4, 1.3, 1e-6)
    assert np.max(np.abs(mean - m_ref)) < 1e-8
    assert np.max(np.abs(var - v_ref)) < 1e-8


def test_noiseless_interpolation():
    rng = np.random.default_rng(1)
    x, y = rng.random((6, 3)), rng.normal(size=6)
    gp = gp_fit(x, y, length_scale=0.3, signal_var=1.0, noise_var=0.0)
    mean, var = gp_predict(gp, x)
    assert np.max(np.abs(mean - y)) < 1e-8
    assert np.all(var < 1e-8)


def test_empty_gp_returns_prior():
    gp = gp_fit(np.zeros((0, 2)), [], signal_var=2.0)
    mean, var = gp_predict(gp, np.random.default_rng(0).random((3, 2)))
    assert np.all(mean == 0) and np.all(var == 2.0)


def test_length_scale_heuristic():
    assert default_length_scale(20, 1) == pytest.approx(1 / 20)
    assert default_length_scale(27, 3) == pytest.approx(1 / 3)


def test_jitter_ladder_rescues_duplicate_inputs():
    x = np.random.default_rng(0).random((4, 1))
    gp = gp_fit(np.vstack([x, x]), np.r_[x[:, 0], x[:, 0]], length_scale=0.3, noise_var=0.0)
    assert gp.jitter in JITTER_LADDER[1:]
    assert np.all(np.isfinite(gp_predict(gp, [[0.4]])[0]))


def test_jitter_ladder_exhausted(monkeypatch):
    def always_fail(*a, **k):
        raise LinAlgError("not positive definite")

    monkeypatch.setattr(mx, "cho_factor", always_fail)
    with pytest.raises(SurrogateError):
        gp_fit(np.zeros((2, 1)), [0.0, 1.0])


# -- expected improvement ------------------------------------------------------


def test_ei_at_incumbent_is_standard_normal_density():
    assert expected_improvement(2.0, 1.0, 2.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-5)
    assert expected_improvement(2.0, 1.0, 2.0) == pytest.approx(0.39894, abs=1e-5)


def test_ei_zero_variance_is_plain_improvement():
    assert expected_improvement([3.0, 1.0], [0.0, 0.0], 2.0).tolist() == [1.0, 0.0]


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-4, 4), st.floats(-5, 5))
def test_ei_is_nonnegative_and_increasing_in_mean(mu, var, best):
    a = expected_improvement(mu, var, best)
    b = expected_improvement(mu + 0.1, var, best)
    assert a >= 0 and b >= a - 1e-12


# -- design and ascent -----------------------------------------------------------


@pytest.mark.parametrize("n", [1, 7, 20])
def test_stratified_design_hits_every_stratum(n):
    space = TransformSpace.rotations(math.pi)
    unit = space.normalize(stratified_design(space, n, 3))
    assert unit.shape == (n, 3)
    for j in range(3):
        assert sorted(np.floor(unit[:, j] * n).astype(int)) == list(range(n))


def test_ascend_projects_onto_the_box():
    space = TransformSpace.rotations(0.5, axes="z")
    traj = ascend(np.zeros(7), lambda c: (0.0, np.ones(7)), steps=5, step_size=0.3, space=space)
    assert traj.points.shape == (6, 7)
    assert np.allclose(traj.points[:, 2], [0.0, 0.3, 0.5, 0.5, 0.5, 0.5])
    assert np.all(traj.points[:, [0, 1, 3, 4, 5, 6]] == 0)


def test_ascend_rejects_nonfinite_gradient():
    space = TransformSpace.rotations(1.0)
    with pytest.raises(FloatingPointError):
        ascend(np.zeros(7), lambda c: (0.0, np.full(7, np.nan)), 2, 0.1, space)
    with pytest.raises(ValueError):
        ascend(np.zeros(7), lambda c: (0.0, np.zeros(7)), 0, 0.1, space)


def test_config_validation():
    with pytest.raises(ValueError):
        MaxOTConfig(n_transforms=0)
    with pytest.raises(ValueError):
        MaxOTConfig(research_period=0)
    assert MaxOTConfig(steps=9).initial_count == 9


# -- the search loop ---------------------------------------------------------------


@pytest.mark.parametrize("S, K, n0", [(2, 20, None), (3, 5, 11)])
def test_log_length_is_initial_plus_restarts(S, K, n0):
    cfg = MaxOTConfig(n_transforms=S, steps=K, step_size=0.3, n_initial=n0)
    res = maxot_search(planted.scorer, planted.SPACE, cfg, 0)
    assert len(res.log) == cfg.initial_count + S * K
    assert res.transforms.shape == (S, 7)
    assert res.log.restart.count(0) == cfg.initial_count


def test_search_is_seeded():
    a = maxot_search(planted.scorer, planted.SPACE, planted.CONFIG, 5)
    b = maxot_search(planted.scorer, planted.SPACE, planted.CONFIG, 5)
    assert np.array_equal(a.transforms, b.transforms)


def test_search_reuses_a_supplied_log():
    first = maxot_search(planted.scorer, planted.SPACE, planted.CONFIG, 0)
    n = len(first.log)
    again = maxot_search(planted.scorer, planted.SPACE, planted.CONFIG, 1, log=first.log)
    assert len(again.log) == n + 2 * 20


@pytest.mark.parametrize("seed", range(5))
def test_planted_maxima_are_recovered(seed):
    both, beats = planted.trial(seed)
    assert both and beats


def test_observation_csv():
    log = ObservationLog()
    log.add(0, 0, np.arange(7.0), 1.5)
    assert log.to_csv() == "restart,step,theta_x,theta_y,theta_z,loss\n0,0,0,1,2,1.5\n"
    assert log.best() == 1.5 and ObservationLog().best() == float("-inf")


# -- mesh objectives ---------------------------------------------------------------


@pytest.fixture(scope="module")
def small():
    model = init_model(3, seed=0)
    mesh = icosphere(1.0, 1)
    return model, mesh, draw_samples(mesh, 64, seed=0)


def test_scorer_gradient_matches_differences(small):
    model, mesh, spec = small
    scorer = TransformScorer(mesh.vertices[:30], model, target=1)
    # chosen away from a max-pool switch, where differences are meaningless
    c = np.array([0.1, 0.4, -0.6, 0.0, 0.1, 0.2, -0.1])
    val, g = scorer(c)
    fd = np.array([(scorer(c + 1e-6 * e)[0] - scorer(c - 1e-6 * e)[0]) / 2e-6 for e in np.eye(7)])
    assert np.max(np.abs(fd - g)) < 1e-6
    assert scorer.values(c[None])[0] == pytest.approx(val, abs=1e-12)


def test_objective_is_mean_over_transforms(small):
    model, mesh, spec = small
    t = np.array([[0, 0, 0.5, 0, 0, 0, 0], [0.2, 0, 0, 0, 0, 0, 0]])
    both = maxot_objective(mesh.vertices, t, model, 2, spec)
    each = [maxot_objective(mesh.vertices, row, model, 2, spec) for row in t]
    assert both == pytest.approx(np.mean(each), abs=1e-12)
    with pytest.raises(ValueError):
        maxot_objective(mesh.vertices, np.zeros((0, 7)), model, 2, spec)


def test_eot_draws_are_seeded(small):
    model, mesh, spec = small
    space = TransformSpace.rotations(math.pi)
    a = eot_objective(mesh.vertices, space, 4, model, 0, spec, 3)
    b = eot_objective(mesh.vertices, space, 4, model, 0, spec, 3)
    assert a == b
    with pytest.raises(ValueError):
        eot_objective(mesh.vertices, space, 0, model, 0, spec, 3)


def test_project_keeps_inactive_coordinates_neutral():
    space = TransformSpace.rotations(1.0, axes="z")
    assert np.all(project(np.full(7, 5.0), space)[[0, 1, 3, 4, 5, 6]] == 0)


# -- further oracles ---------------------------------------------------------------


def test_single_observation_interpolates_and_far_field_is_prior():
    gp = gp_fit([[0.5]], [2.0], length_scale=0.1, signal_var=1.5, noise_var=0.0)
    mean, var = gp_predict(gp, [[0.5], [0.5 + 10 * 0.1]])
    assert abs(mean[0] - 2.0) < 1e-10 and var[0] < 1e-10
    assert abs(mean[1]) < 1e-10 and var[1] == pytest.approx(1.5)


def test_noisy_observation_is_shrunk_towards_the_prior():
    gp = gp_fit([[0.3]], [1.0], length_scale=0.2, signal_var=1.0, noise_var=0.5)
    mean, _ = gp_predict(gp, [[0.3]])
    assert mean[0] == pytest.approx(1.0 / 1.5)


def test_symmetric_data_gives_symmetric_predictions():
    x = np.array([[0.1], [0.3], [0.7], [0.9]])
    y = np.array([1.0, -0.5, -0.5, 1.0])
    gp = gp_fit(x, y, length_scale=0.2, signal_var=1.0)
    t = np.linspace(0, 1, 11)[:, None]
    m1, v1 = gp_predict(gp, t)
    m2, v2 = gp_predict(gp, 1 - t)
    assert np.allclose(m1, m2, atol=1e-12) and np.allclose(v1, v2, atol=1e-12)


def test_ei_nondecreasing_in_sigma_below_the_incumbent():
    sig = np.linspace(0, 3, 61)
    for mu in (-2.0, -0.5, 0.0):
        ei = expected_improvement(np.full_like(sig, mu), sig ** 2, 0.0)
        assert np.all(np.diff(ei) >= -1e-15)


def test_ei_zero_at_noiseless_non_best_observation():
    gp = gp_fit([[0.2], [0.8]], [0.0, 1.0], length_scale=0.2, noise_var=0.0)
    mean, var = gp_predict(gp, [[0.2]])
    assert expected_improvement(mean, var, 1.0)[0] < 1e-8


def test_propose_init_on_a_flat_gp_prefers_unexplored_regions():
    space = TransformSpace.rotations(math.pi, axes="z")
    x = np.array([[0.05], [0.1], [0.15]])
    gp = gp_fit(x, np.zeros(3), length_scale=0.1, signal_var=1.0)
    pick = space.normalize(mx.propose_init(gp, space, 256, 0).coords[None])[0, 0]
    cand = np.random.default_rng(1).random(256)
    dist = lambda p: np.min(np.abs(x[:, 0] - p))  # noqa: E731
    assert dist(pick) >= np.median([dist(c) for c in cand])


def test_propose_init_single_candidate_and_seeding():
    space = TransformSpace.rotations(math.pi, axes="z")
    gp = gp_fit(np.zeros((0, 1)), [])
    a = mx.propose_init(gp, space, 1, 7).coords
    expected = space.denormalize(np.random.default_rng(7).random((1, 1)))[0]
    assert np.allclose(a, expected)
    assert np.array_equal(mx.propose_init(gp, space, 64, 3).coords, mx.propose_init(gp, space, 64, 3).coords)


def test_ascend_converges_on_a_quadratic():
    space = TransformSpace.rotations(math.pi)
    t_max = np.array([0.4, -0.2, 0.9, 0, 0, 0, 0])
    fn = lambda t: (-float(np.sum((t - t_max) ** 2)), -2.0 * (t - t_max))  # noqa: E731
    traj = ascend(t_max + [0.3, 0.3, -0.3, 0, 0, 0, 0], fn, 50, 0.1, space)
    assert np.max(np.abs(traj.final - t_max)) < 1e-3
    still = ascend(t_max, lambda t: (0.0, np.zeros(7)), 5, 0.1, space)
    assert np.all(still.points == t_max)


def test_zero_step_search_returns_the_proposal():
    cfg = MaxOTConfig(n_transforms=1, steps=1, step_size=0.0)
    res = maxot_search(planted.scorer, planted.SPACE, cfg, 2)
    assert np.array_equal(res.transforms[0], project(res.proposals[0], planted.SPACE))


def test_best_loss_is_monotone_in_restarts():
    best = [maxot_search(planted.scorer, planted.SPACE, MaxOTConfig(n_transforms=s, steps=5, step_size=0.3),
                         4).log.best() for s in range(1, 5)]
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))


def test_duplicated_transform_equals_singleton(small):
    model, mesh, spec = small
    t = np.array([0.1, 0.2, 0.3, 0, 0, 0, 0])
    single = maxot_objective(mesh.vertices, t, model, 0, spec)
    assert maxot_objective(mesh.vertices, np.stack([t, t]), model, 0, spec) == pytest.approx(single, abs=1e-12)


def test_objective_gradient_wrt_vertices(small):
    from meshadv import autodiff as ad

    model, mesh, spec = small
    t = np.array([[0.3, 0.0, 0.5, 0, 0, 0, 0], [-0.4, 0.2, 0.1, 0, 0, 0, 0]])
    # jittered so no two sampled points tie for the normalising max-norm
    v0 = mesh.vertices + 0.05 * np.random.default_rng(0).normal(size=mesh.vertices.shape)
    assert ad.finite_diff_check(lambda v: maxot_objective(v, t, model, 1, spec), v0) < 1e-4


def test_degenerate_space_reduces_eot_to_plain(small):
    model, mesh, spec = small
    flat = TransformSpace.from_config((0, 0, 0), (0, 0, 0))
    plain = maxot_objective(mesh.vertices, np.zeros(7), model, 2, spec)
    assert eot_objective(mesh.vertices, flat, 3, model, 2, spec, 0) == pytest.approx(plain, abs=1e-12)


def test_eot_variance_shrinks_like_one_over_m(small):
    model, mesh, spec = small
    space = TransformSpace.rotations(math.pi)
    var = {}
    for m in (4, 16, 64):
        vals = [eot_objective(mesh.vertices, space, m, model, 1, spec, s) for s in range(60)]
        var[m] = np.var(vals)
    assert var[4] > var[16] > var[64]
    assert var[4] / var[64] == pytest.approx(16, rel=0.6)
