import numpy as np
import pytest
from hypothesis import given, strategies as st

from dectrack.graph import build_graph, default_sigma
from dectrack.netsim import Network
from dectrack.planning import (GoalContext, PlannerConfig, RobotPlanInput, best_response_rounds,
                               combine, cost_terms, goal_cost, gramian_trace_inv, info_blocks,
                               margin_from_count, predicted_trace_P, projected_descent,
                               sensor_margin, solve_goal, solve_joint, trace_inv2)
from dectrack.world import RiskField, SensorCatalog

EYE_CAT = SensorCatalog(np.eye(2), np.ones(2), np.zeros(2))  # H = I, R^-1 = I anywhere
CAT = SensorCatalog(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.ones(3), np.full(3, 0.3))


def field(peak=1e-12, m=1, spread=1.0):
    return RiskField(np.full(m, peak), np.tile(spread * np.eye(2), (m, 1, 1)))


def ctx(x_bar=(0.0, 0.0), targets=((3.0, 0.0),), sensors=(0, 1, 2), nbr_pos=(), nbr_sensors=(),
        eta=1.0, cat=CAT, fld=None, prior=1.0, **cfg):
    t = np.asarray(targets, float)
    return GoalContext(np.asarray(x_bar, float), tuple(sensors), np.asarray(nbr_pos, float).reshape(-1, 2),
                       tuple(nbr_sensors), t, np.tile(prior * np.eye(2), (len(t), 1, 1)), eta, cat,
                       fld if fld is not None else field(m=len(t)), PlannerConfig(**cfg))


def test_sensor_margin_examples():
    gamma = np.ones((3, 2), dtype=int)
    assert sensor_margin(gamma, 0, []) == 0.5
    assert sensor_margin(gamma, 0, [1]) == 2.0
    assert margin_from_count(2) == 0.0
    assert sensor_margin(np.zeros((3, 3), dtype=int), 0, [1, 2]) == 0.0


def test_trace_without_sensors_is_prior():
    c = ctx(sensors=(), prior=0.7)
    assert predicted_trace_P([0, 0], c, 0) == pytest.approx(1.4)


def test_trace_identity_example():
    c = ctx(targets=((0.0, 0.0),), sensors=(0, 1), cat=EYE_CAT)
    assert predicted_trace_P([0, 0], c, 0) == pytest.approx(1.0)


def test_trace_decreases_toward_target():
    c = ctx(targets=((3.0, 1.0),))
    line = np.linspace(0, 1, 40)[:, None] * np.array([3.0, 1.0])
    tr = cost_terms(line, c)["trace_P"][:, 0]
    assert np.all(np.diff(tr) < 0)


def test_trace_matches_dense_formula(rng):
    t = rng.uniform(-3, 3, (2, 2))
    nb = rng.uniform(-3, 3, (2, 2))
    c = ctx(targets=t, nbr_pos=nb, nbr_sensors=((0,), (1, 2)), prior=0.5)
    x = rng.uniform(-1, 1, 2)
    for j in range(2):
        om = np.linalg.inv(0.5 * np.eye(2)) + info_blocks(x, (0, 1, 2), CAT, t)[j]
        om = om + info_blocks(nb[0], (0,), CAT, t)[j] + info_blocks(nb[1], (1, 2), CAT, t)[j]
        assert predicted_trace_P(x, c, j) == pytest.approx(np.trace(np.linalg.inv(om)))


def test_gramian_examples():
    c = ctx(targets=((0.0, 0.0),), sensors=(0, 1), cat=EYE_CAT)
    assert gramian_trace_inv([0, 0], c) == pytest.approx(2.0)
    # peak risk of exactly 1 at the target zeroes the safety weight
    hot = ctx(targets=((0.0, 0.0),), sensors=(0, 1), cat=EYE_CAT, fld=field(peak=2 * np.pi))
    assert gramian_trace_inv([0, 0], hot) == 1e6


def test_gramian_neighbor_never_hurts(rng):
    for _ in range(20):
        t = rng.uniform(-3, 3, (2, 2))
        fld = field(peak=2.0, m=2)
        x = rng.uniform(-3, 3, 2)
        alone = ctx(targets=t, fld=fld, sensors=(0, 2))
        with_nb = ctx(targets=t, fld=fld, sensors=(0, 2), nbr_pos=[rng.uniform(-3, 3, 2)],
                      nbr_sensors=((int(rng.integers(0, 3)),),))
        assert gramian_trace_inv(x, with_nb) <= gramian_trace_inv(x, alone) + 1e-12


def test_trace_inverse_cap():
    assert trace_inv2(np.zeros((2, 2))) == 1e6
    assert trace_inv2(np.diag([1.0, 0.0]), cap=50.0) == 50.0
    assert trace_inv2(np.diag([2.0, 4.0])) == pytest.approx(0.75)


def test_goal_cost_examples():
    c = ctx(targets=((0.0, 0.0),), sensors=(0, 1), cat=EYE_CAT, prior=1.0, rho1=(0.9,), rho2=5.0)
    assert goal_cost([0, 0], c) == pytest.approx(0.01)  # trace 1, bound 0.9
    loose = ctx(targets=((0.0, 0.0),), sensors=(0, 1), cat=EYE_CAT, rho1=(2.0,), rho2=5.0)
    assert goal_cost([0, 0], loose) == 0.0


def test_zero_margin_weights():
    c = ctx(eta=0.0, rho1=(0.001,), rho2=0.01)
    terms = cost_terms(np.zeros((1, 2)), c)
    assert terms["tracking"][0] > 0 and terms["risk"][0] > 0
    assert combine(terms, 0.0, c.cfg)[0] == pytest.approx(10.0 * terms["risk"][0])


def test_risk_flag_removes_exactly_the_risk_term(rng):
    X = rng.uniform(-2, 2, (30, 2))
    aware = ctx(fld=field(peak=1.0), eta=1.5, rho1=(0.01,), rho2=0.2)
    agn = ctx(fld=field(peak=1.0), eta=1.5, rho1=(0.01,), rho2=0.2, risk_aware=False)
    ta, tg = cost_terms(X, aware), cost_terms(X, agn)
    for k in ta:
        np.testing.assert_array_equal(ta[k], tg[k])
    np.testing.assert_allclose(combine(ta, 1.5, aware.cfg) - combine(tg, 1.5, agn.cfg),
                               10.0 / 2.5 * ta["risk"])


@given(st.integers(0, 2**31))
def test_slack_elimination_matches_slack_grid(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(-3, 3, (2, 2))
    eta = float(rng.uniform(0, 3))
    c = ctx(targets=t, fld=field(peak=3.0, m=2), eta=eta, rho1=(0.05, 0.08), rho2=0.3)
    x = rng.uniform(-3, 3, 2)
    terms = cost_terms(x[None], c)
    v1 = np.maximum(0.0, terms["trace_P"][0] - np.array([0.05, 0.08]))
    v2 = max(0.0, terms["trace_O_inv"][0] - 0.3)
    grid = [np.linspace(0, 1.5 * v + 1.0, 1501) for v in (*v1, v2)]
    d1a, d1b = np.meshgrid(grid[0][grid[0] >= v1[0]], grid[1][grid[1] >= v1[1]], indexing="ij")
    d2 = grid[2][grid[2] >= v2]
    best = eta * np.min(d1a**2 + d1b**2) + 10.0 / (1 + eta) * np.min(d2**2)
    step = max(g[1] for g in grid)
    assert goal_cost(x, c) <= best + 1e-12
    assert best - goal_cost(x, c) <= 2 * step * (eta * (v1.sum() + 2 * step) + 10 * (v2 + step)) + 1e-12


def test_cost_zero_stays_put():
    c = ctx(rho1=(100.0,), rho2=100.0)
    sol = solve_goal(c, np.random.default_rng(0))
    np.testing.assert_array_equal(sol.x, c.x_bar)
    assert sol.cost == 0.0 and not sol.improved


def test_agnostic_robot_moves_toward_target():
    c = ctx(targets=((3.0, 1.0),), eta=0.5, risk_aware=False, rho1=(100.0,))
    sol = solve_goal(c, np.random.default_rng(0))
    assert sol.flat
    assert np.linalg.norm(sol.x - [3, 1]) < np.linalg.norm(c.x_bar - [3, 1]) - 0.5


def test_solver_matches_grid_oracle():
    rng = np.random.default_rng(7)
    for k in range(5):
        t = rng.uniform(-3, 3, (1, 2))
        c = ctx(targets=t, fld=field(peak=4.0), eta=float(rng.uniform(0.5, 3)),
                rho1=(0.05,), rho2=0.3)
        sol = solve_goal(c, np.random.default_rng(k))
        g = np.arange(-1, 1 + 1e-9, 0.01)
        gx, gy = np.meshgrid(g, g)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        pts = pts[np.linalg.norm(pts, axis=1) <= 1.0] + c.x_bar
        assert sol.cost - goal_cost(pts, c).min() <= 1e-3


@given(st.integers(0, 2**31))
def test_travel_bound(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(-5, 5, (2, 2))
    c = ctx(x_bar=rng.uniform(-2, 2, 2), targets=t, fld=field(peak=2.0, m=2),
            eta=float(rng.uniform(0, 3)), risk_aware=bool(rng.integers(0, 2)), max_iter=30)
    sol = solve_goal(c, rng)
    assert np.linalg.norm(sol.x - c.x_bar) <= c.cfg.d_max + 1e-9


def test_projected_descent_on_a_quadratic():
    f = lambda X: np.sum((X - np.array([0.3, -0.2])) ** 2, axis=(-1, -2))
    x, fx, _ = projected_descent(f, np.zeros((1, 2)), np.zeros((1, 2)), 1.0)
    np.testing.assert_allclose(x, [[0.3, -0.2]], atol=1e-5)
    x, _, _ = projected_descent(f, np.zeros((1, 2)), np.zeros((1, 2)), 0.1)
    np.testing.assert_allclose(x, [[0.3, -0.2]] / np.hypot(0.3, 0.2) * 0.1, atol=1e-5)


def _inputs(xs, targets, prior=1.0):
    t = np.asarray(targets, float)
    cov = np.tile(prior * np.eye(2), (len(t), 1, 1))
    return [RobotPlanInput(np.asarray(x, float), (0, 1, 2), t, cov) for x in xs]


def _rng_for(seed):
    return lambda i, rnd: np.random.default_rng([seed, i, rnd])


def test_single_robot_one_round():
    cfg = PlannerConfig(rho1=(0.05,), rho2=0.3)
    res = best_response_rounds(Network([()]), _inputs([[0, 0]], [[3, 0]]), CAT, field(), cfg, _rng_for(0))
    assert res.rounds == 1 and res.converged and res.etas == [0.5]


def test_distant_robots_match_solo_solutions():
    cfg = PlannerConfig(rho1=(0.05,), rho2=0.3)
    targets = [[3, 0], [103, 0]]
    inputs = _inputs([[0, 0], [100, 0]], targets)
    res = best_response_rounds(Network([(), ()]), inputs, CAT, field(m=2), cfg, _rng_for(1))
    for i, inp in enumerate(inputs):
        c = GoalContext(inp.x_bar, inp.sensors, np.zeros((0, 2)), (), inp.targets, inp.prior_cov,
                        0.5, CAT, field(m=2), cfg)
        solo = solve_goal(c, np.random.default_rng([1, i, 1]))
        np.testing.assert_allclose(res.intents[i], solo.x)


def test_symmetric_pair_gives_mirrored_intents():
    cfg = PlannerConfig(rho1=(0.05,), rho2=0.3)
    targets = [[-4.0, 1.0], [4.0, 1.0]]
    inputs = _inputs([[-1.0, 0.0], [1.0, 0.0]], targets)
    res = best_response_rounds(Network([(1,), (0,)]), inputs, CAT, field(peak=1.0, m=2), cfg, _rng_for(2))
    a, b = res.intents
    np.testing.assert_allclose(a, [-b[0], b[1]], atol=1e-3)


def test_eta_override_and_message_payload():
    cfg = PlannerConfig(eta_override=1.25)
    net = Network([(1,), (0,)])
    net.log.keep_entries = True
    res = best_response_rounds(net, _inputs([[0, 0], [2, 0]], [[3, 0]]), CAT, field(), cfg, _rng_for(0))
    assert res.etas == [1.25, 1.25]
    assert set(net.log.by_type) == {"intent"}
    assert all(e[4] == 16 + 3 * 8 for e in net.log.entries)


def test_joint_equals_best_response_when_decoupled():
    cfg = PlannerConfig(rho1=(0.05,), rho2=0.3)
    targets = np.array([[-24.0, 0.0], [24.0, 0.0]])
    xs = np.array([[-20.0, 0.0], [20.0, 0.0]])
    g = build_graph(xs, 10.0, default_sigma(10.0))
    inputs = _inputs(xs, targets)
    br = best_response_rounds(Network(g.neighbors), inputs, CAT, field(m=2), cfg, _rng_for(3))
    cov = inputs[0].prior_cov
    joint, _ = solve_joint(xs, g.neighbors, [(0, 1, 2)] * 2, targets, cov, br.etas, CAT,
                           field(m=2), cfg, np.random.default_rng(3))
    np.testing.assert_allclose(joint, br.intents, atol=1e-2)
    np.testing.assert_allclose(joint[0], [-joint[1][0], joint[1][1]], atol=1e-3)
