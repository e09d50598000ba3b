"""Per-step pipeline for the decentralized team and its centralized baseline."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import control, estimation, planning, spectral, world
from .config import ScenarioConfig
from .graph import build_graph, default_sigma, exact_fiedler
from .netsim import MessageLog, Network, run_rounds

log = logging.getLogger(__name__)

# named substreams of the run seed
STREAMS = {"targets": 0, "measurements": 1, "failures": 2, "solver": 3, "pi_init": 4, "prior": 5}


class InitialDisconnection(RuntimeError):
    pass


def stream(seed, name, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name], *key)))


@dataclass
class StepRecord:
    t: int
    positions: np.ndarray
    trace_P: np.ndarray
    eta: np.ndarray
    lambda2_est: np.ndarray
    n_sensors: np.ndarray
    cbf_fallback: np.ndarray
    trace_O_inv: np.ndarray
    lambda2_true: float
    min_pair_dist: float
    rmse: np.ndarray
    total_risk: float
    cum_failures: int
    msg_count: int
    msg_bytes: int
    planner_rounds: int
    planner_converged: bool
    pi_rounds: int
    consensus_rounds: int


def csv_columns(n, m):
    per_robot = ["x", "y", "trace_P", "eta", "lambda2_est", "n_sensors", "cbf_fallback", "trace_O_inv"]
    cols = ["t"] + [f"{c}_{i}" for c in per_robot for i in range(n)]
    cols += ["lambda2_true", "min_pair_dist"] + [f"rmse_{j}" for j in range(m)]
    cols += ["total_risk", "cum_failures", "msg_count", "msg_bytes", "planner_rounds",
             "planner_converged", "pi_rounds", "consensus_rounds"]
    return cols


def record_row(rec):
    row = [rec.t]
    for arr in (rec.positions[:, 0], rec.positions[:, 1], rec.trace_P, rec.eta, rec.lambda2_est):
        row += [float(v) for v in arr]
    row += [int(v) for v in rec.n_sensors] + [int(bool(v)) for v in rec.cbf_fallback]
    row += [float(v) for v in rec.trace_O_inv]
    row += [rec.lambda2_true, rec.min_pair_dist] + [float(v) for v in rec.rmse]
    row += [rec.total_risk, rec.cum_failures, rec.msg_count, rec.msg_bytes, rec.planner_rounds,
            int(rec.planner_converged), rec.pi_rounds, rec.consensus_rounds]
    return row


def initial_positions(cfg):
    if cfg.robots.initial_positions is not None:
        return np.array(cfg.robots.initial_positions, float)
    n = cfg.n_robots
    if n == 1:
        return np.zeros((1, 2))
    # ring around the origin wide enough to respect the separation distance
    r = max(cfg.robots.initial_spread, 1.2 * cfg.control.d_min / (2 * np.sin(np.pi / n)))
    th = 2 * np.pi * np.arange(n) / n + np.pi / n
    return r * np.column_stack([np.cos(th), np.sin(th)])


def build_world(cfg):
    m = cfg.n_targets
    tc = cfg.targets
    radii = np.array(tc.radii if tc.radii is not None else 4.0 + 2.0 * np.arange(m), float)
    phases = np.array(tc.phases if tc.phases is not None else 2 * np.pi * np.arange(m) / m, float)
    center = np.array(tc.center, float)
    z0 = center + radii[:, None] * np.column_stack([np.cos(phases), np.sin(phases)])
    ens = world.TargetEnsemble.circular(z0, np.tile(center, (m, 1)), radii,
                                        np.full(m, tc.angular_rate), tc.process_noise, cfg.dt)
    catalog = world.SensorCatalog(np.array(cfg.sensors.h, float), np.array(cfg.sensors.gain, float),
                                  np.array(cfg.sensors.decay, float))
    peak = np.broadcast_to(np.asarray(cfg.risk.peak, float), (m,)).copy()
    spread = np.broadcast_to(np.asarray(cfg.risk.spread, float), (m,))
    shape = spread[:, None, None] * np.eye(2)[None]
    field_ = world.RiskField(peak, shape, cfg.risk.use_inverse)
    failures = world.FailureModel(cfg.failures.gain, [tuple(s) for s in cfg.failures.scripted],
                                  cfg.failures.random)
    return ens, catalog, field_, failures


def _blocks(P, m):
    return np.array([P[2 * j:2 * j + 2, 2 * j:2 * j + 2] for j in range(m)])


@dataclass
class RunResult:
    config: ScenarioConfig
    seed: int
    records: list
    log: MessageLog
    initial: dict
    flags: dict = field(default_factory=dict)


class Simulation:
    """One seeded run. ``mode`` is ``"decentralized"`` or ``"centralized"``."""

    def __init__(self, cfg, seed=None, keep_messages=False):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        self.mode = cfg.mode
        self.n, self.m = cfg.n_robots, cfg.n_targets
        self.sigma = cfg.comm.sigma if cfg.comm.sigma is not None else default_sigma(cfg.comm.r_comm)
        self.planner = replace(cfg.planner, risk_aware=cfg.risk_aware)
        self.targets, self.catalog, self.field, self.failure_model = build_world(cfg)
        self.rng = {k: stream(self.seed, k) for k in ("targets", "measurements", "failures")}
        self.x = initial_positions(cfg)
        self.graph = build_graph(self.x, cfg.comm.r_comm, self.sigma)
        if not self.graph.is_connected():
            raise InitialDisconnection("communication graph is disconnected at t=0")
        self.gamma = np.ones((self.catalog.u, self.n), dtype=int)
        prior_rng = stream(self.seed, "prior")
        var = cfg.targets.initial_belief_var
        z_true = self.targets.z.ravel()
        z0 = z_true + np.sqrt(var) * prior_rng.standard_normal(z_true.size)
        b0 = estimation.Belief(z0, var * np.eye(z_true.size))
        self.beliefs = [b0] * self.n
        self.pi_states = spectral.init_states(stream(self.seed, "pi_init"), self.n)
        self.log = MessageLog(keep_entries=keep_messages)
        self.cum_failures = 0
        self.flags = {"planner_unconverged_steps": 0, "consensus_unconverged_steps": 0,
                      "pi_cap_steps": 0, "cbf_fallbacks": 0}

    # -- helpers
    def _solver_rng(self, t, i, rnd):
        return stream(self.seed, "solver", t, i, rnd)

    def _eta_record(self, graph):
        if self.planner.eta_override is not None:
            return np.full(self.n, float(self.planner.eta_override))
        return np.array([planning.sensor_margin(self.gamma, i, graph.neighbors[i])
                         for i in range(self.n)])

    def _sensors(self, i):
        return tuple(world.functioning(self.gamma[:, i]))

    def _trace_o_inv(self, graph):
        closed = np.eye(self.n)
        for i, nb in enumerate(graph.neighbors):
            closed[i, list(nb)] = 1.0
        sensors = [self._sensors(l) for l in range(self.n)]
        out = np.empty(self.n)
        for i in range(self.n):
            b = self.beliefs[i]
            terms = planning.joint_cost_terms(self.x[None], closed, sensors, b.targets(),
                                              _blocks(b.P, self.m), self.catalog, self.field,
                                              self.planner)
            out[i] = terms["trace_O_inv"][0, i]
        return out

    def initial_state(self):
        return {"positions": self.x.tolist(),
                "targets": self.targets.z.tolist(),
                "trace_P": [float(np.trace(b.P)) for b in self.beliefs],
                "eta": self._eta_record(self.graph).tolist(),
                "lambda2_true": exact_fiedler(self.graph.laplacian)[0]}

    # -- phases
    def _plan_decentralized(self, t, net, preds):
        est, self.pi_states, views, pi_rounds = spectral.decentralized_connectivity(
            net, self.x, self.cfg.comm.r_comm, self.sigma, self.pi_states, self.cfg.spectral)
        inputs = [planning.RobotPlanInput(self.x[i], self._sensors(i), preds[i].targets(),
                                          _blocks(preds[i].P, self.m)) for i in range(self.n)]
        br = planning.best_response_rounds(net, inputs, self.catalog, self.field, self.planner,
                                           lambda i, rnd: self._solver_rng(t, i, rnd))
        nbr_pos = [v.nbr_pos for v in views]
        return est, br.intents, nbr_pos, br.rounds, br.converged, pi_rounds

    def _plan_centralized(self, t, pred):
        g = self.graph
        est = spectral.exact_connectivity(g)
        etas = [float(self.planner.eta_override) if self.planner.eta_override is not None
                else planning.sensor_margin(self.gamma, i, g.neighbors[i]) for i in range(self.n)]
        sensors = [self._sensors(i) for i in range(self.n)]
        intents, _ = planning.solve_joint(self.x, g.neighbors, sensors, pred.targets(),
                                          _blocks(pred.P, self.m), etas, self.catalog, self.field,
                                          self.planner, self._solver_rng(t, 0, 1))
        nbr_pos = [{l: g.positions[l] for l in g.neighbors[i]} for i in range(self.n)]
        return est, intents, nbr_pos

    def _move(self, est, intents, nbr_pos, net=None):
        cc, pc, dt = self.cfg.control, self.planner, self.cfg.dt
        probs = [control.build_problem(self.x[i], intents[i], dt, pc.d_max, est[i].lambda2,
                                       est[i].grad, nbr_pos[i], cc.d_min, cc.epsilon,
                                       connectivity=self.n > 1)
                 for i in range(self.n)]
        results = [control.solve_cbf_qp(p) for p in probs]
        if net is not None and cc.qp_max_rounds > 1:
            # re-solve after broadcasting the chosen inputs; the constraint data are
            # fixed within the step, so this settles on the second pass
            def step(i, res, inbox):
                new = control.solve_cbf_qp(probs[i])
                return new, new.u

            def halt(i, old, new):
                return np.array_equal(old.u, new.u)

            results = run_rounds(net, results, step, lambda i, r: r.u, halt=halt,
                                 max_rounds=cc.qp_max_rounds - 1, kind="control").states
        u = np.array([r.u for r in results])
        fallback = np.array([r.fallback for r in results])
        return control.integrate(self.x, u, dt), fallback

    def step(self, t):
        cfg = self.cfg
        net = Network.from_graph(self.graph, self.log) if self.mode == "decentralized" else None
        count0 = self.log.snapshot()
        A, Q = self.targets.A, self.targets.Q
        preds = [estimation.kf_predict(b, A, Q) for b in self.beliefs]
        pi_rounds, cons_rounds = 0, 0
        if self.mode == "decentralized":
            est, intents, nbr_pos, br_rounds, br_conv, pi_rounds = self._plan_decentralized(t, net, preds)
            if pi_rounds >= cfg.spectral.max_rounds:
                self.flags["pi_cap_steps"] += 1
        else:
            est, intents, nbr_pos = self._plan_centralized(t, preds[0])
            br_rounds, br_conv = 1, True
        if not br_conv:
            self.flags["planner_unconverged_steps"] += 1
        self.x, fallback = self._move(est, intents, nbr_pos, net)
        self.flags["cbf_fallbacks"] += int(fallback.sum())
        self.targets = world.step_targets(self.targets, t, self.rng["targets"])
        self.graph = build_graph(self.x, cfg.comm.r_comm, self.sigma)
        gamma_before = self.gamma
        self.gamma = world.sample_failures(self.rng["failures"], self.gamma, self.x, self.field,
                                           self.targets.z, self.failure_model, t)
        self.cum_failures += int((gamma_before - self.gamma).sum())
        meas = [world.sample_measurement(self.rng["measurements"], i, self.x[i], self.gamma[:, i],
                                         self.targets.z, self.catalog) for i in range(self.n)]
        if self.mode == "decentralized":
            posts = [estimation.kf_update(preds[i], meas[i]) for i in range(self.n)]
            self.beliefs, cons_rounds, ok = self._consensus(posts, preds)
            if not ok:
                self.flags["consensus_unconverged_steps"] += 1
        else:
            fused = estimation.kf_update(preds[0], estimation.stack_measurements(meas, 2 * self.m))
            self.beliefs = [fused] * self.n
        count1 = self.log.snapshot()
        return self._record(t, est, fallback, br_rounds, br_conv, pi_rounds, cons_rounds,
                            count1[0] - count0[0], count1[1] - count0[1])

    def _consensus(self, posts, preds):
        ec = self.cfg.estimation
        if self.n == 1:
            return posts, 0, True
        net = Network.from_graph(self.graph, self.log)
        degs = [len(nb) for nb in self.graph.neighbors]
        deg_in = net.exchange(degs, "degree")
        weights = [estimation.metropolis_weights(i, list(deg_in[i]), degs[i], dict(deg_in[i]))
                   for i in range(self.n)]
        pairs = [estimation.consensus_inputs(posts[i], preds[i], self.n, ec.fusion)
                 for i in range(self.n)]
        res = estimation.run_consensus(net, pairs, weights, ec.consensus_tol,
                                       ec.max_rounds_factor * self.n)
        beliefs = [estimation.consensus_output(p, self.n, ec.fusion) for p in res.pairs]
        return beliefs, res.rounds, res.converged

    def _record(self, t, est, fallback, br_rounds, br_conv, pi_rounds, cons_rounds, msgs, nbytes):
        x = self.x
        d = np.linalg.norm(x[:, None] - x[None], axis=-1)
        min_d = float(d[np.triu_indices(self.n, 1)].min()) if self.n > 1 else float("inf")
        z = self.targets.z
        err = np.array([b.targets() - z for b in self.beliefs])  # (N, M, 2)
        rmse = np.sqrt(np.mean(np.sum(err**2, axis=-1), axis=0))
        return StepRecord(
            t=t, positions=x.copy(),
            trace_P=np.array([np.trace(b.P) for b in self.beliefs]),
            eta=self._eta_record(self.graph),
            lambda2_est=np.array([e.lambda2 for e in est]),
            n_sensors=self.gamma.sum(axis=0),
            cbf_fallback=fallback,
            trace_O_inv=self._trace_o_inv(self.graph),
            lambda2_true=float(exact_fiedler(self.graph.laplacian)[0]),
            min_pair_dist=min_d, rmse=rmse,
            total_risk=float(np.sum(world.risk_at(x, self.field, z))),
            cum_failures=self.cum_failures,
            msg_count=msgs, msg_bytes=nbytes,
            planner_rounds=br_rounds, planner_converged=bool(br_conv),
            pi_rounds=pi_rounds, consensus_rounds=cons_rounds)

    def run(self, steps=None):
        steps = self.cfg.steps if steps is None else steps
        initial = self.initial_state()
        records = [self.step(t) for t in range(1, steps + 1)]
        return RunResult(self.cfg, self.seed, records, self.log, initial, dict(self.flags))
