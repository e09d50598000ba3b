"""Ideal-goal generation: each robot trades tracking accuracy against risk exposure.

The slack-penalized program is reduced to an unconstrained cost over the next
position (optimal slacks equal the constraint violations) and minimized by
projected normalized-gradient descent inside the travel disk. Robots iterate
best responses to their neighbors' broadcast intents.

Symmetric 2x2 information matrices are carried packed as ``[a00, a01, a11]``
along the last axis so that whole candidate batches evaluate in a few array ops.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .netsim import run_rounds
from .world import P_DIM

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerConfig:
    q1: float = 1.0
    q2: float = 10.0
    rho1: tuple = (0.01,)  # per target; a single value is broadcast
    rho2: float = 0.33
    d_max: float = 1.0
    risk_aware: bool = True
    max_iter: int = 200
    fd_step: float = 1e-4
    min_step: float = 1e-6
    trace_cap: float = 1e6
    br_max_rounds: int = 10
    br_tol: float = 1e-3
    damping: float = 0.5
    eta_override: float = None

    def __post_init__(self):
        if self.q1 <= 0 or self.q2 <= 0:
            raise ValueError("q1 and q2 must be positive")
        if np.any(np.asarray(self.rho1) <= 0) or self.rho2 <= 0:
            raise ValueError("rho thresholds must be positive")
        if self.d_max <= 0:
            raise ValueError("d_max must be positive")

    def rho1_for(self, m):
        r = np.asarray(self.rho1, float).ravel()
        return np.full(m, r[0]) if r.size == 1 else r[:m]


def sensor_margin(gamma, i, neighbors_i, p=P_DIM):
    """``max(0, S/p - 1)`` with ``S`` the working sensors in the closed neighborhood."""
    gamma = np.asarray(gamma)
    s = int(gamma[:, [i, *neighbors_i]].sum())
    return margin_from_count(s, p)


def margin_from_count(s, p=P_DIM):
    return max(0.0, s / p - 1.0)


# ---------------------------------------------------------------- packed 2x2 algebra


def pack(a):
    a = np.asarray(a, float)
    return np.stack([a[..., 0, 0], 0.5 * (a[..., 0, 1] + a[..., 1, 0]), a[..., 1, 1]], axis=-1)


def unpack(p):
    p = np.asarray(p, float)
    return np.stack([np.stack([p[..., 0], p[..., 1]], -1), np.stack([p[..., 1], p[..., 2]], -1)], -2)


def trace_inv_packed(p, cap=1e6):
    """Trace of the inverse of packed symmetric 2x2 matrices.

    Numerically singular matrices (no information along some direction) map to ``cap``.
    """
    a00, a01, a11 = p[..., 0], p[..., 1], p[..., 2]
    tr = a00 + a11
    det = a00 * a11 - a01 * a01
    ok = (tr > 0) & (det > 1e-12 * tr * tr)
    out = np.full(tr.shape, float(cap))
    np.divide(tr, det, out=out, where=ok)
    return np.minimum(out, cap)


def trace_inv2(a, cap=1e6):
    """:func:`trace_inv_packed` for full ``(..., 2, 2)`` matrices."""
    return trace_inv_packed(pack(a), cap)


class _Sensing:
    """Catalog and risk field prepared for batched evaluation."""

    def __init__(self, catalog, field_):
        h = np.asarray(catalog.h, float)
        self.hh = np.stack([h[:, 0] ** 2, h[:, 0] * h[:, 1], h[:, 1] ** 2], axis=-1)  # (U, 3)
        self.gain = np.asarray(catalog.gain, float)
        self.decay = np.asarray(catalog.decay, float)
        self.field = field_
        S = np.asarray(field_.exponent_matrix, float)
        self.s00, self.s01, self.s11 = S[:, 0, 0], 0.5 * (S[:, 0, 1] + S[:, 1, 0]), S[:, 1, 1]
        self.scale = field_.scale

    def info(self, x, sensors, targets):
        """Packed per-target information at positions ``x`` (..., 2) -> (..., M, 3)."""
        sensors = list(sensors)
        r = x[..., None, :] - targets
        if not sensors:
            return np.zeros(r.shape[:-1] + (3,))
        d = np.sqrt(r[..., 0] ** 2 + r[..., 1] ** 2)
        wts = self.gain[sensors] * np.exp(-self.decay[sensors] * d[..., None])
        return wts @ self.hh[sensors]

    def safety_product(self, x, targets):
        r = x[..., None, :] - targets
        quad = self.s00 * r[..., 0] ** 2 + 2 * self.s01 * r[..., 0] * r[..., 1] + self.s11 * r[..., 1] ** 2
        return np.prod(np.clip(1.0 - self.scale * np.exp(-0.5 * quad), 0.0, 1.0), axis=-1)


def info_blocks(x, sensors, catalog, targets):
    """Per-target information ``sum_k w_k exp(-lam_k d) h_k h_k^T`` at positions ``x``.

    ``x`` is (..., 2); returns (..., M, 2, 2).
    """
    h = np.asarray(catalog.h, float)
    x = np.asarray(x, float)
    targets = np.asarray(targets, float)
    out = np.zeros(x.shape[:-1] + (len(targets), 2, 2))
    for k in sensors:
        d = np.linalg.norm(x[..., None, :] - targets, axis=-1)
        out += (catalog.gain[k] * np.exp(-catalog.decay[k] * d))[..., None, None] * np.outer(h[k], h[k])
    return out


@dataclass
class GoalContext:
    """Everything robot ``i`` uses for one goal solve."""
    x_bar: np.ndarray
    sensors: tuple
    nbr_pos: np.ndarray  # (L, 2) neighbors' intents
    nbr_sensors: tuple  # L tuples of working sensor indices
    targets: np.ndarray  # (M, 2) estimated
    prior_cov: np.ndarray  # (M, 2, 2) one-step predicted blocks
    eta: float
    catalog: object
    field: object
    cfg: PlannerConfig
    _cache: dict = field(default_factory=dict, repr=False)

    def fixed_parts(self):
        if not self._cache:
            sens = _Sensing(self.catalog, self.field)
            t = np.asarray(self.targets, float)
            m = len(t)
            base = pack(np.linalg.inv(np.asarray(self.prior_cov, float)))
            o = np.zeros(3)
            for x_l, s_l in zip(np.asarray(self.nbr_pos, float).reshape(-1, 2), self.nbr_sensors):
                blk = sens.info(x_l, s_l, t)
                base = base + blk
                o = o + sens.safety_product(x_l, t) * blk.sum(axis=0)
            self._cache.update(sens=sens, t=t, base=base, o=o, rho1=self.cfg.rho1_for(m))
        return self._cache


def cost_terms(X, ctx):
    """Per-candidate breakdown for candidates ``X`` of shape (K, 2)."""
    fp = ctx.fixed_parts()
    sens, t = fp["sens"], fp["t"]
    X = np.asarray(X, float)
    own = sens.info(X, ctx.sensors, t)  # (K, M, 3)
    tr_p = trace_inv_packed(fp["base"] + own, ctx.cfg.trace_cap)  # (K, M)
    pi = sens.safety_product(X, t)  # (K,)
    tr_o = trace_inv_packed(fp["o"] + pi[:, None] * own.sum(axis=1), ctx.cfg.trace_cap)
    track = np.sum(np.maximum(0.0, tr_p - fp["rho1"]) ** 2, axis=-1)
    risk = np.maximum(0.0, tr_o - ctx.cfg.rho2) ** 2
    return {"trace_P": tr_p, "trace_O_inv": tr_o, "tracking": track, "risk": risk}


def combine(terms, eta, cfg, flat=False):
    """Weighted cost from :func:`cost_terms`; ``flat`` selects the pure tracking objective."""
    if flat:
        return terms["trace_P"].sum(axis=-1)
    c = cfg.q1 * eta * terms["tracking"]
    if cfg.risk_aware:
        c = c + cfg.q2 / (1.0 + eta) * terms["risk"]
    return c


def goal_cost(x, ctx, flat=False):
    X = np.atleast_2d(np.asarray(x, float))
    c = combine(cost_terms(X, ctx), ctx.eta, ctx.cfg, flat)
    return c if np.ndim(x) > 1 else float(c[0])


def predicted_trace_P(x, ctx, j):
    return float(cost_terms(np.atleast_2d(x), ctx)["trace_P"][0, j])


def gramian_trace_inv(x, ctx):
    return float(cost_terms(np.atleast_2d(x), ctx)["trace_O_inv"][0])


def use_flat_objective(track_at_bar, eta, cfg):
    """Risk-agnostic robots fall back to ``sum_j Tr P_ij`` where the penalty is flat at zero."""
    return (not cfg.risk_aware) and (eta <= 0 or track_at_bar <= 0)


# ---------------------------------------------------------------- solver


def project_disk(x, centers, radius):
    """Row-wise projection of (..., n, 2) points onto disks around ``centers``."""
    diff = x - centers
    nrm = np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))
    scale = np.where(nrm > radius, radius / np.maximum(nrm, 1e-300), 1.0)
    return centers + diff * scale


def projected_descent(f, x0, centers, radius, h=1e-4, max_iter=200, step0=None, min_step=1e-6,
                      ladder=8):
    """Normalized-gradient descent with central differences and step halving.

    ``f`` maps a batch (K, n, 2) to (K,). ``x0`` is one start (n, 2) or a stack
    of starts (R, n, 2); starts are advanced independently but evaluated in
    shared batches. Each line search tries ``ladder`` successively halved steps
    at once and keeps the longest one that decreases the cost.
    Returns ``(x, f(x), iterations)`` with a leading start axis when ``x0`` had one.
    """
    centers = np.asarray(centers, float)
    x0 = np.asarray(x0, float)
    single = x0.ndim == centers.ndim
    X = project_disk(x0[None] if single else x0, centers, radius)
    R = len(X)
    fX = np.asarray(f(X), float).copy()
    step = np.full(R, float(radius if step0 is None else step0))
    active = np.ones(R, bool)
    iters = np.zeros(R, int)
    dim = X[0].size
    basis = (np.eye(dim) * h).reshape((dim,) + X.shape[1:])
    halvings = 0.5 ** np.arange(ladder)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if not idx.size:
            break
        iters[idx] += 1
        xa = X[idx]
        pts = np.concatenate([xa[:, None] + basis[None], xa[:, None] - basis[None]], axis=1)
        vals = f(pts.reshape((-1,) + X.shape[1:])).reshape(len(idx), 2 * dim)
        g = ((vals[:, :dim] - vals[:, dim:]) / (2 * h)).reshape(xa.shape)
        gn = np.sqrt(np.sum(g.reshape(len(idx), -1) ** 2, axis=1))
        ok = np.isfinite(gn) & (gn > 0)
        active[idx[~ok]] = False
        idx, g, gn = idx[ok], g[ok], gn[ok]
        d = -g / gn.reshape((-1,) + (1,) * (g.ndim - 1))
        pending = np.ones(len(idx), bool)
        while pending.any():
            sel = np.flatnonzero(pending)
            rows = idx[sel]
            too_small = step[rows] < min_step
            active[rows[too_small]] = False
            pending[sel[too_small]] = False
            sel, rows = sel[~too_small], rows[~too_small]
            if not sel.size:
                break
            steps = step[rows][:, None] * halvings[None]  # (S, L)
            cand = project_disk(X[rows][:, None] + steps[..., None, None] * d[sel][:, None],
                                centers, radius)
            fc = f(cand.reshape((-1,) + X.shape[1:])).reshape(len(sel), ladder)
            fc = np.where(steps >= min_step, fc, np.inf)
            better = fc < fX[rows][:, None]
            for a, r in enumerate(rows):
                hit = np.flatnonzero(better[a])
                if hit.size:
                    k = hit[0]
                    shift = np.linalg.norm(cand[a, k] - X[r])
                    X[r], fX[r] = cand[a, k], fc[a, k]
                    step[r] = min(2.0 * steps[a, k], radius)
                    pending[sel[a]] = False
                    if shift < min_step:
                        active[r] = False
                else:
                    step[r] = steps[a, -1] * 0.5
    if single:
        return X[0], float(fX[0]), int(iters[0])
    return X, fX, iters


@dataclass
class GoalSolution:
    x: np.ndarray
    cost: float
    flat: bool
    improved: bool
    iterations: int


def _toward_nearest(x_bar, targets, radius):
    t = np.asarray(targets, float).reshape(-1, 2)
    if not len(t):
        return x_bar
    rel = t - x_bar
    dist = np.linalg.norm(rel, axis=1)
    j = int(np.argmin(dist))
    if dist[j] == 0:
        return x_bar
    return x_bar + rel[j] * min(1.0, radius / dist[j])


def _random_in_disk(x_bar, radius, rng):
    r = radius * np.sqrt(rng.random())
    th = 2 * np.pi * rng.random()
    return x_bar + r * np.array([np.cos(th), np.sin(th)])


def solve_goal(ctx, rng):
    """Best next position in the ``d_max`` disk around ``x_bar`` (multi-start)."""
    cfg = ctx.cfg
    x_bar = np.asarray(ctx.x_bar, float)
    base = cost_terms(x_bar[None], ctx)
    flat = use_flat_objective(float(base["tracking"][0]), ctx.eta, cfg)
    f0 = float(combine(base, ctx.eta, cfg, flat)[0])

    def f(batch):
        return combine(cost_terms(batch.reshape(-1, 2), ctx), ctx.eta, cfg, flat)

    best_x, best_f, iters = x_bar, f0, 0
    if f0 > 0.0:
        starts = np.array([x_bar, _toward_nearest(x_bar, ctx.targets, cfg.d_max),
                           _random_in_disk(x_bar, cfg.d_max, rng)])[:, None]
        xs, fs, its = projected_descent(f, starts, x_bar[None], cfg.d_max,
                                        cfg.fd_step, cfg.max_iter, min_step=cfg.min_step)
        iters = int(its.sum())
        k = int(np.argmin(fs))
        if fs[k] < best_f:
            best_x, best_f = xs[k, 0], float(fs[k])
    improved = best_f < f0
    if not improved:
        log.debug("goal solve: no restart improved on staying put")
        best_x = x_bar
    return GoalSolution(np.array(best_x, float), float(best_f), flat, improved, iters)


# ---------------------------------------------------------------- best response


@dataclass(frozen=True)
class RobotPlanInput:
    """Robot-local inputs to goal planning."""
    x_bar: np.ndarray
    sensors: tuple
    targets: np.ndarray
    prior_cov: np.ndarray


@dataclass(frozen=True)
class BrState:
    intent: np.ndarray
    rnd: int
    eta: float = 0.0


@dataclass
class BestResponseResult:
    intents: np.ndarray
    rounds: int
    converged: bool
    etas: list


def best_response_rounds(network, inputs, catalog, field_, cfg, rng_for):
    """Iterate goal solves against neighbors' latest intents.

    ``rng_for(i, rnd)`` returns the generator for robot ``i``'s random restart in
    round ``rnd``. Message payload: ``(intent, working sensor indices)``.
    """
    def eta_of(i, inbox):
        if cfg.eta_override is not None:
            return float(cfg.eta_override)
        s = len(inputs[i].sensors) + sum(len(m[1]) for m in inbox.values())
        return margin_from_count(s)

    def step(i, st, inbox):
        inp = inputs[i]
        eta = eta_of(i, inbox)
        keys = sorted(inbox)
        ctx = GoalContext(inp.x_bar, inp.sensors,
                          np.array([inbox[l][0] for l in keys], float).reshape(-1, 2),
                          tuple(inbox[l][1] for l in keys), inp.targets, inp.prior_cov,
                          eta, catalog, field_, cfg)
        sol = solve_goal(ctx, rng_for(i, st.rnd + 1))
        new = sol.x if st.rnd == 0 else (1 - cfg.damping) * st.intent + cfg.damping * sol.x
        return BrState(new, st.rnd + 1, eta), (new, inp.sensors)

    def halt(i, old, new):
        if not network.neighbors[i]:
            return True
        return np.linalg.norm(new.intent - old.intent) <= cfg.br_tol

    start = [BrState(np.asarray(inp.x_bar, float), 0) for inp in inputs]
    res = run_rounds(network, start, step, lambda i, s: (s.intent, inputs[i].sensors),
                     halt=halt, max_rounds=cfg.br_max_rounds, kind="intent")
    if not res.converged:
        log.debug("best response hit the round cap (%d)", cfg.br_max_rounds)
    return BestResponseResult(np.array([s.intent for s in res.states]), res.rounds,
                              res.converged, [s.eta for s in res.states])


# ---------------------------------------------------------------- joint solve


def closed_neighborhoods(neighbors):
    n = len(neighbors)
    c = np.eye(n)
    for i, nb in enumerate(neighbors):
        c[i, list(nb)] = 1.0
    return c


def joint_cost_terms(X, closed_nbrs, sensors, targets, prior_cov, catalog, field_, cfg):
    """Per-robot terms for stacked candidates ``X`` of shape (K, N, 2)."""
    X = np.asarray(X, float)
    K, n, _ = X.shape
    t = np.asarray(targets, float)
    sens = _Sensing(catalog, field_)
    own = np.stack([sens.info(X[:, l], sensors[l], t) for l in range(n)], axis=1)  # (K, N, M, 3)
    pi = sens.safety_product(X, t)  # (K, N)
    prior = pack(np.linalg.inv(np.asarray(prior_cov, float)))
    tot = prior + np.einsum("il,klmc->kimc", closed_nbrs, own)
    tr_p = trace_inv_packed(tot, cfg.trace_cap)  # (K, N, M)
    o = np.einsum("il,klc->kic", closed_nbrs, pi[..., None] * own.sum(axis=2))
    tr_o = trace_inv_packed(o, cfg.trace_cap)  # (K, N)
    track = np.sum(np.maximum(0.0, tr_p - cfg.rho1_for(len(t))) ** 2, axis=-1)
    risk = np.maximum(0.0, tr_o - cfg.rho2) ** 2
    return {"trace_P": tr_p, "trace_O_inv": tr_o, "tracking": track, "risk": risk}


def _combine_team(terms, etas, flats, cfg):
    etas = np.asarray(etas, float)
    c = cfg.q1 * etas * terms["tracking"]
    if cfg.risk_aware:
        c = c + cfg.q2 / (1.0 + etas) * terms["risk"]
    c = np.where(np.asarray(flats)[None, :], terms["trace_P"].sum(axis=-1), c)
    return c.sum(axis=-1)


def solve_joint(x_bar, neighbors, sensors, targets, prior_cov, etas, catalog, field_, cfg, rng):
    """Centralized goal: minimize the sum of all robots' costs over stacked positions."""
    x_bar = np.asarray(x_bar, float)
    n = len(x_bar)
    args = (closed_neighborhoods(neighbors), sensors, targets, prior_cov, catalog, field_, cfg)
    base = joint_cost_terms(x_bar[None], *args)
    flats = [use_flat_objective(float(base["tracking"][0, i]), etas[i], cfg) for i in range(n)]

    def f(batch):
        return _combine_team(joint_cost_terms(batch, *args), etas, flats, cfg)

    f0 = float(f(x_bar[None])[0])
    best_x, best_f = x_bar, f0
    if f0 > 0.0:
        starts = np.array([x_bar,
                           [_toward_nearest(x_bar[i], targets, cfg.d_max) for i in range(n)],
                           [_random_in_disk(x_bar[i], cfg.d_max, rng) for i in range(n)]])
        xs, fs, _ = projected_descent(f, starts, x_bar, cfg.d_max, cfg.fd_step, cfg.max_iter,
                                      min_step=cfg.min_step)
        k = int(np.argmin(fs))
        if fs[k] < best_f:
            best_x, best_f = xs[k], float(fs[k])
    return np.array(best_x, float), float(best_f)
