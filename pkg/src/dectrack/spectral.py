"""Algebraic connectivity: decentralized power-iteration estimate and its gradient.

Each robot keeps one entry ``nu_i`` of an approximate Fiedler vector together
with two dynamic-average trackers: ``y1`` follows the network mean of ``nu`` and
``y2`` the mean of ``nu**2``. The update

    nu_i <- nu_i - k1 y1_i - k2 beta (L nu)_i - k3 (y2_i - 1) nu_i

deflates the constant direction, damps everything except the slowest Laplacian
mode and keeps the vector away from zero. At the fixed point
``y2 = 1 - k2 beta lambda2 / k3`` and ``(L nu)_i / nu_i = lambda2``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .estimation import metropolis_weights
from .graph import adjacency_weight, adjacency_weight_grad, build_graph, exact_fiedler
from .netsim import flood_extrema, run_rounds

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PiState:
    nu: float
    y1: float
    w1: float
    y2: float
    w2: float


@dataclass(frozen=True)
class PiGains:
    k1: float
    k2: float
    k3: float
    beta: float


@dataclass(frozen=True)
class SpectralConfig:
    k1: float = 0.25
    k3: float = 0.2
    s_min: float = 0.3
    beta_scale: float = 0.9
    max_rounds: int = 200
    tol: float = 1e-7
    nu_floor: float = 1e-6


@dataclass(frozen=True)
class ConnectivityEstimate:
    lambda2: float
    grad: np.ndarray  # d lambda2 / d x_i
    nu: float  # unit-normalized Fiedler entry
    fallback: bool = False


def init_states(rng, n):
    # entries of order 1/sqrt(n): the cubic normalization term is unstable for
    # large |nu_i| before the trackers have mixed
    nu = rng.standard_normal(n) / np.sqrt(max(n, 1))
    return [PiState(v, v, v, v * v, v * v) for v in nu]


def pi_gains(max_degree, min_degree, n, cfg):
    """Gains from flooded degree extrema.

    ``beta`` keeps ``beta * L`` inside the unit disk. ``k2`` is reduced on
    strongly connected graphs so that the normalization fixed point
    ``1 - k2 beta lambda2 / k3`` stays above ``s_min`` for any admissible
    ``lambda2``; ``n/(n-1) * min degree`` bounds ``lambda2`` from above.
    """
    beta = cfg.beta_scale / (2.0 * max(max_degree, 1e-300))
    lam_ub = n / max(n - 1, 1) * min_degree
    k2 = 1.0 if lam_ub <= 0 else min(1.0, (1.0 - cfg.s_min) * cfg.k3 / (beta * lam_ub))
    return PiGains(cfg.k1, k2, cfg.k3, beta)


def pi_round(own, inbox, L_row, W_row, gains, i):
    """One local iteration. ``inbox`` maps neighbor -> ``(nu, y1, y2)``."""
    lnu = L_row[i] * own.nu + sum(L_row[l] * m[0] for l, m in inbox.items())
    nu = own.nu - gains.k1 * own.y1 - gains.k2 * gains.beta * lnu - gains.k3 * (own.y2 - 1.0) * own.nu
    mix1 = W_row[i] * own.y1 + sum(W_row[l] * m[1] for l, m in inbox.items())
    mix2 = W_row[i] * own.y2 + sum(W_row[l] * m[2] for l, m in inbox.items())
    return PiState(nu, mix1 + nu - own.w1, nu, mix2 + nu * nu - own.w2, nu * nu)


def local_lambda2(nu_i, nu_nbrs, L_row, i, floor=1e-6):
    """``(L nu)_i / nu_i`` or ``None`` when ``|nu_i|`` is below ``floor``."""
    if abs(nu_i) <= floor:
        return None
    lnu = L_row[i] * nu_i + sum(L_row[l] * v for l, v in nu_nbrs.items())
    return lnu / nu_i


def lambda2_gradient(x_i, nbr_pos, nu_i, nu_nbrs, r_comm, sigma):
    """``sum_l da_il/dx_i (nu_i - nu_l)^2`` for a unit-norm Fiedler vector."""
    g = np.zeros(2)
    for l, x_l in nbr_pos.items():
        g += adjacency_weight_grad(x_i, x_l, r_comm, sigma) * (nu_i - nu_nbrs[l]) ** 2
    return g


@dataclass(frozen=True)
class LocalView:
    """What robot ``i`` knows after the position and degree exchanges."""
    i: int
    x: np.ndarray
    nbr_pos: dict
    L_row: dict
    W_row: dict
    degree: float


def _local_views(network, positions, r_comm, sigma):
    pos_in = network.exchange([np.asarray(p, float) for p in positions], "position")
    rows, degs = [], []
    for i in range(network.n):
        w = {l: float(adjacency_weight(np.linalg.norm(positions[i] - x_l), r_comm, sigma))
             for l, x_l in pos_in[i].items()}
        row = {l: -v for l, v in w.items()}
        row[i] = sum(w.values())
        rows.append(row)
        degs.append((len(w), row[i]))
    deg_in = network.exchange(degs, "degree")
    views = []
    for i in range(network.n):
        W = metropolis_weights(i, list(deg_in[i]), degs[i][0],
                               {l: d[0] for l, d in deg_in[i].items()})
        views.append(LocalView(i, np.asarray(positions[i], float), dict(pos_in[i]),
                               rows[i], W, degs[i][1]))
    return views


def decentralized_connectivity(network, positions, r_comm, sigma, states, cfg):
    """Full per-step exchange: positions, degrees, extrema, PI rounds, estimates.

    Returns ``(estimates, new_states, views, pi_rounds)``.
    """
    n = network.n
    views = _local_views(network, positions, r_comm, sigma)
    if n < 2:
        return [ConnectivityEstimate(0.0, np.zeros(2), 0.0)], list(states), views, 0
    lows, highs = flood_extrema(network, [v.degree for v in views], kind="degree_extrema")
    gains = [pi_gains(float(highs[i]), float(lows[i]), n, cfg) for i in range(n)]

    def step(i, st, inbox):
        new = pi_round(st, inbox, views[i].L_row, views[i].W_row, gains[i], i)
        return new, (new.nu, new.y1, new.y2)

    def halt(i, old, new):
        return abs(new.nu - old.nu) <= cfg.tol

    res = run_rounds(network, states, step, lambda i, s: (s.nu, s.y1, s.y2), halt=halt,
                     max_rounds=cfg.max_rounds, kind="pi")
    states = res.states
    nu_in = network.exchange([s.nu for s in states], "nu")
    raw = [local_lambda2(states[i].nu, nu_in[i], views[i].L_row, i, cfg.nu_floor) for i in range(n)]
    lam_in = network.exchange(raw, "lambda2")
    out = []
    for i in range(n):
        st, g = states[i], gains[i]
        lam, fallback = raw[i], False
        if lam is None:
            fallback = True
            known = [v for v in lam_in[i].values() if v is not None]
            if known:
                lam = float(np.mean(known))
            else:
                lam = g.k3 * (1.0 - st.y2) / (g.k2 * g.beta)
            log.debug("robot %d: |nu| below floor, lambda2 fallback %.4g", i, lam)
        scale = 1.0 / np.sqrt(n * max(st.y2, 1e-300))
        nu_unit = {l: v * scale for l, v in nu_in[i].items()}
        grad = lambda2_gradient(views[i].x, views[i].nbr_pos, st.nu * scale, nu_unit, r_comm, sigma)
        out.append(ConnectivityEstimate(float(lam), grad, st.nu * scale, fallback))
    return out, states, views, res.rounds


def exact_connectivity(graph):
    """Centralized oracle: exact ``lambda2`` and per-robot gradients."""
    lam, nu = exact_fiedler(graph.laplacian)
    out = []
    for i in range(graph.n):
        nbr = {l: graph.positions[l] for l in graph.neighbors[i]}
        grad = lambda2_gradient(graph.positions[i], nbr, nu[i], {l: nu[l] for l in nbr},
                                graph.r_comm, graph.sigma)
        out.append(ConnectivityEstimate(lam, grad, float(nu[i]) if len(nu) else 0.0))
    return out


def lambda2_of_positions(positions, r_comm, sigma):
    return exact_fiedler(build_graph(positions, r_comm, sigma).laplacian)[0]
