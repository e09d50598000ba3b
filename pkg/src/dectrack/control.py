"""Per-robot safety filter: closest admissible velocity to the planner's intent.

The QP has two variables, so it is solved exactly by enumerating active sets
(half-plane constraints plus the speed ball) and keeping the best feasible
candidate.
"""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FEAS_TOL = 1e-10


@dataclass(frozen=True)
class CbfProblem:
    u_des: np.ndarray
    u_max: float  # d_max / dt
    G: np.ndarray  # (m, 2) rows of G u + b >= 0
    b: np.ndarray  # (m,)
    labels: tuple = ()


@dataclass
class QpResult:
    u: np.ndarray
    fallback: bool
    active: tuple = ()
    ball_active: bool = False
    lam: dict = field(default_factory=dict)  # row index -> multiplier
    mu: float = 0.0  # ball multiplier (for the 0.5 ||u||^2 <= 0.5 r^2 form)


def compute_u_des(x_bar, intent, dt):
    return (np.asarray(intent, float) - np.asarray(x_bar, float)) / dt


def build_problem(x_i, intent, dt, d_max, lambda2, grad, nbr_pos, d_min, epsilon,
                  connectivity=True):
    """Rows: connectivity ``g.u + lambda2 - eps >= 0`` then one collision row per neighbor.

    A lone robot has no graph to keep connected; pass ``connectivity=False``.
    """
    x_i = np.asarray(x_i, float)
    rows, rhs, labels = [], [], []
    if connectivity:
        rows, rhs, labels = [np.asarray(grad, float)], [lambda2 - epsilon], ["connectivity"]
    for l, x_l in nbr_pos.items():
        diff = x_i - np.asarray(x_l, float)
        rows.append(2.0 * diff)
        rhs.append(float(diff @ diff) - d_min**2)
        labels.append(f"collision_{l}")
    return CbfProblem(compute_u_des(x_i, intent, dt), d_max / dt,
                      np.array(rows, float).reshape(-1, 2), np.array(rhs, float), tuple(labels))


def _feasible(u, G, b, r):
    if u @ u > r * r * (1 + 1e-12) + FEAS_TOL:
        return False
    return bool(np.all(G @ u + b >= -1e-9))


def _on_line_in_ball(u_des, g, b, r, iters=200):
    """min ||u - u_des|| s.t. g.u = -b, ||u|| = r, via bisection on the ball multiplier."""
    gg = g @ g
    p0 = -b * g / gg  # closest point of the line to the origin
    if p0 @ p0 > r * r:
        return None

    def point(mu):
        lam = (-b * (1 + mu) - g @ u_des) / gg
        return (u_des + lam * g) / (1 + mu), lam

    lo, hi = 0.0, 1.0
    while np.linalg.norm(point(hi)[0]) > r:
        hi *= 2.0
        if hi > 1e12:
            return None
    if np.linalg.norm(point(lo)[0]) <= r:
        return None  # ball not active on this line
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(point(mid)[0]) > r:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    u, lam = point(hi)
    return u, lam, hi


def solve_cbf_qp(prob):
    """``min 0.5 ||u - u_des||^2`` s.t. ``G u + b >= 0`` and ``||u|| <= u_max``.

    Rows with a vanishing gradient are dropped when already satisfied and make
    the problem infeasible otherwise. Infeasible problems return ``u = 0`` with
    ``fallback`` set.
    """
    u_des = np.asarray(prob.u_des, float)
    r = float(prob.u_max)
    G = np.asarray(prob.G, float).reshape(-1, 2)
    b = np.asarray(prob.b, float).reshape(-1)
    keep = []
    for k in range(len(b)):
        if np.linalg.norm(G[k]) <= 1e-14:
            if b[k] < 0:
                log.debug("constraint %d unsatisfiable (zero gradient, b=%g)", k, b[k])
                return QpResult(np.zeros(2), True)
            continue
        keep.append(k)
    Gk, bk = G[keep], b[keep]

    cands = []  # (u, active rows in Gk, ball, lam, mu)
    cands.append((u_des, (), False, {}, 0.0))
    nu = np.linalg.norm(u_des)
    if nu > r:
        cands.append((u_des * r / nu, (), True, {}, nu / r - 1.0))
    for a in range(len(bk)):
        g = Gk[a]
        lam = -(g @ u_des + bk[a]) / (g @ g)
        cands.append((u_des + lam * g, (a,), False, {a: lam}, 0.0))
        sol = _on_line_in_ball(u_des, g, bk[a], r)
        if sol is not None:
            cands.append((sol[0], (a,), True, {a: sol[1]}, sol[2]))
    for a, c in itertools.combinations(range(len(bk)), 2):
        M = Gk[[a, c]]
        if abs(np.linalg.det(M)) <= 1e-12 * np.linalg.norm(M[0]) * np.linalg.norm(M[1]):
            continue
        u = np.linalg.solve(M, -bk[[a, c]])
        lam = np.linalg.solve(M.T, u - u_des)
        cands.append((u, (a, c), False, {a: lam[0], c: lam[1]}, 0.0))

    feas = [c for c in cands if _feasible(c[0], Gk, bk, r)]
    kkt = [c for c in feas if all(v >= -1e-9 for v in c[3].values()) and c[4] >= -1e-12]
    # two lines and the ball active at once is degenerate; any feasible vertex then suffices
    pool = kkt or feas
    best = min(pool, key=lambda c: float((c[0] - u_des) @ (c[0] - u_des)), default=None)
    if best is None:
        log.debug("CBF-QP infeasible; holding position")
        return QpResult(np.zeros(2), True)
    u, act, ball, lam, mu = best
    return QpResult(np.array(u, float), False, tuple(keep[a] for a in act), ball,
                    {keep[a]: float(v) for a, v in lam.items()}, float(mu))


def integrate(x_bar, u, dt):
    return np.asarray(x_bar, float) + np.asarray(u, float) * dt
