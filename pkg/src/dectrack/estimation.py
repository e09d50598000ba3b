"""Per-robot Kalman filtering and information-form consensus."""

import logging
from dataclasses import dataclass

import numpy as np

from .netsim import run_rounds
from .world import Measurement

log = logging.getLogger(__name__)

RIDGE = 1e-9


@dataclass(frozen=True)
class Belief:
    z: np.ndarray  # stacked target estimate (pM,)
    P: np.ndarray  # covariance (pM, pM)

    def to_info(self):
        omega = _inv_spd(self.P)
        return omega, omega @ self.z

    def block(self, j, p=2):
        s = slice(p * j, p * (j + 1))
        return self.P[s, s]

    def targets(self, p=2):
        return self.z.reshape(-1, p)


def _sym(m):
    return 0.5 * (m + m.T)


def _inv_spd(m):
    c = np.linalg.cholesky(_sym(m))
    ci = np.linalg.inv(c)
    return _sym(ci.T @ ci)


def is_spd(m):
    try:
        np.linalg.cholesky(_sym(np.asarray(m, float)))
    except np.linalg.LinAlgError:
        return False
    return True


def kf_predict(belief, A, Q):
    """A-priori estimate ``(A z, A P A^T + Q)``."""
    A = np.asarray(A, float)
    return Belief(A @ belief.z, _sym(A @ belief.P @ A.T + np.asarray(Q, float)))


def kf_update(pred, meas, cond_limit=1e12):
    """Moment-form Kalman update; empty or numerically singular readings leave the belief as is."""
    if meas is None or meas.empty:
        return pred
    H, R, y = meas.H, meas.R, meas.y
    S = _sym(H @ pred.P @ H.T + R)
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > cond_limit:
        log.warning("robot %s: innovation covariance singular, update skipped", meas.robot)
        return pred
    resid = y - H @ pred.z
    K = np.linalg.solve(S, H @ pred.P).T
    z = pred.z + K @ resid
    P = _sym(pred.P - K @ S @ K.T)
    return Belief(z, P)


def measurement_info(meas, dim):
    """``(H^T R^-1 H, H^T R^-1 y)`` of one reading; zeros when there is none."""
    if meas is None or meas.empty:
        return np.zeros((dim, dim)), np.zeros(dim)
    r_inv = np.linalg.inv(meas.R)
    return _sym(meas.H.T @ r_inv @ meas.H), meas.H.T @ r_inv @ meas.y


def metropolis_weights(i, neighbors_i, degree_i, neighbor_degrees):
    """Metropolis weights of robot ``i`` over its closed neighborhood.

    Degrees count neighbors (unweighted). ``neighbor_degrees`` maps ``l -> deg_l``.
    """
    w = {l: 1.0 / (1.0 + max(degree_i, neighbor_degrees[l])) for l in neighbors_i}
    w[i] = 1.0 - sum(w.values())
    return w


def metropolis_matrix(neighbors):
    n = len(neighbors)
    deg = [len(nb) for nb in neighbors]
    W = np.zeros((n, n))
    for i in range(n):
        for l, v in metropolis_weights(i, neighbors[i], deg[i], {l: deg[l] for l in neighbors[i]}).items():
            W[i, l] = v
    return W


def consensus_round(own, inbox, weights, i):
    """One convex-combination step over the closed neighborhood, self term included."""
    omega = weights[i] * own[0]
    q = weights[i] * own[1]
    for l, (om_l, q_l) in inbox.items():
        omega = omega + weights[l] * om_l
        q = q + weights[l] * q_l
    return omega, q


@dataclass
class ConsensusResult:
    pairs: list
    rounds: int
    converged: bool


def run_consensus(network, pairs, weights, tol=1e-8, max_rounds=None):
    """Iterate :func:`consensus_round` until no entry moves by more than ``tol``."""
    max_rounds = 50 * network.n if max_rounds is None else max_rounds

    def step(i, state, inbox):
        new = consensus_round(state, inbox, weights[i], i)
        return new, new

    def halt(i, old, new):
        return max(np.max(np.abs(new[0] - old[0])), np.max(np.abs(new[1] - old[1]))) <= tol

    res = run_rounds(network, pairs, step, lambda i, s: s, halt=halt,
                     max_rounds=max_rounds, kind="info_pair")
    return ConsensusResult(res.states, res.rounds, res.converged)


def finalize_estimate(omega, q):
    """Back to moment form; a non-SPD information matrix gets a small ridge first."""
    omega = _sym(np.asarray(omega, float))
    if not is_spd(omega):
        log.warning("information matrix not SPD; adding ridge %g", RIDGE)
        omega = omega + RIDGE * np.eye(len(omega))
    P = _inv_spd(omega)
    return Belief(P @ q, P)


def consensus_inputs(posterior, prior, n, fusion):
    """Information pair a robot contributes to consensus.

    ``"agreement"`` contributes the posterior information as is, so the team
    converges to the average of the local posteriors. ``"centralized"`` removes
    ``(n-1)/n`` of the (shared) prior information so that ``n`` times the
    consensus average equals the all-robot information sum.
    """
    omega, q = posterior.to_info()
    if fusion == "agreement":
        return omega, q
    om_prior, q_prior = prior.to_info()
    frac = (n - 1) / n
    return omega - frac * om_prior, q - frac * q_prior


def consensus_output(pair, n, fusion):
    omega, q = pair
    if fusion == "agreement":
        return finalize_estimate(omega, q)
    return finalize_estimate(n * omega, n * q)


def stack_measurements(measurements, dim):
    """One reading holding every robot's rows (block-diagonal noise)."""
    ms = [m for m in measurements if m is not None and not m.empty]
    if not ms:
        return Measurement(-1, np.zeros(0), np.zeros((0, dim)), np.zeros((0, 0)))
    if len(ms) == 1:
        return ms[0]
    rows = sum(len(m.y) for m in ms)
    R = np.zeros((rows, rows))
    k = 0
    for m in ms:
        r = len(m.y)
        R[k:k + r, k:k + r] = m.R
        k += r
    return Measurement(-1, np.concatenate([m.y for m in ms]), np.vstack([m.H for m in ms]), R)


def fuse_all(prior, measurements):
    """Centralized fusion: prior information plus every robot's measurement information."""
    omega, q = prior.to_info()
    for meas in measurements:
        d_om, d_q = measurement_info(meas, len(q))
        omega = omega + d_om
        q = q + d_q
    return finalize_estimate(omega, q)
