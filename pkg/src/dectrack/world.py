"""Ground truth: moving targets, risk field, heterogeneous sensors and failures."""

from dataclasses import dataclass, field, replace

import numpy as np

P_DIM = 2


@dataclass(frozen=True)
class CirclePolicy:
    """Targets travel counter-clockwise on circles; ``rate`` is in rad/s."""
    center: np.ndarray  # (M, 2)
    radius: np.ndarray  # (M,)
    rate: np.ndarray  # (M,)

    def __post_init__(self):
        if np.any(np.asarray(self.radius) <= 0):
            raise ValueError("circle radius must be positive")

    def next_points(self, z, dt):
        c = np.asarray(self.center, float)
        rel = np.asarray(z, float) - c
        theta = np.arctan2(rel[:, 1], rel[:, 0]) + np.asarray(self.rate) * dt
        r = np.asarray(self.radius, float)[:, None]
        return c + r * np.column_stack([np.cos(theta), np.sin(theta)])


@dataclass(frozen=True)
class TargetEnsemble:
    z: np.ndarray  # (M, 2) true positions
    A: np.ndarray  # (2M, 2M)
    B: np.ndarray  # (2M, 2M)
    Q: np.ndarray  # (2M, 2M)
    policy: CirclePolicy
    dt: float = 0.1

    def __post_init__(self):
        m = len(self.z)
        if m < 1:
            raise ValueError("need at least one target")
        Q = np.asarray(self.Q, float)
        if Q.shape != (P_DIM * m, P_DIM * m) or not np.allclose(Q, Q.T):
            raise ValueError("Q must be a symmetric (2M, 2M) matrix")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")

    @property
    def m(self):
        return len(self.z)

    @classmethod
    def circular(cls, z0, center, radius, rate, q_var, dt):
        z0 = np.asarray(z0, float).reshape(-1, P_DIM)
        m = len(z0)
        eye = np.eye(P_DIM * m)
        policy = CirclePolicy(np.asarray(center, float).reshape(m, P_DIM),
                              np.asarray(radius, float).reshape(m),
                              np.asarray(rate, float).reshape(m))
        return cls(z=z0, A=eye, B=eye.copy(), Q=q_var * eye, policy=policy, dt=dt)


def step_targets(ens, t, rng):
    """Advance the targets one step: ``z' = A z + B v + w``.

    ``v`` is the displacement that lands ``A z`` on the next circle point, so the
    path is exactly circular when ``Q = 0``. ``t`` is accepted for interface
    symmetry; the circular policy is time-invariant.
    """
    z = np.asarray(ens.z, float).ravel()
    target = ens.policy.next_points(ens.z, ens.dt).ravel()
    v = np.linalg.pinv(ens.B) @ (target - ens.A @ z)
    w = _gaussian(rng, ens.Q)
    z_next = ens.A @ z + ens.B @ v + w
    return replace(ens, z=z_next.reshape(-1, P_DIM))


def _gaussian(rng, cov):
    cov = np.asarray(cov, float)
    if not np.any(cov):
        # still consume draws so substreams stay aligned across configurations
        rng.standard_normal(cov.shape[0])
        return np.zeros(cov.shape[0])
    if np.allclose(cov, np.diag(np.diag(cov))):
        return rng.standard_normal(cov.shape[0]) * np.sqrt(np.diag(cov))
    vals, vecs = np.linalg.eigh(cov)
    return vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * rng.standard_normal(cov.shape[0]))


@dataclass(frozen=True)
class RiskField:
    """Per-target Gaussian-shaped risk ``c / (2 pi |S|) exp(-0.5 r^T S r)``.

    ``S`` enters the exponent as given. Set ``use_inverse`` to put ``S^-1`` there
    instead (the conventional Gaussian shape); the normalizer keeps ``|S|``.
    """
    peak: np.ndarray  # (M,) c_j
    shape: np.ndarray  # (M, 2, 2) Sigma_j
    use_inverse: bool = False

    def __post_init__(self):
        peak = np.asarray(self.peak, float)
        shape = np.asarray(self.shape, float)
        if np.any(peak <= 0):
            raise ValueError("risk peak values must be positive")
        for s in shape:
            if not np.allclose(s, s.T) or np.linalg.eigvalsh(s).min() <= 0:
                raise ValueError("risk shape matrices must be symmetric positive definite")

    @property
    def exponent_matrix(self):
        s = np.asarray(self.shape, float)
        return np.linalg.inv(s) if self.use_inverse else s

    @property
    def scale(self):
        return np.asarray(self.peak, float) / (2 * np.pi * np.linalg.det(np.asarray(self.shape, float)))

    def phi(self, x, targets):
        """Per-target risk at ``x``; ``x`` may be (2,) or (K, 2). Returns (M,) or (K, M)."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        r = xs[:, None, :] - np.asarray(targets, float)[None, :, :]
        quad = np.einsum("kmi,mij,kmj->km", r, self.exponent_matrix, r)
        out = self.scale[None, :] * np.exp(-0.5 * quad)
        return out[0] if single else out

    def safety(self, x, targets):
        return 1.0 - self.phi(x, targets)

    def safety_product(self, x, targets):
        """Product over targets of the safety values, each clipped to [0, 1]."""
        return np.prod(np.clip(self.safety(x, targets), 0.0, 1.0), axis=-1)


def risk_at(x, field, targets):
    """Total risk at ``x`` summed over targets."""
    return np.sum(field.phi(x, targets), axis=-1)


@dataclass(frozen=True)
class SensorCatalog:
    h: np.ndarray  # (U, 2) measurement rows
    gain: np.ndarray  # (U,) w_k
    decay: np.ndarray  # (U,) lambda_k

    def __post_init__(self):
        h = np.asarray(self.h, float)
        if h.ndim != 2 or len(h) < 1:
            raise ValueError("catalog needs at least one sensor")
        if np.any(np.all(h == 0, axis=1)):
            raise ValueError("measurement rows must be nonzero")
        if np.any(np.asarray(self.gain) <= 0) or np.any(np.asarray(self.decay) < 0):
            raise ValueError("sensor gains must be positive and decay rates nonnegative")

    @property
    def u(self):
        return len(self.h)


def noise_info(x_i, z_j, gain, decay):
    """Inverse noise variance of one sensor reading: ``w exp(-lambda ||x - z||)``."""
    d = np.linalg.norm(np.asarray(x_i, float) - np.asarray(z_j, float), axis=-1)
    return gain * np.exp(-decay * d)


def functioning(gamma_col):
    """Indices of working sensors from one column of the status matrix."""
    return [int(k) for k in np.flatnonzero(np.asarray(gamma_col) > 0)]


def build_measurement_matrix(gamma_i, catalog, m):
    """``I_M kron H_ij`` where ``H_ij`` stacks the rows of the working sensors."""
    h_ij = np.asarray(catalog.h, float)[list(gamma_i)].reshape(len(gamma_i), P_DIM)
    return np.kron(np.eye(m), h_ij)


def info_diagonal(x_i, gamma_i, catalog, targets):
    """Stacked ``R_i^{-1}`` diagonal, target-major to match :func:`build_measurement_matrix`."""
    gamma_i = list(gamma_i)
    if not gamma_i:
        return np.zeros(0)
    d = np.linalg.norm(np.asarray(targets, float) - np.asarray(x_i, float), axis=1)
    g = np.asarray(catalog.gain, float)[gamma_i]
    lam = np.asarray(catalog.decay, float)[gamma_i]
    return (g[None, :] * np.exp(-lam[None, :] * d[:, None])).ravel()


@dataclass(frozen=True)
class Measurement:
    robot: int
    y: np.ndarray
    H: np.ndarray
    R: np.ndarray

    @property
    def empty(self):
        return self.y.size == 0


def sample_measurement(rng, robot, x_i, gamma_col, targets, catalog, noise_free=False):
    """Noisy linear reading ``y = H z + zeta`` with distance-dependent noise.

    One standard normal is drawn per potential row (all sensors, all targets)
    whatever the sensor status, so the stream stays aligned when sensors fail.
    """
    targets = np.asarray(targets, float)
    m = len(targets)
    gamma_i = functioning(gamma_col)
    draws = rng.standard_normal((m, catalog.u))
    H = build_measurement_matrix(gamma_i, catalog, m)
    if not gamma_i:
        return Measurement(robot, np.zeros(0), H, np.zeros((0, 0)))
    info = info_diagonal(x_i, gamma_i, catalog, targets)
    var = 1.0 / info
    zeta = np.zeros_like(var) if noise_free else draws[:, gamma_i].ravel() * np.sqrt(var)
    y = H @ targets.ravel() + zeta
    return Measurement(robot, y, H, np.diag(var))


@dataclass
class FailureModel:
    """Risk-driven random sensor failures plus an optional scripted list.

    ``scripted`` holds ``(step, robot, sensor_kind)`` triples; those sensors are
    knocked out at that step regardless of the random draw.
    """
    gain: float = 0.5
    scripted: list = field(default_factory=list)
    random_failures: bool = True

    def scripted_at(self, t):
        return [(int(i), int(k)) for (s, i, k) in self.scripted if int(s) == t]


def failure_probability(positions, field, targets, gain):
    return np.clip(gain * risk_at(np.atleast_2d(positions), field, targets), 0.0, 1.0)


def sample_failures(rng, gamma, positions, field, targets, model, t=None):
    """Return the next sensor-status matrix (U, N). Failed sensors never recover."""
    gamma = np.asarray(gamma, dtype=int)
    u, n = gamma.shape
    draws = rng.random((u, n))
    out = gamma.copy()
    if model.random_failures and model.gain > 0:
        p = failure_probability(positions, field, targets, model.gain)
        out[(draws < p[None, :]) & (gamma == 1)] = 0
    if t is not None:
        for i, k in model.scripted_at(t):
            out[k, i] = 0
    return out
