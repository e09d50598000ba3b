"""Communication graph: distance-weighted adjacency, Laplacian and a dense spectral oracle."""

from dataclasses import dataclass

import numpy as np


def default_sigma(r_comm, max_weight=10.0):
    """Normalization constant giving ``max_weight`` on coincident robots."""
    return r_comm**4 / np.log1p(max_weight)


def adjacency_weight(d, r_comm, sigma):
    """Edge weight ``exp((R^2 - d^2)^2 / sigma) - 1`` inside the range, zero outside.

    Works elementwise on arrays.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = np.asarray(d, dtype=float)
    inside = d <= r_comm
    gap = np.where(inside, r_comm**2 - d**2, 0.0)
    return np.where(inside, np.expm1(gap**2 / sigma), 0.0)


def adjacency_weight_grad(x_i, x_l, r_comm, sigma):
    """Gradient of the edge weight between i and l with respect to ``x_i``."""
    diff = np.asarray(x_i, float) - np.asarray(x_l, float)
    d2 = float(diff @ diff)
    if d2 > r_comm**2:
        return np.zeros_like(diff)
    gap = r_comm**2 - d2
    return -(4.0 * gap / sigma) * np.exp(gap**2 / sigma) * diff


@dataclass(frozen=True)
class CommGraph:
    positions: np.ndarray
    r_comm: float
    sigma: float
    adjacency: np.ndarray
    neighbors: tuple

    @property
    def n(self):
        return self.adjacency.shape[0]

    @property
    def degree(self):
        return self.adjacency.sum(axis=1)

    @property
    def laplacian(self):
        return np.diag(self.degree) - self.adjacency

    def degrees_unweighted(self):
        return np.array([len(nb) for nb in self.neighbors])

    def laplacian_row(self, i):
        """``{l: L_il}`` over the closed neighborhood of ``i``."""
        row = {l: -self.adjacency[i, l] for l in self.neighbors[i]}
        row[i] = self.adjacency[i].sum()
        return row

    def is_connected(self):
        n = self.n
        if n <= 1:
            return True
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for l in self.neighbors[i]:
                if l not in seen:
                    seen.add(l)
                    stack.append(l)
        return len(seen) == n


def build_graph(positions, r_comm, sigma):
    """Disk graph of radius ``r_comm`` with weights from :func:`adjacency_weight`."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(x)
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    in_range = d <= r_comm
    np.fill_diagonal(in_range, False)
    a = np.where(in_range, adjacency_weight(d, r_comm, sigma), 0.0)
    # exact symmetry regardless of rounding in d
    a = 0.5 * (a + a.T)
    neighbors = tuple(tuple(int(l) for l in np.flatnonzero(in_range[i])) for i in range(n))
    x = x.copy()
    x.setflags(write=False)
    a.setflags(write=False)
    return CommGraph(positions=x, r_comm=float(r_comm), sigma=float(sigma),
                     adjacency=a, neighbors=neighbors)


def laplacian_from_adjacency(a):
    a = np.asarray(a, dtype=float)
    return np.diag(a.sum(axis=1)) - a


def fix_sign(v, tol=1e-12):
    """Flip ``v`` so that its first entry with magnitude above ``tol`` is positive."""
    v = np.asarray(v, dtype=float)
    nz = np.flatnonzero(np.abs(v) > tol)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def exact_fiedler(laplacian):
    """Second-smallest eigenpair of a symmetric Laplacian.

    Returns ``(lambda2, nu)`` with ``nu`` unit-norm and sign-normalized. For fewer
    than two nodes ``lambda2`` is 0 and ``nu`` is a zero vector.
    """
    L = np.asarray(laplacian, dtype=float)
    n = L.shape[0]
    if n < 2:
        return 0.0, np.zeros(n)
    vals, vecs = np.linalg.eigh(0.5 * (L + L.T))
    lam2 = max(float(vals[1]), 0.0)
    nu = vecs[:, 1]
    scale = max(float(np.abs(vals).max()), 1.0)
    if vals[1] - vals[0] < 1e-10 * scale:
        # degenerate null space (disconnected graph): take the combination orthogonal to 1
        s0, s1 = vecs[:, 0].sum(), vecs[:, 1].sum()
        nu = s0 * vecs[:, 1] - s1 * vecs[:, 0]
    # remove residual 1-component from rounding before normalizing
    nu = nu - nu.mean()
    nu /= np.linalg.norm(nu)
    return lam2, fix_sign(nu)


def laplacian_spectrum(laplacian):
    return np.linalg.eigvalsh(np.asarray(laplacian, dtype=float))
