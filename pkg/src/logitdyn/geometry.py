"""Softmax cross-entropy geometry for a linear head on a fixed feature.

The model is ``z = W @ phi`` with ``W`` of shape ``(V, d)``.  Everything here
is a pure function of numpy arrays; nothing is cached or mutated.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFeatureError, InvalidInputError, NumericalFailureError

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100
_SIGN_TIE_TOL = 1e-12
_EIG_TIE_TOL = 1e-12


@dataclass(frozen=True)
class FeatureVector:
    """A fixed feature ``phi`` with its cached squared norm ``mu``."""

    phi: np.ndarray
    mu: float = field(init=False)

    def __post_init__(self):
        phi = _vector(self.phi, "phi")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "mu", float(phi @ phi))

    @property
    def d(self) -> int:
        return self.phi.shape[0]


def _vector(x, name) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def _matrix(x, name) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def _label(y, num_classes: int) -> int:
    if isinstance(y, (bool, np.bool_)) or int(y) != y:
        raise InvalidInputError(f"label must be an integer class id, got {y!r}")
    y = int(y)
    if not 0 <= y < num_classes:
        raise InvalidInputError(f"label {y} out of range for {num_classes} classes")
    return y


def as_phi(phi) -> np.ndarray:
    """Return the raw feature array from an array or a :class:`FeatureVector`."""
    if isinstance(phi, FeatureVector):
        return phi.phi
    return _vector(phi, "phi")


def one_hot(y: int, num_classes: int) -> np.ndarray:
    out = np.zeros(num_classes)
    out[_label(y, num_classes)] = 1.0
    return out


def logits(w, phi) -> np.ndarray:
    w = _matrix(w, "w")
    phi = as_phi(phi)
    if w.shape[1] != phi.shape[0]:
        raise InvalidInputError(f"w has {w.shape[1]} columns but phi has length {phi.shape[0]}")
    return w @ phi


def softmax(z) -> np.ndarray:
    z = _vector(z, "z")
    with np.errstate(over="ignore"):  # a spread beyond float range shifts to -inf, i.e. p = 0
        e = np.exp(z - z.max())
    return e / e.sum()


def log_softmax(z) -> np.ndarray:
    z = _vector(z, "z")
    with np.errstate(over="ignore"):
        shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def cross_entropy(z, y: int) -> float:
    """``-log p_y`` evaluated by log-sum-exp."""
    z = _vector(z, "z")
    return float(-log_softmax(z)[_label(y, z.shape[0])])


def logit_gradient(p, y: int) -> np.ndarray:
    """Residual ``g = p - e_y``, the gradient of cross-entropy in logit space."""
    p = _vector(p, "p")
    g = p.copy()
    g[_label(y, p.shape[0])] -= 1.0
    return g


def logit_hessian(p) -> np.ndarray:
    """``Diag(p) - p p^T``; identical for every label."""
    p = _vector(p, "p")
    return np.diag(p) - np.outer(p, p)


def hessian_residual_product(p, y: int) -> np.ndarray:
    """Closed form of ``H_z g``: entry i is ``p_i (p_i - y_i - C)`` with ``C = sum p^2 - p_y``."""
    p = _vector(p, "p")
    y = _label(y, p.shape[0])
    c = p @ p - p[y]
    return p * (p - one_hot(y, p.shape[0]) - c)


def parameter_gradient(g, phi) -> np.ndarray:
    g = _vector(g, "g")
    return np.outer(g, as_phi(phi))


def apply_parameter_hessian(h, dw, phi) -> np.ndarray:
    """Action of the parameter Hessian on ``dw``: ``H_z dw (phi phi^T)``.

    Only the induced logit perturbation ``dw @ phi`` enters.
    """
    h = _matrix(h, "h")
    dw = _matrix(dw, "dw")
    phi = as_phi(phi)
    if dw.shape != (h.shape[0], phi.shape[0]):
        raise InvalidInputError(f"dw shape {dw.shape} incompatible with h {h.shape} and phi {phi.shape}")
    return np.outer(h @ (dw @ phi), phi)


def min_norm_preimage(dz, phi) -> np.ndarray:
    """Smallest-Frobenius-norm ``dW`` with ``dW @ phi == dz``."""
    dz = _vector(dz, "dz")
    phi = as_phi(phi)
    mu = float(phi @ phi)
    if mu == 0.0:
        raise DegenerateFeatureError("phi has zero norm; the logit map is not surjective")
    return np.outer(dz, phi) / mu


# -- eigensolver -------------------------------------------------------------


def jacobi_eigh(a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` in the order the rotations leave
    them; columns of ``eigenvectors`` are the eigenvectors.  Converges when the
    off-diagonal Frobenius mass drops below ``tol * max(1, ||a||_F)``.
    """
    a = _matrix(a, "a").copy()
    n = a.shape[0]
    if a.shape != (n, n):
        raise InvalidInputError(f"matrix must be square, got {a.shape}")
    vecs = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))
    off = _off_norm(a)
    for sweep in range(max_sweeps):
        if off < threshold:
            return np.diag(a).copy(), vecs
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.hypot(1.0, theta))
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ rot
                a[idx, :] = rot.T @ a[idx, :]
                a[p, q] = a[q, p] = 0.0
                vecs[:, idx] = vecs[:, idx] @ rot
        off = _off_norm(a)
    if off < threshold:
        return np.diag(a).copy(), vecs
    raise NumericalFailureError(
        f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal mass {off:.3e})",
        sweeps=max_sweeps,
        off_diagonal=off,
        threshold=threshold,
    )


def _off_norm(a) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def _sum_zero_basis(n: int) -> np.ndarray:
    """Orthonormal basis of the complement of the all-ones vector (Helmert columns)."""
    q = np.zeros((n, n - 1))
    for k in range(1, n):
        q[:k, k - 1] = 1.0
        q[k, k - 1] = -float(k)
        q[:, k - 1] /= np.sqrt(k * (k + 1.0))
    return q


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    mags = np.abs(v)
    lead = int(np.argmax(mags >= mags.max() - _SIGN_TIE_TOL))
    return -v if v[lead] < 0 else v


@dataclass(frozen=True)
class ModalBasis:
    """Positive spectrum of a logit Hessian on the sum-zero subspace.

    ``eigenvectors`` has shape ``(V, V-1)``; column k pairs with
    ``eigenvalues[k]`` (descending).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def coefficients(self, g) -> np.ndarray:
        return self.eigenvectors.T @ np.asarray(g, dtype=np.float64)

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


def spectral_decompose(h) -> ModalBasis:
    """Eigenpairs of a logit Hessian restricted to the complement of ``1``.

    The Hessian is compressed onto an orthonormal sum-zero basis before the
    Jacobi sweep, so every returned eigenvector is orthogonal to ``1`` up to
    rounding and the kernel direction never mixes into the positive modes.
    """
    h = _matrix(h, "h")
    n = h.shape[0]
    if h.shape != (n, n) or n < 2:
        raise InvalidInputError(f"logit Hessian must be square with V >= 2, got {h.shape}")
    if np.max(np.abs(h - h.T)) > 1e-12:
        raise InvalidInputError("logit Hessian is not symmetric")
    if np.max(np.abs(h.sum(axis=1))) > 1e-12:
        raise InvalidInputError("logit Hessian rows do not sum to zero")
    q = _sum_zero_basis(n)
    reduced = q.T @ h @ q
    reduced = 0.5 * (reduced + reduced.T)
    vals, u = jacobi_eigh(reduced)
    vecs = q @ u
    # re-orthonormalize against the accumulated rotation error
    vecs -= np.outer(np.ones(n) / n, vecs.sum(axis=0))
    vecs /= np.linalg.norm(vecs, axis=0)
    cols = [_canonical_sign(vecs[:, k]) for k in range(n - 1)]
    order = _descending_order(vals, cols)
    return ModalBasis(
        eigenvalues=np.array([vals[k] for k in order]),
        eigenvectors=np.column_stack([cols[k] for k in order]),
    )


def _descending_order(vals, cols):
    def cmp(i, j):
        if abs(vals[i] - vals[j]) > _EIG_TIE_TOL * max(1.0, abs(vals[i]), abs(vals[j])):
            return -1 if vals[i] > vals[j] else 1
        for a, b in zip(cols[i], cols[j]):
            if a != b:
                return -1 if a > b else 1
        return 0

    return sorted(range(len(vals)), key=functools.cmp_to_key(cmp))
