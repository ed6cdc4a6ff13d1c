"""Reference computations that share no code with the main path.

Finite differences accumulate in ``np.longdouble``; closed forms and the
two-pass SAM step are evaluated in mpmath at 40 significant digits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import mpmath
import numpy as np

from .errors import InvalidInputError, OracleFailureError

MP_DPS = 40
FD_STEP = 1e-5
FD_CROSS_STEP = 1e-4
KRON_CAP = 4096


@dataclass
class OracleReport:
    quantity: str
    main_value: object
    oracle_value: object
    abs_err: float
    rel_err: float
    tolerance: float
    policy: str  # "abs", "rel" or "either"
    passed: bool

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("main_value", "oracle_value"):
            val = out[key]
            if isinstance(val, np.ndarray):
                out[key] = val.astype(float).tolist()
            elif isinstance(val, (np.floating, np.integer, np.bool_)):
                out[key] = val.item()
        out["pass"] = out.pop("passed")
        return out


def compare(quantity: str, main, oracle, tolerance: float, policy: str = "either") -> OracleReport:
    """Build a report; relative error is taken against the oracle's norm."""
    m = np.asarray(main, dtype=np.float64)
    o = np.asarray(oracle, dtype=np.float64)
    abs_err = float(np.max(np.abs(m - o))) if m.size else 0.0
    scale = float(np.max(np.abs(o))) if o.size else 0.0
    rel_err = abs_err / scale if scale > 0 else (0.0 if abs_err == 0 else np.inf)
    if policy == "abs":
        ok = abs_err <= tolerance
    elif policy == "rel":
        ok = rel_err <= tolerance
    elif policy == "either":
        ok = abs_err <= tolerance or rel_err <= tolerance
    else:
        raise InvalidInputError(f"unknown policy {policy!r}")
    main_val = m if m.ndim else float(m)
    oracle_val = o if o.ndim else float(o)
    return OracleReport(quantity, main_val, oracle_val, abs_err, rel_err, tolerance, policy, bool(ok))


def predicate(quantity: str, value, bound, holds: bool) -> OracleReport:
    """Report for an inequality or membership check; ``abs_err`` is the violation size."""
    v, b = float(value), float(bound)
    gap = 0.0 if holds else abs(v - b)
    return OracleReport(quantity, v, b, gap, gap / abs(b) if b else gap, 0.0, "bound", bool(holds))


# -- finite differences ------------------------------------------------------


def fd_gradient(loss_fn, point, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if not step > 0:
        raise InvalidInputError("finite-difference step must be positive")
    x0 = np.array(point, dtype=np.float64)
    grad = np.zeros(x0.shape, dtype=np.longdouble)
    for idx in np.ndindex(x0.shape):
        xp = x0.copy()
        xm = x0.copy()
        xp[idx] += step
        xm[idx] -= step
        fp, fm = loss_fn(xp), loss_fn(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleFailureError(f"non-finite loss at coordinate {idx}")
        # the realized step can differ from `step` after rounding of x +- h
        width = np.longdouble(xp[idx]) - np.longdouble(xm[idx])
        grad[idx] = (np.longdouble(fp) - np.longdouble(fm)) / width
    return grad.astype(np.float64)


def fd_jacobian(vec_fn, point, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian ``J[i, j] = d f_i / d x_j`` of a vector function."""
    if not step > 0:
        raise InvalidInputError("finite-difference step must be positive")
    x0 = np.array(point, dtype=np.float64)
    cols = []
    for j in range(x0.shape[0]):
        xp = x0.copy()
        xm = x0.copy()
        xp[j] += step
        xm[j] -= step
        fp = np.asarray(vec_fn(xp), dtype=np.longdouble)
        fm = np.asarray(vec_fn(xm), dtype=np.longdouble)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise OracleFailureError(f"non-finite value at coordinate {j}")
        cols.append((fp - fm) / (np.longdouble(xp[j]) - np.longdouble(xm[j])))
    return np.column_stack(cols).astype(np.float64)


def fd_checked(fd_fn, fn, point, tolerance: float):
    """Run a finite-difference oracle at two step sizes and insist they agree.

    Disagreement beyond ``10 * tolerance`` (relative) means the oracle itself
    is unreliable at this point; that raises instead of judging the main code.
    """
    fine = fd_fn(fn, point, FD_STEP)
    coarse = fd_fn(fn, point, FD_CROSS_STEP)
    scale = max(float(np.max(np.abs(fine))), 1e-300)
    spread = float(np.max(np.abs(fine - coarse))) / scale
    if spread > 10 * tolerance:
        raise OracleFailureError(f"finite-difference estimates disagree across step sizes (rel {spread:.2e})")
    return fine


# -- extended precision closed forms ------------------------------------------


def _mpvec(x):
    return [mpmath.mpf(float(v)) for v in np.asarray(x, dtype=np.float64).ravel()]


def mp_softmax(z) -> list:
    with mpmath.workdps(MP_DPS):
        ez = [mpmath.exp(v) for v in _mpvec(z)]
        total = mpmath.fsum(ez)
        return [e / total for e in ez]


def mp_log_prob(z, y: int):
    with mpmath.workdps(MP_DPS):
        zz = _mpvec(z)
        return zz[y] - mpmath.log(mpmath.fsum(mpmath.exp(v) for v in zz))


def mp_cross_entropy(z, y: int) -> float:
    with mpmath.workdps(MP_DPS):
        return float(-mp_log_prob(z, y))


def mp_dpo_margin(z, ref_logits, y_plus: int, y_minus: int, beta: float):
    with mpmath.workdps(MP_DPS):
        lp = mp_log_prob(z, y_plus) - mp_log_prob(ref_logits, y_plus)
        lm = mp_log_prob(z, y_minus) - mp_log_prob(ref_logits, y_minus)
        return mpmath.mpf(float(beta)) * (lp - lm)


def mp_dpo_loss(z, ref_logits, y_plus: int, y_minus: int, beta: float) -> float:
    with mpmath.workdps(MP_DPS):
        m = mp_dpo_margin(z, ref_logits, y_plus, y_minus, beta)
        return float(mpmath.log1p(mpmath.exp(-m)))


def _mp_matvec(w, phi):
    return [mpmath.fsum(wi * pj for wi, pj in zip(row, phi)) for row in w]


def _mp_ce_logit_grad(z, y, sign):
    with mpmath.workdps(MP_DPS):
        ez = [mpmath.exp(v) for v in z]
        total = mpmath.fsum(ez)
        g = [e / total for e in ez]
        g[y] -= 1
        return [sign * v for v in g]


def _mp_dpo_logit_grad(z, ref, y_plus, y_minus, beta):
    with mpmath.workdps(MP_DPS):
        lse = mpmath.log(mpmath.fsum(mpmath.exp(v) for v in z))
        lse_ref = mpmath.log(mpmath.fsum(mpmath.exp(v) for v in ref))
        b = mpmath.mpf(float(beta))
        m = b * ((z[y_plus] - lse) - (ref[y_plus] - lse_ref) - (z[y_minus] - lse) + (ref[y_minus] - lse_ref))
        s = 1 / (1 + mpmath.exp(m))  # sigmoid(-m)
        # d(-log sigmoid(m))/dz = -s * beta * (e_+ - e_-)
        out = [mpmath.mpf(0)] * len(z)
        out[y_plus] -= s * b
        out[y_minus] += s * b
        return out


def mp_sam_step(w, phi, eta: float, rho: float, logit_grad) -> np.ndarray:
    """Two-pass SAM on a linear head, with both gradients materialized in mpmath.

    ``logit_grad`` maps an mpmath logit list to an mpmath gradient list.
    """
    with mpmath.workdps(MP_DPS):
        W = [_mpvec(row) for row in np.asarray(w, dtype=np.float64)]
        ph = _mpvec(phi)
        gz = logit_grad(_mp_matvec(W, ph))
        G = [[gi * pj for pj in ph] for gi in gz]
        norm = mpmath.sqrt(mpmath.fsum(v * v for row in G for v in row))
        r = mpmath.mpf(float(rho))
        if norm == 0:
            Wt = W
        else:
            Wt = [[wv + r * gv / norm for wv, gv in zip(wr, gr)] for wr, gr in zip(W, G)]
        gz2 = logit_grad(_mp_matvec(Wt, ph))
        e = mpmath.mpf(float(eta))
        out = [[wv - e * gi * pj for wv, pj in zip(wr, ph)] for wr, gi in zip(W, gz2)]
        return np.array([[float(v) for v in row] for row in out])


def mp_sam_step_ce(w, phi, y: int, eta: float, rho: float, sign: int = 1) -> np.ndarray:
    return mp_sam_step(w, phi, eta, rho, lambda z: _mp_ce_logit_grad(z, y, sign))


def mp_sam_step_dpo(w, phi, ref_logits, y_plus, y_minus, beta, eta, rho) -> np.ndarray:
    ref = _mpvec(ref_logits)
    return mp_sam_step(w, phi, eta, rho, lambda z: _mp_dpo_logit_grad(z, ref, y_plus, y_minus, beta))


# -- dense Hessians ------------------------------------------------------------


def oracle_logit_hessian(p) -> np.ndarray:
    """``Diag(p) - p p^T`` built entrywise in long double."""
    p = np.asarray(p, dtype=np.longdouble)
    v = p.shape[0]
    h = np.empty((v, v), dtype=np.longdouble)
    for i in range(v):
        for j in range(v):
            h[i, j] = (p[i] if i == j else 0) - p[i] * p[j]
    return h


def dense_kronecker_hessian(p, phi) -> np.ndarray:
    """``(phi phi^T) kron H_z`` for column-stacked ``vec(W)``."""
    p = np.asarray(p, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if p.shape[0] * phi.shape[0] > KRON_CAP:
        raise InvalidInputError(f"V*d = {p.shape[0] * phi.shape[0]} exceeds the dense cap {KRON_CAP}")
    ph = phi.astype(np.longdouble)
    return np.kron(np.outer(ph, ph), oracle_logit_hessian(p)).astype(np.float64)


def vec(m) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(m).reshape(-1, order="F")


def numerical_rank(m, tol_scale: float) -> int:
    s = np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False)
    return int(np.sum(s > tol_scale))


# -- confidence ratios -------------------------------------------------------


def mp_confidence_ratios(z_before, z_after) -> list:
    """``alpha_i = p_i(after) / p_i(before)`` from raw logits, in mpmath."""
    with mpmath.workdps(MP_DPS):
        zb, za = _mpvec(z_before), _mpvec(z_after)
        sb = mpmath.fsum(mpmath.exp(v) for v in zb)
        sa = mpmath.fsum(mpmath.exp(v) for v in za)
        return [float(mpmath.exp(a - b) * sb / sa) for a, b in zip(za, zb)]


def exhaustive_ratio_check(w, phi, y: int, cfg, tolerance: float | None = None) -> list:
    """Check the factorized confidence ratio of every class against direct recomputation."""
    from . import dynamics

    phi = np.asarray(phi, dtype=np.float64)
    w_next = dynamics.step(w, phi, y, cfg)
    direct = mp_confidence_ratios(np.asarray(w) @ phi, w_next @ phi)
    if tolerance is None:
        tolerance = 1e-12 if cfg.optimizer is dynamics.Optimizer.GD else 1e-9
    reports = []
    for i, a_direct in enumerate(direct):
        fr = dynamics.ratio_factorization(w, phi, y, cfg, i, w_next=w_next)
        reports.append(compare(f"alpha_{i}_factorization", fr.alpha_factorized, a_direct, tolerance, "rel"))
    return reports
