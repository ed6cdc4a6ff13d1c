"""Update rules and their first-order logit-space forecasts.

Three updates act on the head ``W``: plain gradient descent, two-pass SAM,
and logits-SAM (perturb only the output layer, reuse the cached hidden
state).  With a fixed feature the head is the whole model, so the last two
coincide.

``predict_step`` gives the linearized forecast of ``(W, z, g)`` after one
update; the gap to the exact step is second order in the step size.  The
ratio helpers explain one-step probability changes class by class.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    as_phi,
    logit_gradient,
    logit_hessian,
    logits,
    one_hot,
    softmax,
    spectral_decompose,
    ModalBasis,
)
from .objectives import CrossEntropyObjective, DPOConfig, DPOObjective, PreferencePair, Sign, SignConvention

RATIO_FLOOR = 1e-300
B_CONST = math.sqrt(2.0)


class Optimizer(str, enum.Enum):
    GD = "GD"
    SAM_FULL = "SAM_FULL"
    LOGITS_SAM = "LOGITS_SAM"


@dataclass(frozen=True)
class UpdateConfig:
    """Step size, SAM radius and rule for one update.

    When ``kappa > 0`` the radius magnitude is tied to the step size,
    ``|rho| = kappa * sqrt(|eta|)``; use :meth:`kappa_scaled` to build one.
    """

    eta: float
    rho: float = 0.0
    kappa: float = 0.0
    optimizer: Optimizer = Optimizer.GD
    sign_convention: SignConvention = SignConvention.THEORY

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        object.__setattr__(self, "sign_convention", SignConvention(self.sign_convention))
        for name in ("eta", "rho", "kappa"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise InvalidInputError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, float(val))
        if abs(self.eta) > 1.0:
            raise InvalidInputError(f"|eta| must not exceed 1, got {self.eta}")
        if self.kappa < 0:
            raise InvalidInputError(f"kappa must be nonnegative, got {self.kappa}")
        if self.kappa > 0 and abs(abs(self.rho) - self.kappa * math.sqrt(abs(self.eta))) > 1e-12:
            raise InvalidInputError(
                f"|rho|={abs(self.rho)} does not equal kappa*sqrt|eta|={self.kappa * math.sqrt(abs(self.eta))}"
            )

    @classmethod
    def kappa_scaled(cls, eta, kappa, rho_sign=1.0, optimizer=Optimizer.SAM_FULL, sign_convention=SignConvention.THEORY):
        rho = math.copysign(kappa * math.sqrt(abs(eta)), rho_sign)
        return cls(eta=eta, rho=rho, kappa=kappa, optimizer=optimizer, sign_convention=sign_convention)

    def with_eta(self, eta: float) -> "UpdateConfig":
        """Same rule at a new step size, rescaling the radius if kappa-scaled."""
        if self.kappa > 0:
            sign = self.rho if self.rho != 0 else 1.0
            return replace(self, eta=eta, rho=math.copysign(self.kappa * math.sqrt(abs(eta)), sign))
        return replace(self, eta=eta)

    @property
    def objective_sign(self) -> Sign:
        return Sign.NEGATIVE if self.sign_convention is SignConvention.PRACTICE else Sign.POSITIVE

    def theory(self) -> "UpdateConfig":
        """The THEORY-convention config producing the same iterates."""
        if self.sign_convention is SignConvention.THEORY:
            return self
        return replace(self, eta=-self.eta, rho=-self.rho, sign_convention=SignConvention.THEORY)

    def practice(self) -> "UpdateConfig":
        """Rewrite a negative-rate THEORY step as a positive-rate step on the negated loss."""
        if self.sign_convention is SignConvention.PRACTICE or self.eta >= 0:
            return self
        return replace(self, eta=-self.eta, rho=-self.rho, sign_convention=SignConvention.PRACTICE)

    @property
    def effective_rho(self) -> float:
        return 0.0 if self.optimizer is Optimizer.GD else self.rho


def _objective(phi, target, cfg: UpdateConfig, dpo: DPOConfig | None = None):
    if isinstance(target, PreferencePair):
        return DPOObjective(target, dpo, cfg.objective_sign)
    if isinstance(target, (CrossEntropyObjective, DPOObjective)):
        return target
    return CrossEntropyObjective(phi, target, cfg.objective_sign)


# -- update rules ------------------------------------------------------------


def gd_step(w, phi, y, cfg: UpdateConfig, dpo: DPOConfig | None = None) -> np.ndarray:
    obj = _objective(phi, y, cfg, dpo)
    return w - cfg.eta * obj.grad(w)


def sam_full_step(w, phi, y, cfg: UpdateConfig, dpo: DPOConfig | None = None) -> np.ndarray:
    """Two-pass SAM: ascend to ``w + rho * grad/||grad||``, descend with the gradient found there."""
    obj = _objective(phi, y, cfg, dpo)
    grad = obj.grad(w)
    norm = np.linalg.norm(grad)
    adv = cfg.rho * grad / norm if norm > 0 else np.zeros_like(grad)
    return w - cfg.eta * obj.grad(w + adv)


def logits_sam_step(w_out, hidden, y_or_pair, cfg: UpdateConfig, dpo: DPOConfig | None = None) -> np.ndarray:
    """One logits-SAM step: perturb only the output layer, reusing the hidden state."""
    obj = _objective(hidden, y_or_pair, cfg, dpo)
    h = obj.hidden
    z = w_out @ h
    obj.loss_at_logits(z)  # pre-perturbation forward pass
    g = np.outer(obj.logit_grad(z), h)
    norm = np.linalg.norm(g)
    e = cfg.rho * g / norm if norm > 0 else np.zeros_like(g)
    z_pert = (w_out + e) @ h
    obj.loss_at_logits(z_pert)
    return w_out - cfg.eta * np.outer(obj.logit_grad(z_pert), h)


_RULES = {
    Optimizer.GD: gd_step,
    Optimizer.SAM_FULL: sam_full_step,
    Optimizer.LOGITS_SAM: logits_sam_step,
}


def step(w, phi, y, cfg: UpdateConfig, dpo: DPOConfig | None = None) -> np.ndarray:
    return _RULES[cfg.optimizer](w, phi, y, cfg, dpo)


# -- first-order forecast ----------------------------------------------------


@dataclass(frozen=True)
class DynamicsPrediction:
    w_pred: np.ndarray
    z_pred: np.ndarray
    g_pred: np.ndarray
    rho_tilde: float
    remainder_budget: float


def equivalent_rho(rho: float, mu: float, g_norm: float) -> float:
    """Logit-space SAM radius ``rho * sqrt(mu) / ||g||``; zero when the residual vanishes."""
    if g_norm == 0.0:
        return 0.0
    return rho * math.sqrt(mu) / g_norm


def predict_step(w, phi, y: int, cfg: UpdateConfig, remainder_constant: float | None = None) -> DynamicsPrediction:
    th = cfg.theory()
    phi = as_phi(phi)
    mu = float(phi @ phi)
    z = logits(w, phi)
    p = softmax(z)
    g = logit_gradient(p, y)
    h = logit_hessian(p)
    rt = equivalent_rho(th.effective_rho, mu, float(np.linalg.norm(g)))
    hg = h @ g
    eta = th.eta
    w_pred = w - eta * (np.outer(g, phi) + rt * np.outer(hg, phi))
    z_pred = z - eta * mu * (g + rt * hg)
    g_pred = g - eta * mu * (hg + rt * (h @ hg))
    budget = math.nan if remainder_constant is None else remainder_constant * eta**2
    return DynamicsPrediction(w_pred, z_pred, g_pred, rt, budget)


@dataclass(frozen=True)
class PredictionError:
    w: float
    z: float
    g: float


def prediction_error(w, phi, y: int, cfg: UpdateConfig, w_next=None) -> PredictionError:
    """Distance between the exact step (or the supplied ``w_next``) and its forecast."""
    phi = as_phi(phi)
    if w_next is None:
        w_next = step(w, phi, y, cfg)
    pred = predict_step(w, phi, y, cfg)
    z_next = w_next @ phi
    g_next = logit_gradient(softmax(z_next), y)
    return PredictionError(
        w=float(np.linalg.norm(w_next - pred.w_pred)),
        z=float(np.linalg.norm(z_next - pred.z_pred)),
        g=float(np.linalg.norm(g_next - pred.g_pred)),
    )


def fit_remainder_constant(etas, errors) -> float:
    """Least-squares ``C`` in ``error ~ C * eta**2``."""
    e2 = np.asarray(etas, dtype=np.float64) ** 2
    return float(np.dot(np.asarray(errors, dtype=np.float64), e2) / np.dot(e2, e2))


ETA_GRID = (4e-3, 2e-3, 1e-3, 5e-4)


@dataclass
class RemainderScaling:
    etas: np.ndarray
    errors: dict  # quantity -> array over the eta grid
    ratios: dict  # quantity -> consecutive error ratios
    constants: dict  # quantity -> fitted C


def remainder_scaling(w, phi, y: int, base: UpdateConfig, etas=ETA_GRID, modal: bool = False) -> RemainderScaling:
    """Prediction error over an eta grid for ``base`` (sign of eta and rho kept).

    ``modal=True`` adds per-mode errors of the frozen-basis recursion as
    quantities ``e_1 .. e_{V-1}``.
    """
    sign = math.copysign(1.0, base.eta)
    errs: dict[str, list] = {"w": [], "z": [], "g": []}
    phi = as_phi(phi)
    for eta in etas:
        cfg = base.with_eta(sign * abs(eta))
        e = prediction_error(w, phi, y, cfg)
        errs["w"].append(e.w)
        errs["z"].append(e.z)
        errs["g"].append(e.g)
        if modal:
            for k, err in enumerate(modal_prediction_error(w, phi, y, cfg), start=1):
                errs.setdefault(f"e_{k}", []).append(err)
    etas = np.abs(np.asarray(etas, dtype=np.float64))
    arrays = {k: np.asarray(v) for k, v in errs.items()}
    ratios = {k: v[:-1] / v[1:] for k, v in arrays.items()}
    consts = {k: fit_remainder_constant(etas, v) for k, v in arrays.items()}
    return RemainderScaling(etas, arrays, ratios, consts)


# -- modal analysis ----------------------------------------------------------


def modal_basis(w, phi) -> ModalBasis:
    return spectral_decompose(logit_hessian(softmax(logits(w, phi))))


def modal_step_predict(basis: ModalBasis, e, cfg: UpdateConfig, mu: float) -> np.ndarray:
    """Per-mode linear map ``e_k -> (1 - eta*mu*(lam_k + rho_t*lam_k**2)) e_k``.

    ``||e|| = ||g||`` because the basis spans the sum-zero subspace, so the
    equivalent radius is recovered from ``e`` itself.
    """
    th = cfg.theory()
    e = np.asarray(e, dtype=np.float64)
    lam = basis.eigenvalues
    rt = equivalent_rho(th.effective_rho, mu, float(np.linalg.norm(e)))
    return (1.0 - th.eta * mu * (lam + rt * lam**2)) * e


def frozen_modal_step(w, phi, y: int, cfg: UpdateConfig):
    """Current coefficients, the actual next coefficients in the frozen basis, and the forecast."""
    phi = as_phi(phi)
    basis = modal_basis(w, phi)
    g = logit_gradient(softmax(logits(w, phi)), y)
    e_now = basis.coefficients(g)
    w_next = step(w, phi, y, cfg)
    e_next = basis.coefficients(logit_gradient(softmax(logits(w_next, phi)), y))
    e_pred = modal_step_predict(basis, e_now, cfg, float(phi @ phi))
    return e_now, e_next, e_pred


def modal_prediction_error(w, phi, y: int, cfg: UpdateConfig) -> np.ndarray:
    _, e_next, e_pred = frozen_modal_step(w, phi, y, cfg)
    return np.abs(e_next - e_pred)


# -- confidence ratios -------------------------------------------------------


def most_confident_incorrect(p, y: int) -> int:
    """``argmax_{j != y} p_j``; lowest index wins ties."""
    masked = np.array(p, dtype=np.float64)
    masked[y] = -np.inf
    return int(np.argmax(masked))


@dataclass(frozen=True)
class ConfidenceRatios:
    alpha: np.ndarray
    y_star: int
    ratios_valid: bool


def confidence_ratios(p_before, p_after, y: int) -> ConfidenceRatios:
    p_before = np.asarray(p_before, dtype=np.float64)
    p_after = np.asarray(p_after, dtype=np.float64)
    if p_before.shape != p_after.shape:
        raise InvalidInputError("probability vectors differ in length")
    ok = p_before >= RATIO_FLOOR
    alpha = np.full(p_before.shape, np.nan)
    alpha[ok] = p_after[ok] / p_before[ok]
    return ConfidenceRatios(alpha, most_confident_incorrect(p_before, y), bool(ok.all()))


@dataclass(frozen=True)
class FactorReport:
    """Multiplicative decomposition of one class's confidence ratio.

    ``exp(dz_j - dz_i) = beta_gd[j] * curvature[j] * remainder[j]`` and
    ``alpha = 1 / sum_j p_j exp(dz_j - dz_i)``.
    """

    i: int
    beta_gd: np.ndarray
    curvature: np.ndarray
    remainder: np.ndarray
    curvature_gap: np.ndarray  # (H_z g)_j - (H_z g)_i
    rho_tilde: float
    alpha_direct: float
    alpha_factorized: float


def ratio_factorization(w, phi, y: int, cfg: UpdateConfig, i: int, w_next=None) -> FactorReport:
    th = cfg.theory()
    phi = as_phi(phi)
    mu = float(phi @ phi)
    z = logits(w, phi)
    p = softmax(z)
    g = logit_gradient(p, y)
    hg = logit_hessian(p) @ g
    rt = equivalent_rho(th.effective_rho, mu, float(np.linalg.norm(g)))
    if w_next is None:
        w_next = step(w, phi, y, cfg)
    z_next = logits(w_next, phi)
    dz = z_next - z
    eta_p = th.eta * mu
    r = dz + eta_p * (g + rt * hg)  # measured logit remainder
    gap = hg - hg[i]
    log_beta = -eta_p * (g - g[i])
    log_curv = -eta_p * rt * gap
    log_rem = r - r[i]
    # sum_j p_j = 1, so 1 + sum_j p_j (F_j - 1) avoids cancellation and is exact for a no-op step
    alpha_fact = 1.0 / (1.0 + float(np.sum(p * np.expm1(log_beta + log_curv + log_rem))))
    alpha_direct = float(softmax(z_next)[i] / p[i])
    return FactorReport(i, np.exp(log_beta), np.exp(log_curv), np.exp(log_rem), gap, rt, alpha_direct, alpha_fact)


@dataclass(frozen=True)
class Top2Diagnostics:
    y_star: int
    S: float
    tau: float
    p_bar_y: float
    delta_bin: float
    gamma0_window: tuple
    feasible: bool
    curvature_gap: float  # exact (H_z g)_{y*} - (H_z g)_y
    zeta: float  # curvature_gap - delta_bin


def top2_diagnostics(p, y: int) -> Top2Diagnostics:
    p = np.asarray(p, dtype=np.float64)
    ys = most_confident_incorrect(p, y)
    s = p[y] + p[ys]
    tail = np.ones(p.shape[0], dtype=bool)
    tail[[y, ys]] = False
    tau = float(p[tail].sum())
    pbar = p[y] / s
    dbin = 4.0 * pbar * (1.0 - pbar) ** 2
    if tau == 0.0:
        lo = 0.0
    elif p[ys] > 0:
        lo = 4.0 * B_CONST * math.e**2 * tau / p[ys]
    else:
        lo = math.inf
    hi = dbin - 6.0 * tau
    hg = logit_hessian(p) @ (p - one_hot(y, p.shape[0]))
    gap = float(hg[ys] - hg[y])
    return Top2Diagnostics(
        y_star=ys,
        S=float(s),
        tau=tau,
        p_bar_y=float(pbar),
        delta_bin=float(dbin),
        gamma0_window=(float(lo), float(hi)),
        feasible=bool(lo <= hi and hi > 0),
        curvature_gap=gap,
        zeta=float(gap - dbin),
    )


def branch_frozen_modes(w, phi, y: int, cfgs) -> list:
    """Frozen-basis coefficients after one step of each config from the same state."""
    phi = as_phi(phi)
    basis = modal_basis(w, phi)
    out = []
    for cfg in cfgs:
        w_next = step(w, phi, y, cfg)
        out.append(basis.coefficients(logit_gradient(softmax(logits(w_next, phi)), y)))
    return out
