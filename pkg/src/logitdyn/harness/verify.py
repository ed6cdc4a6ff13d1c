"""Invariant and oracle batteries behind ``logitdyn verify``.

Each battery takes a trial count and a seed and returns a list of
``OracleReport``; :func:`summarize` folds them to one worst-case line per
quantity for the JSON report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import dynamics as dyn
from .. import geometry as geo
from .. import oracle as orc
from ..errors import InvalidInputError
from ..objectives import DPOConfig, PreferencePair, dpo_loss, dpo_parameter_gradient

SUITES = ("geometry", "dynamics", "ratios", "equivalence")
FAULTS = ("hz_sign",)

ROUNDING_SLACK = 8 * np.finfo(np.float64).eps

GEOMETRY_SHAPES = [(v, d) for v in (2, 3, 5) for d in (1, 2, 5)]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def random_state(rng, v: int, d: int, w_scale: float = 1.0, min_prob: float = 0.0, tries: int = 1000):
    """``(W, phi, y)`` with standard-normal entries, rejecting states with ``min p < min_prob``."""
    for _ in range(tries):
        w = w_scale * rng.standard_normal((v, d))
        phi = rng.standard_normal(d)
        if geo.softmax(w @ phi).min() >= min_prob:
            return w, phi, int(rng.integers(v))
    raise InvalidInputError(f"no state with min p >= {min_prob} after {tries} draws")


def flipped_hessian(p) -> np.ndarray:
    """Sign-corrupted logit Hessian used for fault injection."""
    return -geo.logit_hessian(p)


# -- geometry ----------------------------------------------------------------


def geometry_battery(n: int = 500, seed: int = 0, hessian_fn=geo.logit_hessian) -> list:
    rng = _rng(seed)
    out = []
    for t in range(n):
        v, d = GEOMETRY_SHAPES[t % len(GEOMETRY_SHAPES)]
        w, phi, y = random_state(rng, v, d, w_scale=0.5, min_prob=1e-6)
        p = geo.softmax(w @ phi)
        h = hessian_fn(p)
        h_ref = orc.oracle_logit_hessian(p)
        dw1, dw2 = rng.standard_normal((2, v, d))

        main = float(np.sum(dw1 * geo.apply_parameter_hessian(h, dw2, phi)))
        a = (dw1 @ phi).astype(np.longdouble)
        b = (dw2 @ phi).astype(np.longdouble)
        out.append(orc.compare("pullback_identity", main, float(a @ h_ref @ b), 1e-10))

        dense = orc.dense_kronecker_hessian(p, phi)
        action = orc.vec(geo.apply_parameter_hessian(h, dw2, phi))
        out.append(orc.compare("kronecker_action", action, dense @ orc.vec(dw2), 1e-10))

        # matrix-free operator materialized column by column
        cols = []
        for idx in np.ndindex(v, d):
            e = np.zeros((v, d))
            e[idx] = 1.0
            cols.append(orc.vec(geo.apply_parameter_hessian(h, e, phi)))
        op = np.array(cols).T
        s_max = max(np.linalg.norm(dense, 2), 1e-300)
        rank_main = orc.numerical_rank(op, 1e-10 * s_max)
        rank_ref = orc.numerical_rank(dense, 1e-10 * s_max)
        out.append(orc.compare("kronecker_rank", rank_main, rank_ref, 0.0, "abs"))
        out.append(orc.compare("kronecker_rank_is_V_minus_1", rank_ref, v - 1, 0.0, "abs"))

        out.append(orc.compare("kernel_contains_ones", h @ np.ones(v), np.zeros(v), 1e-10, "abs"))
        vals, _ = geo.jacobi_eigh(h)
        vals = np.sort(vals)
        # one eigenvalue at zero, the rest strictly positive: kernel is exactly span{1}
        out.append(orc.predicate("kernel_is_span_ones", vals[1], 0.0, vals[1] > 0 and abs(vals[0]) <= 1e-10))
        out.append(orc.predicate("hessian_norm_bound", np.max(np.abs(vals)), 0.5, np.max(np.abs(vals)) <= 0.5 + 1e-10))

        g = geo.logit_gradient(p, y)
        out.append(orc.compare("hessian_residual_closed_form", geo.hessian_residual_product(p, y), h_ref @ g, 1e-10))
    return out


def derivative_battery(n: int = 200, seed: int = 1) -> list:
    rng = _rng(seed)
    out = []
    for t in range(n):
        v, d = GEOMETRY_SHAPES[t % len(GEOMETRY_SHAPES)]
        w, phi, y = random_state(rng, v, d, min_prob=1e-4)
        z = w @ phi
        fd = orc.fd_checked(orc.fd_gradient, lambda x: geo.cross_entropy(x, y), z, 1e-6)
        out.append(orc.compare("logit_gradient_fd", geo.logit_gradient(geo.softmax(z), y), fd, 1e-6, "rel"))
        fd = orc.fd_checked(orc.fd_jacobian, lambda x: geo.logit_gradient(geo.softmax(x), y), z, 1e-5)
        out.append(orc.compare("logit_hessian_fd", geo.logit_hessian(geo.softmax(z)), fd, 1e-5, "rel"))

        y_minus = int((y + 1 + rng.integers(v - 1)) % v)
        pair = PreferencePair(phi, y, y_minus, rng.standard_normal(v))
        cfg = DPOConfig(beta=float(rng.uniform(0.05, 1.0)))
        fd = orc.fd_checked(orc.fd_gradient, lambda x: dpo_loss(x, pair, cfg), w, 1e-6)
        out.append(orc.compare("dpo_parameter_gradient_fd", dpo_parameter_gradient(w, pair, cfg), fd, 1e-6, "rel"))
    return out


# -- dynamics ----------------------------------------------------------------


def remainder_battery(n_seeds: int = 20, seed: int = 0, v: int = 3, d: int = 4) -> list:
    """Consecutive error ratios over the eta grid for (W, z, g) and each frozen mode."""
    out = []
    for s in range(seed, seed + n_seeds):
        w, phi, y = random_state(_rng(s), v, d, min_prob=0.01)
        base = dyn.UpdateConfig.kappa_scaled(dyn.ETA_GRID[0], 0.1)
        sc = dyn.remainder_scaling(w, phi, y, base, modal=True)
        for q, ratios in sc.ratios.items():
            name = f"remainder_ratio_{q}" if q in ("w", "z", "g") else f"modal_remainder_ratio_{q}"
            for r in ratios:
                out.append(orc.predicate(name, r, 4.0, 3.0 <= r <= 5.0))
            scaled = sc.errors[q] / sc.etas**2
            band = float(scaled.max() / scaled.min())
            out.append(orc.predicate(f"remainder_band_{q}", band, 2.0, band <= 2.0))
    return out


def _annihilating_eta(mu: float, lam: float) -> float:
    """Step size with ``(eta * mu) * lam == 1`` exactly in float arithmetic."""
    eta = 1.0 / (mu * lam)
    for _ in range(64):
        prod = (eta * mu) * lam
        if prod == 1.0:
            return eta
        eta = math.nextafter(eta, 0.0 if prod > 1.0 else math.inf)
    raise InvalidInputError("no float step size annihilates this mode")


def annihilation_battery(n: int = 50, seed: int = 2) -> list:
    rng = _rng(seed)
    out = []
    for t in range(n):
        v = (2, 3, 5)[t % 3]
        w, phi, y = random_state(rng, v, 3, min_prob=1e-3)
        p = geo.softmax(w @ phi)
        basis = geo.spectral_decompose(geo.logit_hessian(p))
        e = basis.coefficients(geo.logit_gradient(p, y))
        k = int(rng.integers(v - 1))
        mu = 4.0 / basis.eigenvalues[k]
        try:
            eta = _annihilating_eta(mu, basis.eigenvalues[k])
        except InvalidInputError:
            continue
        pred = dyn.modal_step_predict(basis, e, dyn.UpdateConfig(eta=eta), mu)
        out.append(orc.compare("modal_annihilation", pred[k], 0.0, 0.0, "abs"))
    return out


def structural_battery(n: int = 100, seed: int = 3) -> list:
    """logits-SAM against full SAM, for cross-entropy and DPO targets."""
    rng = _rng(seed)
    out = []
    for t in range(n):
        v, d = GEOMETRY_SHAPES[t % len(GEOMETRY_SHAPES)]
        w, phi, y = random_state(rng, v, d)
        eta = float(rng.choice([-1.0, 1.0]) * 10 ** rng.uniform(-4, -1))
        rho = float(rng.uniform(-0.5, 0.5))
        target = y
        if t % 2:
            target = PreferencePair(phi, y, (y + 1) % v, rng.standard_normal(v))
        a = dyn.sam_full_step(w, phi, target, dyn.UpdateConfig(eta, rho, optimizer=dyn.Optimizer.SAM_FULL))
        b = dyn.logits_sam_step(w, phi, target, dyn.UpdateConfig(eta, rho, optimizer=dyn.Optimizer.LOGITS_SAM))
        out.append(orc.compare("logits_sam_equals_full_sam", b, a, 1e-15, "abs"))
    return out


def sam_oracle_battery(n: int = 20, seed: int = 4) -> list:
    rng = _rng(seed)
    out = []
    for t in range(n):
        v, d = GEOMETRY_SHAPES[t % len(GEOMETRY_SHAPES)]
        w, phi, y = random_state(rng, v, d)
        eta = float(rng.uniform(-0.1, 0.1))
        rho = float(rng.uniform(-0.5, 0.5))
        main = dyn.sam_full_step(w, phi, y, dyn.UpdateConfig(eta, rho, optimizer=dyn.Optimizer.SAM_FULL))
        out.append(orc.compare("sam_two_pass_mp", main, orc.mp_sam_step_ce(w, phi, y, eta, rho), 1e-12))
        pair = PreferencePair(phi, y, (y + 1) % v, rng.standard_normal(v))
        cfg = dyn.UpdateConfig(eta, rho, optimizer=dyn.Optimizer.SAM_FULL)
        main = dyn.sam_full_step(w, phi, pair, cfg, DPOConfig(beta=0.5))
        ref = orc.mp_sam_step_dpo(w, phi, pair.ref_logits, y, (y + 1) % v, 0.5, eta, rho)
        out.append(orc.compare("sam_two_pass_mp_dpo", main, ref, 1e-12))
    return out


def gd_forecast_battery(n: int = 50, seed: int = 5) -> list:
    """GD forecasts of W and z carry no remainder."""
    rng = _rng(seed)
    out = []
    for t in range(n):
        v, d = GEOMETRY_SHAPES[t % len(GEOMETRY_SHAPES)]
        w, phi, y = random_state(rng, v, d)
        err = dyn.prediction_error(w, phi, y, dyn.UpdateConfig(float(rng.uniform(-0.5, 0.5))))
        out.append(orc.compare("gd_forecast_exact_w", err.w, 0.0, 1e-12, "abs"))
        out.append(orc.compare("gd_forecast_exact_z", err.z, 0.0, 1e-12, "abs"))
    return out


# -- confidence ratios -------------------------------------------------------


def _interior_state(rng, min_prob=1e-3):
    v, d = GEOMETRY_SHAPES[int(rng.integers(len(GEOMETRY_SHAPES)))]
    return random_state(rng, v, d, w_scale=float(rng.uniform(0.2, 2.0)), min_prob=min_prob)


def negative_rate_gd_battery(n: int = 1000, seed: int = 6) -> list:
    """Negative-rate GD raises the runner-up and lowers the target class."""
    rng = _rng(seed)
    out = []
    for _ in range(n):
        w, phi, y = _interior_state(rng)
        eta = -float(10 ** rng.uniform(-3, math.log10(0.5)))
        p = geo.softmax(w @ phi)
        p_next = geo.softmax(dyn.gd_step(w, phi, y, dyn.UpdateConfig(eta)) @ phi)
        ys = dyn.most_confident_incorrect(p, y)
        a_star, a_y = p_next[ys] / p[ys], p_next[y] / p[y]
        out.append(orc.predicate("gd_alpha_ystar_above_1", a_star, 1.0, a_star > 1.0))
        out.append(orc.predicate("gd_alpha_y_below_1", a_y, 1.0, a_y < 1.0))
    return out


def sam_ratio_battery(n: int = 1000, seed: int = 7) -> list:
    """Negative-radius SAM against GD from the same state, plus the top-2 residual bound."""
    rng = _rng(seed)
    out = []
    for _ in range(n):
        w, phi, y = _interior_state(rng)
        eta = -float(10 ** rng.uniform(-5, -3))
        gd = dyn.UpdateConfig(eta)
        sam = dyn.UpdateConfig.kappa_scaled(eta, 0.1, rho_sign=-1.0)
        p = geo.softmax(w @ phi)
        a_gd = geo.softmax(dyn.step(w, phi, y, gd) @ phi) / p
        a_sam = geo.softmax(dyn.step(w, phi, y, sam) @ phi) / p
        t2 = dyn.top2_diagnostics(p, y)
        ys = t2.y_star
        out.append(orc.predicate("sam_alpha_ystar_le_gd", a_sam[ys] - a_gd[ys], 0.0, a_sam[ys] <= a_gd[ys]))
        if t2.feasible:
            out.append(orc.predicate("sam_alpha_y_ge_gd_when_feasible", a_sam[y] - a_gd[y], 0.0, a_sam[y] >= a_gd[y]))
        # zeta is exactly 0 for two classes; allow rounding of the O(1) terms it is built from
        bound = 6 * t2.tau + ROUNDING_SLACK
        out.append(orc.predicate("top2_zeta_bound", abs(t2.zeta), bound, abs(t2.zeta) <= bound))
    return out


def factorization_battery(n: int = 100, seed: int = 8) -> list:
    rng = _rng(seed)
    out = []
    for t in range(n):
        w, phi, y = _interior_state(rng)
        eta = -float(10 ** rng.uniform(-4, -1))
        if t % 2:
            cfg = dyn.UpdateConfig.kappa_scaled(eta, 0.1, rho_sign=float(rng.choice([-1.0, 1.0])))
        else:
            cfg = dyn.UpdateConfig(eta)
        out.extend(orc.exhaustive_ratio_check(w, phi, y, cfg))
    return out


# -- sign conventions -------------------------------------------------------------


def equivalence_battery(n: int = 100, seed: int = 9) -> list:
    """THEORY (negative rate) against PRACTICE (negated loss) from identical states."""
    rng = _rng(seed)
    out = []
    for t in range(n):
        v, d = GEOMETRY_SHAPES[t % len(GEOMETRY_SHAPES)]
        w, phi, y = random_state(rng, v, d)
        eta = -float(10 ** rng.uniform(-4, 0))
        rho = float(rng.uniform(-0.5, 0.5))
        gd = dyn.UpdateConfig(eta)
        same = np.array_equal(dyn.step(w, phi, y, gd), dyn.step(w, phi, y, gd.practice()))
        out.append(orc.predicate("practice_gd_bit_identical", 0.0 if same else 1.0, 0.0, same))
        for kind in (dyn.Optimizer.SAM_FULL, dyn.Optimizer.LOGITS_SAM):
            cfg = dyn.UpdateConfig(eta, rho, optimizer=kind)
            a, b = dyn.step(w, phi, y, cfg), dyn.step(w, phi, y, cfg.practice())
            out.append(orc.compare(f"practice_{kind.value.lower()}_identical", b, a, 1e-12, "abs"))
        pair = PreferencePair(phi, y, (y + 1) % v, rng.standard_normal(v))
        cfg = dyn.UpdateConfig(eta, rho, optimizer=dyn.Optimizer.SAM_FULL)
        a, b = dyn.step(w, phi, pair, cfg), dyn.step(w, phi, pair, cfg.practice())
        out.append(orc.compare("practice_dpo_sam_identical", b, a, 1e-12, "abs"))
    return out


# -- suites ------------------------------------------------------------------


def run_suite(name: str, fault: str | None = None) -> list:
    if fault is not None and fault not in FAULTS:
        raise InvalidInputError(f"unknown fault {fault!r}")
    hess = flipped_hessian if fault == "hz_sign" else geo.logit_hessian
    if name == "all":
        return [r for s in SUITES for r in run_suite(s, fault)]
    if name == "geometry":
        return geometry_battery(hessian_fn=hess) + derivative_battery()
    if name == "dynamics":
        return (remainder_battery() + annihilation_battery() + structural_battery()
                + sam_oracle_battery() + gd_forecast_battery())
    if name == "ratios":
        return negative_rate_gd_battery() + sam_ratio_battery() + factorization_battery()
    if name == "equivalence":
        return equivalence_battery()
    raise InvalidInputError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")


@dataclass
class CheckSummary:
    quantity: str
    trials: int
    failures: int
    worst: orc.OracleReport

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict:
        return {"quantity": self.quantity, "trials": self.trials, "failures": self.failures,
                "pass": self.passed, "worst": self.worst.to_dict()}


def summarize(reports) -> list:
    """One entry per quantity, keeping the first failure or else the largest error."""
    groups: dict[str, list] = {}
    for r in reports:
        groups.setdefault(r.quantity, []).append(r)
    out = []
    for q, rs in groups.items():
        bad = [r for r in rs if not r.passed]
        worst = bad[0] if bad else max(rs, key=lambda r: r.abs_err)
        out.append(CheckSummary(q, len(rs), len(bad), worst))
    return out


def failing_quantities(reports) -> list:
    return [s.quantity for s in summarize(reports) if not s.passed]
