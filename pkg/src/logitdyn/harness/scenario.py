"""Two-phase toy experiment, matched-state optimizer comparison, and sweeps."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .. import dynamics as dyn
from ..errors import InvalidInputError, NonFiniteStateError
from ..geometry import logit_gradient, logit_hessian, softmax, spectral_decompose
from .config import ScenarioConfig, optimizer_tag


class Phase(str, enum.Enum):
    SFT = "SFT"
    POST = "POST"


@dataclass(frozen=True)
class TrajectoryRecord:
    """State at ``step`` plus diagnostics of the update that produced it.

    Transition quantities (frozen-basis coefficients, ratios, prediction
    errors) are neutral at step 0: coefficients equal the refreshed ones,
    ratios are 1 and errors are 0.
    """

    step: int
    phase: Phase
    optimizer: str
    probs: np.ndarray
    residual: np.ndarray
    e_frozen: np.ndarray
    e_refreshed: np.ndarray
    eigenvalues: np.ndarray
    alphas: dyn.ConfidenceRatios
    top2: dyn.Top2Diagnostics
    err_w: float
    err_z: float
    err_g: float


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    phi: np.ndarray
    w_sft: np.ndarray
    final_w: dict  # tag -> W after the POST phase
    trajectories: dict  # tag -> list[TrajectoryRecord]

    @property
    def records(self) -> list:
        return [r for tag in self.trajectories for r in self.trajectories[tag]]


def draw_features(cfg: ScenarioConfig) -> np.ndarray:
    """Feature vector from a Philox stream keyed by ``cfg.seed``.

    This is the only draw the scenario makes, so the optimizer list never
    perturbs it.
    """
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    return cfg.feature_scale * rng.standard_normal(cfg.d)


class _Tracker:
    """Carries the previous state across steps so each record costs one eigensolve."""

    def __init__(self, w, phi):
        self.phi = phi
        self._set(w)

    def _set(self, w):
        self.w = w
        self.p = softmax(w @ self.phi)
        self.basis = spectral_decompose(logit_hessian(self.p))

    def initial_record(self, step, phase, y):
        g = logit_gradient(self.p, y)
        e = self.basis.coefficients(g)
        ratios = dyn.ConfidenceRatios(np.ones_like(self.p), dyn.most_confident_incorrect(self.p, y), True)
        return TrajectoryRecord(
            step, phase, "", self.p, g, e, e, self.basis.eigenvalues, ratios,
            dyn.top2_diagnostics(self.p, y), 0.0, 0.0, 0.0,
        )

    def advance(self, step, phase, y, cfg, record: bool):
        w_prev, p_prev, basis_prev = self.w, self.p, self.basis
        w_next = dyn.step(w_prev, self.phi, y, cfg)
        with np.errstate(over="ignore", invalid="ignore"):
            z_next = w_next @ self.phi
        if not (np.all(np.isfinite(w_next)) and np.all(np.isfinite(z_next))):
            raise NonFiniteStateError(
                "non-finite parameters or logits", step,
                dump={"probs_before": p_prev.tolist(), "logits_after": z_next.tolist(),
                      "eta": cfg.eta, "rho": cfg.rho, "label": y},
            )
        self._set(w_next)
        if not record:
            return None
        g = logit_gradient(self.p, y)
        err = dyn.prediction_error(w_prev, self.phi, y, cfg, w_next=w_next)
        return TrajectoryRecord(
            step=step,
            phase=phase,
            optimizer="",
            probs=self.p,
            residual=g,
            e_frozen=basis_prev.coefficients(g),
            e_refreshed=self.basis.coefficients(g),
            eigenvalues=self.basis.eigenvalues,
            alphas=dyn.confidence_ratios(p_prev, self.p, y),
            top2=dyn.top2_diagnostics(self.p, y),
            err_w=err.w,
            err_z=err.z,
            err_g=err.g,
        )


def run_scenario(cfg: ScenarioConfig, practice: bool = False) -> ScenarioResult:
    """SFT with GD, then every configured optimizer from the shared post-SFT state.

    ``practice=True`` runs negative-rate updates as positive-rate updates on
    the negated loss; iterates are unchanged.
    """
    phi = draw_features(cfg)
    tracker = _Tracker(np.zeros((cfg.V, cfg.d)), phi)
    sft_cfg = dyn.UpdateConfig(eta=cfg.eta_sft)
    if practice:
        sft_cfg = sft_cfg.practice()
    sft_records = [tracker.initial_record(0, Phase.SFT, cfg.sft_label)]
    for k in range(1, cfg.sft_epochs + 1):
        rec = tracker.advance(k, Phase.SFT, cfg.sft_label, sft_cfg, k % cfg.log_every == 0)
        if rec is not None:
            sft_records.append(rec)
    w_sft = tracker.w

    trajectories, final_w = {}, {}
    for opt in cfg.optimizers:
        tag = optimizer_tag(opt)
        run_cfg = opt.practice() if practice else opt
        records = [replace(r, optimizer=tag) for r in sft_records]
        post = _Tracker(w_sft, phi)
        for k in range(1, cfg.post_steps + 1):
            step = cfg.sft_epochs + k
            rec = post.advance(step, Phase.POST, cfg.post_label, run_cfg, step % cfg.log_every == 0)
            if rec is not None:
                records.append(replace(rec, optimizer=tag))
        trajectories[tag] = records
        final_w[tag] = post.w
    return ScenarioResult(cfg, phi, w_sft, final_w, trajectories)


# -- matched-state comparison ------------------------------------------------


@dataclass(frozen=True)
class MatchedStep:
    step: int
    e_now: np.ndarray
    e_neg: np.ndarray  # SAM with rho < 0
    e_gd: np.ndarray
    e_pos: np.ndarray  # SAM with rho > 0
    contracting: bool  # every 1 - eta*mu*lam_k > 0
    ordered: bool


def _rho_magnitude(cfg: ScenarioConfig) -> float:
    mags = [abs(o.theory().rho) for o in cfg.optimizers if o.optimizer is not dyn.Optimizer.GD]
    if not mags or max(mags) == 0:
        raise InvalidInputError("matched comparison needs a SAM optimizer with nonzero rho")
    return max(mags)


def run_matched_comparison(cfg: ScenarioConfig, rho: float | None = None, optimizer=dyn.Optimizer.SAM_FULL) -> list:
    """Branch GD and SAM(+-|rho|) from each state of the POST-phase GD trajectory.

    Coefficients are taken in the basis of the branching state.
    """
    rho = _rho_magnitude(cfg) if rho is None else abs(rho)
    phi = draw_features(cfg)
    mu = float(phi @ phi)
    w = np.zeros((cfg.V, cfg.d))
    sft = dyn.UpdateConfig(eta=cfg.eta_sft)
    for _ in range(cfg.sft_epochs):
        w = dyn.step(w, phi, cfg.sft_label, sft)
    gd = dyn.UpdateConfig(eta=cfg.eta_post)
    neg = dyn.UpdateConfig(eta=cfg.eta_post, rho=-rho, optimizer=optimizer)
    pos = dyn.UpdateConfig(eta=cfg.eta_post, rho=rho, optimizer=optimizer)
    y = cfg.post_label
    out = []
    for k in range(cfg.post_steps):
        basis = dyn.modal_basis(w, phi)
        e_now = basis.coefficients(logit_gradient(softmax(w @ phi), y))
        e_neg, e_gd, e_pos = dyn.branch_frozen_modes(w, phi, y, [neg, gd, pos])
        contracting = bool(np.all(1.0 - cfg.eta_post * mu * basis.eigenvalues > 0))
        ordered = bool(np.all(np.abs(e_neg) <= np.abs(e_gd)) and np.all(np.abs(e_gd) <= np.abs(e_pos)))
        out.append(MatchedStep(cfg.sft_epochs + k, e_now, e_neg, e_gd, e_pos, contracting, ordered))
        w = dyn.step(w, phi, y, gd)
    return out


def first_ordering_violation(steps) -> int | None:
    """Earliest contracting step where the three-way ordering fails, if any."""
    for s in steps:
        if s.contracting and not s.ordered:
            return s.step
    return None


# -- sweeps ------------------------------------------------------------------


class SweepAxis(str, enum.Enum):
    RHO = "rho"
    ETA = "eta"


@dataclass
class SweepCell:
    value: float
    config: ScenarioConfig
    result: ScenarioResult
    summary: list  # one dict per optimizer


@dataclass
class SweepResult:
    axis: SweepAxis
    cells: list
    decay_ratios: dict  # (optimizer index, quantity) -> ratios between consecutive cells

    def rows(self) -> list:
        return [dict(value=c.value, **row) for c in self.cells for row in c.summary]


def _cell_config(base: ScenarioConfig, axis: SweepAxis, value: float) -> ScenarioConfig:
    if axis is SweepAxis.ETA:
        return base.with_eta_post(value)
    sam = [o for o in base.optimizers if o.optimizer is not dyn.Optimizer.GD]
    kind = sam[0].optimizer if sam else dyn.Optimizer.SAM_FULL
    opt = dyn.UpdateConfig(eta=base.eta_post, rho=value, optimizer=kind)
    return replace(base, optimizers=(opt,))


def _summarize(result: ScenarioResult) -> list:
    cfg = result.config
    rows = []
    for idx, opt in enumerate(cfg.optimizers):
        tag = optimizer_tag(opt)
        recs = result.trajectories[tag]
        post = [r for r in recs if r.phase is Phase.POST]
        last = recs[-1]
        row = {
            "index": idx,
            "optimizer": tag,
            "eta": opt.theory().eta,
            "rho": opt.theory().rho,
            "final_probs": last.probs.tolist(),
            "final_abs_e": np.abs(last.e_refreshed).tolist(),
        }
        for q in ("w", "z", "g"):
            errs = [getattr(r, f"err_{q}") for r in post]
            row[f"first_err_{q}"] = errs[0] if errs else 0.0
            row[f"C_{q}"] = dyn.fit_remainder_constant([opt.eta] * len(errs), errs) if errs and opt.eta else 0.0
        rows.append(row)
    return rows


def run_sweep(base: ScenarioConfig, axis, values, practice: bool = False) -> SweepResult:
    axis = SweepAxis(axis)
    values = [float(v) for v in values]
    if not values:
        raise InvalidInputError("sweep needs at least one value")
    cells = []
    for v in values:
        cfg = _cell_config(base, axis, v)
        res = run_scenario(cfg, practice=practice)
        cells.append(SweepCell(v, cfg, res, _summarize(res)))
    ratios = {}
    for idx in range(len(cells[0].summary)):
        for q in ("w", "z", "g"):
            errs = np.array([c.summary[idx][f"first_err_{q}"] for c in cells])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios[(idx, q)] = (errs[:-1] / errs[1:]).tolist()
    return SweepResult(axis, cells, ratios)
