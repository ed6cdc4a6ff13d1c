"""Per-example losses: signed cross-entropy and the pairwise DPO objective.

Both responses of a preference pair share one feature vector, so every
objective here is a function of the logits ``z = W @ phi`` only.  The
objective classes at the bottom give the update rules a common
``loss``/``grad`` surface.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import _label, _vector, as_phi, cross_entropy, log_softmax, logit_gradient, logits, softmax


class Sign(str, enum.Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"


class SignConvention(str, enum.Enum):
    """How a negative-gradient update is written.

    THEORY keeps the loss positive and lets the step size go negative;
    PRACTICE negates the loss and keeps the step size positive.
    """

    THEORY = "THEORY"
    PRACTICE = "PRACTICE"


@dataclass(frozen=True)
class DPOConfig:
    beta: float = 0.1
    sign_convention: SignConvention = SignConvention.THEORY

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise InvalidInputError(f"beta must be positive, got {self.beta}")
        object.__setattr__(self, "sign_convention", SignConvention(self.sign_convention))


@dataclass(frozen=True)
class PreferencePair:
    phi: np.ndarray
    y_plus: int
    y_minus: int
    ref_logits: np.ndarray

    def __post_init__(self):
        phi = as_phi(self.phi).copy()
        ref = _vector(self.ref_logits, "ref_logits")
        v = ref.shape[0]
        yp, ym = _label(self.y_plus, v), _label(self.y_minus, v)
        if yp == ym:
            raise InvalidInputError("preferred and dispreferred responses must differ")
        phi.setflags(write=False)
        ref.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "ref_logits", ref)
        object.__setattr__(self, "y_plus", yp)
        object.__setattr__(self, "y_minus", ym)

    @property
    def num_classes(self) -> int:
        return self.ref_logits.shape[0]


def _log_sigmoid(x: float) -> float:
    return -float(np.logaddexp(0.0, -x))


def _sigmoid(x: float) -> float:
    return float(np.exp(_log_sigmoid(x)))


def _margin_from_logits(z, pair: PreferencePair, cfg: DPOConfig) -> float:
    if z.shape[0] != pair.num_classes:
        raise InvalidInputError(f"model has {z.shape[0]} classes, reference has {pair.num_classes}")
    lp = log_softmax(z)
    lr = log_softmax(pair.ref_logits)
    yp, ym = pair.y_plus, pair.y_minus
    return cfg.beta * ((lp[yp] - lr[yp]) - (lp[ym] - lr[ym]))


def implicit_reward_margin(w, pair: PreferencePair, cfg: DPOConfig) -> float:
    """Reward gap ``r(y+) - r(y-)`` of the implicit reward; the partition term cancels."""
    return float(_margin_from_logits(logits(w, pair.phi), pair, cfg))


def dpo_loss(w, pair: PreferencePair, cfg: DPOConfig) -> float:
    return -_log_sigmoid(implicit_reward_margin(w, pair, cfg))


def _dpo_logit_grad(z, pair: PreferencePair, cfg: DPOConfig) -> np.ndarray:
    m = _margin_from_logits(z, pair, cfg)
    p = softmax(z)
    g_plus = logit_gradient(p, pair.y_plus)
    g_minus = logit_gradient(p, pair.y_minus)
    return cfg.beta * _sigmoid(-m) * (g_plus - g_minus)


def dpo_parameter_gradient(w, pair: PreferencePair, cfg: DPOConfig) -> np.ndarray:
    return np.outer(_dpo_logit_grad(logits(w, pair.phi), pair, cfg), pair.phi)


def signed_objective(z, y: int, sign: Sign = Sign.POSITIVE) -> float:
    """``-log p_y`` for POSITIVE, ``+log p_y`` for NEGATIVE."""
    ce = cross_entropy(z, y)
    return ce if Sign(sign) is Sign.POSITIVE else -ce


def signed_logit_gradient(z, y: int, sign: Sign = Sign.POSITIVE) -> np.ndarray:
    g = logit_gradient(softmax(z), y)
    return g if Sign(sign) is Sign.POSITIVE else -g


class CrossEntropyObjective:
    """Signed cross-entropy of one labelled example as a function of ``W``."""

    def __init__(self, phi, y: int, sign: Sign = Sign.POSITIVE):
        self.hidden = as_phi(phi)
        self.y = int(y)
        self.sign = Sign(sign)

    def loss_at_logits(self, z) -> float:
        return signed_objective(z, self.y, self.sign)

    def logit_grad(self, z) -> np.ndarray:
        return signed_logit_gradient(z, self.y, self.sign)

    def loss(self, w) -> float:
        return self.loss_at_logits(logits(w, self.hidden))

    def grad(self, w) -> np.ndarray:
        return np.outer(self.logit_grad(logits(w, self.hidden)), self.hidden)


class DPOObjective:
    """Pairwise DPO loss of one preference pair as a function of ``W``; NEGATIVE flips it."""

    def __init__(self, pair: PreferencePair, cfg: DPOConfig | None = None, sign: Sign = Sign.POSITIVE):
        self.pair = pair
        self.cfg = cfg or DPOConfig()
        self.hidden = pair.phi
        self.sign = Sign(sign)

    def loss_at_logits(self, z) -> float:
        loss = -_log_sigmoid(_margin_from_logits(_vector(z, "z"), self.pair, self.cfg))
        return loss if self.sign is Sign.POSITIVE else -loss

    def logit_grad(self, z) -> np.ndarray:
        g = _dpo_logit_grad(_vector(z, "z"), self.pair, self.cfg)
        return g if self.sign is Sign.POSITIVE else -g

    def loss(self, w) -> float:
        return self.loss_at_logits(logits(w, self.hidden))

    def grad(self, w) -> np.ndarray:
        return np.outer(self.logit_grad(logits(w, self.hidden)), self.hidden)
