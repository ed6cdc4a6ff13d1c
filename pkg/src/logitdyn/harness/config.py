"""Scenario configuration: strict JSON in, validated dataclasses out."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..dynamics import Optimizer, UpdateConfig
from ..errors import InvalidInputError
from ..objectives import SignConvention

_UPDATE_KEYS = {f.name for f in fields(UpdateConfig)}


def default_optimizers(eta_post: float = -0.02, rho: float = 0.3) -> list:
    return [
        UpdateConfig(eta=eta_post),
        UpdateConfig(eta=eta_post, rho=-rho, optimizer=Optimizer.SAM_FULL),
        UpdateConfig(eta=eta_post, rho=rho, optimizer=Optimizer.SAM_FULL),
    ]


@dataclass(frozen=True)
class ScenarioConfig:
    """The two-phase toy experiment.

    A single example with feature ``feature_scale * N(0, I_d)`` is trained
    for ``sft_epochs`` GD steps towards ``sft_label``; each optimizer then
    runs ``post_steps`` updates towards ``post_label`` from that shared state.
    """

    d: int = 1000
    V: int = 3
    seed: int = 0
    feature_scale: float = 0.03
    sft_epochs: int = 10
    sft_label: int = 0
    post_label: int = 1
    post_steps: int = 200
    eta_sft: float = 0.5
    eta_post: float = -0.02
    optimizers: tuple = field(default_factory=lambda: tuple(default_optimizers()))
    log_every: int = 1

    def __post_init__(self):
        for name in ("d", "V", "seed", "sft_epochs", "sft_label", "post_label", "post_steps", "log_every"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int):
                raise InvalidInputError(f"{name} must be an integer, got {val!r}")
        if self.d < 1:
            raise InvalidInputError("d must be >= 1")
        if self.V < 2:
            raise InvalidInputError("V must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be an unsigned 64-bit integer")
        if self.sft_epochs < 0 or self.post_steps < 0:
            raise InvalidInputError("step counts must be nonnegative")
        if self.log_every < 1:
            raise InvalidInputError("log_every must be >= 1")
        for name in ("sft_label", "post_label"):
            if not 0 <= getattr(self, name) < self.V:
                raise InvalidInputError(f"{name} out of range for V={self.V}")
        if self.sft_label == self.post_label:
            raise InvalidInputError("post_label must differ from sft_label")
        for name in ("feature_scale", "eta_sft", "eta_post"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        opts = tuple(self.optimizers)
        if not opts:
            raise InvalidInputError("at least one optimizer is required")
        # validation of each step size happens in UpdateConfig
        UpdateConfig(eta=self.eta_sft)
        object.__setattr__(self, "optimizers", opts)
        tags = [optimizer_tag(o) for o in opts]
        if len(set(tags)) != len(tags):
            raise InvalidInputError(f"duplicate optimizer entries: {tags}")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        eta_post = kwargs.get("eta_post", cls.eta_post)
        if "optimizers" in kwargs:
            kwargs["optimizers"] = tuple(_update_from_dict(o, eta_post) for o in kwargs["optimizers"])
        elif "eta_post" in kwargs:
            kwargs["optimizers"] = tuple(o.with_eta(eta_post) for o in default_optimizers())
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["optimizers"] = [_update_to_dict(o) for o in self.optimizers]
        return out

    def with_eta_post(self, eta: float) -> "ScenarioConfig":
        return replace(self, eta_post=eta, optimizers=tuple(o.with_eta(eta) for o in self.optimizers))


def _update_from_dict(data: dict, eta_post: float) -> UpdateConfig:
    if not isinstance(data, dict):
        raise InvalidInputError(f"optimizer entries must be objects, got {data!r}")
    unknown = set(data) - _UPDATE_KEYS
    if unknown:
        raise InvalidInputError(f"unknown optimizer keys: {sorted(unknown)}")
    kwargs = dict(data)
    kwargs.setdefault("eta", eta_post)
    try:
        kwargs["optimizer"] = Optimizer(kwargs.get("optimizer", "GD"))
        kwargs["sign_convention"] = SignConvention(kwargs.get("sign_convention", "THEORY"))
    except ValueError as exc:
        raise InvalidInputError(str(exc)) from None
    kappa = kwargs.get("kappa", 0.0)
    if kappa:
        sign = kwargs.get("rho") or 1.0
        kwargs["rho"] = math.copysign(kappa * math.sqrt(abs(kwargs["eta"])), sign)
    return UpdateConfig(**kwargs)


def _update_to_dict(cfg: UpdateConfig) -> dict:
    return {
        "eta": cfg.eta,
        "rho": cfg.rho,
        "kappa": cfg.kappa,
        "optimizer": cfg.optimizer.value,
        "sign_convention": cfg.sign_convention.value,
    }


def optimizer_tag(cfg: UpdateConfig) -> str:
    th = cfg.theory()
    if th.optimizer is Optimizer.GD:
        return "GD"
    return f"{th.optimizer.value}_rho{th.rho:+g}"


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: top-level JSON value must be an object")
    try:
        return ScenarioConfig.from_dict(data)
    except TypeError as exc:  # wrongly typed JSON values
        raise InvalidInputError(f"{path}: {exc}") from None
