"""Domain types shared across the package.

A theta-fair non-intrusive protocol is fully described by the transmission
probability after an idle slot (``q``), after a failed transmission (``r``)
and the fairness level ``theta``.  The remaining entries of the one-slot
memory map are fixed: ``f(busy) = 0`` and ``f(success) = 1 - theta``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Optional


class ValidationError(ValueError):
    """An argument is outside its admissible range."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class ModelDomainError(ValueError):
    """Parameters fall outside the region where the analytic model applies."""


class NumericalError(ArithmeticError):
    """A linear solve failed or returned an unacceptable residual."""

    def __init__(self, message: str, params: Optional[dict] = None):
        self.params = params or {}
        if self.params:
            message = f"{message} (params: {self.params})"
        super().__init__(message)


class InfeasibleError(ValueError):
    """No point of the search domain satisfies the design constraints."""

    def __init__(self, message: str, min_t_col: float = math.nan):
        self.min_t_col = min_t_col
        super().__init__(message)


class TrafficModel(str, Enum):
    DETERMINISTIC = "deterministic"
    GEOMETRIC = "geometric"


def _check_probability(name: str, value: float, *, open_low: bool = False) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(name, f"expected a number, got {value!r}") from None
    if math.isnan(value):
        raise ValidationError(name, "must not be NaN")
    if open_low:
        if not 0.0 < value <= 1.0:
            raise ValidationError(name, f"must lie in (0, 1], got {value}")
    elif not 0.0 <= value <= 1.0:
        raise ValidationError(name, f"must lie in [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class Protocol:
    """One-slot memory protocol; ``f_success`` and ``f_busy`` are derived."""

    q: float
    r: float
    theta: float
    f_success: float = field(init=False)
    f_busy: float = field(init=False, default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "q", _check_probability("q", self.q))
        object.__setattr__(self, "r", _check_probability("r", self.r))
        object.__setattr__(self, "theta", _check_probability("theta", self.theta, open_low=True))
        object.__setattr__(self, "f_success", 1.0 - self.theta)
        object.__setattr__(self, "f_busy", 0.0)

    def transmit_probability(self, last_outcome: str) -> float:
        """Return f(y) for ``y`` in {idle, busy, success, failure}."""
        return {
            "idle": self.q,
            "busy": self.f_busy,
            "success": self.f_success,
            "failure": self.r,
        }[last_outcome]

    def fairness_level(self, n: int) -> float:
        # 1 - f(success) (1 - f(busy))^(N-1); equals theta because f(busy) = 0
        return 1.0 - self.f_success * (1.0 - self.f_busy) ** (n - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Protocol":
        proto = cls(data["q"], data["r"], data["theta"])
        if "f_success" in data and not math.isclose(data["f_success"], proto.f_success, abs_tol=1e-12):
            raise ValidationError("f_success", "inconsistent with theta")
        if data.get("f_busy", 0.0) != 0.0:
            raise ValidationError("f_busy", "non-intrusive protocols require f_busy = 0")
        return proto


def make_protocol(q: float, r: float, theta: float) -> Protocol:
    return Protocol(q, r, theta)


@dataclass(frozen=True)
class NetworkConfig:
    n_secondary: int
    t_int: float
    t_pac: float
    traffic_model: TrafficModel = TrafficModel.GEOMETRIC

    def __post_init__(self):
        n = self.n_secondary
        if isinstance(n, bool) or not isinstance(n, int):
            if isinstance(n, float) and n.is_integer():
                n = int(n)
            else:
                raise ValidationError("n_secondary", f"expected an integer, got {n!r}")
        if n < 1:
            raise ValidationError("n_secondary", f"must be >= 1, got {n}")
        object.__setattr__(self, "n_secondary", n)
        for name in ("t_int", "t_pac"):
            value = float(getattr(self, name))
            if not value > 0 or math.isinf(value):
                raise ValidationError(name, f"must be a positive finite number, got {value}")
            object.__setattr__(self, name, value)
        if not self.t_pac < self.t_int:
            raise ValidationError("t_pac", f"must be smaller than t_int ({self.t_pac} >= {self.t_int})")
        try:
            object.__setattr__(self, "traffic_model", TrafficModel(self.traffic_model))
        except ValueError:
            raise ValidationError("traffic_model", f"unknown model {self.traffic_model!r}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["traffic_model"] = self.traffic_model.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        return cls(
            data["n_secondary"],
            data["t_int"],
            data["t_pac"],
            data.get("traffic_model", TrafficModel.GEOMETRIC.value),
        )


@dataclass(frozen=True)
class Metrics:
    p_s: float
    t_ns_tilde: float
    t_s_tilde: float
    t_col: float
    p_c: float
    c_s: float
    c_p: float
    c_total: float
    efficiency: float

    def to_dict(self) -> dict:
        return asdict(self)


def gamma_from_eta(eta: float, t_pac: float) -> float:
    """Collision threshold equivalent to the protection level ``eta``.

    ``P_c <= eta`` holds exactly when ``T_col <= gamma``.
    """
    eta = float(eta)
    if not 0.0 < eta < 1.0:
        raise ValidationError("eta", f"must lie in (0, 1), got {eta}")
    if not t_pac > 0:
        raise ValidationError("t_pac", f"must be positive, got {t_pac}")
    return eta / (1.0 - eta) * t_pac


def collision_probability(t_col: float, t_pac: float) -> float:
    return t_col / (t_pac + t_col)


@dataclass(frozen=True)
class DesignProblem:
    """Design problem settings.

    ``gamma=None`` (with no ``eta``) means the collision constraint is absent.
    """

    config: NetworkConfig
    theta: float
    gamma: Optional[float] = None
    eta: Optional[float] = None
    epsilon: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "theta", _check_probability("theta", self.theta, open_low=True))
        if self.eta is not None:
            derived = gamma_from_eta(self.eta, self.config.t_pac)
            if self.gamma is not None and not math.isclose(self.gamma, derived, rel_tol=1e-12):
                raise ValidationError("gamma", "conflicts with eta")
            object.__setattr__(self, "gamma", derived)
        if self.gamma is not None:
            gamma = float(self.gamma)
            if math.isinf(gamma):
                gamma = None
            elif not gamma > 0:
                raise ValidationError("gamma", f"must be positive, got {gamma}")
            object.__setattr__(self, "gamma", gamma)
        eps = float(self.epsilon)
        if not 0.0 < eps < 0.5:
            raise ValidationError("epsilon", f"must lie in (0, 0.5), got {eps}")
        object.__setattr__(self, "epsilon", eps)

    @property
    def constrained(self) -> bool:
        return self.gamma is not None

    def replace(self, **changes: Any) -> "DesignProblem":
        fields = {
            "config": self.config,
            "theta": self.theta,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
        }
        fields.update(changes)
        return DesignProblem(**fields)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "theta": self.theta,
            "gamma": self.gamma,
            "eta": self.eta,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DesignProblem":
        return cls(
            config=NetworkConfig.from_dict(data["config"]),
            theta=data["theta"],
            gamma=data.get("gamma"),
            eta=data.get("eta"),
            epsilon=data.get("epsilon", 1e-4),
        )


def to_json(obj: Any, **kwargs: Any) -> str:
    return json.dumps(obj.to_dict(), **kwargs)
