"""Per-state scalar reward distributions.

Every family is a location-scale transform of a fixed standard law, so a
draw is always ``mean + scale * standard_quantile(u)`` for one open-interval
uniform ``u``. The batched simulator relies on that identity to reproduce
single-run draws bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class RewardKind(str, enum.Enum):
    POINT_MASS = "pointmass"
    GAUSSIAN = "gaussian"
    EXPONENTIAL = "exponential"
    STUDENT_T2 = "t2"

    @classmethod
    def parse(cls, value: "str | RewardKind") -> "RewardKind":
        if isinstance(value, RewardKind):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "pointmass": cls.POINT_MASS,
            "deterministic": cls.POINT_MASS,
            "gaussian": cls.GAUSSIAN,
            "normal": cls.GAUSSIAN,
            "exponential": cls.EXPONENTIAL,
            "exp": cls.EXPONENTIAL,
            "t2": cls.STUDENT_T2,
            "studentt2": cls.STUDENT_T2,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown reward kind {value!r}") from None


def open_uniform(rng: np.random.Generator, size=None):
    """Uniform draws on the open interval (0, 1) on a 2**-52 grid."""
    # 52 bits keeps (k + 0.5) exact and the largest draw strictly below 1.
    k = rng.integers(0, 1 << 52, size=size, dtype=np.int64)
    return (k + 0.5) * (1.0 / (1 << 52))


# -- standard (location 0, unit scale) laws ----------------------------------
# Exponential is Exp(1) shifted to mean zero, t2 is the plain t with 2 dof.


def standard_quantile(kind: RewardKind, p):
    p = np.asarray(p, dtype=float)
    if kind is RewardKind.POINT_MASS:
        return np.zeros_like(p)
    if kind is RewardKind.GAUSSIAN:
        return special.ndtri(p)
    if kind is RewardKind.EXPONENTIAL:
        return -1.0 - np.log1p(-p)
    if kind is RewardKind.STUDENT_T2:
        return (2.0 * p - 1.0) / np.sqrt(2.0 * p * (1.0 - p))
    raise ValueError(kind)


def standard_cdf(kind: RewardKind, z):
    z = np.asarray(z, dtype=float)
    if kind is RewardKind.POINT_MASS:
        return (z >= 0.0).astype(float)
    if kind is RewardKind.GAUSSIAN:
        return special.ndtr(z)
    if kind is RewardKind.EXPONENTIAL:
        return np.where(z >= -1.0, -np.expm1(-np.maximum(z + 1.0, 0.0)), 0.0)
    if kind is RewardKind.STUDENT_T2:
        # t/sqrt(t^2+2) loses all precision in the far left tail; use the
        # algebraically equal 1/(sqrt(t^2+2)*(sqrt(t^2+2)-t)) there.
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            s = np.sqrt(z * z + 2.0)
            left = 1.0 / (s * (s - z))
            # z * z overflows past ~1e154, where z / s is 1 to double precision
            right = np.where(z > 1e100, 1.0, 0.5 * (1.0 + z / s))
            out = np.where(z < 0.0, left, right)
        out = np.where(np.isneginf(z), 0.0, out)
        return np.where(np.isposinf(z), 1.0, out)
    raise ValueError(kind)


def standard_cdf_left(kind: RewardKind, z):
    """P(Z < z); differs from the CDF only at the atom of a point mass."""
    if kind is RewardKind.POINT_MASS:
        return (np.asarray(z, dtype=float) > 0.0).astype(float)
    return standard_cdf(kind, z)


def standard_pdf(kind: RewardKind, z):
    z = np.asarray(z, dtype=float)
    if kind is RewardKind.GAUSSIAN:
        return np.exp(-0.5 * z * z) * (1.0 / math.sqrt(2.0 * math.pi))
    if kind is RewardKind.EXPONENTIAL:
        return np.where(z >= -1.0, np.exp(-np.maximum(z + 1.0, 0.0)), 0.0)
    if kind is RewardKind.STUDENT_T2:
        return (z * z + 2.0) ** -1.5
    raise ValueError(f"{kind} has no density")


def _unwrap(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class RewardModel:
    """A reward law with configured ``mean``.

    ``scale`` is the Gaussian standard deviation; the other families ignore
    it (Exponential is fixed at rate 1, t2 is unscaled).
    """

    kind: RewardKind
    mean: float
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", RewardKind.parse(self.kind))
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "scale", float(self.scale))
        if not math.isfinite(self.mean):
            raise ValueError("reward mean must be finite")
        if self.kind is RewardKind.GAUSSIAN and not self.scale > 0:
            raise ValueError("Gaussian scale must be positive")

    @classmethod
    def point_mass(cls, mean):
        return cls(RewardKind.POINT_MASS, mean)

    @classmethod
    def gaussian(cls, mean, sigma=1.0):
        return cls(RewardKind.GAUSSIAN, mean, sigma)

    @classmethod
    def exponential(cls, mean):
        return cls(RewardKind.EXPONENTIAL, mean)

    @classmethod
    def student_t2(cls, mean):
        return cls(RewardKind.STUDENT_T2, mean)

    @property
    def effective_scale(self) -> float:
        """Multiplier applied to the standard law (1 for all but Gaussian)."""
        if self.kind is RewardKind.GAUSSIAN:
            return self.scale
        return 1.0

    @property
    def is_atomic(self) -> bool:
        return self.kind is RewardKind.POINT_MASS

    def sample(self, rng: np.random.Generator, size=None):
        return self.quantile(open_uniform(rng, size))

    def _standardize(self, z):
        return (np.asarray(z, dtype=float) - self.mean) / self.effective_scale

    def cdf(self, z):
        return _unwrap(standard_cdf(self.kind, self._standardize(z)))

    def cdf_left(self, z):
        return _unwrap(standard_cdf_left(self.kind, self._standardize(z)))

    def pdf(self, z):
        return _unwrap(standard_pdf(self.kind, self._standardize(z)) / self.effective_scale)

    def quantile(self, p):
        """Left quantile ``inf{z : F(z) >= p}`` for ``p`` in (0, 1)."""
        p = np.asarray(p, dtype=float)
        if np.any(~((p > 0.0) & (p < 1.0))):
            raise ValueError("quantile level must lie in the open interval (0, 1)")
        return _unwrap(self.mean + self.effective_scale * standard_quantile(self.kind, p))

    def support(self) -> tuple[float, float]:
        if self.kind is RewardKind.POINT_MASS:
            return self.mean, self.mean
        if self.kind is RewardKind.EXPONENTIAL:
            return self.mean - 1.0, math.inf
        return -math.inf, math.inf

    def to_record(self) -> dict:
        return {"kind": self.kind.value, "mean": self.mean, "scale": self.scale}

    @classmethod
    def from_record(cls, rec: dict) -> "RewardModel":
        return cls(RewardKind.parse(rec["kind"]), float(rec["mean"]), float(rec.get("scale", 1.0)))


def sample(model: RewardModel, rng: np.random.Generator) -> float:
    return float(model.sample(rng))


def cdf(model: RewardModel, z):
    return model.cdf(z)


def quantile(model: RewardModel, p):
    return model.quantile(p)


def mean(model: RewardModel) -> float:
    return model.mean
