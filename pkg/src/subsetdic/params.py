"""Run parameters and the enums shared across the package."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from enum import Enum, IntEnum

from .errors import ConfigError

__all__ = [
    "CostKind", "ShapeKind", "MethodKind", "PointStatus",
    "StrainBasis", "StrainFormulation", "DicParams", "StrainParams",
    "THREADS_ENV_VAR",
]

THREADS_ENV_VAR = "SUBSETDIC_THREADS"


class CostKind(Enum):
    """Subset matching cost.

    SSD is the raw sum of squared differences, NSSD normalizes each subset
    by its L2 norm, and ZNSSD additionally removes the subset mean, making
    the match invariant to affine intensity changes between images.
    """

    SSD = "ssd"
    NSSD = "nssd"
    ZNSSD = "znssd"


class ShapeKind(Enum):
    """Subset shape function: how a subset is allowed to deform."""

    RIGID = "rigid"
    AFFINE = "affine"
    QUADRATIC = "quadratic"

    @property
    def n_params(self) -> int:
        return {ShapeKind.RIGID: 2, ShapeKind.AFFINE: 6,
                ShapeKind.QUADRATIC: 12}[self]


class MethodKind(Enum):
    """MULTIWINDOW stops after the FFT displacement search; MULTIWINDOW_RG
    refines it with reliability-guided subset optimization."""

    MULTIWINDOW = "multiwindow"
    MULTIWINDOW_RG = "multiwindow_rg"


class PointStatus(IntEnum):
    """Per-point outcome, stored in result files as a small integer."""

    CONVERGED = 0
    MAX_ITER = 1
    OUT_OF_DOMAIN = 2
    DIVERGED = 3
    ABSENT = 4


class StrainBasis(Enum):
    """Local displacement fit used for strain windows.

    BILINEAR fits 1, x, y.  BIQUADRATIC fits 1, x, y, x^2, y^2, x^2 y,
    x y^2, x^2 y^2; the plain cross term is deliberately absent so the fit
    reduces to independent quadratics along each axis.
    """

    BILINEAR = "bilinear"
    BIQUADRATIC = "biquadratic"

    @property
    def n_terms(self) -> int:
        return 3 if self is StrainBasis.BILINEAR else 8


class StrainFormulation(Enum):
    GREEN_LAGRANGE = "green_lagrange"
    HENCKY = "hencky"
    EULER_ALMANSI = "euler_almansi"
    BIOT_RIGHT = "biot_right"
    BIOT_LEFT = "biot_left"


@dataclass
class DicParams:
    """Everything a correlation run needs besides the images and the ROI.

    ``threads = 0`` means "decide at run time": the SUBSETDIC_THREADS
    environment variable if set, otherwise the machine core count.
    ``update_precision`` is the scaled parameter-update norm below which
    the subset optimizer declares convergence, in pixels.
    """

    subset_size: int = 31
    subset_step: int = 15
    max_displacement: float = 0.0
    cost: CostKind = CostKind.ZNSSD
    shape: ShapeKind = ShapeKind.AFFINE
    method: MethodKind = MethodKind.MULTIWINDOW_RG
    max_iterations: int = 40
    update_precision: float = 0.01
    zncc_accept_threshold: float = 0.70
    threads: int = 0
    mad_enabled: bool = True
    mad_k: float = 3.0
    nan_unconverged: bool = False

    def validate(self) -> None:
        problems = []
        if self.subset_size < 5 or self.subset_size % 2 == 0:
            problems.append(f"subset_size must be odd and >= 5, got {self.subset_size}")
        if self.subset_step < 1:
            problems.append(f"subset_step must be >= 1, got {self.subset_step}")
        if self.max_displacement < 0:
            problems.append("max_displacement must be >= 0")
        if self.max_iterations < 1:
            problems.append("max_iterations must be >= 1")
        if not self.update_precision > 0:
            problems.append("update_precision must be > 0")
        if not -1.0 <= self.zncc_accept_threshold <= 1.0:
            problems.append("zncc_accept_threshold must be in [-1, 1]")
        if self.threads < 0:
            problems.append("threads must be >= 0 (0 = auto)")
        if not self.mad_k > 0:
            problems.append("mad_k must be > 0")
        if problems:
            raise ConfigError("; ".join(problems))

    def resolve_threads(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get(THREADS_ENV_VAR, "").strip()
        if env:
            try:
                n = int(env)
            except ValueError as exc:
                raise ConfigError(f"{THREADS_ENV_VAR}={env!r} is not an integer") from exc
            if n < 1:
                raise ConfigError(f"{THREADS_ENV_VAR} must be >= 1, got {n}")
            return n
        return os.cpu_count() or 1

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Enum) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DicParams":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        enum_types = {"cost": CostKind, "shape": ShapeKind, "method": MethodKind}
        for name, value in d.items():
            if name in enum_types and not isinstance(value, enum_types[name]):
                try:
                    value = enum_types[name](str(value).lower())
                except ValueError as exc:
                    raise ConfigError(f"bad value for {name}: {value!r}") from exc
            kwargs[name] = value
        try:
            p = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return p


@dataclass
class StrainParams:
    """Strain window configuration.

    ``window_points`` is the side length N of the N x N displacement-point
    window each local fit uses; it must be odd so the window has a central
    point to attach the result to.
    """

    window_points: int = 5
    basis: StrainBasis = StrainBasis.BIQUADRATIC
    formulation: StrainFormulation = StrainFormulation.GREEN_LAGRANGE

    def validate(self) -> None:
        if self.window_points < 3 or self.window_points % 2 == 0:
            raise ConfigError(
                f"window_points must be odd and >= 3, got {self.window_points}")

    def to_dict(self) -> dict:
        return {"window_points": self.window_points,
                "basis": self.basis.value,
                "formulation": self.formulation.value}

    @classmethod
    def from_dict(cls, d: dict) -> "StrainParams":
        known = {"window_points", "basis", "formulation"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown strain parameter(s): {', '.join(sorted(unknown))}")
        kwargs = dict(d)
        if "basis" in kwargs and not isinstance(kwargs["basis"], StrainBasis):
            try:
                kwargs["basis"] = StrainBasis(str(kwargs["basis"]).lower())
            except ValueError as exc:
                raise ConfigError(f"bad value for basis: {kwargs['basis']!r}") from exc
        if "formulation" in kwargs and not isinstance(kwargs["formulation"], StrainFormulation):
            try:
                kwargs["formulation"] = StrainFormulation(str(kwargs["formulation"]).lower())
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for formulation: {kwargs['formulation']!r}") from exc
        return cls(**kwargs)
