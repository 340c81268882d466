"""Material law: Heaviside gates, compliance operator and weighted norms.

The yield argument is ``|T_dev|^2 - kappa^2`` in 2D and ``T^2 - kappa^2`` in
1D (where the deviator vanishes identically); both carry units of Pa^2,
so a single ``epsilon`` works in either dimension.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .assembly import coefficient_weights, mass_matrix
from .errors import InvalidArgumentError
from .spaces import NodalField, StressField, deviatoric_coeffs


class Variant(str, enum.Enum):
    SQRT = "sqrt"
    TANH = "tanh"
    ATAN = "atan"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidArgumentError(f"unknown regularisation variant {value!r}") from None


@dataclass(frozen=True)
class MaterialParams:
    E: float = 1.0e4
    nu: float = 0.3
    kappa_star: float = 80.0
    rho_star: float = 1.0
    c_v: float = 1.0
    kappa_th: float = 1.0

    def __post_init__(self):
        rho = np.asarray(self.rho_star, dtype=float)
        if self.E <= 0:
            raise InvalidArgumentError("E must be positive")
        if not (-1.0 < self.nu < 0.5):
            raise InvalidArgumentError("Poisson ratio must lie in (-1, 1/2)")
        if self.kappa_star <= 0:
            raise InvalidArgumentError("yield stress must be positive")
        if np.any(rho <= 0):
            raise InvalidArgumentError("density must be positive")
        if self.c_v <= 0 or self.kappa_th < 0:
            raise InvalidArgumentError("c_v must be positive and kappa_th nonnegative")

    @property
    def rho_minus(self) -> float:
        return float(np.min(self.rho_star))


@dataclass(frozen=True)
class RegularizationConfig:
    variant: Variant = Variant.SQRT
    epsilon: float = 10.0
    eta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")
        if self.eta < 0:
            raise InvalidArgumentError("eta must be nonnegative")

    def with_epsilon(self, epsilon: float) -> "RegularizationConfig":
        return RegularizationConfig(self.variant, epsilon, self.eta)


@dataclass(frozen=True)
class ComplianceBounds:
    A_min: float
    A_max: float


def heaviside(s):
    """Sharp step with ``H(0) = 1``."""
    out = np.where(np.asarray(s) >= 0, 1.0, 0.0)
    return out if out.ndim else float(out)


def heaviside_reg(cfg: RegularizationConfig, s):
    x = np.asarray(s, dtype=float) / cfg.epsilon
    v = cfg.variant
    if v is Variant.SQRT:
        # x / sqrt(1 + x^2) written to stay finite for |x| -> inf
        with np.errstate(over="ignore", invalid="ignore"):
            r = np.where(np.abs(x) > 1e150, np.sign(x), x / np.sqrt(1.0 + x * x))
        out = 0.5 + 0.5 * r
    elif v is Variant.TANH:
        out = 0.5 + 0.5 * np.tanh(x)
    else:
        out = 0.5 + np.arctan(x) / np.pi
    return out if out.ndim else float(out)


def heaviside_reg_derivative(cfg: RegularizationConfig, s):
    eps = cfg.epsilon
    x = np.asarray(s, dtype=float) / eps
    v = cfg.variant
    with np.errstate(over="ignore"):
        if v is Variant.SQRT:
            out = 0.5 / eps * (1.0 + x * x) ** -1.5
        elif v is Variant.TANH:
            out = 0.5 / eps / np.cosh(np.clip(x, -350, 350)) ** 2
        else:
            out = 1.0 / (np.pi * eps) / (1.0 + x * x)
    return out if out.ndim else float(out)


def compliance_matrix(p: MaterialParams, d: int) -> np.ndarray:
    """Compliance acting on coefficient vectors (``[xx]`` or ``[xx, yy, xy]``)."""
    if d == 1:
        return np.array([[1.0 / p.E]])
    if d != 2:
        raise InvalidArgumentError("coefficient form supports d in {1, 2}")
    E, nu = p.E, p.nu
    return np.array([[1.0, -nu, 0.0], [-nu, 1.0, 0.0], [0.0, 0.0, 1.0 + nu]]) / E


def compliance_apply(p: MaterialParams, T, d: int):
    """``A(T) = ((1 + nu) T - nu tr(T) I) / E`` on full tensors; ``T / E`` in 1D."""
    T = np.asarray(T, dtype=float)
    if d == 1:
        return T / p.E
    if d not in (2, 3):
        raise InvalidArgumentError(f"unsupported dimension {d}")
    tr = np.trace(T, axis1=-2, axis2=-1)
    return ((1 + p.nu) * T - p.nu * tr[..., None, None] * np.eye(d)) / p.E


def compliance_bounds(p: MaterialParams, d: int) -> ComplianceBounds:
    if d == 1:
        return ComplianceBounds(1.0 / p.E, 1.0 / p.E)
    dev = (1 + p.nu) / p.E
    sph = (1 - (d - 1) * p.nu) / p.E
    if dev <= 0 or sph <= 0:
        raise InvalidArgumentError(f"compliance is not positive definite for nu={p.nu}, d={d}")
    return ComplianceBounds(min(dev, sph), max(dev, sph))


def norm_A_squared(p: MaterialParams, S: StressField) -> float:
    d = S.mesh.dim
    c = S.values
    Ac = c @ compliance_matrix(p, d).T
    return float(np.sum(S.mesh.cell_volumes * np.sum(coefficient_weights(d) * Ac * c, axis=1)))


def norm_A(p: MaterialParams, S: StressField) -> float:
    return float(np.sqrt(max(norm_A_squared(p, S), 0.0)))


def rho_mass_matrix(p: MaterialParams, mesh):
    """Consistent scalar mass matrix weighted by the density (scalar or per cell)."""
    return mass_matrix(mesh, p.rho_star)


def norm_rho_squared(p: MaterialParams, v: NodalField, M=None) -> float:
    M = rho_mass_matrix(p, v.mesh) if M is None else M
    vals = v.values
    return float(sum(vals[:, i] @ (M @ vals[:, i]) for i in range(vals.shape[1])))


def norm_rho(p: MaterialParams, v: NodalField) -> float:
    return float(np.sqrt(max(norm_rho_squared(p, v), 0.0)))


def yield_argument(p: MaterialParams, T_coeffs, d: int):
    """``|T_dev|^2 - kappa^2`` (2D) or ``T^2 - kappa^2`` (1D)."""
    T = np.asarray(T_coeffs, dtype=float)
    if d == 1:
        return T[..., 0] ** 2 - p.kappa_star**2
    dev = deviatoric_coeffs(T, d)
    return np.sum(coefficient_weights(d) * dev * dev, axis=-1) - p.kappa_star**2


def loading_gate(cfg: RegularizationConfig, s):
    if cfg.eta == 0:
        return heaviside(s)
    return heaviside_reg(RegularizationConfig(Variant.SQRT, cfg.eta), s)


def loading_gate_derivative(cfg: RegularizationConfig, s):
    if cfg.eta == 0:
        return np.zeros_like(np.asarray(s, dtype=float))
    return heaviside_reg_derivative(RegularizationConfig(Variant.SQRT, cfg.eta), s)


def yield_gate(cfg: RegularizationConfig, p: MaterialParams, T, Dv, d: int):
    """Plastic gate ``G_load(T:Dv) * H_eps(y(T))`` for coefficient vectors."""
    T = np.asarray(T, dtype=float)
    Dv = np.asarray(Dv, dtype=float)
    if T.ndim == 0:
        T, Dv = T.reshape(1), Dv.reshape(1)
    s = np.sum(coefficient_weights(d) * T * Dv, axis=-1)
    return loading_gate(cfg, s) * heaviside_reg(cfg, yield_argument(p, T, d))
