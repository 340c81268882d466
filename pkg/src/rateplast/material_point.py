"""Zero-dimensional rate law ``d sigma = E [1 - G_load H_eps(sigma^2 - kappa^2)] d eps``.

:func:`integrate_rate_law` applies implicit Euler to the regularised law and
:func:`ideal_elastoplastic_oracle` gives the exact sharp-yield answer, which
is a clamp of the elastic trial stress.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .constitutive import RegularizationConfig, heaviside_reg, heaviside_reg_derivative, loading_gate
from .errors import InvalidArgumentError, NumericalError


@dataclass(frozen=True)
class StrainPath:
    times: np.ndarray
    strains: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        e = np.asarray(self.strains, dtype=float).ravel()
        if t.shape != e.shape or t.size < 1:
            raise InvalidArgumentError("times and strains must be nonempty and of equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(e))):
            raise InvalidArgumentError("strain path contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise InvalidArgumentError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "strains", e)

    @classmethod
    def from_function(cls, fn: Callable[[float], float], times) -> "StrainPath":
        times = np.asarray(times, dtype=float)
        return cls(times, np.array([fn(t) for t in times]))

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class MaterialPointState:
    sigma: float
    epsilon: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and np.isfinite(self.epsilon)):
            raise InvalidArgumentError("material point state must be finite")


def _step(sig_p, de, dt, E, kappa, cfg, tol, max_iter):
    """Solve ``s - sig_p - E (1 - G(s de/dt) H(s^2 - kappa^2)) de = 0`` on its bracket."""
    k2 = kappa * kappa

    def f(s):
        g = loading_gate(cfg, s * de / dt) * heaviside_reg(cfg, s * s - k2)
        return s - sig_p - E * (1.0 - g) * de

    lo, hi = sorted((sig_p, sig_p + E * de))
    flo, fhi = f(lo), f(hi)
    scale = abs(sig_p) + abs(E * de) + kappa
    atol = tol * scale
    if abs(flo) <= atol:
        return lo
    if abs(fhi) <= atol:
        return hi
    if flo > 0 or fhi < 0:
        raise NumericalError(f"material point bracket failed: f({lo:.6g})={flo:.3e}, f({hi:.6g})={fhi:.3e}")
    s = sig_p + E * de * (1.0 - float(loading_gate(cfg, sig_p * de / dt)) * heaviside_reg(cfg, sig_p * sig_p - k2))
    s = min(max(s, lo), hi)
    for _ in range(max_iter):
        fs = f(s)
        if abs(fs) <= atol or hi - lo <= atol:
            return s
        if fs > 0:
            hi = s
        else:
            lo = s
        # Newton on the smooth part; the sharp loading gate has zero derivative
        G = float(loading_gate(cfg, s * de / dt))
        dfs = 1.0 + E * de * G * heaviside_reg_derivative(cfg, s * s - k2) * 2.0 * s
        step = s - fs / dfs if dfs != 0 else np.nan
        s = step if lo < step < hi else 0.5 * (lo + hi)
    raise NumericalError(f"material point solve did not converge (residual {f(s):.3e})")


def integrate_rate_law(path: StrainPath, E: float, kappa: float, cfg: RegularizationConfig,
                       sigma0: float = 0.0, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Implicit Euler stresses at every point of ``path`` (first entry is ``sigma0``).

    The loading gate uses the interval's difference quotient ``de/dt``.
    """
    if E <= 0 or kappa <= 0:
        raise InvalidArgumentError("E and kappa must be positive")
    if not np.isfinite(sigma0):
        raise InvalidArgumentError("sigma0 must be finite")
    out = np.empty(len(path))
    out[0] = sigma0
    de = np.diff(path.strains)
    dt = np.diff(path.times)
    for i in range(de.size):
        out[i + 1] = out[i] if de[i] == 0.0 else _step(out[i], de[i], dt[i], E, kappa, cfg, tol, max_iter)
    return out


def ideal_elastoplastic_oracle(path: StrainPath, E: float, kappa: float, sigma0: float = 0.0) -> np.ndarray:
    """Exact sharp-yield stresses: the elastic trial value clamped to ``[-kappa, kappa]``."""
    if E <= 0 or kappa <= 0:
        raise InvalidArgumentError("E and kappa must be positive")
    if abs(sigma0) > kappa:
        raise InvalidArgumentError(f"|sigma0| = {abs(sigma0)} exceeds the yield stress {kappa}")
    out = np.empty(len(path))
    out[0] = sigma0
    for i, de in enumerate(np.diff(path.strains)):
        out[i + 1] = min(max(out[i] + E * de, -kappa), kappa)
    return out


def bump_strain_path(dt: float, peak: float = 0.2, T: float = 1.0) -> StrainPath:
    """Uniform bar strain under the opposed boundary bumps: ``peak * bump(t)/bump(1/2)``."""
    n = int(round(T / dt))
    t = np.linspace(0.0, T, n + 1)
    inside = (t > 0) & (t < 1)
    e = np.zeros_like(t)
    ti = t[inside]
    e[inside] = peak * np.exp(1.0 + 1.0 / (4.0 * ti * (ti - 1.0)))
    return StrainPath(t, e)


__all__ = [
    "MaterialPointState",
    "StrainPath",
    "bump_strain_path",
    "ideal_elastoplastic_oracle",
    "integrate_rate_law",
]
