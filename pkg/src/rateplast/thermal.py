"""Post-hoc displacement update and the heat equation driven by plastic work.

Both solves run after the mechanical step has been accepted: the model is
coupled one way, so neither feeds back into the stress-velocity system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import assembly
from .constitutive import MaterialParams, RegularizationConfig, heaviside_reg, loading_gate, yield_argument
from .errors import InvalidArgumentError
from .linalg import Factorization
from .mesh import Mesh
from .spaces import DirichletBC, NodalField, StressField, strain_coeffs


@dataclass(frozen=True, eq=False)
class ThermoState:
    """Displacement and temperature change at step ``k``.

    ``temperature`` holds the difference from the homogeneous initial state.
    """

    k: int
    displacement: NodalField
    temperature: NodalField

    @property
    def mesh(self) -> Mesh:
        return self.displacement.mesh

    @classmethod
    def zeros(cls, mesh: Mesh) -> "ThermoState":
        return cls(0, NodalField.zeros(mesh), NodalField.zeros(mesh, 1))


def step_displacement(prev: ThermoState, v_k: NodalField, tau: float,
                      dirichlet: Optional[DirichletBC] = None, t: Optional[float] = None) -> NodalField:
    """``u^k = u^{k-1} + tau v^k``; constrained nodes take ``dirichlet.value(t, X)``.

    For displacement data pass a :class:`DirichletBC` whose callable returns
    the prescribed displacement (not the velocity).
    """
    if v_k.mesh is not prev.mesh:
        raise InvalidArgumentError("velocity and displacement live on different meshes")
    if not tau > 0:
        raise InvalidArgumentError("tau must be positive")
    u = prev.displacement.values + tau * v_k.values
    if dirichlet is not None:
        if t is None:
            raise InvalidArgumentError("displacement Dirichlet data needs the time t")
        mesh = prev.mesh
        u = u.copy()
        u.ravel()[dirichlet.dofs(mesh)] = dirichlet.values_at(mesh, t)
    return NodalField(prev.mesh, u)


def plastic_heating_source(stress_k: StressField, v_k: NodalField, p: MaterialParams,
                           cfg: RegularizationConfig) -> np.ndarray:
    """Per-cell heat source ``g T:eps(v)``.

    The loading gate is sharp unless ``cfg.eta > 0``.  The sharp gate
    vanishes unless ``T:eps(v) >= 0``; a smoothed gate can leak a tiny
    negative product for unloading cells, which is clipped to zero.
    """
    mesh = stress_k.mesh
    if v_k.mesh is not mesh:
        raise InvalidArgumentError("stress and velocity live on different meshes")
    d = mesh.dim
    T = stress_k.values
    e = strain_coeffs(mesh, v_k.flat)
    power = np.sum(assembly.coefficient_weights(d) * T * e, axis=1)
    g = loading_gate(cfg, power) * heaviside_reg(cfg, yield_argument(p, T, d))
    return np.maximum(g * power, 0.0)


class HeatStepper:
    """Implicit Euler for ``rho c_v d_t theta - div(kappa_th grad theta) = q``.

    The matrix depends only on the mesh, material and ``tau``, so it is
    factorized once.
    """

    def __init__(self, mesh: Mesh, p: MaterialParams, tau: float):
        if not tau > 0:
            raise InvalidArgumentError("tau must be positive")
        self.mesh, self.p, self.tau = mesh, p, tau
        rho_c = np.asarray(p.rho_star, dtype=float) * p.c_v
        self.M = assembly.mass_matrix(mesh, rho_c)
        self.K = assembly.stiffness_matrix(mesh, p.kappa_th)
        self._lu = Factorization(self.M / tau + self.K)

    def step(self, theta_prev: np.ndarray, source: np.ndarray) -> np.ndarray:
        source = np.broadcast_to(np.asarray(source, dtype=float), (self.mesh.n_cells,))
        rhs = self.M @ theta_prev / self.tau + assembly.cell_to_vertex_load(self.mesh, source)
        return self._lu.solve(rhs)


def _stepper(mesh: Mesh, p: MaterialParams, tau: float) -> HeatStepper:
    try:
        hash(p)
        key = ("heat", p, float(tau))
    except TypeError:  # per-cell density arrays are unhashable
        key = ("heat", id(p), float(tau))
    if key not in mesh._cache:
        mesh._cache[key] = HeatStepper(mesh, p, tau)
    return mesh._cache[key]


def step_temperature(prev: ThermoState, source, p: MaterialParams, tau: float, mesh: Optional[Mesh] = None) -> NodalField:
    mesh = prev.mesh if mesh is None else mesh
    if mesh is not prev.mesh:
        raise InvalidArgumentError("thermal state lives on a different mesh")
    theta = _stepper(mesh, p, tau).step(prev.temperature.values[:, 0], source)
    return NodalField(mesh, theta[:, None])


def thermal_energy(p: MaterialParams, theta: NodalField) -> float:
    """``int rho c_v theta``, exact for P1."""
    mesh = theta.mesh
    rho_c = np.broadcast_to(np.asarray(p.rho_star, dtype=float) * p.c_v, (mesh.n_cells,))
    return float(np.sum(rho_c * mesh.cell_volumes * theta.values[mesh.cells, 0].mean(axis=1)))


def advance(prev: ThermoState, stress_k: StressField, v_k: NodalField, p: MaterialParams,
            cfg: RegularizationConfig, tau: float, dirichlet: Optional[DirichletBC] = None,
            t: Optional[float] = None) -> tuple[ThermoState, np.ndarray]:
    """One post-hoc step; returns the new state and the heating source used."""
    q = plastic_heating_source(stress_k, v_k, p, cfg)
    u = step_displacement(prev, v_k, tau, dirichlet, t)
    theta = step_temperature(prev, q, p, tau)
    return ThermoState(prev.k + 1, u, theta), q
