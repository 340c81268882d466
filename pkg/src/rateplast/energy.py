"""Energy bookkeeping: functionals, numerical dissipation, per-step audit, stability.

Testing the stress rows with ``T^k`` and the velocity rows with ``v^k`` and
adding the heat equation tested with 1 gives, for implicit Euler,

    d_t[E_kin + E_int + E_th] + E_ext(v^k) + D_tau^k = W_D

where ``E_ext(v) = -(external load vector) . v`` and ``W_D`` is the work of
the reaction forces at Dirichlet dofs (the raw momentum residual there
paired with ``v``).  ``W_D`` vanishes for homogeneous Dirichlet data, and
any remainder measures solver error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .constitutive import MaterialParams, RegularizationConfig, norm_A_squared, norm_rho_squared, rho_mass_matrix
from .errors import InvalidArgumentError, NumericalError
from .mechanics import Loads, MechanicsAssembler, MechState, _assembler
from .spaces import StressField
from .thermal import ThermoState, thermal_energy


@dataclass(frozen=True)
class EnergyReport:
    k: int
    t: float
    E_kin: float
    E_int: float
    E_th: float
    P_ext: float
    D_tau: float
    plastic_dissipation: float
    balance_residual: float
    W_D: float = 0.0

    CSV_FIELDS = ("k", "t", "E_kin", "E_int", "E_th", "P_ext", "D_tau", "plastic_dissipation",
                  "balance_residual", "W_D")

    @property
    def total(self) -> float:
        return self.E_kin + self.E_int + self.E_th

    @property
    def audited_residual(self) -> float:
        """Balance residual with the Dirichlet boundary work removed."""
        return self.balance_residual - self.W_D

    def as_dict(self) -> dict:
        return asdict(self)


def energies(state: MechState, thermo: Optional[ThermoState], p: MaterialParams) -> tuple[float, float, float]:
    E_kin = 0.5 * norm_rho_squared(p, state.velocity)
    E_int = 0.5 * norm_A_squared(p, state.stress)
    E_th = 0.0 if thermo is None else thermal_energy(p, thermo.temperature)
    return E_kin, E_int, E_th


def _diff_norms(curr: MechState, prev: MechState, p: MaterialParams) -> float:
    if curr.mesh is not prev.mesh:
        raise InvalidArgumentError("states live on different meshes")
    from .spaces import NodalField

    dv = NodalField(curr.mesh, curr.velocity.values - prev.velocity.values)
    dT = StressField(curr.mesh, curr.stress.values - prev.stress.values)
    return norm_rho_squared(p, dv) + norm_A_squared(p, dT)


def numerical_dissipation(curr: MechState, prev: MechState, p: MaterialParams, tau: float) -> float:
    """``(|v^k - v^{k-1}|_rho^2 + |T^k - T^{k-1}|_A^2) / (2 tau)``."""
    if not tau > 0:
        raise InvalidArgumentError("tau must be positive")
    return _diff_norms(curr, prev, p) / (2.0 * tau)


def audit_step(prev: MechState, curr: MechState, prev_thermo: Optional[ThermoState],
               curr_thermo: Optional[ThermoState], loads: Loads, p: MaterialParams,
               cfg: RegularizationConfig, assembler: Optional[MechanicsAssembler] = None) -> EnergyReport:
    """Discrete energy balance for one accepted implicit step."""
    mesh = curr.mesh
    tau = curr.t - prev.t
    if not tau > 0:
        raise InvalidArgumentError("curr must follow prev in time")
    asm = _assembler(mesh, p, loads) if assembler is None else assembler
    x, xp = curr.pack(), prev.pack()
    T, v = asm.split(x)

    E1 = energies(curr, curr_thermo, p)
    E0 = energies(prev, prev_thermo, p)
    F = asm.external_force(curr.t)
    P_ext = float(F @ v)
    D = numerical_dissipation(curr, prev, p, tau)
    g = asm.gate(cfg, T, asm.strain(v))
    plastic = float(np.sum(mesh.cell_volumes * g * np.sum(asm.W * T * asm.strain(v), axis=1)))

    W_D = 0.0
    if asm.dir_dofs.size:
        r = asm.raw_residual(x, xp, tau, curr.t, cfg)
        W_D = float(r[asm.dir_dofs] @ x[asm.dir_dofs])

    residual = (sum(E1) - sum(E0)) / tau - P_ext + D
    return EnergyReport(curr.k, curr.t, *E1, P_ext, D, plastic, residual, W_D)


def modified_energy(state: MechState, p: MaterialParams, tau: float,
                    assembler: Optional[MechanicsAssembler] = None, loads: Loads = Loads()) -> float:
    """``E_kin + E_int - (tau/2) int T:eps(v)``: exactly conserved by the
    semi-implicit scheme when the gate is closed and no loads act."""
    asm = _assembler(state.mesh, p, loads) if assembler is None else assembler
    E_kin, E_int, _ = energies(state, None, p)
    coupling = float(asm.internal_force(state.stress.values) @ state.velocity.flat)
    return E_kin + E_int - 0.5 * tau * coupling


# ---------------------------------------------------------------- stability
@dataclass(frozen=True)
class DataNorms:
    """Squared data norms over the run and the trace constant used for the slack.

    ``body_sq = sum_k tau |f^k|_rho^2`` and ``traction_sq = sum_k tau |t_b^k|^2``
    on the traction boundary; ``trace_lambda`` is the largest ``mu`` with
    ``|w|_{dN}^2 <= mu |w|_rho^2`` for discrete ``w``.
    """

    body_sq: float
    traction_sq: float
    trace_lambda: float
    has_body: bool
    has_traction: bool


def _largest_pencil_eig(A, B) -> float:
    n = A.shape[0]
    if n <= 2000:
        return float(sla.eigh(A.toarray(), B.toarray(), eigvals_only=True)[-1])
    return float(spla.eigsh(A.tocsc(), k=1, M=B.tocsc(), which="LM", return_eigenvectors=False)[0])


def data_norms(assembler: MechanicsAssembler, times: Sequence[float]) -> DataNorms:
    """Data norms sampled at ``times[1:]`` (the implicit step times)."""
    asm = assembler
    loads, mesh, d = asm.loads, asm.mesh, asm.d
    times = np.asarray(times, dtype=float)
    taus = np.diff(times)
    body = trac = 0.0
    lam = 0.0
    if loads.body_force is not None:
        for tk, dt in zip(times[1:], taus):
            f = np.broadcast_to(np.asarray(loads.body_force(tk, mesh.vertices), dtype=float), (mesh.n_vertices, d)).ravel()
            body += dt * float(f @ (asm.M @ f))
    has_trac = loads.traction is not None and len(asm.traction_facets) > 0
    if has_trac:
        for tk, dt in zip(times[1:], taus):
            tb = asm._traction_nodal(tk).ravel()
            trac += dt * float(tb @ (asm.M_traction @ tb))
        lam = _largest_pencil_eig(asm.M_traction, asm.M)
    return DataNorms(body, trac, lam, loads.body_force is not None, has_trac)


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    rhs: float
    ratio: float
    slack: float
    satisfied: bool


def young_slack(data: DataNorms, taus: Sequence[float], span: float) -> float:
    """Constant ``C`` in ``lhs <= C rhs`` (see :func:`stability_check`); ``inf`` if ``tau c >= 1``."""
    c = float(data.has_body) + (data.trace_lambda if data.has_traction else 0.0)
    taus = list(taus)
    if not taus:
        return 2.0
    if max(taus) * c >= 1.0:
        return math.inf
    G = math.exp(-sum(math.log1p(-tau * c) for tau in taus))
    return 2.0 * G + max(taus) * (1.0 + c * span * G)


def stability_check(history: Sequence[MechState], data: DataNorms, p: MaterialParams) -> StabilityReport:
    """Compare ``max|v|_rho^2 + max|T|_A^2 + sum 2 tau^2 D`` with the data.

    ``rhs = |v0|_rho^2 + |T0|_A^2 + sum tau |f|_rho^2 + sum tau |t_b|^2``.
    The slack comes from Young's inequality on the load terms followed by a
    discrete Gronwall argument: with ``c = [f present] + [t_b present] * mu``
    (``mu`` the trace constant) and ``G = prod (1 - tau c)^{-1}``, one has
    ``lhs <= (2G + tau_max (1 + c T G)) rhs`` as long as ``tau c < 1``.
    """
    if len(history) < 1:
        raise InvalidArgumentError("history is empty")
    v2 = [norm_rho_squared(p, s.velocity) for s in history]
    T2 = [norm_A_squared(p, s.stress) for s in history]
    diss = 0.0
    taus = []
    for a, b in zip(history[:-1], history[1:]):
        tau = b.t - a.t
        taus.append(tau)
        diss += 2.0 * tau**2 * numerical_dissipation(b, a, p, tau)
    lhs = max(v2) + max(T2) + diss
    rhs = v2[0] + T2[0] + data.body_sq + data.traction_sq
    slack = young_slack(data, taus, history[-1].t - history[0].t)
    if rhs == 0.0:
        ratio = 0.0 if lhs == 0.0 else math.inf
    else:
        ratio = lhs / rhs
    if not math.isfinite(lhs):
        raise NumericalError("non-finite energy in run history")
    return StabilityReport(lhs, rhs, ratio, slack, lhs <= slack * rhs or lhs == 0.0)
