"""Implicit Euler step for the coupled stress-velocity system.

Unknowns are packed as ``x = [stress coefficients (n_cells * ns), velocity
(n_vertices * dim)]``.  For every P0 basis tensor ``S`` and P1 basis ``w``
the residual rows are::

    stress:    int A((T - T_prev)/tau):S - int eps(v):S + int g eps(v):S
    velocity:  int rho (v - v_prev)/tau . w + int T:eps(w) - int rho f . w - int_N t_b . w

with ``g = G_load(T:eps(v)) * H_eps(y(T))``.  All stress/strain integrands
are cellwise constant so one-point integration is exact; the mass terms use
the consistent P1 mass matrix.  Dirichlet velocity rows are replaced by
``v - v_b(t)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import assembly
from .constitutive import (
    MaterialParams,
    RegularizationConfig,
    compliance_bounds,
    compliance_matrix,
    heaviside_reg,
    heaviside_reg_derivative,
    loading_gate,
    loading_gate_derivative,
    rho_mass_matrix,
    yield_argument,
)
from .errors import InvalidArgumentError, NonConvergenceError
from .linalg import Factorization
from .mesh import NEUMANN_TRACTION, Mesh, MeshConstants
from .spaces import DirichletBC, NodalField, StressField, deviatoric_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    n_steps: int

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidArgumentError("tau must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise InvalidArgumentError("n_steps must be a nonnegative integer")

    @property
    def T(self) -> float:
        return self.tau * self.n_steps

    @classmethod
    def from_final_time(cls, T: float, tau: float) -> "TimeGrid":
        n = T / tau
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise InvalidArgumentError(f"T/tau = {n} is not an integer")
        return cls(tau, int(round(n)))

    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class StepInfo:
    iterations: int = 0
    residual_norm: float = 0.0
    initial_residual_norm: float = 0.0
    halvings: int = 0
    epsilon: float = float("nan")
    gate_fraction: float = 0.0
    stalled: bool = False
    continued: bool = False
    eta: float = 0.0


@dataclass(frozen=True, eq=False)
class MechState:
    k: int
    t: float
    stress: StressField
    velocity: NodalField
    info: Optional[StepInfo] = None

    @property
    def mesh(self) -> Mesh:
        return self.stress.mesh

    @classmethod
    def zeros(cls, mesh: Mesh, t: float = 0.0) -> "MechState":
        return cls(0, t, StressField.zeros(mesh), NodalField.zeros(mesh))

    def pack(self) -> np.ndarray:
        return np.concatenate([self.stress.flat, self.velocity.flat])


@dataclass(frozen=True)
class Loads:
    """External data.  Callables take ``(t, X)`` with ``X`` an ``(n, dim)`` array."""

    body_force: Optional[Callable] = None
    traction: Optional[Callable] = None
    dirichlet: Optional[DirichletBC] = None


def _eval_vector(fn, t, X, d):
    return np.broadcast_to(np.asarray(fn(t, X), dtype=float), (len(X), d))


class MechanicsAssembler:
    """Precomputed operators for one mesh, material and load set."""

    def __init__(self, mesh: Mesh, p: MaterialParams, loads: Loads = Loads()):
        self.mesh, self.p, self.loads = mesh, p, loads
        d = mesh.dim
        self.d = d
        self.ns = assembly.n_stress_components(d)
        self.n_stress = mesh.n_cells * self.ns
        self.n_vel = mesh.n_vertices * d
        self.n = self.n_stress + self.n_vel
        self.W = assembly.coefficient_weights(d)
        self.A = compliance_matrix(p, d)
        self.B = assembly.strain_operator(mesh)
        self.ldofs = assembly.local_velocity_dofs(mesh)
        self.vol = mesh.cell_volumes
        self.M_scalar = rho_mass_matrix(p, mesh)
        self.M = assembly.vector_matrix(self.M_scalar, d)
        self.dev_metric = deviatoric_matrix(d).T @ np.diag(self.W) @ deviatoric_matrix(d)
        if loads.dirichlet is not None:
            self.dir_dofs = loads.dirichlet.dofs(mesh) + self.n_stress
        else:
            self.dir_dofs = np.zeros(0, dtype=np.int64)
        self.free = np.ones(self.n, dtype=bool)
        self.free[self.dir_dofs] = False
        self.traction_facets = mesh.facets_with_tag(NEUMANN_TRACTION)
        self.M_traction = assembly.vector_matrix(assembly.boundary_mass_matrix(mesh, self.traction_facets), d)
        self._sparsity()

    def _sparsity(self):
        nc, ns, nl = self.mesh.n_cells, self.ns, self.ldofs.shape[1]
        sdofs = np.arange(self.n_stress).reshape(nc, ns)
        vdofs = self.ldofs + self.n_stress
        self._rows_ss = np.repeat(sdofs, ns, axis=1).ravel()
        self._cols_ss = np.tile(sdofs, (1, ns)).ravel()
        self._rows_sv = np.repeat(sdofs, nl, axis=1).ravel()
        self._cols_sv = np.tile(vdofs, (1, ns)).ravel()
        self._rows_vs = np.repeat(vdofs, ns, axis=1).ravel()
        self._cols_vs = np.tile(sdofs, (1, nl)).ravel()
        Mv = sp.coo_matrix(self.M)
        self._rows_vv = Mv.row + self.n_stress
        self._cols_vv = Mv.col + self.n_stress
        self._vals_vv = Mv.data

    # ------------------------------------------------------------------ data
    def external_force(self, t: float) -> np.ndarray:
        """Load vector ``int rho f . w + int_N t_b . w`` at time ``t``."""
        F = np.zeros(self.n_vel)
        X = self.mesh.vertices
        if self.loads.body_force is not None:
            F += self.M @ _eval_vector(self.loads.body_force, t, X, self.d).ravel()
        if self.loads.traction is not None and len(self.traction_facets):
            F += self.M_traction @ self._traction_nodal(t).ravel()
        return F

    def _traction_nodal(self, t):
        nodes = np.unique(self.traction_facets)
        vals = np.zeros((self.mesh.n_vertices, self.d))
        vals[nodes] = _eval_vector(self.loads.traction, t, self.mesh.vertices[nodes], self.d)
        return vals

    def dirichlet_values(self, t: float) -> np.ndarray:
        if self.loads.dirichlet is None:
            return np.zeros(0)
        return self.loads.dirichlet.values_at(self.mesh, t)

    def split(self, x):
        return x[: self.n_stress].reshape(-1, self.ns), x[self.n_stress:]

    def strain(self, v_flat):
        return np.einsum("kij,kj->ki", self.B, v_flat[self.ldofs])

    def internal_force(self, T):
        """``int T:eps(w)`` for every velocity basis function."""
        local = self.vol[:, None] * np.einsum("kji,kj->ki", self.B, self.W * T)
        return np.bincount(self.ldofs.ravel(), weights=local.ravel(), minlength=self.n_vel)

    def gate(self, cfg, T, e):
        s = np.sum(self.W * T * e, axis=1)
        return loading_gate(cfg, s) * heaviside_reg(cfg, yield_argument(self.p, T, self.d))

    # ------------------------------------------------------------- residual
    def raw_residual(self, x, x_prev, tau, t, cfg):
        """Residual with every velocity row kept (no Dirichlet replacement)."""
        T, v = self.split(x)
        Tp, vp = self.split(x_prev)
        e = self.strain(v)
        g = self.gate(cfg, T, e)
        rs = self.vol[:, None] * self.W * (((T - Tp) @ self.A.T) / tau - (1.0 - g)[:, None] * e)
        rv = self.M @ (v - vp) / tau + self.internal_force(T) - self.external_force(t)
        return np.concatenate([rs.ravel(), rv])

    def residual(self, x, x_prev, tau, t, cfg):
        r = self.raw_residual(x, x_prev, tau, t, cfg)
        if self.dir_dofs.size:
            r[self.dir_dofs] = x[self.dir_dofs] - self.dirichlet_values(t)
        return r

    def jacobian(self, x, x_prev, tau, t, cfg) -> sp.csr_matrix:
        T, v = self.split(x)
        e = self.strain(v)
        W, vol = self.W, self.vol
        s = np.sum(W * T * e, axis=1)
        y = yield_argument(self.p, T, self.d)
        G, dG = loading_gate(cfg, s), loading_gate_derivative(cfg, s)
        H, dH = heaviside_reg(cfg, y), heaviside_reg_derivative(cfg, y)
        g = G * H
        dy_dT = 2.0 * T if self.d == 1 else 2.0 * T @ self.dev_metric.T
        dg_dT = (G * dH)[:, None] * dy_dT + (H * dG)[:, None] * (W * e)
        dg_dv = (H * dG)[:, None] * np.einsum("kji,kj->ki", self.B, W * T)

        scale = (vol[:, None] * W)[:, :, None]
        Jss = scale * (self.A[None] / tau + e[:, :, None] * dg_dT[:, None, :])
        Jsv = scale * (-(1.0 - g)[:, None, None] * self.B + e[:, :, None] * dg_dv[:, None, :])
        Jvs = vol[:, None, None] * np.transpose(self.B, (0, 2, 1)) * W[None, None, :]

        rows = np.concatenate([self._rows_ss, self._rows_sv, self._rows_vs, self._rows_vv])
        cols = np.concatenate([self._cols_ss, self._cols_sv, self._cols_vs, self._cols_vv])
        vals = np.concatenate([Jss.ravel(), Jsv.ravel(), Jvs.ravel(), self._vals_vv / tau])
        if self.dir_dofs.size:
            keep = self.free[rows]
            rows = np.concatenate([rows[keep], self.dir_dofs])
            cols = np.concatenate([cols[keep], self.dir_dofs])
            vals = np.concatenate([vals[keep], np.ones(self.dir_dofs.size)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    # --------------------------------------------------------------- states
    def state(self, x, k, t, info=None) -> MechState:
        T, v = self.split(x)
        return MechState(k, t, StressField(self.mesh, T.copy()), NodalField(self.mesh, v.reshape(-1, self.d).copy()),
                         info)

    def initial_guess(self, prev: MechState, t: float) -> np.ndarray:
        x = prev.pack().copy()
        if self.dir_dofs.size:
            x[self.dir_dofs] = self.dirichlet_values(t)
        return x

    # --------------------------------------------------------------- newton
    def newton(self, prev: MechState, tau, cfg, tol_abs=1e-6, tol_rel=1e-6, max_iter=50, max_halvings=30,
               guess=None, stall_factor=100.0) -> MechState:
        """Newton with residual-norm backtracking for the step ``prev.t -> prev.t + tau``.

        With the sharp loading gate the residual jumps where ``T:eps(v)``
        changes sign, so the line search can stall just above the target.
        A stalled iterate is accepted (and flagged) when its residual is
        within ``stall_factor`` of the target; otherwise the step fails.
        """
        t = prev.t + tau
        xp = prev.pack()
        x = self.initial_guess(prev, t) if guess is None else guess.copy()
        if self.dir_dofs.size:
            x[self.dir_dofs] = self.dirichlet_values(t)
        r = self.residual(x, xp, tau, t, cfg)
        rnorm = r0 = float(np.linalg.norm(r))
        target = max(tol_abs, tol_rel * r0)
        it = halvings = 0
        stalled = False
        # one update is always taken: a small initial residual says nothing about units
        while it == 0 or rnorm > target:
            if it >= max_iter:
                raise NonConvergenceError(f"Newton did not converge in {max_iter} iterations "
                                          f"(residual {rnorm:.3e}, target {target:.3e})", rnorm, cfg.epsilon)
            J = self.jacobian(x, xp, tau, t, cfg)
            dx = Factorization(J).solve(-r)
            alpha = 1.0
            for _ in range(max_halvings + 1):
                x_new = x + alpha * dx
                r_new = self.residual(x_new, xp, tau, t, cfg)
                n_new = float(np.linalg.norm(r_new))
                if n_new < rnorm or n_new <= target:
                    break
                alpha *= 0.5
                halvings += 1
            else:
                if it > 0 and rnorm <= stall_factor * target:
                    log.debug("Newton stalled at residual %.3e (target %.3e); accepted", rnorm, target)
                    stalled = True
                    break
                raise NonConvergenceError(f"line search exhausted after {max_halvings} halvings "
                                          f"(residual {rnorm:.3e})", rnorm, cfg.epsilon)
            x, r, rnorm = x_new, r_new, n_new
            it += 1
        T, v = self.split(x)
        frac = float(np.mean(self.gate(cfg, T, self.strain(v)) >= 0.5))
        info = StepInfo(it, rnorm, r0, halvings, cfg.epsilon, frac, stalled, eta=cfg.eta)
        return self.state(x, prev.k + 1, t, info)

    def continuation(self, prev: MechState, tau, cfg_target, schedule, max_bisections=8, **newton_kw) -> MechState:
        schedule = [float(e) for e in schedule]
        if not schedule or any(b >= a for a, b in zip(schedule, schedule[1:])):
            raise InvalidArgumentError("epsilon schedule must be strictly decreasing")
        if not math.isclose(schedule[-1], cfg_target.epsilon, rel_tol=1e-12):
            raise InvalidArgumentError("epsilon schedule must end at the target epsilon")
        guess = None
        eps_ok = None
        state = None
        queue = list(schedule)
        bisections = 0
        while queue:
            eps = queue[0]
            try:
                state = self.newton(prev, tau, cfg_target.with_epsilon(eps), guess=guess, **newton_kw)
            except NonConvergenceError as exc:
                if eps_ok is None or bisections >= max_bisections:
                    raise NonConvergenceError(
                        f"continuation failed at epsilon={eps:g}; last success at {eps_ok}",
                        exc.residual_norm, eps_ok) from exc
                bisections += 1
                queue.insert(0, 0.5 * (eps_ok + eps))
                continue
            queue.pop(0)
            eps_ok = eps
            guess = state.pack()
        return state

    # ------------------------------------------------------- semi-implicit
    def semi_implicit(self, prev: MechState, tau, cfg, tol=1e-12, max_iter=60) -> MechState:
        """Velocity from the old stress, then a cellwise stress solve with that velocity fixed."""
        t = prev.t + tau
        Tp, vp = self.split(prev.pack())
        rhs = self.M @ vp + tau * (self.external_force(prev.t) - self.internal_force(Tp))
        if self.dir_dofs.size:
            rhs[self.dir_dofs - self.n_stress] = self.dirichlet_values(t)
        v = self._mass_factor().solve(rhs)
        T = self._stress_update(Tp, self.strain(v), tau, cfg, tol, max_iter)
        x = np.concatenate([T.ravel(), v])
        return self.state(x, prev.k + 1, t, StepInfo(epsilon=cfg.epsilon))

    def _mass_factor(self):
        if getattr(self, "_mass_lu", None) is None:
            K = self.M.tocsr()
            if self.dir_dofs.size:
                mask = np.zeros(self.n_vel, dtype=bool)
                mask[self.dir_dofs - self.n_stress] = True
                K = (sp.diags((~mask).astype(float)) @ K + sp.diags(mask.astype(float))).tocsr()
            self._mass_lu = Factorization(K)
        return self._mass_lu

    def _stress_update(self, Tp, e, tau, cfg, tol, max_iter):
        """Solve ``A(T - Tp)/tau = (1 - g(T, e)) e`` cell by cell."""
        T = Tp.copy()
        A = self.A
        W = self.W

        def local_res(T):
            g = self.gate(cfg, T, e)
            return ((T - Tp) @ A.T) / tau - (1.0 - g)[:, None] * e

        r = local_res(T)
        scale = np.abs(e).max() + np.abs(Tp @ A.T).max() / tau + 1e-300
        for _ in range(max_iter):
            if np.abs(r).max() <= tol * scale:
                return T
            s = np.sum(W * T * e, axis=1)
            y = yield_argument(self.p, T, self.d)
            G, dG = loading_gate(cfg, s), loading_gate_derivative(cfg, s)
            H, dH = heaviside_reg(cfg, y), heaviside_reg_derivative(cfg, y)
            dy = 2.0 * T if self.d == 1 else 2.0 * T @ self.dev_metric.T
            dg = (G * dH)[:, None] * dy + (H * dG)[:, None] * (W * e)
            J = A[None] / tau + e[:, :, None] * dg[:, None, :]
            dT = -np.linalg.solve(J, r[:, :, None])[:, :, 0]
            alpha = np.ones(len(T))
            base = np.linalg.norm(r, axis=1)
            for _ in range(30):
                Tn = T + alpha[:, None] * dT
                rn = local_res(Tn)
                bad = np.linalg.norm(rn, axis=1) >= base
                bad &= base > tol * scale
                if not bad.any():
                    break
                alpha[bad] *= 0.5
            T, r = Tn, rn
        raise NonConvergenceError("cellwise stress update did not converge", float(np.abs(r).max()), cfg.epsilon)


def default_schedule(epsilon: float, start_factor: float = 16.0, n: int = 5):
    """Geometric halving of the gap to ``epsilon``, starting at ``start_factor * epsilon``."""
    start = start_factor * epsilon
    return [epsilon + (start - epsilon) / 2**i for i in range(n)] + [epsilon]


def _assembler(mesh, p, loads):
    key = ("mech", id(p), id(loads))
    cached = mesh._cache.get(key)
    if cached is None or cached.p is not p or cached.loads is not loads:
        cached = MechanicsAssembler(mesh, p, loads)
        mesh._cache[key] = cached
    return cached


def _check_pair(prev: MechState, cand: MechState, mesh: Mesh):
    if prev.mesh is not mesh or cand.mesh is not mesh:
        raise InvalidArgumentError("states and mesh do not match")


def residual(prev: MechState, cand: MechState, p, cfg, loads, mesh) -> np.ndarray:
    _check_pair(prev, cand, mesh)
    tau = cand.t - prev.t
    if not tau > 0:
        raise InvalidArgumentError("candidate state must lie after the previous one")
    return _assembler(mesh, p, loads).residual(cand.pack(), prev.pack(), tau, cand.t, cfg)


def jacobian(prev: MechState, cand: MechState, p, cfg, loads, mesh) -> sp.csr_matrix:
    _check_pair(prev, cand, mesh)
    tau = cand.t - prev.t
    return _assembler(mesh, p, loads).jacobian(cand.pack(), prev.pack(), tau, cand.t, cfg)


def newton_step_solve(prev: MechState, p, cfg, loads, mesh, tau, tol_abs=1e-6, tol_rel=1e-6, max_iter=50) -> MechState:
    return _assembler(mesh, p, loads).newton(prev, tau, cfg, tol_abs=tol_abs, tol_rel=tol_rel, max_iter=max_iter)


def continuation_in_epsilon(prev: MechState, p, cfg_target, loads, mesh, tau, schedule=None, **kw) -> MechState:
    schedule = default_schedule(cfg_target.epsilon) if schedule is None else schedule
    return _assembler(mesh, p, loads).continuation(prev, tau, cfg_target, schedule, **kw)


def step_semi_implicit(prev: MechState, p, cfg, loads, mesh, tau) -> MechState:
    return _assembler(mesh, p, loads).semi_implicit(prev, tau, cfg)


@dataclass(frozen=True)
class TauHCheck:
    admissible: bool
    margin: float
    bound: float
    ratio: float


def tau_h_bound(p: MaterialParams, consts: MeshConstants) -> float:
    a = math.sqrt(compliance_bounds(p, consts.dim).A_min)
    rho = p.rho_minus
    return a * rho / (consts.c_inv * math.sqrt(rho) + consts.c_tr**2 * a + a * math.sqrt(rho))


def check_tau_h_condition(p: MaterialParams, consts: MeshConstants, tau: float) -> TauHCheck:
    bound = tau_h_bound(p, consts)
    ratio = tau / consts.h
    return TauHCheck(ratio < bound, bound - ratio, bound, ratio)
