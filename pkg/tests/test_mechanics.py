import math

import numpy as np
import pytest
import scipy.sparse as sp

from oracles import linear_bar_matrices, linear_residual_2d
from rateplast.constitutive import MaterialParams, RegularizationConfig
from rateplast.errors import InvalidArgumentError, NonConvergenceError
from rateplast.mechanics import (
    Loads,
    MechanicsAssembler,
    MechState,
    TimeGrid,
    check_tau_h_condition,
    continuation_in_epsilon,
    default_schedule,
    jacobian,
    newton_step_solve,
    residual,
    step_semi_implicit,
    tau_h_bound,
)
from rateplast.mesh import NEUMANN_FREE, MeshConstants, build_interval_mesh, build_unit_square, estimate_inverse_constants
from rateplast.scenarios import bump, bump_rate
from rateplast.spaces import DirichletBC, NodalField, StressField
from rateplast.energy import audit_step, modified_energy

ELASTIC = MaterialParams(E=1e4, nu=0.3, kappa_star=1e7)
REG = RegularizationConfig("sqrt", 10.0)


def bar_loads(A=0.1):
    side = lambda X: np.where(X[:, 0] < 0.5, -1.0, 1.0)[:, None]
    return Loads(dirichlet=DirichletBC(lambda t, X: side(X) * bump_rate(t, A)))


def state(mesh, k, t, T, v):
    return MechState(k, t, StressField(mesh, T), NodalField(mesh, np.asarray(v).reshape(mesh.n_vertices, -1)))


# ----------------------------------------------------------------- residual
def test_residual_zero_state():
    m = build_unit_square(NEUMANN_FREE)
    prev, cand = MechState.zeros(m), MechState.zeros(m, 0.1)
    assert np.all(residual(prev, cand, ELASTIC, REG, Loads(), m) == 0.0)


def test_residual_linear_regime_against_dense_oracle(rng):
    m = build_unit_square(NEUMANN_FREE)
    T, Tp = rng.normal(size=(2, 3)) * 50, rng.normal(size=(2, 3)) * 50
    v, vp = rng.normal(size=8), rng.normal(size=8)
    tau = 0.01
    p = MaterialParams(E=1e4, nu=0.3, kappa_star=1e7, rho_star=2.5)
    r = residual(state(m, 0, 0.0, Tp, vp), state(m, 1, tau, T, v), p, REG, Loads(), m)
    ref = linear_residual_2d(m, p.E, p.nu, p.rho_star, T, Tp, v, vp, tau)
    np.testing.assert_allclose(r, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_residual_single_cell_by_hand():
    m = build_interval_mesh(1)
    p = MaterialParams(E=1e4, kappa_star=80.0)
    cfg = RegularizationConfig("sqrt", 10.0)
    tau, T0, T1 = 0.01, 70.0, 75.0
    v = np.array([0.0, 0.3])  # dv/dx = 0.3 > 0, loading
    r = residual(state(m, 0, 0.0, [[T0]], [0.0, 0.0]), state(m, 1, tau, [[T1]], v), p, cfg, Loads(), m)
    y = T1**2 - 80.0**2
    g = 0.5 + 0.5 * (y / 10.0) / math.sqrt(1 + (y / 10.0) ** 2)
    assert r[0] == pytest.approx(1.0 * ((T1 - T0) / tau / 1e4 - (1 - g) * 0.3), rel=1e-13)


def test_residual_mesh_mismatch():
    m1, m2 = build_interval_mesh(2), build_interval_mesh(2)
    with pytest.raises(InvalidArgumentError):
        residual(MechState.zeros(m1), MechState.zeros(m2, 0.1), ELASTIC, REG, Loads(), m1)


# ----------------------------------------------------------------- jacobian
def test_jacobian_linear_regime_is_constant_elastodynamics(rng):
    n, tau = 6, 0.01
    m = build_interval_mesh(n)
    Ac, B, M = linear_bar_matrices(n, ELASTIC.E, 1.0)
    ref = np.block([[Ac / tau, -B], [B.T, M / tau]])
    for _ in range(3):
        cand = state(m, 1, tau, rng.normal(size=(n, 1)) * 100, rng.normal(size=n + 1))
        J = jacobian(MechState.zeros(m), cand, ELASTIC, REG, Loads(), m).toarray()
        np.testing.assert_allclose(J, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_jacobian_off_diagonal_blocks_skew():
    m = build_unit_square(NEUMANN_FREE)
    asm = MechanicsAssembler(m, ELASTIC)
    J = asm.jacobian(np.zeros(asm.n), np.zeros(asm.n), 0.01, 0.01, REG).toarray()
    ns = asm.n_stress
    np.testing.assert_allclose(J[:ns, ns:], -J[ns:, :ns].T, atol=1e-14)


@pytest.mark.parametrize("eta", [0.0, 5.0])
def test_jacobian_finite_difference_2d(rng, eta):
    m = build_unit_square(NEUMANN_FREE)
    p = MaterialParams(E=1e4, nu=0.3, kappa_star=60.0)
    cfg = RegularizationConfig("tanh", 400.0, eta)
    asm = MechanicsAssembler(m, p)
    tau = 0.01
    for _ in range(5):
        T = rng.normal(size=(2, 3)) * 40
        v = rng.normal(size=8) * 0.1
        x = np.concatenate([T.ravel(), v])
        xp = np.concatenate([rng.normal(size=6) * 40, rng.normal(size=8) * 0.1])
        d = np.concatenate([rng.normal(size=6) * 40, rng.normal(size=8) * 0.1])
        h = 1e-6
        fd = (asm.residual(x + h * d, xp, tau, tau, cfg) - asm.residual(x - h * d, xp, tau, tau, cfg)) / (2 * h)
        ex = asm.jacobian(x, xp, tau, tau, cfg) @ d
        assert np.linalg.norm(fd - ex) <= 1e-5 * np.linalg.norm(ex)


# ------------------------------------------------------------------- newton
def test_newton_elastic_bar_two_iterations():
    m = build_interval_mesh(32)
    loads = bar_loads()
    prev = MechState(0, 0.3, StressField.zeros(m), NodalField.zeros(m))
    s = newton_step_solve(prev, ELASTIC, REG, loads, m, 5e-4)
    assert s.info.iterations <= 2
    assert s.velocity.values[-1, 0] == pytest.approx(bump_rate(0.3005, 0.1), rel=1e-14)


def test_newton_zero_step_single_iteration():
    m = build_unit_square(NEUMANN_FREE)
    s = newton_step_solve(MechState.zeros(m), ELASTIC, REG, Loads(), m, 0.01)
    assert s.info.iterations == 1
    assert np.all(s.pack() == 0.0)
    assert s.k == 1 and s.t == pytest.approx(0.01)


def test_newton_step_continuity_in_tau():
    m = build_interval_mesh(16)
    p = MaterialParams(E=1e4, kappa_star=80.0)
    loads = bar_loads()
    v0 = NodalField(m, np.array([[bump_rate(0.25, 0.1) * (2 * x - 1)] for x in m.vertices[:, 0]]))
    prev = MechState(0, 0.25, StressField(m, np.full((16, 1), 40.0)), v0)
    jumps = []
    for tau in (4e-3, 2e-3, 1e-3, 5e-4):
        s = newton_step_solve(prev, p, REG, loads, m, tau, tol_abs=1e-11, tol_rel=1e-12)
        jumps.append(np.linalg.norm(s.velocity.values - prev.velocity.values))
    assert all(b < a for a, b in zip(jumps, jumps[1:]))


def test_newton_honours_tolerance():
    m = build_interval_mesh(32)
    p = MaterialParams(E=1e4, kappa_star=80.0)
    asm = MechanicsAssembler(m, p, bar_loads())
    prev = MechState(0, 0.3, StressField(m, np.full((32, 1), 79.0)), NodalField.zeros(m))
    s = asm.newton(prev, 5e-4, REG, tol_abs=1e-9, tol_rel=1e-12)
    assert s.info.residual_norm <= max(1e-9, 1e-12 * s.info.initial_residual_norm) or s.info.stalled


# ------------------------------------------------------------- continuation
def _plastic_bar_prev():
    m = build_interval_mesh(32)
    prev = MechState(0, 0.3, StressField(m, np.full((32, 1), 79.5)),
                     NodalField(m, np.array([[bump_rate(0.3, 0.1) * (2 * x - 1)] for x in m.vertices[:, 0]])))
    return m, prev


def test_continuation_degenerate_schedule_matches_newton():
    m, prev = _plastic_bar_prev()
    p = MaterialParams(E=1e4, kappa_star=80.0)
    a = newton_step_solve(prev, p, REG, bar_loads(), m, 5e-4)
    b = continuation_in_epsilon(prev, p, REG, bar_loads(), m, 5e-4, schedule=[10.0])
    np.testing.assert_array_equal(a.pack(), b.pack())


def test_continuation_long_schedule():
    m, prev = _plastic_bar_prev()
    p = MaterialParams(E=1e4, kappa_star=80.0)
    s = continuation_in_epsilon(prev, p, REG, bar_loads(), m, 5e-4, schedule=[200, 100, 50, 20, 10],
                                tol_abs=1e-10, tol_rel=1e-12)
    direct = newton_step_solve(prev, p, REG, bar_loads(), m, 5e-4, tol_abs=1e-10, tol_rel=1e-12)
    assert s.info.epsilon == 10.0
    np.testing.assert_allclose(s.pack(), direct.pack(), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("sched", [[10, 50], [100, 100, 10], [100, 20], []])
def test_continuation_schedule_validated(sched):
    m, prev = _plastic_bar_prev()
    with pytest.raises(InvalidArgumentError):
        continuation_in_epsilon(prev, MaterialParams(), REG, bar_loads(), m, 5e-4, schedule=sched)


def test_default_schedule_decreasing_to_target():
    s = default_schedule(10.0)
    assert s[-1] == 10.0 and all(b < a for a, b in zip(s, s[1:]))


# ------------------------------------------------------------ semi-implicit
def test_semi_implicit_zero_state():
    m = build_unit_square(NEUMANN_FREE)
    s = step_semi_implicit(MechState.zeros(m), ELASTIC, REG, Loads(), m, 0.01)
    assert np.all(s.pack() == 0.0)


def test_semi_implicit_modified_energy_two_cells(rng):
    m = build_unit_square(NEUMANN_FREE)
    p = ELASTIC
    tau = 1e-3
    s = state(m, 0, 0.0, rng.normal(size=(2, 3)) * 30, rng.normal(size=8) * 0.1)
    E0 = modified_energy(s, p, tau)
    drift = 0.0
    for _ in range(100):
        s = step_semi_implicit(s, p, REG, Loads(), m, tau)
        drift = max(drift, abs(modified_energy(s, p, tau) - E0))
    assert drift <= 1e-10 * E0


def test_semi_implicit_first_order_against_implicit(rng):
    # two cells keep omega_max * tau small, so both schemes resolve every mode
    m = build_unit_square(NEUMANN_FREE)
    T0, v0 = rng.normal(size=(2, 3)) * 30, rng.normal(size=8) * 0.1
    diffs = []
    for tau in (1e-4, 5e-5):
        a = b = state(m, 0, 0.0, T0, v0)
        for _ in range(int(round(0.02 / tau))):
            a = newton_step_solve(a, ELASTIC, REG, Loads(), m, tau, tol_abs=1e-13, tol_rel=1e-14)
            b = step_semi_implicit(b, ELASTIC, REG, Loads(), m, tau)
        diffs.append(np.abs(a.pack() - b.pack()).max())
    assert 1.5 <= diffs[0] / diffs[1] <= 2.5


# ------------------------------------------------------------- tau/h check
def test_tau_h_zero_tau():
    c = estimate_inverse_constants(build_interval_mesh(16))
    chk = check_tau_h_condition(ELASTIC, c, 0.0)
    assert chk.admissible and chk.margin == pytest.approx(tau_h_bound(ELASTIC, c))


def test_tau_h_boundary_not_admissible():
    c = MeshConstants(h=0.5, h_min=0.5, c_inv=2.0, c_tr=1.0, shape_regularity=2.0, dim=1)
    B = tau_h_bound(ELASTIC, c)
    assert not check_tau_h_condition(ELASTIC, c, B * c.h).admissible


def test_tau_h_bound_formula():
    c = MeshConstants(h=0.1, h_min=0.1, c_inv=3.0, c_tr=2.0, shape_regularity=2.0, dim=2)
    p = MaterialParams(rho_star=4.0)
    a = math.sqrt(0.7e-4)
    assert tau_h_bound(p, c) == pytest.approx(a * 4 / (3 * 2 + 4 * a + a * 2), rel=1e-14)


def test_tau_h_fine_bar_setup_is_evaluated():
    c = estimate_inverse_constants(build_interval_mesh(240))  # 240 stress + 241 velocity dofs
    chk = check_tau_h_condition(MaterialParams(E=1e4, kappa_star=80.0), c, 5e-4)
    assert math.isfinite(chk.bound) and chk.bound > 0
    assert chk.ratio == pytest.approx(5e-4 * 240)


def test_time_grid():
    g = TimeGrid.from_final_time(1.0, 5e-4)
    assert g.n_steps == 2000 and g.T == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        TimeGrid.from_final_time(1.0, 3e-4)
    with pytest.raises(InvalidArgumentError):
        TimeGrid(0.0, 10)


# --------------------------------------------------------------- invariants
def test_energy_identity_and_gate_sign_homogeneous_dirichlet(rng):
    m = build_interval_mesh(24)
    p = MaterialParams(E=1e4, kappa_star=30.0)
    cfg = RegularizationConfig("sqrt", 10.0)
    loads = Loads(body_force=lambda t, X: 50.0 * bump(t, 1.0) * np.sin(np.pi * X), dirichlet=DirichletBC(lambda t, X: 0.0))
    asm = MechanicsAssembler(m, p, loads)
    s = MechState.zeros(m)
    tau = 5e-3
    worst, gate_min = 0.0, 0.0
    for _ in range(120):
        new = asm.newton(s, tau, cfg, tol_abs=1e-12, tol_rel=1e-13)
        rep = audit_step(s, new, None, None, loads, p, cfg, asm)
        scale = max(rep.E_kin + rep.E_int, 1e-30) / tau
        worst = max(worst, abs(rep.balance_residual + rep.plastic_dissipation) / scale)
        gate_min = min(gate_min, rep.plastic_dissipation)
        assert rep.W_D == pytest.approx(0.0, abs=1e-14)
        s = new
    assert worst <= 1e-8
    assert gate_min >= -1e-10
    assert s.info is not None


def test_infinite_yield_matches_linear_solve():
    n, tau = 20, 1e-3
    m = build_interval_mesh(n)
    loads = bar_loads()
    asm = MechanicsAssembler(m, ELASTIC, loads)
    Ac, B, M = linear_bar_matrices(n, ELASTIC.E, 1.0)
    K = np.block([[Ac / tau, -B], [B.T, M / tau]])
    dirs = [n, 2 * n]
    x = np.zeros(2 * n + 1)
    s = MechState(0, 0.3, StressField.zeros(m), NodalField.zeros(m))
    for k in range(1, 6):
        t = 0.3 + k * tau
        rhs = np.concatenate([Ac @ x[:n] / tau, M @ x[n:] / tau])
        Kd = K.copy()
        for i, val in zip(dirs, (-bump_rate(t, 0.1), bump_rate(t, 0.1))):
            Kd[i] = 0.0
            Kd[i, i] = 1.0
            rhs[i] = val
        x = np.linalg.solve(Kd, rhs)
        s = asm.newton(s, tau, REG, tol_abs=1e-12, tol_rel=1e-13)
        np.testing.assert_allclose(s.pack(), x, rtol=1e-9, atol=1e-9 * np.abs(x).max())


def _rate_probe(rho, c=2.0, n=64, tau=2e-3):
    """Stress history of the bar driven by u_b(c t) with step tau / c, one row per step."""
    m = build_interval_mesh(n)
    p = MaterialParams(E=1e4, kappa_star=80.0, rho_star=rho)
    cfg = RegularizationConfig("sqrt", 10.0)
    side = lambda X: np.where(X[:, 0] < 0.5, -1.0, 1.0)[:, None]
    loads = Loads(dirichlet=DirichletBC(lambda t, X: side(X) * c * bump_rate(c * t, 0.1)))
    asm = MechanicsAssembler(m, p, loads)
    s = MechState.zeros(m)
    out = []
    for _ in range(int(round(1.0 / tau))):
        try:
            s = asm.newton(s, tau / c, cfg, tol_abs=1e-10, tol_rel=1e-12)
        except NonConvergenceError:
            s = asm.continuation(s, tau / c, cfg, default_schedule(10.0), tol_abs=1e-10, tol_rel=1e-12)
        out.append(s.stress.values[:, 0].copy())
    return np.array(out)


def test_rate_independence_probe():
    """Scenario density: time-rescaled loading must trace the same stress history within 2%."""
    a, b = _rate_probe(1.0, 1.0), _rate_probe(1.0, 2.0)
    assert np.abs(a - b).max() <= 0.02 * np.abs(a).max()


def test_rate_independence_without_inertia():
    a, b = _rate_probe(1e-2, 1.0), _rate_probe(1e-2, 2.0)
    assert np.abs(a - b).max() <= 0.02 * np.abs(a).max()
