"""Experiment drivers: the 1D bar, the 2D plate with a hole, and the convergence study.

A run is described by a :class:`ScenarioConfig` (JSON on disk).  The time
loop is: implicit (or semi-implicit) mechanical step, post-hoc displacement
and temperature update, energy audit, then output.
"""

from __future__ import annotations

import json
import logging
import math
import time as _time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from . import assembly, thermal
from .constitutive import MaterialParams, RegularizationConfig, heaviside_reg, norm_A_squared, norm_rho_squared, yield_argument
from .energy import EnergyReport, StabilityReport, audit_step, data_norms, modified_energy, young_slack
from .errors import ConfigurationError, InvalidArgumentError, NonConvergenceError, NumericalError, SolverError
from .export import CsvSeries, write_json, write_vtk
from .mechanics import (
    Loads,
    MechanicsAssembler,
    MechState,
    StepInfo,
    TauHCheck,
    TimeGrid,
    check_tau_h_condition,
    default_schedule,
)
from .mesh import Mesh, build_interval_mesh, build_plate_with_hole, estimate_inverse_constants, load_triangle_mesh
from .spaces import DirichletBC, NodalField, deviatoric_coeffs, strain_coeffs
from .thermal import ThermoState

log = logging.getLogger(__name__)

SCENARIOS = ("bar1d", "plate2d")
SCHEMES = ("implicit", "semi_implicit")
LOADING_END = 0.5  # the bump peaks at t = 1/2


# ------------------------------------------------------------------ loads
def bump(t: float, amplitude: float) -> float:
    """``amplitude * exp(1 + 1/(4 t (t - 1)))`` on ``(0, 1)``, zero elsewhere."""
    if not 0.0 < t < 1.0:
        return 0.0
    return amplitude * math.exp(1.0 + 1.0 / (4.0 * t * (t - 1.0)))


def bump_rate(t: float, amplitude: float) -> float:
    """Exact time derivative of :func:`bump`."""
    if not 0.0 < t < 1.0:
        return 0.0
    return -bump(t, amplitude) * (2.0 * t - 1.0) / (4.0 * t * t * (t - 1.0) ** 2)


# ---------------------------------------------------------------- config
def _default_mesh(scenario: str) -> dict:
    if scenario == "bar1d":
        return {"kind": "interval", "n_cells": 256, "x0": 0.0, "x1": 1.0}
    return {"kind": "plate", "L": 1.0, "l": 1.0, "a": 0.24, "b": 0.25, "refinement": 3}


@dataclass
class ScenarioConfig:
    """Everything a run needs; :meth:`from_dict` fills scenario defaults."""

    scenario: str = "bar1d"
    mesh: dict = field(default_factory=dict)
    material: MaterialParams = field(default_factory=MaterialParams)
    regularization: RegularizationConfig = field(default_factory=RegularizationConfig)
    time: TimeGrid = field(default_factory=lambda: TimeGrid(5e-4, 2000))
    load_amplitude: float = 0.1
    output_dir: Optional[str] = None
    probes: list = field(default_factory=list)
    scheme: str = "implicit"
    strict: bool = False
    check_tau_h: bool = True
    export_every: int = 25
    snapshot_times: tuple = (0.0, 0.25, 0.375, 0.5, 0.54, 1.0)
    magnification: float = 15.0
    write_vtk: bool = True
    newton: dict = field(default_factory=lambda: {"tol_abs": 1e-11, "tol_rel": 1e-12, "max_iter": 50})
    continuation: dict = field(default_factory=lambda: {"start_factor": 16.0, "n": 5})
    keep_history: bool = False
    eta_fallback: float = 1e-3

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.scheme == "semi":
            self.scheme = "semi_implicit"
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.export_every < 1:
            raise ConfigurationError("export_every must be at least 1")
        self.mesh = {**_default_mesh(self.scenario), **self.mesh}

    @classmethod
    def defaults(cls, scenario: str, **overrides) -> "ScenarioConfig":
        if scenario == "bar1d":
            base = dict(material=MaterialParams(E=1e4, kappa_star=80.0), load_amplitude=0.1, probes=[[0.75]],
                        regularization=RegularizationConfig("sqrt", 10.0))
        elif scenario == "plate2d":
            base = dict(material=MaterialParams(E=1e4, nu=0.3, kappa_star=60.0), load_amplitude=20.0, probes=[],
                        regularization=RegularizationConfig("sqrt", 100.0))
        else:
            raise ConfigurationError(f"unknown scenario {scenario!r}")
        base.update(overrides)
        return cls(scenario=scenario, **base)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        scenario = data.pop("scenario", "bar1d")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known - {"tau", "T", "n_steps"}
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        kw = {}
        if "material" in data:
            kw["material"] = MaterialParams(**data.pop("material"))
        if "regularization" in data:
            kw["regularization"] = RegularizationConfig(**data.pop("regularization"))
        t = data.pop("time", {})
        for k in ("tau", "T", "n_steps"):
            if k in data:
                t[k] = data.pop(k)
        if t:
            tau = float(t.get("tau", 5e-4))
            kw["time"] = TimeGrid(tau, int(t["n_steps"])) if "n_steps" in t else TimeGrid.from_final_time(float(t.get("T", 1.0)), tau)
        if "snapshot_times" in data:
            data["snapshot_times"] = tuple(data["snapshot_times"])
        kw.update(data)
        try:
            return cls.defaults(scenario, **kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regularization"]["variant"] = self.regularization.variant.value
        d["time"] = {"tau": self.time.tau, "n_steps": self.time.n_steps}
        return d


# ------------------------------------------------------------------ setup
def build_mesh(cfg: ScenarioConfig) -> Mesh:
    m = cfg.mesh
    kind = m.get("kind")
    if kind == "interval":
        return build_interval_mesh(int(m["n_cells"]), float(m["x0"]), float(m["x1"]))
    if kind == "plate":
        return build_plate_with_hole(float(m["L"]), float(m["l"]), float(m["a"]), float(m["b"]), int(m["refinement"]))
    if kind == "file":
        return load_triangle_mesh(m["path"])
    raise ConfigurationError(f"unknown mesh kind {kind!r}")


def build_loads(cfg: ScenarioConfig, mesh: Mesh) -> tuple[Loads, Optional[DirichletBC]]:
    """Mechanical loads and, for displacement-driven runs, the displacement data."""
    A = float(cfg.load_amplitude)
    if cfg.scenario == "bar1d":
        mid = 0.5 * (float(mesh.vertices.min()) + float(mesh.vertices.max()))

        def side(X):
            return np.where(X[:, 0] < mid, -1.0, 1.0)[:, None]

        vel = DirichletBC(lambda t, X: side(X) * bump_rate(t, A))
        disp = DirichletBC(lambda t, X: side(X) * bump(t, A))
        return Loads(dirichlet=vel), disp

    def traction(t, X):
        out = np.zeros((len(X), 2))
        out[:, 1] = np.sign(X[:, 1]) * bump(t, A)
        return out

    return Loads(traction=traction), None


# -------------------------------------------------------------- stepping
def mechanics_step(asm: MechanicsAssembler, prev: MechState, tau: float, cfg: ScenarioConfig) -> MechState:
    """One mechanical step with escalating fallbacks.

    Order: direct Newton, then continuation in epsilon, then (sharp loading
    gate only) a smoothed loading gate ``H_eta`` with ``eta`` growing by 10x.
    The last stage handles cells where neither gate value is consistent:
    the elastic trial unloads while the plastic one loads.
    """
    reg = cfg.regularization
    if cfg.scheme == "semi_implicit":
        return asm.semi_implicit(prev, tau, reg)
    try:
        return asm.newton(prev, tau, reg, **cfg.newton)
    except NumericalError as exc:
        first = exc
    sched = default_schedule(reg.epsilon, float(cfg.continuation.get("start_factor", 16.0)),
                             int(cfg.continuation.get("n", 5)))
    log.info("step %d: direct solve failed (%s); continuing in epsilon %s", prev.k + 1, first, sched)
    try:
        state = asm.continuation(prev, tau, reg, sched, **cfg.newton)
        return replace(state, info=replace(state.info, continued=True))
    except NumericalError as exc:
        last = exc
    if reg.eta == 0.0:
        eta = float(cfg.eta_fallback)
        for _ in range(4):
            smooth = RegularizationConfig(reg.variant, reg.epsilon, eta)
            try:
                state = asm.newton(prev, tau, smooth, **cfg.newton)
                log.info("step %d: accepted with smoothed loading gate eta=%g", prev.k + 1, eta)
                return replace(state, info=replace(state.info, continued=True))
            except NumericalError as exc:
                last = exc
                eta *= 10.0
    raise last


def iterate_mechanics(asm: MechanicsAssembler, cfg: ScenarioConfig, start: Optional[MechState] = None) -> Iterator[MechState]:
    """Yield the accepted states ``k = 1..n_steps``; solver errors carry the step index."""
    state = MechState.zeros(asm.mesh) if start is None else start
    tau = cfg.time.tau
    for k in range(1, cfg.time.n_steps + 1):
        try:
            state = mechanics_step(asm, state, tau, cfg)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"step {k} (t={k * tau:.6g}): {exc}", exc.residual_norm, exc.epsilon, k) from exc
        except SolverError as exc:
            raise SolverError(f"step {k} (t={k * tau:.6g}): {exc}") from exc
        # pin the time to the grid so long runs do not accumulate rounding
        state = replace(state, t=k * tau)
        yield state


# ----------------------------------------------------------------- result
@dataclass
class RunResult:
    config: ScenarioConfig
    mesh: Mesh
    times: np.ndarray
    reports: list
    infos: list
    series: dict
    final_mech: MechState
    final_thermo: ThermoState
    stability: Optional[StabilityReport]
    tau_h: Optional[TauHCheck]
    gate_loading: np.ndarray
    summary: dict
    history: Optional[list] = None
    snapshots: list = field(default_factory=list)
    out_dir: Optional[Path] = None


def _dev_norm(T, d):
    if d == 1:
        return np.abs(T[:, 0])
    dev = deviatoric_coeffs(T, d)
    return np.sqrt(np.sum(assembly.coefficient_weights(d) * dev * dev, axis=1))


def _tensor_norm(c, d):
    return np.sqrt(np.sum(assembly.coefficient_weights(d) * c * c, axis=1))


def cell_fields(mesh: Mesh, mech: MechState, thermo: ThermoState, p: MaterialParams, reg: RegularizationConfig,
                heating: Optional[np.ndarray] = None) -> dict:
    """Per-cell export fields: stress, |T_dev|, strain of u, gate, heating."""
    d = mesh.dim
    T = mech.stress.values
    eps_u = strain_coeffs(mesh, thermo.displacement.flat)
    out = {"stress": T, "dev_stress_norm": _dev_norm(T, d), "strain_norm": _tensor_norm(eps_u, d),
           "gate": heaviside_reg(reg, yield_argument(p, T, d)),
           "heating": np.zeros(mesh.n_cells) if heating is None else heating}
    if d == 1:
        out["strain"] = eps_u[:, 0]
    return out


def export_fields(mesh: Mesh, mech: MechState, thermo: ThermoState, cfg: ScenarioConfig, path,
                  heating: Optional[np.ndarray] = None) -> Path:
    """Write one VTK snapshot; points are displaced by ``magnification * u`` (2D only)."""
    cells = cell_fields(mesh, mech, thermo, cfg.material, cfg.regularization, heating)
    points = {"velocity": mech.velocity.values, "displacement": thermo.displacement.values,
              "temperature": thermo.temperature.values}
    mag = cfg.magnification if mesh.dim == 2 else 0.0
    return write_vtk(path, mesh, points, cells, thermo.displacement.values, mag,
                     title=f"{cfg.scenario} k={mech.k} t={mech.t:.6g}")


def _snapshot_steps(cfg: ScenarioConfig) -> set:
    n, tau = cfg.time.n_steps, cfg.time.tau
    steps = set(range(0, n + 1, cfg.export_every)) | {n}
    steps |= {int(round(t / tau)) for t in cfg.snapshot_times if 0 <= t / tau <= n + 0.5}
    return steps


DIAG_FIELDS = ("k", "t", "iterations", "residual_norm", "halvings", "epsilon", "stalled", "gate_fraction",
               "max_abs_stress", "max_dev_stress", "max_strain", "heating_integral", "min_theta", "max_theta",
               "modified_energy", "stability_lhs", "stability_rhs")


def simulate(cfg: ScenarioConfig, callback: Optional[Callable] = None) -> RunResult:
    """Run a scenario end to end; ``callback(k, mech, thermo, heating)`` sees every step."""
    t_start = _time.perf_counter()
    mesh = build_mesh(cfg)
    p, reg, tau = cfg.material, cfg.regularization, cfg.time.tau
    loads, disp_bc = build_loads(cfg, mesh)
    asm = MechanicsAssembler(mesh, p, loads)
    d = mesh.dim

    tau_h = None
    if cfg.check_tau_h:
        tau_h = check_tau_h_condition(p, estimate_inverse_constants(mesh), tau)
        msg = f"tau/h = {tau_h.ratio:.3e}, bound {tau_h.bound:.3e} (margin {tau_h.margin:.3e})"
        if not tau_h.admissible:
            if cfg.strict:
                raise ConfigurationError(f"time step violates the tau/h smallness condition: {msg}")
            log.warning("tau/h condition not satisfied: %s", msg)
        else:
            log.info("tau/h condition satisfied: %s", msg)

    probes = [np.atleast_1d(np.asarray(x, dtype=float)) for x in cfg.probes]
    probe_cells = [mesh.locate(x) for x in probes]

    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    writers = {}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        writers["energy"] = CsvSeries(out_dir / "energy.csv", EnergyReport.CSV_FIELDS)
        writers["diag"] = CsvSeries(out_dir / "diagnostics.csv", DIAG_FIELDS)
        if probes:
            cols = ["t"]
            for i in range(len(probes)):
                sfx = "" if len(probes) == 1 else f"_{i}"
                cols += [f"eps_probe{sfx}", f"sigma_probe{sfx}"] if d == 1 else [f"strain_norm_probe{sfx}", f"dev_stress_probe{sfx}"]
            cols.append("max_abs_sigma" if d == 1 else "max_dev_stress")
            writers["probe"] = CsvSeries(out_dir / "probes.csv", cols)
    snap_steps = _snapshot_steps(cfg) if (out_dir is not None and cfg.write_vtk) else set()

    mech = MechState.zeros(mesh)
    thermo = ThermoState.zeros(mesh)
    history = [mech] if cfg.keep_history else None
    reports: list[EnergyReport] = []
    infos: list[StepInfo] = []
    series = {k: [] for k in ("t", "max_abs_stress", "max_dev_stress", "max_strain", "heating_integral",
                              "min_theta", "max_theta", "modified_energy", "stability_lhs", "stability_rhs",
                              "audit_ratio", "probe_strain", "probe_stress")}
    gate_loading = np.zeros(mesh.n_cells, dtype=bool)
    snapshots = []

    # running stability quantities
    v2_0 = norm_rho_squared(p, mech.velocity)
    T2_0 = norm_A_squared(p, mech.stress)
    max_v2, max_T2, diss_sum, data_sum = v2_0, T2_0, 0.0, 0.0
    peak_energy = 0.0
    heating = np.zeros(mesh.n_cells)

    def record(k, mech, thermo, heating, rep):
        T = mech.stress.values
        eps_u = strain_coeffs(mesh, thermo.displacement.flat)
        dev = _dev_norm(T, d)
        row = {
            "t": mech.t,
            "max_abs_stress": float(np.abs(T).max()) if d == 1 else float(_tensor_norm(T, d).max()),
            "max_dev_stress": float(dev.max()),
            "max_strain": float(_tensor_norm(eps_u, d).max()),
            "heating_integral": float(heating @ mesh.cell_volumes),
            "min_theta": float(thermo.temperature.values.min()),
            "max_theta": float(thermo.temperature.values.max()),
            "modified_energy": modified_energy(mech, p, tau, asm),
            "stability_lhs": max_v2 + max_T2 + diss_sum,
            "stability_rhs": v2_0 + T2_0 + data_sum,
            "audit_ratio": 0.0 if rep is None or peak_energy == 0 else abs(rep.audited_residual) / peak_energy,
            "probe_strain": [float(eps_u[c, 0]) if d == 1 else float(_tensor_norm(eps_u[c:c + 1], d)[0]) for c in probe_cells],
            "probe_stress": [float(T[c, 0]) if d == 1 else float(dev[c]) for c in probe_cells],
        }
        for key, val in row.items():
            series[key].append(val)
        if "probe" in writers:
            vals = [mech.t]
            for e, s in zip(row["probe_strain"], row["probe_stress"]):
                vals += [e, s]
            vals.append(row["max_abs_stress"] if d == 1 else row["max_dev_stress"])
            writers["probe"].write(vals)
        if "diag" in writers:
            info = mech.info or StepInfo()
            writers["diag"].write([k, mech.t, info.iterations, info.residual_norm, info.halvings, info.epsilon,
                                   int(info.stalled), info.gate_fraction, row["max_abs_stress"], row["max_dev_stress"],
                                   row["max_strain"], row["heating_integral"], row["min_theta"], row["max_theta"],
                                   row["modified_energy"], row["stability_lhs"], row["stability_rhs"]])
        if k in snap_steps:
            snapshots.append(export_fields(mesh, mech, thermo, cfg, out_dir / f"fields_{k:06d}.vtk", heating))

    try:
        record(0, mech, thermo, heating, None)
        for mech_new in iterate_mechanics(asm, cfg, mech):
            k = mech_new.k
            # audit and heat with the gate this step was actually solved with
            step_reg = reg if mech_new.info is None or mech_new.info.eta == reg.eta else replace(reg, eta=mech_new.info.eta)
            thermo_new, heating = thermal.advance(thermo, mech_new.stress, mech_new.velocity, p, step_reg, tau,
                                                  disp_bc, mech_new.t)
            rep = audit_step(mech, mech_new, thermo, thermo_new, loads, p, step_reg, asm)
            reports.append(rep)
            infos.append(mech_new.info)
            if "energy" in writers:
                writers["energy"].write(rep.as_dict())
            peak_energy = max(peak_energy, rep.total)
            max_v2 = max(max_v2, 2.0 * rep.E_kin)
            max_T2 = max(max_T2, 2.0 * rep.E_int)
            diss_sum += 2.0 * tau**2 * rep.D_tau
            data_sum += _data_increment(asm, mech_new.t, tau)
            if mech_new.t <= LOADING_END + 0.5 * tau:
                gate_loading |= heaviside_reg(reg, yield_argument(p, mech_new.stress.values, d)) >= 0.5
            mech, thermo = mech_new, thermo_new
            if history is not None:
                history.append(mech)
            record(k, mech, thermo, heating, rep)
            if callback is not None:
                callback(k, mech, thermo, heating)
    finally:
        for w in writers.values():
            w.close()

    lhs, rhs = max_v2 + max_T2 + diss_sum, v2_0 + T2_0 + data_sum
    slack = young_slack(data_norms(asm, cfg.time.times()), [tau] * len(reports), mech.t)
    ratio = lhs / rhs if rhs else (0.0 if lhs == 0 else math.inf)
    stab = StabilityReport(lhs, rhs, ratio, slack, lhs == 0.0 or lhs <= slack * rhs)

    arr = {k: np.asarray(v) for k, v in series.items()}
    summary = _summarize(cfg, arr, reports, infos, tau_h, stab, _time.perf_counter() - t_start)
    result = RunResult(cfg, mesh, cfg.time.times(), reports, infos, arr, mech, thermo, stab, tau_h, gate_loading,
                       summary, history, snapshots, out_dir)
    if out_dir is not None:
        write_json(out_dir / "run_log.json", {"config": cfg.to_dict(), "summary": summary,
                                              "mesh": {"n_vertices": mesh.n_vertices, "n_cells": mesh.n_cells,
                                                       "h": mesh.h, "dim": mesh.dim},
                                              "energy_audit": "balance_residual minus W_D (reaction work at Dirichlet dofs)",
                                              "continuation_schedule": default_schedule(
                                                  reg.epsilon, float(cfg.continuation.get("start_factor", 16.0)),
                                                  int(cfg.continuation.get("n", 5)))})
    return result


def _data_increment(asm: MechanicsAssembler, t: float, tau: float) -> float:
    inc = 0.0
    if asm.loads.body_force is not None:
        mesh = asm.mesh
        f = np.broadcast_to(np.asarray(asm.loads.body_force(t, mesh.vertices), dtype=float), (mesh.n_vertices, asm.d)).ravel()
        inc += tau * float(f @ (asm.M @ f))
    if asm.loads.traction is not None and len(asm.traction_facets):
        tb = asm._traction_nodal(t).ravel()
        inc += tau * float(tb @ (asm.M_traction @ tb))
    return inc


def _summarize(cfg, s, reports, infos, tau_h, stab, wall) -> dict:
    t = s["t"]
    i_peak = int(np.argmax(s["max_abs_stress"]))
    audit = [abs(r.audited_residual) for r in reports]
    out = {
        "scenario": cfg.scenario,
        "scheme": cfg.scheme,
        "steps": len(reports),
        "wall_time_s": wall,
        "peak_max_abs_stress": float(s["max_abs_stress"][i_peak]),
        "peak_time": float(t[i_peak]),
        "final_max_abs_stress": float(s["max_abs_stress"][-1]),
        "peak_dev_stress": float(s["max_dev_stress"].max()),
        "final_max_strain": float(s["max_strain"][-1]),
        "min_theta": float(s["min_theta"].min()),
        "max_theta": float(s["max_theta"].max()),
        "max_audit_ratio": float(s["audit_ratio"].max()) if len(audit) else 0.0,
        "max_audit_residual": float(max(audit)) if audit else 0.0,
        "newton_iterations_max": int(max((i.iterations for i in infos), default=0)),
        "newton_iterations_mean": float(np.mean([i.iterations for i in infos])) if infos else 0.0,
        "stalled_steps": int(sum(bool(i.stalled) for i in infos)),
        "continuation_steps": int(sum(bool(i.continued) for i in infos)),
        "smoothed_gate_steps": int(sum(i.eta > 0 for i in infos)) if cfg.regularization.eta == 0 else 0,
        "stability": {"lhs": stab.lhs, "rhs": stab.rhs, "ratio": stab.ratio, "slack": stab.slack,
                      "satisfied": stab.satisfied},
    }
    if tau_h is not None:
        out["tau_h"] = {"admissible": tau_h.admissible, "margin": tau_h.margin, "bound": tau_h.bound,
                        "ratio": tau_h.ratio}
    return out


def run_1d_bar(cfg: Optional[ScenarioConfig] = None, **overrides) -> RunResult:
    cfg = ScenarioConfig.defaults("bar1d", **overrides) if cfg is None else cfg
    if cfg.scenario != "bar1d":
        raise ConfigurationError("run_1d_bar needs scenario 'bar1d'")
    return simulate(cfg)


def run_2d_plate(cfg: Optional[ScenarioConfig] = None, **overrides) -> RunResult:
    cfg = ScenarioConfig.defaults("plate2d", **overrides) if cfg is None else cfg
    if cfg.scenario != "plate2d":
        raise ConfigurationError("run_2d_plate needs scenario 'plate2d'")
    return simulate(cfg)


# ------------------------------------------------------------ convergence
@dataclass
class ErrorTable:
    levels: list
    n_cells: list
    n_steps: list
    E_str: list
    E_vel: list
    reference: tuple

    @property
    def rates_str(self) -> list:
        return _rates(self.E_str)

    @property
    def rates_vel(self) -> list:
        return _rates(self.E_vel)

    def rows(self) -> list:
        rs, rv = [math.nan] + self.rates_str, [math.nan] + self.rates_vel
        return [[l, n, m, es, ev, a, b] for l, n, m, es, ev, a, b in
                zip(self.levels, self.n_cells, self.n_steps, self.E_str, self.E_vel, rs, rv)]

    FIELDS = ("level", "n_cells", "n_steps", "E_str", "E_vel", "rate_str", "rate_vel")


def _rates(errs):
    return [math.log2(a / b) if a > 0 and b > 0 else math.nan for a, b in zip(errs[:-1], errs[1:])]


def level_size(level: int, base_cells: int = 40, base_steps: int = 64) -> tuple[int, int]:
    if level < 1 or int(level) != level:
        raise InvalidArgumentError(f"levels start at 1, got {level}")
    return base_cells * 2 ** (level - 1), base_steps * 2 ** (level - 1)


def convergence_study(cfg: ScenarioConfig, levels: Sequence[int] = (1, 2, 3, 4), reference_level: int = 7,
                      base_cells: int = 40, base_steps: int = 64) -> ErrorTable:
    """Sup-in-time L2 errors of stress and velocity against a nested reference run.

    Level ``l`` has ``base_cells 2^(l-1)`` cells and ``base_steps 2^(l-1)``
    steps on ``[0, T]``.  Coarse histories are kept in memory; the reference
    is streamed, and every fine step is compared with the coarse value on
    the enclosing coarse interval (piecewise constant in time).  Coarse P0
    stresses and P1 velocities are transferred exactly to the fine mesh.
    """
    if cfg.scenario != "bar1d" or cfg.mesh.get("kind") != "interval":
        raise ConfigurationError("the convergence study runs on the 1D bar")
    levels = sorted(int(l) for l in levels)
    if not levels or len(set(levels)) != len(levels):
        raise InvalidArgumentError("levels must be distinct")
    if levels[-1] > reference_level:
        raise InvalidArgumentError("levels must not exceed the reference level")
    for l in levels + [reference_level]:
        level_size(l, base_cells, base_steps)
    T_final = cfg.time.T

    def level_cfg(l):
        nc, ns = level_size(l, base_cells, base_steps)
        return replace(cfg, mesh={**cfg.mesh, "n_cells": nc}, time=TimeGrid(T_final / ns, ns), output_dir=None,
                       keep_history=False, check_tau_h=False)

    coarse = {}
    for l in levels:
        c = level_cfg(l)
        mesh = build_mesh(c)
        loads, _ = build_loads(c, mesh)
        asm = MechanicsAssembler(mesh, c.material, loads)
        S = [np.zeros(mesh.n_cells)]
        V = [np.zeros(mesh.n_vertices)]
        for st in iterate_mechanics(asm, c):
            S.append(st.stress.values[:, 0].copy())
            V.append(st.velocity.values[:, 0].copy())
        coarse[l] = (mesh, np.array(S), np.array(V))
        log.info("level %d done (%d cells, %d steps)", l, mesh.n_cells, c.time.n_steps)

    rc = level_cfg(reference_level)
    fmesh = build_mesh(rc)
    floads, _ = build_loads(rc, fmesh)
    fasm = MechanicsAssembler(fmesh, rc.material, floads)
    Mf = assembly.mass_matrix(fmesh)
    hf = fmesh.cell_volumes
    xf = fmesh.vertices[:, 0]
    n_fine = rc.time.n_steps
    transfer = {}
    for l, (mesh, S, V) in coarse.items():
        r_s = fmesh.n_cells // mesh.n_cells
        r_t = n_fine // (S.shape[0] - 1)
        transfer[l] = (np.arange(fmesh.n_cells) // r_s, r_t, mesh.vertices[:, 0])
    err_s = {l: 0.0 for l in levels}
    err_v = {l: 0.0 for l in levels}

    def compare(j, sf, vf):
        for l, (mesh, S, V) in coarse.items():
            parent, r_t, xc = transfer[l]
            kc = -(-j // r_t)  # value on (t_{k-1}, t_k] is the step-k value
            ds = S[kc][parent] - sf
            dv = np.interp(xf, xc, V[kc]) - vf
            err_s[l] = max(err_s[l], math.sqrt(float(np.sum(hf * ds * ds))))
            err_v[l] = max(err_v[l], math.sqrt(max(float(dv @ (Mf @ dv)), 0.0)))

    compare(0, np.zeros(fmesh.n_cells), np.zeros(fmesh.n_vertices))
    for st in iterate_mechanics(fasm, rc):
        compare(st.k, st.stress.values[:, 0], st.velocity.values[:, 0])

    sizes = [level_size(l, base_cells, base_steps) for l in levels]
    return ErrorTable(levels, [s[0] for s in sizes], [s[1] for s in sizes], [err_s[l] for l in levels],
                      [err_v[l] for l in levels], level_size(reference_level, base_cells, base_steps))
