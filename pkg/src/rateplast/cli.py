"""Command line entry point ``rateplast``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .constitutive import RegularizationConfig, Variant
from .errors import ConfigurationError, InvalidArgumentError, NumericalError, RatePlastError
from .export import write_csv, write_json
from .material_point import bump_strain_path, ideal_elastoplastic_oracle, integrate_rate_law
from .mesh import build_plate_with_hole, write_mesh
from .scenarios import ErrorTable, ScenarioConfig, convergence_study, simulate

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("rateplast")


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    reg = cfg.regularization
    if args.variant is not None:
        reg = RegularizationConfig(args.variant, reg.epsilon, reg.eta)
    if args.epsilon is not None:
        reg = reg.with_epsilon(args.epsilon)
    changes = {"regularization": reg}
    if args.scheme is not None:
        changes["scheme"] = "semi_implicit" if args.scheme == "semi" else args.scheme
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if args.strict:
        changes["strict"] = True
    return replace(cfg, **changes)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--variant", choices=[v.value for v in Variant], help="regularised Heaviside variant")
    p.add_argument("--epsilon", type=float, help="regularisation width (Pa^2)")
    p.add_argument("--scheme", choices=["implicit", "semi", "semi_implicit"], help="time discretisation")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--strict", action="store_true", help="abort if the tau/h smallness condition fails")


def cmd_run(args) -> int:
    cfg = _apply_overrides(ScenarioConfig.from_json(args.config), args)
    if cfg.output_dir is None:
        cfg = replace(cfg, output_dir=str(Path("out") / cfg.scenario))
    result = simulate(cfg)
    print(json.dumps({"output_dir": str(result.out_dir), **result.summary}, indent=2, default=str))
    return 0


def cmd_converge(args) -> int:
    data = json.loads(Path(args.config).read_text())
    study = data.pop("study", {})
    cfg = _apply_overrides(ScenarioConfig.from_dict(data), args)
    levels = args.levels or study.get("levels", [1, 2, 3, 4])
    ref = args.reference or study.get("reference_level", 7)
    table: ErrorTable = convergence_study(cfg, levels, ref, study.get("base_cells", 40), study.get("base_steps", 64))
    out = Path(args.out or cfg.output_dir or "out/convergence")
    write_csv(out / "errors.csv", ErrorTable.FIELDS, table.rows())
    write_json(out / "run_log.json", {"config": cfg.to_dict(), "levels": table.levels, "reference": table.reference,
                                      "E_str": table.E_str, "E_vel": table.E_vel, "rates_str": table.rates_str,
                                      "rates_vel": table.rates_vel})
    for row in table.rows():
        print("level {} ({} cells, {} steps): E_str={:.4e} E_vel={:.4e} rates {:.3f} {:.3f}".format(*row))
    return 0


def cmd_mp(args) -> int:
    path = bump_strain_path(args.dt, args.peak, args.T)
    cfg = RegularizationConfig(args.variant or "sqrt", args.epsilon if args.epsilon is not None else 10.0)
    sigma = integrate_rate_law(path, args.E, args.kappa, cfg, args.sigma0)
    oracle = ideal_elastoplastic_oracle(path, args.E, args.kappa, args.sigma0)
    out = args.out or Path("out/material_point.csv")
    write_csv(out, ("t", "epsilon", "sigma", "sigma_oracle"), zip(path.times, path.strains, sigma, oracle))
    print(f"wrote {out} ({len(path)} rows); sup |sigma - oracle| = {abs(sigma - oracle).max():.6g} Pa")
    return 0


def cmd_mesh(args) -> int:
    mesh = build_plate_with_hole(args.L, args.l, args.a, args.b, args.refinement)
    write_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_cells} cells")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rateplast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario from a JSON config")
    p.add_argument("--config", required=True, type=Path)
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("converge", help="nested-refinement convergence study on the 1D bar")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--levels", type=int, nargs="+")
    p.add_argument("--reference", type=int, help="reference level")
    _common(p)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("mp", help="material-point rate law on the bump strain cycle")
    p.add_argument("--E", type=float, default=1e4)
    p.add_argument("--kappa", type=float, default=80.0)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--peak", type=float, default=0.2, help="peak strain")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--sigma0", type=float, default=0.0)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_mp)

    p = sub.add_parser("mesh", help="write a plate-with-hole mesh file")
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--l", type=float, default=1.0)
    p.add_argument("--a", type=float, default=0.24)
    p.add_argument("--b", type=float, default=0.25)
    p.add_argument("--refinement", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_mesh)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InvalidArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RatePlastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
