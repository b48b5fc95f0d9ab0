"""Command-line pipelines.

Subcommands: validate, estimate-flux, solve-pde, simulate, hydro-verify,
couple-test, verify-outputs.  Exit codes: 0 all checks pass, 1 a criterion
failed, 2 configuration or structural error.  The only flag overrides are
the global seed and the output directory; worker count comes from the
QUENCHFLOW_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import config as cfgmod
from . import hydro, persist
from ._rng import derive_seed
from .engine import (
    Configuration,
    build_runtime,
    checkpoint_trajectory,
    evolve,
    stream_for,
)
from .flux import FluxTable, build_flux_table
from .models import StructureError, lipschitz_bound, sample_environment
from .pde import solve_cauchy

PASS, FAIL, CONFIG_ERROR = 0, 1, 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quenchflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        if name != "verify-outputs":
            p.add_argument("config", help="path to the JSON run configuration")
            p.add_argument("--seed", type=int, default=None, help="override the global seed")
            p.add_argument("--output-dir", default=None, help="override the output directory")
        return p

    add("validate", "check model assumptions and environment bounds")
    add("estimate-flux", "estimate the flux table on the configured density grid")
    p = add("solve-pde", "solve the conservation law for the configured profile")
    p.add_argument("--table", required=True, help="flux table JSON")
    add("simulate", "run a single trajectory and write its final state")
    p = add("hydro-verify", "run scaling experiments against the entropy solution")
    p.add_argument("--table", required=True, help="flux table JSON")
    add("couple-test", "run the coupling property suites")
    p = sub.add_parser("verify-outputs", help="recompute output hashes against the manifest")
    p.add_argument("directory")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except StructureError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return CONFIG_ERROR


def _dispatch(args) -> int:
    if args.command == "verify-outputs":
        return cmd_verify_outputs(Path(args.directory))
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.output_dir is not None:
        cfg["output_dir"] = args.output_dir
    return {
        "validate": cmd_validate,
        "estimate-flux": cmd_estimate_flux,
        "solve-pde": cmd_solve_pde,
        "simulate": cmd_simulate,
        "hydro-verify": cmd_hydro,
        "couple-test": cmd_couple_test,
    }[args.command](cfg, args)


def _outdir(cfg: dict) -> Path:
    out = Path(cfg.get("output_dir", "quenchflow-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot_config(cfg: dict, outdir: Path) -> str:
    chash = cfgmod.config_hash(cfg)
    persist.write_json(outdir / "config_snapshot.json",
                       {"format_version": cfgmod.FORMAT_VERSION, "config_hash": chash, "config": cfg})
    return chash


# ---------------------------------------------------------------------------


def cmd_validate(cfg: dict, args) -> int:
    spec = cfgmod.build_spec(cfg["model"])
    report = spec.validate()
    L = int(cfg.get("validate", {}).get("L", 128))
    field_ = sample_environment(spec, L, seed=derive_seed(cfg["seed"], "validate"))
    if spec.family == "traffic":
        report = report.merged(field_.validate())
        field_ = field_.to_kstep()
    report = report.merged(field_.validate())
    for line in report.lines():
        print(line)
    print(f"lipschitz speed V = {lipschitz_bound(spec):g}")
    return PASS if report.ok else FAIL


def cmd_estimate_flux(cfg: dict, args) -> int:
    t0 = time.monotonic()
    spec = cfgmod.build_spec(cfg["model"])
    fsec = cfg.get("flux", {})
    outdir = _outdir(cfg)
    chash = _snapshot_config(cfg, outdir)
    table = build_flux_table(
        spec,
        fsec.get("grid", [0.0, 0.5 * spec.K, float(spec.K)]),
        L=int(fsec.get("L", 1000)),
        burn_in=float(fsec.get("burn_in", fsec.get("L", 1000) ** 2 / spec.rate_per_site)),
        horizon=float(fsec.get("horizon", 1000.0)),
        seeds_per_point=int(fsec.get("seeds_per_point", 2)),
        master_seed=derive_seed(cfg["seed"], "flux"),
        batches=int(fsec.get("batches", 20)),
    )
    table.meta["config_hash"] = chash
    table.save(outdir / "flux_table.json")
    table.to_csv(outdir / "flux_table.csv")
    persist.write_manifest(outdir, chash, cfg["seed"])
    persist.write_json(outdir / "run_log.json", {"wall_seconds": time.monotonic() - t0})
    print(f"flux table written to {outdir / 'flux_table.json'}")
    return PASS


def _load_table_checked(path: str, cfg: dict) -> FluxTable:
    table = FluxTable.load(path)
    spec = cfgmod.build_spec(cfg["model"])
    expected = persist.canonical_hash(spec.descriptor())
    got = table.meta.get("model_hash")
    if got != expected:
        raise StructureError(
            f"flux table model hash {got} does not match the configured model {expected}"
        )
    return table


def cmd_solve_pde(cfg: dict, args) -> int:
    table = _load_table_checked(args.table, cfg)
    hsec = cfg.get("hydro", {})
    psec = cfg.get("pde", {})
    u0 = cfgmod.parse_profile(hsec.get("profile", {"kind": "riemann", "lam": 0.0, "rho": 1.0}))
    t = float(hsec.get("t", 1.0))
    sol = solve_cauchy(table, u0, t, dx=float(psec.get("dx", 0.002)),
                       cfl=float(psec.get("cfl", 0.45)))
    outdir = _outdir(cfg)
    chash = _snapshot_config(cfg, outdir)
    persist.write_csv(outdir / "pde_solution.csv", ["x", "value"],
                      zip(sol.centers().tolist(), sol.values.tolist()))
    persist.write_manifest(outdir, chash, cfg["seed"])
    print(f"solution at t={t} written to {outdir / 'pde_solution.csv'}")
    return PASS


def cmd_simulate(cfg: dict, args) -> int:
    spec = cfgmod.build_spec(cfg["model"])
    sim = cfg.get("sim", {})
    L = int(sim.get("L", 200))
    geometry = sim.get("geometry", "ring")
    horizon = float(sim.get("horizon", 100.0))
    density = float(sim.get("density", 0.5))
    seed = cfg["seed"]

    field_ = sample_environment(spec, L, seed=derive_seed(seed, "sim-env"))
    runtime = build_runtime(spec, field_)
    config = Configuration.with_particle_count(L, spec.K, int(density * L),
                                               seed=derive_seed(seed, "sim-init"),
                                               geometry=geometry)
    stream = stream_for(runtime, config, seed=derive_seed(seed, "sim-stream"))
    trace = [] if sim.get("trace_events") else None
    final = evolve(runtime, config, horizon, stream, trace=trace)

    outdir = _outdir(cfg)
    chash = _snapshot_config(cfg, outdir)
    persist.write_csv(outdir / "final_state.csv", ["coord", "occupancy"],
                      zip(final.coords().tolist(), final.occ.tolist()))
    persist.write_json(outdir / "checkpoint.json", checkpoint_trajectory(final, stream, horizon))
    if trace is not None:
        persist.write_csv(outdir / "events.csv", ["t", "site", "mark", "accepted"], trace)
    persist.write_manifest(outdir, chash, seed)
    print(f"trajectory written to {outdir}")
    return PASS


def cmd_hydro(cfg: dict, args) -> int:
    t0 = time.monotonic()
    table = _load_table_checked(args.table, cfg)
    spec = cfgmod.build_spec(cfg["model"])
    hsec = cfg.get("hydro", {})
    psec = cfg.get("pde", {})
    th = cfgmod.thresholds(cfg)
    outdir = _outdir(cfg)
    chash = _snapshot_config(cfg, outdir)
    seed = cfg["seed"]
    criteria = {}

    if "profile" in hsec:
        exp = hydro.ScalingExperiment(
            spec=spec,
            table=table,
            u0=cfgmod.parse_profile(hsec["profile"]),
            scales=hsec.get("scales", [100, 300]),
            t=float(hsec.get("t", 1.0)),
            seeds_per_scale=int(hsec.get("seeds_per_scale", 1)),
            master_seed=derive_seed(seed, "hydro"),
            time_points=int(hsec.get("time_points", 10)),
            margin=float(psec.get("margin", 0.5)),
            dx=float(psec.get("dx", 0.002)),
            cfl=float(psec.get("cfl", 0.45)),
        )
        rep = hydro.run_hydro_experiment(exp)
        persist.write_json(outdir / "hydro_report.json", rep)
        persist.write_csv(outdir / "hydro_delta.csv", ["N", "seed", "time", "delta"],
                          [(s["N"], e["seed"], t_, d)
                           for s in rep["scales"] for e in s["seeds"] for t_, d in e["delta_trace"]])
        finals = [s["mean_final"] for s in rep["scales"]]
        bound = th["hydro_delta_fraction"] * rep["total_mass"]
        criteria["hydro_delta_final"] = {
            "passed": finals[-1] < bound,
            "value": finals[-1],
            "bound": bound,
        }
        criteria["hydro_delta_decreasing"] = {
            "passed": all(a > b for a, b in zip(finals[:-1], finals[1:])),
            "value": finals,
        }

    if "riemann_current" in hsec:
        rc = hsec["riemann_current"]
        rep = hydro.run_riemann_current(
            spec, table, float(rc["lam"]), float(rc["rho"]),
            rc.get("velocities", [0.0]), rc.get("scales", [100, 300]),
            float(rc.get("t", 0.25)), int(rc.get("seeds_per_scale", 5)),
            derive_seed(seed, "riemann"), margin=float(psec.get("margin", 0.5)),
            eq_burn=float(rc.get("eq_burn", 150.0)),
        )
        persist.write_json(outdir / "riemann_current_report.json", rep)
        persist.write_csv(
            outdir / "riemann_current.csv", ["N", "velocity", "mean_ratio", "target"],
            [(s["N"], v, s["mean_ratios"][str(v)], rep["targets"][str(v)])
             for s in rep["scales"] for v in rep["velocities"]])
        errs = [max(abs(s["mean_ratios"][str(v)] - rep["targets"][str(v)])
                    for v in rep["velocities"]) for s in rep["scales"]]
        criteria["current_lln_final"] = {
            "passed": errs[-1] < th["current_tolerance"],
            "value": errs[-1],
            "bound": th["current_tolerance"],
        }
        criteria["current_lln_decreasing"] = {
            "passed": all(a > b for a, b in zip(errs[:-1], errs[1:])),
            "value": errs,
        }

    summary = {
        "format_version": cfgmod.FORMAT_VERSION,
        "config_hash": chash,
        "seed": seed,
        "flux_table": {"model_hash": table.meta.get("model_hash"),
                       "lipschitz_speed": table.meta.get("lipschitz_speed")},
        "criteria": criteria,
        "passed": all(c["passed"] for c in criteria.values()),
    }
    persist.write_json(outdir / "summary.json", summary)
    persist.write_manifest(outdir, chash, seed)
    persist.write_json(outdir / "run_log.json", {"wall_seconds": time.monotonic() - t0})
    for name, c in criteria.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}  value={c['value']}")
    return PASS if summary["passed"] else FAIL


def cmd_couple_test(cfg: dict, args) -> int:
    spec = cfgmod.build_spec(cfg["model"])
    csec = cfg.get("couple", {})
    th = cfgmod.thresholds(cfg)
    seed = cfg["seed"]
    outdir = _outdir(cfg)
    chash = _snapshot_config(cfg, outdir)
    criteria = {}

    ordering = hydro.run_ordering_suite(
        spec, int(csec.get("ordering_trials", 100)), int(csec.get("L", 100)),
        float(csec.get("events_per_site", 200.0)), derive_seed(seed, "ordering"))
    criteria["order_preservation"] = {
        "passed": ordering["passed"],
        "value": len(ordering["violations"]),
    }

    disc = hydro.run_discrepancy_suite(
        spec, int(csec.get("discrepancy_trials", 50)), int(csec.get("L", 100)),
        float(csec.get("discrepancy_horizon", 1000.0)), derive_seed(seed, "discrepancy"))
    criteria["discrepancy_decay"] = {
        "passed": disc["final_over_initial"] < th["discrepancy_ratio"],
        "value": disc["final_over_initial"],
        "bound": th["discrepancy_ratio"],
    }

    stab = hydro.run_stability_suite(
        spec, int(csec.get("stability_pairs", 20)), int(csec.get("L", 100)),
        float(csec.get("stability_horizon", 500.0)), derive_seed(seed, "stability"),
        slack_fraction=th["stability_slack"])
    criteria["macroscopic_stability"] = {
        "passed": stab["fraction_stable"] >= th["stability_fraction"],
        "value": stab["fraction_stable"],
        "bound": th["stability_fraction"],
    }

    summary = {
        "format_version": cfgmod.FORMAT_VERSION,
        "config_hash": chash,
        "seed": seed,
        "criteria": criteria,
        "passed": all(c["passed"] for c in criteria.values()),
        "reports": {"ordering": {k: v for k, v in ordering.items() if k != "violations"},
                    "discrepancy": {k: v for k, v in disc.items() if k != "mean_pairs"},
                    "stability": {"fraction_stable": stab["fraction_stable"]}},
    }
    persist.write_json(outdir / "couple_summary.json", summary)
    persist.write_manifest(outdir, chash, seed)
    for name, c in criteria.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}  value={c['value']}")
    return PASS if summary["passed"] else FAIL


def cmd_verify_outputs(directory: Path) -> int:
    problems = persist.verify_manifest(directory)
    if problems:
        for p in problems:
            print(f"FAIL  {p}")
        return FAIL
    print("PASS  all output hashes match the manifest")
    return PASS


if __name__ == "__main__":
    sys.exit(main())
