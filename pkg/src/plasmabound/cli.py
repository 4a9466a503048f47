"""
Command-line entry point.

Subcommands: ``precompute``, ``reconstruct``, ``synth`` and ``plotdata``,
plus ``machine`` which writes the built-in machine description. Pipeline
settings come from defaults, then an optional ``--config`` JSON file, then
command-line flags.

Scenario file (JSON)::

    {"schema_version": 1,
     "machine": "machine.json",     # relative to the scenario; built-in when absent
     "symmetric": false,            # built-in machine only
     "kind": "xpoint",              # or "limiter"
     "I_p": 6e5, "center": [2.5, 0.0], "a": 0.44, "kappa": 1.55, "delta": 0.3,
     "upper": null, "patch": [0.1, 1.4, 0.25], "n_rings": 3,
     "plasma": true,                # false drops the plasma filaments
     "noise": {"relative": 0.01},   # or {"sigma": [sB, sf, ss]} or null
     "seed": 0, "slices": 1, "dt": 1e-3, "ramp": [1.0, 1.0],
     "reference_grid": 0.005}

Slice ``k`` scales every current by a factor interpolated along ``ramp``
and draws noise with seed ``seed + k``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cache, formats
from .errors import PlasmaBoundError
from .geometry import hausdorff
from .machine import MachineDescription, west_like_machine
from .pipeline import PipelineConfig, Reconstructor, build_bank
from .synth import d_shaped_equilibrium, generate_measurements, reference_boundary, relative_sigmas

log = logging.getLogger("plasmabound")

SCENARIO_DEFAULTS = {
    "schema_version": 1, "machine": None, "symmetric": False, "kind": "xpoint", "I_p": 6e5,
    "center": [2.5, 0.0], "a": 0.44, "kappa": 1.55, "delta": 0.3, "upper": None,
    "patch": [0.1, 1.4, 0.25], "n_rings": 3, "plasma": True, "noise": None, "seed": 0,
    "slices": 1, "dt": 1e-3, "ramp": [1.0, 1.0], "reference_grid": 0.005,
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("pipeline settings (override --config)")
    g.add_argument("--config", type=Path, help="JSON file with pipeline settings")
    g.add_argument("--n-e", type=int, dest="n_e")
    g.add_argument("--n-i", type=int, dest="n_i")
    g.add_argument("--epsilon", type=float)
    g.add_argument("--h", type=float)
    g.add_argument("--radius-fraction", type=float, dest="radius_fraction")
    g.add_argument("--bank-grid", type=int, nargs=2, dest="bank_grid", metavar=("NR", "NZ"))
    g.add_argument("--bank-spacing", type=float, dest="bank_spacing")
    g.add_argument("--bank-center", type=float, nargs=2, dest="bank_center", metavar=("R", "Z"))
    g.add_argument("--sigma-B", type=float, dest="sigma_B")
    g.add_argument("--sigma-f", type=float, dest="sigma_f")
    g.add_argument("--sigma-s", type=float, dest="sigma_s")
    g.add_argument("--single-pass", action="store_const", const=False, dest="two_pass")


def resolve_config(args) -> PipelineConfig:
    """Defaults, then the config file, then flags."""
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), **formats.load_json(args.config)})
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    return cfg.updated(**{k: v for k, v in vars(args).items() if k in names})


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_machine(args):
    west_like_machine(symmetric=args.symmetric).save(args.output)
    log.info("wrote %s", args.output)


def cmd_precompute(args):
    machine = MachineDescription.load(args.machine)
    machine.check_geometry()
    cfg = resolve_config(args)
    bank = build_bank(machine, cfg, workers=args.workers)
    cache.save_bank(args.output, bank, machine.hash)
    log.info("wrote %d bank entries to %s", len(bank), args.output)


def cmd_reconstruct(args):
    machine = MachineDescription.load(args.machine)
    bank = cache.load_bank(args.cache, machine.hash)
    cfg = resolve_config(args)
    if (cfg.h, cfg.epsilon) != (bank.h, bank.epsilon):
        log.warning("using h=%g, epsilon=%g from the cache", bank.h, bank.epsilon)
        cfg = cfg.updated(h=bank.h, epsilon=bank.epsilon)
    rec = Reconstructor(machine, cfg, bank)
    src = sys.stdin if str(args.measurements) == "-" else args.measurements
    slices, bad = [], []
    for k, raw in enumerate(formats.read_jsonl(src)):
        try:
            slices.append(formats.parse_measurement(raw, cfg.sigmas))
        except (KeyError, ValueError, TypeError) as exc:
            bad.append({"schema_version": 1, "seq": raw.get("seq", k), "time": raw.get("time"),
                        "error": {"stage": "input", "type": type(exc).__name__, "message": str(exc)}})
    results = [r.to_record() for r in rec.run_many(slices, workers=args.workers)]
    records = sorted(results + bad, key=lambda r: r["seq"])
    if str(args.output) == "-":
        for r in records:
            sys.stdout.write(json.dumps(r, sort_keys=True) + "\n")
    else:
        formats.write_jsonl(args.output, records)
    n_err = sum("error" in r for r in records)
    log.info("%d slices, %d errors", len(records), n_err)


def scenario_equilibrium(scenario: dict, base: Path | None = None):
    """``(machine, equilibrium, settings)`` for a scenario dictionary."""
    s = {**SCENARIO_DEFAULTS, **scenario}
    if s["schema_version"] != 1:
        raise ValueError(f"unsupported scenario schema version {s['schema_version']!r}")
    if s["machine"]:
        path = Path(s["machine"])
        if base is not None and not path.is_absolute():
            path = base / path
        machine = MachineDescription.load(path)
    else:
        machine = west_like_machine(symmetric=bool(s["symmetric"]))
    eq = d_shaped_equilibrium(machine, s["kind"], float(s["I_p"]), tuple(s["center"]), float(s["a"]),
                              float(s["kappa"]), float(s["delta"]), tuple(s["patch"]), int(s["n_rings"]),
                              int(s["seed"]), None if s["upper"] is None else tuple(s["upper"]))
    if not s["plasma"]:
        eq = dataclasses.replace(eq, plasma_filaments=())
    noise = s["noise"] or {}
    if "relative" in noise:
        eq = eq.with_noise(relative_sigmas(eq, machine.sensors, float(noise["relative"])))
    elif "sigma" in noise:
        eq = eq.with_noise(tuple(float(x) for x in noise["sigma"]))
    return machine, eq, s


def cmd_synth(args):
    scenario = formats.load_json(args.scenario)
    machine, eq, s = scenario_equilibrium(scenario, Path(args.scenario).parent)
    n = int(s["slices"])
    ramp = np.interp(np.arange(n), [0, max(n - 1, 1)], s["ramp"])
    records = []
    for k in range(n):
        eq_k = eq.scaled(float(ramp[k]))
        meas = generate_measurements(eq_k, machine.sensors, seed=int(s["seed"]) + k)
        records.append(formats.measurement_record(k, k * float(s["dt"]), meas, eq_k.coil_currents,
                                                  meas.sigmas))
    formats.write_jsonl(args.measurements, records)
    if args.reference:
        try:
            ref = reference_boundary(eq, machine.limiter, float(s["reference_grid"]))
            out = formats.boundary_record(ref.polyline, ref.psi_p, ref.kind, ref.xpoint, ref.minor_radius)
        except PlasmaBoundError as exc:
            out = {"schema_version": 1, "error": {"stage": exc.stage, "type": type(exc).__name__,
                                                  "message": str(exc)}}
        with open(args.reference, "w") as fh:
            json.dump(out, fh, sort_keys=True)
    if args.machine_out:
        machine.save(args.machine_out)
    log.info("wrote %d measurement records", n)


# -- plot data ---------------------------------------------------------------

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


PLOTDATA_COLUMNS = {
    "boundary": ["r", "z"],
    "cauchy": ["index", "r", "z", "f", "g"],
    "residuals": ["index", "type", "residual"],
    "summary": ["seq", "time", "status", "kind", "psi_p", "r_c", "z_c", "I_p", "J",
                "rms_B", "rms_f", "rms_s", "bank_index", "hausdorff_ref", "total_ms"],
    "comparison": ["seq", "file", "reference_file", "hausdorff"],
}


def cmd_plotdata(args):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    ref = None
    if args.reference:
        ref = formats.read_boundary(args.reference)
    files = {}
    manifest = {"schema_version": 1, "columns": PLOTDATA_COLUMNS, "files": []}
    for path in args.results:
        label = Path(path).stem
        recs = list(formats.read_jsonl(path))
        files[label] = {r["seq"]: r for r in recs}
        summary = []
        for r in recs:
            seq = r["seq"]
            b = r.get("boundary")
            poly = None
            if b is not None:
                poly = np.column_stack([b["r"], b["z"]])
                name = f"boundary_{label}_{seq}.csv"
                _write_csv(out / name, PLOTDATA_COLUMNS["boundary"], poly.tolist())
                manifest["files"].append(name)
            c = r.get("cauchy")
            if c is not None:
                name = f"cauchy_{label}_{seq}.csv"
                _write_csv(out / name, PLOTDATA_COLUMNS["cauchy"],
                           [(i, *v) for i, v in enumerate(zip(c["r"], c["z"], c["f"], c["g"]))])
                manifest["files"].append(name)
            if "fit_residuals" in r:
                types = [t for t, n in zip("Bfs", r.get("sensor_counts", [len(r["fit_residuals"]), 0, 0]))
                         for _ in range(n)]
                name = f"residuals_{label}_{seq}.csv"
                _write_csv(out / name, PLOTDATA_COLUMNS["residuals"],
                           [(i, t, v) for i, (t, v) in enumerate(zip(types, r["fit_residuals"]))])
                manifest["files"].append(name)
            cc = r.get("current_center", {})
            rms = r.get("fit_rms", {})
            hd = None
            if ref is not None and poly is not None:
                hd = hausdorff(poly, ref["polyline"]) / ref["minor_radius"]
            summary.append((seq, r.get("time"), "error" if "error" in r else "ok",
                            b["kind"] if b else None, b["psi_p"] if b else None, cc.get("r_c"), cc.get("z_c"),
                            cc.get("I_p"), r.get("J"), rms.get("B"), rms.get("f"), rms.get("s"),
                            r.get("bank_index"), hd, r.get("timings_ms", {}).get("total")))
        name = f"summary_{label}.csv"
        _write_csv(out / name, PLOTDATA_COLUMNS["summary"], summary)
        manifest["files"].append(name)
    labels = list(files)
    if len(labels) > 1:
        first = labels[0]
        rows = []
        for label in labels[1:]:
            for seq, r in sorted(files[label].items()):
                q = files[first].get(seq)
                if r.get("boundary") and q is not None and q.get("boundary"):
                    a = np.column_stack([r["boundary"]["r"], r["boundary"]["z"]])
                    b = np.column_stack([q["boundary"]["r"], q["boundary"]["z"]])
                    scale = ref["minor_radius"] if ref is not None else 0.5 * np.ptp(b[:, 0])
                    rows.append((seq, label, first, hausdorff(a, b) / scale))
        _write_csv(out / "comparison.csv", PLOTDATA_COLUMNS["comparison"], rows)
        manifest["files"].append("comparison.csv")
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plasmabound", description="Plasma boundary reconstruction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("machine", help="write the built-in machine description")
    q.add_argument("-o", "--output", type=Path, required=True)
    q.add_argument("--symmetric", action="store_true")
    q.set_defaults(func=cmd_machine)

    q = sub.add_parser("precompute", help="build and store the mesh bank")
    q.add_argument("machine", type=Path)
    q.add_argument("-o", "--output", type=Path, required=True)
    q.add_argument("--workers", type=int, default=1)
    _config_flags(q)
    q.set_defaults(func=cmd_precompute)

    q = sub.add_parser("reconstruct", help="reconstruct boundaries from measurement records")
    q.add_argument("machine", type=Path)
    q.add_argument("cache", type=Path)
    q.add_argument("measurements", help="JSON-lines file, or - for stdin")
    q.add_argument("-o", "--output", default="-", help="results file, or - for stdout")
    q.add_argument("--workers", type=int, default=1)
    _config_flags(q)
    q.set_defaults(func=cmd_reconstruct)

    q = sub.add_parser("synth", help="synthesize measurements for a scenario")
    q.add_argument("scenario", type=Path)
    q.add_argument("-m", "--measurements", type=Path, required=True)
    q.add_argument("-r", "--reference", type=Path)
    q.add_argument("--machine-out", type=Path)
    q.set_defaults(func=cmd_synth)

    q = sub.add_parser("plotdata", help="write CSV tables from result files")
    q.add_argument("results", nargs="+", type=Path)
    q.add_argument("-o", "--output", type=Path, required=True)
    q.add_argument("--reference", type=Path)
    q.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (PlasmaBoundError, ValueError, OSError, KeyError) as exc:
        stage = getattr(exc, "stage", "input")
        print(f"error [{stage}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
