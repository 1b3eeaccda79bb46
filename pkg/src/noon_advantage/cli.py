"""Command-line pipeline: calibrate -> simulate -> fit -> advantage / scenario."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import re
import sys
import tempfile
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .calibration import (
    LossBudget,
    build_loss_budget,
    consistency_audit,
    read_calibration_csv,
    reference_budget,
)
from .errors import ConsistencyError, DomainError, FitError
from .fisher import (
    Pairing,
    Scenario,
    advantage_report,
    fisher_curve,
    scenario_budget,
)
from .fitting import FitResult, confidence_band, fi_band_from_fit, fit_fringes
from .interferometer import (
    NoonProbe,
    coincidence_distribution,
    single_photon_distribution,
    visibility_from_relative_loss,
)
from .simulator import ScanConfig, read_scan_csv, simulate_fringe_scan, write_scan_csv

OUT_ENV = "NOON_ADVANTAGE_OUT"
DEFAULT_ARM_BALANCE = 0.88
CSV_FMT = "{:.12g}"

_num = {"type": "number"}
_four = {"type": "array", "items": _num, "minItems": 4, "maxItems": 4}
_range = {
    "type": "object",
    "properties": {"start": _num, "stop": _num, "points": {"type": "integer", "minimum": 1},
                   "a": _num, "b": _num, "endpoint": {"type": "boolean"}},
    "required": ["start", "stop", "points"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "file": {"type": "string"},
                "budget": {"type": "string"},
                "eta": _four,
                "reported_db": _four,
            },
        },
        "probe": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_photons": {"type": "integer", "minimum": 1},
                "arm_balance": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "v1": {"type": "number", "minimum": 0, "maximum": 1},
                "v2": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["two_photon", "single_photon"]},
                "phases": _range,
                "voltages": {**_range, "required": ["start", "stop", "points", "a", "b"]},
                "pair_rate": {"type": "number", "exclusiveMinimum": 0},
                "dwell_time": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "accidental_rate": {"type": "number", "minimum": 0},
                "multi_pair_rate": {"type": "number", "minimum": 0},
                "file": {"type": "string"},
            },
        },
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "harmonic": {"enum": [1, 2]},
                "k": {"type": "number", "exclusiveMinimum": 0},
                "shared_visibility": {"type": "boolean"},
                "shared_phase": {"type": "boolean"},
                "band_points": {"type": "integer", "minimum": 2},
                "file": {"type": "string"},
            },
        },
        "fisher": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "normalization": {"enum": ["raw", "per_photon"]},
                "pairing": {"enum": [p.value for p in Pairing]},
                "include_no_click": {"type": "boolean"},
                "grid_points": {"type": "integer", "minimum": 2},
            },
        },
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": [s.value for s in Scenario]},
                "wdm_loss_db": {"oneOf": [_num, _four]},
            },
        },
        "output": {"type": "string"},
    },
}


class CliError(Exception):
    """Invalid input; reported without a traceback."""


class _ConfigLoader(yaml.SafeLoader):
    """SafeLoader that also reads floats such as ``1e5`` and ``1.0e5`` (YAML 1.2 style)."""


_ConfigLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?(?:[eE][-+]?[0-9]+)$"),
    list("-+0123456789"),
)


def load_config(path):
    if path is None:
        return {}, None
    path = Path(path)
    with open(path) as fh:
        data = yaml.load(fh, Loader=_ConfigLoader) or {}
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CliError(f"{path}: config invalid at {where}: {exc.message}") from exc
    return data, path.parent


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() or base is None else base / p


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj):
    write_atomic(path, json.dumps(_clean(obj), indent=2, sort_keys=False) + "\n")


def write_table(path: Path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(CSV_FMT.format(x) if isinstance(x, (float, np.floating)) else str(x)
                              for x in row))
    write_atomic(path, "\n".join(lines) + "\n")


def _out_dir(args, cfg, base):
    if args.out:
        return Path(args.out)
    if "output" in cfg:
        return _resolve(base, cfg["output"])
    return Path(os.environ.get(OUT_ENV, "."))


def _provenance(cfg, args):
    # the output location does not change results, so it stays out of the digest
    params = {k: v for k, v in vars(args).items() if k != "out"}
    return {"tool_version": __version__,
            "config_digest": _digest({"config": cfg, "args": params})}


def _budget(cfg, base, override=None) -> LossBudget:
    cal = cfg.get("calibration", {})
    if override:
        with open(override) as fh:
            return LossBudget.from_dict(json.load(fh))
    if "budget" in cal:
        with open(_resolve(base, cal["budget"])) as fh:
            return LossBudget.from_dict(json.load(fh))
    if "eta" in cal:
        return LossBudget(eta=cal["eta"], db=cal.get("reported_db"), source="measured")
    if "file" in cal:
        return build_loss_budget(read_calibration_csv(_resolve(base, cal["file"])), cal.get("reported_db"))
    return reference_budget()


def _visibilities(cfg, v1=None, v2=None):
    probe = cfg.get("probe", {})
    eta_t = probe.get("arm_balance", DEFAULT_ARM_BALANCE)
    if v1 is None:
        v1 = probe.get("v1", visibility_from_relative_loss(eta_t, 1).value)
    if v2 is None:
        v2 = probe.get("v2", visibility_from_relative_loss(eta_t, 2).value)
    return float(v1), float(v2)


def _grid(spec, period, default_points=100):
    if spec is None:
        return np.linspace(0.0, period, default_points, endpoint=False)
    return np.linspace(spec["start"], spec["stop"], spec["points"], endpoint=spec.get("endpoint", False))


# ----------------------------------------------------------------- commands

def cmd_calibrate(args, cfg, base):
    cal = cfg.get("calibration", {})
    src = args.input or (cal.get("file") and _resolve(base, cal["file"]))
    if not src:
        raise CliError("calibrate needs --input or calibration.file")
    reported = args.reported_db or cal.get("reported_db")
    records = read_calibration_csv(src)
    budget = build_loss_budget(records, reported_db=reported)
    findings = consistency_audit(budget)
    data = budget.to_dict()
    data["warnings"] = list(budget.warnings) + [f"db_inconsistent: {f}" for f in findings]
    data["audit"] = [vars(f) for f in findings]
    if reported is None:
        data["audit_note"] = "dB derived from the measured transmissions; nothing to audit"
    data["provenance"] = _provenance(cfg, args)
    out = _out_dir(args, cfg, base) / "budget.json"
    write_json(out, data)
    print(f"wrote {out} ({len(findings)} audit finding(s))")
    return 0


def _scan_config(cfg, base, seed=None) -> ScanConfig:
    sc = cfg.get("scan", {})
    probe = cfg.get("probe", {})
    single = sc.get("kind", "two_photon") == "single_photon"
    budget = _budget(cfg, base)
    vis_key = "v1" if single else "v2"
    voltage_map = None
    if "voltages" in sc:
        v = sc["voltages"]
        control = _grid(v, None)
        voltage_map = (v["a"], v["b"])
    else:
        control = _grid(sc.get("phases"), 2 * math.pi if single else math.pi)
    return ScanConfig(
        budget=budget,
        control=control,
        probe=NoonProbe(2, probe.get("arm_balance", DEFAULT_ARM_BALANCE)),
        single_photon=single,
        visibility=probe.get(vis_key),
        pair_rate=sc.get("pair_rate", 1e5),
        dwell_time=sc.get("dwell_time", 1.0),
        voltage_map=voltage_map,
        rng_seed=seed if seed is not None else sc.get("seed", 0),
        accidental_rate=sc.get("accidental_rate", 0.0),
        multi_pair_rate=sc.get("multi_pair_rate", 0.0),
    )


def cmd_simulate(args, cfg, base):
    config = _scan_config(cfg, base, args.seed)
    scan = simulate_fringe_scan(config)
    out = _out_dir(args, cfg, base)
    out.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out, suffix=".tmp")
    os.close(fd)
    try:
        write_scan_csv(scan, tmp, CSV_FMT)
        os.replace(tmp, out / "scan.csv")
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    sidecar = {
        "seed": int(config.rng_seed),
        "config_digest": config.digest(),
        "labels": list(scan.labels),
        "voltage_map": config.voltage_map,
        "visibility": config.resolved_visibility(),
        "provenance": _provenance(cfg, args),
    }
    write_json(out / "scan.json", sidecar)
    print(f"wrote {out / 'scan.csv'} ({len(config.control)} points x {len(scan.labels)} labels)")
    return 0


def cmd_fit(args, cfg, base):
    fc = cfg.get("fit", {})
    src = args.scan or (cfg.get("scan", {}).get("file") and _resolve(base, cfg["scan"]["file"]))
    if not src:
        raise CliError("fit needs --scan or scan.file")
    scan = read_scan_csv(src)
    m = args.harmonic or fc.get("harmonic")
    if m is None:
        m = 1 if set(scan.labels) <= {"P10", "P01"} else 2
    phase_map = None
    if scan.phi is None and "voltages" in cfg.get("scan", {}):
        v = cfg["scan"]["voltages"]
        phase_map = (v["a"], v["b"])
    fit = fit_fringes(scan, m, shared_visibility=fc.get("shared_visibility", False),
                      shared_phase=fc.get("shared_phase", False), phase_map=phase_map)
    k = fc.get("k", 3.0)
    out = _out_dir(args, cfg, base)
    data = fit.to_dict()
    data["k"] = k
    data["provenance"] = _provenance(cfg, args)
    write_json(out / "fit.json", data)
    grid = np.linspace(0.0, 2 * math.pi / m, fc.get("band_points", 400), endpoint=False)
    for label, band in confidence_band(fit, k, grid).items():
        write_table(out / f"band_{label}.csv", ("phi_rad", "central", "lower", "upper"),
                    zip(band.phi, band.central, band.lower, band.upper))
    print(f"wrote {out / 'fit.json'}: pooled V = {fit.pooled_visibility:.6f} +- {fit.pooled_sigma:.6f}")
    return 0


def _load_fit(path) -> FitResult:
    with open(path) as fh:
        return FitResult.from_dict(json.load(fh))


def cmd_advantage(args, cfg, base):
    fisher_cfg = cfg.get("fisher", {})
    budget = _budget(cfg, base, args.budget)
    fit = None
    fit_path = args.fit or (cfg.get("fit", {}).get("file") and _resolve(base, cfg["fit"]["file"]))
    v2_override = args.v2
    if fit_path:
        fit = _load_fit(fit_path)
        if fit.harmonic != 2:
            raise CliError(f"fit has harmonic {fit.harmonic}; the two-photon visibility needs harmonic 2")
        if v2_override is None:
            v2_override = fit.pooled_visibility
    v1, v2 = _visibilities(cfg, args.v1, v2_override)
    pairing = fisher_cfg.get("pairing", Pairing.PORT.value)
    tol = fisher_cfg.get("tol", 1e-10)
    report = advantage_report(budget, v1, v2, pairing=pairing, tol=tol,
                              include_no_click=fisher_cfg.get("include_no_click", False))
    notes = list(report.warnings) + [f"budget: {w}" for w in budget.warnings]
    notes += [f"db_inconsistent: {f}" for f in consistency_audit(budget)]
    data = report.to_dict()
    data["warnings"] = notes
    data["provenance"] = _provenance(cfg, args)

    out = _out_dir(args, cfg, base)
    n = fisher_cfg.get("grid_points", 1000)
    grid = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    two = coincidence_distribution(budget, v2)
    one = single_photon_distribution(budget, v1)
    f2 = fisher_curve(two, grid).values
    f1 = fisher_curve(one, grid, include_complement=fisher_cfg.get("include_no_click", False)).values
    write_table(out / "fi_curves.csv",
                ("phi_rad", "f1_raw", "f1_per_photon", "f2_raw", "f2_per_photon"),
                zip(grid, f1, f1, f2, f2 / 2.0))
    if fit is not None:
        k = cfg.get("fit", {}).get("k", 3.0)
        band = fi_band_from_fit(fit, budget, k, grid=grid[grid < math.pi],
                                normalization=fisher_cfg.get("normalization", "raw"))
        write_table(out / "fi_band.csv", ("phi_rad", "central", "lower", "upper"),
                    zip(band.central.phi_grid, band.central.values, band.lower, band.upper))
        data["fi_band"] = {
            "k": k,
            "visibilities": list(band.visibilities),
            "max": {key: {"phi": p, "value": v} for key, (p, v) in band.maxima.items()},
        }
        data["warnings"] += [f"fi_band: {w}" for w in band.warnings]
    write_json(out / "advantage.json", data)
    print(f"wrote {out / 'advantage.json'}: R = {report.ratio_R:.6f} "
          f"(closed form {report.ratio_R_closed_form[Pairing.PORT.value]:.6f})")
    return 0


def cmd_scenario(args, cfg, base):
    sc = cfg.get("scenario", {})
    budget = _budget(cfg, base, args.budget)
    v1, v2 = _visibilities(cfg, args.v1, args.v2)
    if args.pnrd_db is not None:
        kind, loss = Scenario.PNRD, args.pnrd_db
    elif args.no_relative_loss:
        kind, loss = Scenario.NO_RELATIVE_LOSS, 0.0
    else:
        kind, loss = Scenario(sc.get("kind", "none")), sc.get("wdm_loss_db", 0.0)
    tol = cfg.get("fisher", {}).get("tol", 1e-10)
    new_budget, nv1, nv2 = scenario_budget(budget, v1, v2, kind, loss)
    numeric = advantage_report(new_budget, nv1, nv2, tol=tol, label=kind.value)
    data = numeric.to_dict()
    data["scenario"] = {"kind": kind.value, "wdm_loss_db": loss, "eta": list(new_budget.eta),
                        "V1": nv1, "V2": nv2}
    data["provenance"] = _provenance(cfg, args)
    out = _out_dir(args, cfg, base) / "scenario.json"
    write_json(out, data)
    print(f"wrote {out}: closed-form R = {numeric.ratio_R_closed_form[Pairing.PORT.value]:.6f}, "
          f"numeric R = {numeric.ratio_R:.6f}")
    return 0


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "advantage": cmd_advantage,
    "scenario": cmd_scenario,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="noon-advantage", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML pipeline configuration")
        p.add_argument("--seed", type=int, help="RNG seed (overrides scan.seed)")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or .)")
        return p

    p = common(sub.add_parser("calibrate", help="build a loss budget from calibration records"))
    p.add_argument("--input", help="calibration CSV")
    p.add_argument("--reported-db", type=float, nargs=4, metavar="DB",
                   help="independently quoted per-line losses to audit against")
    common(sub.add_parser("simulate", help="simulate a Poisson fringe scan"))
    p = common(sub.add_parser("fit", help="fit fringes of a scan CSV"))
    p.add_argument("--scan", help="scan CSV")
    p.add_argument("--harmonic", type=int, choices=(1, 2))
    for name, text in (("advantage", "Fisher-information advantage report"),
                       ("scenario", "advantage under an improvement scenario")):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--budget", help="budget JSON from 'calibrate'")
        p.add_argument("--v1", type=float)
        p.add_argument("--v2", type=float)
        if name == "advantage":
            p.add_argument("--fit", help="fit JSON from 'fit' (supplies V2)")
        else:
            p.add_argument("--no-relative-loss", action="store_true")
            p.add_argument("--pnrd-db", type=float, help="per-line filter loss removed (dB)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg, base = load_config(args.config)
        return COMMANDS[args.command](args, cfg, base)
    except (CliError, DomainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FitError, ConsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
