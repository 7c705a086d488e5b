"""Command-line front end: ``dllo-sat {gamma,noise,keyrate,run}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Data goes to standard output when ``--out`` is omitted; progress and
diagnostics go to standard error.
"""

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, coherence, keyrate, noise, optics, params, turbulence

SCHEMA_VERSION = 1
SCENARIO_DIR_ENV = "DLLO_SAT_SCENARIO_DIR"

GAMMA_COLUMNS = ["iteration", "gamma_no_ao", "gamma_ao"]

# config field -> flag that sets it, so validation messages name the flag
_FLAG_OF = {
    "zeta": "--zenith",
    "iterations": "--iterations",
    "seed": "--seed",
    "grid_size": "--grid",
    "workers": "--threads",
}


class UsageError(Exception):
    """Bad flag value; reported with exit code 2."""


def _fail_usage(flag, msg):
    raise UsageError(f"{flag}: {msg}")


# ---------------------------------------------------------------- config

def _resolve_scenario_path(arg):
    if arg is None:
        d = os.environ.get(SCENARIO_DIR_ENV)
        if d:
            p = Path(d) / "default.yaml"
            if p.is_file():
                return p
        return None
    p = Path(arg)
    if p.is_file():
        return p
    d = os.environ.get(SCENARIO_DIR_ENV)
    if d and os.sep not in arg:
        for name in (arg, arg + ".yaml", arg + ".yml"):
            q = Path(d) / name
            if q.is_file():
                return q
    _fail_usage("--scenario", f"no such scenario file: {arg}")


def _configs(args, **flag_values):
    """Scenario triple from --scenario, --set and dedicated flags."""
    path = _resolve_scenario_path(getattr(args, "scenario", None))
    try:
        if path is None:
            cfg = (params.Scenario(), params.FiniteSizeParams(), params.SimulationControl())
        else:
            cfg = params.load_scenario_file(path)
    except params.ConfigError as exc:
        raise UsageError(f"--scenario {path}: {exc}") from None
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            _fail_usage("--set", f"expected section.key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    for dotted, value in flag_values.items():
        if value is not None:
            overrides[dotted] = value
    try:
        return params.apply_overrides(cfg, overrides)
    except params.ConfigError as exc:
        name = exc.field.rpartition(".")[2]
        flag = _FLAG_OF.get(name, "--set " + exc.field)
        raise UsageError(f"{flag}: {exc}") from None


def _check_ao_grid(cfg, with_ao):
    scenario, _, ctrl = cfg
    if with_ao and ctrl.n_max > 0:
        extent = ctrl.grid_extent if ctrl.grid_extent is not None else 8 * scenario.D_R
        across = scenario.D_R / (extent / ctrl.grid_size)
        if across < 32:
            _fail_usage("--grid", f"aperture spans {across:g} pixels, adaptive optics needs >= 32 "
                        "(raise the grid size or use --no-ao)")


def _check_gamma(value, flag="--gamma"):
    if not (isinstance(value, float) and math.isfinite(value) and 0 < value <= 1):
        _fail_usage(flag, f"gamma must lie in (0, 1], got {value}")
    return value


def parse_loss_range(text):
    """``START:STOP:STEP`` (dB, STOP inclusive) -> array of losses."""
    parts = text.split(":")
    if len(parts) != 3:
        _fail_usage("--loss-db", f"expected START:STOP:STEP, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        _fail_usage("--loss-db", f"non-numeric range {text!r}")
    if not all(math.isfinite(v) for v in (start, stop, step)):
        _fail_usage("--loss-db", "range must be finite")
    if start < 0:
        _fail_usage("--loss-db", "START must be >= 0")
    if stop < start:
        _fail_usage("--loss-db", "STOP must be >= START")
    if step <= 0:
        _fail_usage("--loss-db", "STEP must be > 0")
    n = int(math.floor((stop - start) / step + 1e-9))
    # rounding keeps grid values free of binary noise (0.30000000000000004)
    return np.round(start + step * np.arange(n + 1), 10)


# ---------------------------------------------------------------- output

class Outputs:
    """Collects written files so a failed run can remove them."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir) if out_dir else None
        self.files = []
        self._created_dir = False

    def open_dir(self):
        if self.dir is not None and not self.dir.exists():
            self.dir.mkdir(parents=True)
            self._created_dir = True

    def write(self, name, text):
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        # newline="" keeps "\n" on every platform, so bytes are reproducible
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.files.append(path)
        return path

    def write_bytes_via(self, name, writer):
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
        self.files.append(path)
        return path

    def cleanup(self):
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        if self.dir is not None and self.dir.exists():
            for sub in sorted(self.dir.rglob("*"), reverse=True):
                if sub.is_dir() and not any(sub.iterdir()):
                    sub.rmdir()
            if self._created_dir and not any(self.dir.iterdir()):
                self.dir.rmdir()
        self.files = []


def _snapshot(cfg):
    # the worker count stays out of data files: results do not depend on it
    scenario, fsp, ctrl = cfg
    return params.dump_scenario(scenario, fsp, dataclasses.replace(ctrl, workers=1))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_manifest(outs, command, argv, cfg, seed, columns, started):
    scenario, fsp, ctrl = cfg
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool": "dllo-sat",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "scenario": params.as_dict(scenario, fsp, ctrl),
        "fingerprint": params.fingerprint(scenario, fsp, ctrl),
        "seed": seed,
        "outputs": [
            {"path": str(p.relative_to(outs.dir)), "sha256": _sha256(p)} for p in outs.files
        ],
        "csv_columns": columns,
        "wall_clock_s": time.monotonic() - started,
    }
    return outs.write("manifest.json", _json(manifest))


class Progress:
    def __init__(self, label, quiet=False):
        self.label = label
        self.quiet = quiet
        self.last = -1

    def __call__(self, done, total):
        if self.quiet:
            return
        pct = int(100 * done / total)
        if pct // 5 != self.last // 5 or done == total:
            self.last = pct
            print(f"{self.label}: {done}/{total} ({pct}%)", file=sys.stderr, flush=True)


# ---------------------------------------------------------------- stages

def _gamma_stage(cfg, with_ao, workers, quiet):
    scenario, _, ctrl = cfg
    no_ao, yes_ao = coherence.run_gamma_pair(
        scenario, ctrl, workers=workers, progress=Progress("gamma", quiet))
    return no_ao, (yes_ao if with_ao else None)


def _stats_dict(st):
    return {"mean": st.mean, "std": st.std, "stderr": st.stderr, "count": st.count}


def gamma_summary(cfg, no_ao, yes_ao):
    scenario, _, ctrl = cfg
    out = {
        "zeta_deg": scenario.zeta,
        "seed": ctrl.seed,
        "iterations": ctrl.iterations,
        "grid_size": ctrl.grid_size,
        "n_max": ctrl.n_max if yes_ao is not None else 0,
        "variant": ctrl.gamma_variant,
        "gamma_no_ao": _stats_dict(no_ao),
    }
    if yes_ao is not None:
        out["gamma_ao"] = _stats_dict(yes_ao)
    return out


def _dump_fields(outs, cfg):
    """Binary grids of iteration 0: screens, received and corrected fields, LO."""
    scenario, _, ctrl = cfg
    link = coherence.build_downlink(scenario, ctrl)
    for s, (lo, hi, _, r0) in enumerate(link.slabs):
        scr = turbulence.generate_screen(ctrl, r0, s, 0, link.delta, lo, hi)
        outs.write_bytes_via(f"fields/screen_{s:02d}.grid",
                             lambda p, scr=scr: turbulence.write_grid(p, scr.phase, scr.delta, scr.r0_slab))
    rx, _ = optics.apply_aperture(coherence.propagate(link, 0), scenario.D_R)
    outs.write_bytes_via("fields/received.grid", lambda p: turbulence.write_grid(p, rx.E, rx.delta))
    outs.write_bytes_via("fields/lo.grid", lambda p: turbulence.write_grid(p, link.lo.E, link.delta))
    if link.basis is not None:
        from . import ao

        fixed = ao.correct(rx, link.basis, reference=link.lo)
        outs.write_bytes_via("fields/corrected.grid",
                             lambda p: turbulence.write_grid(p, fixed.E, fixed.delta))


def _gamma_flags(args):
    return {
        "simulation.iterations": args.iterations,
        "simulation.seed": args.seed,
        "scenario.zeta": args.zenith,
        "simulation.grid_size": args.grid,
        "simulation.workers": args.threads,
    }


def _pick_gamma(summary, which, flag):
    key = {"ao": "gamma_ao", "no-ao": "gamma_no_ao"}[which]
    if key not in summary:
        if which == "ao" and "gamma_no_ao" in summary:
            key = "gamma_no_ao"
        else:
            _fail_usage(flag, f"summary has no {key!r} entry")
    return _check_gamma(float(summary[key]["mean"]), flag)


# ---------------------------------------------------------------- commands

def cmd_gamma(args, argv):
    cfg = _configs(args, **_gamma_flags(args))
    _check_ao_grid(cfg, args.ao)
    if args.debug_fields and not args.out:
        _fail_usage("--debug-fields", "needs --out")
    if not args.ao:
        cfg = (cfg[0], cfg[1], params.apply_overrides(cfg, {"simulation.n_max": 0})[2])
    started = time.monotonic()
    outs = Outputs(args.out)
    no_ao, yes_ao = _gamma_stage(cfg, args.ao, cfg[2].workers, args.quiet)
    csv_text = coherence.campaign_csv(no_ao, yes_ao)
    summary = gamma_summary(cfg, no_ao, yes_ao)
    if outs.dir is None:
        sys.stdout.write(csv_text)
        return 0
    outs.open_dir()
    try:
        outs.write("gamma.csv", csv_text)
        outs.write("gamma.json", _json(summary))
        outs.write("scenario.yaml", _snapshot(cfg))
        if args.debug_fields:
            _dump_fields(outs, cfg)
        cols = {"gamma.csv": GAMMA_COLUMNS if yes_ao is not None else GAMMA_COLUMNS[:2]}
        write_manifest(outs, "gamma", argv, cfg, cfg[2].seed, cols, started)
    except BaseException:
        outs.cleanup()
        raise
    return 0


def _keyrate_gamma(args):
    if args.gamma is not None:
        return _check_gamma(args.gamma)
    try:
        summary = json.loads(Path(args.gamma_from).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        _fail_usage("--gamma-from", f"cannot read summary: {exc}")
    return _pick_gamma(summary, args.gamma_key, "--gamma-from")


def keyrate_summary(cfg, gamma, results):
    scenario, fsp, ctrl = cfg
    k15 = [r.K for r in results if abs(r.loss_db - 15.0) < 1e-9]
    return {
        "gamma": gamma,
        "xi_ch_source": scenario.xi_ch_source,
        "zero_crossing_db": keyrate.zero_crossing(results),
        "K_at_15db": k15[0] if k15 else None,
        "points": len(results),
        "loss_db_range": [results[0].loss_db, results[-1].loss_db],
        "fingerprint": params.fingerprint(scenario, fsp, ctrl),
    }


def cmd_keyrate(args, argv):
    gamma = _keyrate_gamma(args)
    loss = parse_loss_range(args.loss_db)
    cfg = _configs(args)
    started = time.monotonic()
    scenario, fsp, _ = cfg
    results = keyrate.sweep_loss(scenario, gamma, fsp, loss)
    text = keyrate.results_csv(results)
    if not args.out:
        sys.stdout.write(text)
        return 0
    outs = Outputs(args.out)
    outs.open_dir()
    try:
        outs.write("keyrate.csv", text)
        outs.write("keyrate.json", _json(keyrate_summary(cfg, gamma, results)))
        outs.write("scenario.yaml", _snapshot(cfg))
        write_manifest(outs, "keyrate", argv, cfg, cfg[2].seed,
                       {"keyrate.csv": list(keyrate.CSV_COLUMNS)}, started)
    except BaseException:
        outs.cleanup()
        raise
    crossing = keyrate.zero_crossing(results)
    if crossing is not None and not args.quiet:
        print(f"keyrate: K crosses zero at {crossing:.3f} dB", file=sys.stderr)
    return 0


def noise_json(budget, scenario):
    d = budget.to_dict()
    d["xi_ch_optimal"] = noise.min_xi_ch(scenario, budget.xi_d_total)
    return _json(d)


def cmd_noise(args, argv):
    gamma = _check_gamma(args.gamma)
    if not (math.isfinite(args.loss_db) and args.loss_db >= 0):
        _fail_usage("--loss-db", f"must be a finite loss >= 0 dB, got {args.loss_db}")
    cfg = _configs(args)
    scenario = cfg[0]
    started = time.monotonic()
    budget = noise.optimized_budget(scenario, gamma, 10.0 ** (-args.loss_db / 10.0))
    text = budget.table() if args.format == "table" else noise_json(budget, scenario)
    if not args.out:
        sys.stdout.write(text)
        return 0
    outs = Outputs(args.out)
    outs.open_dir()
    try:
        outs.write("noise.txt" if args.format == "table" else "noise.json", text)
        outs.write("scenario.yaml", _snapshot(cfg))
        write_manifest(outs, "noise", argv, cfg, cfg[2].seed, {}, started)
    except BaseException:
        outs.cleanup()
        raise
    return 0


def cmd_run(args, argv):
    loss = parse_loss_range(args.loss_db)
    cfg = _configs(args, **_gamma_flags(args))
    _check_ao_grid(cfg, args.ao)
    if not args.ao:
        cfg = (cfg[0], cfg[1], params.apply_overrides(cfg, {"simulation.n_max": 0})[2])
    scenario, fsp, ctrl = cfg
    started = time.monotonic()
    outs = Outputs(args.out)
    outs.open_dir()
    try:
        no_ao, yes_ao = _gamma_stage(cfg, args.ao, ctrl.workers, args.quiet)
        summary = gamma_summary(cfg, no_ao, yes_ao)
        outs.write("gamma.csv", coherence.campaign_csv(no_ao, yes_ao))
        outs.write("gamma.json", _json(summary))
        gamma = (yes_ao or no_ao).mean
        if not 0 < gamma <= 1:
            raise RuntimeError(f"measured mean gamma {gamma} is outside (0, 1]")
        budget = noise.optimized_budget(scenario, gamma, 1.0)
        outs.write("noise.json", noise_json(budget, scenario))
        results = keyrate.sweep_loss(scenario, gamma, fsp, loss)
        outs.write("keyrate.csv", keyrate.results_csv(results))
        outs.write("keyrate.json", _json(keyrate_summary(cfg, gamma, results)))
        outs.write("scenario.yaml", _snapshot(cfg))
        if args.debug_fields:
            _dump_fields(outs, cfg)
        cols = {
            "gamma.csv": GAMMA_COLUMNS if yes_ao is not None else GAMMA_COLUMNS[:2],
            "keyrate.csv": list(keyrate.CSV_COLUMNS),
        }
        write_manifest(outs, "run", argv, cfg, ctrl.seed, cols, started)
    except BaseException:
        outs.cleanup()
        raise
    if not args.quiet:
        crossing = keyrate.zero_crossing(results)
        where = "none in range" if crossing is None else f"{crossing:.3f} dB"
        print(f"run: mean gamma {gamma:.4f}; K zero crossing {where}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(2)


def _common(p, out_help):
    p.add_argument("--scenario", metavar="PATH",
                   help=f"YAML scenario file, or a name looked up in ${SCENARIO_DIR_ENV}")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one configuration field (repeatable)")
    p.add_argument("--out", metavar="DIR", help=out_help)
    p.add_argument("--quiet", action="store_true", help="no progress on stderr")


def _campaign_flags(p):
    p.add_argument("--iterations", type=int, help="Monte-Carlo iterations")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--zenith", type=float, metavar="DEG", help="zenith angle [deg]")
    p.add_argument("--ao", action=argparse.BooleanOptionalAction, default=True,
                   help="also evaluate the adaptive-optics corrected efficiency")
    p.add_argument("--grid", type=int, metavar="N", help="receiver grid size (power of two)")
    p.add_argument("--threads", "--workers", dest="threads", type=int, metavar="N",
                   help="worker processes (results do not depend on it)")
    p.add_argument("--debug-fields", action="store_true",
                   help="dump iteration-0 screens and fields as binary grids under OUT/fields")


def build_parser():
    ap = _Parser(prog="dllo-sat", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gamma", help="coherent-efficiency Monte-Carlo campaign")
    _common(p, "output directory (default: CSV to stdout)")
    _campaign_flags(p)

    p = sub.add_parser("keyrate", help="finite-size key rate over a loss grid")
    _common(p, "output directory (default: CSV to stdout)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--gamma", type=float, help="coherent efficiency in (0, 1]")
    g.add_argument("--gamma-from", metavar="FILE", help="gamma.json summary from the gamma command")
    p.add_argument("--gamma-key", choices=("ao", "no-ao"), default="ao",
                   help="which summary entry --gamma-from reads (default: ao)")
    p.add_argument("--loss-db", default="0:30:0.1", metavar="START:STOP:STEP",
                   help="loss grid in dB, STOP inclusive (default 0:30:0.1)")

    p = sub.add_parser("noise", help="itemized excess-noise budget")
    _common(p, "output directory (default: print to stdout)")
    p.add_argument("--gamma", type=float, default=1.0, help="coherent efficiency (default 1)")
    p.add_argument("--loss-db", type=float, default=0.0, help="channel loss [dB] (default 0)")
    p.add_argument("--format", choices=("table", "json"), default="table")

    p = sub.add_parser("run", help="gamma campaign, noise budget and key-rate sweep")
    _common(p, "output directory (required)")
    _campaign_flags(p)
    p.add_argument("--loss-db", default="0:30:0.1", metavar="START:STOP:STEP",
                   help="loss grid in dB, STOP inclusive (default 0:30:0.1)")
    return ap


COMMANDS = {"gamma": cmd_gamma, "keyrate": cmd_keyrate, "noise": cmd_noise, "run": cmd_run}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    if args.command == "run" and not args.out:
        print("dllo-sat: error: --out: run needs an output directory", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"dllo-sat: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("dllo-sat: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure of a stage
        print(f"dllo-sat: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
