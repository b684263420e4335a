"""Command-line front end: config files, single runs, sweeps and plot scripts.

Config files are flat ``key = value`` text; ``#`` starts a comment.  Every
field of :class:`ScenarioConfig`, :class:`MpcConfig` and
:class:`VehicleParams` is a key (``np`` stands for ``MpcConfig.np_``);
tuple values are comma separated and booleans are ``true``/``false``.
"""
import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, ParseError, ValidationError
from .matqp import OPTIMAL, UNCONSTRAINED
from .mpc import CUMULATIVE, LITERAL, MpcConfig
from .plant import VehicleParams
from .sim import COLUMNS, ScenarioConfig, run_closed_loop

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 2, 3

SETTLE_ERR = 0.5    # m
SETTLE_RR = 0.1     # m/s

SWEEP_PARAMS = ("r_weight", "headway", "np", "nc", "u_min", "u_max")

_SECTIONS = (("scenario", ScenarioConfig), ("controller", MpcConfig),
             ("vehicle", VehicleParams))


def _key(field_name):
    return "np" if field_name == "np_" else field_name


def _field_table():
    table = {}
    for section, cls in _SECTIONS:
        for f in fields(cls):
            table[_key(f.name)] = (section, f.name, f.default)
    return table


KEYS = _field_table()


def _coerce(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true/false, got {text!r}")
            return low == "true"
        if isinstance(default, int):
            val = float(text)
            if val != int(val):
                raise ValueError(f"expected an integer, got {text!r}")
            return int(val)
        if isinstance(default, float):
            val = float(text)
            if not math.isfinite(val):
                raise ValueError(f"expected a finite number, got {text!r}")
            return val
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ValidationError(f"{key}: {exc}") from None


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def build_configs(values):
    """Build the three config objects from ``{key: typed value}``.

    Invalid combinations raise :class:`ValidationError` naming the rule.
    """
    parts = {section: {} for section, _ in _SECTIONS}
    for key, val in values.items():
        if key not in KEYS:
            raise ValidationError(f"unknown key {key!r}")
        section, name, _ = KEYS[key]
        parts[section][name] = val
    out = []
    for section, cls in _SECTIONS:
        try:
            out.append(cls(**parts[section]))
        except ValidationError:
            raise
        except (ConfigError, ValueError, TypeError) as exc:
            raise ValidationError(str(exc)) from None
    return tuple(out)


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}: expected 'key = value'", line=lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ParseError(f"{source}: unknown key", line=lineno, key=key)
        if key in values:
            raise ParseError(f"{source}: duplicate key", line=lineno, key=key)
        if not val:
            raise ParseError(f"{source}: empty value for", line=lineno, key=key)
        values[key] = _coerce(key, val, KEYS[key][2])
    return build_configs(values)


def parse_config(path):
    """Read a config file into ``(ScenarioConfig, MpcConfig, VehicleParams)``.

    Missing keys take their defaults, so an empty file gives the reference
    setup.  Raises :class:`ParseError` (with ``line``/``key``) for malformed
    lines or unknown keys and :class:`ValidationError` for values that break
    an invariant.  ``OSError`` propagates.
    """
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text, str(path))


def write_config(configs, path=None):
    """Render all keys of ``(scn, cfg, params)``; write to ``path`` if given."""
    lines = []
    for (section, _), obj in zip(_SECTIONS, configs):
        lines.append(f"# {section}")
        for f in fields(obj):
            lines.append(f"{_key(f.name)} = {_format(getattr(obj, f.name))}")
        lines.append("")
    text = "\n".join(lines)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


@dataclass
class RunSummary:
    r_weight: float
    min_range: float
    collided: bool
    settle_time_err: float
    settle_time_rr: float
    peak_decel: float
    qp_failures: int


def settle_time(t, values, bound):
    """First time after which ``|values| <= bound`` holds to the end of the
    run; None if the last sample is outside the band."""
    last_bad = None
    for i, v in enumerate(values):
        if abs(v) > bound:
            last_bad = i
    if last_bad is None:
        return float(t[0])
    if last_bad == len(values) - 1:
        return None
    return float(t[last_bad + 1])


def summarize(log, cfg):
    t = log["t"]
    rng = log["range"]
    min_range = float(rng.min())
    statuses = log.statuses()
    return RunSummary(
        r_weight=cfg.r_weight,
        min_range=min_range,
        collided=min_range <= 0,
        settle_time_err=settle_time(t, log["err"], SETTLE_ERR),
        settle_time_rr=settle_time(t, log["range_rate"], SETTLE_RR),
        peak_decel=float(max(0.0, -log["a2"].min())),
        qp_failures=sum(s not in (OPTIMAL, UNCONSTRAINED) for s in statuses),
    )


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_csv(log, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in log.rows:
            w.writerow([_cell(row.get(c)) for c in COLUMNS])


def summary_path(csv_path):
    p = Path(csv_path)
    return p.with_name(p.stem + ".summary.json")


def write_summary(summary, path):
    Path(path).write_text(json.dumps(asdict(summary), indent=2) + "\n", encoding="utf-8")


def _run(configs, out_path):
    scn, cfg, params = configs
    log = run_closed_loop(scn, cfg, params)
    write_csv(log, out_path)
    summary = summarize(log, cfg)
    write_summary(summary, summary_path(out_path))
    return summary


def _apply_overrides(configs, plant_tier=None, input_constraints=None):
    scn, cfg, params = configs
    try:
        if plant_tier is not None:
            scn = replace(scn, plant_tier=plant_tier)
        if input_constraints is not None:
            cfg = replace(cfg, input_constraint_mode=input_constraints)
    except (ConfigError, ValueError) as exc:
        raise ValidationError(str(exc)) from None
    return scn, cfg, params


def _err(msg):
    print(f"accsim: {msg}", file=sys.stderr)


def _load(config):
    if config is None:
        return build_configs({})
    return parse_config(config)


def cmd_simulate(config, out_path, plant_tier=None, input_constraints=None):
    """Run one simulation; write the CSV and ``<stem>.summary.json``."""
    try:
        configs = _apply_overrides(_load(config), plant_tier, input_constraints)
    except ConfigError as exc:
        _err(exc)
        return EXIT_VALIDATION
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_IO
    try:
        _run(configs, out_path)
    except OSError as exc:
        _err(f"cannot write output: {exc}")
        return EXIT_IO
    return EXIT_OK


def _value_tag(value):
    return _cell(value)


def sweep_configs(configs, param, values):
    """One config triple per sweep value (validated up front)."""
    if param not in SWEEP_PARAMS:
        raise ValidationError(f"param must be one of {SWEEP_PARAMS}, got {param!r}")
    if not values:
        raise ValidationError("sweep needs at least one value")
    base = {}
    for (section, _), obj in zip(_SECTIONS, configs):
        for f in fields(obj):
            base[_key(f.name)] = getattr(obj, f.name)
    out = []
    for raw in values:
        val = _coerce(param, str(raw), KEYS[param][2])
        out.append((val, build_configs({**base, param: val})))
    return out


def _sweep_job(args):
    configs, path = args
    return _run(configs, path)


def cmd_sweep(config, param, values, out_dir, jobs=None):
    """Run one simulation per value, then write ``summary.tsv`` for all runs.

    Files are ``<param>_<value>.csv`` with a sidecar summary each.  Runs are
    independent and may execute in parallel worker processes.
    """
    try:
        runs = sweep_configs(_load(config), param, values)
    except ConfigError as exc:
        _err(exc)
        return EXIT_VALIDATION
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_IO
    tags = [_value_tag(v) for v, _ in runs]
    if len(set(tags)) != len(tags):
        _err("duplicate sweep values")
        return EXIT_VALIDATION
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        tasks = [(c, out_dir / f"{param}_{tag}.csv") for tag, (_, c) in zip(tags, runs)]
        jobs = jobs or min(len(tasks), os.cpu_count() or 1)
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                summaries = list(pool.map(_sweep_job, tasks))
        else:
            summaries = [_sweep_job(t) for t in tasks]
        write_sweep_table(out_dir / "summary.tsv", param, tags, summaries)
    except OSError as exc:
        _err(f"cannot write output: {exc}")
        return EXIT_IO
    return EXIT_OK


def write_sweep_table(path, param, tags, summaries):
    names = [f.name for f in fields(RunSummary)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["value", "file"] + names)
        for tag, s in zip(tags, summaries):
            w.writerow([tag, f"{param}_{tag}.csv"] + [_cell(getattr(s, n)) for n in names])


# (title, y label, column) for each panel
PANELS = (
    ("Positions", "x2 [m]", "x2"),
    ("Velocities", "v2 [m/s]", "v2"),
    ("Accelerations", "a2 [m/s^2]", "a2"),
    ("Engine speed", "omega_e [rad/s]", "omega_e"),
    ("Range", "range [m]", "range"),
)


def _gp_quote(s):
    return "'" + str(s).replace("'", "''") + "'"


def emit_plot_script(csv_paths, out_path):
    """Write a gnuplot script with the five trajectory panels, one curve per CSV.

    Returns an exit code: 2 if a CSV lacks a needed column, 3 on I/O errors.
    """
    if not csv_paths:
        _err("plot needs at least one CSV")
        return EXIT_VALIDATION
    needed = ["t"] + [col for _, _, col in PANELS]
    indices = []
    try:
        for path in csv_paths:
            with open(path, newline="", encoding="utf-8") as fh:
                header = next(csv.reader(fh), [])
            missing = [c for c in needed if c not in header]
            if missing:
                _err(f"{path}: missing column {missing[0]}")
                return EXIT_VALIDATION
            indices.append({c: header.index(c) + 1 for c in needed})
    except OSError as exc:
        _err(f"cannot read {exc.filename}: {exc.strerror}")
        return EXIT_IO

    image = str(Path(out_path).with_suffix(".png"))
    lines = [
        "set terminal pngcairo size 900,1600 noenhanced",
        f"set output {_gp_quote(image)}",
        "set datafile separator ','",
        "set key outside right",
        "set grid",
        "set multiplot layout 5,1",
    ]
    for title, ylabel, col in PANELS:
        lines += [f"set title {_gp_quote(title)}",
                  f"set ylabel {_gp_quote(ylabel)}",
                  "set xlabel 't [s]'"]
        curves = [f"{_gp_quote(p)} using {ix['t']}:{ix[col]} skip 1 with lines "
                  f"title {_gp_quote(Path(p).stem)}" for p, ix in zip(csv_paths, indices)]
        lines.append("plot " + ", \\\n     ".join(curves))
    lines += ["unset multiplot", ""]
    try:
        Path(out_path).write_text("\n".join(lines), encoding="utf-8")
    except OSError as exc:
        _err(f"cannot write output: {exc}")
        return EXIT_IO
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="accsim", description="MPC adaptive cruise control simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one closed-loop simulation")
    sim.add_argument("--config", help="key = value config file (defaults if omitted)")
    sim.add_argument("--out", required=True, help="output CSV path")
    sim.add_argument("--plant", choices=("linear", "nonlinear"))
    sim.add_argument("--input-constraints", choices=(CUMULATIVE, LITERAL))

    sw = sub.add_parser("sweep", help="run one simulation per parameter value")
    sw.add_argument("--config")
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sw.add_argument("--values", required=True, help="comma separated values")
    sw.add_argument("--out-dir", required=True)
    sw.add_argument("--jobs", type=int, default=None, help="worker processes")

    pl = sub.add_parser("plot", help="write a gnuplot script for trajectory CSVs")
    pl.add_argument("--out", required=True)
    pl.add_argument("csv", nargs="+")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.plant, args.input_constraints)
    if args.command == "sweep":
        values = [v for v in args.values.split(",") if v.strip()]
        return cmd_sweep(args.config, args.param, values, args.out_dir, args.jobs)
    return emit_plot_script(args.csv, args.out)


if __name__ == "__main__":
    sys.exit(main())
