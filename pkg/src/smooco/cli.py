"""Command-line front end.

Subcommands: ``generate``, ``run``, ``sweep``, ``verify`` and ``plot``.
Configuration is a TOML document (a JSON document, or a manifest written by
an earlier run, works too); every key except ``traffic.k`` has a default, and
``paper.toml`` spells out the defaults.  Each command that writes data also
writes a manifest holding the fully resolved configuration, so passing the
manifest back through ``--config`` reproduces the same files.

Exit codes: 0 success, 1 verification found violations, 2 usage or
configuration error, 3 some trial failed (partial results are written),
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .bench import (
    ExperimentConfig,
    algorithm_by_name,
    csv_text,
    plot_decomposition,
    plot_regret,
    plot_sweep,
    run_experiment,
    sweep_windows,
    write_results,
    write_sweep,
)
from .bounds import REPORT_COLUMNS, SUITES, run_suite
from .core import NumericalError, ParameterError, ShapeError
from .predict import RationalQuadraticKernel
from .traffic import SineSpec, TrafficGenConfig, generate_traffic, write_traffic_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_VIOLATIONS, EXIT_USAGE, EXIT_PARTIAL, EXIT_NUMERICAL = 0, 1, 2, 3, 4
DEFAULT_SIZES = (1, 2, 3, 4, 5, 6)


class ConfigError(ValueError):
    """A configuration field is missing, unknown or invalid."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


# Allowed keys and their expected types, per config section.
_KERNEL_KEYS = {"variance": float, "length_scale": float, "alpha": float, "noise_variance": float}
_TOP_KEYS = {"seed": int, "trials": int, "warmup": int, "online_steps": int, "algorithms": list}
_SECTIONS = {
    "shape": {"m": int, "unit_costs": list, "unit_cost_low": float, "unit_cost_high": float},
    "solver": {"kind": str, "passes": int, "relax_c": float, "enumeration_limit": int, "dp_state_limit": int,
               "restarts": int, "ftl_strategy": str, "ftp_strategy": str},
    "planning": {"s_max": int},
    "predictor": {"z": float, "scale_variance": bool, "kernel": dict},
    "benchmark": {"chunk": int},
    "baselines": {"use_warmup_history": bool, "ogd_eta0": float},
    "sweep": {"sizes": list, "solvers": list},
}
_TRAFFIC_KEYS = {"k": int, "sines": list, "ar_coeff": float, "ar_noise_std": float, "kernel": dict,
                 "component_weights": list, "base_offset": float, "clamp_floor": float}


def _check_type(field: str, value, kind):
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind in (str, bool, list, dict) and isinstance(value, kind):
        return value
    raise ConfigError(field, f"expected {kind.__name__}, got {type(value).__name__}")


def _check_keys(section: str, table: dict, allowed: dict) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(section, "expected a table")
    out = {}
    for key, value in table.items():
        name = f"{section}.{key}" if section else key
        if key not in allowed:
            raise ConfigError(name, "unknown field")
        out[key] = _check_type(name, value, allowed[key])
    return out


def _kernel(field: str, table: dict) -> RationalQuadraticKernel:
    vals = _check_keys(field, table, _KERNEL_KEYS)
    try:
        return RationalQuadraticKernel(**vals)
    except ParameterError as exc:
        raise ConfigError(field, str(exc)) from None


def load_document(path) -> dict:
    """Read a TOML or JSON config; a manifest yields its embedded ``config``."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {p}: {exc.strerror}") from None
    try:
        doc = json.loads(text) if p.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse {p}: {exc}") from None
    if "manifest_version" in doc:
        doc = doc["config"]
    return doc


def build_config(doc: dict) -> tuple[ExperimentConfig, dict]:
    """Validate a config document; returns the experiment config and the sweep settings."""
    allowed_top = dict(_TOP_KEYS, traffic=dict, **{s: dict for s in _SECTIONS})
    top = _check_keys("", doc, allowed_top)
    traffic_doc = _check_keys("traffic", top.get("traffic", {}), _TRAFFIC_KEYS)
    if "k" not in traffic_doc:
        raise ConfigError("traffic.k", "required field is missing")
    sec = {s: _check_keys(s, top.get(s, {}), keys) for s, keys in _SECTIONS.items()}

    tkw = {key: traffic_doc[key] for key in ("k", "ar_coeff", "ar_noise_std", "base_offset", "clamp_floor")
           if key in traffic_doc}
    if "sines" in traffic_doc:
        specs = []
        for i, s in enumerate(traffic_doc["sines"]):
            field = f"traffic.sines[{i}]"
            vals = _check_keys(field, s, {"period": float, "amplitude_low": float, "amplitude_high": float})
            try:
                specs.append(SineSpec(vals["period"], vals["amplitude_low"], vals["amplitude_high"]))
            except KeyError as exc:
                raise ConfigError(f"{field}.{exc.args[0]}", "required field is missing") from None
            except ParameterError as exc:
                raise ConfigError(field, str(exc)) from None
        tkw["sine_specs"] = tuple(specs)
    if "component_weights" in traffic_doc:
        tkw["component_weights"] = tuple(float(w) for w in traffic_doc["component_weights"])
    if "kernel" in traffic_doc:
        tkw["gp_kernel"] = _kernel("traffic.kernel", traffic_doc["kernel"])
    try:
        traffic = TrafficGenConfig(**tkw)
    except ParameterError as exc:
        raise ConfigError("traffic", str(exc)) from None

    kw: dict = {"traffic": traffic}
    for key in ("seed", "trials", "warmup", "online_steps"):
        if key in top:
            kw[key] = top[key]
    if "algorithms" in top:
        try:
            kw["algorithms"] = tuple(algorithm_by_name(str(a)) for a in top["algorithms"])
        except ParameterError as exc:
            raise ConfigError("algorithms", str(exc)) from None
    shape = sec["shape"]
    for key in ("m", "unit_cost_low", "unit_cost_high"):
        if key in shape:
            kw[key] = shape[key]
    if "unit_costs" in shape:
        kw["unit_costs"] = tuple(float(v) for v in shape["unit_costs"])
    solver = sec["solver"]
    if "kind" in solver:
        if solver["kind"] not in ("exact", "iterative", "iterative-local", "auto"):
            raise ConfigError("solver.kind", "expected one of exact, iterative, iterative-local, auto")
        kw["solver"] = solver["kind"]
    for key in ("passes", "relax_c", "enumeration_limit", "dp_state_limit", "restarts", "ftl_strategy",
                "ftp_strategy"):
        if key in solver:
            kw[key] = solver[key]
    for key in ("ftl_strategy", "ftp_strategy"):
        if kw.get(key, "enumerate") not in ("enumerate", "local"):
            raise ConfigError(f"solver.{key}", "expected 'enumerate' or 'local'")
    if "s_max" in sec["planning"]:
        kw["s_max"] = sec["planning"]["s_max"]
    pred = sec["predictor"]
    for key in ("z", "scale_variance"):
        if key in pred:
            kw[key] = pred[key]
    if "kernel" in pred:
        kw["kernel"] = _kernel("predictor.kernel", pred["kernel"])
    if "chunk" in sec["benchmark"]:
        kw["benchmark_chunk"] = sec["benchmark"]["chunk"]
    kw.update(sec["baselines"])
    try:
        config = ExperimentConfig(**kw)
    except (ParameterError, ShapeError) as exc:
        raise ConfigError("<experiment>", str(exc)) from None

    sweep = {"sizes": [int(s) for s in sec["sweep"].get("sizes", DEFAULT_SIZES)],
             "solvers": [str(s) for s in sec["sweep"].get("solvers", ["iterative"])]}
    return config, sweep


def _kernel_doc(k: RationalQuadraticKernel) -> dict:
    return dataclasses.asdict(k)


def config_document(config: ExperimentConfig, sweep: dict | None = None) -> dict:
    """The fully resolved config as a plain document (inverse of :func:`build_config`)."""
    t = config.traffic
    doc = {
        "seed": config.seed,
        "trials": config.trials,
        "warmup": config.warmup,
        "online_steps": config.online_steps,
        "algorithms": [a.name for a in config.algorithms],
        "traffic": {
            "k": t.k,
            "sines": [dataclasses.asdict(s) for s in t.sine_specs],
            "ar_coeff": t.ar_coeff,
            "ar_noise_std": t.ar_noise_std,
            "kernel": _kernel_doc(t.gp_kernel),
            "component_weights": list(t.component_weights),
            "base_offset": t.base_offset,
            "clamp_floor": t.clamp_floor,
        },
        "shape": {"m": config.m, "unit_cost_low": config.unit_cost_low, "unit_cost_high": config.unit_cost_high},
        "solver": {"kind": config.solver, "passes": config.passes, "relax_c": config.relax_c,
                   "enumeration_limit": config.enumeration_limit, "dp_state_limit": config.dp_state_limit,
                   "restarts": config.restarts, "ftl_strategy": config.ftl_strategy,
                   "ftp_strategy": config.ftp_strategy},
        "planning": {"s_max": config.s_max},
        "predictor": {"z": config.z, "scale_variance": config.scale_variance, "kernel": _kernel_doc(config.kernel)},
        "benchmark": {"chunk": config.benchmark_chunk},
        "baselines": {"use_warmup_history": config.use_warmup_history},
        "sweep": sweep or {"sizes": list(DEFAULT_SIZES), "solvers": ["iterative"]},
    }
    if config.unit_costs is not None:
        doc["shape"]["unit_costs"] = list(config.unit_costs)
    if config.ogd_eta0 is not None:
        doc["baselines"]["ogd_eta0"] = config.ogd_eta0
    return doc


def default_document() -> dict:
    return config_document(ExperimentConfig())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(path, command: str, doc: dict, outputs) -> Path:
    """Write the run manifest; output paths are stored relative to the manifest's folder."""
    path = Path(path)
    outputs = [Path(o) for o in outputs]
    stamp = os.environ.get("SOURCE_DATE_EPOCH")
    when = _dt.datetime.fromtimestamp(int(stamp), _dt.timezone.utc) if stamp else _dt.datetime.now(_dt.timezone.utc)
    manifest = {
        "manifest_version": 1,
        "tool": "smooco",
        "version": __version__,
        "command": command,
        "seed": doc.get("seed"),
        "timestamp": when.replace(microsecond=0).isoformat(),
        "config": doc,
        "outputs": [{"path": os.path.relpath(o, path.parent), "sha256": _sha256(o)} for o in outputs],
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _csv_list(text: str, cast=str) -> list:
    return [cast(v.strip()) for v in text.split(",") if v.strip()]


def _resolve(args) -> tuple[ExperimentConfig, dict, dict]:
    doc = load_document(args.config) if args.config else default_document()
    config, sweep = build_config(doc)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "steps", None) is not None:
        changes["online_steps"] = args.steps
    if getattr(args, "algorithms", None):
        try:
            changes["algorithms"] = tuple(algorithm_by_name(a) for a in _csv_list(args.algorithms))
        except ParameterError as exc:
            raise ConfigError("--algorithms", str(exc)) from None
    if changes:
        try:
            config = dataclasses.replace(config, **changes)
        except ParameterError as exc:
            raise ConfigError("<command line>", str(exc)) from None
    return config, sweep, config_document(config, sweep)


def cmd_generate(args) -> int:
    config, _, doc = _resolve(args)
    tcfg = dataclasses.replace(config.traffic, seed=config.seed, horizon=config.warmup + config.online_steps)
    out = Path(args.out or "traffic.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_traffic_csv(generate_traffic(tcfg), out)
    write_manifest(out.with_name(out.stem + ".manifest.json"), "generate", doc, [out])
    print(f"wrote {out} ({tcfg.horizon} steps, {tcfg.k} topics)")
    return EXIT_OK


def cmd_run(args) -> int:
    config, _, doc = _resolve(args)
    out = Path(args.out or "results")
    result = run_experiment(config, args.workers)
    files = write_results(result, out)
    if args.plots:
        files.append(plot_regret(files[0], out / "regret.svg"))
        files.append(plot_decomposition(files[0], out / "decomposition.svg"))
    write_manifest(out / "manifest.json", "run", doc, files)
    for name in result.algorithm_names():
        regrets = result.final_regrets(name)
        if len(regrets):
            print(f"{name:>12s}  final regret {regrets.mean():10.3f}  ({len(regrets)} trials)")
    if result.failed:
        print(f"some trials failed; see {out / 'failures.csv'}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_sweep(args) -> int:
    config, sweep, doc = _resolve(args)
    try:
        sizes = _csv_list(args.sizes, int) if args.sizes else sweep["sizes"]
    except ValueError:
        raise ConfigError("--sizes", "expected comma-separated integers") from None
    solvers = _csv_list(args.solvers) if args.solvers else sweep["solvers"]
    if not sizes or len(set(sizes)) != len(sizes) or min(sizes) < 1:
        raise ConfigError("--sizes", "sizes must be distinct positive integers")
    for s in solvers:
        if s not in ("exact", "iterative", "iterative-local", "auto"):
            raise ConfigError("--solvers", f"unknown solver {s!r}")
    doc["sweep"] = {"sizes": sizes, "solvers": solvers}
    out = Path(args.out or "sweep")
    out.mkdir(parents=True, exist_ok=True)
    files = [write_sweep(sweep_windows(config, sizes, solvers, args.workers), out / "sweep.csv")]
    if args.plots:
        files.append(plot_sweep(files[0], out / "sweep.svg"))
    write_manifest(out / "manifest.json", "sweep", doc, files)
    print(f"wrote {files[0]}")
    return EXIT_OK


def cmd_verify(args) -> int:
    suites = list(SUITES) if args.suite == "all" else [args.suite]
    rows = []
    for suite in suites:
        rows.extend(run_suite(suite, seed=args.seed or 0, a=args.a, b=args.b))
    out = Path(args.out or "verify.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text(REPORT_COLUMNS, [r.as_row() for r in rows]))
    violations = sum(r.violations for r in rows)
    for r in rows:
        print(f"{r.check:>28s}  {'ok' if r.violations == 0 else 'VIOLATED'}  ({r.instances} instances)")
    return EXIT_OK if violations == 0 else EXIT_VIOLATIONS


def cmd_plot(args) -> int:
    src = Path(args.dir)
    made = []
    if (src / "steps.csv").exists():
        made.append(plot_regret(src / "steps.csv", src / "regret.svg"))
        made.append(plot_decomposition(src / "steps.csv", src / "decomposition.svg"))
    if (src / "sweep.csv").exists():
        made.append(plot_sweep(src / "sweep.csv", src / "sweep.svg"))
    if not made:
        raise ConfigError("dir", f"no steps.csv or sweep.csv in {src}")
    for p in made:
        print(f"wrote {p}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smooco", description="Online load balancing with predictions: experiments and bound checks.")
    p.add_argument("--version", action="version", version=f"smooco {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, workers=True):
        sp.add_argument("--config", help="TOML/JSON config or a manifest from an earlier run")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--trials", type=int, help="number of trials")
        sp.add_argument("--steps", type=int, help="online steps per trial")
        sp.add_argument("--algorithms", help="comma-separated algorithm names")
        if workers:
            sp.add_argument("--workers", type=int, default=None,
                            help="worker processes (default: $SMOOCO_WORKERS or 1)")
            sp.add_argument("--plots", action="store_true", help="also write SVG plots")

    g = sub.add_parser("generate", help="write a synthetic traffic CSV")
    common(g, workers=False)
    g.set_defaults(func=cmd_generate)
    r = sub.add_parser("run", help="run the online algorithms against the offline benchmark")
    common(r)
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="fixed planning windows over a range of sizes")
    common(s)
    s.add_argument("--sizes", help="comma-separated window sizes (default 1,2,3,4,5,6)")
    s.add_argument("--solvers", help="comma-separated solver kinds (default iterative)")
    s.set_defaults(func=cmd_sweep)
    v = sub.add_parser("verify", help="empirical checks of the regret bounds")
    v.add_argument("suite", help=f"one of: {', '.join(SUITES)}, all")
    v.add_argument("--out", help="report CSV path (default verify.csv)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--a", type=float, help="schedule exponent a (rates suite)")
    v.add_argument("--b", type=float, help="schedule exponent b (rates and lower-bound suites)")
    v.set_defaults(func=cmd_verify)
    pl = sub.add_parser("plot", help="re-render plots from CSVs in a results folder")
    pl.add_argument("dir", help="folder holding steps.csv and/or sweep.csv")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify" and args.suite not in SUITES + ("all",):
        print(f"smooco: unknown suite {args.suite!r}; valid suites: {', '.join(SUITES)}, all", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("smooco: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"smooco: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"smooco: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
