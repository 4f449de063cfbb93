"""Command-line pipeline: ingest -> estimate -> calibrate -> optimize, plus
simulate/score/oracle/synth/report utilities.

Settings come from (highest precedence first) command-line flags, a
``--config`` file of ``key = value`` lines, the ``WATERFALL_SEED`` environment
variable (seed only), and built-in defaults.

Exit codes: 0 success, 2 input-format error, 3 missing upstream artifact,
4 constraint/validation failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import (PriceGrid, Waterfall, WaterfallConstraints, read_waterfall, validate, write_waterfall)
from .errors import FormatError, MissingArtifactError, WaterfallError, WaterfallValidationError
from .evaluate import CalibrationConfig, calibrate_zeta, fidelity_score, score_weights
from .ingest import (impressions_per_user, load_vectors, observed_impressions, read_records, save_vectors,
                     split_train_validation, vectorize, write_records)
from .search import SearchConfig, exhaustive_optimum, hill_climb, mcts_search, trace_csv
from .simulate import Population, Simulator
from .synthetic import generate_matrix, beta_benchmark, sales_log_scenario
from .valuation import EstimationConfig, estimate_matrix, load_matrix, save_matrix

log = logging.getLogger("waterfall_opt")

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "log_level": "WARNING",
    "date_format": "%Y-%m-%d",
    "window": 30,
    "grid_min": 1.0,
    "grid_max": 30.0,
    "grid_step": 1.0,
    "max_length": 20,
    "max_instances_per_network": 5,
    "canonical_descending": True,
    "revenue_divisor": 1000.0,
    "max_iter": 50,
    "epsilon": 0.0,
    "min_other_networks": 3,
    "variance_floor": 1e-6,
    "support_clamp": 1e-4,
    "price_multiplier": 1000.0,
    "price_scale": None,
    "zeta_lo": 0.5,
    "zeta_hi": 2.0,
    "zeta_step": 0.05,
    "sweep_tolerance": 1e-4,
    "max_rounds": 10,
    "oracle_max_candidates": 25_000_000,
}
_TYPES = {"price_scale": float}


def _coerce(key, raw):
    if raw is None:
        return None
    default = DEFAULTS[key]
    kind = _TYPES.get(key, type(default))
    if isinstance(raw, str) and raw.strip().lower() in ("", "none", "auto") and default is None:
        return None
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        val = str(raw).strip().lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise FormatError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise FormatError(f"{key}: cannot parse {raw!r}") from None


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_settings(args) -> dict:
    settings = dict(DEFAULTS)
    env_seed = os.environ.get("WATERFALL_SEED")
    if env_seed is not None:
        settings["seed"] = _coerce("seed", env_seed)
    if args.config:
        _require(args.config)
        settings.update(read_config_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = _coerce(key, val)
    return settings


# ------------------------------------------------------------------ helpers

def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise MissingArtifactError(f"missing input: {p}")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_path, command, inputs, settings, started):
    manifest = {
        "command": command,
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None and Path(p).is_file()},
        "seed": settings["seed"],
        "config": settings,
        "started_at": dt.datetime.fromtimestamp(started, dt.timezone.utc).isoformat(),
        "wall_time_s": round(time.time() - started, 6),
    }
    Path(out_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest_path(out, command):
    out = Path(out)
    return out / f"manifest-{command}.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _grid(s):
    return PriceGrid.from_range(s["grid_min"], s["grid_max"], s["grid_step"])


def _constraints(s):
    return WaterfallConstraints(s["max_length"], s["max_instances_per_network"], s["canonical_descending"])


def _estimation_cfg(s):
    return EstimationConfig(min_other_networks=s["min_other_networks"], variance_floor=s["variance_floor"],
                            support_clamp=s["support_clamp"], price_multiplier=s["price_multiplier"],
                            price_scale=s["price_scale"])


def _search_cfg(s):
    return SearchConfig(grid=_grid(s), constraints=_constraints(s), max_iter=s["max_iter"], epsilon=s["epsilon"],
                        seed=s["seed"], revenue_divisor=s["revenue_divisor"], threads=s["threads"])


def _load_zeta(path):
    if path is None:
        return None
    _require(path)
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: float(v) for k, v in obj.get("zeta", obj).items()}


def _population(path, matrix, s):
    """Validation-day CSV -> users weighted by their sold impressions; None -> all matrix users once."""
    if path is None:
        return Population.of(matrix.users)
    _require(path)
    records = read_records(path, s["date_format"]).records
    counts = impressions_per_user(records)
    missing = [u for u in counts if u not in matrix._index["user"]]
    if missing:
        raise WaterfallValidationError(f"{len(missing)} population users are absent from the matrix, e.g. {missing[0]}")
    if not counts:
        raise FormatError(f"{path}: no records to build a population from")
    return Population.from_counts(counts)


def _checked_waterfall(path, s):
    _require(path)
    w = read_waterfall(path)
    problems = validate(w, _constraints(s), _grid(s))
    if problems:
        raise WaterfallValidationError(f"{path}: " + "; ".join(v.detail for v in problems), problems)
    return w


def _read_q(path, waterfall, s):
    _require(path)
    if str(path).endswith(".csv"):
        obs = observed_impressions(read_records(path, s["date_format"]).records, waterfall, s["revenue_divisor"])
        return obs.q
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    q = obj.get("q", obj.get("q_prime")) if isinstance(obj, dict) else obj
    if q is None:
        raise FormatError(f"{path}: expected a JSON list or an object with 'q' or 'q_prime'")
    return np.asarray(q, dtype=np.int64)


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


# ----------------------------------------------------------------- commands

def cmd_ingest(args, s):
    _require(args.input)
    ds = read_records(args.input, s["date_format"])
    for diag in ds.rejected:
        print(f"rejected line {diag.line}: {diag.reason}", file=sys.stderr)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = ds
    if args.anchor:
        split = split_train_validation(ds, dt.date.fromisoformat(args.anchor), s["window"])
        train = split.train
        write_records(split.validation.records, out / "validation.csv", s["date_format"])
    save_vectors(vectorize(train), out / "vectors.wfv")
    summary = ds.totals()
    if args.anchor:
        summary["train_records"] = len(train.records)
        summary["validation_records"] = len(split.validation.records)
    print(json.dumps(summary, sort_keys=True))
    return [args.input], out


def cmd_estimate(args, s):
    _require(args.vectors, args.validation)
    vectors = load_vectors(args.vectors)
    users = {u for u, _ in vectors}
    networks = sorted({k for _, k in vectors} | set(filter(None, (args.networks or "").split(","))))
    if args.validation:
        users |= set(impressions_per_user(read_records(args.validation, s["date_format"]).records))
    if not users or not networks:
        raise FormatError(f"{args.vectors}: no users or networks to estimate")
    cfg = _estimation_cfg(s)
    matrix = estimate_matrix(vectors, sorted(users), networks, cfg, threads=s["threads"])
    save_matrix(matrix, args.out, seed=s["seed"], cfg=cfg)
    print(json.dumps({"users": len(matrix.users), "networks": list(matrix.networks),
                      "price_scale": matrix.price_scale}))
    return [args.vectors, args.validation], Path(args.out)


def cmd_calibrate(args, s):
    _require(args.matrix, args.waterfall, args.validation)
    matrix = load_matrix(args.matrix)
    w = _checked_waterfall(args.waterfall, s)
    obs = observed_impressions(read_records(args.validation, s["date_format"]).records, w, s["revenue_divisor"])
    sim = Simulator(matrix, _population(args.validation, matrix, s), s["seed"], s["revenue_divisor"])
    cfg = CalibrationConfig(s["zeta_lo"], s["zeta_hi"], s["zeta_step"], s["sweep_tolerance"], s["max_rounds"],
                            s["seed"])
    res = calibrate_zeta(sim, w, obs.q, cfg, threads=s["threads"])
    report = res.to_dict()
    report["q_observed"] = obs.q.tolist()
    report["unmatched_sales"] = len(obs.unmatched)
    report["seed"] = s["seed"]
    _dump(args.out, report)
    print(json.dumps({"initial_score": res.initial_score, "final_score": res.score, "zeta": res.zeta}))
    return [args.matrix, args.waterfall, args.validation], Path(args.out)


def cmd_simulate(args, s):
    _require(args.matrix, args.waterfall)
    matrix = load_matrix(args.matrix)
    w = _checked_waterfall(args.waterfall, s)
    sim = Simulator(matrix, _population(args.population, matrix, s), s["seed"], s["revenue_divisor"], s["threads"])
    res = sim.run(w, _load_zeta(args.zeta))
    _dump(args.out, res.to_dict())
    print(json.dumps({"revenue": res.revenue, "requests": res.requests, "unsold_users": res.unsold_users}))
    return [args.matrix, args.waterfall, args.zeta, args.population], Path(args.out)


def cmd_score(args, s):
    _require(args.waterfall, args.observed, args.simulated)
    w = read_waterfall(args.waterfall)
    q_obs = _read_q(args.observed, w, s)
    q_sim = _read_q(args.simulated, w, s)
    score = fidelity_score(q_sim, q_obs, score_weights(w, q_obs))
    print(score)
    return None, None


def cmd_optimize(args, s):
    _require(args.matrix)
    matrix = load_matrix(args.matrix)
    w0 = Waterfall() if args.init == "empty" else _checked_waterfall(args.init, s)
    cfg = _search_cfg(s)
    pop = _population(args.population, matrix, s)
    search = hill_climb if args.algo == "sns" else mcts_search
    w, trace = search(w0, matrix, _load_zeta(args.zeta), cfg, population=pop)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.json").write_text(trace.to_json(), encoding="utf-8")
    (out / "trace.csv").write_text(trace.to_csv(), encoding="utf-8")
    write_waterfall(w, out / "waterfall.csv")
    write_waterfall(trace.best_waterfall, out / "best_waterfall.csv")
    print(json.dumps({"algorithm": args.algo, "initial_revenue": trace.revenues[0],
                      "final_revenue": trace.final_revenue, "iterations": trace.iterations,
                      "candidates": trace.total_candidates}))
    return [args.matrix, args.zeta, args.population, None if args.init == "empty" else args.init], out


def cmd_oracle(args, s):
    _require(args.matrix)
    matrix = load_matrix(args.matrix)
    nets = args.networks.split(",") if args.networks else list(matrix.networks)
    res = exhaustive_optimum(nets, _search_cfg(s), matrix, _load_zeta(args.zeta),
                             population=_population(args.population, matrix, s),
                             max_candidates=s["oracle_max_candidates"])
    _dump(args.out, {**res.to_dict(), "seed": s["seed"]})
    write_waterfall(res.waterfall, Path(args.out).with_suffix(".csv"))
    print(json.dumps({"revenue": res.revenue, "candidates": res.candidates}))
    return [args.matrix, args.zeta, args.population], Path(args.out)


def cmd_synth(args, s):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "benchmark":
        sc = beta_benchmark(args.users, s["seed"], _grid(s))
        (out / "scenario.json").write_text(sc.to_json(), encoding="utf-8")
        matrix = generate_matrix(sc, args.mode, threads=s["threads"])
        save_matrix(matrix, out / "matrix.wfm", seed=s["seed"])
        for name, w in sc.init_set.items():
            write_waterfall(w, out / f"init_{name}.csv")
    else:
        sc = sales_log_scenario(args.users, args.days, s["seed"])
        write_records(sc.dataset.records, out / "sales.csv", s["date_format"])
        write_waterfall(sc.live_waterfall, out / "current_waterfall.csv")
        last = sc.start + dt.timedelta(days=sc.days - 1)
        print(json.dumps({"records": len(sc.dataset.records), "first_day": sc.start.isoformat(),
                          "last_day": last.isoformat()}))
    return [], out


def cmd_report(args, s):
    _require(args.trace)
    trace = json.loads(Path(args.trace).read_text(encoding="utf-8"))
    Path(args.out).write_text(trace_csv(trace), encoding="utf-8")
    return [args.trace], Path(args.out)


COMMANDS = {
    "ingest": cmd_ingest, "estimate": cmd_estimate, "calibrate": cmd_calibrate, "simulate": cmd_simulate,
    "score": cmd_score, "optimize": cmd_optimize, "oracle": cmd_oracle, "synth": cmd_synth, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    for key, default in DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        common.add_argument(flag, dest=key, default=None, metavar=key.upper(),
                            help=f"(default: {default})".replace("%", "%%"))

    parser = argparse.ArgumentParser(prog="waterfall-opt", description="Waterfall auction optimization pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse a sales CSV into a vector store")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--anchor", help="validation day (ISO date); train on the preceding window")

    p = sub.add_parser("estimate", parents=[common], help="fit the valuation matrix")
    p.add_argument("--vectors", required=True)
    p.add_argument("--validation", help="validation CSV whose users must also get rows")
    p.add_argument("--networks", help="comma-separated extra network ids")
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="fit per-network zeta coefficients")
    p.add_argument("--matrix", required=True)
    p.add_argument("--waterfall", required=True, help="the validation day's live waterfall")
    p.add_argument("--validation", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run a population through a waterfall")
    p.add_argument("--matrix", required=True)
    p.add_argument("--waterfall", required=True)
    p.add_argument("--zeta")
    p.add_argument("--population", help="validation CSV; default: every matrix user once")
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", parents=[common], help="fidelity of simulated vs observed impressions")
    p.add_argument("--waterfall", required=True)
    p.add_argument("--observed", required=True, help="JSON impression vector or validation CSV")
    p.add_argument("--simulated", required=True, help="JSON impression vector or simulation result")

    p = sub.add_parser("optimize", parents=[common], help="search for a better waterfall")
    p.add_argument("--matrix", required=True)
    p.add_argument("--zeta")
    p.add_argument("--algo", choices=("sns", "mcts"), default="sns")
    p.add_argument("--init", default="empty", help="waterfall CSV or 'empty'")
    p.add_argument("--population")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("oracle", parents=[common], help="exhaustive one-instance-per-network optimum")
    p.add_argument("--matrix", required=True)
    p.add_argument("--zeta")
    p.add_argument("--networks")
    p.add_argument("--population")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic scenarios")
    p.add_argument("--kind", choices=("benchmark", "sales"), default="benchmark")
    p.add_argument("--users", type=int, default=40_000)
    p.add_argument("--days", type=int, default=31)
    p.add_argument("--mode", choices=("oracle", "pipeline"), default="oracle")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("report", parents=[common], help="learning-curve CSV from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        settings = resolve_settings(args)
        logging.basicConfig(level=str(settings["log_level"]).upper(), format="%(levelname)s %(name)s: %(message)s")
        inputs, out = COMMANDS[args.command](args, settings)
        if out is not None:
            _write_manifest(_manifest_path(out, args.command), args.command, inputs, settings, started)
    except WaterfallError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
