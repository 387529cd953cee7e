"""Command line front-end.

Run configurations are flat ``key = value`` text files (``#`` starts a
comment). Every key is typed and validated before any computation starts;
unknown keys are rejected. See README for the full key list.

Subcommands: ``price``, ``boundary``, ``level-test`` and ``report``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
from joblib import Parallel, delayed

from .exceptions import LsmcPdeError, SchemaError
from .model import ExerciseSchedule, HestonSpec, MultiHestonSpec, simulate_paths

log = logging.getLogger("lsmcpde")

ALGORITHMS = ("hybrid", "hybrid-mlmc", "lsmc", "fd", "level-test", "european-check")
IO_EXIT = 8


# -- schema -----------------------------------------------------------------


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise ValueError("expected integers")
    return tuple(int(v) for v in vals)


def _int(text: str) -> int:
    val = float(text)
    if val != int(val):
        raise ValueError("expected an integer")
    return int(val)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _optional_int(text: str):
    return None if text.strip().lower() in ("none", "auto", "") else _int(text)


def _choice(*options):
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


def _positive(v):
    return np.all(np.asarray(v) > 0)


@dataclass(frozen=True)
class Field:
    parse: Callable[[str], Any]
    default: Any
    check: Optional[Callable[[Any], bool]] = None
    rule: str = ""


SCHEMA = {
    "algorithm": Field(_choice(*ALGORITHMS), "hybrid"),
    "model": Field(_choice("heston", "multi-heston"), "heston"),
    "payoff": Field(_choice("put", "max-put"), "put"),
    # model parameters; two values per field for the two-asset model
    "r": Field(float, 0.02),
    "kappa": Field(_floats, (5.0,), _positive, "must be positive"),
    "theta": Field(_floats, (0.16,), _positive, "must be positive"),
    "eta": Field(_floats, (0.9,), _positive, "must be positive"),
    "rho": Field(_floats, (0.1,), lambda v: np.all(np.abs(v) <= 1), "entries must lie in [-1, 1]"),
    "v0": Field(_floats, (0.15,), lambda v: np.all(np.asarray(v) >= 0), "must be nonnegative"),
    "s0": Field(_floats, (10.0,), _positive, "must be positive"),
    # option
    "strike": Field(float, 10.0, lambda v: v > 0, "must be positive"),
    "maturity": Field(float, 1.0, lambda v: v > 0, "must be positive"),
    "exercise_dates": Field(_int, 12, lambda v: v >= 1, "must be at least 1"),
    # numerics
    "trials": Field(_int, 1, lambda v: v >= 1, "must be at least 1"),
    "paths": Field(_ints, (10_000,), lambda v: min(v) >= 1, "must be positive"),
    "resolutions": Field(_ints, (512,), lambda v: all(x >= 2 and not x & (x - 1) for x in v), "must be powers of two"),
    "clusters": Field(_optional_int, None, lambda v: v is None or v >= 1, "must be positive"),
    "degree": Field(_int, 5, lambda v: v >= 0, "must be nonnegative"),
    "steps": Field(_int, 1200, lambda v: v >= 1, "must be positive"),
    "x_min": Field(float, -3.0, lambda v: v < 0, "must be negative"),
    "x_max": Field(float, 3.0, lambda v: v > 0, "must be positive"),
    "R": Field(float, 1e8, lambda v: v > 0, "must be positive"),
    "low": Field(_bool, True),
    "timing_repeats": Field(_int, 3, lambda v: v >= 1, "must be at least 1"),
    # full LSMC baseline
    "lsmc_paths": Field(_int, 100_000, lambda v: v >= 1, "must be positive"),
    "lsmc_low_paths": Field(_int, 100_000, lambda v: v >= 0, "must be nonnegative"),
    "lsmc_degree": Field(_int, 3, lambda v: v >= 0, "must be nonnegative"),
    # finite differences
    "fd_ns": Field(_int, 512, lambda v: v >= 4, "must be at least 4"),
    "fd_nv": Field(_int, 128, lambda v: v >= 4, "must be at least 4"),
    "fd_nt": Field(_optional_int, None, lambda v: v is None or v >= 1, "must be positive"),
    "fd_smax": Field(float, 53.0, lambda v: v > 0, "must be positive"),
    "fd_vmax": Field(float, 1.0, lambda v: v > 0, "must be positive"),
    "fd_compare": Field(_bool, False),
    # level test
    "level_resolutions": Field(_ints, (32, 64, 128, 256, 512), lambda v: len(v) >= 3, "needs three levels"),
    "reference_resolution": Field(_int, 1024, lambda v: v >= 2, "must be at least 2"),
    "level_steps": Field(_int, 100, lambda v: v >= 1, "must be positive"),
    # boundary extraction
    "boundary_lattice": Field(_int, 100, lambda v: v >= 2, "must be at least 2"),
    "boundary_window": Field(_floats, (0.5, 1.5), lambda v: len(v) == 2 and 0 < v[0] < v[1], "needs 0 < lo < hi"),
    # bookkeeping
    "seed": Field(_int, 0, lambda v: v >= 0, "must be nonnegative"),
    "threads": Field(_int, 1, lambda v: v >= 1, "must be at least 1"),
    "output": Field(str, "results"),
    "name": Field(str, ""),
}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and validate a flat configuration; returns every key with defaults filled."""
    cfg = {k: f.default for k, f in SCHEMA.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise SchemaError(f"{source}:{lineno}: unknown key '{key}'")
        if key in seen:
            raise SchemaError(f"{source}:{lineno}: duplicate key '{key}'")
        seen.add(key)
        cfg[key] = _convert(key, value, f"{source}:{lineno}")
    return validate(cfg)


def _convert(key, value, where):
    field = SCHEMA[key]
    try:
        out = field.parse(value)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{where}: bad value for '{key}': {exc}") from None
    if field.check is not None and not field.check(out):
        raise SchemaError(f"{where}: '{key}' {field.rule}")
    return out


def validate(cfg: dict) -> dict:
    unknown = set(cfg) - set(SCHEMA)
    if unknown:
        raise SchemaError(f"unknown key '{sorted(unknown)[0]}'")
    for key, field in SCHEMA.items():
        if field.check is not None and not field.check(cfg[key]):
            raise SchemaError(f"'{key}' {field.rule}")
    two = cfg["model"] == "multi-heston"
    width = 2 if two else 1
    for key in ("kappa", "theta", "eta", "v0", "s0"):
        if len(cfg[key]) != width:
            raise SchemaError(f"'{key}' needs {width} value(s) for the {cfg['model']} model")
    if len(cfg["rho"]) != (6 if two else 1):
        raise SchemaError("'rho' needs 6 upper-triangle entries for multi-heston, 1 otherwise")
    if (cfg["payoff"] == "max-put") != two:
        raise SchemaError("'payoff' must be max-put exactly for the multi-heston model")
    if cfg["steps"] % cfg["exercise_dates"]:
        raise SchemaError("'steps' must be a multiple of 'exercise_dates'")
    if len(cfg["paths"]) != len(cfg["resolutions"]):
        raise SchemaError("'paths' and 'resolutions' need the same number of levels")
    if cfg["algorithm"] == "hybrid" and len(cfg["paths"]) != 1:
        raise SchemaError("'hybrid' runs a single level; use hybrid-mlmc for several")
    if cfg["clusters"] is not None and cfg["clusters"] > cfg["paths"][0]:
        raise SchemaError("'clusters' cannot exceed the level-0 path count")
    if cfg["reference_resolution"] <= max(cfg["level_resolutions"]):
        raise SchemaError("'reference_resolution' must exceed every level resolution")
    if two and cfg["algorithm"] == "fd":
        raise SchemaError("'fd' is only available for the heston model")
    return cfg


def load_config(name: str) -> dict:
    """Load a config by path, or by bundled name (with or without ``.cfg``)."""
    path = Path(name)
    if path.is_file():
        return parse_config(path.read_text(), str(path))
    bundled = name if name.endswith(".cfg") else name + ".cfg"
    res = resources.files("lsmcpde") / "configs" / bundled
    if res.is_file():
        return parse_config(res.read_text(), bundled)
    raise FileNotFoundError(f"no config file or bundled config named '{name}'")


def bundled_configs() -> list:
    return sorted(p.name for p in (resources.files("lsmcpde") / "configs").iterdir() if p.name.endswith(".cfg"))


# -- builders ---------------------------------------------------------------


def build_model(cfg: dict):
    if cfg["model"] == "heston":
        return HestonSpec(cfg["r"], cfg["kappa"][0], cfg["theta"][0], cfg["eta"][0], cfg["rho"][0],
                          cfg["v0"][0], cfg["s0"][0])
    rho = np.eye(4)
    rho[np.triu_indices(4, 1)] = cfg["rho"]
    rho = np.triu(rho) + np.triu(rho, 1).T
    return MultiHestonSpec(cfg["r"], cfg["kappa"], cfg["theta"], cfg["eta"], cfg["v0"], cfg["s0"], rho)


def build_option(cfg: dict):
    from .pricer import OptionSpec

    return OptionSpec(cfg["strike"], ExerciseSchedule(cfg["maturity"], cfg["exercise_dates"]), cfg["payoff"])


def build_pricer(cfg: dict, seed: int, low: Optional[bool] = None):
    from .pricer import LSMCPDEPricer

    return LSMCPDEPricer(
        model=build_model(cfg),
        option=build_option(cfg),
        n_paths=cfg["paths"],
        resolutions=cfg["resolutions"],
        clusters=cfg["clusters"],
        degree=cfg["degree"],
        n_steps=cfg["steps"],
        seed=seed,
        R=cfg["R"],
        x_min=cfg["x_min"],
        x_max=cfg["x_max"],
        low=cfg["low"] if low is None else low,
    )


def fd_config(cfg: dict):
    from .baselines import FdConfig

    return FdConfig(cfg["fd_ns"], cfg["fd_nv"], cfg["fd_nt"], cfg["fd_smax"], 0.0, cfg["fd_vmax"])


# -- trials -----------------------------------------------------------------


def run_trial(cfg: dict, seed: int) -> dict:
    """One trial of a pricing algorithm; returns ATM estimates and timings."""
    algo = cfg["algorithm"]
    t0 = time.perf_counter()
    if algo in ("hybrid", "hybrid-mlmc"):
        pricer = build_pricer(cfg, seed).fit()
        res = pricer.result_
        return {
            "direct": res.direct_atm,
            "low": res.low_atm,
            "time_direct": res.timings.get("direct"),
            "time_low": res.timings.get("low"),
        }
    if algo == "lsmc":
        from .baselines import lsmc_full

        model = build_model(cfg)
        out = lsmc_full(model, cfg["strike"], cfg["maturity"], cfg["exercise_dates"], cfg["lsmc_paths"],
                        cfg["lsmc_degree"], cfg["steps"], seed, cfg["lsmc_low_paths"] or None)
        return {"direct": out.direct, "low": out.low, "time_direct": time.perf_counter() - t0, "time_low": None}
    if algo == "fd":
        from .baselines import fd_bermudan_2d

        model = build_model(cfg)
        out = fd_bermudan_2d(model, cfg["strike"], cfg["maturity"], cfg["exercise_dates"], fd_config(cfg))
        return {"direct": out.value_at(model.s0, model.v0), "low": None,
                "time_direct": time.perf_counter() - t0, "time_low": None, "fd_steps": out.n_t}
    if algo == "european-check":
        return european_check(cfg, seed)
    raise SchemaError(f"algorithm '{algo}' is not a pricing run; use the level-test command")


def european_check(cfg: dict, seed: int) -> dict:
    """Never-exercise hybrid estimate (one exercise date) against the CF oracle
    and, for the single-asset model, the FD European value."""
    from .baselines import FdConfig, fd_bermudan_2d, heston_european_cf
    from .pricer import LSMCPDEPricer, OptionSpec

    model = build_model(cfg)
    if model.dim != 1:
        raise SchemaError("european-check is available for the heston model")
    t0 = time.perf_counter()
    option = OptionSpec(cfg["strike"], ExerciseSchedule(cfg["maturity"], 1), "put")
    prices = []
    for k in range(cfg["trials"]):
        p = LSMCPDEPricer(model, option, cfg["paths"][:1], cfg["resolutions"][-1:], None, cfg["degree"],
                          cfg["steps"], seed + k, cfg["R"], cfg["x_min"], cfg["x_max"]).fit()
        prices.append(p.result_.direct_atm)
    cf = heston_european_cf(model, cfg["strike"], cfg["maturity"])
    fd = fd_bermudan_2d(model, cfg["strike"], cfg["maturity"], cfg["exercise_dates"], fd_config(cfg),
                        early_exercise=False).value_at(model.s0, model.v0)
    return {"direct": float(np.mean(prices)), "low": None, "cf": cf, "fd": fd,
            "hybrid_std_error": float(np.std(prices, ddof=1) / math.sqrt(len(prices))) if len(prices) > 1 else None,
            "time_direct": time.perf_counter() - t0, "time_low": None}


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    arr = np.array(vals)
    return {
        "values": [float(v) for v in arr],
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
    }


def run_trials(cfg: dict, seed: int, threads: int = 1) -> list:
    n = 1 if cfg["algorithm"] in ("fd", "european-check") else cfg["trials"]
    seeds = [seed + k for k in range(n)]
    if threads > 1 and n > 1:
        return Parallel(n_jobs=threads)(delayed(run_trial)(cfg, s) for s in seeds)
    return [run_trial(cfg, s) for s in seeds]


def price_summary(cfg: dict, seed: int, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    trials = run_trials(cfg, seed, threads)
    # run time: minimum over repeated runs of the first trial
    times_d = [trials[0]["time_direct"]]
    times_l = [trials[0]["time_low"]]
    for _ in range(cfg["timing_repeats"] - 1):
        again = run_trial(cfg, seed)
        times_d.append(again["time_direct"])
        times_l.append(again["time_low"])
    extra = {k: v for k, v in trials[0].items() if k not in ("direct", "low", "time_direct", "time_low")}
    return {
        "algorithm": cfg["algorithm"],
        "name": cfg["name"],
        "seed": seed,
        "trials": len(trials),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()},
        "direct": _stats(t["direct"] for t in trials),
        "low": _stats(t["low"] for t in trials),
        "extra": extra,
        "runtime": {
            "direct_s": min(t for t in times_d if t is not None) if any(t is not None for t in times_d) else None,
            "low_s": min(t for t in times_l if t is not None) if any(t is not None for t in times_l) else None,
        },
        "wall_time_s": time.perf_counter() - t0,
    }


# -- commands ---------------------------------------------------------------


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _label(cfg, args) -> str:
    if cfg["name"]:
        return cfg["name"]
    return Path(args.config).stem


def _effective(args, cfg):
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    return validate(cfg)


def cmd_price(args) -> int:
    cfg = _effective(args, load_config(args.config))
    if cfg["algorithm"] == "level-test":
        return cmd_level_test(args)
    summary = price_summary(cfg, cfg["seed"], cfg["threads"])
    out = _out_dir(args, cfg)
    path = out / f"summary_{_label(cfg, args)}.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    d = summary["direct"]
    line = f"{cfg['algorithm']}: direct {d['mean']:.4f} +- {d['std']:.4f} over {summary['trials']} trial(s)"
    if summary["low"]:
        line += f", low {summary['low']['mean']:.4f} +- {summary['low']['std']:.4f}"
    print(line)
    print(f"wrote {path}")
    return 0


def cmd_boundary(args) -> int:
    from .pricer import extract_boundary, variance_band

    cfg = _effective(args, load_config(args.config))
    if cfg["model"] != "heston":
        raise SchemaError("boundary extraction is available for the heston model")
    pricer = build_pricer(cfg, cfg["seed"], low=False).fit()
    model, option = pricer.model, pricer.option
    band = variance_band(pricer.paths_[0])
    bnd = extract_boundary(pricer.coeffs_, option, band, model.s0, tuple(cfg["boundary_window"]),
                           cfg["boundary_lattice"])
    out = _out_dir(args, cfg)
    label = _label(cfg, args)
    bnd.to_csv(out / f"boundary_{label}.csv")
    for n in band:
        pricer.coeffs_[n].to_csv(out / f"coeffs_{label}_date{n:02d}.csv")
    summary = {"name": label, "seed": cfg["seed"], "dates": bnd.dates,
               "exercise_fraction": [float(i.mean()) for i in bnd.indicator]}
    if cfg["fd_compare"]:
        from .baselines import fd_bermudan_2d

        fd = fd_bermudan_2d(model, cfg["strike"], cfg["maturity"], cfg["exercise_dates"], fd_config(cfg))
        agree = [float(np.mean(fd.exercise_indicator(n, bnd.spots, lat, cfg["strike"]) == ind))
                 for n, lat, ind in zip(bnd.dates, bnd.lattices, bnd.indicator)]
        summary["fd_agreement"] = agree
        print("FD agreement per date: " + " ".join(f"{a:.3f}" for a in agree))
    (out / f"boundary_{label}.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote boundary data for {len(bnd.dates)} dates to {out}")
    return 0


def cmd_level_test(args) -> int:
    from .mlmc import level_test
    from .pricer import OptionSpec

    cfg = _effective(args, load_config(args.config))
    model = build_model(cfg)
    option = build_option(cfg)
    report = level_test(
        model,
        lambda g: option.payoff(g, model.s0),
        cfg["level_resolutions"],
        cfg["reference_resolution"],
        cfg["trials"],
        cfg["seed"],
        cfg["maturity"],
        cfg["level_steps"],
        cfg["timing_repeats"],
        cfg["x_min"],
        cfg["x_max"],
    )
    out = _out_dir(args, cfg)
    label = _label(cfg, args)
    report.to_csv(out / f"level_test_{label}.csv")
    summary = {
        "algorithm": "level-test",
        "name": label,
        "seed": cfg["seed"],
        "trials": cfg["trials"],
        "alpha": report.alpha,
        "beta": report.beta,
        "gamma": report.gamma,
        "r2": report.r2,
        "degenerate": report.degenerate,
        "levels": report.rows(),
    }
    (out / f"level_test_{label}.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"alpha {report.alpha:.3f}  beta {report.beta:.3f}  gamma {report.gamma:.3f}")
    return 0


def render_report(directory) -> str:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    files = sorted(directory.glob("summary_*.json"))
    if not files:
        raise FileNotFoundError(f"no summary JSON files in {directory}")
    rows = []
    for f in files:
        try:
            data = json.loads(f.read_text())
            label = data.get("name") or f.stem[len("summary_"):]
            for kind in ("direct", "low"):
                est = data.get(kind)
                if est:
                    rt = data["runtime"].get(f"{kind}_s")
                    rows.append((label, data["algorithm"], kind, est["mean"], est["std"], data["trials"], rt))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{f}: corrupt summary ({exc})") from None
    head = f"{'run':<24} {'algorithm':<14} {'estimate':<8} {'mean':>8} {'std':>8} {'trials':>6} {'run time (s)':>12}"
    lines = [head, "-" * len(head)]
    for label, algo, kind, mean, std, n, rt in rows:
        rts = f"{rt:12.2f}" if rt is not None else f"{'-':>12}"
        lines.append(f"{label:<24} {algo:<14} {kind:<8} {mean:8.4f} {std:8.4f} {n:6d} {rts}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    print(render_report(args.dir or args.out or "results"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsmcpde", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="config path or bundled config name")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="worker processes for trials")
        p.add_argument("--out", default=None, help="output directory")

    common(sub.add_parser("price", help="run pricing trials and write a summary JSON"))
    common(sub.add_parser("boundary", help="extract exercise boundaries"))
    common(sub.add_parser("level-test", help="multilevel bias/variance/cost slopes"))
    rep = sub.add_parser("report", help="tabulate summary JSON files")
    common(rep, needs_config=False)
    rep.add_argument("dir", nargs="?", default=None)
    sub.add_parser("configs", help="list bundled configs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    commands = {
        "price": cmd_price,
        "boundary": cmd_boundary,
        "level-test": cmd_level_test,
        "report": cmd_report,
        "configs": lambda a: print("\n".join(bundled_configs())) or 0,
    }
    try:
        return commands[args.command](args)
    except LsmcPdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
