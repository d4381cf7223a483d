"""Command-line interface: ``pja {moments,simulate,estimate,mc,reproduce}``.

Every subcommand accepts ``--config file.json`` (a flat JSON object);
command-line flags override values from the file. The fully resolved
settings are written next to the main output as ``*.resolved.json`` and
can be fed back through ``--config`` to rerun the command.

Exit codes: 0 success, 2 invalid argument or domain, 3 I/O failure,
4 degenerate estimation.
"""
from __future__ import annotations

import argparse
import json
import math
import struct
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import stable_math as sm
from .activity import EstimationError, FirstStep, WeightScheme, two_step_point, two_step_weighted
from .levy_sim import (CompoundPoissonJumps, ModelError, ModelSpec, SampleGrid, StableJumps,
                       TemperedStableJumps, read_path, simulate_path)
from .mc_harness import (CASES, FULL_SCALE_REPS, ExperimentConfig, cov_check, curve_emit, lln_check,
                         rate_study, run_tables, write_csv)

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_DEGENERATE = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ARGS):
        super().__init__(message)
        self.code = code


DEFAULTS = {
    "moments": {"beta": 2.0, "mu_p": None, "mu_pq": None, "pi": None, "k": None, "pstar": None,
                "out": None},
    "simulate": {"case": None, "model": None, "beta": 1.5, "A": None, "lam": 0.25, "rate": 0.3333,
                 "size": 0.7746, "sigma1_sq": None, "sigma2": 1.0, "drift": 0.0, "M": 390, "T": 22.0,
                 "seed": 1, "out": "path.csv", "format": None},
    "estimate": {"input": None, "fs": "fixed_power", "p0": 0.1, "alpha": 1.0, "conf_level": 0.95,
                 "weight_half_width": None, "out": None},
    "mc": {"case": ["A"], "study": "tables", "reps": 1000, "seed": 1, "workers": None, "M": 390,
           "T": 22.0, "out_dir": ".", "beta": 1.5, "p": 0.6, "q": None, "fs": "fixed_power",
           "p0": 0.1, "alpha": 1.0, "conf_level": 0.95, "weight_half_width": None, "bins": 50,
           "levels": [390, 780, 1560], "delta_n": 1.0 / 2000.0},
    "reproduce": {"out_dir": ".", "paper": False, "reps": None, "seed": 1, "workers": None, "M": 390,
                  "T": 22.0, "bins": 50},
}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    ap = argparse.ArgumentParser(prog="pja", description="Jump activity estimation from power variations.")
    ap.add_argument("--version", action="version", version=f"pja {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON file of settings; flags override it", default=S)

    m = sub.add_parser("moments", help="stable moments, kernel values and optimal powers")
    common(m)
    m.add_argument("--beta", type=float, default=S)
    m.add_argument("--mu-p", dest="mu_p", type=float, default=S, metavar="P", help="E|Z|^P")
    m.add_argument("--mu-pq", dest="mu_pq", type=float, nargs=2, default=S, metavar=("P", "Q"),
                   help="E|Z1|^P |Z1+Z2|^Q")
    m.add_argument("--pi", type=float, default=S, metavar="A", help="scale constant for Levy coefficient A")
    m.add_argument("--k", type=float, nargs=2, default=S, metavar=("P", "Q"), help="kernel K_{P,Q}")
    m.add_argument("--pstar", type=float, default=S, metavar="BETA", help="variance-minimising power")
    m.add_argument("--out", default=S, help="also write the values as CSV")

    s = sub.add_parser("simulate", help="simulate a sampled path")
    common(s)
    s.add_argument("--case", choices=sorted(CASES), default=S)
    s.add_argument("--model", choices=["brownian", "stable", "tempered_stable", "compound_poisson"], default=S)
    for name, typ in (("beta", float), ("A", float), ("lam", float), ("rate", float), ("size", float),
                      ("sigma2", float), ("drift", float), ("M", int), ("T", float), ("seed", int)):
        s.add_argument(f"--{name}", type=typ, default=S)
    s.add_argument("--sigma1-sq", dest="sigma1_sq", type=float, default=S)
    s.add_argument("--out", default=S, help="output path (.csv or .bin)")
    s.add_argument("--format", choices=["csv", "bin"], default=S)

    e = sub.add_parser("estimate", help="two-step activity estimate for a path file")
    common(e)
    e.add_argument("input", nargs="?", default=S)
    e.add_argument("--fs", choices=["fixed_power", "truncated"], default=S)
    e.add_argument("--p0", type=float, default=S)
    e.add_argument("--alpha", type=float, default=S)
    e.add_argument("--conf-level", dest="conf_level", type=float, default=S)
    e.add_argument("--weight-half-width", dest="weight_half_width", type=float, default=S)
    e.add_argument("--out", default=S, help="also write the record as a one-row CSV")

    c = sub.add_parser("mc", help="Monte Carlo studies")
    common(c)
    c.add_argument("--case", action="append", choices=sorted(CASES), default=S)
    c.add_argument("--study", choices=["tables", "cov", "rate", "curves", "lln"], default=S)
    for name, typ in (("reps", int), ("seed", int), ("workers", int), ("M", int), ("T", float),
                      ("beta", float), ("p", float), ("q", float), ("p0", float), ("alpha", float),
                      ("bins", int)):
        c.add_argument(f"--{name}", type=typ, default=S)
    c.add_argument("--fs", choices=["fixed_power", "truncated"], default=S)
    c.add_argument("--conf-level", dest="conf_level", type=float, default=S)
    c.add_argument("--weight-half-width", dest="weight_half_width", type=float, default=S)
    c.add_argument("--levels", type=int, nargs="+", default=S, help="samples per day for the rate study")
    c.add_argument("--delta-n", dest="delta_n", type=float, default=S)
    c.add_argument("--out-dir", dest="out_dir", default=S)

    r = sub.add_parser("reproduce", help="both estimator tables for cases A-D plus the kernel curves")
    common(r)
    r.add_argument("--paper", action="store_true", default=S, help=f"use {FULL_SCALE_REPS} replications")
    for name, typ in (("reps", int), ("seed", int), ("workers", int), ("M", int), ("T", float), ("bins", int)):
        r.add_argument(f"--{name}", type=typ, default=S)
    r.add_argument("--out-dir", dest="out_dir", default=S)
    return ap


def resolve(command: str, given: dict) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    path = given.pop("config", None)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a flat JSON object")
        loaded.pop("command", None)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise CliError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    cfg.update(given)
    return cfg


def _echo(cfg: dict, command: str, target: Path) -> None:
    payload = {"command": command, **cfg}
    try:
        target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {target}: {exc}", EXIT_IO) from exc


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def _print_json(obj) -> None:
    print(json.dumps(obj, default=_json_default, allow_nan=True))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_moments(cfg: dict) -> int:
    beta = float(cfg["beta"])
    out = {}
    if cfg["mu_p"] is not None:
        out["mu_p"] = sm.mu_p(float(cfg["mu_p"]), beta)
    if cfg["mu_pq"] is not None:
        p, q = cfg["mu_pq"]
        out["mu_pq"] = sm.mu_pq(float(p), float(q), beta)
    if cfg["pi"] is not None:
        out["pi"] = sm.pi_const(float(cfg["pi"]), beta).value
    if cfg["k"] is not None:
        p, q = cfg["k"]
        k = sm.k_kernel(float(p), float(q), beta)
        out["k"] = k
        out["sqrt_k"] = math.sqrt(k) if k >= 0 else math.nan
    if cfg["pstar"] is not None:
        r = sm.search_optimal_power(float(cfg["pstar"]))
        out["pstar"] = r.p
        out["sqrt_k_min"] = math.sqrt(r.k_value)
        out["clamped"] = r.clamped
    if not out:
        raise CliError("nothing requested; use --mu-p, --mu-pq, --pi, --k or --pstar")
    _print_json(out)
    if cfg["out"] is not None:
        target = Path(cfg["out"])
        write_csv(target, ["name", "value"], out.items())
        _echo(cfg, "moments", target.with_name(target.name + ".resolved.json"))
    else:
        _echo(cfg, "moments", Path("moments.resolved.json"))
    return EXIT_OK


def build_model(cfg: dict) -> ModelSpec:
    if cfg["case"] is not None:
        if cfg["model"] is not None:
            raise CliError("give either --case or --model, not both")
        return CASES[cfg["case"]]
    kind = cfg["model"]
    if kind is None:
        raise CliError("a model is required: --case or --model")
    s1 = cfg["sigma1_sq"]
    beta = float(cfg["beta"])
    if kind == "brownian":
        return ModelSpec(sigma1_sq=1.0 if s1 is None else float(s1), drift=float(cfg["drift"]))
    s1 = 0.0 if s1 is None else float(s1)
    if kind == "stable":
        jumps = StableJumps.standard(beta) if cfg["A"] is None else StableJumps(beta, float(cfg["A"]))
    elif kind == "tempered_stable":
        if beta == 1.0:
            raise CliError("tempered stable with beta = 1 is not supported")
        jumps = TemperedStableJumps(1.0 if cfg["A"] is None else float(cfg["A"]), beta, float(cfg["lam"]))
    else:
        jumps = CompoundPoissonJumps(float(cfg["rate"]), float(cfg["size"]))
    return ModelSpec(sigma1_sq=s1, sigma2=float(cfg["sigma2"]), jumps=jumps, drift=float(cfg["drift"]))


def cmd_simulate(cfg: dict) -> int:
    model = build_model(cfg)
    grid = SampleGrid.from_daily(int(cfg["M"]), float(cfg["T"]))
    path = simulate_path(model, grid, int(cfg["seed"]))
    target = Path(cfg["out"])
    fmt = cfg["format"] or ("bin" if target.suffix == ".bin" else "csv")
    try:
        if fmt == "bin":
            path.to_binary(target)
        else:
            path.to_csv(target)
    except OSError as exc:
        raise CliError(f"cannot write {target}: {exc}", EXIT_IO) from exc
    cfg = {**cfg, "format": fmt}
    _echo(cfg, "simulate", target.with_name(target.name + ".resolved.json"))
    _print_json({"n": len(path.values), "first": path.values[0], "last": path.values[-1], "out": str(target)})
    return EXIT_OK


def _first_step(cfg: dict) -> FirstStep:
    return FirstStep(cfg["fs"], float(cfg["p0"]), float(cfg["alpha"]))


def cmd_estimate(cfg: dict) -> int:
    if cfg["input"] is None:
        raise CliError("an input path file is required")
    src = Path(cfg["input"])
    try:
        path = read_path(src)
    except OSError as exc:
        raise CliError(f"cannot read {src}: {exc}", EXIT_IO) from exc
    except (ValueError, struct.error) as exc:
        raise CliError(f"cannot parse {src}: {exc}") from exc
    fs = _first_step(cfg)
    try:
        if cfg["weight_half_width"] is None:
            est = two_step_point(path, fs, float(cfg["conf_level"]))
        else:
            scheme = WeightScheme.around_optimal(float(cfg["weight_half_width"]))
            est = two_step_weighted(path, scheme, fs, float(cfg["conf_level"]))
    except EstimationError as exc:
        raise CliError(f"degenerate estimation: {exc}", EXIT_DEGENERATE) from exc
    rec = est.to_dict()
    _print_json(rec)
    if cfg["out"] is not None:
        target = Path(cfg["out"])
        keys = [k for k in rec if k != "flags"]
        flags = ";".join(sorted(k for k, v in rec["flags"].items() if v))
        write_csv(target, keys + ["flags"], [[rec[k] for k in keys] + [flags]])
        _echo(cfg, "estimate", target.with_name(target.name + ".resolved.json"))
    else:
        _echo(cfg, "estimate", src.with_name(src.name + ".estimate.resolved.json"))
    return EXIT_OK


def _out_dir(cfg: dict) -> Path:
    d = Path(cfg["out_dir"])
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {d}: {exc}", EXIT_IO) from exc
    return d


def cmd_mc(cfg: dict) -> int:
    out = _out_dir(cfg)
    study = cfg["study"]
    cases = cfg["case"] if isinstance(cfg["case"], list) else [cfg["case"]]
    options = dict(fs_method=_first_step(cfg), conf_level=float(cfg["conf_level"]),
                   weight_half_width=cfg["weight_half_width"])
    workers = cfg["workers"]
    if study == "tables":
        res = run_tables(cases, reps=int(cfg["reps"]), base_seed=int(cfg["seed"]), M=int(cfg["M"]),
                         T=float(cfg["T"]), workers=workers, out_dir=out, bins=int(cfg["bins"]), **options)
        for s, r in zip(res.summaries, res.se_rows):
            st = s.estimators["beta_ts"]
            _print_json({"case": s.case_id, "median": st.median, "iqr": st.iqr, "mad": st.mad,
                         "exact_scaled_sd": r.exact_scaled_sd, "est_median": r.est_median,
                         "n_flagged": s.n_flagged})
    elif study == "cov":
        beta, p = float(cfg["beta"]), float(cfg["p"])
        q = p if cfg["q"] is None else float(cfg["q"])
        c = cov_check(beta, p, q, reps=int(cfg["reps"]), delta_n=float(cfg["delta_n"]), T=float(cfg["T"]),
                      seed=int(cfg["seed"]))
        rows = [[beta, p, q, f"{i}{j}", c.empirical[i, j], c.theory[i, j], c.rel_error[i, j]]
                for i in range(2) for j in range(2)]
        write_csv(out / "cov_check.csv", ["beta", "p", "q", "entry", "empirical", "theory", "rel_error"], rows)
        _print_json({"beta": beta, "p": p, "q": q, "max_rel_error": float(c.rel_error.max())})
    elif study == "rate":
        rows = []
        for cid in cases:
            cfgx = ExperimentConfig(case_id=cid, T=float(cfg["T"]), reps=int(cfg["reps"]),
                                    base_seed=int(cfg["seed"]), study_kind="rate_study", **options)
            r = rate_study(cfgx, cfg["levels"], workers)
            rows += [[cid, dn, sd, r["slope"]] for dn, sd in zip(r["delta_n"], r["sd"])]
            _print_json({"case": cid, "slope": r["slope"]})
        write_csv(out / "rate_study.csv", ["case", "delta_n", "sd_beta_ts", "slope"], rows)
    elif study == "curves":
        curve_emit(default_beta_grid(), default_p_grid(), out)
        _print_json({"out_dir": str(out)})
    else:
        mean, limit = lln_check(float(cfg["beta"]), float(cfg["p"]), int(cfg["reps"]),
                                float(cfg["delta_n"]), float(cfg["T"]), int(cfg["seed"]))
        write_csv(out / "lln.csv", ["beta", "p", "mean_scaled_pv", "limit", "rel_error"],
                  [[float(cfg["beta"]), float(cfg["p"]), mean, limit, abs(mean / limit - 1.0)]])
        _print_json({"mean": mean, "limit": limit})
    _echo(cfg, "mc", out / f"mc_{study}.resolved.json")
    return EXIT_OK


def default_beta_grid() -> np.ndarray:
    return np.round(np.arange(0.8, 2.0 + 1e-9, 0.05), 10)


def default_p_grid() -> np.ndarray:
    return np.round(np.arange(0.05, 1.0 + 1e-9, 0.01), 10)


def cmd_reproduce(cfg: dict) -> int:
    out = _out_dir(cfg)
    reps = cfg["reps"] if cfg["reps"] is not None else (FULL_SCALE_REPS if cfg["paper"] else 1000)
    cfg = {**cfg, "reps": int(reps)}
    res = run_tables(sorted(CASES), reps=int(reps), base_seed=int(cfg["seed"]), M=int(cfg["M"]),
                     T=float(cfg["T"]), workers=cfg["workers"], out_dir=out, bins=int(cfg["bins"]))
    curve_emit(default_beta_grid(), default_p_grid(), out)
    for s, r in zip(res.summaries, res.se_rows):
        st = s.estimators["beta_ts"]
        _print_json({"case": s.case_id, "median": st.median, "iqr": st.iqr,
                     "se_ratio": r.ratio, "n_flagged": s.n_flagged})
    _echo(cfg, "reproduce", out / "reproduce.resolved.json")
    return EXIT_OK


COMMANDS = {"moments": cmd_moments, "simulate": cmd_simulate, "estimate": cmd_estimate,
            "mc": cmd_mc, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    given = {k: v for k, v in vars(args).items() if k != "command"}
    try:
        cfg = resolve(args.command, given)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"pja: error: {exc}", file=sys.stderr)
        return exc.code
    except (sm.DomainError, ModelError, ValueError, TypeError) as exc:
        print(f"pja: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except OSError as exc:
        print(f"pja: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
