"""Configuration-driven experiment runner.

Usage::

    mmtc <subcommand> [--config FILE] [--set KEY=VALUE ...] [--seed N]
                      [--out DIR] [--threads N]

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment.  ``--set`` overrides file entries.  List-valued keys accept
comma-separated values or a ``start:stop:step`` range (stop included).
Keys marked as power or SNR accept a ``dB`` suffix, e.g. ``-115 dB``.

Each run writes ``<subcommand>.csv`` (one row per sweep point, numbers with
9 significant digits) and ``<subcommand>.json`` (config, seed, version and
wall time) into the output directory.  The default directory is taken from
``$MMTC_OUT`` and falls back to ``./results``.

CSV schemas (version ``CSV_SCHEMA_VERSION``):

juice
    control_threshold, pf_target, lam, tau2_se, pm_analytic, delay_analytic,
    throughput_analytic, pm_hat, pm_ci, pf_hat, pf_ci, nmse, nmse_ci,
    mean_delay, throughput_hat, trials
csa-design
    label, code, k, mode, eps, alpha, n_bar, rate, error_floor, G_star, Lambda
csa-sim
    G, T_mean, T_ci, PLR_mean, PLR_ci, frames, T_asym, PLR_asym
pnc-analysis
    snr_db, G, M, r, T, energy_eff, clamped, r_star_throughput, r_star_energy
pnc-sim
    snr_db, G, M, r, T_sim, T_ci, tau_sim, tau_ci, T_analytic, degree1_T,
    nc_messages, trials
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import re
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import csa, csa_sim, juice, pnc
from .numerics import RngStream

CSV_SCHEMA_VERSION = 1
OUT_ENV = "MMTC_OUT"
COMMANDS = ("juice", "csa-design", "csa-sim", "pnc-analysis", "pnc-sim")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


# ---------------------------------------------------------------- value parsing

_DB = re.compile(r"^\s*([-+]?[0-9.eE+-]+)\s*dB\s*$")


def _float(text, db=False):
    m = _DB.match(text)
    if m:
        if not db:
            raise ValueError("dB units are not accepted here")
        return 10.0 ** (float(m.group(1)) / 10.0)
    return float(text)


def _list(text, conv):
    text = text.strip()
    if ":" in text and "," not in text:
        parts = [p.strip() for p in text.split(":")]
        if len(parts) != 3:
            raise ValueError("ranges are start:stop:step")
        a, b, s = (float(p) for p in parts)
        if s <= 0 or b < a:
            raise ValueError("range needs step > 0 and stop >= start")
        n = int(np.floor((b - a) / s + 1e-9)) + 1
        return [conv(repr(round(a + i * s, 12))) for i in range(n)]
    return [conv(p.strip()) for p in text.split(",") if p.strip()]


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError("expected an integer")
    return int(v)


# kind -> (parser, formatter)
_KINDS = {
    "int": (_int, str),
    "float": (float, repr),
    "power": (lambda t: _float(t, db=True), repr),
    "str": (str.strip, str),
    "ints": (lambda t: _list(t, _int), lambda v: ",".join(map(str, v))),
    "floats": (lambda t: _list(t, float), lambda v: ",".join(map(repr, v))),
    "powers": (lambda t: _list(t, lambda x: _float(x, db=True)), lambda v: ",".join(map(repr, v))),
}


@dataclass(frozen=True)
class Param:
    kind: str
    default: object = None
    required: bool = False
    check: object = None          # callable(value) -> error text or None
    doc: str = ""


def _in(lo, hi, lo_open=False, hi_open=False):
    def chk(v):
        vals = v if isinstance(v, list) else [v]
        for x in vals:
            if (x <= lo if lo_open else x < lo) or (x >= hi if hi_open else x > hi):
                lb, rb = "(" if lo_open else "[", ")" if hi_open else "]"
                return f"must lie in {lb}{lo}, {hi}{rb}, got {x}"
        return None
    return chk


def _choice(*opts):
    return lambda v: None if v in opts else f"must be one of {', '.join(opts)}, got {v!r}"


def _nonempty(v):
    return None if v else "must not be empty"


SCHEMAS = {
    "juice": {
        "n_users": Param("int", 2000, check=_in(2, 10**6)),
        "ratio": Param("float", 0.4, check=_in(0, 1, lo_open=True)),
        "demand_prob": Param("float", required=True, check=_in(0, 1)),
        "large_scale": Param("power", juice.BETA_DEFAULT, check=_in(0, np.inf, lo_open=True)),
        "noise_var": Param("power", juice.NOISE_VAR_DEFAULT, check=_in(0, np.inf)),
        "control_threshold": Param("floats", [1.2e-6], check=_in(0, np.inf)),
        "pf": Param("floats", [1e-2], check=_in(0, 1, lo_open=True, hi_open=True)),
        "trials": Param("int", 20, check=_in(1, 10**7)),
        "denoiser": Param("str", "proposed", check=_choice("proposed", "conventional")),
        "max_iters": Param("int", 50, check=_in(1, 10**5)),
        "tol": Param("float", 1e-3, check=_in(0, 1, lo_open=True)),
        "se_samples": Param("int", 200_000, check=_in(1000, 10**8)),
    },
    "csa-design": {
        "distributions": Param("str", "", doc="comma list of named designs to evaluate"),
        "code": Param("str", "repetition", check=_choice("repetition", "mds")),
        "lengths": Param("ints", [2, 3, 4, 5, 6]),
        "k": Param("int", 1, check=_in(1, 64)),
        "mode": Param("str", "packet", check=_choice("packet", "slot")),
        "eps": Param("float", 0.1, check=_in(0, 1, hi_open=True)),
        "alpha": Param("float", 0.97, check=_in(0, 1, lo_open=True, hi_open=True)),
        "constraint": Param("str", "n_bar", check=_choice("n_bar", "rate", "none")),
        "value": Param("float", 3.2, check=_in(0, np.inf, lo_open=True)),
    },
    "csa-sim": {
        "distribution": Param("str", "r2", doc="named design or n:Lambda pairs, e.g. 2:0.5,3:0.5"),
        "k": Param("int", 1, check=_in(1, 64)),
        "mode": Param("str", "packet", check=_choice("packet", "slot")),
        "eps": Param("float", 0.1, check=_in(0, 1, hi_open=True)),
        "n_slots": Param("int", 1000, check=_in(2, 10**7)),
        "G": Param("floats", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0], check=_in(0, 10)),
        "frames": Param("int", 200, check=_in(1, 10**7)),
    },
    "pnc-analysis": {
        "n_slots": Param("int", 100, check=_in(2, 10**6)),
        "snr": Param("powers", [10 ** 1.5], check=_in(0, np.inf, lo_open=True)),
        "G": Param("floats", [round(0.2 * i, 1) for i in range(1, 11)], check=_in(0, 10, lo_open=True)),
        "r": Param("ints", [2, 3, 4, 5, 6], check=_nonempty),
        "k_max": Param("int", pnc.KMAX_DEFAULT, check=_in(1, pnc.KMAX_LIMIT)),
        "mc_samples": Param("int", 200_000, check=_in(1000, 10**8)),
    },
    "pnc-sim": {
        "n_slots": Param("int", 100, check=_in(2, 10**6)),
        "snr": Param("powers", [10 ** 1.5], check=_in(0, np.inf, lo_open=True)),
        "G": Param("floats", [round(0.2 * i, 1) for i in range(1, 11)], check=_in(0, 10, lo_open=True)),
        "r": Param("int", 2, check=_in(1, 64)),
        "k_max": Param("int", pnc.KMAX_DEFAULT, check=_in(1, pnc.KMAX_LIMIT)),
        "trials": Param("int", 200, check=_in(1, 10**7)),
        "n_symbols": Param("int", 1, check=_in(1, 4096)),
        "mc_samples": Param("int", 200_000, check=_in(1000, 10**8)),
    },
}


@dataclass
class ExperimentConfig:
    command: str
    params: dict
    seed: int = 0
    out: str = "results"
    threads: int = 1
    sweep: dict = field(default_factory=dict)   # list-valued parameters

    def to_record(self) -> dict:
        return {"command": self.command, "seed": self.seed, "threads": self.threads,
                "params": {k: (list(v) if isinstance(v, list) else v) for k, v in self.params.items()}}


def read_pairs(text: str) -> dict:
    """Parse ``key = value`` lines; later keys override earlier ones."""
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def parse_config(command: str, pairs: dict, seed: int = 0, out: str | None = None, threads: int = 1) -> ExperimentConfig:
    """Validate raw string pairs against the subcommand schema."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {command!r}; expected one of {', '.join(COMMANDS)}")
    schema = SCHEMAS[command]
    unknown = sorted(set(pairs) - set(schema))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key for {command}")
    params = {}
    for key, p in schema.items():
        if key not in pairs:
            if p.required:
                raise ConfigError(f"{key}: missing required value")
            params[key] = list(p.default) if isinstance(p.default, list) else p.default
            continue
        try:
            val = _KINDS[p.kind][0](pairs[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {pairs[key]!r} ({exc})") from None
        params[key] = val
    for key, p in schema.items():
        if p.check is not None:
            msg = p.check(params[key])
            if msg:
                raise ConfigError(f"{key}: {msg}")
    if not 0 <= int(seed) < 2**64:
        raise ConfigError("seed: must be a 64-bit unsigned integer")
    if int(threads) < 1:
        raise ConfigError("threads: must be >= 1")
    cfg = ExperimentConfig(command, params, int(seed), out or os.environ.get(OUT_ENV, "results"), int(threads))
    cfg.sweep = {k: v for k, v in params.items() if isinstance(v, list)}
    _validate_module(cfg)
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical ``key = value`` text; parsing it gives back the same params."""
    schema = SCHEMAS[cfg.command]
    return "".join(f"{k} = {_KINDS[schema[k].kind][1](cfg.params[k])}\n"
                   for k in sorted(schema) if cfg.params[k] is not None)


def _resolve_distribution(spec: str, k: int):
    spec = spec.strip()
    if spec in csa.PAPER_DISTRIBUTIONS:
        terms, kk, _, _ = csa.PAPER_DISTRIBUTIONS[spec]
        return csa.DegreeDistribution.from_poly(terms, kk)
    try:
        terms = {int(a): float(b) for a, b in (t.split(":") for t in spec.split(","))}
    except ValueError:
        raise ConfigError(f"distribution: expected a named design or n:Lambda pairs, got {spec!r}") from None
    return csa.DegreeDistribution.from_poly(terms, k)


def _validate_module(cfg: ExperimentConfig):
    """Build the module objects once so that every precondition is checked up front."""
    p = cfg.params
    try:
        if cfg.command == "juice":
            _juice_cfg(p, p["control_threshold"][0])
        elif cfg.command == "csa-design":
            if p["distributions"]:
                for name in p["distributions"].split(","):
                    if name.strip() not in csa.PAPER_DISTRIBUTIONS:
                        raise ConfigError(f"distributions: unknown design {name.strip()!r}")
            else:
                _codeset(p)
        elif cfg.command == "csa-sim":
            dist = _resolve_distribution(p["distribution"], p["k"])
            csa.ErasureChannelSpec(p["mode"], p["eps"])
            if max(dist.codes.lengths) > p["n_slots"]:
                raise ConfigError("n_slots: smaller than the longest code")
        elif cfg.command in ("pnc-analysis", "pnc-sim"):
            rs = p["r"] if isinstance(p["r"], list) else [p["r"]]
            if max(rs) >= p["n_slots"]:
                raise ConfigError("r: must be smaller than n_slots")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _juice_cfg(p, varsigma):
    return juice.JuiceConfig(n_users=p["n_users"], ratio=p["ratio"], demand_prob=p["demand_prob"],
                             large_scale=p["large_scale"], control_threshold=varsigma,
                             noise_var=p["noise_var"], max_iters=p["max_iters"], tol=p["tol"])


def _codeset(p):
    if p["code"] == "repetition":
        return csa.CodeSet.repetition(p["lengths"])
    return csa.CodeSet.mds(p["k"], p["lengths"])


# ---------------------------------------------------------------- runners

def _pool_map(fn, args, threads):
    if threads > 1 and len(args) > 1:
        with ProcessPoolExecutor(min(threads, len(args))) as ex:
            return list(ex.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def _juice_point(p, varsigma, pf, stream):
    c = _juice_cfg(p, varsigma)
    tr = juice.state_evolution(c, n_samples=p["se_samples"])
    tau = float(np.sqrt(tr[-1]))
    _, pm = juice.error_probabilities(juice.detection_threshold(pf, tau), tau, varsigma, c.large_scale, c.lam)
    m = juice.simulate_juice(c, pf, p["trials"], stream, denoiser=p["denoiser"])
    return [varsigma, pf, c.lam, tr[-1], pm, juice.delay_distribution(c.lam, pm).mean,
            juice.network_throughput(c.n_users, c.demand_prob, c.lam, pm), m.pm_hat, m.pm_ci,
            m.pf_hat, m.pf_ci, m.nmse, m.nmse_ci, m.mean_delay, m.throughput_hat, m.trials]


def run_juice(cfg, stream):
    p = cfg.params
    grid = [(v, pf) for v in p["control_threshold"] for pf in p["pf"]]
    args = [(p, v, pf, stream.child(i)) for i, (v, pf) in enumerate(grid)]
    header = ["control_threshold", "pf_target", "lam", "tau2_se", "pm_analytic", "delay_analytic",
              "throughput_analytic", "pm_hat", "pm_ci", "pf_hat", "pf_ci", "nmse", "nmse_ci",
              "mean_delay", "throughput_hat", "trials"]
    return header, _pool_map(_juice_point, args, cfg.threads)


def _design_point(p, name):
    if name is not None:
        terms, k, mode, _ = csa.PAPER_DISTRIBUTIONS[name]
        dist = csa.DegreeDistribution.from_poly(terms, k)
        ch = csa.ErasureChannelSpec(mode, p["eps"])
        g = csa.expected_traffic_load(dist, ch, p["alpha"])
    else:
        ch = csa.ErasureChannelSpec(p["mode"], p["eps"])
        value = None if p["constraint"] == "none" else p["value"]
        dist, g = csa.optimize_distribution(_codeset(p), ch, csa.DesignTarget(alpha=p["alpha"]),
                                            p["constraint"], value)
        name = "optimized"
    lam = ";".join(f"{n}:{v:.6g}" for n, v in zip(dist.codes.lengths, dist.probs) if v > 0)
    return [name, dist.codes.kind, dist.codes.k, ch.mode, ch.eps, p["alpha"], dist.n_bar, dist.rate,
            csa.error_floor(dist, ch.eps), g, lam]


def run_csa_design(cfg, stream):
    p = cfg.params
    names = [n.strip() for n in p["distributions"].split(",")] if p["distributions"] else [None]
    header = ["label", "code", "k", "mode", "eps", "alpha", "n_bar", "rate", "error_floor", "G_star", "Lambda"]
    return header, _pool_map(_design_point, [(p, n) for n in names], cfg.threads)


def run_csa_sim(cfg, stream):
    p = cfg.params
    dist = _resolve_distribution(p["distribution"], p["k"])
    ch = csa.ErasureChannelSpec(p["mode"], p["eps"])
    pts = csa_sim.sweep(p["G"], p["frames"], p["n_slots"], dist, ch, stream, workers=cfg.threads)
    rows = []
    for pt in pts:
        t_asym, plr_asym = csa.asymptotic_throughput(pt.G, dist, ch.eps)
        rows.append(list(pt.row()) + [t_asym, plr_asym])
    return list(csa_sim.SWEEP_COLUMNS) + ["T_asym", "PLR_asym"], rows


def run_pnc_analysis(cfg, stream):
    p = cfg.params
    N = p["n_slots"]
    rows = []
    for snr in p["snr"]:
        eta = pnc.eta_table(p["k_max"], snr, p["mc_samples"], seed=cfg.seed)
        for G in p["G"]:
            M = int(round(G * N))
            recs = {r: pnc.throughput_chain(M, N, r, snr, p["k_max"], eta) for r in p["r"]}
            r_t = pnc.optimize_replicas(M, N, snr, p["k_max"], p["r"], "throughput", eta)
            r_e = pnc.optimize_replicas(M, N, snr, p["k_max"], p["r"], "energy", eta)
            for r, rec in recs.items():
                rows.append([10 * np.log10(snr), G, M, r, rec.T, rec.energy_eff, int(rec.clamped), r_t, r_e])
    header = ["snr_db", "G", "M", "r", "T", "energy_eff", "clamped", "r_star_throughput", "r_star_energy"]
    return header, rows


def _pnc_sim_point(p, snr, G, eta, stream):
    N = p["n_slots"]
    M = int(round(G * N))
    res = pnc.simulate_pnc_frame(M, N, p["r"], snr, p["k_max"], stream, p["trials"], p["n_symbols"])
    T_an = pnc.throughput_chain(M, N, p["r"], snr, p["k_max"], eta).T
    return [10 * np.log10(snr), G, M, p["r"], res.T, res.T_ci, res.tau, res.tau_ci, T_an,
            res.degree1_T, res.nc_messages, res.trials]


def run_pnc_sim(cfg, stream):
    p = cfg.params
    args = []
    for snr in p["snr"]:
        eta = pnc.eta_table(p["k_max"], snr, p["mc_samples"], seed=cfg.seed)
        for G in p["G"]:
            args.append((p, snr, G, eta, stream.child(len(args))))
    header = ["snr_db", "G", "M", "r", "T_sim", "T_ci", "tau_sim", "tau_ci", "T_analytic", "degree1_T",
              "nc_messages", "trials"]
    return header, _pool_map(_pnc_sim_point, args, cfg.threads)


RUNNERS = {"juice": run_juice, "csa-design": run_csa_design, "csa-sim": run_csa_sim,
           "pnc-analysis": run_pnc_analysis, "pnc-sim": run_pnc_sim}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def version_string() -> str:
    """Package version, with the short commit hash appended when run from a git checkout."""
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def run(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Execute the configured sweep and write the CSV and JSON records."""
    t0 = time.perf_counter()
    stream = RngStream(cfg.seed, COMMANDS.index(cfg.command) + 1)
    header, rows = RUNNERS[cfg.command](cfg, stream)
    text = format_csv(header, rows)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{cfg.command}.csv"
    json_path = out / f"{cfg.command}.json"
    csv_path.write_text(text)
    record = dict(cfg.to_record(), config_text=serialize_config(cfg), version=version_string(),
                  csv_schema=CSV_SCHEMA_VERSION, columns=header, wall_time_s=time.perf_counter() - t0,
                  csv=csv_path.name)
    json_path.write_text(json.dumps(record, indent=2, sort_keys=True, default=float) + "\n")
    return csv_path, json_path


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmtc", description="Random-access experiment runner.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", type=Path, help="key = value file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
        sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./results)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for sweep points")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        pairs = {}
        if args.config is not None:
            if not args.config.is_file():
                raise ConfigError(f"config: file not found: {args.config}")
            pairs.update(read_pairs(args.config.read_text()))
        for item in args.set:
            pairs.update(read_pairs(item))
        cfg = parse_config(args.command, pairs, args.seed, args.out, args.threads)
    except ConfigError as exc:
        print(f"mmtc {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    try:
        csv_path, json_path = run(cfg)
    except Exception as exc:  # noqa: BLE001  report any module failure as a diagnostic
        print(f"mmtc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(csv_path)
    print(json_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
