"""Command line entry point.

    rollprune run <config.toml> [--out DIR]
    rollprune report <run_dir>
    rollprune sweep <config.toml> --param kappa=0.25,0.5,0.75,1.0 [--workers N]

Exit codes: 0 ok, 2 bad config or missing manifest, 3 infeasible keep target.
``ROLLPRUNE_OUTPUT_ROOT`` relocates relative output directories.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from rollprune import __version__
from rollprune import config as cfgmod
from rollprune.errors import ConfigError, UnreachableTargetError
from rollprune.experiments import RUNNERS, jsonable


EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3
OUTPUT_ROOT_ENV = "ROLLPRUNE_OUTPUT_ROOT"


def resolve_output(cfg: cfgmod.ExperimentConfig, override: str | None = None) -> Path:
    out = Path(override or cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def check_feasible(cfg: cfgmod.ExperimentConfig) -> None:
    p = cfg.policy
    kappas = cfg.sweep.kappas if cfg.experiment == "kappa_sweep" else [p.kappa]
    if cfg.experiment not in ("train_sim", "kappa_sweep"):
        return
    for k in kappas:
        if k < 1.0 and not p.p_min <= k <= p.p_max:
            raise UnreachableTargetError(k, p.p_min if k < p.p_min else p.p_max)


def execute(cfg: cfgmod.ExperimentConfig, out: Path) -> dict:
    """Run one experiment into ``out``; returns the manifest."""
    check_feasible(cfg)
    out.mkdir(parents=True, exist_ok=True)
    summary = RUNNERS[cfg.experiment](cfg, out)
    manifest = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "versions": {"rollprune": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "artifacts": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
        "summary": jsonable(summary),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_run(args) -> int:
    cfg = cfgmod.load(args.config)
    out = resolve_output(cfg, args.out)
    manifest = execute(cfg, out)
    print(f"wrote {out}")
    print_report(manifest)
    return EXIT_OK


def _fmt_value(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, dict):
        return ", ".join(f"{k}={_fmt_value(x)}" for k, x in v.items())
    if isinstance(v, list):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    return str(v)


def print_report(manifest: dict, stream=None) -> None:
    stream = stream or sys.stdout
    exp, summary = manifest["experiment"], manifest["summary"]
    w = lambda s="": print(s, file=stream)
    w(f"experiment: {exp}  seed: {manifest['seed']}  config: {manifest['config_sha256'][:12]}")
    if exp == "theory":
        t1 = summary["theorem1_violations"]
        delta = manifest["config"]["theory"]["delta"]
        w(f"theorem1 violations: {t1['value']} (bound δ={delta}): {'PASS' if t1['pass'] else 'FAIL'}")
    if exp == "train_sim":
        w(f"{'arm':<8}{'generation':>12}{'logprob':>12}{'update':>12}{'total':>12}   speedups (gen/lp/up)")
        for r in summary["phases"]:
            w(f"{r['arm']:<8}{r['generation']:>12.3f}{r['logprob']:>12.3f}{r['update']:>12.3f}"
              f"{r['total']:>12.3f}   {_fmt_value(r['speedup_generation'])}x / "
              f"{_fmt_value(r['speedup_logprob'])}x / {_fmt_value(r['speedup_update'])}x"
              f"   E[rho]={r['rho_hat_mean']:.3f} E[rho(1-rho)]={r['var_proxy_mean']:.3f}")
    if exp == "kappa_sweep":
        w(f"{'kappa':<8}{'total':>12}{'speedup':>10}{'keep':>8}")
        for r in summary["sweep"]:
            w(f"{r['kappa']:<8}{r['total']:>12.3f}{r['speedup']:>9.2f}x{r['keep_ratio']:>8.3f}")
    if exp == "tts":
        w(f"{'method':<14}{'accuracy':>10}{'95% CI':>20}")
        for r in summary["accuracy"]:
            w(f"{r['method']:<14}{r['accuracy']:>10.3f}   [{r['ci_low']:.3f}, {r['ci_high']:.3f}]")
    for key, item in summary.items():
        if isinstance(item, dict) and "pass" in item:
            mark = "PASS" if item["pass"] else "FAIL"
            w(f"  {key}: {_fmt_value(item['value'])} (want {item['threshold']}): {mark}")


def cmd_report(args) -> int:
    path = Path(args.run_dir) / "manifest.json"
    if not path.exists():
        print(f"error: no manifest in {args.run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    print_report(json.loads(path.read_text()))
    return EXIT_OK


def _parse_param(spec: str):
    if "=" not in spec:
        raise ConfigError({"--param": "expected name=v1,v2,..."})
    name, values = spec.split("=", 1)
    parsed = []
    for v in values.split(","):
        v = v.strip()
        try:
            parsed.append(json.loads(v))
        except json.JSONDecodeError:
            parsed.append(v)
    return name.strip(), parsed


def _sweep_one(raw: dict, out: str) -> tuple[str, str]:
    cfg = cfgmod.from_dict(raw)
    execute(cfg, Path(out))
    return out, cfg.experiment


def cmd_sweep(args) -> int:
    try:
        with open(args.config, "rb") as fh:
            raw = cfgmod.tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError({"": f"config file {args.config} not found"}) from None
    name, values = _parse_param(args.param)
    base = resolve_output(cfgmod.from_dict(raw), args.out)
    jobs = []
    for v in values:
        variant = cfgmod.with_override(raw, name, v)
        cfg = cfgmod.from_dict(variant)
        check_feasible(cfg)
        jobs.append((variant, str(base / f"{name}={v}")))
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            done = list(pool.map(_sweep_one, *zip(*jobs)))
    else:
        done = [_sweep_one(v, o) for v, o in jobs]
    for out, _ in done:
        print(f"--- {out}")
        print_report(json.loads((Path(out) / "manifest.json").read_text()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rollprune", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", help="summarise a finished run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("sweep", help="run a config once per parameter value")
    p.add_argument("config")
    p.add_argument("--param", required=True, help="name=v1,v2,... e.g. kappa=0.25,0.5")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for field_name, msg in exc.problems.items():
            print(f"  {field_name or '<file>'}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except UnreachableTargetError as exc:
        print(f"infeasible policy: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
