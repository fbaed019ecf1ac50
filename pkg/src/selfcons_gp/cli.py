"""``selfcons-gp`` command line: run, validate and report experiments."""

from __future__ import annotations

import argparse
import glob
import os
import sys
import time

from pydantic import ValidationError

from .config import ExperimentConfig, load_config
from .experiments import WORKERS_ENV, run_experiment, worker_count
from .io import code_version, read_json, write_csv, write_json

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SCHEMA = 2
EXIT_NONCONVERGED = 3
EXIT_DIVERGED = 4

_STATUS_CODES = {"ok": EXIT_OK, "nonconverged": EXIT_NONCONVERGED, "diverged": EXIT_DIVERGED}


def _load(path: str) -> ExperimentConfig:
    try:
        return load_config(path)
    except FileNotFoundError:
        raise
    except ValidationError:
        raise
    except Exception as exc:  # malformed TOML
        raise ValueError(f"cannot parse {path}: {exc}") from exc


def results_dir(cfg: ExperimentConfig, base: str | None = None) -> str:
    return os.path.join(base or cfg.output_dir, cfg.experiment, cfg.config_hash())


def cmd_run(path: str, output_dir: str | None = None, out=None) -> int:
    out = out or sys.stdout
    try:
        cfg = _load(path)
    except (ValidationError, ValueError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except FileNotFoundError:
        print(f"no such config: {path}", file=sys.stderr)
        return EXIT_SCHEMA
    t0 = time.perf_counter()
    workers = worker_count()
    outcome = run_experiment(cfg, workers)
    dest = results_dir(cfg, output_dir)
    h = cfg.config_hash()
    tables = {}
    for name, tab in outcome.tables.items():
        fname = f"{name}.csv"
        rows = write_csv(os.path.join(dest, fname), tab.rows, tab.columns, h)
        tables[name] = {"file": fname, "rows": rows, "columns": tab.columns}
    raw = []
    for i, ds in enumerate(outcome.datasets):
        rel = os.path.join("raw", f"dataset_{i:03d}")
        ds.save(os.path.join(dest, rel))
        raw.append(rel + ".npz")
    code = _STATUS_CODES[outcome.status]
    write_json(os.path.join(dest, "manifest.json"), {
        "experiment": cfg.experiment,
        "config": cfg.model_dump(mode="json"),
        "config_hash": h,
        "version": code_version(),
        "status": outcome.status,
        "exit_code": code,
        "tables": tables,
        "raw": raw,
        "summary": outcome.summary,
        "workers": workers,
        "wall_time": time.perf_counter() - t0,
    })
    print(f"{cfg.experiment}: {outcome.status}, results in {dest}", file=out)
    return code


def cmd_validate(path: str, out=None) -> int:
    out = out or sys.stdout
    try:
        cfg = _load(path)
    except FileNotFoundError:
        print(f"no such config: {path}", file=out)
        return EXIT_SCHEMA
    except ValidationError as exc:
        print(f"{path}: INVALID", file=out)
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            print(f"  {loc}: {err['msg']}", file=out)
        return EXIT_SCHEMA
    except ValueError as exc:
        print(f"{path}: INVALID\n  {exc}", file=out)
        return EXIT_SCHEMA
    print(f"{path}: OK (experiment={cfg.experiment}, hash={cfg.config_hash()})", file=out)
    return EXIT_OK


def find_manifests(root: str) -> list[str]:
    direct = os.path.join(root, "manifest.json")
    if os.path.isfile(direct):
        return [direct]
    return sorted(glob.glob(os.path.join(root, "**", "manifest.json"), recursive=True))


def cmd_report(root: str, out=None) -> int:
    out = out or sys.stdout
    if not os.path.isdir(root):
        print(f"no such directory: {root}", file=sys.stderr)
        return EXIT_ERROR
    paths = find_manifests(root)
    if not paths:
        print(f"no manifest found under {root}", file=sys.stderr)
        return EXIT_ERROR
    header = f"{'experiment':<16} {'hash':<16} {'status':<13} {'table':<12} {'rows':>7}"
    print(header, file=out)
    print("-" * len(header), file=out)
    total = 0
    for p in paths:
        m = read_json(p)
        for name, t in sorted(m.get("tables", {}).items()):
            print(f"{m['experiment']:<16} {m['config_hash']:<16} {m['status']:<13} {name:<12} {t['rows']:>7}", file=out)
            total += t["rows"]
        for key in ("slopes", "crossings"):
            for item in m.get("summary", {}).get(key, []):
                print("  " + ", ".join(f"{k}={v}" for k, v in item.items()), file=out)
    print(f"{len(paths)} manifest(s), {total} rows", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfcons-gp",
                                description="Shifted-target GP theory experiments for finite networks.",
                                epilog=f"Set {WORKERS_ENV} to the number of worker processes (default 1).")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--output-dir", default=None, help="override the config's output_dir")
    v = sub.add_parser("validate", help="check a config against the schema")
    v.add_argument("config")
    rep = sub.add_parser("report", help="summarize results manifests under a directory")
    rep.add_argument("results_dir")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.output_dir)
    if args.command == "validate":
        return cmd_validate(args.config)
    return cmd_report(args.results_dir)


if __name__ == "__main__":
    sys.exit(main())
