"""``sim`` command: run a JSON-configured scan and write CSV, summary and manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import click
import numpy as np
import scipy

from . import __version__, model as models
from .scans import SCANS, ScanPointError
from .trotter import DEFAULT_MAX_DIM

SCHEMA_VERSION = 1
NEEDS_MODEL = {"kernel_scan", "trotter_scan", "noise_scan", "dilation_scan", "ensemble_scan", "wiener_scan"}
DEFAULT_MODELS = {
    "kernel_scan": "gauss_chain3",
    "trotter_scan": "tfim3",
    "local_obs_scan": None,
    "noise_scan": "gauss_chain3",
    "dilation_scan": "amplitude_damping_qubit",
    "g4_scan": None,
    "ensemble_scan": "zgauss_chain3",
    "wiener_scan": "dephasing_qubit",
    "resource_table": None,
}


class ConfigError(click.ClickException):
    exit_code = 2


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(doc: dict, dotted: str, value):
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"--set {dotted}: '{k}' is not a mapping")
    cur[keys[-1]] = value


def build_config(path: str | None, kind: str | None, overrides, out: str | None) -> dict:
    cfg = {"schema": SCHEMA_VERSION, "params": {}}
    if path:
        try:
            cfg.update(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
    if kind:
        cfg["kind"] = kind
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        # bare keys address params; dotted top-level fields are written as-is
        target = key if key.split(".")[0] in ("kind", "model", "seed", "out_dir", "schema", "params") \
            else "params." + key
        _set_path(cfg, target, _parse_value(val))
    if out:
        cfg["out_dir"] = out
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    if cfg.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"schema: unsupported version {cfg.get('schema')!r} (expected {SCHEMA_VERSION})")
    kind = cfg.get("kind")
    if kind not in SCANS:
        raise ConfigError(f"kind: must be one of {sorted(SCANS)}, got {kind!r}")
    if not isinstance(cfg.get("params", {}), dict):
        raise ConfigError("params: must be a JSON object")
    if "seed" not in cfg:
        env_seed = os.environ.get("SIM_SEED")
        cfg["seed"] = int(env_seed) if env_seed not in (None, "") else 0
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed: must be a non-negative integer, got {cfg['seed']!r}")
    cfg.setdefault("model", DEFAULT_MODELS[kind])
    if kind in NEEDS_MODEL and cfg["model"] is None:
        raise ConfigError(f"model: required for {kind}")
    cfg.setdefault("out_dir", "out")
    for key in ("T_list", "dt_list", "N_list"):
        pts = cfg["params"].get(key)
        if pts is not None:
            if not isinstance(pts, list):
                raise ConfigError(f"params.{key}: must be a list")
            need = 4 if key == "dt_list" else 3
            if len(pts) < need:
                raise ConfigError(f"params.{key}: need ≥ {need} points, got {len(pts)}")
    return cfg


def resolve_model(spec):
    if spec is None:
        return None
    if isinstance(spec, str):
        try:
            return models.builtin(spec)
        except KeyError as exc:
            raise ConfigError(f"model: {exc.args[0]}")
    if isinstance(spec, dict):
        try:
            return models.model_from_dict(spec)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"model: invalid model description ({exc})")
    raise ConfigError("model: must be a builtin name or a model object")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else f"{float(x):.17g}"
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, rows: list):
    fields = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in fields])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return None if math.isnan(x) else float(x)
    return x


def config_hash(cfg: dict) -> str:
    canon = {k: v for k, v in cfg.items() if k != "out_dir"}
    return hashlib.sha256(json.dumps(canon, sort_keys=True).encode()).hexdigest()


def run_config(cfg: dict, jobs: int = 1, max_dim: int = DEFAULT_MAX_DIM) -> dict:
    """Execute one scan and write its artifacts; returns the manifest."""
    kind = cfg["kind"]
    model = resolve_model(cfg["model"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    rows, summary = SCANS[kind](model, cfg["params"], seed=cfg["seed"], jobs=jobs, max_dim=max_dim)
    wall = time.perf_counter() - start
    csv_path = out / f"{kind}.csv"
    write_csv(csv_path, rows)
    summary_path = out / f"{kind}_summary.json"
    summary_path.write_text(json.dumps(_jsonable({"kind": kind, "params": cfg["params"], **summary}),
                                       indent=2, sort_keys=True) + "\n")
    manifest = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "versions": {"opensim": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "jobs": jobs,
        "max_dim": max_dim,
        "wall_time_s": wall,
        "artifacts": [csv_path.name, summary_path.name],
    }
    (out / f"{kind}_manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return manifest


@click.group()
@click.version_option(__version__, prog_name="sim")
def main():
    """Open-system simulation scans."""


@main.command()
@click.argument("config", required=False, type=click.Path(dir_okay=False))
@click.option("--kind", type=click.Choice(sorted(SCANS)), help="Scan kind (overrides the config).")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VAL",
              help="Override a parameter; bare keys go under params, JSON values are parsed.")
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(min=1), help="Worker processes.")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--max-dim", default=DEFAULT_MAX_DIM, show_default=True, type=click.IntRange(min=1),
              help="Cap on the total Hilbert-space dimension.")
def run(config, kind, overrides, jobs, out, max_dim):
    """Run the scan described by CONFIG and/or --kind/--set."""
    if config is None and kind is None:
        raise ConfigError("kind: give a config file or --kind")
    cfg = build_config(config, kind, overrides, out)
    try:
        manifest = run_config(cfg, jobs, max_dim)
    except ScanPointError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {', '.join(manifest['artifacts'])} to {cfg['out_dir']} "
               f"({manifest['wall_time_s']:.2f} s)")


@main.command("list-builtins")
def list_builtins_cmd():
    """List bundled models."""
    for name, desc in models.list_builtins().items():
        click.echo(f"{name}\t{desc}")


if __name__ == "__main__":
    main()
