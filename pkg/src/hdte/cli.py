"""Command-line driver: ``hdte expand | estimate | simulate | version``.

Each command reads one JSON config; command-line flags override the
matching config fields, which override built-in defaults. Every run
writes a manifest (config hash, seeds, package version) next to its
outputs. Exit codes: 0 success, 2 configuration error, 3 estimation
failure, 4 input/output error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .dictionary import DictionarySpec, expand, read_csv
from .errors import ConfigError, DataError, HDTEError
from .lasso import PenaltyConfig
from .pipeline import ROW_HEADER, BootstrapConfig, EstimationConfig, estimate
from .reduced_form import parse_cell
from .simulation import SimConfig, run_size_experiment

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION, EXIT_IO = 0, 2, 3, 4


def fmt(v):
    """Floats with 17 significant digits so reruns can be compared bytewise."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(doc, path):
    text = json.dumps(_jsonable(doc), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n")


def config_hash(doc):
    canon = json.dumps(_jsonable(doc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def thread_cap(requested):
    env = os.environ.get("HDTE_THREADS")
    if env:
        try:
            return max(1, min(int(requested), int(env)))
        except ValueError:
            raise ConfigError(f"HDTE_THREADS must be an integer, got {env!r}") from None
    return max(1, int(requested))


def load_config(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def _require(doc, key):
    if key not in doc or doc[key] in (None, ""):
        raise ConfigError(f"missing required config field {key!r}")
    return doc[key]


def _roles(doc):
    cols = doc.get("columns", {})
    if not isinstance(cols, dict):
        raise ConfigError("'columns' must map roles y, d, z to column names")
    return _require(cols, "y"), _require(cols, "d"), cols.get("z")


def _load_data(doc):
    y, d, z = _roles(doc)
    raw = read_csv(_require(doc, "input"), y, d, z, doc.get("covariates"))
    spec_doc = doc.get("dictionary")
    spec = DictionarySpec.from_dict(spec_doc) if spec_doc else DictionarySpec.identity(raw.columns)
    return raw, expand(raw, spec)


def _taus(doc):
    t = doc.get("taus")
    if t is None:
        return None
    if isinstance(t, dict):
        start, stop, step = t.get("start", 0.1), t.get("stop", 0.9), t.get("step", 0.01)
        k = int(round((stop - start) / step))
        return tuple(round(start + i * step, 12) for i in range(k + 1))
    return tuple(float(v) for v in t)


def estimation_config(doc):
    try:
        pen = PenaltyConfig(**doc.get("penalty", {}))
        boot = BootstrapConfig(**doc.get("bootstrap", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad penalty/bootstrap config: {exc}") from None
    ug = doc.get("u_grid") or {}
    try:
        known = tuple(parse_cell(c) for c in doc.get("known_zero", ()))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        return EstimationConfig(
            estimands=tuple(doc.get("estimands", ("LATE",))),
            penalty=pen,
            bootstrap=boot,
            u_grid=tuple(ug["values"]) if "values" in ug else None,
            u_percentiles=tuple(ug.get("percentiles", (5, 95))),
            taus=_taus(doc),
            known_zero=known,
            trim_eps=float(doc.get("trim_eps", 1e-12)),
            denom_tol=float(doc.get("denom_tol", 1e-8)),
            intercept=bool(doc.get("intercept", True)),
            prune_tol=float(doc.get("prune_tol", 1e-9)),
            threads=thread_cap(doc.get("threads", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad estimation config: {exc}") from None


def _safe_name(name):
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name).strip("_")


def write_table(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _override(doc, args, pairs):
    doc = json.loads(json.dumps(doc))
    for flag, path in pairs:
        val = getattr(args, flag, None)
        if val is None:
            continue
        node = doc
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = val
    return doc


def _manifest(command, doc, extra):
    return {
        "command": command,
        "version": __version__,
        "backend": BACKEND,
        "config": doc,
        "config_hash": config_hash(doc),
        **extra,
    }


def cmd_expand(args):
    doc = _override(load_config(args.config), args, [("input", ("input",))])
    raw, m = _load_data(doc)
    out = Path(args.out or doc.get("design_out") or "design.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(out, m.values.tolist(), m.labels)
    dump_json(
        _manifest("expand", doc, {
            "input_sha256": file_hash(doc["input"]),
            "n": m.n,
            "p": m.p,
            "columns": list(m.labels),
            "groups": m.groups,
            "dropped": list(m.dropped),
        }),
        out.with_suffix(".columns.json"),
    )
    print(f"wrote {m.n} x {m.p} design to {out}")
    return EXIT_OK


def cmd_estimate(args):
    doc = load_config(args.config)
    if args.estimands:
        args.estimands = [e.strip() for e in args.estimands.split(",") if e.strip()]
    doc = _override(doc, args, [
        ("input", ("input",)),
        ("output_dir", ("output_dir",)),
        ("seed", ("bootstrap", "seed")),
        ("B", ("bootstrap", "B")),
        ("estimands", ("estimands",)),
        ("threads", ("threads",)),
    ])
    cfg = estimation_config(doc)
    raw, m = _load_data(doc)
    outdir = Path(doc.get("output_dir") or "hdte_out")
    outdir.mkdir(parents=True, exist_ok=True)
    result = estimate(raw, m, cfg)
    status = {}
    for name, tab in result.tables.items():
        status[name] = {"ok": tab.ok, "error": tab.error,
                        "flagged_draw_fraction": tab.flagged_fraction}
        if tab.bands is not None:
            status[name]["critical_value_uniform"] = tab.bands.cv_uniform
            status[name]["band_warning"] = tab.bands.warning
        if tab.ok:
            write_table(outdir / f"{_safe_name(name)}.csv", tab.rows(), ROW_HEADER)
        else:
            print(f"{name}: {tab.error}", file=sys.stderr)
    bc = cfg.bootstrap
    dump_json(
        _manifest("estimate", doc, {
            "input_sha256": file_hash(doc["input"]),
            "n": raw.n,
            "seeds": {"bootstrap_master": bc.seed, "per_draw": "default_rng([master, b])"},
            "bootstrap": {"B": bc.B, "kind": bc.kind, "parameterization": bc.parameterization,
                          "level": bc.level},
            "estimands": status,
            "u_grid": result.u_grid,
            "taus": result.taus,
            "diagnostics": result.diagnostics,
        }),
        outdir / "manifest.json",
    )
    if result.all_failed:
        return EXIT_ESTIMATION
    print(f"wrote {sum(t.ok for t in result.tables.values())} table(s) to {outdir}")
    return EXIT_OK


def cmd_simulate(args):
    doc = _override(load_config(args.config), args, [
        ("reps", ("reps",)), ("seed", ("seed",)), ("threads", ("threads",))])
    out = Path(args.out or doc.pop("out", None) or "size_table.csv")
    doc.pop("out", None)
    cfg = SimConfig.from_dict({**doc, "threads": thread_cap(doc.get("threads", 1))})
    table = run_size_experiment(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out)
    out.with_suffix(".json").write_text(table.to_json() + "\n")
    dump_json(_manifest("simulate", cfg.to_dict(), {"seed": cfg.seed,
                                                     "per_replication_seed": "[seed, i, j, rep]"}),
              out.with_suffix(".manifest.json"))
    print(f"wrote size table to {out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="hdte", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("expand", help="expand covariates into a dictionary design matrix")
    e.add_argument("--config", required=True)
    e.add_argument("--input")
    e.add_argument("--out")
    e.set_defaults(func=cmd_expand)

    s = sub.add_parser("estimate", help="estimate treatment effects with bootstrap inference")
    s.add_argument("--config", required=True)
    s.add_argument("--input")
    s.add_argument("--output-dir", dest="output_dir")
    s.add_argument("--estimands", help="comma-separated, e.g. LATE,LQTE")
    s.add_argument("--seed", type=int)
    s.add_argument("--B", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_estimate)

    m = sub.add_parser("simulate", help="run the naive-vs-orthogonal size experiment")
    m.add_argument("--config")
    m.add_argument("--out")
    m.add_argument("--reps", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--threads", type=int)
    m.set_defaults(func=cmd_simulate)

    v = sub.add_parser("version", help="print the package version")
    v.set_defaults(func=lambda a: print(f"hdte {__version__} ({BACKEND} kernel)") or EXIT_OK)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"input/output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HDTEError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
