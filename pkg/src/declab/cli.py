"""Command-line entry point: ``declab dec|run|pcigw|family|bench``.

Exit status is 0 on success, 2 on schema or parameter errors and 3 on
solver failures; errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import inspect
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import families
from .dec import dec_lp
from .e2d import TRACE_COLUMNS, ContextualClass, ExperimentConfig, run_experiment
from .errors import DeclabError, SchemaError
from .mdp import FLOOR_DELTA, mdp_from_json, pcigw
from .models import class_from_json

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_CLASS = {"type": "object"}  # checked in detail by class_from_json

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["T", "gamma"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "class": _CLASS,
        "class_file": {"type": "string"},
        "contexts": {
            "type": "object",
            "additionalProperties": False,
            "required": ["slices", "probs"],
            "properties": {"slices": {"type": "array", "items": _CLASS, "minItems": 1},
                           "probs": {"type": "array", "items": _NUM}},
        },
        "truth": {**_INT, "minimum": 0},
        "T": {**_INT, "minimum": 0},
        "gamma": {**_NUM, "exclusiveMinimum": 0},
        "option": {"enum": ["I", "II", "Bayes", "Generalized", "Contextual"]},
        "divergence": {"type": "string"},
        "seed": {**_INT, "minimum": 0},
        "smoothing": {**_NUM, "minimum": 0, "exclusiveMaximum": 1},
        "radius2": {"type": ["number", "null"]},
        "prior": {"type": ["array", "null"], "items": _NUM},
        "bayes_mode": {"enum": ["minimax", "expected"]},
    },
}


# ---------------------------------------------------------------- I/O helpers


def _load_json(path) -> object:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from None


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def dumps(obj) -> str:
    # json writes floats with repr, which round-trips doubles exactly
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % x


def trace_csv(trace) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    lines += [",".join(_fmt(x) for x in row) for row in trace.rows()]
    return "\n".join(lines) + "\n"


def _emit(obj, out=None):
    text = dumps(obj)
    if out:
        atomic_write(out, text)
    sys.stdout.write(text)


# ---------------------------------------------------------------- run config


def validate_run_config(cfg) -> dict:
    try:
        jsonschema.validate(cfg, RUN_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise SchemaError(f"config {where}: {exc.message}") from None
    sources = [k for k in ("class", "class_file", "contexts") if k in cfg]
    if len(sources) != 1:
        raise SchemaError("config needs exactly one of 'class', 'class_file', 'contexts'")
    return cfg


def build_run(cfg: dict, base_dir=".", seed=None):
    """(class, truth index, ExperimentConfig) from a validated config."""
    if "contexts" in cfg:
        slices = [class_from_json(c) for c in cfg["contexts"]["slices"]]
        cls = ContextualClass(slices, cfg["contexts"]["probs"])
    elif "class" in cfg:
        cls = class_from_json(cfg["class"])
    else:
        cls = class_from_json(_load_json(Path(base_dir) / cfg["class_file"]))
    truth = cfg.get("truth")
    if truth is None:
        truth = getattr(cls, "truth_idx", None)
    if truth is None:
        raise SchemaError("config needs 'truth' (or the class file must name one)")
    option = cfg.get("option", "Contextual" if "contexts" in cfg else "I")
    ecfg = ExperimentConfig(
        T=cfg["T"], gamma=cfg["gamma"], option=option,
        divergence=cfg.get("divergence", "hellinger"),
        seed=cfg.get("seed", 0) if seed is None else seed,
        smoothing=cfg.get("smoothing", 0.0), radius2=cfg.get("radius2"),
        prior=cfg.get("prior"), bayes_mode=cfg.get("bayes_mode", "minimax"),
    )
    return cls, truth, ecfg


def _summary_json(trace) -> dict:
    return {k: trace.summary[k] for k in ("cum_regret", "est_h", "reg_kl", "bound_rhs",
                                          "empirical_regret", "gamma", "truth_in_set")}


def _run_one(args) -> dict:
    cfg, base_dir, seed = args
    cls, truth, ecfg = build_run(cfg, base_dir, seed)
    return {"seed": seed, **_summary_json(run_experiment(cls, truth, ecfg))}


def max_workers() -> int:
    env = os.environ.get("DECLAB_THREADS")
    if env is None:
        return os.cpu_count() or 1
    try:
        n = int(env)
    except ValueError:
        raise SchemaError(f"DECLAB_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise SchemaError("DECLAB_THREADS must be at least 1")
    return n


# ---------------------------------------------------------------- commands


def cmd_dec(a):
    cls = class_from_json(_load_json(a.cls))
    if not 0 <= a.ref < len(cls):
        raise SchemaError(f"--ref {a.ref} is not a member index")
    cert = dec_lp(cls, cls[a.ref], a.gamma, a.divergence)
    _emit(cert.to_json(), a.out)


def cmd_run(a):
    cfg = validate_run_config(_load_json(a.config))
    cls, truth, ecfg = build_run(cfg, Path(a.config).parent)
    trace = run_experiment(cls, truth, ecfg)
    out = Path(a.out)
    atomic_write(out / "trace.csv", trace_csv(trace))
    summary = _summary_json(trace)
    atomic_write(out / "summary.json", dumps(summary))
    sys.stdout.write(dumps(summary))


def cmd_bench(a):
    cfg = validate_run_config(_load_json(a.config))
    if a.seeds < 1:
        raise SchemaError("--seeds must be at least 1")
    seed0 = cfg.get("seed", 0)
    jobs = [(cfg, str(Path(a.config).parent), seed0 + k) for k in range(a.seeds)]
    workers = min(max_workers(), len(jobs))
    if workers == 1:
        rows = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    regrets = np.array([r["cum_regret"] for r in rows])
    se = float(regrets.std(ddof=1) / math.sqrt(len(rows))) if len(rows) > 1 else 0.0
    report = {"runs": rows, "mean_cum_regret": float(regrets.mean()), "stderr_cum_regret": se}
    _emit(report, Path(a.out) / "bench.json" if a.out else None)


def cmd_pcigw(a):
    ref = mdp_from_json(_load_json(a.mdp))
    res = pcigw(ref, a.eta, FLOOR_DELTA if a.floor else None)
    _emit(res.to_json(), a.out)


_FAMILY_FLAGS = ("A", "d", "S", "H", "delta", "eps", "m", "seed", "n")


def family_params(kind: str, a) -> dict:
    given = {k: getattr(a, k) for k in _FAMILY_FLAGS if getattr(a, k) is not None}
    if kind in ("lipschitz", "relu") and "eps" not in given and "delta" in given:
        given["eps"] = given.pop("delta")
    accepted = inspect.signature(families._BUILDERS[kind]).parameters
    if "seed" not in accepted:
        given.pop("seed", None)  # still used by --verify
    extra = set(given) - set(accepted)
    if extra:
        raise SchemaError(f"family {kind} does not take {sorted('--' + k for k in extra)}")
    return given


def cmd_family(a):
    if a.kind not in families.KINDS:
        raise SchemaError(f"unknown family kind {a.kind!r}")
    f = families.make_family(a.kind, **family_params(a.kind, a))
    report = {"kind": f.kind, "N": f.N, "alpha": f.alpha, "beta": f.beta, "delta": f.delta,
              "gamma": a.gamma, "lower_bound": families.family_lower_bound(f, a.gamma),
              "dual_lp_value": None, "passes": None}
    if a.gamma > 0:
        report["dual_lp_value"] = families.family_dual_lp(f, a.gamma)
    if a.verify:
        rep = families.verify_family(f, n_random=a.n_random, seed=a.seed or 0)
        report.update(passes=rep.passes, checks=rep.checks, sampled=rep.sampled, n_points=rep.n_points)
    _emit(report, a.out)


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise SchemaError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="declab", description="Decision-Estimation Coefficient toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("dec", help="DEC value and witness of a finite class")
    d.add_argument("--class", dest="cls", required=True, help="model-class JSON file")
    d.add_argument("--ref", type=int, required=True, help="index of the reference member")
    d.add_argument("--gamma", type=float, required=True)
    d.add_argument("--divergence", default="hellinger")
    d.add_argument("--out")
    d.set_defaults(func=cmd_dec)

    r = sub.add_parser("run", help="simulate E2D and write trace.csv and summary.json")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a config over consecutive seeds in parallel")
    b.add_argument("--config", required=True)
    b.add_argument("--seeds", type=int, default=10)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("pcigw", help="policy-cover IGW distribution for a tabular MDP")
    c.add_argument("--mdp", required=True)
    c.add_argument("--eta", type=float, required=True)
    c.add_argument("--floor", action="store_true", help="mix kernels with uniform at 1e-6")
    c.add_argument("--out")
    c.set_defaults(func=cmd_pcigw)

    f = sub.add_parser("family", help="build a hard family and report its lower bound")
    f.add_argument("--kind", required=True)
    for name in ("A", "d", "S", "H", "m", "seed", "n"):
        f.add_argument(f"--{name}", type=int)
    f.add_argument("--delta", type=float)
    f.add_argument("--eps", type=float)
    f.add_argument("--gamma", type=float, default=0.0)
    f.add_argument("--verify", action="store_true")
    f.add_argument("--n-random", type=int, default=1000)
    f.add_argument("--out")
    f.set_defaults(func=cmd_family)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except DeclabError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "code": exc.code}) + "\n")
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
