"""Command-line entry point: generate, train, eval, verify-bounds, report.

Every subcommand reads one JSON experiment config (built-in defaults when
``--config`` is omitted) and accepts ``--set dotted.path=value`` overrides.
The resolved config and seed are embedded in every artifact written.

Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric failure,
3 certificate violation.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .convex_suite import default_suite
from .datagen import GenConfig, generate_dataset, load_dataset, save_dataset
from .hsic import hsic
from .metrics import open_set_report
from .model import TrainConfig, forward, load_checkpoint, save_checkpoint, train
from .numerics import RandomStream, derive_seed
from .optimizer import DivergenceError, NonFiniteError, check_prop1, check_prop2_bounds, run_constrained, trace_to_csv
from .subjective_logic import MECHANISMS

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CERTIFICATE = 0, 1, 2, 3
LIMIT_TOL = 1e-3

# stream indices under the top-level seed
DATA_STREAM, TRAIN_STREAM = 1, 2


class ConfigError(ValueError):
    pass


class CertificateError(RuntimeError):
    pass


def default_config() -> dict:
    gen = {f.name: getattr(GenConfig(), f.name) for f in fields(GenConfig) if f.name != "seed"}
    tc = TrainConfig()
    return {
        "seed": 0,
        "data": gen,
        "model": {"hidden": list(tc.hidden), "evidence": tc.evidence},
        "optimizer": {
            "primal_mode": "adam",
            "eta1": tc.eta1,
            "eta2": tc.eta2,
            "delta": tc.delta,
            "gamma": tc.gamma,
            "lambda0": tc.lambda0,
            "debias": tc.debias,
            "epochs": tc.epochs,
            "batch_size": tc.batch_size,
            "steps_per_dual": tc.steps_per_dual,
            "reset": tc.reset,
            "average_mode": tc.average_mode,
            "reduction": tc.reduction,
        },
        "eval": {"mechanisms": list(MECHANISMS), "prior_weight": 2.0, "base_rate": 1.0},
        "verify": {"steps": 1000},
        "paths": {
            "data_dir": "out/data",
            "checkpoint": "out/model.json",
            "trace": "out/trace.csv",
            "metrics": "out/metrics.json",
            "certificates": "out/certificates.json",
            "report": "out/report.csv",
        },
    }


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form dotted.path=value")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config path {path!r}")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"unknown config path {path!r}")
    node[keys[-1]] = _parse_value(raw)


def _merge(base: dict, update: dict, where: str = "") -> None:
    for k, v in update.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, where + k + ".")
        else:
            base[k] = v


def gen_config(cfg: dict) -> GenConfig:
    return GenConfig(**cfg["data"], seed=derive_seed(int(cfg["seed"]), DATA_STREAM))


def train_config(cfg: dict) -> TrainConfig:
    opt = {k: v for k, v in cfg["optimizer"].items() if k != "primal_mode"}
    return TrainConfig(**opt, hidden=tuple(cfg["model"]["hidden"]), evidence=cfg["model"]["evidence"])


def validate_config(cfg: dict) -> None:
    try:
        if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
            raise ConfigError("seed must be a nonnegative integer")
        gen_config(cfg).validate()
        if cfg["optimizer"]["primal_mode"] != "adam":
            raise ConfigError("training supports primal_mode 'adam' only; 'exact' needs a closed-form argmin")
        train_config(cfg).validate()
        bad = [m for m in cfg["eval"]["mechanisms"] if m not in MECHANISMS]
        if bad or not cfg["eval"]["mechanisms"]:
            raise ConfigError(f"eval.mechanisms must be a nonempty subset of {list(MECHANISMS)}")
        if int(cfg["verify"]["steps"]) < 2:
            raise ConfigError("verify.steps must be at least 2")
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path, overrides) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config document must be a JSON object")
        _merge(cfg, user)
    for item in overrides or ():
        apply_override(cfg, item)
    validate_config(cfg)
    return cfg


def _echo(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def _write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _write_json(path, doc: dict) -> Path:
    return _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{what} not found: {path} (run the producing subcommand first)")
    return path


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(cfg: dict) -> dict:
    ds = generate_dataset(gen_config(cfg))
    ds.metadata["experiment"] = cfg
    ds.metadata["seed"] = cfg["seed"]
    data_path, meta_path = save_dataset(ds, cfg["paths"]["data_dir"])
    return {"dataset": str(data_path), "metadata": str(meta_path), "train": len(ds.train), "test": len(ds.test)}


def cmd_train(cfg: dict) -> dict:
    _require(Path(cfg["paths"]["data_dir"]) / "dataset.meta.json", "dataset")
    ds = load_dataset(cfg["paths"]["data_dir"])
    params, trace = train(train_config(cfg), ds, RandomStream(derive_seed(int(cfg["seed"]), TRAIN_STREAM)))
    ckpt = save_checkpoint(params, cfg["paths"]["checkpoint"], config_echo=cfg)
    header = [f"seed={cfg['seed']}", f"config={_echo(cfg)}"]
    trace_path = _write(cfg["paths"]["trace"], trace.to_csv(header_lines=header))
    return {
        "checkpoint": str(ckpt),
        "trace": str(trace_path),
        "final_loss": trace.loss[-1],
        "final_hsic": trace.hsic[-1],
        "final_lambda": trace.lam[-1],
    }


def evaluate(cfg: dict, params, ds) -> dict:
    X, Y, nov = ds.arrays("test")
    fr = forward(params, X, ds.context_cols, ds.pool_size)
    ev = cfg["eval"]
    doc = open_set_report(
        fr.alpha, fr.beta, nov, Y[:, ds.known_classes], ev["mechanisms"], W=ev["prior_weight"], a=ev["base_rate"]
    )
    doc["test_hsic"] = hsic(fr.z_matrix, fr.pooled_context)
    doc["debias"] = bool(cfg["optimizer"]["debias"])
    doc["n_test"] = int(X.shape[0])
    return doc


def cmd_eval(cfg: dict) -> dict:
    _require(Path(cfg["paths"]["data_dir"]) / "dataset.meta.json", "dataset")
    ds = load_dataset(cfg["paths"]["data_dir"])
    params, _ = load_checkpoint(_require(cfg["paths"]["checkpoint"], "checkpoint"))
    doc = evaluate(cfg, params, ds)
    doc.update(format="evidential-osr/metrics-v1", seed=cfg["seed"], config=cfg)
    _write_json(cfg["paths"]["metrics"], doc)
    return {"metrics": cfg["paths"]["metrics"], "rows": doc["open_set"], "mAP": doc["closed_set"]["mAP"]}


def certificate_rows(steps: int, trace_dir=None) -> list[dict]:
    rows = []
    for idx, case in enumerate(default_suite(steps)):
        cfg = case.config
        label = f"{case.problem.name}/{cfg.primal_mode}"
        trace = run_constrained(case.problem, cfg)
        p1 = check_prop1(trace, case.problem.G)
        rows.append({"case": label, "certificate": "prop1_recurrence", "passed": bool(p1.passed),
                     "value": float(p1.recurrence_max_error), "detail": p1.first_violation})
        if case.certify_bounds:
            p2 = check_prop2_bounds(trace, case.problem)
            for key, ok in p2.holds.items():
                rows.append({"case": label, "certificate": f"prop2_{key}", "passed": bool(np.all(ok)),
                             "value": int(np.sum(~ok)), "detail": p2.first_violation})
        if case.check_limits:
            m = len(trace) - 1
            viol = max(trace.constraint_avg[-1] - trace.gamma, 0.0)
            ratio = trace.lam[-1] / (m * trace.eta2)
            rows.append({"case": label, "certificate": "limit_constraint", "passed": bool(viol < LIMIT_TOL),
                         "value": float(viol), "detail": None})
            rows.append({"case": label, "certificate": "limit_dual_ratio", "passed": bool(ratio < LIMIT_TOL),
                         "value": float(ratio), "detail": None})
        if trace_dir is not None:
            _write(Path(trace_dir) / f"trace_{idx}_{case.problem.name}_{cfg.primal_mode}.csv",
                   trace_to_csv(trace, case.problem, header_lines=[label]))
    return rows


def cmd_verify(cfg: dict, trace_dir=None) -> dict:
    rows = certificate_rows(int(cfg["verify"]["steps"]), trace_dir)
    for r in rows:
        r["status"] = "PASS" if r["passed"] else "FAIL"
    doc = {"format": "evidential-osr/certificates-v1", "seed": cfg["seed"], "config": cfg,
           "all_passed": all(r["passed"] for r in rows), "rows": rows}
    _write_json(cfg["paths"]["certificates"], doc)
    for r in rows:
        print(f"{r['status']}  {r['case']:<28} {r['certificate']:<18} {r['value']}")
    if not doc["all_passed"]:
        raise CertificateError(f"{sum(not r['passed'] for r in rows)} certificate row(s) failed")
    return {"certificates": cfg["paths"]["certificates"], "rows": len(rows)}


REPORT_COLUMNS = ("run", "debias", "mechanism", "error", "auroc", "aupr", "fpr_at_95tpr",
                  "mAP", "test_hsic", "final_loss", "final_hsic", "final_lambda")


def _trace_tail(path) -> dict:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows:
        return {}
    last = rows[-1]
    return {"final_loss": float(last["loss"]), "final_hsic": float(last["hsic"]), "final_lambda": float(last["lambda"])}


def build_report(metric_paths, trace_paths=()) -> str:
    if trace_paths and len(trace_paths) != len(metric_paths):
        raise ConfigError("give one trace per metrics file, or none")
    runs = []
    for i, mp in enumerate(metric_paths):
        doc = json.loads(_require(mp, "metrics file").read_text(encoding="utf-8"))
        tail = _trace_tail(_require(trace_paths[i], "trace file")) if trace_paths else {}
        runs.append((Path(mp).stem, doc, tail))

    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for name, doc, tail in runs:
        for row in doc["open_set"]:
            writer.writerow([name, doc.get("debias"), row["mechanism"], row["error"], row["auroc"], row["aupr"],
                             row["fpr_at_95tpr"], doc["closed_set"]["mAP"], doc.get("test_hsic"),
                             tail.get("final_loss", ""), tail.get("final_hsic", ""), tail.get("final_lambda", "")])
    on = [r for r in runs if r[1].get("debias") is True]
    off = [r for r in runs if r[1].get("debias") is False]
    if len(on) == 1 and len(off) == 1:
        d_on, d_off = on[0][1], off[0][1]
        by_mech = {r["mechanism"]: r for r in d_off["open_set"]}
        for row in d_on["open_set"]:
            ref = by_mech.get(row["mechanism"])
            if ref is None:
                continue
            writer.writerow(["on_minus_off", "", row["mechanism"]]
                            + [row[k] - ref[k] for k in ("error", "auroc", "aupr", "fpr_at_95tpr")]
                            + [d_on["closed_set"]["mAP"] - d_off["closed_set"]["mAP"],
                               d_on["test_hsic"] - d_off["test_hsic"], "", "", ""])
    return out.getvalue()


def cmd_report(cfg: dict, metric_paths, trace_paths) -> dict:
    metric_paths = metric_paths or [cfg["paths"]["metrics"]]
    text = build_report(metric_paths, trace_paths or [])
    header = f"# seed={cfg['seed']}\n# config={_echo(cfg)}\n"
    path = _write(cfg["paths"]["report"], header + text)
    return {"report": str(path)}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evidential-osr", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config (defaults built in)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                       help="override one config field, e.g. --set optimizer.debias=false")

    common(sub.add_parser("generate", help="write the synthetic dataset"))
    common(sub.add_parser("train", help="train and write a checkpoint plus trace CSV"))
    common(sub.add_parser("eval", help="write the metrics JSON for a trained checkpoint"))
    p = sub.add_parser("verify-bounds", help="certify the optimizer on the convex oracle suite")
    common(p)
    p.add_argument("--trace-dir", help="also write one trace CSV per suite case here")
    p = sub.add_parser("report", help="merge metrics (and traces) into a table CSV")
    common(p)
    p.add_argument("--metrics", nargs="+", help="metrics JSON files (default: paths.metrics)")
    p.add_argument("--traces", nargs="+", help="trace CSVs, one per metrics file")
    common(sub.add_parser("show-config", help="print the resolved config"))
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "generate":
            result = cmd_generate(cfg)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "eval":
            result = cmd_eval(cfg)
        elif args.command == "verify-bounds":
            result = cmd_verify(cfg, args.trace_dir)
        elif args.command == "report":
            result = cmd_report(cfg, args.metrics, args.traces)
        else:
            result = copy.deepcopy(cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except CertificateError as exc:
        return _fail(EXIT_CERTIFICATE, "certificate", str(exc))
    except (NonFiniteError, DivergenceError, ArithmeticError, RuntimeError, ValueError, TypeError, OSError) as exc:
        return _fail(EXIT_RUNTIME, type(exc).__name__, str(exc))
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
