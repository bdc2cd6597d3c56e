"""Command line entry point: ``smile train|certify|eval|defend|gen-data``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from ..milp.generator import certify as run_certify
from ..model import SmileModel
from ..property import InputBox, from_spec, load_spec
from ..training import TrainConfig, TrainingAborted, train
from .data import DataError, gen_fairness, gen_monotonic, gen_moons, load_csv, load_schema
from .defense import defend_batch
from .metrics import accuracy, counterfactual_variation, r2

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORT, EXIT_UNCERTIFIED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"{what} file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{what} file {path} is not valid JSON: {exc}") from exc


def _load_data(args):
    schema = load_schema(args.schema) if getattr(args, "schema", None) else None
    if not Path(args.data).exists():
        raise DataError(f"data file not found: {args.data}")
    return load_csv(args.data, schema)


def _load_model(path) -> SmileModel:
    if not Path(path).exists():
        raise UsageError(f"model file not found: {path}")
    try:
        return SmileModel.load(path)
    except (ValueError, KeyError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc


def _box_for(spec: dict, fallback: InputBox | None) -> InputBox:
    if "box" in spec:
        return InputBox.from_dict(spec["box"])
    if fallback is None:
        raise UsageError("no input box: give one in the property file or train with --data")
    return fallback


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    cfg_doc = _read_json(args.config, "config") if args.config else {}
    arch = dict(cfg_doc.get("model", {}))
    opts = dict(cfg_doc.get("training", {}))
    if args.seed is not None:
        opts["seed"] = args.seed
    try:
        cfg = TrainConfig.from_dict(opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training options: {exc}") from exc
    ds = _load_data(args)
    spec = load_spec(args.property)
    box = _box_for(spec, ds.box)
    prop = from_spec(spec, box)
    model = SmileModel.init(ds.X.shape[1], arch.get("latent", 8), tuple(arch.get("hidden", (32, 32))),
                            arch.get("aux_hidden"), seed=cfg.seed)
    report = train(model, ds.X, ds.y, prop, box, cfg)
    model.save(args.out)
    if args.report:
        _write_json(args.report, report.to_dict())
    if args.telemetry:
        Path(args.telemetry).write_text(report.telemetry_csv(), encoding="utf-8")
    print(json.dumps({"violBound": report.viol_bound, "status": report.final_status}))
    return EXIT_OK


def cmd_certify(args) -> int:
    model = _load_model(args.model)
    spec = load_spec(args.property) if args.property else model.meta.get("property")
    if spec is None:
        raise UsageError("no property given and none stored in the model")
    stored = model.meta.get("box")
    box = _box_for(spec, InputBox.from_dict(stored) if stored else None)
    prop = from_spec(spec, box)
    res = run_certify(model, prop, box, clock=args.clock)
    viol = 0.0 if res.infeasible else res.gamma_bar
    print(json.dumps({"status": res.status.value, "violBound": viol}))
    return EXIT_OK if viol == 0.0 else EXIT_UNCERTIFIED


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args)
    if ds.X.shape[1] != model.m:
        raise DataError(f"data has {ds.X.shape[1]} features, model expects {model.m}")
    out = {}
    pred = model.predict(ds.X)
    for name in args.metrics:
        if name == "r2":
            out["r2"] = r2(ds.y, pred)
        elif name == "acc":
            out["acc"] = accuracy(ds.y, pred)
        else:
            if not ds.protected:
                raise DataError("cfvar needs protected columns in the schema")
            out["cfvar"] = max(counterfactual_variation(model, ds.X, p) for p in ds.protected)
    print(json.dumps(out))
    return EXIT_OK


def cmd_defend(args) -> int:
    model = _load_model(args.model)
    ds = _load_data(args)
    if ds.X.shape[1] != model.m:
        raise DataError(f"data has {ds.X.shape[1]} features, model expects {model.m}")
    verdicts = defend_batch(model, ds.X, args.eps)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "logit", "outcome", "label"])
        for i, v in enumerate(verdicts):
            writer.writerow([i, repr(v.logit), v.outcome, "" if v.label is None else v.label])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.task == "monotonic":
        ds = gen_monotonic(args.alpha, args.omega, args.n, seed=args.seed)
    elif args.task == "moons":
        ds = gen_moons(args.n, seed=args.seed)
    else:
        ds = gen_fairness(args.n, seed=args.seed)
    ds.to_csv(args.out)
    print(json.dumps({"rows": len(ds.y), "box": ds.box.to_dict()}))
    return EXIT_OK


# ------------------------------------------------------------------ parsing

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smile", description="Train and certify models with relational guarantees.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model and certify it")
    t.add_argument("--config", help="JSON with optional 'model' and 'training' sections")
    t.add_argument("--data", required=True)
    t.add_argument("--schema", help="CSV schema JSON")
    t.add_argument("--property", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--report")
    t.add_argument("--telemetry", help="write the telemetry CSV here")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("certify", help="run a complete counterexample search")
    c.add_argument("--model", required=True)
    c.add_argument("--property", help="defaults to the property stored in the model")
    c.add_argument("--clock", choices=("work", "wall"), default="work")
    c.set_defaults(func=cmd_certify)

    e = sub.add_parser("eval", help="compute metrics on a CSV")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--schema")
    e.add_argument("--metrics", nargs="+", choices=("r2", "acc", "cfvar"), default=["r2"])
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("defend", help="rejection-based defense verdicts per row")
    d.add_argument("--model", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--schema")
    d.add_argument("--eps", type=float, required=True)
    d.add_argument("--out", help="CSV path (default: stdout)")
    d.set_defaults(func=cmd_defend)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--task", choices=("monotonic", "moons", "fairness"), required=True)
    g.add_argument("--alpha", type=float, default=2.0)
    g.add_argument("--omega", type=float, default=0.6)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"smile: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"smile: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAborted as exc:
        print(f"smile: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except OSError as exc:
        print(f"smile: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        print(f"smile: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
