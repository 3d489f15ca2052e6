"""Command line entry point: ``gmner {train,eval,predict,benchmark,gen-data,selftest}``.

Exit codes: 0 success, 1 validation/config/load error, 2 property-suite failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .core import ConfigError
from .data import SyntheticSpec, atomic_write_text, generate_synthetic, load_jsonl, save_jsonl
from .selftest import run_selftest
from .train import (CheckpointError, benchmark, evaluate, load_checkpoint, predict_examples, report_dict,
                    set_determinism, train, write_predictions)



class _Parser(argparse.ArgumentParser):
    # usage mistakes are validation errors (exit 1); 2 is reserved for selftest failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    if args.out_dir:
        config.out_dir = args.out_dir
    if not config.train_path or not config.dev_path:
        raise ConfigError("config must set train_path and dev_path")
    train_set = load_jsonl(config.train_path, config.type_names)
    dev_set = load_jsonl(config.dev_path, config.type_names)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    result = train(config, train_set, dev_set, out_dir=out)
    print(json.dumps({"checkpoint": str(result.checkpoint), "best_epoch": result.best_epoch + 1,
                      "best_dev_gmner_f1": result.best_f1, "seconds": round(result.seconds, 2)}))
    return 0


def _format_rows(rows) -> str:
    lines = [f"{'task':<6} {'type':<8} {'P':>7} {'R':>7} {'F1':>7} {'correct':>8} {'pred':>6} {'gold':>6}"]
    for r in rows:
        lines.append(f"{r.task:<6} {r.type:<8} {r.precision:7.4f} {r.recall:7.4f} {r.f1:7.4f} "
                     f"{r.correct:8d} {r.predict:6d} {r.gold:6d}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    model, vocab, _ = load_checkpoint(args.checkpoint)
    cfg = model.config
    examples = load_jsonl(args.data, cfg.type_names)
    rows, decoded = evaluate(model, vocab, examples)
    ckpt_dir = Path(args.checkpoint).parent
    report_path = Path(args.report) if args.report else ckpt_dir / "eval_report.json"
    pred_path = Path(args.predictions) if args.predictions else ckpt_dir / "eval_predictions.jsonl"
    atomic_write_text(report_path, json.dumps(report_dict(rows), indent=2))
    write_predictions(pred_path, decoded, examples, cfg.type_names)
    shown = rows if args.per_type else [r for r in rows if r.type == "All"]
    print(_format_rows(shown))
    print(f"report: {report_path}\npredictions: {pred_path}")
    return 0


def cmd_predict(args) -> int:
    model, vocab, _ = load_checkpoint(args.checkpoint)
    examples = load_jsonl(args.data, model.config.type_names)
    decoded = predict_examples(model, vocab, examples)
    write_predictions(args.out, decoded, examples, model.config.type_names)
    print(f"wrote {len(decoded)} prediction lines to {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    model, vocab, _ = load_checkpoint(args.checkpoint)
    set_determinism(model.config.seed, deterministic=False)
    examples = load_jsonl(args.data, model.config.type_names)
    if args.batch < 1:
        raise ConfigError("--batch must be >= 1")
    report = benchmark(model, vocab, examples, args.batch, repeats=args.repeats, warmup=args.warmup)
    print(json.dumps(report, indent=2))
    if report.get("batching_gain") is False:
        print(f"note: batch {args.batch} did not lower per-example latency versus batch 1", file=sys.stderr)
    return 0


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec.from_dict(_read_json(args.spec)) if args.spec else SyntheticSpec().validate()
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    examples = generate_synthetic(spec, args.count, args.seed)
    save_jsonl(examples, args.out, spec.type_names)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def cmd_selftest(args) -> int:
    return run_selftest(quick=args.quick)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gmner", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="override the config's out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a JSONL dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--per-type", action="store_true", help="print per-type rows as well")
    p.add_argument("--report", help="report JSON path (default: next to the checkpoint)")
    p.add_argument("--predictions", help="predictions JSONL path (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predictions for a JSONL dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="measure forward+decode throughput")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gen-data", help="generate a synthetic JSONL dataset")
    p.add_argument("--spec", help="JSON file with SyntheticSpec fields (defaults if omitted)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("selftest", help="run the property suite")
    p.add_argument("--quick", action="store_true", help="fewer random instances")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
