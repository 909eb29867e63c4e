"""The ``tat`` command line: run experiments, evaluate traces, generate and
solve corpora, and drive the ablation grid.

Exit codes: 0 on success, 1 on a startup error (bad arguments, unreadable
files, misconfiguration), 2 when the batch ran but at least one run failed to
complete.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backend import Config, load_config
from .engine import Method, MethodConfig
from .harness import (
    ExperimentConfig,
    evaluate_traces,
    run_ablation,
    run_experiment,
    task_adapter,
)
from .tasks import calendar as calendar_task

_METHOD_NAMES = [m.value for m in Method]


def _add_run(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("run", help="run methods over a corpus and write traces")
    p.add_argument("--task", required=True, choices=["calendar", "travel", "math"])
    p.add_argument(
        "--method",
        required=True,
        action="append",
        choices=_METHOD_NAMES,
        help="repeatable; each method runs over the whole corpus",
    )
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--backend", required=True, type=Path, help="backend config file")
    p.add_argument("--out", required=True, type=Path, help="trace output directory")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--retry-failed", action="store_true")
    p.add_argument(
        "--schema-style",
        choices=["free", "one-row", "multi-row"],
        default="free",
        help="prompt hint for schema granularity",
    )


def _add_eval(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("eval", help="score persisted traces and print a report")
    p.add_argument("--traces", required=True, type=Path)
    p.add_argument("--task", required=True, choices=["calendar", "travel", "math"])
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="also write report JSON here")


def _add_oracle(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("oracle", help="solve corpus queries exactly (gold answers)")
    p.add_argument("--task", required=True, choices=["calendar"])
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None)


def _add_gen(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("gen", help="generate a solvable corpus")
    p.add_argument("--task", required=True, choices=["calendar"])
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)


def _add_ablate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("ablate", help="run the schema-design x verification grid")
    p.add_argument("--task", required=True, choices=["calendar", "math"])
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--backend", required=True, type=Path)
    p.add_argument("--out", type=Path, default=Path("ablation-out"))
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--parallel", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tat", description="table-structured reasoning runner and evaluator"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_eval(sub)
    _add_oracle(sub)
    _add_gen(sub)
    _add_ablate(sub)
    return parser


def _method_configs(args, config: Config) -> list[MethodConfig]:
    adapter = task_adapter(args.task)
    max_iterations = args.max_iters or config.engine.max_iterations
    configs = []
    for name in args.method:
        method = Method(name)
        given = adapter.given_schema() if method is Method.TABLE_GIVEN else None
        if method is Method.TABLE_GIVEN and given is None:
            raise ValueError(f"task {args.task!r} has no given schema")
        configs.append(
            MethodConfig(
                method=method,
                task_kind=adapter.kind,
                max_iterations=max_iterations,
                given_schema=given,
                schema_style=args.schema_style,
            )
        )
    return configs


def _report_table(doc: dict) -> str:
    headers = ["method", "n", "completion%", "mean_iters"]
    has_accuracy = any("accuracy" in s for s in doc["methods"].values())
    if has_accuracy:
        headers += ["accuracy%"]
        if any("valid_slot_rate" in s for s in doc["methods"].values()):
            headers += ["valid_slot%"]
    rows = [headers]
    for method, stats in doc["methods"].items():
        row = [
            method,
            str(stats["n"]),
            f"{stats['completion_rate']:.1f}",
            f"{stats['mean_iterations']:.2f}",
        ]
        if has_accuracy:
            row.append("" if stats.get("accuracy") is None else f"{stats['accuracy']:.1f}")
            if "valid_slot%" in headers:
                row.append(
                    "" if stats.get("valid_slot_rate") is None else f"{stats['valid_slot_rate']:.1f}"
                )
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    for method, stats in doc["methods"].items():
        metrics = stats.get("metrics")
        if metrics:
            lines.append(f"{method}:")
            lines += [f"  {name}: {value:.2f}" for name, value in metrics.items()]
    return "\n".join(lines)


def _print_report(report) -> None:
    doc = report.to_json_dict()
    print(json.dumps(doc, indent=2))
    print(_report_table(doc))


def _cmd_run(args) -> int:
    config = load_config(args.backend)
    report = run_experiment(
        ExperimentConfig(
            task=args.task,
            methods=_method_configs(args, config),
            corpus=args.corpus,
            backend_config=config,
            out_dir=args.out,
            seed=args.seed,
            parallel=args.parallel,
            retry_failed=args.retry_failed,
        )
    )
    _print_report(report)
    return 2 if report.any_failed else 0


def _cmd_eval(args) -> int:
    config = Config()
    report = evaluate_traces(args.traces, args.task, corpus=args.corpus, config=config)
    _print_report(report)
    if args.out:
        args.out.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    return 0


def _cmd_oracle(args) -> int:
    items = calendar_task.read_corpus(args.input)
    lines = []
    for item in items:
        instance = calendar_task.parse_calendar_query(item.query_text)
        solution = calendar_task.solve_calendar(instance)
        lines.append(
            json.dumps(
                {
                    "id": item.id,
                    "answer": solution.meeting.render() if solution else None,
                    "respects_preferences": solution.respects_preferences
                    if solution
                    else None,
                }
            )
        )
    output = "\n".join(lines) + "\n"
    if args.out:
        args.out.write_text(output)
    else:
        sys.stdout.write(output)
    return 0


def _cmd_gen(args) -> int:
    if args.n < 1:
        raise ValueError("--n must be >= 1")
    items = calendar_task.generate_instances(args.seed, args.n)
    if args.out:
        calendar_task.write_corpus(items, args.out)
    else:
        for item in items:
            sys.stdout.write(
                json.dumps(
                    {
                        "id": item.id,
                        "query_text": item.query_text,
                        "gold": {
                            "day": item.gold.day,
                            "start": item.gold.slot.start,
                            "end": item.gold.slot.end,
                        },
                    }
                )
                + "\n"
            )
    return 0


def _cmd_ablate(args) -> int:
    config = load_config(args.backend)
    result = run_ablation(
        args.task,
        args.corpus,
        config,
        args.out,
        max_iterations=args.max_iters or config.engine.max_iterations,
        parallel=args.parallel,
    )
    print(json.dumps(result, indent=2))
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "eval": _cmd_eval,
    "oracle": _cmd_oracle,
    "gen": _cmd_gen,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"tat: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
