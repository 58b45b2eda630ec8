"""Single entry-point command with subcommands for batch operation.

Exit codes: 0 success, 2 usage or file errors, 3 validation failures,
4 gateway failures. Logs go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import corpus, pipeline, stats, textmetrics, validation
from .errors import GatewayError, TranscreateError, ValidationError
from .fileio import atomic_write_text, read_json, write_json
from .gateway import Gateway, HttpBackend, MockBackend, ProviderConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_GATEWAY = 4


@dataclass
class RunConfig:
    """Effective run settings: defaults, overridden by --config, then by flags."""

    provider: ProviderConfig = field(default_factory=ProviderConfig)
    taxonomy_path: str | None = None
    tagset_path: str | None = None
    prompts_dir: str | None = None
    rng_seed: int = 0
    retry_budget: int = 3
    length_envelope: float = 0.25
    alpha: float = 0.01
    mock_script_path: str | None = None
    request_log: str | None = None

    def __post_init__(self):
        if not 0 < self.length_envelope < 1:
            raise ValidationError("length_envelope must be in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must be in (0, 1)")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        settings: dict[str, Any] = {}
        provider_settings: dict[str, Any] = {}
        config_path = getattr(args, "config", None)
        if config_path:
            raw = read_json(config_path)
            provider_settings.update(raw.pop("provider", {}))
            settings.update(raw)
        for name in (
            "taxonomy_path",
            "tagset_path",
            "prompts_dir",
            "rng_seed",
            "retry_budget",
            "length_envelope",
            "alpha",
            "mock_script_path",
            "request_log",
        ):
            value = getattr(args, name, None)
            if value is not None:
                settings[name] = value
        known = set(cls.__dataclass_fields__) - {"provider"}
        unknown = set(settings) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            provider = ProviderConfig(**provider_settings)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad provider config: {exc}") from exc
        return cls(provider=provider, **settings)

    def build_gateway(self) -> Gateway:
        if self.mock_script_path:
            backend = MockBackend.from_file(self.mock_script_path)
            # No live transport behind the mock, so no backoff sleeps either.
            return Gateway(
                backend,
                max_retries=self.provider.max_retries,
                max_in_flight=self.provider.max_in_flight,
                backoff_base_s=0.0,
                log_path=self.request_log,
                rng_seed=self.rng_seed,
            )
        return Gateway(
            HttpBackend(self.provider),
            max_retries=self.provider.max_retries,
            max_in_flight=self.provider.max_in_flight,
            log_path=self.request_log,
            rng_seed=self.rng_seed,
        )

    def build_pipeline(self, gateway: Gateway) -> pipeline.TranscreationPipeline:
        taxonomy = corpus.load_taxonomy(self.taxonomy_path)
        tagset = corpus.load_tagset(self.tagset_path)
        templates = pipeline.load_templates(self.prompts_dir)
        return pipeline.TranscreationPipeline(
            gateway,
            taxonomy,
            tagset,
            templates,
            retry_budget=self.retry_budget,
            length_envelope=self.length_envelope,
            seed=self.rng_seed,
        )


def _emit(payload: Any, out_path: str | None) -> None:
    text = json.dumps(payload, ensure_ascii=False, indent=2) + "\n"
    if out_path:
        atomic_write_text(out_path, text)
    else:
        sys.stdout.write(text)


def _log(message: str) -> None:
    sys.stderr.write(message + "\n")


# -- subcommands ------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    items = corpus.load_items(args.in_path)
    _log(f"loaded {len(items)} items from {args.in_path}")
    if args.out:
        corpus.save_items(items, args.out)
        _log(f"wrote normalized items to {args.out}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    items = corpus.load_items(args.in_path)
    reports = {item.id: textmetrics.passage_report(item.passage) for item in items}
    summary = textmetrics.corpus_summary(list(reports.values()))
    payload = {
        "items": [{"id": item_id, **report.to_dict()} for item_id, report in reports.items()],
        "summary": summary.to_dict(),
        "rendered": summary.rendered(),
    }
    _emit(payload, args.out)
    return EXIT_OK


def cmd_transcreate(args: argparse.Namespace) -> int:
    config = RunConfig.from_args(args)
    items = corpus.load_items(args.in_path)
    taxonomy = corpus.load_taxonomy(config.taxonomy_path)
    profiles = corpus.load_profiles(args.profiles, taxonomy)
    assignments = pipeline.assign_topics(
        profiles, items, args.mode, config.rng_seed, taxonomy
    )
    gateway = config.build_gateway()
    pipe = config.build_pipeline(gateway)
    jobs = args.jobs
    if config.mock_script_path and jobs != 1:
        _log("mock runs are forced to --jobs 1 to stay deterministic")
        jobs = 1
    items_by_id = {item.id: item for item in items}
    work = [
        (items_by_id[target.item_id], target.topic, assignment.student_id, target.mode)
        for assignment in assignments
        for target in assignment.targets
    ]
    records = pipe.transcreate_many(work, jobs=jobs)
    pipeline.save_records(records, args.out)
    failed = [record for record in records if not record.status.is_complete]
    _log(
        f"wrote {len(records)} records to {args.out} "
        f"({len(records) - len(failed)} complete, {len(failed)} failed)"
    )
    if failed:
        for record in failed:
            _log(f"failed: {record.record_id} at step {record.status.step}: {record.status.reason}")
        if any(record.status.gateway_failure for record in failed):
            return EXIT_GATEWAY
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    config = RunConfig.from_args(args)
    records = pipeline.load_records(args.in_path)
    incomplete = [record for record in records if not record.status.is_complete]
    if incomplete:
        for record in incomplete:
            _log(f"record not judgeable: {record.record_id} ({record.status.reason})")
        return EXIT_VALIDATION
    gateway = config.build_gateway()
    templates = pipeline.load_templates(config.prompts_dir)
    if "judge_bloom" not in templates:
        raise ValidationError("missing prompt template: judge_bloom")
    judge = validation.BloomJudge(
        gateway, templates["judge_bloom"], retry_budget=config.retry_budget,
        seed=config.rng_seed,
    )
    verdicts: list[validation.JudgeVerdict] = []
    for record in records:
        verdicts.extend(judge.judge_record(record))
    report = validation.agreement_report(verdicts)
    payload = {
        "verdicts": [verdict.to_dict() for verdict in verdicts],
        "agreement": report.to_dict(),
    }
    _emit(payload, args.out)
    return EXIT_OK


def cmd_review(args: argparse.Namespace) -> int:
    if args.in_path:
        records = pipeline.load_records(args.in_path)
        if not records:
            _log("warning: no records; opening an empty queue")
        queue = validation.ReviewQueue.open_new(records, args.queue, force=args.force)
        _log(f"opened queue with {len(queue.entries)} entries at {args.queue}")
    else:
        queue = validation.ReviewQueue.load(args.queue)
    if args.open_only:
        return EXIT_OK
    with validation.QueueLock(args.queue):
        decided = validation.run_review_session(
            queue, args.reviewer, sys.stdin, sys.stdout
        )
    _log(f"recorded {decided} decisions; {len(queue.pending())} still pending")
    return EXIT_OK


def cmd_qa_report(args: argparse.Namespace) -> int:
    queue = validation.ReviewQueue.load(args.queue)
    report = validation.qa_report(queue)
    _emit(report.to_dict(), args.out)
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    records = stats.load_student_records(args.records)
    result = stats.balanced_split(
        records,
        args.group_size,
        allow_heuristic=args.heuristic,
        rng_seed=args.seed if args.seed is not None else 0,
    )
    _emit(result.to_dict(), args.out)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    records = stats.load_student_records(args.records)
    key = corpus.load_items(args.key)
    payload = {}
    for record in records:
        if args.test not in record.test_answers:
            raise ValidationError(f"{record.student_id} has no answers for {args.test}")
        payload[record.student_id] = stats.score_test(
            record.test_answers[args.test], key
        ).to_dict()
    _emit(payload, args.out)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    config = RunConfig.from_args(args)
    records = stats.load_student_records(args.records)
    keys = {}
    for spec_pair in args.key:
        test_id, _, key_path = spec_pair.partition("=")
        if not key_path:
            raise ValidationError(f"--key needs TEST=PATH, got {spec_pair!r}")
        keys[test_id] = corpus.load_items(key_path)
    report = stats.experiment_report(records, keys, alpha=config.alpha)
    if args.format == "text":
        text = stats.render_report_text(report)
        if args.out:
            atomic_write_text(args.out, text)
        else:
            sys.stdout.write(text)
    else:
        _emit(report, args.out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser, *, gateway: bool = False) -> None:
    parser.add_argument("--config", help="JSON config file; flags win over it")
    parser.add_argument("--taxonomy", dest="taxonomy_path", help="taxonomy JSON path")
    parser.add_argument("--tagset", dest="tagset_path", help="tag set JSON path")
    parser.add_argument("--alpha", type=float, help="significance threshold (default 0.01)")
    if gateway:
        parser.add_argument("--prompts", dest="prompts_dir", help="prompt template directory")
        parser.add_argument("--seed", dest="rng_seed", type=int, help="RNG seed (default 0)")
        parser.add_argument(
            "--retry-budget", dest="retry_budget", type=int,
            help="reply-violation retries per step (default 3)",
        )
        parser.add_argument(
            "--length-envelope", dest="length_envelope", type=float,
            help="allowed relative word-count deviation (default 0.25)",
        )
        parser.add_argument(
            "--mock", dest="mock_script_path",
            help="mock script JSON; switches the gateway to scripted replies",
        )
        parser.add_argument(
            "--log", dest="request_log", help="append-only JSONL request log path"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transcreate",
        description="Transcreate reading-comprehension items into learner interests "
        "and analyze the results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate an items JSONL file")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", help="optional normalized copy")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("analyze", help="per-passage metrics and corpus summary")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("transcreate", help="run the five-step pipeline over items")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--profiles", required=True, help="interest profiles JSON")
    p.add_argument("--mode", choices=["random", "interest"], required=True)
    p.add_argument("--out", required=True, help="records JSONL output (atomic)")
    p.add_argument("--jobs", type=int, default=1, help="parallel items (default 1)")
    _add_config_flags(p, gateway=True)
    p.set_defaults(handler=cmd_transcreate)

    p = sub.add_parser("judge", help="blind-judge question levels and report agreement")
    p.add_argument("--in", dest="in_path", required=True, help="records JSONL")
    p.add_argument("--out")
    _add_config_flags(p, gateway=True)
    p.set_defaults(handler=cmd_judge)

    p = sub.add_parser("review", help="interactive expert review of transcreated items")
    p.add_argument("--queue", required=True, help="queue JSON path")
    p.add_argument("--in", dest="in_path", help="records JSONL; opens a new queue")
    p.add_argument("--force", action="store_true", help="overwrite an existing queue")
    p.add_argument("--open-only", action="store_true", help="create the queue and exit")
    p.add_argument("--reviewer", default="reviewer", help="reviewer id for the audit log")
    p.set_defaults(handler=cmd_review)

    p = sub.add_parser("qa-report", help="flagging and edit statistics for a decided queue")
    p.add_argument("--queue", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_qa_report)

    p = sub.add_parser("split", help="balanced two-group split by TOEFL score")
    p.add_argument("--records", required=True, help="student records JSON")
    p.add_argument("--group-size", dest="group_size", type=int, required=True)
    p.add_argument("--heuristic", action="store_true", help="allow the swap search")
    p.add_argument("--seed", type=int, help="seed for the heuristic search")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("score", help="score answer sheets against a key")
    p.add_argument("--records", required=True)
    p.add_argument("--key", required=True, help="answer-key items JSONL")
    p.add_argument("--test", required=True, help="test id, e.g. test1")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("stats", help="full experiment report")
    p.add_argument("--records", required=True)
    p.add_argument(
        "--key", action="append", required=True, metavar="TEST=PATH",
        help="answer key per test; repeat for each test",
    )
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(handler=cmd_stats)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except FileNotFoundError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except GatewayError as exc:
        _log(f"gateway error: {exc}")
        return EXIT_GATEWAY
    except ValidationError as exc:
        _log(f"validation error: {exc}")
        return EXIT_VALIDATION
    except TranscreateError as exc:
        _log(f"error: {exc}")
        return EXIT_VALIDATION


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
