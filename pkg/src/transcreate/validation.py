"""Post-transcreation quality control.

Three concerns live here: blind LLM judging of question cognitive levels,
agreement statistics over the judge's verdicts, and the human review queue
with its append-only decision log.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, TextIO

from .corpus import BloomLevel
from .errors import ValidationError
from .fileio import read_json, write_json
from .gateway import CompletionRequest, Gateway, PromptTemplate, render_template
from .pipeline import Exchange, TranscreationRecord
from .textmetrics import tokenize_words

BLOOM_ORDER = tuple(BloomLevel)
_BLOOM_INDEX = {level: idx for idx, level in enumerate(BLOOM_ORDER)}


class EmptyVerdictSetError(ValidationError):
    pass


class QueueExistsError(ValidationError):
    pass


class UnknownItemError(ValidationError):
    def __init__(self, record_id: str):
        super().__init__(f"no queue entry for {record_id!r}")
        self.record_id = record_id


class AlreadyDecidedError(ValidationError):
    def __init__(self, record_id: str):
        super().__init__(f"entry {record_id!r} already has a decision")
        self.record_id = record_id


class PendingEntriesError(ValidationError):
    def __init__(self, count: int):
        super().__init__(f"{count} entries still pending review")
        self.count = count


class ConcurrentReviewError(ValidationError):
    pass


class IncompleteRecordError(ValidationError):
    def __init__(self, record_id: str, reason: str):
        super().__init__(f"record {record_id} is not complete: {reason}")
        self.record_id = record_id


# -- LLM-as-a-Judge -------------------------------------------------------------


@dataclass(frozen=True)
class JudgeVerdict:
    """One blind judgment of a transcreated question's cognitive level."""

    item_id: str
    question_idx: int
    source_bloom: BloomLevel
    judged_bloom: BloomLevel

    @property
    def match(self) -> bool:
        return self.source_bloom == self.judged_bloom

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "question_idx": self.question_idx,
            "source_bloom": self.source_bloom.value,
            "judged_bloom": self.judged_bloom.value,
            "match": self.match,
        }


class BloomJudge:
    """Judges transcreated questions without seeing their source labels."""

    def __init__(self, gateway: Gateway, template: PromptTemplate, *, retry_budget: int = 3,
                 temperature: float = 0.0, seed: int | None = 0):
        self.gateway = gateway
        self.template = template
        self.retry_budget = retry_budget
        self.temperature = temperature
        self.seed = seed

    def judge_record(
        self, record: TranscreationRecord, exchanges: list[Exchange] | None = None
    ) -> list[JudgeVerdict]:
        """One verdict per transcreated question, in question order."""
        from .pipeline import InvalidBloomReplyError

        if not record.status.is_complete:
            raise IncompleteRecordError(record.record_id, record.status.reason or "failed")
        if any(q.bloom is None for q in record.transcreated_questions):
            raise IncompleteRecordError(record.record_id, "question missing its source level")
        verdicts = []
        for idx, question in enumerate(record.transcreated_questions):
            options = "\n".join(
                f"{letter}. {opt}" for letter, opt in zip("ABCD", question.options)
            )
            system, user = render_template(
                self.template,
                {
                    "passage": record.transcreated_passage,
                    "stem": question.stem,
                    "options": options,
                },
            )
            prompt_user = user
            last_error: ValidationError | None = None
            judged: BloomLevel | None = None
            for _ in range(self.retry_budget + 1):
                request = CompletionRequest(
                    system=system, user=prompt_user,
                    temperature=self.temperature, seed=self.seed,
                )
                result = self.gateway.complete_ex(request, step="judge_bloom")
                if exchanges is not None:
                    exchanges.append(
                        Exchange(system=system, user=prompt_user,
                                 response=result.text, attempts=result.attempts)
                    )
                try:
                    judged = BloomLevel.parse(result.text)
                    break
                except ValueError as exc:
                    last_error = InvalidBloomReplyError(str(exc))
                    prompt_user = (
                        user
                        + "\n\nYour previous reply was rejected: "
                        + str(exc)
                        + "\nReply with exactly one of the six level names."
                    )
            if judged is None:
                assert last_error is not None
                raise last_error
            verdicts.append(
                JudgeVerdict(
                    item_id=record.record_id,
                    question_idx=idx,
                    source_bloom=question.bloom,
                    judged_bloom=judged,
                )
            )
        return verdicts


# -- agreement statistics -------------------------------------------------------


@dataclass(frozen=True)
class AgreementReport:
    """Confusion counts, accuracy, and Cohen's kappa for Bloom judging."""

    confusion: tuple[tuple[int, ...], ...]  # rows = source, cols = judged
    accuracy: float
    kappa: float | None  # None when expected agreement is 1 (undefined)
    n: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": [level.value for level in BLOOM_ORDER],
            "confusion": [list(row) for row in self.confusion],
            "accuracy": self.accuracy,
            "kappa": self.kappa if self.kappa is not None else "NotDefined",
            "n": self.n,
        }


def cohen_kappa(confusion: Sequence[Sequence[int]]) -> float | None:
    """Unweighted Cohen's kappa from a square confusion matrix.

    Expected agreement comes from the marginal products; returns None when
    expected agreement equals 1 (kappa undefined).
    """
    size = len(confusion)
    n = sum(sum(row) for row in confusion)
    if n <= 0:
        raise EmptyVerdictSetError("empty confusion matrix")
    trace = sum(confusion[i][i] for i in range(size))
    row_totals = [sum(row) for row in confusion]
    col_totals = [sum(confusion[i][j] for i in range(size)) for j in range(size)]
    expected_num = sum(r * c for r, c in zip(row_totals, col_totals))
    if expected_num == n * n:
        return None
    p_o = trace / n
    p_e = expected_num / (n * n)
    return (p_o - p_e) / (1 - p_e)


def agreement_report(verdicts: Sequence[JudgeVerdict]) -> AgreementReport:
    """Aggregate verdicts into a 6x6 confusion matrix with accuracy and kappa."""
    if not verdicts:
        raise EmptyVerdictSetError("no verdicts to aggregate")
    counts = [[0] * len(BLOOM_ORDER) for _ in BLOOM_ORDER]
    for verdict in verdicts:
        counts[_BLOOM_INDEX[verdict.source_bloom]][_BLOOM_INDEX[verdict.judged_bloom]] += 1
    n = len(verdicts)
    accuracy = sum(counts[i][i] for i in range(len(BLOOM_ORDER))) / n
    kappa = cohen_kappa(counts)
    return AgreementReport(
        confusion=tuple(tuple(row) for row in counts),
        accuracy=accuracy,
        kappa=kappa,
        n=n,
    )


# -- review queue ---------------------------------------------------------------


@dataclass(frozen=True)
class ReviewDecision:
    """One reviewer action on a queue entry.

    ``added_word_count`` is filled in by the queue when an edit is applied:
    the increase in word count, floored at zero.
    """

    item_id: str
    verdict: str  # "accept" | "edit" | "reject"
    reviewer_id: str
    timestamp: str
    new_passage: str | None = None
    reason: str | None = None
    unanswerable_questions: tuple[int, ...] = ()
    added_word_count: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "unanswerable_questions", tuple(self.unanswerable_questions)
        )
        if self.verdict not in ("accept", "edit", "reject"):
            raise ValueError(f"bad verdict {self.verdict!r}")
        if self.verdict == "edit" and not self.new_passage:
            raise ValueError("edit decisions need a replacement passage")
        if self.verdict == "reject" and not self.reason:
            raise ValueError("reject decisions need a reason")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "item_id": self.item_id,
            "verdict": self.verdict,
            "reviewer_id": self.reviewer_id,
            "timestamp": self.timestamp,
            "added_word_count": self.added_word_count,
        }
        if self.new_passage is not None:
            out["new_passage"] = self.new_passage
        if self.reason is not None:
            out["reason"] = self.reason
        if self.unanswerable_questions:
            out["unanswerable_questions"] = list(self.unanswerable_questions)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ReviewDecision":
        return cls(
            item_id=data["item_id"],
            verdict=data["verdict"],
            reviewer_id=data["reviewer_id"],
            timestamp=data["timestamp"],
            new_passage=data.get("new_passage"),
            reason=data.get("reason"),
            unanswerable_questions=tuple(data.get("unanswerable_questions", [])),
            added_word_count=data.get("added_word_count", 0),
        )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class QueueEntry:
    record_id: str
    passage: str
    questions: list[dict[str, Any]]
    original_passage: str
    decision: ReviewDecision | None = None

    @property
    def pending(self) -> bool:
        return self.decision is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "passage": self.passage,
            "questions": self.questions,
            "original_passage": self.original_passage,
            "decision": self.decision.to_dict() if self.decision else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QueueEntry":
        decision = data.get("decision")
        return cls(
            record_id=data["record_id"],
            passage=data["passage"],
            questions=list(data["questions"]),
            original_passage=data["original_passage"],
            decision=ReviewDecision.from_dict(decision) if decision else None,
        )


class ReviewQueue:
    """Persistent queue of transcreated items awaiting expert review.

    Decisions are append-only: replaying the log against the original queue
    reproduces the final state. One writer at a time, enforced by a lock file.
    """

    def __init__(self, entries: Iterable[QueueEntry], path: str | Path,
                 log: Iterable[ReviewDecision] = ()):
        self.entries: dict[str, QueueEntry] = {e.record_id: e for e in entries}
        self.path = Path(path)
        self.log: list[ReviewDecision] = list(log)

    @classmethod
    def open_new(
        cls,
        records: Sequence[TranscreationRecord],
        path: str | Path,
        *,
        force: bool = False,
    ) -> "ReviewQueue":
        """Create a queue file from complete records; refuses to clobber without force."""
        path = Path(path)
        if path.exists() and not force:
            raise QueueExistsError(f"queue already exists: {path} (use force to overwrite)")
        entries = []
        for record in records:
            if not record.status.is_complete:
                raise IncompleteRecordError(record.record_id, record.status.reason or "failed")
            entries.append(
                QueueEntry(
                    record_id=record.record_id,
                    passage=record.transcreated_passage,
                    questions=[q.to_dict() for q in record.transcreated_questions],
                    original_passage=record.transcreated_passage,
                )
            )
        queue = cls(entries, path)
        queue.save()
        return queue

    @classmethod
    def load(cls, path: str | Path) -> "ReviewQueue":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"queue file not found: {path}")
        data = read_json(path)
        return cls(
            entries=[QueueEntry.from_dict(e) for e in data["entries"]],
            path=path,
            log=[ReviewDecision.from_dict(d) for d in data["log"]],
        )

    def save(self) -> None:
        write_json(
            self.path,
            {
                "entries": [entry.to_dict() for entry in self.entries.values()],
                "log": [decision.to_dict() for decision in self.log],
            },
        )

    def pending(self) -> list[QueueEntry]:
        return [entry for entry in self.entries.values() if entry.pending]

    def apply(self, decision: ReviewDecision) -> QueueEntry:
        """Apply one decision; edits replace the passage and count added words."""
        entry = self.entries.get(decision.item_id)
        if entry is None:
            raise UnknownItemError(decision.item_id)
        if not entry.pending:
            raise AlreadyDecidedError(decision.item_id)
        if decision.verdict == "edit":
            old_words = len(tokenize_words(entry.passage))
            new_words = len(tokenize_words(decision.new_passage))
            decision = ReviewDecision(
                item_id=decision.item_id,
                verdict=decision.verdict,
                reviewer_id=decision.reviewer_id,
                timestamp=decision.timestamp,
                new_passage=decision.new_passage,
                reason=decision.reason,
                unanswerable_questions=decision.unanswerable_questions,
                added_word_count=max(new_words - old_words, 0),
            )
            entry.passage = decision.new_passage
        entry.decision = decision
        self.log.append(decision)
        return entry

    def replay(self, decisions: Sequence[ReviewDecision]) -> "ReviewQueue":
        """Rebuild a fresh queue state by replaying decisions over the original entries.

        Used to verify the append-only audit property.
        """
        fresh = ReviewQueue(
            entries=[
                QueueEntry(
                    record_id=e.record_id,
                    passage=e.original_passage,
                    questions=list(e.questions),
                    original_passage=e.original_passage,
                )
                for e in self.entries.values()
            ],
            path=self.path,
        )
        for decision in decisions:
            fresh.apply(decision)
        return fresh


class QueueLock:
    """Single-writer lock for a queue file (O_EXCL lock file next to it)."""

    def __init__(self, queue_path: str | Path):
        self.lock_path = Path(str(queue_path) + ".lock")

    def __enter__(self) -> "QueueLock":
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConcurrentReviewError(
                f"another review session holds {self.lock_path}"
            ) from None
        os.close(fd)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        try:
            os.unlink(self.lock_path)
        except OSError:
            pass


# -- QA report ------------------------------------------------------------------


@dataclass(frozen=True)
class QAReport:
    """Flagging and edit statistics over a fully decided review queue."""

    total_questions: int
    flagged_unanswerable: int
    unanswerable_rate: float
    edited_passages: int
    mean_added_words: float

    def rendered_rate(self) -> str:
        """Percentage with one decimal, half-up (1 of 36 renders as '2.8%')."""
        if self.total_questions == 0:
            return "0.0%"
        percent = (
            Decimal(self.flagged_unanswerable) * 100 / Decimal(self.total_questions)
        ).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
        return f"{percent}%"

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_questions": self.total_questions,
            "flagged_unanswerable": self.flagged_unanswerable,
            "unanswerable_rate": self.unanswerable_rate,
            "unanswerable_rate_rendered": self.rendered_rate(),
            "edited_passages": self.edited_passages,
            "mean_added_words": self.mean_added_words,
        }


def qa_report(queue: ReviewQueue) -> QAReport:
    """Aggregate a fully decided queue; raises PendingEntriesError otherwise."""
    pending = queue.pending()
    if pending:
        raise PendingEntriesError(len(pending))
    total_questions = sum(len(entry.questions) for entry in queue.entries.values())
    flagged = 0
    added: list[int] = []
    for entry in queue.entries.values():
        decision = entry.decision
        flagged += len(decision.unanswerable_questions)
        if decision.verdict == "edit":
            added.append(decision.added_word_count)
    return QAReport(
        total_questions=total_questions,
        flagged_unanswerable=flagged,
        unanswerable_rate=(flagged / total_questions) if total_questions else 0.0,
        edited_passages=len(added),
        mean_added_words=(sum(added) / len(added)) if added else 0.0,
    )


# -- interactive session ----------------------------------------------------------


def run_review_session(
    queue: ReviewQueue,
    reviewer_id: str,
    in_stream: TextIO,
    out_stream: TextIO,
) -> int:
    """Walk the pending entries interactively; returns how many got decided.

    Commands: a(ccept), e(dit), r(eject), s(kip), q(uit). The queue file is
    saved after every decision.
    """

    def say(text: str = "") -> None:
        out_stream.write(text + "\n")
        out_stream.flush()

    def ask(prompt: str) -> str | None:
        out_stream.write(prompt)
        out_stream.flush()
        line = in_stream.readline()
        if line == "":
            return None
        return line.rstrip("\n")

    decided = 0
    for entry in list(queue.pending()):
        say(f"=== {entry.record_id} ===")
        say(entry.passage)
        for idx, question in enumerate(entry.questions, start=1):
            say(f"Q{idx}. {question['stem']}")
            for letter, option in zip("ABCD", question["options"]):
                say(f"  {letter}. {option}")
            answer = "ABCD"[question["answer_index"]]
            bloom = question.get("bloom", "?")
            say(f"  (answer: {answer}, level: {bloom})")
        choice = ask("Decision [a]ccept / [e]dit / [r]eject / [s]kip / [q]uit: ")
        if choice is None or choice.strip().lower() in ("q", "quit"):
            break
        choice = choice.strip().lower()
        if choice in ("s", "skip", ""):
            continue
        if choice not in ("a", "accept", "e", "edit", "r", "reject"):
            say(f"unrecognized choice {choice!r}; skipping entry")
            continue
        new_passage = None
        reason = None
        if choice in ("e", "edit"):
            say("Enter the replacement passage; finish with a line holding only '.'")
            lines: list[str] = []
            while True:
                line = in_stream.readline()
                if line == "" or line.rstrip("\n") == ".":
                    break
                lines.append(line.rstrip("\n"))
            new_passage = "\n".join(lines)
            verdict = "edit"
        elif choice in ("r", "reject"):
            reason = ask("Reason: ") or "unspecified"
            verdict = "reject"
        else:
            verdict = "accept"
        flagged_raw = ask("Unanswerable question numbers (comma-separated, blank for none): ")
        flagged: tuple[int, ...] = ()
        if flagged_raw:
            try:
                flagged = tuple(
                    int(token.strip()) - 1 for token in flagged_raw.split(",") if token.strip()
                )
            except ValueError:
                say("could not parse question numbers; recording none")
                flagged = ()
        decision = ReviewDecision(
            item_id=entry.record_id,
            verdict=verdict,
            reviewer_id=reviewer_id,
            timestamp=_now(),
            new_passage=new_passage,
            reason=reason,
            unanswerable_questions=flagged,
        )
        queue.apply(decision)
        queue.save()
        decided += 1
    return decided
