"""Experiment statistics: balanced splitting, scoring, exact rank tests, IMMS.

The Wilcoxon and Mann-Whitney tests take an exact enumeration path at desk
scale (two groups of ten fit comfortably) and fall back to a tie-corrected
normal approximation beyond it. All functions are pure.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .corpus import BloomLevel, ReadingItem
from .errors import ValidationError
from .textmetrics import mean_std

POINTS_PER_QUESTION = 5
IMMS_SUBSCALES = ("Attention", "Relevance", "Confidence", "Satisfaction")

WILCOXON_EXACT_LIMIT = 20  # max nonzero differences for enumeration
MANNWHITNEY_EXACT_LIMIT = 20  # max pooled sample size for enumeration
SPLIT_EXACT_LIMIT = 12  # max group size for exhaustive search


class AllZeroDifferencesError(ValidationError):
    pass


class LengthMismatchError(ValidationError):
    pass


class TooLargeError(ValidationError):
    pass


class NoResponsesError(ValidationError):
    pass


class MalformedRecordError(ValidationError):
    pass


# -- data model -------------------------------------------------------------------


@dataclass(frozen=True)
class ImmsResponse:
    item_id: str
    subscale: str
    response: int

    def __post_init__(self):
        if self.subscale not in IMMS_SUBSCALES:
            raise ValueError(f"unknown IMMS subscale {self.subscale!r}")
        if not 1 <= self.response <= 7:
            raise ValueError(f"IMMS response out of range: {self.response}")


@dataclass(frozen=True)
class StudentRecord:
    """One participant: proficiency, group, answers, timings, survey responses."""

    student_id: str
    toefl: float
    group: str = "unassigned"  # "A" | "B" | "unassigned"
    test_answers: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    turnaround_minutes: Mapping[str, float] = field(default_factory=dict)
    imms: Mapping[str, tuple[ImmsResponse, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.group not in ("A", "B", "unassigned"):
            raise ValueError(f"group must be A, B, or unassigned, not {self.group!r}")
        for test_id, answers in self.test_answers.items():
            for answer in answers:
                if not isinstance(answer, int) or not 0 <= answer <= 3:
                    raise ValueError(f"answer out of range in {test_id}: {answer!r}")


def load_student_records(path: str | Path) -> list[StudentRecord]:
    """Load a JSON array of student records."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"student records file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(f"student records file is not valid JSON: {exc}") from exc
    records = []
    for entry in raw:
        try:
            records.append(
                StudentRecord(
                    student_id=entry["student_id"],
                    toefl=float(entry["toefl"]),
                    group=entry.get("group") or "unassigned",
                    test_answers={
                        test: tuple(answers)
                        for test, answers in entry.get("test_answers", {}).items()
                    },
                    turnaround_minutes={
                        test: float(minutes)
                        for test, minutes in entry.get("turnaround_minutes", {}).items()
                    },
                    imms={
                        test: tuple(
                            ImmsResponse(
                                item_id=r["item_id"],
                                subscale=r["subscale"],
                                response=r["response"],
                            )
                            for r in responses
                        )
                        for test, responses in entry.get("imms", {}).items()
                    },
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecordError(f"bad student record: {exc}") from exc
    return records


# -- balanced split ----------------------------------------------------------------


@dataclass(frozen=True)
class SplitResult:
    group_a: frozenset[str]
    group_b: frozenset[str]
    mean_gap: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "group_a": sorted(self.group_a),
            "group_b": sorted(self.group_b),
            "mean_gap": self.mean_gap,
        }


def _as_scored(students: Iterable[Any]) -> list[tuple[str, float]]:
    scored = []
    for student in students:
        if isinstance(student, StudentRecord):
            scored.append((student.student_id, float(student.toefl)))
        else:
            sid, score = student
            scored.append((str(sid), float(score)))
    ids = [sid for sid, _ in scored]
    if len(set(ids)) != len(ids):
        raise ValueError("student ids must be unique")
    return scored


def _partition_key(
    a_idx: Sequence[int], scores: Sequence[float], total: float, k: int
) -> tuple[float, float]:
    sum_a = sum(scores[i] for i in a_idx)
    gap = abs(2 * sum_a - total) / k
    mean_a = sum_a / k
    mean_b = (total - sum_a) / k
    var_a = sum((scores[i] - mean_a) ** 2 for i in a_idx) / k
    ssq_b = sum(s * s for s in scores) - sum(scores[i] ** 2 for i in a_idx)
    var_b = ssq_b / k - mean_b**2
    std_gap = abs(math.sqrt(max(var_a, 0.0)) - math.sqrt(max(var_b, 0.0)))
    return gap, std_gap


def balanced_split(
    students: Iterable[Any],
    group_size: int,
    *,
    allow_heuristic: bool = False,
    rng_seed: int = 0,
) -> SplitResult:
    """Split 2k students into two groups of k with minimal TOEFL mean gap.

    Exhaustive over all C(2k, k) partitions for k <= 12; ties break on the
    smaller |std_A - std_B|, then the lexicographically smallest id set in
    group A. The result does not depend on input order. Beyond k = 12 pass
    ``allow_heuristic=True`` for a seeded swap search.
    """
    scored = sorted(_as_scored(students))  # canonical order by id
    if len(scored) != 2 * group_size:
        raise ValueError(f"need exactly {2 * group_size} students, got {len(scored)}")
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    ids = [sid for sid, _ in scored]
    scores = [score for _, score in scored]
    total = sum(scores)
    k = group_size

    if group_size > SPLIT_EXACT_LIMIT:
        if not allow_heuristic:
            raise TooLargeError(
                f"group_size {group_size} exceeds the exact bound {SPLIT_EXACT_LIMIT}; "
                "pass allow_heuristic=True for a greedy swap search"
            )
        return _heuristic_split(ids, scores, k, rng_seed)

    best_key: tuple[float, float, tuple[str, ...]] | None = None
    best_idx: tuple[int, ...] | None = None
    # The lexicographic tie-break puts the smallest id in group A, so only
    # subsets containing index 0 need considering.
    for rest in combinations(range(1, 2 * k), k - 1):
        a_idx = (0,) + rest
        gap, std_gap = _partition_key(a_idx, scores, total, k)
        key = (gap, std_gap, tuple(ids[i] for i in a_idx))
        if best_key is None or key < best_key:
            best_key = key
            best_idx = a_idx
    assert best_idx is not None and best_key is not None
    group_a = frozenset(ids[i] for i in best_idx)
    return SplitResult(
        group_a=group_a,
        group_b=frozenset(ids) - group_a,
        mean_gap=best_key[0],
    )


def _heuristic_split(
    ids: Sequence[str], scores: Sequence[float], k: int, rng_seed: int
) -> SplitResult:
    """Seeded multi-restart pairwise-swap descent on (gap, std gap)."""
    total = sum(scores)
    rng = random.Random(rng_seed)
    indices = list(range(len(ids)))
    best_key: tuple[float, float, tuple[str, ...]] | None = None
    best_a: list[int] | None = None
    for _ in range(20):
        rng.shuffle(indices)
        a_set = sorted(indices[:k])
        b_set = sorted(indices[k:])
        improved = True
        while improved:
            improved = False
            current = _partition_key(a_set, scores, total, k)
            for i in range(k):
                for j in range(k):
                    candidate = sorted(a_set[:i] + a_set[i + 1 :] + [b_set[j]])
                    cand_key = _partition_key(candidate, scores, total, k)
                    if cand_key < current:
                        b_set = sorted(b_set[:j] + b_set[j + 1 :] + [a_set[i]])
                        a_set = candidate
                        current = cand_key
                        improved = True
                        break
                if improved:
                    break
        gap, std_gap = _partition_key(a_set, scores, total, k)
        # Canonical labeling: group A holds the lexicographically smaller ids.
        a_ids = tuple(sorted(ids[i] for i in a_set))
        b_ids = tuple(sorted(ids[i] for i in b_set))
        if b_ids < a_ids:
            a_ids, b_ids = b_ids, a_ids
        key = (gap, std_gap, a_ids)
        if best_key is None or key < best_key:
            best_key = key
            best_a = [i for i in range(len(ids)) if ids[i] in set(a_ids)]
    assert best_a is not None and best_key is not None
    group_a = frozenset(ids[i] for i in best_a)
    return SplitResult(
        group_a=group_a,
        group_b=frozenset(ids) - group_a,
        mean_gap=best_key[0],
    )


# -- scoring -----------------------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    score: int
    correct_by_bloom: Mapping[BloomLevel, tuple[int, int]]  # level -> (correct, total)

    def to_dict(self) -> dict[str, Any]:
        return {
            "score": self.score,
            "correct_by_bloom": {
                level.value: {"correct": c, "total": t}
                for level, (c, t) in self.correct_by_bloom.items()
            },
        }


def flatten_key(key: Sequence[ReadingItem]) -> list:
    """All questions of an answer key, in item order."""
    return [question for item in key for question in item.questions]


def score_test(answers: Sequence[int], key: Sequence[ReadingItem]) -> TestResult:
    """Score an answer sheet: 5 points per correct answer, per-level breakdown."""
    questions = flatten_key(key)
    if len(answers) != len(questions):
        raise LengthMismatchError(
            f"{len(answers)} answers for {len(questions)} questions"
        )
    correct = 0
    by_bloom: dict[BloomLevel, list[int]] = {}
    for answer, question in zip(answers, questions):
        if question.bloom is None:
            raise ValidationError(f"key question {question.stem!r} has no cognitive level")
        tally = by_bloom.setdefault(question.bloom, [0, 0])
        tally[1] += 1
        if answer == question.answer_index:
            tally[0] += 1
            correct += 1
    return TestResult(
        score=POINTS_PER_QUESTION * correct,
        correct_by_bloom={level: (c, t) for level, (c, t) in by_bloom.items()},
    )


# -- rank machinery ----------------------------------------------------------------


def _ranks_doubled(values: Sequence[float]) -> list[int]:
    """Average ranks scaled by 2 so ties stay exact integers."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    doubled = [0] * len(values)
    idx = 0
    while idx < len(order):
        tie_end = idx
        while (
            tie_end + 1 < len(order)
            and values[order[tie_end + 1]] == values[order[idx]]
        ):
            tie_end += 1
        # ranks idx+1 .. tie_end+1 share the average; doubled it is lo+hi
        rank2 = (idx + 1) + (tie_end + 1)
        for j in range(idx, tie_end + 1):
            doubled[order[j]] = rank2
        idx = tie_end + 1
    return doubled


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@dataclass(frozen=True)
class StatTestResult:
    statistic: float
    p_value: float
    method: str  # "exact" | "normal-approx" | "degenerate"
    sides: str  # "one" | "two"
    n: Mapping[str, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "method": self.method,
            "sides": self.sides,
            "n": dict(self.n),
        }


def wilcoxon_signed_rank(
    x: Sequence[float], y: Sequence[float], sides: str = "two"
) -> StatTestResult:
    """Paired signed-rank test; W = min(W+, W-).

    Zero differences are dropped; tied magnitudes get average ranks. With at
    most 20 nonzero differences the p-value enumerates all sign patterns
    exactly; beyond that a tie-corrected normal approximation with continuity
    correction applies. One-sided means the tail in the observed direction;
    two-sided doubles it, capped at 1.
    """
    if sides not in ("one", "two"):
        raise ValueError("sides must be 'one' or 'two'")
    if len(x) != len(y):
        raise LengthMismatchError(f"paired samples differ: {len(x)} vs {len(y)}")
    if not x:
        raise ValueError("empty samples")
    diffs = [float(a) - float(b) for a, b in zip(x, y)]
    zeros = sum(1 for d in diffs if d == 0)
    diffs = [d for d in diffs if d != 0]
    if not diffs:
        raise AllZeroDifferencesError("all paired differences are zero")
    magnitudes = [abs(d) for d in diffs]
    ranks2 = _ranks_doubled(magnitudes)
    w2_plus = sum(r for r, d in zip(ranks2, diffs) if d > 0)
    total2 = sum(ranks2)
    w2_minus = total2 - w2_plus
    statistic = min(w2_plus, w2_minus) / 2.0
    m = len(diffs)
    n_desc = {"pairs": len(x), "nonzero": m, "zeros_dropped": zeros}

    if m <= WILCOXON_EXACT_LIMIT:
        # Distribution of 2*W+ over all sign patterns, as exact counts.
        counts = [0] * (total2 + 1)
        counts[0] = 1
        for rank2 in ranks2:
            for s in range(total2, rank2 - 1, -1):
                counts[s] += counts[s - rank2]
        t2 = min(w2_plus, w2_minus)
        favorable = sum(counts[: t2 + 1])
        p_one = favorable / (1 << m)
        method = "exact"
    else:
        mean2 = total2 / 2.0
        var2 = sum(r * r for r in ranks2) / 4.0  # Var(2W+) = sum (2r)^2 /4
        sd2 = math.sqrt(var2)
        t2 = min(w2_plus, w2_minus)
        if sd2 == 0:
            p_one = 1.0
        else:
            z = (t2 - mean2 + 1.0) / sd2  # +1 is the 0.5 continuity shift, doubled
            p_one = _normal_cdf(z)
        method = "normal-approx"

    p_value = p_one if sides == "one" else min(1.0, 2.0 * p_one)
    return StatTestResult(
        statistic=statistic, p_value=p_value, method=method, sides=sides, n=n_desc
    )


def mann_whitney_u(
    a: Sequence[float], b: Sequence[float], sides: str = "two"
) -> StatTestResult:
    """Unpaired rank-sum test; U = min(U_a, U_b), average ranks for ties.

    With a pooled size of at most 20 the p-value enumerates all C(n+m, n)
    labelings of the observed (possibly tied) ranks exactly; beyond that a
    tie-corrected normal approximation with continuity correction applies.
    """
    if sides not in ("one", "two"):
        raise ValueError("sides must be 'one' or 'two'")
    if not a or not b:
        raise ValueError("both samples must be non-empty")
    n_a, n_b = len(a), len(b)
    pooled = [float(v) for v in a] + [float(v) for v in b]
    ranks2 = _ranks_doubled(pooled)
    r2_a = sum(ranks2[:n_a])
    u2_a = 2 * n_a * n_b + n_a * (n_a + 1) - r2_a  # doubled U_a
    u2_b = 2 * n_a * n_b - u2_a
    statistic = min(u2_a, u2_b) / 2.0
    n_desc = {"n_a": n_a, "n_b": n_b}
    total = n_a + n_b

    if total <= MANNWHITNEY_EXACT_LIMIT:
        # Count size-n_a subsets of the doubled ranks by rank sum.
        max_sum = sum(ranks2)
        counts = [[0] * (max_sum + 1) for _ in range(n_a + 1)]
        counts[0][0] = 1
        for rank2 in ranks2:
            for chosen in range(min(n_a, total) - 1, -1, -1):
                row = counts[chosen]
                nxt = counts[chosen + 1]
                for s in range(max_sum - rank2, -1, -1):
                    if row[s]:
                        nxt[s + rank2] += row[s]
        # U_a <= u  <=>  R2_a >= 2*n_a*n_b + n_a*(n_a+1) - 2u; use the doubled
        # observed minimum directly.
        u2_min = min(u2_a, u2_b)
        threshold = 2 * n_a * n_b + n_a * (n_a + 1) - u2_min
        favorable = sum(counts[n_a][s] for s in range(threshold, max_sum + 1))
        total_labelings = math.comb(total, n_a)
        p_one = favorable / total_labelings
        method = "exact"
    else:
        mean = n_a * n_b / 2.0
        tie_counts: dict[int, int] = {}
        for rank2 in ranks2:
            tie_counts[rank2] = tie_counts.get(rank2, 0) + 1
        tie_term = sum(t**3 - t for t in tie_counts.values())
        var = (n_a * n_b / 12.0) * ((total + 1) - tie_term / (total * (total - 1)))
        u_min = min(u2_a, u2_b) / 2.0
        if var <= 0:
            p_one = 1.0
        else:
            z = (u_min - mean + 0.5) / math.sqrt(var)
            p_one = _normal_cdf(z)
        method = "normal-approx"

    p_value = p_one if sides == "one" else min(1.0, 2.0 * p_one)
    return StatTestResult(
        statistic=statistic, p_value=p_value, method=method, sides=sides, n=n_desc
    )


# -- Likert / IMMS -----------------------------------------------------------------


@dataclass(frozen=True)
class LikertSummary:
    mean: float
    std: float
    n: int

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean, "std": self.std, "n": self.n}


def _student_imms_means(
    records: Sequence[StudentRecord], test_id: str, subscale: str | None
) -> list[float]:
    means = []
    for record in records:
        responses = [
            r.response
            for r in record.imms.get(test_id, ())
            if subscale is None or r.subscale == subscale
        ]
        if responses:
            means.append(sum(responses) / len(responses))
    return means


def likert_summary(
    records: Sequence[StudentRecord], test_id: str, subscale: str | None = None
) -> LikertSummary:
    """Student-first aggregation: mean +- sample std over per-student means."""
    if subscale is not None and subscale not in IMMS_SUBSCALES:
        raise ValueError(f"unknown IMMS subscale {subscale!r}")
    means = _student_imms_means(records, test_id, subscale)
    if not means:
        raise NoResponsesError(f"no IMMS responses for test {test_id!r}")
    mean, std = mean_std(means)
    return LikertSummary(mean=mean, std=std, n=len(means))


# -- experiment report ---------------------------------------------------------------


def _paired_wilcoxon(before: Sequence[float], after: Sequence[float]) -> dict[str, Any]:
    """Within-group paired test; a group with literally no change reports p = 1."""
    try:
        return wilcoxon_signed_rank(after, before, sides="two").to_dict()
    except AllZeroDifferencesError:
        return {
            "statistic": 0.0,
            "p_value": 1.0,
            "method": "degenerate",
            "sides": "two",
            "n": {"pairs": len(before), "nonzero": 0, "zeros_dropped": len(before)},
        }


def experiment_report(
    records: Sequence[StudentRecord],
    keys: Mapping[str, Sequence[ReadingItem]],
    alpha: float = 0.01,
) -> dict[str, Any]:
    """Run the full quantitative analysis over supplied student records.

    Per group: score means per test, within-group Wilcoxon on the score and
    turnaround deltas, per-level point deltas, IMMS summaries. Between groups:
    Mann-Whitney on per-student IMMS means and on their retention deltas.
    Significance is flagged at ``alpha`` (default 0.01).
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    test_ids = sorted(keys)
    if len(test_ids) != 2:
        raise ValueError(f"expected exactly 2 answer keys, got {len(test_ids)}")
    first, second = test_ids
    groups: dict[str, list[StudentRecord]] = {"A": [], "B": []}
    for record in records:
        if record.group in groups:
            groups[record.group].append(record)
    for name, members in groups.items():
        if not members:
            raise ValidationError(f"group {name} is empty")

    def scores_for(members: Sequence[StudentRecord], test_id: str) -> list[float]:
        result = []
        for member in members:
            if test_id not in member.test_answers:
                raise ValidationError(f"{member.student_id} has no answers for {test_id}")
            result.append(
                float(score_test(member.test_answers[test_id], keys[test_id]).score)
            )
        return result

    def bloom_points(member: StudentRecord, test_id: str) -> dict[BloomLevel, int]:
        result = score_test(member.test_answers[test_id], keys[test_id])
        return {
            level: POINTS_PER_QUESTION * correct
            for level, (correct, _) in result.correct_by_bloom.items()
        }

    report: dict[str, Any] = {"alpha": alpha, "tests": test_ids, "groups": {}}
    imms_means: dict[str, dict[str, list[float]]] = {}

    for name, members in groups.items():
        before = scores_for(members, first)
        after = scores_for(members, second)
        deltas = [b - a for a, b in zip(before, after)]
        score_test_stat = _paired_wilcoxon(before, after)
        delta_mean, delta_std = mean_std(deltas)

        bloom_seq = tuple(BloomLevel)
        bloom_levels = sorted(
            {
                level
                for test_id in test_ids
                for item in keys[test_id]
                for level in [q.bloom for q in item.questions]
                if level is not None
            },
            key=bloom_seq.index,
        )
        bloom_section = {}
        for level in bloom_levels:
            per_student = [
                bloom_points(m, second).get(level, 0) - bloom_points(m, first).get(level, 0)
                for m in members
            ]
            b_mean, b_std = mean_std(per_student)
            bloom_section[level.value] = {"delta_mean": b_mean, "delta_std": b_std}

        turnaround_section: dict[str, Any] = {}
        have_times = all(
            first in m.turnaround_minutes and second in m.turnaround_minutes for m in members
        )
        if have_times:
            t_before = [m.turnaround_minutes[first] for m in members]
            t_after = [m.turnaround_minutes[second] for m in members]
            tb_mean, tb_std = mean_std(t_before)
            ta_mean, ta_std = mean_std(t_after)
            t_stat = _paired_wilcoxon(t_before, t_after)
            turnaround_section = {
                first: {"mean": tb_mean, "std": tb_std},
                second: {"mean": ta_mean, "std": ta_std},
                "wilcoxon": t_stat,
                "significant": t_stat["p_value"] < alpha,
            }

        imms_section: dict[str, Any] = {}
        imms_means[name] = {}
        for test_id in test_ids:
            means = _student_imms_means(members, test_id, None)
            imms_means[name][test_id] = means
            if means:
                m_mean, m_std = mean_std(means)
                imms_section[test_id] = {"mean": m_mean, "std": m_std, "n": len(means)}

        b_mean, b_std = mean_std(before)
        a_mean, a_std = mean_std(after)
        report["groups"][name] = {
            "n": len(members),
            "scores": {
                first: {"mean": b_mean, "std": b_std},
                second: {"mean": a_mean, "std": a_std},
            },
            "score_delta": {
                "mean": delta_mean,
                "std": delta_std,
                "wilcoxon": score_test_stat,
                "significant": score_test_stat["p_value"] < alpha,
            },
            "bloom_deltas": bloom_section,
            "turnaround": turnaround_section,
            "imms": imms_section,
        }

    between: dict[str, Any] = {}
    for test_id in test_ids:
        means_a = imms_means["A"][test_id]
        means_b = imms_means["B"][test_id]
        if means_a and means_b:
            stat = mann_whitney_u(means_a, means_b, sides="two").to_dict()
            between[test_id] = {
                "mannwhitney": stat,
                "significant": stat["p_value"] < alpha,
            }
    deltas_by_group: dict[str, list[float]] = {}
    for name in ("A", "B"):
        per_student = []
        for member in groups[name]:
            m1 = _student_imms_means([member], first, None)
            m2 = _student_imms_means([member], second, None)
            if m1 and m2:
                per_student.append(m2[0] - m1[0])
        deltas_by_group[name] = per_student
    if deltas_by_group["A"] and deltas_by_group["B"]:
        stat = mann_whitney_u(deltas_by_group["A"], deltas_by_group["B"], sides="two").to_dict()
        between["retention_delta"] = {
            "mannwhitney": stat,
            "significant": stat["p_value"] < alpha,
        }
    if between:
        report["imms_between_groups"] = between
    return report


def render_report_text(report: Mapping[str, Any]) -> str:
    """Plain-text table for the experiment report."""
    lines = [f"Experiment report (alpha = {report['alpha']})"]
    first, second = report["tests"]
    for name, group in report["groups"].items():
        lines.append(f"Group {name} (n={group['n']})")
        for test_id in (first, second):
            s = group["scores"][test_id]
            lines.append(f"  score {test_id}: {s['mean']:.2f} ± {s['std']:.2f}")
        delta = group["score_delta"]
        mark = "significant" if delta["significant"] else "not significant"
        lines.append(
            f"  score delta: {delta['mean']:+.2f} ± {delta['std']:.2f} "
            f"(Wilcoxon p = {delta['wilcoxon']['p_value']:.5g}, {mark})"
        )
        for level, entry in group["bloom_deltas"].items():
            lines.append(
                f"  {level} delta: {entry['delta_mean']:+.2f} ± {entry['delta_std']:.2f}"
            )
        if group["turnaround"]:
            t = group["turnaround"]
            lines.append(
                f"  turnaround: {t[first]['mean']:.2f} -> {t[second]['mean']:.2f} min "
                f"(Wilcoxon p = {t['wilcoxon']['p_value']:.5g})"
            )
        for test_id, entry in group["imms"].items():
            lines.append(
                f"  IMMS {test_id}: {entry['mean']:.2f} ± {entry['std']:.2f} (n={entry['n']})"
            )
    for key, entry in report.get("imms_between_groups", {}).items():
        mark = "significant" if entry["significant"] else "not significant"
        lines.append(
            f"IMMS {key} A vs B: Mann-Whitney p = {entry['mannwhitney']['p_value']:.5g} ({mark})"
        )
    return "\n".join(lines) + "\n"
