"""
Analysis of challenge-response traces: progress classes, sequences, frames and
segments, structural checks, and the reduction of a trace to an
insertion-deletion execution of the simulated protocol.

Checks never raise on a violation; they return reports the harness aggregates.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

from .channels import OUT_OF_SYNC, SUBSTITUTION, IndelEvent, IndelExecution, run_indel
from .errors import ConfigError, TraceParseError
from .proto_core import Party
from .scheme_cr import CLEAN, CRTrace, IterationRecord, encode_message

logger = logging.getLogger(__name__)

SAME_PROGRESS = "same_progress"
SUBSTITUTED = "substitution"
INSERTION = "insertion"
NO_PROGRESS = "no_progress"


@dataclass(frozen=True)
class ProgressClass:
    kind: str
    by: Optional[Party] = None

    def __str__(self) -> str:
        if self.kind == INSERTION:
            return f"insertion({self.by.name.capitalize()})"
        return self.kind


def classify(record: IterationRecord) -> ProgressClass:
    if record.alice_progress and record.bob_progress:
        if record.alice_symbols == record.bob_symbols:
            return ProgressClass(SAME_PROGRESS)
        return ProgressClass(SUBSTITUTED)
    if record.alice_progress:
        return ProgressClass(INSERTION, Party.ALICE)
    if record.bob_progress:
        return ProgressClass(INSERTION, Party.BOB)
    return ProgressClass(NO_PROGRESS)


def _check_record(record: IterationRecord) -> None:
    # the header occupies line 1 of a saved trace
    if record.alice_progress and record.rho is None:
        raise TraceParseError(record.index + 1, "Alice progressed on an erased reply")
    if record.bob_progress and record.sigma_received is None:
        raise TraceParseError(record.index + 1, "Bob progressed on an erased challenge")


def classify_iterations(trace: CRTrace) -> List[ProgressClass]:
    for record in trace.iterations:
        _check_record(record)
    return [classify(r) for r in trace.iterations]


# =======================================================
# Decomposition
# =======================================================

@dataclass(frozen=True)
class SequenceSpan:
    first: int
    last: int
    good: bool
    has_progress: bool


@dataclass(frozen=True)
class FrameSpan:
    sequences: tuple
    complete: bool = True

    @property
    def first(self) -> int:
        return self.sequences[0].first

    @property
    def last(self) -> int:
        return self.sequences[-1].last

    def __contains__(self, index: int) -> bool:
        return self.first <= index <= self.last


@dataclass(frozen=True)
class SegmentSpan:
    first: int
    last: int
    type: int
    P: tuple = ()
    virtual: bool = False


@dataclass(frozen=True)
class FrameDecomposition:
    records: tuple
    classes: tuple
    sequences: tuple
    frames: tuple
    segments: tuple
    virtual_index: Optional[int] = None
    uncovered: tuple = ()

    def frame_of(self, index: int) -> Optional[int]:
        for j, frame in enumerate(self.frames):
            if index in frame:
                return j
        return None

    def summary(self) -> dict:
        types = Counter(s.type for s in self.segments if not s.virtual)
        return {
            "iterations": len(self.records) - (self.virtual_index is not None),
            "sequences": len(self.sequences),
            "good_sequences": sum(s.good for s in self.sequences),
            "frames": len(self.frames),
            "segments": {f"type_{t}": types.get(t, 0) for t in (1, 2, 3, 4)},
            "virtual_iteration": self.virtual_index,
        }


def _synced(record: IterationRecord) -> bool:
    return (record.r_a - record.r_b) % 2 == 0


def _virtual_iteration(last: IterationRecord, k: int) -> IterationRecord:
    """Analysis-only noiseless iteration in which Alice alone progresses."""
    parity = (last.r_a + 1) % 2
    clean = (CLEAN,) * k
    return IterationRecord(
        index=last.index + 1,
        wire_start=last.wire_start + 2 * k,
        alice_sent=(0, parity),
        bob_received=tuple(encode_message(0, parity, k)),
        bob_sent=(0, parity),
        alice_received=tuple(encode_message(0, parity, k)),
        alice_flags=clean,
        bob_flags=clean,
        alice_progress=True,
        bob_progress=False,
        r_a=last.r_a + 1,
        r_b=last.r_b,
        alice_len=last.alice_len + 2,
        bob_len=last.bob_len,
        virtual=True,
    )


def decompose(trace: CRTrace) -> FrameDecomposition:
    classes = classify_iterations(trace)
    records = list(trace.iterations)
    virtual_index = None
    if records and not _synced(records[-1]):
        records.append(_virtual_iteration(records[-1], trace.k))
        classes.append(classify(records[-1]))
        virtual_index = records[-1].index

    sequences = []
    start = 1
    for r in records:
        if _synced(r):
            span = records[start - 1:r.index]
            sequences.append(SequenceSpan(
                first=start,
                last=r.index,
                good=r.alice_progress,
                has_progress=any(x.alice_progress or x.bob_progress for x in span),
            ))
            start = r.index + 1

    frames = []
    pending = None
    for j, seq in enumerate(sequences):
        if seq.good:
            begin = pending if pending is not None else j
            members = tuple(sequences[begin:j + 1])
            complete = virtual_index is None or not (members[0].first <= virtual_index <= members[-1].last)
            frames.append(FrameSpan(members, complete))
            pending = None
        elif pending is None and seq.has_progress:
            pending = j

    segments = []
    bob_pending: List[int] = []
    for r in records:
        if r.alice_progress:
            kind = {(False, False): 1, (True, False): 2, (False, True): 3, (True, True): 4}[
                (r.bob_progress, bool(bob_pending))
            ]
            first = bob_pending[0] if bob_pending else r.index
            segments.append(SegmentSpan(first, r.index, kind, tuple(bob_pending), r.virtual))
            bob_pending = []
        elif r.bob_progress:
            bob_pending.append(r.index)

    decomposition = FrameDecomposition(
        records=tuple(records),
        classes=tuple(classes),
        sequences=tuple(sequences),
        frames=tuple(frames),
        segments=tuple(segments),
        virtual_index=virtual_index,
        uncovered=tuple(bob_pending),
    )
    logger.debug(f"decomposition: {decomposition.summary()}")
    return decomposition


# =======================================================
# Checks
# =======================================================

@dataclass(frozen=True)
class LemmaCheck:
    lemma_id: str
    passed: bool
    witness_iterations: tuple = ()
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "pass": self.passed,
            "witness_iterations": list(self.witness_iterations),
            "detail": self.detail,
        }


@dataclass(frozen=True)
class LemmaReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> List[str]:
        return [c.lemma_id for c in self.checks if not c.passed]

    def __getitem__(self, lemma_id: str) -> LemmaCheck:
        for c in self.checks:
            if c.lemma_id == lemma_id:
                return c
        raise KeyError(lemma_id)

    def to_json(self) -> list:
        return [c.to_json() for c in self.checks]


def _check_growth(trace: CRTrace) -> LemmaCheck:
    witnesses = []
    prev_a = prev_b = 0
    for r in trace.iterations:
        grow_a, grow_b = r.alice_len - prev_a, r.bob_len - prev_b
        if grow_a not in (0, 2) or grow_b not in (0, 2) \
                or grow_a != 2 * r.alice_progress or grow_b != 2 * r.bob_progress:
            witnesses.append(r.index)
        prev_a, prev_b = r.alice_len, r.bob_len
    return LemmaCheck("transcript_growth", not witnesses, tuple(witnesses),
                      "each transcript grows by 0 or 2 symbols per iteration")


def _active(trace: CRTrace) -> List[IterationRecord]:
    return [r for r in trace.iterations if r.index <= trace.alice_last_iteration]


def _check_no_progress_bound(trace: CRTrace) -> LemmaCheck:
    active = _active(trace)
    stalled = [r.index for r in active if not (r.alice_progress or r.bob_progress)]
    corruptions = sum(r.corruptions for r in active)
    passed = len(stalled) <= corruptions <= trace.T
    detail = f"{len(stalled)} iterations without progress, {corruptions} corrupted bits, T={trace.T}"
    return LemmaCheck("no_progress_bound", passed, tuple(stalled) if not passed else (), detail)


def _check_progress_bound(trace: CRTrace) -> LemmaCheck:
    progressed = [r.index for r in trace.iterations if r.alice_progress or r.bob_progress]
    bound = trace.n_prime + 2 * trace.f
    passed = len(progressed) <= bound
    return LemmaCheck("progress_bound", passed, () if passed else tuple(progressed[bound:]),
                      f"{len(progressed)} iterations with progress, bound N'+2f = {bound}")


def _check_stall_corruption(trace: CRTrace) -> LemmaCheck:
    witnesses = [r.index for r in trace.iterations
                 if not (r.alice_progress or r.bob_progress) and r.corruptions == 0]
    return LemmaCheck("no_progress_has_corruption", not witnesses, tuple(witnesses),
                      "an iteration without progress carries at least one corrupted bit")


def _check_segment_positions(d: FrameDecomposition) -> LemmaCheck:
    witnesses = []
    for frame in d.frames:
        inside = [s for s in d.segments if s.last in frame]
        if len(inside) < 2:
            continue
        for pos, seg in enumerate(inside):
            edge = pos == 0 or pos == len(inside) - 1
            if (seg.type == 1 and not edge) or (seg.type == 2 and edge):
                witnesses.append(seg.last)
    return LemmaCheck("segment_positions", not witnesses, tuple(witnesses),
                      "type-1 segments open or close a frame, type-2 segments sit strictly inside")


def _check_coverage(d: FrameDecomposition) -> LemmaCheck:
    witnesses = []
    problems = []

    expected = 1
    for seq in d.sequences:
        if seq.first != expected:
            witnesses.append(seq.first)
            problems.append("sequences do not tile")
        expected = seq.last + 1
    if d.records and expected != d.records[-1].index + 1:
        witnesses.append(expected)
        problems.append("iterations after the last sequence")

    seen = Counter()
    for seg in d.segments:
        seen[seg.last] += 1
        for j in seg.P:
            seen[j] += 1
        frame = d.frame_of(seg.last)
        if frame is None or seg.first not in d.frames[frame]:
            witnesses.append(seg.last)
            problems.append("segment outside a single frame")
    for r in d.records:
        if (r.alice_progress or r.bob_progress) and seen[r.index] != 1:
            witnesses.append(r.index)
            problems.append("progress iteration not in exactly one segment")

    detail = "; ".join(sorted(set(problems))) or "sequences tile the trace, segments cover progress"
    return LemmaCheck("coverage", not witnesses, tuple(sorted(set(witnesses))), detail)


def trailing_budget_check(trace: CRTrace, d: Optional[FrameDecomposition] = None) -> LemmaCheck:
    """Stalled iterations in the trailing partial sequence are paid for by corruptions in it."""
    d = d if d is not None else decompose(trace)
    if d.virtual_index is None:
        return LemmaCheck("trailing_no_progress", True, (), "no trailing partial sequence")
    tail = d.sequences[-1]
    real = [r for r in trace.iterations if tail.first <= r.index <= tail.last]
    stalled = [r.index for r in real if not (r.alice_progress or r.bob_progress)]
    corruptions = sum(r.corruptions for r in real)
    passed = len(stalled) <= corruptions
    return LemmaCheck("trailing_no_progress", passed, () if passed else tuple(stalled),
                      f"{len(stalled)} stalled iterations, {corruptions} corrupted bits in [{tail.first}, {tail.last - 1}]")


def check_lemmas(trace: CRTrace, d: Optional[FrameDecomposition] = None) -> LemmaReport:
    d = d if d is not None else decompose(trace)
    report = LemmaReport((
        _check_growth(trace),
        _check_no_progress_bound(trace),
        _check_progress_bound(trace),
        _check_stall_corruption(trace),
        _check_segment_positions(d),
        _check_coverage(d),
        trailing_budget_check(trace, d),
    ))
    if not report.ok:
        logger.warning(f"structural checks failed: {report.failed}")
    return report


# =======================================================
# Reduction to an insertion-deletion execution
# =======================================================

@dataclass(frozen=True)
class MatchingResult:
    events: tuple
    execution: IndelExecution
    f: int
    transcripts_match: bool
    frame_costs: tuple = ()
    frame_violations: tuple = ()

    @property
    def c(self) -> int:
        return self.execution.c

    @property
    def within_bound(self) -> bool:
        return self.c <= 2 * self.f

    @property
    def ok(self) -> bool:
        return self.transcripts_match and self.within_bound

    def to_json(self) -> dict:
        return {
            "c": self.c,
            "f": self.f,
            "transmissions": len(self.execution.rounds),
            "transcripts_match": self.transcripts_match,
            "within_bound": self.within_bound,
            "frame_violations": [list(v) for v in self.frame_violations],
            "events": [e.to_json() for e in self.events],
        }


def _segment_script(seg: SegmentSpan, by_index: Dict[int, IterationRecord], t: int):
    """Events for one segment, starting after transmission t. Returns (events, new t)."""
    anchor = by_index[seg.last]
    events = []

    t += 1
    if seg.type == 1:
        # the reply never left Bob: delete Alice's message, inject what she accepted
        events.append(IndelEvent(OUT_OF_SYNC, t, anchor.rho))
        return events, t

    answering = [by_index[j] for j in seg.P] + ([anchor] if anchor.bob_progress else [])
    if answering[0].sigma_received != anchor.sigma:
        events.append(IndelEvent(SUBSTITUTION, t, answering[0].sigma_received))

    for pos, b in enumerate(answering):
        t += 1
        if pos < len(answering) - 1:
            events.append(IndelEvent(OUT_OF_SYNC, t, answering[pos + 1].sigma_received))
        elif anchor.rho != b.rho_sent:
            events.append(IndelEvent(SUBSTITUTION, t, anchor.rho))
    return events, t


def build_matching_execution(trace: CRTrace, pi_prime, d: Optional[FrameDecomposition] = None) -> MatchingResult:
    """
    Script, segment by segment, the insertion-deletion noise under which a
    message-driven run of pi_prime ends with the trace's transcripts, and
    replay it.
    """
    if pi_prime.length_Nprime != trace.n_prime:
        raise ConfigError("pi_prime", f"length {pi_prime.length_Nprime} does not match the trace's {trace.n_prime}")
    d = d if d is not None else decompose(trace)
    by_index = {r.index: r for r in d.records}

    events: List[IndelEvent] = []
    costs: Dict[int, int] = Counter()
    t = 0
    for seg in d.segments:
        if seg.virtual:
            continue
        seg_events, t = _segment_script(seg, by_index, t)
        events.extend(seg_events)
        frame = d.frame_of(seg.last)
        if frame is not None:
            costs[frame] += len(seg_events)

    execution = run_indel(pi_prime, trace.x, trace.y, events, t)
    # symbols Bob appends while listening after Alice stopped are outside every record
    bob_seen = trace.iterations[-1].bob_len if trace.iterations else 0
    match = (execution.alice_transcript == tuple(trace.alice_transcript.symbols)
             and execution.bob_transcript == tuple(trace.bob_transcript.symbols[:bob_seen]))

    frame_costs = []
    violations = []
    for j, frame in enumerate(d.frames):
        f_frame = sum(by_index[i].flips for i in range(frame.first, frame.last + 1) if not by_index[i].virtual)
        frame_costs.append((frame.first, frame.last, costs.get(j, 0), f_frame))
        if frame.complete and costs.get(j, 0) > 2 * f_frame:
            violations.append((frame.first, frame.last, costs.get(j, 0), f_frame))

    result = MatchingResult(tuple(events), execution, trace.f, match, tuple(frame_costs), tuple(violations))
    if not result.ok:
        logger.warning(f"reduction mismatch: transcripts_match={match}, c={result.c}, f={trace.f}")
    return result


# =======================================================
# Aggregation
# =======================================================

@dataclass(frozen=True)
class TraceAnalysis:
    decomposition: FrameDecomposition
    report: LemmaReport
    matching: Optional[MatchingResult] = None

    @property
    def lemma_violations(self) -> int:
        return len(self.report.failed)

    @property
    def reduction_violations(self) -> int:
        if self.matching is None:
            return 0
        return int(not self.matching.ok)

    def to_json(self) -> dict:
        return {
            "decomposition": self.decomposition.summary(),
            "lemmas": self.report.to_json(),
            "matching": None if self.matching is None else self.matching.to_json(),
        }


def analyze(trace: CRTrace, pi_prime=None) -> TraceAnalysis:
    d = decompose(trace)
    report = check_lemmas(trace, d)
    matching = build_matching_execution(trace, pi_prime, d) if pi_prime is not None else None
    return TraceAnalysis(d, report, matching)


def aggregate_reports(reports: Iterable[LemmaReport]) -> Dict[str, int]:
    """Violation count per check id across many traces."""
    counts: Dict[str, int] = Counter()
    for report in reports:
        for check in report.checks:
            counts[check.lemma_id] += int(not check.passed)
    return dict(counts)
