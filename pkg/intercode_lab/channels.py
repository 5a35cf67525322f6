"""
Point-to-point noise models (UF, UPEF, mUPEF) and the message-driven
insertion-deletion channel. Every model is driven by an oblivious NoisePattern
fixed before the run and by a per-run numpy Generator.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional

import numpy as np

from .errors import ConfigError, ScriptError
from .proto_core import Party

logger = logging.getLogger(__name__)

ERASURE = -1
SILENCE = -2

FLIP = "flip"
ERASE = "erase"
PASS = "pass"
CHOICES = (FLIP, ERASE, PASS)

DEFAULT_C = 1 / 297
P_CORRUPT = 2 / 3
P_E = 1 / 3


def symbol_name(value: int) -> str:
    if value == ERASURE:
        return "⊥"
    if value == SILENCE:
        return "□"
    return str(value)


# =======================================================
# Noise pattern
# =======================================================

@dataclass(frozen=True)
class NoisePattern:
    """The oblivious corruption set E (1-based indices) plus per-index adversary choices."""
    corrupted_rounds: tuple = ()
    choices: Mapping = field(default_factory=dict)
    horizon: Optional[int] = None
    default_choice: str = FLIP
    _members: frozenset = field(init=False, repr=False, compare=False)
    _sorted: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rounds = tuple(sorted({int(r) for r in self.corrupted_rounds}))
        if rounds and rounds[0] < 1:
            raise ConfigError("rounds", f"indices are 1-based, got {rounds[0]}")
        if self.default_choice not in CHOICES:
            raise ConfigError("default_choice", f"unknown choice '{self.default_choice}'")
        choices = {}
        for key, value in dict(self.choices).items():
            if value not in CHOICES:
                raise ConfigError("choices", f"unknown choice '{value}' at round {key}")
            choices[int(key)] = value
        if self.horizon is not None and self.horizon < 0:
            raise ConfigError("horizon", "must be non-negative")
        object.__setattr__(self, "corrupted_rounds", rounds)
        object.__setattr__(self, "choices", choices)
        object.__setattr__(self, "_members", frozenset(rounds))
        object.__setattr__(self, "_sorted", np.asarray(rounds, dtype=np.int64))

    @property
    def budget_T(self) -> int:
        return len(self.corrupted_rounds)

    def __contains__(self, index) -> bool:
        return int(index) in self._members

    def choice_at(self, index: int) -> str:
        return self.choices.get(int(index), self.default_choice)

    def between(self, start: int, stop: int) -> np.ndarray:
        """Corrupted indices in [start, stop)."""
        lo, hi = np.searchsorted(self._sorted, [start, stop])
        return self._sorted[lo:hi]

    def count_between(self, start: int, stop: int) -> int:
        return int(len(self.between(start, stop)))

    def to_json(self) -> dict:
        return {
            "T": self.budget_T,
            "rounds": list(self.corrupted_rounds),
            "choices": {str(k): v for k, v in sorted(self.choices.items())},
            "horizon": self.horizon,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "NoisePattern":
        try:
            rounds = [int(r) for r in doc["rounds"]]
            declared = int(doc["T"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError("pattern", f"malformed noise pattern: {e}") from e
        if len(set(rounds)) != declared:
            raise ConfigError("T", f"declares {declared} corruptions but lists {len(set(rounds))}")
        return cls(tuple(rounds), doc.get("choices") or {}, doc.get("horizon"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path) -> "NoisePattern":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))


NO_NOISE = NoisePattern()


# =======================================================
# Probability schedules
# =======================================================

@dataclass(frozen=True)
class UPEFSchedule:
    N: int
    C: float = DEFAULT_C

    def __post_init__(self):
        if self.C < 0:
            raise ConfigError("C", "must be non-negative")
        if self.N < 0:
            raise ConfigError("N", "must be non-negative")

    def p(self, i: int) -> float:
        if i < 1:
            raise ConfigError("index", f"rounds are 1-based, got {i}")
        return min(self.C * self.N / (i * i), 0.5)

    def p_array(self, indices) -> np.ndarray:
        i = np.asarray(indices, dtype=np.float64)
        return np.minimum(self.C * self.N / (i * i), 0.5)


@dataclass(frozen=True)
class MUPEFParams:
    p_corrupt: float = P_CORRUPT
    p_e: float = P_E

    def __post_init__(self):
        if abs(self.p_e - (1 - self.p_corrupt)) > 1e-12:
            raise ConfigError("p_e", "must equal 1 - p_corrupt")


def schedule_tail_sum(s: UPEFSchedule, horizon: int) -> float:
    """Σ_{i<=horizon} p(i) plus the analytic tail CN/horizon."""
    if horizon < 1:
        raise ConfigError("horizon", f"must be at least 1, got {horizon}")
    values = s.p_array(np.arange(1, horizon + 1))
    return math.fsum(values) + s.C * s.N / horizon


def schedule_sum_bound(s: UPEFSchedule) -> float:
    return (1 / math.sqrt(2) + math.pi ** 2 / 6) * s.C * s.N


# =======================================================
# Single-bit transmissions
# =======================================================

def _check_index(index: int) -> None:
    if index < 1:
        raise ConfigError("index", f"transmissions are 1-based, got {index}")


def _apply_choice(bit: int, choice: str) -> int:
    if choice == FLIP:
        return 1 - bit
    if choice == ERASE:
        return ERASURE
    return bit


def transmit_uf(bit: int, index: int, e: NoisePattern) -> int:
    _check_index(index)
    return 1 - bit if index in e else bit


def transmit_upef(bit: int, index: int, e: NoisePattern, s: UPEFSchedule, rng) -> int:
    _check_index(index)
    if index not in e:
        return bit
    return 1 - bit if rng.random() < s.p(index) else ERASURE


def transmit_mupef(bit: int, index: int, e: NoisePattern, choice: str, rng,
                   params: MUPEFParams = MUPEFParams()) -> int:
    _check_index(index)
    if index not in e:
        return bit
    if rng.random() < params.p_e:
        return ERASURE
    return _apply_choice(bit, choice)


class Channel:
    """
    Bit channel bound to one pattern. Randomness is drawn only at corrupted
    indices and in index order, so transmit and transmit_many agree draw for draw.
    """

    def __init__(self, pattern: NoisePattern):
        self.pattern = pattern
        self.max_index = 0

    def _corrupt(self, bit: int, index: int) -> int:
        raise NotImplementedError

    def _note(self, index: int) -> None:
        if index > self.max_index:
            self.max_index = index

    def transmit(self, bit: int, index: int) -> int:
        _check_index(index)
        self._note(index)
        if index in self.pattern:
            return self._corrupt(int(bit), index)
        return int(bit)

    def transmit_many(self, bits, start_index: int) -> np.ndarray:
        _check_index(start_index)
        out = np.array(bits, dtype=np.int64, copy=True)
        if out.size == 0:
            return out
        self._note(start_index + out.size - 1)
        for idx in self.pattern.between(start_index, start_index + out.size):
            pos = int(idx) - start_index
            out[pos] = self._corrupt(int(out[pos]), int(idx))
        return out

    def transmit_silence(self, count: int, start_index: int) -> np.ndarray:
        """A terminated party's slots: zeros on the wire, still subject to noise."""
        return self.transmit_many(np.zeros(count, dtype=np.int64), start_index)

    @property
    def beyond_horizon(self) -> bool:
        return self.pattern.horizon is not None and self.max_index > self.pattern.horizon


class UFChannel(Channel):
    def _corrupt(self, bit, index):
        return 1 - bit


class UPEFChannel(Channel):
    def __init__(self, pattern: NoisePattern, schedule: UPEFSchedule, rng):
        super().__init__(pattern)
        self.schedule = schedule
        self.rng = rng

    def _corrupt(self, bit, index):
        return 1 - bit if self.rng.random() < self.schedule.p(index) else ERASURE


class MUPEFChannel(Channel):
    def __init__(self, pattern: NoisePattern, rng, params: MUPEFParams = MUPEFParams()):
        super().__init__(pattern)
        self.rng = rng
        self.params = params

    def _corrupt(self, bit, index):
        if self.rng.random() < self.params.p_e:
            return ERASURE
        return _apply_choice(bit, self.pattern.choice_at(index))


# =======================================================
# Insertion-deletion channel
# =======================================================

SUBSTITUTION = "substitution"
OUT_OF_SYNC = "out_of_sync"


@dataclass(frozen=True)
class IndelEvent:
    """
    One edit corruption on the `round_index`-th transmission. A substitution
    delivers `injected_symbol` instead of the sent one; an out-of-sync deletes the
    message and hands `injected_symbol` back to its sender as a reply.
    """
    kind: str
    round_index: int
    injected_symbol: int

    def __post_init__(self):
        if self.kind not in (SUBSTITUTION, OUT_OF_SYNC):
            raise ScriptError(f"unknown event kind '{self.kind}'")
        if self.round_index < 1:
            raise ScriptError(f"event at transmission {self.round_index}: transmissions are 1-based")

    def to_json(self) -> dict:
        return {"kind": self.kind, "round_index": self.round_index, "injected_symbol": self.injected_symbol}


@dataclass
class IndelState:
    next_sender: Party = Party.ALICE
    transmissions: int = 0
    rounds: Dict[Party, int] = field(default_factory=lambda: {Party.ALICE: 0, Party.BOB: 0})
    substitutions: int = 0
    out_of_sync: int = 0
    halted: bool = False

    @property
    def c(self) -> int:
        return self.substitutions + self.out_of_sync


@dataclass(frozen=True)
class Delivery:
    transmission: int
    sender: Party
    sent: int
    receiver: Party
    delivered: int
    event: Optional[IndelEvent] = None


@dataclass(frozen=True)
class IndelExecution:
    rounds: tuple
    c: int
    substitutions: int
    out_of_sync: int
    alice_transcript: tuple
    bob_transcript: tuple


def index_events(events: Iterable[IndelEvent]) -> Dict[int, IndelEvent]:
    script = {}
    for ev in events:
        if ev.round_index in script:
            raise ScriptError(f"two events on transmission {ev.round_index}")
        script[ev.round_index] = ev
    return script


def indel_transmit(symbol: int, events: Mapping[int, IndelEvent], state: IndelState) -> Delivery:
    """Carry the next message of a message-driven alternating execution."""
    if state.halted:
        raise ScriptError(f"transmission after both parties halted (event script at {state.transmissions + 1})")
    state.transmissions += 1
    t = state.transmissions
    sender = state.next_sender
    ev = events.get(t)

    if ev is not None and ev.kind == OUT_OF_SYNC:
        state.out_of_sync += 1
        state.rounds[sender] += 2
        return Delivery(t, sender, symbol, sender, ev.injected_symbol, ev)

    delivered = symbol
    if ev is not None:
        state.substitutions += 1
        delivered = ev.injected_symbol
    state.rounds[sender] += 1
    state.rounds[sender.other] += 1
    state.next_sender = sender.other
    return Delivery(t, sender, symbol, sender.other, delivered, ev)


def run_indel(protocol, x: bytes, y: bytes, events: Iterable[IndelEvent], transmissions: int) -> IndelExecution:
    """Replay an alternating protocol for `transmissions` messages under an event script."""
    script = index_events(events)
    late = [t for t in script if t > transmissions]
    if late:
        raise ScriptError(f"event at transmission {min(late)} after both parties halted at {transmissions}")

    inputs = {Party.ALICE: bytes(x), Party.BOB: bytes(y)}
    transcripts: Dict[Party, List[int]] = {Party.ALICE: [], Party.BOB: []}
    state = IndelState()
    deliveries = []

    for _ in range(transmissions):
        sender = state.next_sender
        sym = protocol.emit(inputs[sender], transcripts[sender])
        transcripts[sender].append(sym)
        d = indel_transmit(sym, script, state)
        transcripts[d.receiver].append(d.delivered)
        deliveries.append(d)
    state.halted = True

    logger.debug(f"indel replay: {transmissions} transmissions, c={state.c}")
    return IndelExecution(
        rounds=tuple(deliveries),
        c=state.c,
        substitutions=state.substitutions,
        out_of_sync=state.out_of_sync,
        alice_transcript=tuple(transcripts[Party.ALICE]),
        bob_transcript=tuple(transcripts[Party.BOB]),
    )
