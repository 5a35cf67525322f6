"""
Noiseless two-party protocols, transcripts and the toy robust wrappers that the
coding schemes drive as black boxes.
"""
from __future__ import annotations

import enum
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ProtocolEvaluationError

logger = logging.getLogger(__name__)

SENT = "sent"
RECEIVED = "received"

DEFAULT_DELTA = 1 / 45
DEFAULT_EPSILON = 1 / 1980


class Party(enum.IntEnum):
    ALICE = 0
    BOB = 1

    @property
    def other(self) -> "Party":
        return Party.BOB if self is Party.ALICE else Party.ALICE


NextSymbol = Callable[[bytes, tuple], int]
OutputFunc = Callable[[Party, bytes, tuple], Any]


def transcript_output(party: Party, party_input: bytes, symbols: tuple) -> tuple:
    return tuple(symbols)


@dataclass(frozen=True)
class Transcript:
    symbols: tuple = ()
    tags: tuple = ()

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class Protocol:
    schedule: tuple
    alphabet_size: int
    next_symbol: NextSymbol = field(compare=False, repr=False)
    output_func: OutputFunc = field(default=transcript_output, compare=False, repr=False)
    padding: frozenset = frozenset()
    name: str = ""

    def __post_init__(self):
        if self.alphabet_size < 1:
            raise ConfigError("alphabet_size", f"must be positive, got {self.alphabet_size}")
        object.__setattr__(self, "schedule", tuple(Party(s) for s in self.schedule))
        object.__setattr__(self, "padding", frozenset(self.padding))

    @property
    def length_N(self) -> int:
        return len(self.schedule)

    @property
    def is_alternating(self) -> bool:
        return all(s is _alternating_speaker(r) for r, s in enumerate(self.schedule))

    def speaker(self, round_index: int) -> Party:
        """Speaker of a 1-based round; past the end the alternating order continues."""
        if 1 <= round_index <= self.length_N:
            return self.schedule[round_index - 1]
        return _alternating_speaker(round_index - 1)

    def emit(self, party_input: bytes, transcript: Sequence[int]) -> int:
        # Total on purpose of the schemes: parties that ran ahead keep getting 0.
        position = len(transcript)
        if position >= self.length_N:
            return 0
        try:
            symbol = int(self.next_symbol(bytes(party_input), tuple(transcript)))
        except Exception as e:
            raise ProtocolEvaluationError(
                f"{self.name or 'protocol'}: next_symbol failed at round {position + 1}: {e}"
            ) from e
        if not 0 <= symbol < self.alphabet_size:
            raise ProtocolEvaluationError(
                f"{self.name or 'protocol'}: symbol {symbol} outside alphabet of size {self.alphabet_size}"
            )
        return symbol

    def output(self, party: Party, party_input: bytes, transcript: Sequence[int]) -> Any:
        return self.output_func(Party(party), bytes(party_input), tuple(transcript)[: self.length_N])

    def strip(self, symbols: Sequence[int]) -> tuple:
        return tuple(s for i, s in enumerate(symbols) if i not in self.padding)


def _alternating_speaker(position: int) -> Party:
    return Party.ALICE if position % 2 == 0 else Party.BOB


# =======================================================
# Reference execution
# =======================================================

def execute(p: Protocol, x: bytes, y: bytes, deliver=None):
    """
    Clocked execution of p. `deliver(round, sender, symbol)` may return a
    different symbol for the receiver; None means a clean channel.
    Returns (Alice's transcript, Bob's transcript).
    """
    inputs = {Party.ALICE: bytes(x), Party.BOB: bytes(y)}
    symbols = {Party.ALICE: [], Party.BOB: []}
    tags = {Party.ALICE: [], Party.BOB: []}

    for r in range(1, p.length_N + 1):
        sender = p.speaker(r)
        sent = p.emit(inputs[sender], symbols[sender])
        got = sent if deliver is None else int(deliver(r, sender, sent))
        symbols[sender].append(sent)
        tags[sender].append(SENT)
        symbols[sender.other].append(got)
        tags[sender.other].append(RECEIVED)

    return (
        Transcript(tuple(symbols[Party.ALICE]), tuple(tags[Party.ALICE])),
        Transcript(tuple(symbols[Party.BOB]), tuple(tags[Party.BOB])),
    )


def run_noiseless(p: Protocol, x: bytes, y: bytes):
    return execute(p, x, y)


def noiseless_outputs(p, x: bytes, y: bytes) -> tuple:
    """(Alice's output, Bob's output) of a noiseless run; p may be a robust wrapper."""
    protocol = getattr(p, "protocol", p)
    ta, tb = run_noiseless(protocol, x, y)
    return p.output(Party.ALICE, x, ta.symbols), p.output(Party.BOB, y, tb.symbols)


# =======================================================
# Protocol constructors
# =======================================================

def alternating_schedule(n: int) -> tuple:
    return tuple(_alternating_speaker(r) for r in range(n))


def bulk_schedule(n: int, bulk: int) -> tuple:
    if bulk < 1:
        raise ConfigError("bulk", f"must be at least 1, got {bulk}")
    return tuple(Party.ALICE if (r // bulk) % 2 == 0 else Party.BOB for r in range(n))


def make_random_protocol(seed: int, n: int, alphabet: int = 2, order: str = "alternating",
                         bulk: int = 1) -> Protocol:
    """
    Seeded test instance. next_symbol is a keyed BLAKE2b of (input, transcript prefix),
    so equal seeds give equal protocols across processes.
    """
    if n < 0:
        raise ConfigError("n", f"must be non-negative, got {n}")
    if alphabet < 1 or alphabet >= 2 ** 32:
        raise ConfigError("alphabet", f"unsupported alphabet size {alphabet}")

    if order == "alternating":
        schedule = alternating_schedule(n)
    elif order == "bulk":
        schedule = bulk_schedule(n, bulk)
    elif order == "random":
        draws = np.random.default_rng(seed).integers(0, 2, size=n)
        schedule = tuple(Party(int(d)) for d in draws)
    else:
        raise ConfigError("order", f"unknown speaking order '{order}'")

    key = hashlib.blake2b(f"intercode-lab:{seed}".encode(), digest_size=32).digest()

    def next_symbol(party_input: bytes, transcript: tuple) -> int:
        h = hashlib.blake2b(key=key, digest_size=8)
        h.update(len(party_input).to_bytes(4, "big"))
        h.update(party_input)
        h.update(np.asarray(transcript, dtype=">u4").tobytes())
        return int.from_bytes(h.digest(), "big") % alphabet

    return Protocol(schedule, alphabet, next_symbol, name=f"random(seed={seed}, n={n}, order={order})")


def to_alternating(p: Protocol) -> Protocol:
    """
    Insert filler rounds (symbol 0) from the idle party so speakers alternate.
    Already-alternating protocols are returned unchanged.
    """
    if p.is_alternating:
        return p

    schedule = []
    real = []
    for speaker in p.schedule:
        if speaker is not _alternating_speaker(len(schedule)):
            schedule.append(_alternating_speaker(len(schedule)))
        real.append(len(schedule))
        schedule.append(speaker)
    # complete the last Alice/Bob pair
    if len(schedule) % 2:
        schedule.append(Party.BOB)

    real_positions = tuple(real)
    padding = frozenset(range(len(schedule))) - frozenset(real_positions)

    def inner_view(transcript: tuple) -> tuple:
        return tuple(transcript[i] for i in real_positions if i < len(transcript))

    def next_symbol(party_input: bytes, transcript: tuple) -> int:
        if len(transcript) in padding:
            return 0
        return p.emit(party_input, inner_view(transcript))

    def output(party: Party, party_input: bytes, transcript: tuple):
        return p.output(party, party_input, inner_view(transcript))

    logger.debug(f"to_alternating: {p.length_N} rounds -> {len(schedule)} rounds")
    return Protocol(tuple(schedule), p.alphabet_size, next_symbol, output, padding,
                    name=f"alternating({p.name})")


# =======================================================
# Toy robust wrappers
# =======================================================

def _majority(values: Sequence[int]) -> int:
    """Most frequent value; ties go to the value seen last."""
    counts = Counter(values)
    best = max(counts.values())
    for v in reversed(values):
        if counts[v] == best:
            return v
    raise ValueError("majority of an empty sequence")


def sigma_prime(alphabet: int) -> int:
    return 1 << max(1, (alphabet - 1).bit_length())


class PairBlockCode:
    """
    Carries an alternating inner protocol pair by pair. Every inner pair
    (Alice's a, Bob's b) occupies one block of `repetition` consecutive round
    pairs. Bob answers each copy from his running majority of the a-copies seen
    so far, so a late correct copy rewinds an earlier wrong answer; at the end
    of the block both parties commit (majority of the copies on Alice's side,
    the last answer on Bob's side).

    With `forced_every` set, a forced pair (Alice 1, Bob 0) follows every
    `forced_every` data pairs and is skipped on decode.
    """

    def __init__(self, inner: Protocol, repetition: int, forced_every: Optional[int] = None):
        if repetition < 1:
            raise ConfigError("repetition", f"must be at least 1, got {repetition}")
        if not inner.is_alternating:
            raise ConfigError("inner", "pair-block repetition needs an alternating protocol")
        self.inner = inner
        self.repetition = repetition
        self.block = 2 * repetition

        data_pairs = (inner.length_N + 1) // 2
        slots = []
        if forced_every:
            groups = -(-data_pairs // forced_every)
            for g in range(groups):
                slots.extend(("data", g * forced_every + j) for j in range(forced_every))
                slots.append(("forced", None))
        else:
            slots = [("data", j) for j in range(data_pairs)]
        self.slots = tuple(slots)
        self.length = self.block * len(self.slots)

    def emit(self, party_input: bytes, transcript: tuple) -> int:
        position = len(transcript)
        slot_index, offset = divmod(position, self.block)
        if slot_index >= len(self.slots):
            return 0
        alice_turn = offset % 2 == 0
        kind, _ = self.slots[slot_index]
        if kind == "forced":
            return 1 if alice_turn else 0

        start = slot_index * self.block
        if alice_turn:
            prefix = self._inner_prefix(Party.ALICE, transcript[:start])
            return self.inner.emit(party_input, prefix)
        prefix = self._inner_prefix(Party.BOB, transcript[:start])
        view = _majority(list(transcript[start:position:2]))
        return self.inner.emit(party_input, prefix + (view,))

    def _inner_prefix(self, party: Party, symbols: Sequence[int]) -> tuple:
        out = []
        for slot_index, (kind, _) in enumerate(self.slots):
            start = slot_index * self.block
            if start + self.block > len(symbols):
                break
            if kind == "forced":
                continue
            block = symbols[start:start + self.block]
            a = _majority(list(block[0::2]))
            b = _majority(list(block[1::2])) if party is Party.ALICE else block[-1]
            out.extend((a, b))
        return tuple(out)

    def decode(self, party: Party, symbols: Sequence[int]) -> tuple:
        return self._inner_prefix(Party(party), tuple(symbols)[: self.length])[: self.inner.length_N]

    def disputed_blocks(self, symbols: Sequence[int]) -> int:
        disputed = 0
        for slot_index, (kind, _) in enumerate(self.slots):
            start = slot_index * self.block
            if start + self.block > len(symbols):
                break
            block = symbols[start:start + self.block]
            if kind == "data" and (len(set(block[0::2])) > 1 or len(set(block[1::2])) > 1):
                disputed += 1
        return disputed

    def within_budget(self, events: Iterable) -> bool:
        """At most one substitution per block and no out-of-sync events."""
        per_block = Counter()
        for ev in events:
            if ev.kind != "substitution":
                return False
            per_block[(ev.round_index - 1) // self.block] += 1
        return all(count <= 1 for count in per_block.values())

    def as_protocol(self, alphabet: int, name: str) -> Protocol:
        def output(party: Party, party_input: bytes, transcript: tuple):
            return self.inner.output(party, party_input, self.decode(party, transcript))

        return Protocol(alternating_schedule(self.length), alphabet, self.emit, output, name=name)


@dataclass(frozen=True)
class IndelRobustProtocol:
    inner: Protocol
    protocol: Protocol
    repetition: int
    code: PairBlockCode = field(repr=False, compare=False)
    delta: float = DEFAULT_DELTA
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        sigma = self.alphabet_Sigma_prime
        if sigma & (sigma - 1):
            raise ConfigError("alphabet_Sigma_prime", f"{sigma} is not a power of two")
        if self.length_Nprime < self.inner.length_N:
            raise ConfigError("length_Nprime", "shorter than the inner protocol")

    @property
    def length_Nprime(self) -> int:
        return self.protocol.length_N

    @property
    def alphabet_Sigma_prime(self) -> int:
        return self.protocol.alphabet_size

    def emit(self, party_input: bytes, transcript: Sequence[int]) -> int:
        return self.protocol.emit(party_input, transcript)

    def output(self, party: Party, party_input: bytes, transcript: Sequence[int]):
        return self.protocol.output(party, party_input, transcript)

    def within_budget(self, events: Iterable) -> bool:
        return self.code.within_budget(events)


def toy_indel_robust(p: Protocol, repetition: int) -> IndelRobustProtocol:
    """
    Repetition-with-checkpoint stand-in for an insertion-deletion resilient
    protocol. It only survives noise bounded per inner round (see
    within_budget); an adversary with a constant fraction of edit corruptions
    defeats it.
    """
    if repetition < 1:
        raise ConfigError("repetition", f"must be at least 1, got {repetition}")
    inner = to_alternating(p)
    code = PairBlockCode(inner, repetition)
    sigma = sigma_prime(inner.alphabet_size)
    outer = code.as_protocol(sigma, name=f"indel_toy({p.name}, r={repetition})")
    return IndelRobustProtocol(inner=inner, protocol=outer, repetition=repetition, code=code)


@dataclass(frozen=True)
class SubstResilientProtocol:
    inner: Protocol
    protocol: Protocol
    repetition: int
    code: PairBlockCode = field(repr=False, compare=False)
    resilience_fraction: float = 0.1
    ones_density_floor: float = 1 / 8

    @property
    def length(self) -> int:
        return self.protocol.length_N

    def emit(self, party_input: bytes, transcript: Sequence[int]) -> int:
        return self.protocol.emit(party_input, transcript)

    def output(self, party: Party, party_input: bytes, transcript: Sequence[int]):
        return self.protocol.output(party, party_input, transcript)


def toy_subst_resilient(p: Protocol, repetition: int = 3) -> SubstResilientProtocol:
    """Binary pair-block repetition with a forced Alice 1 in every fourth pair."""
    if p.alphabet_size > 2:
        raise ConfigError("alphabet_size", "the substitution-resilient wrapper is binary")
    inner = to_alternating(p)
    code = PairBlockCode(inner, repetition, forced_every=3)
    outer = code.as_protocol(2, name=f"subst_toy({p.name}, r={repetition})")
    return SubstResilientProtocol(inner=inner, protocol=outer, repetition=repetition, code=code)
