"""
Iterative doubling scheme over mUPEF and its lift to UF through a 5-bit random code.

Iteration i runs the substitution-resilient protocol from scratch with every
bit repeated 2^i times (part 1, L(i) bits), then Bob alone reports his part-1
erasure count with a success or error string (part 2, L(i) bits).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, List, Optional

import numpy as np

from .channels import ERASURE, Channel, MUPEFChannel, MUPEFParams, NoisePattern, P_E
from .errors import ConfigError, RunawayError
from .proto_core import Party, noiseless_outputs

logger = logging.getLogger(__name__)

ITERATION_CEILING = 24
SUCCESS = "success"
ERROR = "error"


class NoOutput:
    """Bob terminated without any earlier valid iteration."""

    def __repr__(self) -> str:
        return "NoOutput"

    def __eq__(self, other) -> bool:
        return isinstance(other, NoOutput)

    def __hash__(self) -> int:
        return hash(NoOutput)


NO_OUTPUT = NoOutput()


@dataclass(frozen=True)
class IterationParams:
    base_len: int
    p_e: Fraction = Fraction(1, 3)

    def __post_init__(self):
        if self.base_len < 1:
            raise ConfigError("base_len", f"must be positive, got {self.base_len}")
        object.__setattr__(self, "p_e", Fraction(self.p_e).limit_denominator(10 ** 6))

    def L(self, i: int) -> int:
        return self.base_len << i

    def erasure_threshold(self, i: int) -> Fraction:
        return Fraction(1, 1000) * self.p_e * self.L(i)

    def ones_threshold(self, i: int) -> Fraction:
        return Fraction(self.L(i), 40)

    def start_index(self, i: int) -> int:
        """First wire index of iteration i; iteration j occupies 2·L(j) positions."""
        return 1 + 2 * self.base_len * ((1 << i) - 1)


@dataclass
class IterOutcome:
    i: int
    part1_erasures_alice: int = 0
    part1_erasures_bob: int = 0
    part2_erasures_alice: int = 0
    ones_received_by_bob: int = 0
    bob_string: str = SUCCESS
    alice_read: str = ERROR
    alice_output: Any = None
    bob_output: Any = None
    alice_active: bool = True
    bob_active: bool = True
    alice_terminated: bool = False
    bob_terminated: bool = False
    valid_for_bob: bool = False

    def to_json(self) -> dict:
        return {
            "i": self.i,
            "part1_erasures_alice": self.part1_erasures_alice,
            "part1_erasures_bob": self.part1_erasures_bob,
            "part2_erasures_alice": self.part2_erasures_alice,
            "ones_received_by_bob": self.ones_received_by_bob,
            "bob_string": self.bob_string,
            "alice_read": self.alice_read,
            "alice_terminated": self.alice_terminated,
            "bob_terminated": self.bob_terminated,
            "valid_for_bob": self.valid_for_bob,
        }


# =======================================================
# One iteration
# =======================================================

def run_part1(i: int, robust, x: bytes, y: bytes, channel: Channel, start_index: int,
              alice_active: bool = True, bob_active: bool = True) -> IterOutcome:
    """
    Run robust.protocol from scratch with every bit sent 2^i times. Receivers
    take the majority with erased copies read as 0 and ties going to 0.
    A party that has terminated puts zeros on the wire.
    """
    if i < 0:
        raise ConfigError("i", f"iterations start at 0, got {i}")
    protocol = robust.protocol
    reps = 1 << i
    inputs = {Party.ALICE: bytes(x), Party.BOB: bytes(y)}
    active = {Party.ALICE: alice_active, Party.BOB: bob_active}
    transcripts = {Party.ALICE: [], Party.BOB: []}
    erasures = {Party.ALICE: 0, Party.BOB: 0}
    ones_to_bob = 0

    index = start_index
    for r in range(1, protocol.length_N + 1):
        sender = protocol.speaker(r)
        receiver = sender.other
        bit = protocol.emit(inputs[sender], transcripts[sender]) if active[sender] else 0
        got = channel.transmit_many(np.full(reps, bit, dtype=np.int64), index)
        index += reps

        ones = int(np.count_nonzero(got == 1))
        erasures[receiver] += int(np.count_nonzero(got == ERASURE))
        if receiver is Party.BOB:
            ones_to_bob += ones
        transcripts[sender].append(bit)
        transcripts[receiver].append(1 if 2 * ones > reps else 0)

    return IterOutcome(
        i=i,
        part1_erasures_alice=erasures[Party.ALICE],
        part1_erasures_bob=erasures[Party.BOB],
        ones_received_by_bob=ones_to_bob,
        alice_output=robust.output(Party.ALICE, inputs[Party.ALICE], transcripts[Party.ALICE]),
        bob_output=robust.output(Party.BOB, inputs[Party.BOB], transcripts[Party.BOB]),
        alice_active=alice_active,
        bob_active=bob_active,
    )


def run_part2(i: int, outcome: IterOutcome, params: IterationParams, channel: Channel,
              start_index: int) -> IterOutcome:
    """Bob sends 0^L(i) on few part-1 erasures, 1^L(i) otherwise; Alice reads by strict 0-majority."""
    L = params.L(i)
    if not outcome.bob_active:
        bit = 0
    else:
        outcome.bob_string = SUCCESS if outcome.part1_erasures_bob < params.erasure_threshold(i) else ERROR
        bit = 0 if outcome.bob_string == SUCCESS else 1

    got = channel.transmit_many(np.full(L, bit, dtype=np.int64), start_index)
    zeros = int(np.count_nonzero(got == 0))
    ones = int(np.count_nonzero(got == 1))
    outcome.part2_erasures_alice = int(np.count_nonzero(got == ERASURE))
    outcome.alice_read = SUCCESS if zeros > ones else ERROR
    return outcome


def alice_terminate(o: IterOutcome, params: IterationParams) -> bool:
    threshold = params.erasure_threshold(o.i)
    return (o.part1_erasures_alice < threshold
            and o.part2_erasures_alice < threshold
            and o.alice_read == SUCCESS)


def bob_terminate(o: IterOutcome, params: IterationParams) -> bool:
    threshold = params.erasure_threshold(o.i)
    return o.part1_erasures_bob < threshold and o.ones_received_by_bob <= threshold


def bob_valid(o: IterOutcome, params: IterationParams) -> bool:
    return (o.part1_erasures_bob < params.erasure_threshold(o.i)
            and o.ones_received_by_bob >= params.ones_threshold(o.i))


def bob_output(history: List[IterOutcome], termination_i: int):
    """Output of the latest valid iteration strictly before termination_i."""
    for o in reversed(history):
        if o.i < termination_i and o.valid_for_bob:
            return o.bob_output
    return NO_OUTPUT


# =======================================================
# Full run
# =======================================================

@dataclass
class IterRunResult:
    N: int
    T: int
    base_len: int
    outcomes: List[IterOutcome] = field(default_factory=list)
    alice_output: Any = None
    bob_output: Any = None
    expected_alice: Any = None
    expected_bob: Any = None
    terminated_i_A: Optional[int] = None
    terminated_i_B: Optional[int] = None
    wire_factor: int = 1

    @property
    def comm_bits(self) -> int:
        return sum(2 * (self.base_len << o.i) for o in self.outcomes)

    @property
    def wire_bits(self) -> int:
        return self.wire_factor * self.comm_bits

    @property
    def alice_ok(self) -> bool:
        return self.alice_output == self.expected_alice

    @property
    def bob_ok(self) -> bool:
        return self.bob_output == self.expected_bob

    @property
    def success(self) -> bool:
        return self.alice_ok and self.bob_ok

    @property
    def bob_before_alice(self) -> bool:
        return self.terminated_i_B < self.terminated_i_A

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "T": self.T,
            "iterations": [o.to_json() for o in self.outcomes],
            "comm_bits": self.comm_bits,
            "alice_ok": self.alice_ok,
            "bob_ok": self.bob_ok,
            "terminated_i_A": self.terminated_i_A,
            "terminated_i_B": self.terminated_i_B,
        }


def run_iter(robust, x: bytes, y: bytes, e: NoisePattern, rng, channel: Optional[Channel] = None,
             ceiling: int = ITERATION_CEILING, p_e=P_E) -> IterRunResult:
    """Iterate until both parties have terminated."""
    params = IterationParams(robust.length, p_e)
    if channel is None:
        channel = MUPEFChannel(e, rng, MUPEFParams(1 - float(p_e), float(p_e)))
    expected_a, expected_b = noiseless_outputs(robust, x, y)
    result = IterRunResult(N=robust.inner.length_N, T=e.budget_T, base_len=params.base_len,
                           expected_alice=expected_a, expected_bob=expected_b)

    alice_active = bob_active = True
    i = 0
    while alice_active or bob_active:
        if i > ceiling:
            raise RunawayError(
                f"no termination by iteration {ceiling}",
                {"alice_active": alice_active, "bob_active": bob_active, "iterations": i},
            )
        start = params.start_index(i)
        o = run_part1(i, robust, x, y, channel, start, alice_active, bob_active)
        o = run_part2(i, o, params, channel, start + params.L(i))

        if bob_active:
            o.valid_for_bob = bob_valid(o, params)
        if alice_active and alice_terminate(o, params):
            o.alice_terminated = True
            alice_active = False
            result.terminated_i_A = i
            result.alice_output = o.alice_output
        result.outcomes.append(o)
        if bob_active and bob_terminate(o, params):
            o.bob_terminated = True
            bob_active = False
            result.terminated_i_B = i
            result.bob_output = bob_output(result.outcomes, i)

        logger.debug(f"iteration {i}: L={params.L(i)}, alice_read={o.alice_read}, "
                     f"bob erasures={o.part1_erasures_bob}, ones={o.ones_received_by_bob}")
        i += 1

    if result.bob_before_alice:
        logger.warning(f"Bob terminated at iteration {result.terminated_i_B} before Alice "
                       f"({result.terminated_i_A})")
    if channel.beyond_horizon:
        logger.warning(f"run used wire index {channel.max_index} beyond the pattern horizon {e.horizon}")
    return result


def communication_bound(base_len: int, T: int, p_e=P_E) -> float:
    """
    Per-run ceiling on the bits of run_iter: 8·L(0) + (6000/p_e)·T. The
    constant term covers iterations 0 and 1 (2·L(0) + 4·L(0) bits), which
    need no corruption to happen.
    """
    return 8 * base_len + 6000 * T / float(p_e)


# =======================================================
# 5-bit random code
# =======================================================

ZERO_WORDS = np.array([[0, 0, 0, 0, 0], [1, 0, 0, 0, 0], [0, 1, 0, 0, 0]], dtype=np.int64)
ONE_WORDS = np.array([[0, 0, 1, 0, 0], [1, 0, 0, 1, 0], [0, 1, 0, 0, 1]], dtype=np.int64)
_WEIGHTS = np.array([16, 8, 4, 2, 1], dtype=np.int64)


def _decode_table() -> np.ndarray:
    table = np.full(32, ERASURE, dtype=np.int64)
    table[ZERO_WORDS @ _WEIGHTS] = 0
    table[ONE_WORDS @ _WEIGHTS] = 1
    return table


RAND5_TABLE = _decode_table()


def rand5_encode(bit: int, rng) -> tuple:
    words = ONE_WORDS if bit else ZERO_WORDS
    return tuple(int(b) for b in words[int(rng.integers(0, 3))])


def rand5_decode(word) -> int:
    word = np.asarray(word, dtype=np.int64)
    if word.shape != (5,):
        raise ConfigError("word", f"expected 5 bits, got shape {word.shape}")
    return int(RAND5_TABLE[int(word @ _WEIGHTS)])


def rand5_erasure_table() -> List[dict]:
    """For every nonzero offset and bit, the fraction of codewords it turns into ⊥."""
    rows = []
    for delta in range(1, 32):
        for bit, words in ((0, ZERO_WORDS), (1, ONE_WORDS)):
            values = (words @ _WEIGHTS) ^ delta
            erased = int(np.count_nonzero(RAND5_TABLE[values] == ERASURE))
            rows.append({
                "delta": format(delta, "05b"),
                "bit": bit,
                "erasure_probability": Fraction(erased, len(words)),
            })
    return rows


class Rand5Channel(Channel):
    """
    UF channel seen through the 5-bit code: Π index j occupies wire positions
    5(j-1)+1 .. 5j and the receiver gets 0, 1 or ⊥.
    """

    def __init__(self, pattern: NoisePattern, rng):
        super().__init__(pattern)
        self.rng = rng

    def transmit(self, bit: int, index: int) -> int:
        return int(self.transmit_many([bit], index)[0])

    def transmit_many(self, bits, start_index: int) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        if bits.size == 0:
            return bits.copy()
        picks = self.rng.integers(0, 3, size=bits.size)
        words = np.where(bits[:, None] == 1, ONE_WORDS[picks], ZERO_WORDS[picks])

        wire_start = 5 * (start_index - 1) + 1
        wire_stop = wire_start + 5 * bits.size
        self._note(wire_stop - 1)
        flat = words.reshape(-1)
        flips = self.pattern.between(wire_start, wire_stop) - wire_start
        flat[flips] ^= 1
        return RAND5_TABLE[flat.reshape(-1, 5) @ _WEIGHTS]


def lift_to_uf(robust, x: bytes, y: bytes, e_uf: NoisePattern, rng,
               ceiling: int = ITERATION_CEILING) -> IterRunResult:
    """run_iter over UF: 5 wire bits per Π bit, noise positions in wire coordinates."""
    result = run_iter(robust, x, y, e_uf, rng, channel=Rand5Channel(e_uf, rng), ceiling=ceiling)
    result.wire_factor = 5
    return result
