"""
Challenge-response simulation of an insertion-deletion resilient protocol over
the UPEF channel.

Every iteration Alice sends (m, r_a mod 2) and Bob answers with (m, r_b mod 2),
k = ceil(log2 |Sigma'|) + 1 bits per direction: m most significant bit first,
the parity bit last, Alice's k bits before Bob's.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Tuple

from .channels import ERASURE, UPEFChannel
from .errors import ConfigError, RunawayError, TraceParseError
from .proto_core import RECEIVED, SENT, Party, Transcript, noiseless_outputs

logger = logging.getLogger(__name__)

RUNAWAY_FACTOR = 10

CLEAN = "none"
FLIPPED = "flip"
ERASED = "erase"


def bits_per_direction(sigma_prime: int) -> int:
    if sigma_prime < 2 or sigma_prime & (sigma_prime - 1):
        raise ConfigError("alphabet_Sigma_prime", f"{sigma_prime} is not a power of two >= 2")
    return sigma_prime.bit_length()


def runaway_ceiling(n_prime: int, T: int) -> int:
    return RUNAWAY_FACTOR * (n_prime + T)


def encode_message(m: int, parity: int, k: int) -> List[int]:
    return [(m >> (k - 2 - j)) & 1 for j in range(k - 1)] + [parity]


def decode_message(bits: Sequence[int]) -> Tuple[Optional[int], Optional[int]]:
    """(m, parity) with None for any part that contains an erasure."""
    m_bits, parity = bits[:-1], bits[-1]
    m = None
    if ERASURE not in m_bits:
        m = 0
        for b in m_bits:
            m = (m << 1) | int(b)
    return m, (None if parity == ERASURE else int(parity))


def corruption_flags(sent: Sequence[int], received: Sequence[int]) -> tuple:
    return tuple(
        ERASED if r == ERASURE else (FLIPPED if r != s else CLEAN)
        for s, r in zip(sent, received)
    )


# =======================================================
# Party state machines
# =======================================================

@dataclass
class AliceState:
    x: bytes
    transcript: list = field(default_factory=list)
    r_a: int = 0


@dataclass
class BobState:
    y: bytes
    transcript: list = field(default_factory=list)
    r_b: int = 0
    err: int = 0
    m_last: tuple = (0, 0)


@dataclass(frozen=True)
class AliceStep:
    sent: tuple
    received: tuple
    progress: bool


@dataclass(frozen=True)
class BobStep:
    received: tuple
    sent: tuple
    progress: bool
    silent: bool = False


def alice_iteration(state: AliceState, exchange: Callable[[int, int], Sequence[int]], pi_prime) -> AliceStep:
    """
    One pass of Alice's loop. `exchange(m, parity)` carries the challenge to
    Bob and returns the reply bits as Alice receives them.
    """
    state.r_a += 1
    m_send = pi_prime.emit(state.x, state.transcript)
    state.transcript.append(m_send)
    parity = state.r_a % 2

    reply = tuple(int(b) for b in exchange(m_send, parity))
    m_rec, r_rec = decode_message(reply)
    if m_rec is not None and r_rec == parity:
        state.transcript.append(m_rec)
        return AliceStep((m_send, parity), reply, True)

    state.transcript.pop()
    state.r_a -= 1
    return AliceStep((m_send, parity), reply, False)


def bob_iteration(state: BobState, received: Sequence[int], pi_prime) -> BobStep:
    received = tuple(int(b) for b in received)
    m_rec, r_rec = decode_message(received)
    state.err = 0 if (m_rec is not None and r_rec is not None and r_rec != state.r_b % 2) else 1

    if state.err == 0:
        state.r_b += 1
        state.transcript.append(m_rec)
        m_send = pi_prime.emit(state.y, state.transcript)
        state.transcript.append(m_send)
        state.m_last = (m_send, state.r_b % 2)
        return BobStep(received, state.m_last, True)
    return BobStep(received, state.m_last, False)


# =======================================================
# Trace records
# =======================================================

@dataclass(frozen=True)
class IterationRecord:
    index: int
    wire_start: int
    alice_sent: tuple
    bob_received: tuple
    bob_sent: tuple
    alice_received: tuple
    alice_flags: tuple
    bob_flags: tuple
    alice_progress: bool
    bob_progress: bool
    r_a: int
    r_b: int
    alice_len: int
    bob_len: int
    bob_active: bool = True
    virtual: bool = False

    @property
    def sigma(self) -> int:
        return self.alice_sent[0]

    @property
    def sigma_received(self) -> Optional[int]:
        return decode_message(self.bob_received)[0]

    @property
    def rho_sent(self) -> int:
        return self.bob_sent[0]

    @property
    def rho(self) -> Optional[int]:
        return decode_message(self.alice_received)[0]

    @property
    def alice_symbols(self) -> tuple:
        return (self.sigma, self.rho) if self.alice_progress else ()

    @property
    def bob_symbols(self) -> tuple:
        return (self.sigma_received, self.rho_sent) if self.bob_progress else ()

    @property
    def flips(self) -> int:
        return (self.alice_flags + self.bob_flags).count(FLIPPED)

    @property
    def erasures(self) -> int:
        return (self.alice_flags + self.bob_flags).count(ERASED)

    @property
    def corruptions(self) -> int:
        return self.flips + self.erasures

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "wire_start": self.wire_start,
            "alice_sent": list(self.alice_sent),
            "bob_received": list(self.bob_received),
            "bob_sent": list(self.bob_sent),
            "alice_received": list(self.alice_received),
            "alice_flags": list(self.alice_flags),
            "bob_flags": list(self.bob_flags),
            "alice_progress": self.alice_progress,
            "bob_progress": self.bob_progress,
            "r_a": self.r_a,
            "r_b": self.r_b,
            "alice_len": self.alice_len,
            "bob_len": self.bob_len,
            "bob_active": self.bob_active,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "IterationRecord":
        flags = (CLEAN, FLIPPED, ERASED)
        record = cls(
            index=int(doc["index"]),
            wire_start=int(doc["wire_start"]),
            alice_sent=tuple(int(v) for v in doc["alice_sent"]),
            bob_received=tuple(int(v) for v in doc["bob_received"]),
            bob_sent=tuple(int(v) for v in doc["bob_sent"]),
            alice_received=tuple(int(v) for v in doc["alice_received"]),
            alice_flags=tuple(str(v) for v in doc["alice_flags"]),
            bob_flags=tuple(str(v) for v in doc["bob_flags"]),
            alice_progress=_as_bool(doc["alice_progress"]),
            bob_progress=_as_bool(doc["bob_progress"]),
            r_a=int(doc["r_a"]),
            r_b=int(doc["r_b"]),
            alice_len=int(doc["alice_len"]),
            bob_len=int(doc["bob_len"]),
            bob_active=_as_bool(doc.get("bob_active", True)),
        )
        if any(f not in flags for f in record.alice_flags + record.bob_flags):
            raise ValueError("unknown corruption flag")
        if len(record.alice_sent) != 2 or len(record.bob_sent) != 2:
            raise ValueError("sent messages are (m, parity) pairs")
        return record


def _as_bool(value) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"expected a boolean, got {value!r}")
    return value


@dataclass(frozen=True)
class CRTrace:
    iterations: tuple
    k: int
    n_prime: int
    T: int
    x: bytes
    y: bytes
    alice_transcript: Transcript
    bob_transcript: Transcript
    alice_output: Any
    bob_output: Any
    expected_alice: Any
    expected_bob: Any
    alice_last_iteration: int
    bob_terminated: bool
    bob_terminated_iteration: Optional[int] = None
    bob_listen_iterations: int = 0
    protocol: dict = field(default_factory=dict)

    @property
    def f(self) -> int:
        return sum(r.flips for r in self.iterations)

    @property
    def d(self) -> int:
        return sum(r.erasures for r in self.iterations)

    @property
    def communication_bits(self) -> int:
        return 2 * self.k * (len(self.iterations) + self.bob_listen_iterations)

    @property
    def alice_ok(self) -> bool:
        return self.alice_output == self.expected_alice

    @property
    def bob_ok(self) -> bool:
        return self.bob_terminated and self.bob_output == self.expected_bob

    @property
    def success(self) -> bool:
        return self.alice_ok and self.bob_ok

    @property
    def bob_before_alice(self) -> bool:
        return self.bob_terminated_iteration is not None and self.bob_terminated_iteration < self.alice_last_iteration

    def summary(self) -> dict:
        return {
            "iterations": len(self.iterations),
            "k": self.k,
            "n_prime": self.n_prime,
            "T": self.T,
            "f": self.f,
            "d": self.d,
            "comm_bits": self.communication_bits,
            "alice_ok": self.alice_ok,
            "bob_ok": self.bob_ok,
        }


# =======================================================
# Execution
# =======================================================

class CRSession:
    """
    Drives both state machines over one channel, iteration by iteration. A party
    that has stopped keeps its wire slots but puts silence on them.
    """

    def __init__(self, pi_prime, x: bytes, y: bytes, channel):
        if pi_prime.length_Nprime % 2:
            raise ConfigError("length_Nprime", "the challenge-response simulation needs an even-length protocol")
        self.pi = pi_prime
        self.k = bits_per_direction(pi_prime.alphabet_Sigma_prime)
        self.channel = channel
        self.alice = AliceState(bytes(x))
        self.bob = BobState(bytes(y))
        self.alice_active = pi_prime.length_Nprime > 0
        self.bob_active = True
        self.iteration = 0
        self.alice_last_iteration = 0
        self.bob_terminated_iteration = None
        self.listen_iterations = 0
        self.records: List[IterationRecord] = []

    @property
    def half(self) -> int:
        return self.pi.length_Nprime // 2

    def _carry(self, bits, start: int, silent: bool) -> tuple:
        if silent:
            got = self.channel.transmit_silence(len(bits), start)
        else:
            got = self.channel.transmit_many(bits, start)
        return tuple(int(b) for b in got)

    def _bob_turn(self, received: tuple) -> BobStep:
        if not self.bob_active:
            return BobStep(received, (0, 0), False, silent=True)
        return bob_iteration(self.bob, received, self.pi)

    def step(self) -> Optional[IterationRecord]:
        self.iteration += 1
        i, k = self.iteration, self.k
        start = 2 * k * (i - 1) + 1

        if not self.alice_active:
            got = self._carry([0] * k, start, silent=True)
            bob = self._bob_turn(got)
            self._carry(encode_message(*bob.sent, k), start + k, silent=bob.silent)
            self.listen_iterations += 1
            return None

        holder = {}

        def exchange(m: int, parity: int) -> tuple:
            challenge = encode_message(m, parity, k)
            got = self._carry(challenge, start, silent=False)
            bob = self._bob_turn(got)
            holder["bob"], holder["challenge"] = bob, challenge
            reply = encode_message(*bob.sent, k)
            holder["reply"] = reply
            return self._carry(reply, start + k, silent=bob.silent)

        alice = alice_iteration(self.alice, exchange, self.pi)
        bob = holder["bob"]
        record = IterationRecord(
            index=i,
            wire_start=start,
            alice_sent=alice.sent,
            bob_received=bob.received,
            bob_sent=bob.sent,
            alice_received=alice.received,
            alice_flags=corruption_flags(holder["challenge"], bob.received),
            bob_flags=corruption_flags([0] * k if bob.silent else holder["reply"], alice.received),
            alice_progress=alice.progress,
            bob_progress=bob.progress,
            r_a=self.alice.r_a,
            r_b=self.bob.r_b,
            alice_len=len(self.alice.transcript),
            bob_len=len(self.bob.transcript),
            bob_active=not bob.silent,
        )
        self.records.append(record)

        if self.alice.r_a >= self.half:
            self.alice_active = False
            self.alice_last_iteration = i
        return record

    def terminate_bob(self) -> None:
        if self.bob_active:
            self.bob_active = False
            self.bob_terminated_iteration = self.iteration

    def diagnostic(self) -> dict:
        return {
            "iteration": self.iteration,
            "r_a": self.alice.r_a,
            "r_b": self.bob.r_b,
            "alice_active": self.alice_active,
            "bob_active": self.bob_active,
        }

    def finish(self, T: int, protocol: Optional[dict] = None) -> CRTrace:
        pi, x, y = self.pi, self.alice.x, self.bob.y
        expected_a, expected_b = noiseless_outputs(pi, x, y)
        return CRTrace(
            iterations=tuple(self.records),
            k=self.k,
            n_prime=pi.length_Nprime,
            T=T,
            x=x,
            y=y,
            alice_transcript=_tagged(self.alice.transcript, (SENT, RECEIVED)),
            bob_transcript=_tagged(self.bob.transcript, (RECEIVED, SENT)),
            alice_output=pi.output(Party.ALICE, x, self.alice.transcript),
            bob_output=pi.output(Party.BOB, y, self.bob.transcript),
            expected_alice=expected_a,
            expected_bob=expected_b,
            alice_last_iteration=self.alice_last_iteration,
            bob_terminated=not self.bob_active,
            bob_terminated_iteration=self.bob_terminated_iteration,
            bob_listen_iterations=self.listen_iterations,
            protocol=dict(protocol or {}),
        )


def _tagged(symbols: Sequence[int], order: tuple) -> Transcript:
    return Transcript(tuple(symbols), tuple(order[j % 2] for j in range(len(symbols))))


def run_cr(pi_prime, x: bytes, y: bytes, e, s, rng, channel=None, ceiling: Optional[int] = None,
           protocol: Optional[dict] = None) -> CRTrace:
    """
    Run the simulation until r_a = N'/2. Alice then outputs, the channel
    delivers silence (noiselessly) and Bob outputs on receiving it.
    """
    channel = channel if channel is not None else UPEFChannel(e, s, rng)
    session = CRSession(pi_prime, x, y, channel)
    limit = ceiling if ceiling is not None else runaway_ceiling(pi_prime.length_Nprime, e.budget_T)

    while session.alice_active:
        if session.iteration >= limit:
            raise RunawayError(f"no termination after {limit} iterations", session.diagnostic())
        session.step()

    # silence on the channel: Bob leaves his loop with the transcript he has
    session.terminate_bob()
    if channel.beyond_horizon:
        logger.warning(f"run used wire index {channel.max_index} beyond the pattern horizon {e.horizon}")

    trace = session.finish(e.budget_T, protocol)
    logger.debug(f"challenge-response: {len(trace.iterations)} iterations, f={trace.f}, d={trace.d}, "
                 f"success={trace.success}")
    return trace


# =======================================================
# Trace files
# =======================================================

def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, bytes):
        return value.hex()
    return value


def _restore(value):
    if isinstance(value, list):
        return tuple(_restore(v) for v in value)
    return value


def trace_lines(trace: CRTrace) -> List[dict]:
    lines = [{
        "type": "header",
        "k": trace.k,
        "n_prime": trace.n_prime,
        "T": trace.T,
        "x": trace.x.hex(),
        "y": trace.y.hex(),
        "protocol": trace.protocol,
    }]
    lines.extend({"type": "iteration", **r.to_json()} for r in trace.iterations)
    lines.append({
        "type": "outcome",
        "alice_transcript": list(trace.alice_transcript.symbols),
        "bob_transcript": list(trace.bob_transcript.symbols),
        "alice_output": _jsonable(trace.alice_output),
        "bob_output": _jsonable(trace.bob_output),
        "expected_alice": _jsonable(trace.expected_alice),
        "expected_bob": _jsonable(trace.expected_bob),
        "alice_last_iteration": trace.alice_last_iteration,
        "bob_terminated": trace.bob_terminated,
        "bob_terminated_iteration": trace.bob_terminated_iteration,
        "bob_listen_iterations": trace.bob_listen_iterations,
    })
    return lines


def save_trace(trace: CRTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in trace_lines(trace):
            f.write(json.dumps(line, sort_keys=True) + "\n")


def load_trace(path) -> CRTrace:
    header = None
    outcome = None
    records = []
    line_number = 0

    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceParseError(line_number, f"not JSON: {e}") from e
            if not isinstance(doc, dict):
                raise TraceParseError(line_number, "expected a JSON object")
            kind = doc.get("type")

            if header is None:
                if kind != "header":
                    raise TraceParseError(line_number, "first line must be the header")
                try:
                    header = {
                        "k": int(doc["k"]),
                        "n_prime": int(doc["n_prime"]),
                        "T": int(doc["T"]),
                        "x": bytes.fromhex(doc["x"]),
                        "y": bytes.fromhex(doc["y"]),
                        "protocol": dict(doc.get("protocol") or {}),
                    }
                except (KeyError, TypeError, ValueError) as e:
                    raise TraceParseError(line_number, f"bad header: {e}") from e
            elif outcome is not None:
                raise TraceParseError(line_number, "content after the outcome line")
            elif kind == "iteration":
                try:
                    record = IterationRecord.from_json(doc)
                except (KeyError, TypeError, ValueError) as e:
                    raise TraceParseError(line_number, f"bad iteration record: {e}") from e
                if record.index != len(records) + 1:
                    raise TraceParseError(line_number, f"iteration {record.index} out of order")
                k = header["k"]
                if len(record.bob_received) != k or len(record.alice_received) != k:
                    raise TraceParseError(line_number, f"received messages must carry {k} bits")
                records.append(record)
            elif kind == "outcome":
                outcome = doc
                outcome_line = line_number
            else:
                raise TraceParseError(line_number, f"unknown line type {kind!r}")

    if header is None:
        raise TraceParseError(line_number + 1, "empty trace")
    if outcome is None:
        raise TraceParseError(line_number + 1, "missing outcome line")

    try:
        alice = tuple(int(v) for v in outcome["alice_transcript"])
        bob = tuple(int(v) for v in outcome["bob_transcript"])
        return CRTrace(
            iterations=tuple(records),
            k=header["k"],
            n_prime=header["n_prime"],
            T=header["T"],
            x=header["x"],
            y=header["y"],
            alice_transcript=_tagged(alice, (SENT, RECEIVED)),
            bob_transcript=_tagged(bob, (RECEIVED, SENT)),
            alice_output=_restore(outcome["alice_output"]),
            bob_output=_restore(outcome["bob_output"]),
            expected_alice=_restore(outcome["expected_alice"]),
            expected_bob=_restore(outcome["expected_bob"]),
            alice_last_iteration=int(outcome["alice_last_iteration"]),
            bob_terminated=_as_bool(outcome["bob_terminated"]),
            bob_terminated_iteration=outcome.get("bob_terminated_iteration"),
            bob_listen_iterations=int(outcome.get("bob_listen_iterations", 0)),
            protocol=header["protocol"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise TraceParseError(outcome_line, f"bad outcome: {e}") from e
