"""
AMD codes over GF(2^k), their single-bit variant, and the compiler that runs the
challenge-response simulation over a UF channel with Bob's zero-run termination.

Codewords are (s, x, x^3 + s·x), each part k bits, most significant bit first.
Fields come from galois with its default (Conway) irreducible polynomial.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from functools import lru_cache
from typing import List, Optional, Sequence

import galois
import numpy as np

from .channels import ERASURE, Channel, NoisePattern, UPEFSchedule
from .errors import ConfigError, RunawayError
from .scheme_cr import CRSession, CRTrace, bits_per_direction, runaway_ceiling

logger = logging.getLogger(__name__)

MIN_K = 2
MAX_K = 64
TABLE_MAX_K = 8
TERMINATION_ZERO_FRACTION = 0.9


@lru_cache(maxsize=None)
def field(k: int):
    if not MIN_K <= k <= MAX_K:
        raise ConfigError("k", f"must lie in [{MIN_K}, {MAX_K}], got {k}")
    return galois.GF(2 ** k)


@lru_cache(maxsize=None)
def tag_table(k: int) -> np.ndarray:
    """tag_table(k)[s, x] = x^3 + s·x as integers."""
    if k > TABLE_MAX_K:
        raise ConfigError("k", f"tag tables stop at k={TABLE_MAX_K}")
    GF = field(k)
    e = GF.elements
    table = e[:, None] * e[None, :] + (e ** 3)[None, :]
    return table.view(np.ndarray).astype(np.int64)


def tag(s: int, x: int, k: int) -> int:
    if k <= TABLE_MAX_K:
        return int(tag_table(k)[s, x])
    GF = field(k)
    gx = GF(x)
    return int(gx ** 3 + GF(s) * gx)


def _to_bits(value: int, width: int) -> List[int]:
    return [(value >> (width - 1 - j)) & 1 for j in range(width)]


def _from_bits(bits: Sequence[int]) -> int:
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value


def _uniform(bits: int, rng) -> int:
    if bits == 0:
        return 0
    nbytes = (bits + 7) // 8
    return int.from_bytes(rng.bytes(nbytes), "big") >> (8 * nbytes - bits)


@dataclass(frozen=True)
class AMDParams:
    target_p: float

    def __post_init__(self):
        if not 0 < self.target_p <= 1:
            raise ConfigError("target_p", f"must lie in (0, 1], got {self.target_p}")

    @property
    def k(self) -> int:
        return max(MIN_K, math.ceil(math.log2(1 / self.target_p)) + 1)

    @property
    def codeword_length(self) -> int:
        return 3 * self.k

    @property
    def miss_bound(self) -> Fraction:
        return Fraction(2, 2 ** self.k)

    @classmethod
    def from_probability(cls, p: float) -> "AMDParams":
        return cls(p)


# =======================================================
# Codec
# =======================================================

def amd_encode(s: int, k: int, rng) -> np.ndarray:
    field(k)
    if not 0 <= s < 2 ** k:
        raise ConfigError("s", f"{s} does not fit in {k} bits")
    x = _uniform(k, rng)
    return np.asarray(_to_bits(s, k) + _to_bits(x, k) + _to_bits(tag(s, x, k), k), dtype=np.int64)


def amd_decode(word, k: int) -> Optional[int]:
    """s on a consistent tag, None (⊥) otherwise."""
    word = np.asarray(word, dtype=np.int64)
    if word.shape != (3 * k,):
        raise ConfigError("word", f"expected {3 * k} bits for k={k}, got shape {word.shape}")
    if (word == ERASURE).any():
        return None
    s, x, t = _from_bits(word[:k]), _from_bits(word[k:2 * k]), _from_bits(word[2 * k:])
    return s if tag(s, x, k) == t else None


def amd_encode_bit(b: int, k: int, rng) -> np.ndarray:
    if b not in (0, 1):
        raise ConfigError("b", f"expected a bit, got {b}")
    return amd_encode((_uniform(k - 1, rng) << 1) | b, k, rng)


def amd_decode_bit(word, k: int) -> int:
    s = amd_decode(word, k)
    return ERASURE if s is None else s & 1


def export_vectors(k: int, count: int, rng) -> List[dict]:
    width = (k + 3) // 4
    vectors = []
    for _ in range(count):
        s = _uniform(k, rng)
        word = amd_encode(s, k, rng)
        x = _from_bits(word[k:2 * k])
        t = _from_bits(word[2 * k:])
        vectors.append({
            "k": k,
            "s_hex": format(s, f"0{width}x"),
            "x_hex": format(x, f"0{width}x"),
            "codeword_hex": format(_from_bits(word), f"0{(3 * k + 3) // 4}x"),
            "tag_hex": format(t, f"0{width}x"),
        })
    return vectors


def spot_check_field(k: int, rng, samples: int = 32) -> bool:
    """Associativity, distributivity and inverses on random elements."""
    GF = field(k)
    values = [[_uniform(k, rng) for _ in range(3)] for _ in range(samples)]
    for a, b, c in values:
        a, b, c = GF(a), GF(b), GF(c)
        if (a * b) * c != a * (b * c) or a * (b + c) != a * b + a * c:
            return False
        if a != 0 and a * (a ** -1) != 1:
            return False
    return True


# =======================================================
# Soundness sweeps
# =======================================================

@dataclass(frozen=True)
class MissReport:
    k: int
    exhaustive: bool
    worst_rate: float
    bound: Fraction
    worst_case: dict = dc_field(default_factory=dict)

    @property
    def asserted(self) -> bool:
        return self.k >= 4

    @property
    def within_bound(self) -> bool:
        return self.worst_rate <= float(self.bound)

    @property
    def verdict(self) -> str:
        if not self.asserted:
            return "REPORT"
        return "PASS" if self.within_bound else "FAIL"

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "exhaustive": self.exhaustive,
            "worst_rate": self.worst_rate,
            "bound": str(self.bound),
            "worst_case": self.worst_case,
            "verdict": self.verdict,
        }


def _valid_grid(k: int) -> np.ndarray:
    """valid[ds-1, dx, dt, s, x]: the offset codeword of (s, x) decodes, for every ds != 0."""
    n = 2 ** k
    tags = tag_table(k)
    s = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    ds = np.arange(1, n)[:, None, None, None, None]
    dx = np.arange(n)[None, :, None, None, None]
    dt = np.arange(n)[None, None, :, None, None]
    return tags[s ^ ds, x ^ dx] == (tags[s, x] ^ dt)


def miss_rates(k: int, rng=None, pairs: int = 256) -> MissReport:
    """
    Worst undetected-substitution rate over x for fixed (s, Δ). Only Δ with a
    nonzero s-part can cause a miss. Exhaustive for k <= 4; above that (s, Δ)
    pairs are sampled and the rate over x is exact.
    """
    field(k)
    bound = Fraction(2, 2 ** k)
    if k <= 4:
        valid = _valid_grid(k)
        counts = valid.sum(axis=4)
        worst = np.unravel_index(int(np.argmax(counts)), counts.shape)
        ds, dx, dt, s = (int(v) for v in worst)
        return MissReport(
            k, True, float(Fraction(int(counts[worst]), 2 ** k)), bound,
            {"s": s, "delta_s": ds + 1, "delta_x": dx, "delta_t": dt},
        )

    rng = rng if rng is not None else np.random.default_rng(k)
    worst_rate, worst_case = 0.0, {}
    if k <= TABLE_MAX_K:
        tags = tag_table(k)
        x = np.arange(2 ** k)
        for _ in range(pairs):
            s, ds, dx, dt = _uniform(k, rng), 1 + int(rng.integers(0, 2 ** k - 1)), _uniform(k, rng), _uniform(k, rng)
            rate = float(np.mean(tags[s ^ ds, x ^ dx] == (tags[s, x] ^ dt)))
            if rate > worst_rate:
                worst_rate, worst_case = rate, {"s": s, "delta_s": ds, "delta_x": dx, "delta_t": dt}
    else:
        GF = field(k)
        for _ in range(pairs):
            s, ds, dx, dt = (GF(_uniform(k, rng)) for _ in range(4))
            if ds == 0:
                ds = GF(1)
            # tag(s + ds, x + dx) - tag(s, x) - dt in characteristic 2
            coeffs = (dx, dx ** 2 + ds, dx ** 3 + s * dx + ds * dx + dt)
            poly = galois.Poly(GF([int(c) for c in coeffs]))
            rate = len(poly.roots()) / 2 ** k
            if rate > worst_rate:
                worst_rate, worst_case = rate, {"s": int(s), "delta_s": int(ds), "delta_x": int(dx), "delta_t": int(dt)}
    return MissReport(k, False, worst_rate, bound, worst_case)


def bit_miss_rates(k: int) -> MissReport:
    """Worst rate, over x' and x, at which a fixed offset turns bit b into 1-b. Exhaustive, k <= 4."""
    if k > 4:
        raise ConfigError("k", "the exhaustive bit sweep runs for k <= 4")
    valid = _valid_grid(k)
    n = 2 ** k
    odd = np.arange(1, n) % 2 == 1
    worst_rate, worst_case = 0.0, {}
    for b in (0, 1):
        rows = valid[:, :, :, b::2, :]
        rates = rows.mean(axis=(3, 4))
        rates = np.where(odd[:, None, None], rates, 0.0)
        at = np.unravel_index(int(np.argmax(rates)), rates.shape)
        if rates[at] > worst_rate:
            worst_rate = float(rates[at])
            worst_case = {"bit": b, "delta_s": int(at[0]) + 1, "delta_x": int(at[1]), "delta_t": int(at[2])}
    return MissReport(k, True, worst_rate, Fraction(2, n), worst_case)


def prefix_min_entropy(k: int, bit: int, samples: int, rng) -> List[dict]:
    """Empirical min-entropy of every prefix of amd_encode_bit(bit) codewords."""
    if k > TABLE_MAX_K:
        raise ConfigError("k", f"prefix sweeps stop at k={TABLE_MAX_K}")
    tags = tag_table(k)
    s = (rng.integers(0, 2 ** (k - 1), size=samples) << 1) | bit
    x = rng.integers(0, 2 ** k, size=samples)
    words = (s << (2 * k)) | (x << k) | tags[s, x]
    rows = []
    for length in range(1, 3 * k + 1):
        _, counts = np.unique(words >> (3 * k - length), return_counts=True)
        rows.append({"prefix": length, "min_entropy": float(-np.log2(counts.max() / samples))})
    return rows


# =======================================================
# UF compiler
# =======================================================

@lru_cache(maxsize=None)
def round_code_k(schedule: UPEFSchedule, i: int) -> int:
    return AMDParams.from_probability(schedule.p(i)).k


def termination_window(i: int, N: int) -> int:
    if i < 1:
        raise ConfigError("i", f"rounds are 1-based, got {i}")
    return math.ceil(N + 4 * math.log2(i))


def _quiet(ones: int, length: int, relaxed: bool) -> bool:
    if relaxed:
        return length - ones >= TERMINATION_ZERO_FRACTION * length
    return ones == 0


def bob_zero_run_terminate(stream, N: int, round_starts, relaxed: bool = False) -> Optional[int]:
    """
    First Alice-sender round whose window of t(i) raw bits, starting at that
    round's encoding in `stream`, is complete and quiet. `round_starts` lists
    (round index, offset into stream).
    """
    stream = np.asarray(stream, dtype=np.int64)
    ones = np.concatenate(([0], np.cumsum(stream == 1)))
    for i, offset in round_starts:
        length = termination_window(i, N)
        if offset + length > stream.size:
            break
        if _quiet(int(ones[offset + length] - ones[offset]), length, relaxed):
            return i
    return None


class ZeroRunMonitor:
    """Incremental bob_zero_run_terminate over Alice-origin wire bits."""

    def __init__(self, N: int, relaxed: bool = False):
        self.N = N
        self.relaxed = relaxed
        self.bits: List[int] = []
        self.windows = deque()
        self.triggered_round: Optional[int] = None

    def mark_round(self, i: int) -> None:
        self.windows.append((i, len(self.bits), termination_window(i, self.N)))

    def feed(self, bits) -> None:
        self.bits.extend(int(b) for b in bits)
        while self.windows and self.triggered_round is None:
            i, start, length = self.windows[0]
            if start + length > len(self.bits):
                break
            self.windows.popleft()
            if _quiet(sum(self.bits[start:start + length]), length, self.relaxed):
                self.triggered_round = i
                logger.debug(f"zero-run window of round {i} ({length} bits) triggered")

    @property
    def triggered(self) -> bool:
        return self.triggered_round is not None


class AMDChannel(Channel):
    """
    UF channel under the compiler: round i of the inner run is one bit,
    AMD-encoded with k_i from the schedule into 3k_i wire bits. A silent sender
    puts the all-zero word on the wire. `observer(i, word)` sees every received word.
    """

    def __init__(self, pattern: NoisePattern, schedule: UPEFSchedule, rng, observer=None):
        super().__init__(pattern)
        self.schedule = schedule
        self.rng = rng
        self.observer = observer
        self._starts = [1]

    def code_k(self, i: int) -> int:
        return round_code_k(self.schedule, i)

    def wire_start(self, i: int) -> int:
        while len(self._starts) < i:
            j = len(self._starts)
            self._starts.append(self._starts[-1] + 3 * self.code_k(j))
        return self._starts[i - 1]

    def _round(self, bit: int, i: int, silent: bool) -> int:
        if i < 1:
            raise ConfigError("index", f"rounds are 1-based, got {i}")
        k = self.code_k(i)
        start = self.wire_start(i)
        stop = start + 3 * k
        word = np.zeros(3 * k, dtype=np.int64) if silent else amd_encode_bit(int(bit), k, self.rng)
        word[self.pattern.between(start, stop) - start] ^= 1
        self._note(stop - 1)
        if self.observer is not None:
            self.observer(i, word)
        return amd_decode_bit(word, k)

    def transmit(self, bit: int, index: int) -> int:
        return self._round(bit, index, False)

    def transmit_many(self, bits, start_index: int) -> np.ndarray:
        return np.asarray([self._round(int(b), start_index + j, False) for j, b in enumerate(bits)], dtype=np.int64)

    def transmit_silence(self, count: int, start_index: int) -> np.ndarray:
        return np.asarray([self._round(0, start_index + j, True) for j in range(count)], dtype=np.int64)


@dataclass(frozen=True)
class CompiledRun:
    trace: CRTrace
    wire_bits: int
    trigger_round: Optional[int] = None

    @property
    def success(self) -> bool:
        return self.trace.success

    @property
    def bob_before_alice(self) -> bool:
        return self.trace.bob_before_alice


@dataclass(frozen=True)
class UFCompiled:
    schedule: UPEFSchedule
    n_term: int
    relaxed: bool = False

    def code_k(self, i: int) -> int:
        return round_code_k(self.schedule, i)

    def wire_bits(self, M: int) -> int:
        return sum(3 * self.code_k(i) for i in range(1, M + 1))

    def wire_pattern(self, pattern: NoisePattern, rng) -> NoisePattern:
        """UF pattern flipping one random wire bit inside the codeword of every corrupted inner round."""
        positions = []
        start, i = 1, 1
        for r in pattern.corrupted_rounds:
            while i < r:
                start += 3 * self.code_k(i)
                i += 1
            positions.append(start + int(rng.integers(0, 3 * self.code_k(r))))
        horizon = self.wire_bits(pattern.horizon) if pattern.horizon else None
        return NoisePattern(tuple(positions), horizon=horizon)

    def complexity_bound(self, M: int) -> float:
        cn = self.schedule.C * self.schedule.N
        if cn <= 0:
            raise ConfigError("C", "the closed form needs C·N > 0")
        r = math.sqrt(2 * cn)
        return 6 * M + 3 * r + 3 * (M - r) * math.log2(M * M / cn)

    def run(self, pi_prime, x: bytes, y: bytes, e_uf: NoisePattern, rng,
            ceiling: Optional[int] = None, protocol: Optional[dict] = None) -> CompiledRun:
        k = bits_per_direction(pi_prime.alphabet_Sigma_prime)
        monitor = ZeroRunMonitor(self.n_term, self.relaxed)

        def observe(i: int, word) -> None:
            if (i - 1) % (2 * k) < k:
                monitor.mark_round(i)
                monitor.feed(word)

        channel = AMDChannel(e_uf, self.schedule, rng, observe)
        session = CRSession(pi_prime, x, y, channel)
        limit = ceiling if ceiling is not None else runaway_ceiling(pi_prime.length_Nprime, e_uf.budget_T)

        while session.alice_active or session.bob_active:
            if session.iteration >= limit:
                raise RunawayError(f"compiled run did not terminate within {limit} iterations",
                                   {**session.diagnostic(), "trigger_round": monitor.triggered_round})
            session.step()
            if session.bob_active and monitor.triggered:
                session.terminate_bob()

        trace = session.finish(e_uf.budget_T, protocol)
        if trace.bob_before_alice:
            logger.warning(f"zero-run termination at round {monitor.triggered_round} while Alice was running")
        if channel.beyond_horizon:
            logger.warning(f"run used wire index {channel.max_index} beyond the pattern horizon {e_uf.horizon}")
        return CompiledRun(trace, self.wire_bits(2 * k * session.iteration), monitor.triggered_round)


def compile_uf(schedule: UPEFSchedule, n_term: Optional[int] = None, relaxed: bool = False) -> UFCompiled:
    return UFCompiled(schedule, schedule.N if n_term is None else n_term, relaxed)
