from fractions import Fraction

import numpy as np
import pytest

from intercode_lab.amd_uf import (
    AMDChannel,
    AMDParams,
    ZeroRunMonitor,
    amd_decode,
    amd_decode_bit,
    amd_encode,
    amd_encode_bit,
    bit_miss_rates,
    bob_zero_run_terminate,
    compile_uf,
    export_vectors,
    field,
    miss_rates,
    round_code_k,
    spot_check_field,
    tag,
    termination_window,
)
from intercode_lab.channels import ERASURE, NO_NOISE, NoisePattern, UPEFSchedule
from intercode_lab.errors import ConfigError
from intercode_lab.proto_core import make_random_protocol, toy_indel_robust


def test_params():
    p = AMDParams(1 / 16)
    assert p.k == 5
    assert p.codeword_length == 15
    assert p.miss_bound == Fraction(2, 32)
    assert AMDParams(0.5).k == 2
    with pytest.raises(ConfigError):
        AMDParams(0)


def test_field_range():
    with pytest.raises(ConfigError):
        field(1)
    with pytest.raises(ConfigError):
        field(65)


@pytest.mark.parametrize("k", [4, 16])
def test_tag_matches_field_arithmetic(k):
    GF = field(k)
    s, x = 3, 5
    assert tag(s, x, k) == int(GF(x) ** 3 + GF(s) * GF(x))


@pytest.mark.parametrize("k", [2, 5, 8, 16])
def test_codec(k):
    rng = np.random.default_rng(k)
    s = 2 ** k - 2
    word = amd_encode(s, k, rng)
    assert word.shape == (3 * k,)
    assert amd_decode(word, k) == s

    tampered = word.copy()
    tampered[-1] ^= 1
    assert amd_decode(tampered, k) is None

    erased = word.copy()
    erased[0] = ERASURE
    assert amd_decode(erased, k) is None


def test_all_zero_word_decodes_to_zero():
    assert amd_decode(np.zeros(12, dtype=np.int64), 4) == 0
    assert amd_decode_bit(np.zeros(12, dtype=np.int64), 4) == 0


def test_bit_codec():
    rng = np.random.default_rng(1)
    for b in (0, 1):
        assert amd_decode_bit(amd_encode_bit(b, 6, rng), 6) == b
    with pytest.raises(ConfigError):
        amd_encode_bit(2, 6, rng)
    with pytest.raises(ConfigError):
        amd_decode(np.zeros(5, dtype=np.int64), 4)


def test_exhaustive_miss_rate_k4():
    report = miss_rates(4)
    assert report.exhaustive
    assert report.worst_rate <= 2 / 16
    assert report.verdict == "PASS"


def test_k3_is_reported_only():
    assert miss_rates(3).verdict == "REPORT"


@pytest.mark.parametrize("k", [6, 16])
def test_sampled_miss_rates(k):
    report = miss_rates(k, np.random.default_rng(0), pairs=32)
    assert not report.exhaustive
    assert report.verdict == "PASS"


def test_bit_miss_rate_k4():
    report = bit_miss_rates(4)
    assert report.verdict == "PASS"
    with pytest.raises(ConfigError):
        bit_miss_rates(5)


def test_field_spot_check():
    assert spot_check_field(8, np.random.default_rng(0))


def test_export_vectors():
    vectors = export_vectors(4, 3, np.random.default_rng(0))
    assert len(vectors) == 3
    assert set(vectors[0]) == {"k", "s_hex", "x_hex", "codeword_hex", "tag_hex"}
    v = vectors[0]
    assert int(v["tag_hex"], 16) == tag(int(v["s_hex"], 16), int(v["x_hex"], 16), 4)


# =======================================================
# Termination and compiler
# =======================================================

def test_termination_window():
    assert termination_window(1, 24) == 24
    assert termination_window(16, 24) == 40
    assert termination_window(3, 10) == 17
    with pytest.raises(ConfigError):
        termination_window(0, 10)


def test_zero_run_termination():
    stream = [1] * 10 + [0] * 30
    assert bob_zero_run_terminate(stream, 8, [(1, 0), (2, 10)]) == 2
    assert bob_zero_run_terminate(stream, 8, [(1, 0)]) is None

    one_in_ten = [0] * 4 + [1] + [0] * 5
    assert bob_zero_run_terminate(one_in_ten, 10, [(1, 0)]) is None
    assert bob_zero_run_terminate(one_in_ten, 10, [(1, 0)], relaxed=True) == 1


def test_zero_run_monitor():
    monitor = ZeroRunMonitor(8)
    monitor.mark_round(1)
    monitor.feed([0] * 5)
    assert not monitor.triggered
    monitor.feed([0] * 3)
    assert monitor.triggered
    assert monitor.triggered_round == 1


def test_amd_channel_rounds():
    schedule = UPEFSchedule(64)
    ch = AMDChannel(NO_NOISE, schedule, np.random.default_rng(0))
    assert ch.wire_start(1) == 1
    assert ch.wire_start(2) == 1 + 3 * round_code_k(schedule, 1)
    assert list(ch.transmit_many([1, 0, 1], 1)) == [1, 0, 1]
    assert list(ch.transmit_silence(2, 4)) == [0, 0]


def test_amd_channel_detects_a_tag_burst():
    schedule = UPEFSchedule(64)
    k = round_code_k(schedule, 1)
    e = NoisePattern(tuple(range(2 * k + 1, 3 * k + 1)))
    ch = AMDChannel(e, schedule, np.random.default_rng(0))
    assert ch.transmit(1, 1) == ERASURE


def test_compiled_wire_bits_and_bound():
    compiled = compile_uf(UPEFSchedule(64))
    assert compiled.n_term == 64
    assert compiled.wire_bits(3) == sum(3 * round_code_k(compiled.schedule, i) for i in (1, 2, 3))
    for M in (50, 200):
        assert compiled.wire_bits(M) <= compiled.complexity_bound(M)
    with pytest.raises(ConfigError):
        compile_uf(UPEFSchedule(64, 0.0)).complexity_bound(10)


def test_compiled_run_without_noise():
    robust = toy_indel_robust(make_random_protocol(5, 8), 3)
    compiled = compile_uf(UPEFSchedule(robust.length_Nprime))
    run = compiled.run(robust, b"\x01", b"\x02", NO_NOISE, np.random.default_rng(0))
    assert run.success
    assert not run.bob_before_alice
    assert run.trigger_round is not None
    assert run.trace.alice_last_iteration == 12
    assert run.wire_bits > 0


def test_wire_pattern_hits_each_round_codeword_once():
    compiled = compile_uf(UPEFSchedule(64))
    e = NoisePattern((1, 3, 4, 10), horizon=20)
    wire = compiled.wire_pattern(e, np.random.default_rng(2))
    assert wire.budget_T == 4
    for r, w in zip(e.corrupted_rounds, wire.corrupted_rounds):
        assert compiled.wire_bits(r - 1) < w <= compiled.wire_bits(r)
    assert wire.horizon == compiled.wire_bits(20)
    assert compiled.wire_pattern(NO_NOISE, np.random.default_rng(0)).budget_T == 0
