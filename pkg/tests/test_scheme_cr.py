import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.strategies import integers, sampled_from

from intercode_lab.adversary import erasure_only
from intercode_lab.channels import ERASE, ERASURE, NO_NOISE, NoisePattern, UFChannel, UPEFSchedule
from intercode_lab.errors import ConfigError, RunawayError, TraceParseError
from intercode_lab.proto_core import make_random_protocol, toy_indel_robust
from intercode_lab.scheme_cr import (
    ERASED,
    FLIPPED,
    CLEAN,
    AliceState,
    BobState,
    alice_iteration,
    bits_per_direction,
    bob_iteration,
    corruption_flags,
    decode_message,
    encode_message,
    load_trace,
    run_cr,
    runaway_ceiling,
    save_trace,
)

X = b"\x01\x02\x03"
Y = b"\x09\x08"


@pytest.fixture
def robust():
    # N' = 24, binary, so k = 2 bits per direction
    return toy_indel_robust(make_random_protocol(5, 8), 3)


def test_bits_per_direction():
    assert bits_per_direction(2) == 2
    assert bits_per_direction(4) == 3
    assert bits_per_direction(256) == 9
    with pytest.raises(ConfigError):
        bits_per_direction(3)


def test_message_layout():
    assert encode_message(5, 1, 4) == [1, 0, 1, 1]
    assert decode_message([1, 0, 1, 1]) == (5, 1)
    assert decode_message([1, ERASURE, 1, 0]) == (None, 0)
    assert decode_message([1, 0, 1, ERASURE]) == (5, None)


def test_corruption_flags():
    assert corruption_flags([1, 0, 1], [1, 1, ERASURE]) == (CLEAN, FLIPPED, ERASED)


def test_runaway_ceiling():
    assert runaway_ceiling(24, 5) == 290


def test_bob_rejects_a_repeated_parity():
    pi = toy_indel_robust(make_random_protocol(5, 8), 3)
    bob = BobState(Y)
    step = bob_iteration(bob, [1, 1], pi)
    assert step.progress and bob.r_b == 1 and len(bob.transcript) == 2
    again = bob_iteration(bob, [1, 1], pi)
    assert not again.progress
    assert again.sent == step.sent
    assert bob.err == 1


def test_alice_rolls_back_on_a_bad_reply():
    pi = toy_indel_robust(make_random_protocol(5, 8), 3)
    alice = AliceState(X)
    step = alice_iteration(alice, lambda m, parity: [0, 1 - parity], pi)
    assert not step.progress
    assert alice.r_a == 0 and alice.transcript == []
    step = alice_iteration(alice, lambda m, parity: [1, parity], pi)
    assert step.progress
    assert alice.transcript[1] == 1


def test_noiseless_run(robust):
    trace = run_cr(robust, X, Y, NO_NOISE, UPEFSchedule(24), np.random.default_rng(0))
    assert trace.success
    assert len(trace.iterations) == 12
    assert trace.communication_bits == 2 * robust.length_Nprime
    assert trace.f == 0 and trace.d == 0
    assert trace.alice_last_iteration == 12
    assert trace.bob_terminated_iteration == 12
    assert not trace.bob_before_alice
    assert len(trace.alice_transcript) == len(trace.bob_transcript) == 24


def test_first_bit_erased_costs_one_iteration(robust):
    e = NoisePattern((1,), {1: ERASE}, default_choice=ERASE)
    trace = run_cr(robust, X, Y, e, UPEFSchedule(24, 0.0), np.random.default_rng(0))
    assert len(trace.iterations) == 13
    first = trace.iterations[0]
    assert not first.alice_progress and not first.bob_progress
    assert trace.d == 1 and trace.f == 0
    assert trace.success


def test_flipped_reply_parity_resyncs(robust):
    # wire positions 1-2 carry Alice's challenge, 3-4 Bob's reply; 4 is his parity bit
    e = NoisePattern((4,))
    trace = run_cr(robust, X, Y, e, None, None, channel=UFChannel(e))
    first, second = trace.iterations[:2]
    assert first.bob_progress and not first.alice_progress
    assert second.alice_progress and not second.bob_progress
    assert trace.f == 1
    assert len(trace.iterations) == 13
    assert trace.success


def test_runaway_is_reported(robust):
    e = NoisePattern(tuple(range(1, 200)), default_choice=ERASE)
    with pytest.raises(RunawayError) as info:
        run_cr(robust, X, Y, e, UPEFSchedule(24, 0.0), np.random.default_rng(0), ceiling=3)
    assert info.value.diagnostic["iteration"] == 3
    assert info.value.diagnostic["r_a"] == 0


def test_trace_file_round_trip(tmp_path, robust):
    e = NoisePattern((4,))
    trace = run_cr(robust, X, Y, e, None, None, channel=UFChannel(e), protocol={"kind": "random", "seed": 5})
    path = tmp_path / "trace.jsonl"
    save_trace(trace, path)
    loaded = load_trace(path)
    assert loaded.iterations == trace.iterations
    assert loaded.summary() == trace.summary()
    assert loaded.protocol == {"kind": "random", "seed": 5}
    assert loaded.success


def test_trace_parse_errors(tmp_path, robust):
    trace = run_cr(robust, X, Y, NO_NOISE, UPEFSchedule(24), np.random.default_rng(0))
    path = tmp_path / "trace.jsonl"
    save_trace(trace, path)
    lines = path.read_text(encoding="utf-8").splitlines()

    broken = tmp_path / "broken.jsonl"
    broken.write_text("\n".join(lines[:2] + ["{not json"] + lines[3:]) + "\n", encoding="utf-8")
    with pytest.raises(TraceParseError) as info:
        load_trace(broken)
    assert info.value.line_number == 3

    headless = tmp_path / "headless.jsonl"
    headless.write_text("\n".join(lines[1:]) + "\n", encoding="utf-8")
    with pytest.raises(TraceParseError) as info:
        load_trace(headless)
    assert info.value.line_number == 1

    record = json.loads(lines[1])
    record["alice_flags"] = ["smudge", "none"]
    bad_flag = tmp_path / "bad_flag.jsonl"
    bad_flag.write_text("\n".join([lines[0], json.dumps(record)] + lines[2:]) + "\n", encoding="utf-8")
    with pytest.raises(TraceParseError) as info:
        load_trace(bad_flag)
    assert info.value.line_number == 2

    truncated = tmp_path / "truncated.jsonl"
    truncated.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(TraceParseError):
        load_trace(truncated)


@settings(max_examples=500, deadline=None, derandomize=True)
@given(seed=integers(0, 2 ** 31 - 1), n=integers(1, 16), alphabet=sampled_from([2, 8]), T=integers(0, 40))
def test_erasures_alone_never_break_a_run(seed, n, alphabet, T):
    robust = toy_indel_robust(make_random_protocol(seed, n, alphabet), 3)
    rng = np.random.default_rng(seed)
    k = bits_per_direction(robust.alphabet_Sigma_prime)
    e = erasure_only(T, k * (robust.length_Nprime + 2 * T), rng)
    trace = run_cr(robust, X, Y, e, UPEFSchedule(robust.length_Nprime, 0.0), rng)
    assert trace.f == 0
    assert trace.success
