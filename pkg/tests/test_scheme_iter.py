from fractions import Fraction

import numpy as np
import pytest

from intercode_lab.adversary import prefix_burst, uniform
from intercode_lab.channels import ERASURE, NO_NOISE, NoisePattern
from intercode_lab.errors import ConfigError, RunawayError
from intercode_lab.proto_core import make_random_protocol, noiseless_outputs, toy_subst_resilient
from intercode_lab.scheme_iter import (
    ERROR,
    NO_OUTPUT,
    SUCCESS,
    IterationParams,
    IterOutcome,
    Rand5Channel,
    alice_terminate,
    bob_output,
    bob_terminate,
    communication_bound,
    lift_to_uf,
    rand5_decode,
    rand5_encode,
    rand5_erasure_table,
    run_iter,
)

X = b"\x05\x06"
Y = b"\x07"


@pytest.fixture
def robust():
    # 4 data pairs plus forced pairs, repetition 3: 48 bits
    return toy_subst_resilient(make_random_protocol(5, 8), 3)


def test_iteration_params():
    params = IterationParams(48)
    assert params.L(0) == 48 and params.L(3) == 384
    assert params.start_index(0) == 1
    assert params.start_index(1) == 97
    assert params.start_index(2) == 289
    assert params.erasure_threshold(0) == Fraction(2, 125)
    assert params.ones_threshold(1) == Fraction(96, 40)
    with pytest.raises(ConfigError):
        IterationParams(0)


def test_termination_rules():
    params = IterationParams(48)
    o = IterOutcome(i=0, alice_read=SUCCESS)
    assert alice_terminate(o, params)
    assert bob_terminate(o, params)
    o.ones_received_by_bob = 6
    assert not bob_terminate(o, params)
    o.part2_erasures_alice = 1
    assert not alice_terminate(o, params)
    assert not alice_terminate(IterOutcome(i=0, alice_read=ERROR), params)


def test_bob_output_takes_the_latest_valid_iteration():
    history = [
        IterOutcome(i=0, bob_output="a", valid_for_bob=True),
        IterOutcome(i=1, bob_output="b", valid_for_bob=False),
        IterOutcome(i=2, bob_output="c", valid_for_bob=True),
    ]
    assert bob_output(history, 2) == "a"
    assert bob_output(history, 3) == "c"
    assert bob_output(history, 0) is NO_OUTPUT


def test_noiseless_run(robust):
    result = run_iter(robust, X, Y, NO_NOISE, np.random.default_rng(0))
    assert result.success
    assert result.terminated_i_A == 0
    assert result.terminated_i_B == 1
    assert result.comm_bits == 6 * robust.length
    assert not result.bob_before_alice
    assert result.bob_output == noiseless_outputs(robust, X, Y)[1]


def test_early_burst_pushes_alice_to_a_later_iteration(robust):
    e = prefix_burst(40, horizon=2000)
    result = run_iter(robust, X, Y, e, np.random.default_rng(3))
    assert result.success
    assert result.terminated_i_A >= 1
    assert result.comm_bits <= communication_bound(robust.length, 40)
    assert not result.outcomes[0].valid_for_bob


def test_runaway_ceiling(robust):
    with pytest.raises(RunawayError) as info:
        run_iter(robust, X, Y, prefix_burst(40), np.random.default_rng(3), ceiling=0)
    assert info.value.diagnostic["iterations"] == 1


def test_communication_bound():
    assert communication_bound(48, 0) == 384
    assert communication_bound(48, 1) == pytest.approx(384 + 18000)
    assert communication_bound(48, 10, p_e=Fraction(1, 2)) == pytest.approx(384 + 120000)


def test_runs_across_seeds_stay_correct_and_bounded():
    successes = 0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        robust = toy_subst_resilient(make_random_protocol(seed, 32), 3)
        T = int(rng.integers(0, 33))
        e = uniform(T, 4 * robust.length + 8 * T, rng)
        result = run_iter(robust, X, Y, e, rng)
        successes += result.success
        assert not result.bob_before_alice
        assert result.comm_bits <= communication_bound(robust.length, T)
    assert successes >= 36


# =======================================================
# 5-bit random code
# =======================================================

def test_rand5_codewords():
    rng = np.random.default_rng(0)
    for bit in (0, 1):
        for _ in range(10):
            assert rand5_decode(rand5_encode(bit, rng)) == bit
    assert rand5_decode([1, 1, 1, 1, 1]) == ERASURE
    with pytest.raises(ConfigError):
        rand5_decode([0, 0, 0])


def test_rand5_erasure_floor():
    table = rand5_erasure_table()
    assert len(table) == 62
    assert min(row["erasure_probability"] for row in table) >= Fraction(1, 3)


def test_rand5_channel_never_flips_a_single_error_into_the_other_bit():
    ch = Rand5Channel(NoisePattern((1,)), np.random.default_rng(4))
    got = ch.transmit_many([0, 0], 1)
    assert got[0] in (0, ERASURE)
    assert got[1] == 0
    assert ch.max_index == 10


def test_lift_to_uf_noiseless(robust):
    result = lift_to_uf(robust, X, Y, NO_NOISE, np.random.default_rng(0))
    assert result.success
    assert result.wire_bits == 5 * result.comm_bits == 30 * robust.length
