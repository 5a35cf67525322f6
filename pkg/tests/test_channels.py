import numpy as np
import pytest

from intercode_lab.adversary import (
    erasure_only,
    flip_free,
    make_pattern,
    parity_targeting,
    per_iteration,
    prefix_burst,
    uniform,
)
from intercode_lab.channels import (
    ERASE,
    ERASURE,
    FLIP,
    NO_NOISE,
    PASS,
    MUPEFChannel,
    MUPEFParams,
    NoisePattern,
    UFChannel,
    UPEFChannel,
    UPEFSchedule,
    schedule_sum_bound,
    schedule_tail_sum,
    symbol_name,
    transmit_mupef,
    transmit_uf,
    transmit_upef,
)
from intercode_lab.errors import ConfigError


def test_pattern_normalises_rounds():
    e = NoisePattern((5, 2, 2, 9))
    assert e.corrupted_rounds == (2, 5, 9)
    assert e.budget_T == 3
    assert 5 in e and 3 not in e
    assert list(e.between(2, 9)) == [2, 5]
    assert e.count_between(1, 100) == 3


def test_pattern_rejects_zero_index():
    with pytest.raises(ConfigError):
        NoisePattern((0, 3))
    with pytest.raises(ConfigError):
        NoisePattern((1,), {1: "smudge"})


def test_pattern_file_round_trip(tmp_path):
    e = NoisePattern((3, 7), {7: ERASE}, horizon=20)
    path = tmp_path / "pattern.json"
    e.save(path)
    loaded = NoisePattern.load(path)
    assert loaded == e
    assert loaded.choice_at(7) == ERASE
    assert loaded.choice_at(3) == FLIP


def test_pattern_budget_mismatch():
    with pytest.raises(ConfigError) as info:
        NoisePattern.from_json({"T": 3, "rounds": [1, 2]})
    assert info.value.field == "T"


def test_uf_flips_exactly_on_pattern():
    e = NoisePattern((2, 4))
    assert [transmit_uf(1, i, e) for i in range(1, 6)] == [1, 0, 1, 0, 1]
    with pytest.raises(ConfigError):
        transmit_uf(1, 0, e)


def test_upef_schedule_values():
    s = UPEFSchedule(100, 1 / 297)
    assert s.p(1) == pytest.approx(100 / 297)
    assert s.p(10) == pytest.approx(1 / 297)
    assert UPEFSchedule(1000, 1).p(3) == 0.5
    assert np.allclose(s.p_array([1, 10]), [100 / 297, 1 / 297])


@pytest.mark.parametrize("N", [64, 256, 1024])
def test_schedule_sum_is_small(N):
    s = UPEFSchedule(N)
    total = schedule_tail_sum(s, 50 * N)
    assert total <= schedule_sum_bound(s)
    assert total < N / 99


def test_upef_never_passes_a_corrupted_bit():
    rng = np.random.default_rng(0)
    e = NoisePattern(tuple(range(1, 201)))
    s = UPEFSchedule(10)
    received = [transmit_upef(1, i, e, s, rng) for i in range(1, 201)]
    assert set(received) <= {0, ERASURE}
    assert received.count(0) < 60


def test_upef_flip_fraction_at_one_half():
    rng = np.random.default_rng(7)
    e = NoisePattern((3,))
    s = UPEFSchedule(1000, 1)
    received = np.array([transmit_upef(1, 3, e, s, rng) for _ in range(100_000)])
    assert set(np.unique(received)) <= {0, ERASURE}
    assert abs(np.mean(received == 0) - 0.5) < 0.02


def test_mupef_erasure_rate():
    rng = np.random.default_rng(1)
    e = NoisePattern(tuple(range(1, 3001)))
    received = [transmit_mupef(0, i, e, PASS, rng) for i in range(1, 3001)]
    rate = received.count(ERASURE) / 3000
    assert abs(rate - 1 / 3) < 0.04
    assert set(received) <= {0, ERASURE}


def test_mupef_params_must_sum_to_one():
    with pytest.raises(ConfigError):
        MUPEFParams(0.5, 0.3)


def test_transmit_many_matches_transmit():
    e = NoisePattern((2, 3, 7, 11))
    s = UPEFSchedule(8, 0.1)
    bits = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1])
    one = UPEFChannel(e, s, np.random.default_rng(5))
    many = UPEFChannel(e, s, np.random.default_rng(5))
    singles = [one.transmit(int(b), i) for i, b in enumerate(bits, start=1)]
    assert list(many.transmit_many(bits, 1)) == singles
    assert many.max_index == 10


def test_silence_is_noisy_zeros():
    ch = UFChannel(NoisePattern((4,), horizon=5))
    assert list(ch.transmit_silence(3, 3)) == [0, 1, 0]
    assert not ch.beyond_horizon
    ch.transmit(1, 6)
    assert ch.beyond_horizon


def test_mupef_channel_uses_pattern_choices():
    e = NoisePattern((1, 2), {1: FLIP, 2: PASS})
    ch = MUPEFChannel(e, np.random.default_rng(3), MUPEFParams(1.0, 0.0))
    assert list(ch.transmit_many([1, 1, 1], 1)) == [0, 1, 1]


def test_no_noise_is_identity():
    ch = UFChannel(NO_NOISE)
    assert list(ch.transmit_many([1, 0, 1], 1)) == [1, 0, 1]


def test_symbol_names():
    assert symbol_name(ERASURE) == "⊥"
    assert symbol_name(1) == "1"


# =======================================================
# Pattern generators
# =======================================================

def test_uniform_places_T_distinct_rounds():
    e = uniform(20, 100, np.random.default_rng(0))
    assert e.budget_T == 20
    assert 1 <= min(e.corrupted_rounds) and max(e.corrupted_rounds) <= 100
    with pytest.raises(ConfigError):
        uniform(5, 4, np.random.default_rng(0))


def test_prefix_burst():
    assert prefix_burst(3).corrupted_rounds == (1, 2, 3)
    assert prefix_burst(2, start=5).corrupted_rounds == (5, 6)


def test_per_iteration_fills_windows():
    e = per_iteration(5, None, np.random.default_rng(2), block=4, budget=2)
    assert e.budget_T == 5
    windows = [(r - 1) // 4 for r in e.corrupted_rounds]
    assert windows.count(0) == 2 and windows.count(1) == 2 and windows.count(2) == 1


def test_parity_targeting_positions():
    assert parity_targeting(3, k=2).corrupted_rounds == (4, 8, 12)
    assert parity_targeting(4, k=3, side="both").corrupted_rounds == (3, 6, 9, 12)
    with pytest.raises(ConfigError):
        parity_targeting(1, k=1)


def test_erasure_only_has_no_flips():
    e = erasure_only(10, 50, np.random.default_rng(4))
    assert flip_free(e)
    assert not flip_free(uniform(10, 50, np.random.default_rng(4)))


def test_make_pattern_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        make_pattern("zigzag", 1, 10, rng)
    with pytest.raises(ConfigError):
        make_pattern("prefix_burst", 1, 10, rng, width=3)
    assert make_pattern("prefix_burst", 2, 10, rng).corrupted_rounds == (1, 2)
