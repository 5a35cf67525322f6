import json

import pandas as pd
import pytest

from intercode_lab.config import ExperimentConfig, config_from_dict, load_config, parse_int_list
from intercode_lab.errors import ConfigError
from intercode_lab.harness import (
    assertion_failures,
    compare_compiled,
    comparison_failures,
    deterministic_seed,
    fit_communication,
    paired_verdict,
    protocol_descriptor,
    robust_from_descriptor,
    run_experiment,
    run_trial,
    summarize,
    trial_seed,
    write_outputs,
)


def small(tmp_path, **overrides):
    values = {"N": 8, "trials": 3, "out": str(tmp_path / "out")}
    values.update(overrides)
    return ExperimentConfig(**values)


# =======================================================
# Configuration
# =======================================================

def test_config_from_dict():
    cfg = config_from_dict({"scheme": "iter", "N": 16, "T_values": [0, 4], "C": 0})
    assert cfg.scheme == "iter" and cfg.N == 16 and cfg.T_values == [0, 4]
    assert cfg.C == 0.0


@pytest.mark.parametrize("raw,field", [
    ({"colour": "red"}, "colour"),
    ({"N": "16"}, "N"),
    ({"scheme": "bogus"}, "scheme"),
    ({"adversary": "zigzag"}, "adversary"),
    ({"T_values": [0, 10], "horizon": 5}, "horizon"),
    ({"scheme": "iter", "alphabet": 3}, "alphabet"),
    ({"xlsx": "yes"}, "xlsx"),
    ({"scheme": "uf_compiled", "adversary": "erasure_only"}, "adversary"),
    ({"scheme": "iter_uf", "adversary": "erasure_only"}, "adversary"),
])
def test_config_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.field == field


def test_load_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"trials": 7, "T_values": [0, 2]}), encoding="utf-8")
    cfg = load_config(path)
    assert cfg.trials == 7 and cfg.T_values == [0, 2]

    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_parse_int_list():
    assert parse_int_list("0, 64,256") == [0, 64, 256]
    with pytest.raises(ConfigError):
        parse_int_list("0,x")


# =======================================================
# Trials
# =======================================================

def test_seeds_are_stable():
    assert deterministic_seed(0, 32, 0, 1) == deterministic_seed(0, 32, 0, 1)
    assert deterministic_seed(0, 32, 0, 1) != deterministic_seed(0, 32, 0, 2)
    assert 0 <= trial_seed(5, 32, 4, 9) < 2 ** 31


def test_descriptor_rebuilds_the_same_protocol(tmp_path):
    cfg = small(tmp_path)
    desc = protocol_descriptor(cfg, 8, 123)
    a, b = robust_from_descriptor(desc), robust_from_descriptor(dict(desc))
    assert a.length_Nprime == b.length_Nprime == 24
    x = b"\x01\x02"
    assert [a.emit(x, [0] * j) for j in range(6)] == [b.emit(x, [0] * j) for j in range(6)]
    with pytest.raises(ConfigError):
        robust_from_descriptor({"kind": "random"})


@pytest.mark.parametrize("scheme", ["cr", "iter", "iter_uf", "uf_compiled"])
def test_noiseless_trial(tmp_path, scheme):
    row = run_trial(small(tmp_path, scheme=scheme), 8, 0, 0)
    assert not row["crashed"], row["error"]
    assert row["success"]
    assert row["comm_bits"] > 0
    assert row["lemma_violations"] == 0
    assert not row["bound_violation"]


def test_schemes_share_trial_seeds(tmp_path):
    cr = run_trial(small(tmp_path, scheme="cr"), 8, 2, 4)
    it = run_trial(small(tmp_path, scheme="iter"), 8, 2, 4)
    assert cr["seed"] == it["seed"] == trial_seed(0, 8, 2, 4)


def test_noisy_cr_trial_passes_structural_checks(tmp_path):
    row = run_trial(small(tmp_path, T_values=[3]), 8, 3, 1)
    assert not row["crashed"], row["error"]
    assert row["lemma_violations"] == 0
    assert row["f"] + row["d"] <= 3


def test_erasure_only_trials_succeed(tmp_path):
    cfg = small(tmp_path, adversary="erasure_only", T_values=[4])
    for index in range(3):
        row = run_trial(cfg, 8, 4, index)
        assert row["success"]
        assert row["f"] == 0
        assert row["reduction_violations"] == 0


def test_crash_is_recorded_not_raised(tmp_path):
    cfg = small(tmp_path, adversary="per_iteration", params={"block": 0})
    row = run_trial(cfg, 8, 2, 0)
    assert row["crashed"]
    assert not row["success"]
    assert row["error"].startswith("ConfigError")


def test_run_experiment_orders_rows(tmp_path):
    messages = []
    cfg = small(tmp_path, T_values=[0, 2], workers=2)
    df = run_experiment(cfg, messages.append)
    assert list(df["T"]) == [0, 0, 0, 2, 2, 2]
    assert list(df["index"]) == [0, 1, 2, 0, 1, 2]
    assert messages and all(m.endswith("\n") for m in messages)

    again = run_experiment(cfg, lambda message: None)
    pd.testing.assert_frame_equal(df, again)


def test_worker_count_does_not_change_results(tmp_path):
    one = run_experiment(small(tmp_path, T_values=[2], trials=4, workers=1), lambda message: None)
    four = run_experiment(small(tmp_path, T_values=[2], trials=4, workers=4), lambda message: None)
    pd.testing.assert_frame_equal(one, four)


def test_summary_and_outputs(tmp_path):
    cfg = small(tmp_path, T_values=[0, 2], adversary="erasure_only", xlsx=True)
    df = run_experiment(cfg, lambda message: None)
    summary = summarize(df)
    assert list(summary["T"]) == [0, 2]
    assert list(summary["trials"]) == [3, 3]
    assert summary.loc[0, "success_rate"] == 1.0
    assert assertion_failures(summary) == []

    fit = fit_communication(df, cfg.slope_bound)
    messages = []
    written = write_outputs(cfg, df, summary, messages.append, fit)
    assert set(written) == {"trials", "summary", "fit", "xlsx"}
    assert len(messages) == 4

    with open(written["trials"], encoding="utf-8") as f:
        lines = [json.loads(line) for line in f]
    assert lines[0]["type"] == "config" and lines[0]["N"] == 8
    assert [line["type"] for line in lines[1:]] == ["trial"] * 6
    assert pd.read_csv(written["summary"]).shape[0] == 2
    assert pd.ExcelFile(written["xlsx"]).sheet_names == ["Config", "Trials", "Summary", "Fit"]


def test_fit_communication():
    df = pd.DataFrame({
        "T": [0, 0, 10, 10],
        "N": [10] * 4,
        "comm_bits": [100, 100, 300, 300],
        "crashed": [False] * 4,
        "bound_violation": [False] * 4,
    })
    fit = fit_communication(df, 18000)
    assert fit["b"] == pytest.approx(20)
    assert fit["a"] == pytest.approx(10)
    assert fit["verdict"] == "PASS"
    assert fit_communication(df, 5)["verdict"] == "FAIL"
    assert fit_communication(df[df["T"] == 0], 18000)["verdict"] == "REPORT"


def test_assertion_failures_flag_crashes():
    summary = pd.DataFrame([{
        "scheme": "cr", "N": 8, "T": 2, "trials": 3, "success_rate": 0.0, "mean_comm": 0.0,
        "max_comm": 0, "lemma_violations": 0, "reduction_violations": 0,
        "bob_before_alice": 0, "crashed": 3, "bound_violations": 0,
    }])
    failures = assertion_failures(summary)
    assert failures == ["cr N=8 T=2: 3 crashed trials"]


# =======================================================
# Compiler comparison
# =======================================================

def test_paired_compiler_comparison(tmp_path):
    cfg = small(tmp_path, trials=6, T_values=[3])
    messages = []
    df = compare_compiled(cfg, 8, 3, messages.append)
    assert list(df["index"]) == list(range(6))
    assert not df["crashed"].any()
    assert (df["seed"] == [trial_seed(0, 8, 3, i) for i in range(6)]).all()

    verdict = paired_verdict(df)
    assert verdict["verdict"] == "PASS"
    assert verdict["lemma_violations"] == 0
    assert verdict["reduction_violations"] == 0
    assert comparison_failures(verdict, 8) == []
    assert messages == ["Paired cell N=8 T=3: 6 trials\n"]


def test_comparison_rejects_erasure_choices(tmp_path):
    with pytest.raises(ConfigError):
        compare_compiled(small(tmp_path, adversary="erasure_only"), 8, 2, lambda message: None)


def test_paired_verdict():
    clean = {"crashed": False, "bob_before_alice": False, "lemma_violations": 0, "reduction_violations": 0}
    same = pd.DataFrame([{**clean, "bare_success": True, "compiled_success": True}] * 10)
    assert paired_verdict(same)["verdict"] == "PASS"

    one_off = pd.DataFrame([{**clean, "bare_success": True, "compiled_success": i > 0} for i in range(10)])
    assert paired_verdict(one_off)["verdict"] == "PASS"

    apart = pd.DataFrame([{**clean, "bare_success": True, "compiled_success": False}] * 10)
    verdict = paired_verdict(apart)
    assert verdict["verdict"] == "FAIL"
    assert verdict["diff"] == -1.0
    assert comparison_failures(verdict, 8)[0].startswith("success rates differ")

    crashed = pd.DataFrame([{**clean, "crashed": True, "bare_success": False, "compiled_success": False}])
    verdict = paired_verdict(crashed)
    assert verdict["verdict"] == "FAIL"
    assert comparison_failures(verdict, 8) == ["no completed paired trials", "1 crashed paired trials"]
