"""
Seeded Monte Carlo experiments: one trial per (N, T, index), results collected
into a DataFrame, aggregated per cell and written as JSONL / CSV / XLSX.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from itertools import repeat
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from .adversary import make_pattern
from .amd_uf import compile_uf
from .channels import UPEFSchedule
from .config import ExperimentConfig
from .errors import ConfigError
from .proto_core import make_random_protocol, toy_indel_robust, toy_subst_resilient
from .scheme_cr import bits_per_direction, run_cr, save_trace
from .scheme_iter import communication_bound, lift_to_uf, run_iter
from .trace_lab import analyze

logger = logging.getLogger(__name__)

INPUT_BYTES = 8
PROTOCOL_SEED_SALT = "protocol"


def deterministic_seed(*parts: object) -> int:
    key = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]
    return int(digest, 16) & 0x7FFFFFFF


def trial_seed(master_seed: int, N: int, T: int, index: int) -> int:
    # no scheme in the key: schemes compared on one cell see the same draws
    return deterministic_seed(master_seed, N, T, index)


# =======================================================
# Protocol descriptors
# =======================================================

def protocol_descriptor(config: ExperimentConfig, N: int, seed: int) -> dict:
    return {
        "kind": "random",
        "seed": deterministic_seed(PROTOCOL_SEED_SALT, seed),
        "n": N,
        "alphabet": config.alphabet,
        "order": config.order,
        "repetition": config.repetition,
        "wrapper": "subst" if config.scheme in ("iter", "iter_uf") else "indel",
    }


def robust_from_descriptor(desc: dict):
    try:
        p = make_random_protocol(int(desc["seed"]), int(desc["n"]), int(desc["alphabet"]), desc["order"])
        if desc.get("wrapper", "indel") == "subst":
            return toy_subst_resilient(p, int(desc["repetition"]))
        return toy_indel_robust(p, int(desc["repetition"]))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError("protocol", f"bad protocol descriptor {desc!r}: {e}") from e


def _adversary_params(config: ExperimentConfig, k: int, block: int) -> dict:
    params = dict(config.params)
    if config.adversary == "per_iteration":
        params.setdefault("block", block)
    elif config.adversary == "parity_targeting":
        params.setdefault("k", k)
    return params


# =======================================================
# Trials
# =======================================================

def _empty_row(config: ExperimentConfig, N: int, T: int, index: int, seed: int) -> dict:
    return {
        "index": index,
        "seed": seed,
        "scheme": config.scheme,
        "N": N,
        "T": T,
        "comm_bits": 0,
        "success": False,
        "alice_ok": False,
        "bob_ok": False,
        "alice_term": None,
        "bob_term": None,
        "bob_before_alice": False,
        "f": 0,
        "d": 0,
        "iterations": 0,
        "lemma_violations": 0,
        "reduction_violations": 0,
        "bound_violation": False,
        "crashed": False,
        "error": None,
    }


def _trace_row(row: dict, trace, comm_bits: int, robust, config: ExperimentConfig) -> None:
    analysis = analyze(trace, robust)
    row.update(
        comm_bits=int(comm_bits),
        success=trace.success,
        alice_ok=trace.alice_ok,
        bob_ok=trace.bob_ok,
        alice_term=trace.alice_last_iteration,
        bob_term=trace.bob_terminated_iteration,
        bob_before_alice=trace.bob_before_alice,
        f=trace.f,
        d=trace.d,
        iterations=len(trace.iterations),
        lemma_violations=analysis.lemma_violations,
        reduction_violations=analysis.reduction_violations,
    )
    if analysis.lemma_violations or analysis.reduction_violations or trace.bob_before_alice:
        folder = os.path.join(config.out, "traces")
        os.makedirs(folder, exist_ok=True)
        path = os.path.join(folder, f"{config.scheme}_N{row['N']}_T{row['T']}_{row['index']}.jsonl")
        save_trace(trace, path)
        logger.warning(f"trial {row['index']} (T={row['T']}) flagged; trace saved to {path}")


def run_trial(config: ExperimentConfig, N: int, T: int, index: int) -> dict:
    """One seeded trial. Any exception is recorded in the row instead of propagating."""
    seed = trial_seed(config.master_seed, N, T, index)
    row = _empty_row(config, N, T, index, seed)
    try:
        rng = np.random.default_rng(seed)
        desc = protocol_descriptor(config, N, seed)
        robust = robust_from_descriptor(desc)
        x, y = rng.bytes(INPUT_BYTES), rng.bytes(INPUT_BYTES)

        if config.scheme in ("cr", "uf_compiled"):
            k = bits_per_direction(robust.alphabet_Sigma_prime)
            n_prime = robust.length_Nprime
            C = 0.0 if config.adversary == "erasure_only" else config.C
            schedule = UPEFSchedule(n_prime, C)
            params = _adversary_params(config, k, 2 * k)
            if config.scheme == "cr":
                horizon = config.horizon or max(T, k * (n_prime + 2 * T))
                pattern = make_pattern(config.adversary, T, horizon, rng, **params)
                trace = run_cr(robust, x, y, pattern, schedule, rng, protocol=desc)
                _trace_row(row, trace, trace.communication_bits, robust, config)
            else:
                compiled = compile_uf(schedule, relaxed=config.relaxed_termination)
                horizon = config.horizon or max(T, compiled.wire_bits(k * (n_prime + 2 * T)))
                pattern = make_pattern(config.adversary, T, horizon, rng, **params)
                run = compiled.run(robust, x, y, pattern, rng, protocol=desc)
                _trace_row(row, run.trace, run.wire_bits, robust, config)
        else:
            base = robust.length
            horizon = config.horizon or max(T, 4 * base + 8 * T)
            if config.scheme == "iter_uf":
                horizon = config.horizon or 5 * horizon
            pattern = make_pattern(config.adversary, T, horizon, rng, **_adversary_params(config, 2, 2 * base))
            if config.scheme == "iter":
                result = run_iter(robust, x, y, pattern, rng)
            else:
                result = lift_to_uf(robust, x, y, pattern, rng)
            row.update(
                comm_bits=result.wire_bits,
                success=result.success,
                alice_ok=result.alice_ok,
                bob_ok=result.bob_ok,
                alice_term=result.terminated_i_A,
                bob_term=result.terminated_i_B,
                bob_before_alice=result.bob_before_alice,
                iterations=len(result.outcomes),
                bound_violation=result.comm_bits > communication_bound(base, T),
            )
    except Exception as e:
        logger.error(f"trial {index} (N={N}, T={T}) crashed: {type(e).__name__}: {e}")
        row.update(crashed=True, success=False, error=f"{type(e).__name__}: {e}")
    return row


def run_experiment(config: ExperimentConfig, output_func: Callable[[str], None]) -> pd.DataFrame:
    """All trials of every T cell; rows sorted by (T, index) whatever the completion order."""
    results_list: List[dict] = []
    for T in config.T_values:
        output_func(f"Cell scheme={config.scheme} N={config.N} T={T}: {config.trials} trials\n")
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(run_trial, config, config.N, T, index) for index in range(config.trials)]
            step = max(1, config.trials // 10)
            for done, future in enumerate(as_completed(futures), start=1):
                row = future.result()
                results_list.append(row)
                if row["crashed"]:
                    output_func(f"  trial {row['index']} crashed: {row['error']}\n")
                if done % step == 0 or done == config.trials:
                    output_func(f"  {done}/{config.trials} trials done\n")

    df = pd.DataFrame(results_list)
    return df.sort_values(["T", "index"], kind="mergesort").reset_index(drop=True)


# =======================================================
# Aggregation
# =======================================================

def summarize(df: pd.DataFrame) -> pd.DataFrame:
    grouped = df.groupby(["scheme", "N", "T"], sort=True)
    summary = grouped.agg(
        trials=("index", "count"),
        success_rate=("success", "mean"),
        mean_comm=("comm_bits", "mean"),
        max_comm=("comm_bits", "max"),
        lemma_violations=("lemma_violations", "sum"),
        reduction_violations=("reduction_violations", "sum"),
        bob_before_alice=("bob_before_alice", "sum"),
        crashed=("crashed", "sum"),
        bound_violations=("bound_violation", "sum"),
    )
    return summary.reset_index()


def fit_communication(df: pd.DataFrame, slope_bound: float) -> dict:
    """Least-squares comm = a·N + b·T over the completed trials."""
    ok = df[~df["crashed"]]
    fit = {"a": None, "b": None, "slope_bound": slope_bound, "trials": int(len(ok)),
           "bound_violations": int(df["bound_violation"].sum()), "verdict": "REPORT"}
    if ok["T"].nunique() < 2:
        return fit
    b, intercept = np.polyfit(ok["T"].to_numpy(dtype=float), ok["comm_bits"].to_numpy(dtype=float), 1)
    fit["a"] = float(intercept / ok["N"].iloc[0])
    fit["b"] = float(b)
    fit["verdict"] = "PASS" if b <= slope_bound and fit["bound_violations"] == 0 else "FAIL"
    return fit


def assertion_failures(summary: pd.DataFrame, fit: Optional[dict] = None) -> List[str]:
    failures = []
    for row in summary.itertuples(index=False):
        cell = f"{row.scheme} N={row.N} T={row.T}"
        if row.lemma_violations:
            failures.append(f"{cell}: {row.lemma_violations} structural check violations")
        if row.reduction_violations:
            failures.append(f"{cell}: {row.reduction_violations} reduction violations")
        if row.crashed:
            failures.append(f"{cell}: {row.crashed} crashed trials")
        if row.bound_violations:
            failures.append(f"{cell}: {row.bound_violations} runs above the communication bound")
        if row.bob_before_alice and row.N >= 64:
            failures.append(f"{cell}: Bob terminated before Alice in {row.bob_before_alice} trials")
    if fit is not None and fit.get("verdict") == "FAIL":
        failures.append(f"fitted slope {fit['b']:.1f} exceeds {fit['slope_bound']}")
    return failures


# =======================================================
# Compiler comparison
# =======================================================

def _paired_trial(config: ExperimentConfig, N: int, T: int, index: int) -> dict:
    seed = trial_seed(config.master_seed, N, T, index)
    row = {"index": index, "seed": seed, "N": N, "T": T,
           "bare_success": False, "compiled_success": False, "bare_comm": 0, "compiled_wire_bits": 0,
           "bob_before_alice": False, "lemma_violations": 0, "reduction_violations": 0,
           "crashed": False, "error": None}
    try:
        rng = np.random.default_rng(seed)
        desc = {**protocol_descriptor(config, N, seed), "wrapper": "indel"}
        robust = robust_from_descriptor(desc)
        x, y = rng.bytes(INPUT_BYTES), rng.bytes(INPUT_BYTES)
        k = bits_per_direction(robust.alphabet_Sigma_prime)
        n_prime = robust.length_Nprime
        schedule = UPEFSchedule(n_prime, config.C)
        compiled = compile_uf(schedule, relaxed=config.relaxed_termination)

        horizon = config.horizon or max(T, k * (n_prime + 2 * T))
        pattern = make_pattern(config.adversary, T, horizon, rng, **_adversary_params(config, k, 2 * k))
        wire = compiled.wire_pattern(pattern, rng)

        bare = run_cr(robust, x, y, pattern, schedule, np.random.default_rng(deterministic_seed(seed, "bare")),
                      protocol=desc)
        run = compiled.run(robust, x, y, wire, np.random.default_rng(deterministic_seed(seed, "compiled")),
                           protocol=desc)
        analysis = analyze(run.trace, robust)
        row.update(
            bare_success=bare.success,
            compiled_success=run.success,
            bare_comm=int(bare.communication_bits),
            compiled_wire_bits=int(run.wire_bits),
            bob_before_alice=run.bob_before_alice,
            lemma_violations=analysis.lemma_violations,
            reduction_violations=analysis.reduction_violations,
        )
    except Exception as e:
        logger.error(f"paired trial {index} (N={N}, T={T}) crashed: {type(e).__name__}: {e}")
        row.update(crashed=True, error=f"{type(e).__name__}: {e}")
    return row


def compare_compiled(config: ExperimentConfig, N: int, T: int, output_func: Callable[[str], None]) -> pd.DataFrame:
    """
    Paired runs on one inner pattern E per trial: the bare challenge-response run
    over the UPEF channel, and the compiled run over UF where every round of E
    takes one wire flip inside its AMD codeword.
    """
    if config.adversary == "erasure_only":
        raise ConfigError("adversary", "erasure choices do not carry over to the UF wire")
    output_func(f"Paired cell N={N} T={T}: {config.trials} trials\n")
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        rows = list(pool.map(_paired_trial, repeat(config), repeat(N), repeat(T), range(config.trials)))
    for row in rows:
        if row["crashed"]:
            output_func(f"  trial {row['index']} crashed: {row['error']}\n")
    return pd.DataFrame(rows)


def paired_verdict(df: pd.DataFrame) -> dict:
    """Success rates of the two arms must differ by at most 3 binomial standard errors."""
    ok = df[~df["crashed"]]
    n = len(ok)
    verdict = {"trials": n, "crashed": int(df["crashed"].sum()), "bare_rate": None, "compiled_rate": None,
               "diff": None, "sigma": None, "verdict": "FAIL",
               "bob_before_alice": int(ok["bob_before_alice"].sum()),
               "lemma_violations": int(ok["lemma_violations"].sum()),
               "reduction_violations": int(ok["reduction_violations"].sum())}
    if n == 0:
        return verdict
    p_bare = float(ok["bare_success"].mean())
    p_comp = float(ok["compiled_success"].mean())
    sigma = float(np.sqrt((p_bare * (1 - p_bare) + p_comp * (1 - p_comp)) / n))
    diff = p_comp - p_bare
    verdict.update(bare_rate=p_bare, compiled_rate=p_comp, diff=diff, sigma=sigma,
                   verdict="PASS" if abs(diff) <= 3 * sigma else "FAIL")
    return verdict


def comparison_failures(verdict: dict, N: int) -> List[str]:
    failures = []
    if verdict["verdict"] == "FAIL":
        if verdict["diff"] is None:
            failures.append("no completed paired trials")
        else:
            failures.append(f"success rates differ by {verdict['diff']:+.3f}, beyond 3σ = {3 * verdict['sigma']:.3f}")
    if verdict["crashed"]:
        failures.append(f"{verdict['crashed']} crashed paired trials")
    if verdict["lemma_violations"]:
        failures.append(f"{verdict['lemma_violations']} structural check violations in compiled traces")
    if verdict["reduction_violations"]:
        failures.append(f"{verdict['reduction_violations']} reduction violations in compiled traces")
    if verdict["bob_before_alice"] and N >= 64:
        failures.append(f"Bob terminated before Alice in {verdict['bob_before_alice']} compiled runs")
    return failures


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def _clean(value):
    if isinstance(value, float) and np.isnan(value):
        return None
    return value


def write_outputs(config: ExperimentConfig, df: pd.DataFrame, summary: pd.DataFrame,
                  output_func: Callable[[str], None], fit: Optional[dict] = None) -> Dict[str, str]:
    os.makedirs(config.out, exist_ok=True)
    written = {}

    path = os.path.join(config.out, "trials.jsonl")
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"type": "config", **config.to_dict()}, sort_keys=True, default=_json_default) + "\n")
        for record in df.to_dict(orient="records"):
            record = {k: _clean(v) for k, v in record.items()}
            f.write(json.dumps({"type": "trial", **record}, sort_keys=True, default=_json_default) + "\n")
    written["trials"] = path

    path = os.path.join(config.out, "summary.csv")
    summary.to_csv(path, index=False)
    written["summary"] = path

    if fit is not None:
        path = os.path.join(config.out, "fit.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(fit, f, indent=2, sort_keys=True, default=_json_default)
        written["fit"] = path

    if config.xlsx:
        path = os.path.join(config.out, "summary.xlsx")
        config_sheet = pd.DataFrame(
            [{"key": k, "value": json.dumps(v)} for k, v in config.to_dict().items()]
        )
        with pd.ExcelWriter(path, engine="openpyxl") as writer:
            config_sheet.to_excel(writer, sheet_name="Config", index=False)
            df.to_excel(writer, sheet_name="Trials", index=False)
            summary.to_excel(writer, sheet_name="Summary", index=False)
            pd.DataFrame([fit or {}]).to_excel(writer, sheet_name="Fit", index=False)
        written["xlsx"] = path

    for name, path in written.items():
        output_func(f"Data saved to {path}\n")
    return written
