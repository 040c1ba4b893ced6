"""Acceptance checks for the full toolkit.

Each test prints one line, "PASS #n ..." or "FAIL #n ...", with the measured
value next to its pinned tolerance.  Run ``python3 tests/test_acceptance.py``
for the lines alone, or ``pytest tests/test_acceptance.py -s`` to see them
among the pytest results.

ACCEPTANCE_RESAMPLES=25 selects the short bias study with its wider band.
"""
import functools
import os
import sys
import warnings

import numpy as np
import pytest

from iontomo import core, detect, motion, tomo
from iontomo.boot import BootstrapConfig, bias_study
from iontomo.circuit import build_u_sequence, ideal_unitary_of
from iontomo.detect import CountResponse, ExactData
from iontomo.noise import NoiseModel
from iontomo.pipeline import Sequences, fidelity_report, reconstruct_pair, simulate_pair, single_qubit_fidelities
from iontomo.tomo import LikelihoodModel, MleOptions

SHOTS = 350
N_RUNS = 10
N_RESAMPLES = int(os.environ.get("ACCEPTANCE_RESAMPLES", "100"))
BIAS_BAND = (0.984, 0.994) if N_RESAMPLES >= 100 else (0.980, 0.996)

E_IDEAL = core.unitary_to_process(core.ideal_u())
SEQS = Sequences.build()
RESP = CountResponse()
LM = LikelihoodModel(RESP)
OPTS = MleOptions()

# every maximum-likelihood history produced here, for the monotonicity check
HISTORIES = []
_maximize = tomo.maximize


def _recording_maximize(like, opts=MleOptions(), start=None):
    r = _maximize(like, opts, start)
    HISTORIES.append(r.history)
    return r


tomo.maximize = _recording_maximize


def report(n, ok, text):
    print(f"{'PASS' if ok else 'FAIL'} #{n:<2} {text}", flush=True)
    return ok


def in_band(x, lo, hi):
    return lo <= x <= hi


def noiseless_fidelity(shots, seed):
    data = detect.simulate_dataset(E_IDEAL, None, RESP, shots, seed=seed)
    return core.entanglement_fidelity(tomo.reconstruct(data, LM, OPTS), E_IDEAL)


@functools.cache
def calibrated_runs():
    runs = []
    for seed in range(N_RUNS):
        d_u, d_uu = simulate_pair(SEQS, NoiseModel.calibrated(), RESP, SHOTS, seed)
        r_u, r_uu = reconstruct_pair(d_u, d_uu, LM, OPTS)
        runs.append((r_u, fidelity_report(r_u.process, r_uu.process, SEQS)))
    return runs


def criterion_1():
    u = core.ideal_u()
    resid = core.unitarity_residual(u)
    overlap = abs(np.trace(u.conj().T @ ideal_unitary_of(build_u_sequence()))) / 4
    ok = resid < 1e-14 and overlap > 1 - 1e-12
    return report(1, ok, f"unitarity residual {resid:.1e} < 1e-14; |Tr|/4 = 1 - {1 - overlap:.1e} > 1 - 1e-12")


def criterion_2():
    rng = np.random.default_rng(2)
    err = 0.0
    for _ in range(50):
        e = core.random_kraus_channel(rng)
        f = core.entanglement_fidelity(e, E_IDEAL)
        fbar = core.mean_state_fidelity(e, E_IDEAL)
        err = max(err, abs(fbar - (4 * f + 1) / 5))
    return report(2, err < 1e-9, f"max |fbar - (4F+1)/5| over 50 random channels = {err:.2e} < 1e-9")


def criterion_3():
    data = ExactData.from_process(E_IDEAL)
    r = tomo.reconstruct_full(data, LM, OPTS)
    f = core.entanglement_fidelity(r.process, E_IDEAL)
    lin = np.max(np.abs(tomo.linear_inversion(data, LM).process - E_IDEAL))
    ok = f > 1 - 1e-6 and lin < 1e-8
    return report(3, ok, f"exact-data F = 1 - {1 - f:.1e} > 1 - 1e-6; linear inversion error {lin:.1e} < 1e-8")


def criterion_4():
    med350 = np.median([noiseless_fidelity(350, 100 + s) for s in range(20)])
    medians = [np.median([noiseless_fidelity(n, 200 + s) for s in range(10)]) for n in (100, 350, 2000)]
    ok = med350 >= 0.98 and medians[0] < medians[1] < medians[2]
    trend = " < ".join(f"{m:.4f}" for m in medians)
    return report(4, ok, f"median F at 350 shots = {med350:.4f} >= 0.98; medians over 100/350/2000 shots {trend}")


def criterion_5():
    vals = {k: np.mean([rep[k] for _, rep in calibrated_runs()]) for k in ("F_U", "fbar_U", "F_U2")}
    bands = {"F_U": (0.907, 0.937), "fbar_U": (0.928, 0.952), "F_U2": (0.833, 0.873)}
    ok = all(in_band(vals[k], *bands[k]) for k in bands)
    text = "; ".join(f"{k} = {vals[k]:.4f} in [{lo}, {hi}]" for k, (lo, hi) in bands.items())
    return report(5, ok, f"means over {N_RUNS} runs: {text}")


def criterion_6():
    ratio = np.mean([rep["F_U2_over_F_UU"] for _, rep in calibrated_runs()])
    return report(6, abs(ratio - 1) <= 0.02, f"mean F_U2 / F_UU over {N_RUNS} runs = {ratio:.4f}, 1.00 +- 0.02")


def criterion_7():
    r_u = calibrated_runs()[0][0]
    out = bias_study(r_u.process, RESP, BootstrapConfig(n_resamples=N_RESAMPLES, shots=SHOTS, seed=7), LM, OPTS)
    mean = out["fidelity"]["mean"]
    exact = bias_study(r_u.process, RESP, BootstrapConfig(n_resamples=2, shots=None, seed=7), LM, OPTS)
    exact_mean = exact["fidelity"]["mean"]
    ok = (in_band(mean, *BIAS_BAND) and max(out["fidelity"]["samples"]) < 1 and out["sign_test_p"] < 0.01
          and abs(exact_mean - 1) < 1e-6)
    return report(7, ok, f"{N_RESAMPLES} resamples: mean = {mean:.4f} in [{BIAS_BAND[0]}, {BIAS_BAND[1]}], "
                         f"sign-test p = {out['sign_test_p']:.1e} < 0.01; exact mode = 1 - {1 - exact_mean:.1e}")


def criterion_8():
    fids = []
    for seed in range(5):
        data = detect.simulate_dataset(SEQS.single, NoiseModel.calibrated(), RESP, SHOTS, seed=300 + seed)
        fids.extend(single_qubit_fidelities(data, SEQS.single, LM, OPTS)[0])
    mean = float(np.mean(fids))
    return report(8, abs(mean - 0.97) <= 0.01, f"single-qubit mean state fidelity = {mean:.4f}, 0.97 +- 0.01")


def criterion_9():
    g = motion.gate_phases()
    delta = g.delta
    t_gate = 2 * np.pi / delta
    # the gate drives mode 3 at +delta and mode 4 at -2 delta
    closure = max(abs(complex(motion.alpha_closed_form(motion.ForcedModeParams(delta, d, t_gate), t_gate)))
                  for d in (delta, -2 * delta))
    three_delta = 3 * delta / (2 * np.pi)
    split = g.splitting / (2 * np.pi)
    ok = closure < 1e-10 and abs(three_delta - 250.8e3) < 1 and abs(split - 251e3) < 1 and abs(g.ratio - 2.72) <= 0.05
    return report(9, ok, f"|alpha(t_G)| = {closure:.1e} < 1e-10; 3 delta = {three_delta / 1e3:.1f} kHz vs splitting "
                         f"{split / 1e3:.1f} kHz; phase ratio = {g.ratio:.4f}, 2.72 +- 0.05")


def criterion_10():
    t, err = detect.optimal_threshold(RESP)
    return report(10, err < 2e-3, f"misclassification at optimal threshold c >= {t} = {err:.2e} < 2e-3")


def criterion_11():
    worst = min((float(np.min(np.diff(h))) for h in HISTORIES if len(h) > 1), default=0.0)
    ok = len(HISTORIES) > 0 and worst >= -tomo.MONOTONE_TOL
    return report(11, ok, f"{len(HISTORIES)} reconstructions; largest log-likelihood decrease {max(0.0, -worst):.1e}"
                          " <= 1e-9")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


@pytest.fixture(autouse=True)
def _quiet_convergence():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", tomo.ConvergenceWarning)
        yield


def test_unitary_construction():
    assert criterion_1()


def test_mean_fidelity_relation():
    assert criterion_2()


def test_exact_data_reconstruction():
    assert criterion_3()


def test_finite_shot_reconstruction():
    assert criterion_4()


def test_calibrated_fidelities():
    assert criterion_5()


def test_repeatability_ratio():
    assert criterion_6()


def test_bias_study():
    assert criterion_7()


def test_single_qubit_sequence():
    assert criterion_8()


def test_motion():
    assert criterion_9()


def test_readout_threshold():
    assert criterion_10()


# runs last in file order, after every reconstruction above
def test_mle_monotonicity():
    assert criterion_11()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
