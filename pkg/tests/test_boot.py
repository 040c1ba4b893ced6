import json

import numpy as np
import pytest

from iontomo import boot, core
from iontomo.boot import BootstrapConfig, Summary
from iontomo.detect import CountResponse
from iontomo.noise import single_qubit_depolarizing

E_IDEAL = core.unitary_to_process(core.ideal_u())


def noisy_u(p=0.05):
    kraus = core.process_to_kraus(single_qubit_depolarizing(p))
    local = core.kraus_to_process([np.kron(a, b) for a in kraus for b in kraus])
    return core.compose_processes(local, E_IDEAL)


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(n_resamples=1)
    with pytest.raises(ValueError):
        BootstrapConfig(rabi_sigma=-0.1)
    with pytest.raises(ValueError):
        BootstrapConfig(shots=0)
    assert BootstrapConfig().n_resamples == 100
    assert BootstrapConfig.from_dict(BootstrapConfig(seed=3).to_dict()) == BootstrapConfig(seed=3)


def test_summary_statistics():
    s = Summary.of([1.0, 2.0, 3.0, 4.0])
    assert s.mean == 2.5
    assert s.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert Summary.of([0.9, 0.95]).std_error > 0


def test_resample_streams_independent_and_reproducible():
    cfg = BootstrapConfig(seed=5)
    a = [boot._resample_stream(cfg, i) for i in range(4)]
    b = [boot._resample_stream(cfg, i) for i in range(4)]
    assert a == b
    assert len({x[1] for x in a}) == 4
    assert boot._resample_stream(BootstrapConfig(seed=6), 0) != a[0]


def test_zero_sigma_gives_unit_scale():
    assert boot._resample_stream(BootstrapConfig(rabi_sigma=0.0), 3)[0] == 1.0


def test_two_resamples_defined():
    cfg = BootstrapConfig(n_resamples=2, shots=50, seed=1)
    out = boot.resample_fidelities(E_IDEAL, E_IDEAL, CountResponse(), cfg)
    f = out["entanglement_fidelity"]
    assert len(f["samples"]) == 2
    assert np.isfinite(f["std_error"]) and f["std_error"] > 0
    assert out["point_estimate"]["entanglement_fidelity"] == pytest.approx(1)


def test_determinism():
    cfg = BootstrapConfig(n_resamples=3, shots=40, seed=9)
    a = boot.resample_fidelities(E_IDEAL, E_IDEAL, CountResponse(), cfg)
    b = boot.resample_fidelities(E_IDEAL, E_IDEAL, CountResponse(), cfg)
    assert a == b


def test_parallel_matches_serial():
    cfg = BootstrapConfig(n_resamples=2, shots=30, seed=4)
    serial = boot.bias_study(noisy_u(), CountResponse(), cfg)
    parallel = boot.bias_study(noisy_u(), CountResponse(), BootstrapConfig(n_resamples=2, shots=30, seed=4, workers=2))
    assert serial["fidelity"]["samples"] == parallel["fidelity"]["samples"]


def test_bias_vanishes_without_sampling():
    cfg = BootstrapConfig(n_resamples=2, shots=None, seed=0)
    out = boot.bias_study(noisy_u(), CountResponse(), cfg)
    assert out["all_converged"]
    assert out["fidelity"]["mean"] == pytest.approx(1, abs=1e-6)


def test_finite_shot_resamples_lie_below_truth():
    cfg = BootstrapConfig(n_resamples=4, shots=100, seed=2)
    e = noisy_u()
    out = boot.resample_fidelities(e, E_IDEAL, CountResponse(), cfg)
    point = out["point_estimate"]["entanglement_fidelity"]
    assert out["entanglement_fidelity"]["mean"] < point
    assert all(s < 1 for s in boot.bias_study(e, CountResponse(), cfg)["fidelity"]["samples"])


def test_rejects_unphysical_input():
    bad = E_IDEAL.copy()
    bad[0, 0] += 0.5
    with pytest.raises(core.ValidationError):
        boot.bias_study(bad, CountResponse(), BootstrapConfig(n_resamples=2))


def test_write_report(tmp_path):
    cfg = BootstrapConfig(n_resamples=2)
    boot.write_report(tmp_path / "b.json", {"x": 1}, cfg, {"input": "p"})
    doc = json.loads((tmp_path / "b.json").read_text())
    assert doc["config"]["n_resamples"] == 2
    assert doc["x"] == 1 and doc["input"] == "p"


@pytest.mark.slow
def test_std_error_scales_inverse_sqrt_n():
    # one pool of 400 resamples, cut into disjoint blocks of each size; a single
    # block of 25 is too noisy a standard-error estimate for a factor-1.5 window
    e = noisy_u()
    out = boot.resample_fidelities(e, E_IDEAL, CountResponse(), BootstrapConfig(n_resamples=400, shots=60, seed=8))
    samples = np.array(out["entanglement_fidelity"]["samples"])
    se = {n: np.mean([Summary.of(samples[i:i + n]).std_error for i in range(0, 400, n)])
          for n in (25, 100, 400)}
    for n in (25, 100):
        ratio = se[n] / se[400]
        assert np.sqrt(400 / n) / 1.5 < ratio < np.sqrt(400 / n) * 1.5
