"""Parametric bootstrap for fidelity error bars and reconstruction bias.

Each resample draws one Rabi-frequency scale for the whole synthetic data
set, simulates counts from a fixed process matrix, and reconstructs it.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import core
from .detect import CountResponse, ExactData, simulate_dataset
from .tomo import LikelihoodModel, MleOptions, reconstruct_full


@dataclass(frozen=True)
class BootstrapConfig:
    n_resamples: int = 100
    rabi_sigma: float = 0.01
    seed: int = 0
    shots: int | None = 350  # None: infinite-shot resamples
    workers: int = 1

    def __post_init__(self):
        if self.n_resamples < 2:
            raise ValueError("n_resamples must be >= 2")
        if self.rabi_sigma < 0:
            raise ValueError("rabi_sigma must be non-negative")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BootstrapConfig":
        return cls(**d)


@dataclass(frozen=True)
class Summary:
    mean: float
    std_error: float
    samples: tuple[float, ...]

    @classmethod
    def of(cls, samples) -> "Summary":
        x = np.asarray(samples, dtype=float)
        return cls(float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x))), tuple(x.tolist()))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "samples": list(self.samples)}


def _resample_stream(cfg: BootstrapConfig, index: int) -> tuple[float, int, int]:
    """(Rabi scale, seed A, seed B) for one resample, independent of all others."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(index,)))
    scale = 1.0 + cfg.rabi_sigma * rng.standard_normal()
    a, b = rng.integers(0, 2**63 - 1, size=2)
    return float(scale), int(a), int(b)


def _data(e, resp, cfg, scale, seed):
    if cfg.shots is None:
        return ExactData.from_process(e)
    return simulate_dataset(e, None, resp, cfg.shots, seed, rabi_scale=scale)


def _fit(e, resp, cfg, lm, opts, scale, seed):
    if cfg.shots is None:
        # exact data of a full-rank process: the projected linear inversion is
        # already the maximum, whereas the multiplicative iteration approaches
        # small eigenvalues only slowly
        opts = replace(opts, start="linear")
    r = reconstruct_full(_data(e, resp, cfg, scale, seed), lm, opts)
    return r.process, r.converged


def _map(fn, args, workers):
    if workers == 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, *zip(*args)))


def _fidelity_task(e_hat, e_ideal, resp, cfg, lm, opts, index):
    scale, seed, _ = _resample_stream(cfg, index)
    e, ok = _fit(e_hat, resp, cfg, lm, opts, scale, seed)
    return (core.entanglement_fidelity(e, e_ideal), core.mean_state_fidelity(e, e_ideal), ok, scale)


def resample_fidelities(e_hat: np.ndarray, e_ideal: np.ndarray, resp: CountResponse = CountResponse(),
                        cfg: BootstrapConfig = BootstrapConfig(), lm: LikelihoodModel | None = None,
                        opts: MleOptions = MleOptions()) -> dict:
    """Distribution of F and mean state fidelity over parametric resamples of e_hat."""
    core.check_process(e_hat, psd_tol=-1e-7, tp_tol=1e-6)
    lm = LikelihoodModel(resp) if lm is None else lm
    args = [(e_hat, e_ideal, resp, cfg, lm, opts, i) for i in range(cfg.n_resamples)]
    out = _map(_fidelity_task, args, cfg.workers)
    f, fbar, ok, scales = zip(*out)
    return {
        "entanglement_fidelity": Summary.of(f).to_dict(),
        "mean_state_fidelity": Summary.of(fbar).to_dict(),
        "point_estimate": {"entanglement_fidelity": core.entanglement_fidelity(e_hat, e_ideal),
                           "mean_state_fidelity": core.mean_state_fidelity(e_hat, e_ideal)},
        "rabi_scales": list(scales),
        "all_converged": bool(all(ok)),
    }


def _bias_task(e_u, e_uu, resp, cfg, lm, opts, index):
    scale, seed_a, seed_b = _resample_stream(cfg, index)
    r_u, ok_a = _fit(e_u, resp, cfg, lm, opts, scale, seed_a)
    r_uu, ok_b = _fit(e_uu, resp, cfg, lm, opts, scale, seed_b)
    composed = core.compose_processes(r_u, r_u)
    return core.mean_state_fidelity(composed, r_uu), ok_a and ok_b


def bias_study(e_hat_u: np.ndarray, resp: CountResponse = CountResponse(),
               cfg: BootstrapConfig = BootstrapConfig(), lm: LikelihoodModel | None = None,
               opts: MleOptions = MleOptions()) -> dict:
    """Mean state fidelity between E'_U o E'_U and E'_U2 over resamples.

    Both data sets of a resample come from e_hat_u (one application and
    two back to back), so any shortfall from 1 is reconstruction bias.
    """
    core.check_process(e_hat_u, psd_tol=-1e-7, tp_tol=1e-6)
    lm = LikelihoodModel(resp) if lm is None else lm
    e_uu = core.compose_processes(e_hat_u, e_hat_u)
    args = [(e_hat_u, e_uu, resp, cfg, lm, opts, i) for i in range(cfg.n_resamples)]
    vals, ok = zip(*_map(_bias_task, args, cfg.workers))
    summary = Summary.of(vals)
    below = int(sum(v < 1 for v in vals))
    sign = binomtest(below, len(vals), 0.5, alternative="greater")
    return {
        "fidelity": summary.to_dict(),
        "n_below_one": below,
        "sign_test_p": float(sign.pvalue),
        "all_converged": bool(all(ok)),
    }


def write_report(path, report: dict, cfg: BootstrapConfig, extra: dict | None = None) -> None:
    doc = {"config": cfg.to_dict(), **(extra or {}), **report}
    Path(path).write_text(json.dumps(doc, indent=1))
