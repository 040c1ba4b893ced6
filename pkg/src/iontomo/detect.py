"""Photon-count readout model and synthetic tomography data sets.

Readout maps |0> to the fluorescing level, so in the basis order
|11>, |10>, |01>, |00> the four outcomes are (dark, dark), (dark, bright),
(bright, dark), (bright, bright): outcome probabilities are simply the
diagonal of the analysed output state.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import poisson

from . import core
from .circuit import (N_ANALYSES, N_INPUTS, GROUND, GateSequence, analysis_setting,
                      analysis_unitary, input_state)
from .noise import (NoiseModel, ShotParameters, evolve, kron_batch, noise_steps, rotation_batch,
                    sample_shot_parameters)

N_SETTINGS = N_INPUTS * N_ANALYSES
OUTCOME_BRIGHT = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=bool)
CSV_HEADER = ("input", "analysis", "shot", "c1", "c2")


class DataError(ValueError):
    """Raised for incomplete or malformed data sets."""


@dataclass(frozen=True)
class CountResponse:
    mean_bright: float = 10.0
    mean_dark_bg: float = 0.4
    repump_prob: float = 1e-3
    detection_window: float = 200.0  # microseconds
    max_count: int = 40
    shelving_failure: float = 0.0
    repump_points: int = 200

    def __post_init__(self):
        if self.mean_bright < 0 or self.mean_dark_bg < 0:
            raise ValueError("count means must be non-negative")
        for name in ("repump_prob", "shelving_failure"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.max_count < 1 or self.repump_points < 100:
            raise ValueError("max_count >= 1 and repump_points >= 100 required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CountResponse":
        return cls(**d)

    def pmfs(self) -> np.ndarray:
        """Array [detection, bright, count]: count pmfs for ion 1 and ion 2."""
        return _pmf_table(self)


def _repump_tail(resp: CountResponse, counts: np.ndarray) -> np.ndarray:
    # Repump at a uniformly distributed fraction u of the window; the ion then
    # fluoresces for the remaining (1 - u) of it.
    u, w = np.polynomial.legendre.leggauss(resp.repump_points)
    u = 0.5 * (u + 1)
    w = 0.5 * w
    means = resp.mean_dark_bg + resp.mean_bright * (1 - u)
    return poisson.pmf(counts[:, None], means[None, :]) @ w


def count_pmf(bright: bool, resp: CountResponse, renormalize: bool = True) -> np.ndarray:
    """Photon-count distribution over 0..max_count for one detection."""
    c = np.arange(resp.max_count + 1)
    if bright:
        pmf = poisson.pmf(c, resp.mean_bright)
    else:
        pmf = (1 - resp.repump_prob) * poisson.pmf(c, resp.mean_dark_bg)
        if resp.repump_prob > 0:
            pmf = pmf + resp.repump_prob * _repump_tail(resp, c)
    if renormalize:
        pmf = pmf / pmf.sum()
    return pmf


def second_detection_pmf(bright: bool, resp: CountResponse) -> np.ndarray:
    """Ion-2 counts, including light from ion 1 if its shelving failed."""
    pmf = count_pmf(bright, resp)
    if resp.shelving_failure > 0:
        extra = np.convolve(pmf, count_pmf(True, resp))[: resp.max_count + 1]
        pmf = (1 - resp.shelving_failure) * pmf + resp.shelving_failure * extra
        pmf = pmf / pmf.sum()
    return pmf


@lru_cache(maxsize=32)
def _pmf_table(resp: CountResponse) -> np.ndarray:
    t = np.array([
        [count_pmf(False, resp), count_pmf(True, resp)],
        [second_detection_pmf(False, resp), second_detection_pmf(True, resp)],
    ])
    t.setflags(write=False)
    return t


def misclassification(resp: CountResponse, threshold: int) -> tuple[float, float]:
    """(P(bright read as dark), P(dark read as bright)) for 'bright iff c >= threshold'."""
    b = count_pmf(True, resp)
    d = count_pmf(False, resp)
    return float(b[:threshold].sum()), float(d[threshold:].sum())


def optimal_threshold(resp: CountResponse) -> tuple[int, float]:
    """Threshold minimising the equal-prior misclassification probability."""
    errs = [(0.5 * sum(misclassification(resp, t)), t) for t in range(1, resp.max_count + 1)]
    err, t = min(errs)
    return t, err


# -- outcome probabilities --------------------------------------------------

def outcome_probabilities(e: np.ndarray, input_index: int, analysis_index: int) -> np.ndarray:
    """p(b1, b2) in outcome order (dd, db, bd, bb) for one setting."""
    rho = core.density_matrix(input_state(input_index).state)
    out = core.apply_process(e, rho)
    a = analysis_unitary(analysis_index)
    p = np.real(np.diag(a @ out @ a.conj().T))
    p = np.clip(p, 0, None)
    return p / p.sum()


def exact_probabilities(e: np.ndarray) -> np.ndarray:
    """Outcome probabilities for all settings, shape (16, 9, 4)."""
    return np.array([[outcome_probabilities(e, i, a) for a in range(N_ANALYSES)]
                     for i in range(N_INPUTS)])


# -- data sets --------------------------------------------------------------

@dataclass(frozen=True)
class CountRecord:
    input_index: int
    analysis_index: int
    c1: int
    c2: int
    shot_index: int


@dataclass
class Dataset:
    """Count records as parallel integer columns, plus metadata."""

    input: np.ndarray
    analysis: np.ndarray
    shot: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.input)

    def records(self):
        for i, a, s, c1, c2 in zip(self.input, self.analysis, self.shot, self.c1, self.c2):
            yield CountRecord(int(i), int(a), int(c1), int(c2), int(s))

    @classmethod
    def from_records(cls, records, metadata=None) -> "Dataset":
        recs = list(records)
        cols = np.array([[r.input_index, r.analysis_index, r.shot_index, r.c1, r.c2] for r in recs],
                        dtype=np.int64).reshape(-1, 5)
        return cls(*cols.T, metadata=dict(metadata or {}))

    def setting_index(self) -> np.ndarray:
        return self.input * N_ANALYSES + self.analysis

    def shots_per_setting(self) -> np.ndarray:
        return np.bincount(self.setting_index(), minlength=N_SETTINGS)

    def missing_settings(self) -> list[tuple[int, int]]:
        counts = self.shots_per_setting()
        return [divmod(int(s), N_ANALYSES) for s in np.flatnonzero(counts == 0)]

    def check_complete(self) -> None:
        missing = self.missing_settings()
        if missing:
            raise DataError(f"data set is missing {len(missing)} settings (input, analysis): {missing}")
        bad = (self.input < 0) | (self.input >= N_INPUTS) | (self.analysis < 0) | (self.analysis >= N_ANALYSES)
        if bad.any():
            raise DataError("setting index out of range")

    def subset(self, mask) -> "Dataset":
        return Dataset(self.input[mask], self.analysis[mask], self.shot[mask], self.c1[mask],
                       self.c2[mask], dict(self.metadata))

    def permuted(self, rng: np.random.Generator) -> "Dataset":
        return self.subset(rng.permutation(len(self)))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(zip(*(col.tolist() for col in (self.input, self.analysis, self.shot, self.c1, self.c2))))
        return buf.getvalue()

    def sha256(self) -> str:
        return hashlib.sha256(self.to_csv_text().encode()).hexdigest()

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_csv_text())
        meta = dict(self.metadata)
        meta["sha256"] = self.sha256()
        meta["n_records"] = len(self)
        sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}")
        arr = np.array(rows[1:], dtype=np.int64).reshape(-1, 5)
        side = sidecar_path(path)
        meta = json.loads(side.read_text()) if side.exists() else {}
        return cls(*arr.T, metadata=meta)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


@dataclass(frozen=True)
class ExactData:
    """Infinite-shot data: exact outcome probabilities per setting."""

    probabilities: np.ndarray  # (16, 9, 4)
    weight: float = 1.0

    @classmethod
    def from_process(cls, e: np.ndarray) -> "ExactData":
        return cls(exact_probabilities(e))


# -- simulation -------------------------------------------------------------

def _setting_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,))) for k in range(n)]


def _sample_counts(outcomes: np.ndarray, u1: np.ndarray, u2: np.ndarray, resp: CountResponse):
    table = resp.pmfs()
    cdf = np.cumsum(table, axis=-1)
    cdf[..., -1] = 1.0
    bright = OUTCOME_BRIGHT[outcomes]
    c1 = np.where(bright[:, 0], np.searchsorted(cdf[0, 1], u1, side="right"),
                  np.searchsorted(cdf[0, 0], u1, side="right"))
    c2 = np.where(bright[:, 1], np.searchsorted(cdf[1, 1], u2, side="right"),
                  np.searchsorted(cdf[1, 0], u2, side="right"))
    return c1, c2


def _settings_grid(shots: int):
    s = np.repeat(np.arange(N_SETTINGS), shots)
    shot = np.tile(np.arange(shots), N_SETTINGS)
    return s // N_ANALYSES, s % N_ANALYSES, shot


def simulate_dataset(source, model: NoiseModel | None, resp: CountResponse, shots: int, seed: int,
                     rabi_scale: float = 1.0, metadata: dict | None = None) -> Dataset:
    """Synthetic count data for all 16 x 9 settings.

    ``source`` is either a GateSequence, run shot by shot under ``model``
    (one Rabi scale factor per shot shared with the preparation and analysis
    pulses), or a fixed process matrix, in which case preparation and
    analysis pulses are scaled by ``rabi_scale``. Deterministic given seed.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    model = NoiseModel.zero() if model is None else model
    inp, ana, shot = _settings_grid(shots)
    n = len(inp)
    rngs = _setting_rngs(seed, N_SETTINGS)

    if isinstance(source, GateSequence):
        scale = np.empty(n)
        gphase = np.empty(n)
        for k, rng in enumerate(rngs):
            p = sample_shot_parameters(model, rng, shots)
            scale[k * shots:(k + 1) * shots] = p.scale
            gphase[k * shots:(k + 1) * shots] = p.gate_phase
    else:
        scale = np.full(n, float(rabi_scale))
        gphase = np.zeros(n)

    prep_rot = np.array([input_state(i).rotations for i in range(N_INPUTS)])
    ana_rot = np.array([analysis_setting(a).rotations for a in range(N_ANALYSES)])
    prep = _rotation_pairs(prep_rot[inp], scale)
    rho = prep @ core.density_matrix(GROUND) @ np.conj(np.swapaxes(prep, -1, -2))

    if isinstance(source, GateSequence):
        rho = evolve(rho, noise_steps(source, model, ShotParameters(scale, gphase)))
    else:
        e = core.check_process(np.asarray(source), psd_tol=-1e-7, tp_tol=1e-6)
        rho = np.einsum("nij,ikjl->nkl", rho, core.blocks(e))

    an = _rotation_pairs(ana_rot[ana], scale)
    rho = an @ rho @ np.conj(np.swapaxes(an, -1, -2))
    probs = np.clip(np.real(np.einsum("nii->ni", rho)), 0, None)
    probs /= probs.sum(axis=1, keepdims=True)

    outcomes = np.empty(n, dtype=np.int64)
    u1 = np.empty(n)
    u2 = np.empty(n)
    cum = np.cumsum(probs, axis=1)
    for k, rng in enumerate(rngs):
        sl = slice(k * shots, (k + 1) * shots)
        u = rng.random((3, shots))
        outcomes[sl] = np.minimum((u[0][:, None] > cum[sl]).sum(axis=1), 3)
        u1[sl], u2[sl] = u[1], u[2]
    c1, c2 = _sample_counts(outcomes, u1, u2, resp)

    meta = {
        "seed": seed,
        "shots_per_setting": shots,
        "noise_model": model.to_dict(),
        "response": resp.to_dict(),
    }
    if not isinstance(source, GateSequence):
        meta["rabi_scale"] = float(rabi_scale)
    meta.update(metadata or {})
    return Dataset(inp.astype(np.int64), ana.astype(np.int64), shot.astype(np.int64),
                   c1.astype(np.int64), c2.astype(np.int64), meta)


def _rotation_pairs(rots: np.ndarray, scale: np.ndarray) -> np.ndarray:
    # rots: (n, 2, 2) rows of ((theta1, phi1), (theta2, phi2))
    r1 = rotation_batch(scale * rots[:, 0, 0], rots[:, 0, 1])
    r2 = rotation_batch(scale * rots[:, 1, 0], rots[:, 1, 1])
    return kron_batch(r1, r2)
