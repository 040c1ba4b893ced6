"""Maximum-likelihood process tomography.

The likelihood of a process matrix E is built from effective POVM operators
in the space of E: for preparation rho and measurement effect M, the outcome
probability is Tr[(rho^T (x) M) E]. Photon counts enter through the count
pmfs, which mix the projective effects of each setting.

Reconstruction is a diluted fixed-point iteration on E: with K the gradient
of the log-likelihood and N the number of records,

    E <- (L^-1/2 (x) I) M E M (L^-1/2 (x) I),  M = (1 - d) I + d K d_in / N,

where L is the output partial trace of M E M, so every iterate is positive
and trace preserving. A step that would lower the likelihood is halved until
it does not, so the log-likelihood sequence never decreases.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import sparse

from . import core
from .circuit import (ANALYSIS_BASES_1Q, INPUT_STATES_1Q, N_ANALYSES, N_INPUTS, analysis_unitary,
                      input_state, single_qubit_input)
from .detect import (N_SETTINGS, OUTCOME_BRIGHT, CountResponse, DataError, Dataset, ExactData,
                     optimal_threshold)

PROB_FLOOR = 1e-300
MONOTONE_TOL = 1e-9
MIN_STEP = 1e-12
MAX_STEP = 50.0  # over-relaxed steps stay positive since M E M is PSD for any Hermitian M


class ConvergenceWarning(UserWarning):
    pass


class MonotonicityError(RuntimeError):
    pass


@dataclass(frozen=True)
class MleOptions:
    dilution: float = 0.1
    max_iters: int = 5000
    tol_loglike: float = 1e-10
    start: str = "mixed"  # or "linear"
    adapt: bool = True  # grow the dilution while steps keep being accepted
    momentum: bool = True  # try an extrapolated iterate after each step

    def __post_init__(self):
        if not 0 < self.dilution <= 1:
            raise ValueError("dilution must be in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol_loglike <= 0:
            raise ValueError("tol_loglike must be positive")
        if self.start not in ("mixed", "linear"):
            raise ValueError(f"unknown start {self.start!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MleOptions":
        return cls(**d)


# -- measurement design -----------------------------------------------------

def _projective_effects(u: np.ndarray) -> np.ndarray:
    """Effects U^dag |b><b| U for each basis state b."""
    return np.einsum("bi,bj->bij", u.conj(), u)


@lru_cache(maxsize=2)
def base_operators(n_qubits: int = 2) -> np.ndarray:
    """rho_s^T (x) M_{s,b}, shape (settings, outcomes, d^2, d^2).

    Two qubits: 144 settings (input-major) with outcomes (dd, db, bd, bb).
    One qubit: 12 settings with outcomes (dark, bright).
    """
    if n_qubits == 2:
        inputs = [input_state(i).state for i in range(N_INPUTS)]
        effects = [_projective_effects(analysis_unitary(a)) for a in range(N_ANALYSES)]
    elif n_qubits == 1:
        inputs = [single_qubit_input(name) for name, _, _ in INPUT_STATES_1Q]
        effects = [_projective_effects(core.rotation(t, p)) for _, t, p in ANALYSIS_BASES_1Q]
    else:
        raise ValueError("n_qubits must be 1 or 2")
    ops = np.array([[np.kron(core.density_matrix(s).T, m) for m in eff]
                    for s in inputs for eff in effects])
    ops.setflags(write=False)
    return ops


@lru_cache(maxsize=2)
def design_matrix(n_qubits: int = 2) -> np.ndarray:
    """Rows r with Tr(Op E) = r @ E.ravel(), one per (setting, outcome)."""
    ops = base_operators(n_qubits)
    d2 = ops.shape[-1]
    rows = np.ascontiguousarray(np.swapaxes(ops, -1, -2).reshape(-1, d2 * d2))
    rows.setflags(write=False)
    return rows


@dataclass(frozen=True)
class LikelihoodModel:
    """How count records map to effective POVM operators.

    mode "counts" uses the full photon-count pmfs; mode "threshold" reads
    bright iff count >= threshold and uses the induced confusion matrix.
    A threshold of None selects the misclassification-minimising one.
    """

    response: CountResponse = CountResponse()
    mode: str = "counts"
    threshold: int | None = None

    def __post_init__(self):
        if self.mode not in ("counts", "threshold"):
            raise ValueError(f"unknown likelihood mode {self.mode!r}")

    def effective_threshold(self) -> int:
        if self.threshold is not None:
            return self.threshold
        return optimal_threshold(self.response)[0]

    def confusion(self) -> np.ndarray:
        """[detection, bright, bit] probabilities of reading each bit."""
        t = self.effective_threshold()
        table = self.response.pmfs()
        return np.stack([table[..., :t].sum(-1), table[..., t:].sum(-1)], axis=-1)

    def effective_povm(self, analysis: int, c1: int, c2: int) -> np.ndarray:
        """4x4 effect for observing counts (c1, c2) under one analysis setting."""
        eff = _projective_effects(analysis_unitary(analysis))
        table = self.response.pmfs()
        b = OUTCOME_BRIGHT.astype(int)
        return np.einsum("b,bij->ij", table[0, b[:, 0], c1] * table[1, b[:, 1], c2], eff)

    def povm_sums(self) -> np.ndarray:
        """Sum of effective effects over all count pairs, per analysis setting."""
        mc = self.response.max_count + 1
        return np.array([sum(self.effective_povm(a, c1, c2) for c1 in range(mc) for c2 in range(mc))
                         for a in range(N_ANALYSES)])

    def to_dict(self) -> dict:
        return {"response": self.response.to_dict(), "mode": self.mode, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodModel":
        d = dict(d)
        resp = CountResponse.from_dict(d.pop("response", {}))
        return cls(resp, **d)


@dataclass(frozen=True)
class Likelihood:
    """Data reduced to distinct observations.

    Observation k has a setting s_k, weights w_kb = P(observation | outcome b)
    and a multiplicity n_k, so p_k(E) = sum_b w_kb Tr(Op_{s_k,b} E).
    """

    n_qubits: int
    setting: np.ndarray
    weights: np.ndarray
    n: np.ndarray

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits

    @property
    def n_settings(self) -> int:
        return base_operators(self.n_qubits).shape[0]

    @property
    def total(self) -> float:
        return float(self.n.sum())

    def settings_present(self) -> np.ndarray:
        return np.bincount(self.setting, minlength=self.n_settings) > 0

    def outcome_probs(self, e: np.ndarray) -> np.ndarray:
        """q[s, b] = Tr(Op_{s,b} E)."""
        q = np.real(design_matrix(self.n_qubits) @ np.asarray(e).ravel())
        return q.reshape(self.n_settings, -1)

    @cached_property
    def _mixing(self) -> sparse.csr_matrix:
        # W[k, s * n_out + b] = w_kb, so p = W @ q.ravel()
        k, n_out = self.weights.shape
        cols = self.setting[:, None] * n_out + np.arange(n_out)
        rows = np.repeat(np.arange(k), n_out)
        return sparse.csr_matrix((self.weights.ravel(), (rows, cols.ravel())),
                                 shape=(k, self.n_settings * n_out))

    def key_probs(self, e: np.ndarray) -> np.ndarray:
        return self._mixing @ self.outcome_probs(e).ravel()

    def loglike(self, e: np.ndarray) -> float:
        if len(self.n) == 0:
            return 0.0
        p = np.maximum(self.key_probs(e), PROB_FLOOR)
        return float(self.n @ np.log(p))

    def gradient(self, e: np.ndarray) -> tuple[np.ndarray, float]:
        """(K, log L) with K = sum_k n_k / p_k * sum_b w_kb Op_{s_k,b}."""
        p = np.maximum(self.key_probs(e), PROB_FLOOR)
        c = self._mixing.T @ (self.n / p)
        d2 = self.dim ** 2
        k = (c @ design_matrix(self.n_qubits)).reshape(d2, d2).T
        return 0.5 * (k + k.conj().T), float(self.n @ np.log(p))


def _reduce(n_qubits: int, setting: np.ndarray, keys: list, weight_fn) -> Likelihood:
    if len(setting) == 0:
        return Likelihood(n_qubits, np.zeros(0, dtype=int), np.zeros((0, 2 ** n_qubits)), np.zeros(0))
    uniq, n = np.unique(np.stack([setting, *keys]), axis=1, return_counts=True)
    return Likelihood(n_qubits, uniq[0], weight_fn(*uniq[1:]), n.astype(float))


def _exact_likelihood(n_qubits: int, p: np.ndarray, weight: float) -> Likelihood:
    s, b = np.nonzero(p > 0)
    w = np.zeros((len(s), p.shape[1]))
    w[np.arange(len(s)), b] = 1.0
    return Likelihood(n_qubits, s, w, p[s, b] * weight)


def build_likelihood(data, lm: LikelihoodModel = LikelihoodModel()) -> Likelihood:
    """Two-qubit likelihood from a count Dataset or ExactData."""
    if isinstance(data, ExactData):
        p = np.asarray(data.probabilities, dtype=float).reshape(N_SETTINGS, 4)
        return _exact_likelihood(2, p, data.weight)
    if not isinstance(data, Dataset):
        raise TypeError(f"unsupported data type {type(data).__name__}")
    b = OUTCOME_BRIGHT.astype(int)
    mc = lm.response.max_count
    c1 = np.minimum(data.c1, mc)
    c2 = np.minimum(data.c2, mc)
    if lm.mode == "threshold":
        t = lm.effective_threshold()
        conf = lm.confusion()
        return _reduce(2, data.setting_index(), [(c1 >= t).astype(int), (c2 >= t).astype(int)],
                       lambda k1, k2: conf[0][b[:, 0], k1[:, None]] * conf[1][b[:, 1], k2[:, None]])
    table = lm.response.pmfs()
    return _reduce(2, data.setting_index(), [c1, c2],
                   lambda u1, u2: table[0][b[:, 0], u1[:, None]] * table[1][b[:, 1], u2[:, None]])


def single_qubit_likelihood(data, qubit: int, lm: LikelihoodModel = LikelihoodModel()) -> Likelihood:
    """Marginal likelihood of one ion from a two-qubit product-setting data set."""
    if qubit not in (1, 2):
        raise ValueError("qubit must be 1 or 2")
    q = qubit - 1
    if isinstance(data, ExactData):
        p = np.asarray(data.probabilities, dtype=float)  # (16, 9, 4)
        bit = OUTCOME_BRIGHT[:, q].astype(int)
        marg = np.zeros((4, 3, 2))
        for i in range(N_INPUTS):
            for a in range(N_ANALYSES):
                ii, aa = (i // 4, a // 3) if q == 0 else (i % 4, a % 3)
                np.add.at(marg[ii, aa], bit, p[i, a])
        marg /= marg.sum(axis=-1, keepdims=True)
        return _exact_likelihood(1, marg.reshape(12, 2), data.weight)
    if not isinstance(data, Dataset):
        raise TypeError(f"unsupported data type {type(data).__name__}")
    if q == 0:
        inp, ana, c = data.input // 4, data.analysis // 3, data.c1
    else:
        inp, ana, c = data.input % 4, data.analysis % 3, data.c2
    c = np.minimum(c, lm.response.max_count)
    setting = inp * 3 + ana
    if lm.mode == "threshold":
        t = lm.effective_threshold()
        conf = lm.confusion()[q]
        return _reduce(1, setting, [(c >= t).astype(int)], lambda k: conf[:, k].T)
    table = lm.response.pmfs()[q]
    return _reduce(1, setting, [c], lambda u: table[:, u].T)


def log_likelihood(e: np.ndarray, data, lm: LikelihoodModel = LikelihoodModel()) -> float:
    """Sum over records of log sum_b p(b | E) pmf_b1(c1) pmf_b2(c2)."""
    return build_likelihood(data, lm).loglike(e)


# -- linear inversion -------------------------------------------------------

@dataclass(frozen=True)
class LinearInversion:
    process: np.ndarray
    min_eigenvalue: float
    design_rank: int


def estimated_frequencies(data, lm: LikelihoodModel = LikelihoodModel()) -> np.ndarray:
    """Readout-corrected outcome frequencies per setting, shape (144, 4).

    Counts are thresholded and the confusion matrix is inverted, so
    finite-shot estimates can fall outside [0, 1].
    """
    if isinstance(data, ExactData):
        p = np.asarray(data.probabilities, dtype=float).reshape(N_SETTINGS, 4)
        return p / p.sum(axis=1, keepdims=True)
    data.check_complete()
    t = lm.effective_threshold()
    outcome = 2 * (data.c1 >= t) + (data.c2 >= t)  # (dd, db, bd, bb)
    hist = np.zeros((N_SETTINGS, 4))
    np.add.at(hist, (data.setting_index(), outcome), 1.0)
    hist /= hist.sum(axis=1, keepdims=True)
    conf = lm.confusion()
    return hist @ np.linalg.inv(np.kron(conf[0], conf[1]))


@lru_cache(maxsize=1)
def _design_pinv() -> tuple[np.ndarray, int]:
    rows = design_matrix(2)
    rank = int(np.linalg.matrix_rank(rows))
    if rank < 256:
        raise np.linalg.LinAlgError(f"design matrix rank {rank} < 256")
    return np.linalg.pinv(rows), rank


def linear_inversion(data, lm: LikelihoodModel = LikelihoodModel()) -> LinearInversion:
    """Least-squares process matrix from estimated frequencies; may be unphysical."""
    pinv, rank = _design_pinv()
    e = (pinv @ estimated_frequencies(data, lm).ravel()).reshape(16, 16)
    e = 0.5 * (e + e.conj().T)
    return LinearInversion(e, float(np.linalg.eigvalsh(e)[0]), rank)


def _inv_sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v / np.sqrt(w)) @ v.conj().T


def tp_normalize(e: np.ndarray) -> np.ndarray:
    """(L^-1/2 (x) I) E (L^-1/2 (x) I) with L the output partial trace of E."""
    d = int(round(np.sqrt(e.shape[0])))
    s = np.kron(_inv_sqrt_psd(core.output_trace(e)), np.eye(d))
    e = s @ e @ s
    return 0.5 * (e + e.conj().T)


def project_to_cptp(e: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Nearby physical process: clip eigenvalues, then restore trace preservation."""
    w, v = np.linalg.eigh(0.5 * (e + e.conj().T))
    return tp_normalize((v * np.clip(w, floor, None)) @ v.conj().T)


# -- maximum likelihood -----------------------------------------------------

@dataclass
class MleResult:
    process: np.ndarray
    loglike: float
    iterations: int
    converged: bool
    history: np.ndarray

    def provenance(self) -> dict:
        return {"iterations": self.iterations, "converged": self.converged,
                "final_loglike": self.loglike}


def _step(e, k, step, k0, eye):
    """One diluted update, or None if numerically unusable."""
    m = (1 - step) * eye + (step / k0) * k
    with np.errstate(over="ignore", invalid="ignore"):
        cand = m @ e @ m
    if not np.all(np.isfinite(cand)):
        return None
    lam = np.linalg.eigvalsh(core.output_trace(cand))
    if lam[0] <= 1e-14 * lam[-1]:
        return None
    return tp_normalize(cand)


def _extrapolate(e, e_prev, beta, floor=1e-13):
    """e + beta (e - e_prev), eigenvalues clipped to floor, then made trace preserving."""
    y = e + beta * (e - e_prev)
    w, v = np.linalg.eigh(0.5 * (y + y.conj().T))
    y = (v * np.clip(w, floor, None)) @ v.conj().T
    if np.linalg.eigvalsh(core.output_trace(y))[0] <= 0:
        return None
    return tp_normalize(y)


def maximize(like: Likelihood, opts: MleOptions = MleOptions(), start: np.ndarray | None = None) -> MleResult:
    """Run the diluted fixed-point iteration on a reduced likelihood."""
    missing = np.flatnonzero(~like.settings_present())
    if len(missing):
        raise DataError(f"data set is missing {len(missing)} of {like.n_settings} settings: "
                        f"{missing.tolist()}")
    d = like.dim
    eye = np.eye(d * d)
    e = eye / d if start is None else np.array(start, dtype=complex)
    k0 = like.total / d
    k, ll = like.gradient(e)
    history = [ll]
    dil = opts.dilution
    e_prev, t_mom = e, 1.0
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        step = dil
        cand = None
        while step >= MIN_STEP:
            cand = _step(e, k, step, k0, eye)
            if cand is not None:
                k_new, ll_new = like.gradient(cand)
                if ll_new >= ll:
                    break
                cand = None
            step *= 0.5
        if cand is None:
            # no ascent even for a vanishing step: stationary point
            converged = True
            break
        if ll_new < history[-1] - MONOTONE_TOL:
            raise MonotonicityError(f"log-likelihood fell from {history[-1]} to {ll_new}")
        if opts.adapt:
            dil = min(MAX_STEP, 1.5 * dil) if step == dil else step
        if opts.momentum:
            # Nesterov-style extrapolation, kept only if it beats the plain step
            t_next = 0.5 * (1 + np.sqrt(1 + 4 * t_mom ** 2))
            y = _extrapolate(cand, e_prev, (t_mom - 1) / t_next)
            e_prev = cand
            t_mom = 1.0
            if y is not None:
                k_y, ll_y = like.gradient(y)
                if ll_y > ll_new:
                    cand, k_new, ll_new, t_mom = y, k_y, ll_y, t_next
        gain = ll_new - ll
        e, k, ll = cand, k_new, ll_new
        history.append(ll)
        if gain < opts.tol_loglike:
            converged = True
            break
    if not converged:
        warnings.warn(f"maximum-likelihood iteration did not converge in {opts.max_iters} "
                      "iterations; returning the last iterate", ConvergenceWarning, stacklevel=2)
    return MleResult(e, ll, it, converged, np.asarray(history))


def reconstruct_full(data, lm: LikelihoodModel = LikelihoodModel(),
                     opts: MleOptions = MleOptions()) -> MleResult:
    """Two-qubit reconstruction with iteration diagnostics."""
    like = build_likelihood(data, lm)
    start = None
    if opts.start == "linear" and like.settings_present().all():
        start = project_to_cptp(linear_inversion(data, lm).process)
    return maximize(like, opts, start)


def reconstruct(data, lm: LikelihoodModel = LikelihoodModel(), opts: MleOptions = MleOptions()) -> np.ndarray:
    """Physical 16x16 process matrix maximising the likelihood of ``data``."""
    return reconstruct_full(data, lm, opts).process


def reconstruct_single_qubit(data, qubit: int, lm: LikelihoodModel = LikelihoodModel(),
                             opts: MleOptions = MleOptions()) -> MleResult:
    """4x4 process matrix of one ion from the marginal counts of a product-state run."""
    return maximize(single_qubit_likelihood(data, qubit, lm), opts)


def result_document(result: MleResult, data, lm: LikelihoodModel, opts: MleOptions,
                    extra: dict | None = None) -> dict:
    """Matrix JSON with a provenance block."""
    prov = {"options": opts.to_dict(), "likelihood": lm.to_dict(), **result.provenance()}
    if isinstance(data, Dataset):
        prov["dataset_sha256"] = data.sha256()
        prov["dataset_metadata"] = data.metadata
    prov.update(extra or {})
    return core.matrix_to_json(result.process, provenance=prov)
