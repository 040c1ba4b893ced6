"""Two-qubit states, gates, process matrices and fidelity measures.

All objects are plain numpy arrays in the fixed basis |11>, |10>, |01>, |00>.
Qubit 1 is the first tensor factor (the ion held in zone A). A single-qubit
vector is ordered (|1>, |0>), so ``np.kron`` of two single-qubit objects
lands directly in the two-qubit basis.

A process matrix is the 16x16 block matrix

    E = sum_ij |i><j| (x) channel(|i><j|),

so ``E.reshape(4, 4, 4, 4)[i, k, j, l]`` is element (k, l) of block (i, j).
"""
from __future__ import annotations

import json
from itertools import product
from pathlib import Path

import numpy as np

DIM = 4
BASIS = ("11", "10", "01", "00")
BASIS_LABEL = ",".join(BASIS)

UNITARY_TOL = 1e-8
HERMITIAN_TOL = 1e-9
PSD_TOL = -1e-8
TP_TOL = 1e-8
STATE_PSD_TOL = -1e-9
# eigenvalues below this are roundoff; their square roots would be ~1e-8
ROOT_FLOOR = 1e-13

KET1 = np.array([1.0, 0.0], dtype=complex)
KET0 = np.array([0.0, 1.0], dtype=complex)

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (PAULI_I, PAULI_X, PAULI_Y, PAULI_Z)


class ValidationError(ValueError):
    """Raised when an input is not a valid state, unitary or channel."""


def rotation(theta: float, phi: float) -> np.ndarray:
    """Single-qubit rotation R(theta, phi) in the (|1>, |0>) basis."""
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    return np.array(
        [[c, -1j * np.exp(-1j * phi) * s],
         [-1j * np.exp(1j * phi) * s, c]],
        dtype=complex,
    )


def z_rotation(angle: float) -> np.ndarray:
    """diag(e^{-i a/2}, e^{i a/2}); satisfies R(t, p) = Rz(p) R(t, 0) Rz(-p)."""
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


def phase_gate() -> np.ndarray:
    """The geometric phase gate D[(1, i, i, 1)]."""
    return np.diag([1, 1j, 1j, 1]).astype(complex)


def ideal_u() -> np.ndarray:
    """Target composite operation U (four pi/2 pulses around the phase gate)."""
    m = np.array(
        [[-1, 0, 0, 1j],
         [0, 1, 1j, 0],
         [0, 1j, 1, 0],
         [1j, 0, 0, -1]],
        dtype=complex,
    )
    return -np.exp(-1j * np.pi / 4) / np.sqrt(2) * m


def embed(op: np.ndarray, qubit: int) -> np.ndarray:
    """Lift a 2x2 operator onto qubit 1 or 2 of the pair."""
    if qubit == 1:
        return np.kron(op, PAULI_I)
    if qubit == 2:
        return np.kron(PAULI_I, op)
    raise ValueError(f"qubit must be 1 or 2, got {qubit}")


def unitarity_residual(u: np.ndarray) -> float:
    u = np.asarray(u)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def check_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {u.shape}")
    res = unitarity_residual(u)
    if res > tol:
        raise ValidationError(f"matrix is not unitary (residual {res:.2e})")
    return u


def phase_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """|Tr(A^dag B)| / d; equals 1 iff A and B agree up to a global phase."""
    return float(abs(np.trace(np.asarray(a).conj().T @ np.asarray(b))) / a.shape[0])


def global_phase(a: np.ndarray, b: np.ndarray) -> complex:
    """Phase c with B ~= c A (only meaningful when phase_overlap is ~1)."""
    t = np.trace(np.asarray(a).conj().T @ np.asarray(b))
    return complex(t / abs(t))


def split_product(u: np.ndarray, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """(A, B) with U = A (x) B, each unitary; raises if U is entangling."""
    m = np.asarray(u).reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    w, s, vh = np.linalg.svd(m)
    if s[1] > tol * s[0]:
        raise ValidationError(f"not a product operator (second singular value {s[1]:.2e})")
    a = w[:, 0].reshape(2, 2) * np.sqrt(s[0])
    b = vh[0].reshape(2, 2) * np.sqrt(s[0])
    # split the norm so both factors are unitary
    na = np.sqrt(abs(np.linalg.det(a)))
    return a / na, b * na


def density_matrix(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def check_pure_state(psi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (DIM,):
        raise ValidationError(f"expected 4 amplitudes, got shape {psi.shape}")
    norm = float(np.vdot(psi, psi).real)
    if abs(norm - 1) > tol:
        raise ValidationError(f"state is not normalized (|psi|^2 = {norm})")
    return psi


def check_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (DIM, DIM):
        raise ValidationError(f"expected 4x4 density matrix, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValidationError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValidationError(f"density matrix trace is {np.trace(rho).real}")
    if np.linalg.eigvalsh(rho).min() < STATE_PSD_TOL:
        raise ValidationError("density matrix is not positive semidefinite")
    return rho


# -- process matrices -------------------------------------------------------

def blocks(e: np.ndarray) -> np.ndarray:
    """View of a process matrix as [i, k, j, l] = block(i, j)[k, l]."""
    d = int(round(np.sqrt(e.shape[0])))
    return np.asarray(e).reshape(d, d, d, d)


def output_trace(e: np.ndarray) -> np.ndarray:
    """Partial trace over the output factor: [Tr block(i, j)]_ij."""
    return np.einsum("ikjk->ij", blocks(e))


def cptp_violation(e: np.ndarray) -> dict:
    """Hermiticity, positivity and trace-preservation residuals."""
    e = np.asarray(e)
    d = int(round(np.sqrt(e.shape[0])))
    herm = float(np.max(np.abs(e - e.conj().T)))
    min_eig = float(np.linalg.eigvalsh(0.5 * (e + e.conj().T)).min())
    tp = float(np.max(np.abs(output_trace(e) - np.eye(d))))
    return {"hermitian": herm, "min_eigenvalue": min_eig, "trace_preservation": tp}


def is_cptp(e: np.ndarray, herm_tol=HERMITIAN_TOL, psd_tol=PSD_TOL, tp_tol=TP_TOL) -> bool:
    v = cptp_violation(e)
    return v["hermitian"] <= herm_tol and v["min_eigenvalue"] >= psd_tol and v["trace_preservation"] <= tp_tol


def check_process(e: np.ndarray, herm_tol=HERMITIAN_TOL, psd_tol=PSD_TOL, tp_tol=TP_TOL) -> np.ndarray:
    e = np.asarray(e, dtype=complex)
    if e.ndim != 2 or e.shape[0] != e.shape[1] or int(round(np.sqrt(e.shape[0]))) ** 2 != e.shape[0]:
        raise ValidationError(f"not a process matrix shape: {e.shape}")
    v = cptp_violation(e)
    if v["hermitian"] > herm_tol:
        raise ValidationError(f"process matrix not Hermitian ({v['hermitian']:.2e})")
    if v["min_eigenvalue"] < psd_tol:
        raise ValidationError(f"process matrix not positive ({v['min_eigenvalue']:.2e})")
    if v["trace_preservation"] > tp_tol:
        raise ValidationError(f"process not trace preserving ({v['trace_preservation']:.2e})")
    return e


def unitary_to_process(u: np.ndarray) -> np.ndarray:
    """Process matrix of rho -> U rho U^dag; block (i, j) = U|i><j|U^dag."""
    u = check_unitary(u)
    v = u.T.reshape(-1)  # v[d*i + k] = U[k, i]
    return np.outer(v, v.conj())


def kraus_to_process(kraus) -> np.ndarray:
    e = 0
    for k in kraus:
        v = np.asarray(k, dtype=complex).T.reshape(-1)
        e = e + np.outer(v, v.conj())
    return e


def process_to_kraus(e: np.ndarray, tol: float = 1e-12) -> list[np.ndarray]:
    d = int(round(np.sqrt(e.shape[0])))
    w, v = np.linalg.eigh(0.5 * (e + e.conj().T))
    return [np.sqrt(wk) * v[:, k].reshape(d, d).T for k, wk in enumerate(w) if wk > tol]


def identity_process(d: int = DIM) -> np.ndarray:
    return unitary_to_process(np.eye(d, dtype=complex))


def depolarizing_process(p: float = 1.0, d: int = DIM) -> np.ndarray:
    """rho -> (1 - p) rho + p Tr(rho) I/d; p = 1 is the fully depolarizing map."""
    return (1 - p) * identity_process(d) + p * np.eye(d * d, dtype=complex) / d


def apply_process(e: np.ndarray, rho: np.ndarray, trace_tol: float = 1e-6) -> np.ndarray:
    """channel(rho) = sum_ij rho_ij block(i, j)."""
    rho = np.asarray(rho, dtype=complex)
    out = np.einsum("ij,ikjl->kl", rho, blocks(e))
    dev = abs(np.trace(out) - np.trace(rho))
    if dev > trace_tol:
        raise ValidationError(f"trace changed by {dev:.2e}")
    return out


def compose_processes(e_second: np.ndarray, e_first: np.ndarray) -> np.ndarray:
    """Process matrix of the map rho -> second(first(rho))."""
    b1 = blocks(e_first)
    b2 = blocks(e_second)
    d = b1.shape[0]
    out = np.einsum("ikjl,kmln->imjn", b1, b2)
    return out.reshape(d * d, d * d)


def entanglement_fidelity(e: np.ndarray, e_ideal: np.ndarray) -> float:
    """Tr(E_ideal E) / d^2."""
    e = np.asarray(e)
    val = np.trace(np.asarray(e_ideal) @ e) / e.shape[0]
    return float(val.real)


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if w.min() < STATE_PSD_TOL:
        raise ValidationError(f"density matrix eigenvalue {w.min():.2e} below tolerance")
    w = np.where(w < ROOT_FLOOR, 0.0, w)
    return (v * np.sqrt(w)) @ v.conj().T


def state_fidelity(rho1: np.ndarray, rho2: np.ndarray) -> float:
    """Jozsa fidelity [Tr sqrt(sqrt(rho1) rho2 sqrt(rho1))]^2.

    Eigenvalues down to -1e-9 are accepted; anything below ROOT_FLOOR is
    zeroed before taking roots.
    """
    s = _psd_sqrt(np.asarray(rho1, dtype=complex))
    m = s @ np.asarray(rho2, dtype=complex) @ s
    w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    w = np.where(w < ROOT_FLOOR, 0.0, w)
    return float(min(np.sum(np.sqrt(w)) ** 2, 1.0))


def single_qubit_eigenstates() -> list[np.ndarray]:
    """The six eigenstates of sigma_x, sigma_y, sigma_z in (|1>, |0>) order."""
    r = 1 / np.sqrt(2)
    return [
        KET0, KET1,
        r * (KET0 + KET1), r * (KET0 - KET1),
        r * (KET0 + 1j * KET1), r * (KET0 - 1j * KET1),
    ]


def pauli_eigenstate_set() -> list[np.ndarray]:
    """All 36 products of single-qubit Pauli eigenstates."""
    single = single_qubit_eigenstates()
    return [np.kron(a, b) for a, b in product(single, single)]


def mean_state_fidelity(e_a: np.ndarray, e_b: np.ndarray, states=None) -> float:
    """Average Jozsa fidelity between the outputs of two channels.

    Defaults to the Pauli eigenstates: 6 for one qubit, 36 for two.
    """
    if states is None:
        states = single_qubit_eigenstates() if np.shape(e_a)[0] == 4 else pauli_eigenstate_set()
    vals = []
    for psi in states:
        rho = density_matrix(psi)
        vals.append(state_fidelity(apply_process(e_a, rho), apply_process(e_b, rho)))
    return float(np.mean(vals))


def random_kraus_channel(rng: np.random.Generator, n_kraus: int = 4, d: int = DIM) -> np.ndarray:
    """Random CPTP map from a Gaussian Kraus set, as a process matrix."""
    g = rng.normal(size=(n_kraus, d, d)) + 1j * rng.normal(size=(n_kraus, d, d))
    s = np.einsum("kji,kjl->il", g.conj(), g)
    w, v = np.linalg.eigh(s)
    inv_sqrt = (v / np.sqrt(w)) @ v.conj().T
    return kraus_to_process([k @ inv_sqrt for k in g])


# -- serialization ----------------------------------------------------------

def matrix_to_json(m: np.ndarray, **extra) -> dict:
    m = np.asarray(m, dtype=complex)
    doc = {"basis": BASIS_LABEL, "shape": list(m.shape)}
    doc.update(extra)
    doc["data"] = [[[float(z.real), float(z.imag)] for z in row] for row in m]
    return doc


def matrix_from_json(doc: dict) -> np.ndarray:
    if doc.get("basis", BASIS_LABEL) != BASIS_LABEL:
        raise ValidationError(f"unsupported basis convention {doc['basis']!r}")
    arr = np.asarray(doc["data"], dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def save_matrix(path, m: np.ndarray, **extra) -> None:
    Path(path).write_text(json.dumps(matrix_to_json(m, **extra), indent=1))


def load_matrix(path) -> np.ndarray:
    return matrix_from_json(json.loads(Path(path).read_text()))
