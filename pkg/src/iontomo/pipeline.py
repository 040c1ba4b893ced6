"""End-to-end runs shared by the command line and the acceptance checks."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import core
from .circuit import PhaseLedger, build_u_sequence, ideal_unitary_of
from .detect import CountResponse, Dataset, ExactData, simulate_dataset
from .noise import NoiseModel
from .tomo import LikelihoodModel, MleOptions, MleResult, reconstruct_full, reconstruct_single_qubit

# Reference values and acceptance bands for the summary table.
REFERENCE = {
    "F_U": (0.922, (0.907, 0.937)),
    "fbar_U": (0.940, (0.928, 0.952)),
    "F_U2": (0.853, (0.833, 0.873)),
    "F_U2_over_F_UU": (1.003, (0.98, 1.02)),
    "single_qubit_fbar": (0.97, (0.96, 0.98)),
    "bias_fbar": (0.989, (0.984, 0.994)),
    "phase_ratio": (2.72, (2.67, 2.77)),
}


@dataclass(frozen=True)
class Sequences:
    u: object
    uu: object
    single: object

    @classmethod
    def build(cls, ledger: PhaseLedger = PhaseLedger()) -> "Sequences":
        u = build_u_sequence(ledger)
        return cls(u, u + u, build_u_sequence(ledger, include_force=False))


def ideal_process(seq) -> np.ndarray:
    return core.unitary_to_process(ideal_unitary_of(seq))


def derived_seeds(seed: int, n: int) -> list[int]:
    """Independent integer seeds for the data sets of one run."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64) >> 1]


def simulate_pair(seqs: Sequences, model: NoiseModel, resp: CountResponse, shots: int,
                  seed: int) -> tuple[Dataset, Dataset]:
    s_u, s_uu = derived_seeds(seed, 2)
    d_u = simulate_dataset(seqs.u, model, resp, shots, s_u, metadata={"sequence": "U", "run_seed": seed})
    d_uu = simulate_dataset(seqs.uu, model, resp, shots, s_uu, metadata={"sequence": "UU", "run_seed": seed})
    return d_u, d_uu


def fidelity_report(e_u: np.ndarray, e_u2: np.ndarray, seqs: Sequences) -> dict:
    """Fidelities of the reconstructed U and U^2 and their repeatability."""
    ideal_u = ideal_process(seqs.u)
    ideal_uu = ideal_process(seqs.uu)
    e_uu = core.compose_processes(e_u, e_u)
    f_u = core.entanglement_fidelity(e_u, ideal_u)
    f_u2 = core.entanglement_fidelity(e_u2, ideal_uu)
    f_uu = core.entanglement_fidelity(e_uu, ideal_uu)
    return {
        "F_U": f_u,
        "fbar_U": core.mean_state_fidelity(e_u, ideal_u),
        "F_U2": f_u2,
        "fbar_U2": core.mean_state_fidelity(e_u2, ideal_uu),
        "F_UU": f_uu,
        "F_U2_over_F_UU": f_u2 / f_uu,
        "fbar_UU_vs_U2": core.mean_state_fidelity(e_uu, e_u2),
    }


def single_qubit_fidelities(data, seq, lm: LikelihoodModel, opts: MleOptions) -> tuple[list[float], list[MleResult]]:
    """Mean state fidelity of each ion's reconstructed process against its ideal rotation."""
    ideal = core.split_product(ideal_unitary_of(seq))
    out, results = [], []
    for q in (1, 2):
        r = reconstruct_single_qubit(data, q, lm, opts)
        out.append(core.mean_state_fidelity(r.process, core.unitary_to_process(ideal[q - 1])))
        results.append(r)
    return out, results


def reconstruct_pair(d_u, d_uu, lm: LikelihoodModel, opts: MleOptions) -> tuple[MleResult, MleResult]:
    return reconstruct_full(d_u, lm, opts), reconstruct_full(d_uu, lm, opts)


def exact_pair(seqs: Sequences) -> tuple[ExactData, ExactData]:
    return ExactData.from_process(ideal_process(seqs.u)), ExactData.from_process(ideal_process(seqs.uu))


def basis_labels(n_qubits: int = 2) -> list[str]:
    """Row/column labels 'block:inner' of a process matrix, e.g. '10:01'."""
    single = core.BASIS_LABEL.split(",") if n_qubits == 2 else ["1", "0"]
    return [f"{i}:{j}" for i in single for j in single]


def magnitude_grid_csv(e: np.ndarray) -> str:
    """Long-format |E_rc| table for bar or heat-map plots."""
    labels = basis_labels()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "row_label", "col_label", "magnitude"])
    mag = np.abs(e)
    for r in range(e.shape[0]):
        for c in range(e.shape[1]):
            w.writerow([r, c, labels[r], labels[c], f"{mag[r, c]:.8f}"])
    return buf.getvalue()


def summary_rows(values: dict) -> list[tuple[str, float, float, tuple[float, float], bool]]:
    rows = []
    for key, (target, (lo, hi)) in REFERENCE.items():
        if key in values:
            v = float(values[key])
            rows.append((key, v, target, (lo, hi), lo <= v <= hi))
    return rows


def summary_table(values: dict) -> str:
    lines = [f"{'quantity':<18} {'value':>9} {'target':>8} {'band':>17}  in band"]
    for key, v, target, (lo, hi), ok in summary_rows(values):
        lines.append(f"{key:<18} {v:>9.4f} {target:>8.3f} [{lo:.3f}, {hi:.3f}]  {'yes' if ok else 'NO'}")
    return "\n".join(lines)
