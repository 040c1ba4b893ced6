"""Pulse-level sequence for the composite operation U and tomography settings.

Each ion is modelled as a qubit that lives either in the field-independent
memory manifold (|1>, |0>) or, between the two transfer stages, in the gate
manifold (|1_G>, |0_G>). Transfers are resonant pi pulses whose only effect
on the qubit is a level-dependent phase; transport, separation, recombination
and recooling are markers that only cost time.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Union

import numpy as np

from . import core

TRANSPORT_DISTANCE_UM = 960.0
TRANSPORT_TIME_S = 3.6e-3
RECOOL_TIME_S = 5.1e-3
ZONE_SPACING_UM = 240.0


@dataclass(frozen=True)
class PhaseLedger:
    """Phases imprinted by the manifold-transfer and spin-echo pulses (rad)."""

    phi1: float = 0.0
    phi0: float = 0.0
    phi1p: float = 0.0
    phi0p: float = 0.0
    phiG: float = 0.0
    phiGp: float = 0.0

    def __getitem__(self, label: str) -> float:
        return getattr(self, label)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "PhaseLedger":
        return cls(*rng.uniform(0, 2 * np.pi, size=6))


@dataclass(frozen=True)
class SingleQubitRotation:
    qubit: int
    theta: float
    phi: float
    manifold: str = "memory"
    role: str = "gate"
    kind: str = field(default="rotation", init=False)


@dataclass(frozen=True)
class ManifoldTransfer:
    """R(pi, phi) on |level> <-> |level_G>, applied to both ions together."""

    level: str  # "1" or "0"
    direction: str  # "in" (memory -> gate) or "out"
    phase_label: str
    kind: str = field(default="transfer", init=False)


@dataclass(frozen=True)
class ForcePulse:
    """One half of the state-dependent force; stark_phase is the common-mode
    single-qubit phase from the mode excited for every spin configuration."""

    fraction: float = 0.5
    stark_phase: float = 0.0
    kind: str = field(default="force", init=False)


@dataclass(frozen=True)
class SpinEchoPi:
    phase_label: str
    kind: str = field(default="echo", init=False)


@dataclass(frozen=True)
class FrameShift:
    """Virtual Z: the phase offset carried by all later pulses on this qubit."""

    qubit: int
    angle: float
    kind: str = field(default="frame", init=False)


@dataclass(frozen=True)
class TransportMarker:
    distance_um: float
    duration_s: float = TRANSPORT_TIME_S
    kind: str = field(default="transport", init=False)


@dataclass(frozen=True)
class SeparateMarker:
    kind: str = field(default="separate", init=False)


@dataclass(frozen=True)
class RecombineMarker:
    kind: str = field(default="recombine", init=False)


@dataclass(frozen=True)
class RecoolMarker:
    duration_s: float = RECOOL_TIME_S
    kind: str = field(default="recool", init=False)


PrimitiveOp = Union[
    SingleQubitRotation, ManifoldTransfer, ForcePulse, SpinEchoPi, FrameShift,
    TransportMarker, SeparateMarker, RecombineMarker, RecoolMarker,
]

_OP_TYPES = {
    "rotation": SingleQubitRotation, "transfer": ManifoldTransfer, "force": ForcePulse,
    "echo": SpinEchoPi, "frame": FrameShift, "transport": TransportMarker,
    "separate": SeparateMarker, "recombine": RecombineMarker, "recool": RecoolMarker,
}

MARKERS = ("transport", "separate", "recombine", "recool")


class SequenceError(ValueError):
    """Raised for structurally malformed gate sequences."""


@dataclass(frozen=True)
class GateSequence:
    ops: tuple
    ledger: PhaseLedger = PhaseLedger()

    def __add__(self, other: "GateSequence") -> "GateSequence":
        if other.ledger != self.ledger:
            raise SequenceError("cannot concatenate sequences with different phase ledgers")
        return GateSequence(self.ops + other.ops, self.ledger)

    def repeat(self, n: int) -> "GateSequence":
        return GateSequence(self.ops * n, self.ledger)

    def count(self, kind: str) -> int:
        return sum(op.kind == kind for op in self.ops)

    def transport_distance(self) -> float:
        return sum(op.distance_um for op in self.ops if op.kind == "transport")

    def rotations_per_ion(self) -> int:
        """Raman pulses seen by each ion (pi/2 gates, transfers, echoes)."""
        n_rot = sum(op.kind == "rotation" and op.qubit == 1 for op in self.ops)
        return n_rot + self.count("transfer") + self.count("echo")

    def duration(self) -> float:
        return sum(getattr(op, "duration_s", 0.0) for op in self.ops)

    def to_json(self) -> dict:
        return {
            "ledger": asdict(self.ledger),
            "ops": [{k: v for k, v in asdict(op).items()} for op in self.ops],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GateSequence":
        ops = []
        for d in doc["ops"]:
            d = dict(d)
            cls_ = _OP_TYPES[d.pop("kind")]
            ops.append(cls_(**d))
        return cls(tuple(ops), PhaseLedger(**doc.get("ledger", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def check_structure(seq: GateSequence) -> None:
    """Transfers come in matched in/out pairs around the gate block, with
    exactly two echo pulses while the qubits sit in the gate manifold."""
    in_gate: set[str] = set()
    echoes = 0
    for op in seq.ops:
        if op.kind == "transfer":
            if op.direction == "in":
                if op.level in in_gate:
                    raise SequenceError(f"level {op.level} transferred in twice")
                in_gate.add(op.level)
                if len(in_gate) == 2:
                    echoes = 0
            elif op.direction == "out":
                if op.level not in in_gate:
                    raise SequenceError(f"level {op.level} transferred out before in")
                if len(in_gate) == 2 and echoes != 2:
                    raise SequenceError(f"expected 2 spin-echo pulses in gate manifold, got {echoes}")
                in_gate.discard(op.level)
            else:
                raise SequenceError(f"bad transfer direction {op.direction!r}")
        elif op.kind in ("echo", "force"):
            if len(in_gate) != 2:
                raise SequenceError(f"{op.kind} pulse outside the gate manifold")
            echoes += op.kind == "echo"
        elif op.kind == "rotation" and in_gate:
            raise SequenceError("memory-manifold rotation while qubits are in the gate manifold")
    if in_gate:
        raise SequenceError(f"unmatched transfer for levels {sorted(in_gate)}")


# -- per-op unitaries -------------------------------------------------------

def transfer_factor(op: ManifoldTransfer, ledger: PhaseLedger) -> complex:
    """Amplitude picked up by the transferred level.

    The memory state is the lower state of the pi-pulse pair, so going in
    gives -i e^{i phi} and coming back gives -i e^{-i phi'}.
    """
    phi = ledger[op.phase_label]
    sign = 1 if op.direction == "in" else -1
    return -1j * np.exp(1j * sign * phi)


def op_unitary(op, ledger: PhaseLedger, scale: float = 1.0, gate_phase_scale: float = 1.0,
               gate_phase_offset: float = 0.0) -> np.ndarray | None:
    """4x4 unitary of a primitive op, or None for pure markers.

    ``scale`` multiplies every rotation angle (Rabi-frequency fluctuation);
    the force-pulse phase scales as ``gate_phase_scale`` (force squared)
    plus an additive ``gate_phase_offset``.
    """
    kind = op.kind
    if kind == "rotation":
        return core.embed(core.rotation(scale * op.theta, op.phi), op.qubit)
    if kind == "transfer":
        f = transfer_factor(op, ledger)
        d = np.diag([f, 1]) if op.level == "1" else np.diag([1, f])
        return np.kron(d, d)
    if kind == "echo":
        r = core.rotation(scale * np.pi, ledger[op.phase_label])
        return np.kron(r, r)
    if kind == "force":
        ph = (np.pi / 2) * op.fraction * gate_phase_scale + gate_phase_offset * op.fraction
        d = np.diag([1, np.exp(1j * ph), np.exp(1j * ph), 1])
        if op.stark_phase:
            rz = core.z_rotation(op.stark_phase)
            d = d @ np.kron(rz, rz)
        return d
    if kind == "frame":
        return core.embed(core.z_rotation(-op.angle), op.qubit)
    if kind in MARKERS:
        return None
    raise SequenceError(f"unknown op kind {kind!r}")


def ideal_unitary_of(seq: GateSequence) -> np.ndarray:
    """Product of the ideal unitaries of all ops (first op acts first)."""
    check_structure(seq)
    u = np.eye(4, dtype=complex)
    for op in seq.ops:
        m = op_unitary(op, seq.ledger)
        if m is not None:
            u = m @ u
    return u


# -- the U sequence ---------------------------------------------------------

def compensation_phase(ledger: PhaseLedger) -> tuple[float, float]:
    """Per-qubit phase offset for every pulse after the gate block.

    The transfer pair leaves Rz((phi0 - phi0') - (phi1 - phi1')) on each
    qubit and the echo pair Rz(2 (phiG' - phiG)); both commute with the
    phase gate, so shifting later pulse phases by the sum undoes them.
    """
    a = (ledger.phi0 - ledger.phi0p) - (ledger.phi1 - ledger.phi1p) + 2 * (ledger.phiGp - ledger.phiG)
    a = float(np.angle(np.exp(1j * a)))
    if abs(a) < 1e-15:
        a = 0.0
    return a, a


def gate_block(ledger: PhaseLedger = PhaseLedger(), include_force: bool = True,
               stark_phase: float = 0.0) -> list:
    force = [ForcePulse(0.5, stark_phase)] if include_force else []
    return [
        ManifoldTransfer("1", "in", "phi1"),
        ManifoldTransfer("0", "in", "phi0"),
        *force,
        SpinEchoPi("phiG"),
        *force,
        SpinEchoPi("phiGp"),
        ManifoldTransfer("0", "out", "phi0p"),
        ManifoldTransfer("1", "out", "phi1p"),
    ]


def build_u_sequence(ledger: PhaseLedger = PhaseLedger(), compensate: bool = True,
                     final_phases: tuple[float, float] = (0.0, 0.0),
                     include_force: bool = True, stark_phase: float = 0.0) -> GateSequence:
    """Pulse sequence for U: pi/2 layer, recombine/recool, gate block,
    separate/transport, pi/2 layer.

    With the default final phases the ideal composition equals U exactly
    (the derived global phase is 1). ``include_force=False`` gives the
    rotation-only sequence used to characterise single-qubit errors.
    """
    comp = compensation_phase(ledger) if compensate else (0.0, 0.0)
    ops = [
        SingleQubitRotation(1, np.pi / 2, 0.0),
        SingleQubitRotation(2, np.pi / 2, 0.0),
        RecombineMarker(),
        RecoolMarker(),
        *gate_block(ledger, include_force, stark_phase),
        SeparateMarker(),
        TransportMarker(TRANSPORT_DISTANCE_UM),
        SingleQubitRotation(1, np.pi / 2, final_phases[0] + comp[0]),
        SingleQubitRotation(2, np.pi / 2, final_phases[1] + comp[1]),
    ]
    if compensate and any(comp):
        ops += [FrameShift(1, comp[0]), FrameShift(2, comp[1])]
    return GateSequence(tuple(ops), ledger)


def build_identity_sequence() -> GateSequence:
    return GateSequence(())


# -- tomography settings ----------------------------------------------------

# (name, theta, phi) producing each state from |0> via R(theta, phi).
INPUT_STATES_1Q = (
    ("1", np.pi, 0.0),
    ("0", 0.0, 0.0),
    ("-", np.pi / 2, np.pi / 2),   # (|0> - |1>)/sqrt2
    ("+i", np.pi / 2, np.pi),      # (|0> + i|1>)/sqrt2
)

# Pre-measurement rotation mapping each Pauli eigenbasis onto Z.
ANALYSIS_BASES_1Q = (
    ("Z", 0.0, 0.0),
    ("X", np.pi / 2, np.pi / 2),
    ("Y", np.pi / 2, 0.0),
)

N_INPUTS = 16
N_ANALYSES = 9


def single_qubit_input(name: str) -> np.ndarray:
    r = 1 / np.sqrt(2)
    return {
        "1": core.KET1,
        "0": core.KET0,
        "-": r * (core.KET0 - core.KET1),
        "+i": r * (core.KET0 + 1j * core.KET1),
    }[name]


@dataclass(frozen=True)
class InputSetting:
    index: int
    labels: tuple[str, str]
    state: np.ndarray
    rotations: tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class AnalysisSetting:
    index: int
    bases: tuple[str, str]
    rotations: tuple[tuple[float, float], tuple[float, float]]


def input_state(index: int) -> InputSetting:
    if not 0 <= index < N_INPUTS:
        raise IndexError(f"input index {index} out of range 0..15")
    a, b = divmod(index, 4)
    (na, ta, pa), (nb, tb, pb) = INPUT_STATES_1Q[a], INPUT_STATES_1Q[b]
    state = np.kron(single_qubit_input(na), single_qubit_input(nb))
    return InputSetting(index, (na, nb), state, ((ta, pa), (tb, pb)))


def analysis_setting(index: int) -> AnalysisSetting:
    if not 0 <= index < N_ANALYSES:
        raise IndexError(f"analysis index {index} out of range 0..8")
    a, b = divmod(index, 3)
    (na, ta, pa), (nb, tb, pb) = ANALYSIS_BASES_1Q[a], ANALYSIS_BASES_1Q[b]
    return AnalysisSetting(index, (na, nb), ((ta, pa), (tb, pb)))


def rotation_pair(rot: tuple[tuple[float, float], tuple[float, float]], scale: float = 1.0) -> np.ndarray:
    (t1, p1), (t2, p2) = rot
    return np.kron(core.rotation(scale * t1, p1), core.rotation(scale * t2, p2))


def prep_unitary(index: int, scale: float = 1.0) -> np.ndarray:
    return rotation_pair(input_state(index).rotations, scale)


def analysis_unitary(index: int, scale: float = 1.0) -> np.ndarray:
    return rotation_pair(analysis_setting(index).rotations, scale)


GROUND = np.kron(core.KET0, core.KET0)


def with_ledger(seq: GateSequence, ledger: PhaseLedger) -> GateSequence:
    return replace(seq, ledger=ledger)
