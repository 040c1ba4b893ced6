"""Axial normal modes of a mixed-species ion chain and geometric-phase loops.

Positions are in units of the length scale l = (e^2 / (4 pi eps0 m w^2))^(1/3)
for the reference ion (mass m, axial frequency w); equal charges make the
equilibrium independent of the masses.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

TWO_PI = 2 * np.pi
MASS_BE_U = 9.012
MASS_MG_U = 23.985
DEFAULT_DETUNING = TWO_PI * 83.6e3
REFERENCE_SPLITTING = TWO_PI * 251e3


class ChainError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    """Four-ion chain. ``axial_frequency`` (rad/s) is the single reference-ion
    frequency; None means the value that puts the top two modes
    ``reference_splitting`` apart.
    """

    masses: tuple[float, ...] = (MASS_BE_U, MASS_MG_U, MASS_MG_U, MASS_BE_U)
    axial_frequency: float | None = None
    reference_splitting: float = REFERENCE_SPLITTING
    qubit_ions: tuple[int, int] = (0, 3)
    be_force_sign: int = -1  # force on the second qubit ion relative to the first

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.ndim != 1 or len(m) < 2 or np.any(m <= 0):
            raise ValueError("masses must be >= 2 positive values")
        if not np.allclose(m, m[::-1]):
            raise ValueError("mass order must be symmetric")
        if self.axial_frequency is not None and self.axial_frequency <= 0:
            raise ValueError("axial_frequency must be positive")
        if self.be_force_sign not in (1, -1):
            raise ValueError("be_force_sign must be +1 or -1")
        if len(set(self.qubit_ions)) != 2 or not all(0 <= i < len(m) for i in self.qubit_ions):
            raise ValueError("qubit_ions must be two distinct ion indices")
        object.__setattr__(self, "masses", tuple(float(x) for x in m))
        object.__setattr__(self, "qubit_ions", tuple(int(i) for i in self.qubit_ions))

    @property
    def n_ions(self) -> int:
        return len(self.masses)

    @property
    def reference_mass(self) -> float:
        return self.masses[self.qubit_ions[0]]

    def omega_ref(self) -> float:
        if self.axial_frequency is not None:
            return self.axial_frequency
        r = mode_ratios(self)
        return self.reference_splitting / (r[-1] - r[-2])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        d = dict(d)
        for key in ("masses", "qubit_ions"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


# -- equilibrium and Hessian ------------------------------------------------

def _coulomb_force(x: np.ndarray) -> np.ndarray:
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, np.inf)
    return np.sum(np.sign(d) / d**2, axis=1)


def potential_gradient(x: np.ndarray) -> np.ndarray:
    """dV/dx for V = sum x^2 / 2 + sum_{i<j} 1 / |x_i - x_j|."""
    return x - _coulomb_force(x)


def hessian(x: np.ndarray) -> np.ndarray:
    d = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(d, np.inf)
    h = -2.0 / d**3
    np.fill_diagonal(h, 1.0 + np.sum(2.0 / d**3, axis=1))
    return h


def equilibrium_positions(n_ions: int = 4, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Sorted equilibrium positions by damped Newton iteration."""
    if n_ions < 1:
        raise ValueError("need at least one ion")
    x = np.linspace(-1, 1, n_ions) * 0.5 * n_ions ** 0.6 if n_ions > 1 else np.zeros(1)
    g = potential_gradient(x)
    for _ in range(max_iter):
        if np.max(np.abs(g)) < tol:
            return 0.5 * (x - x[::-1])  # symmetrise away rounding
        dx = np.linalg.solve(hessian(x), -g)
        step = 1.0
        while True:
            trial = x + step * dx
            if np.all(np.diff(trial) > 0):
                g_trial = potential_gradient(trial)
                if np.linalg.norm(g_trial) < np.linalg.norm(g) or step < 1e-8:
                    break
            step *= 0.5
        x, g = trial, g_trial
    raise ChainError(f"equilibrium not converged: residual {np.max(np.abs(g)):.3e}")


# -- normal modes -----------------------------------------------------------

@dataclass(frozen=True)
class ModeSpectrum:
    frequencies: np.ndarray  # rad/s, ascending
    eigenvectors: np.ndarray  # columns are mass-weighted mode vectors
    positions: np.ndarray
    omega_ref: float
    masses: tuple[float, ...] = field(default=())

    @property
    def ratios(self) -> np.ndarray:
        return self.frequencies / self.omega_ref

    def to_dict(self) -> dict:
        return {
            "frequencies_hz": (self.frequencies / TWO_PI).tolist(),
            "frequency_ratios": self.ratios.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "positions": self.positions.tolist(),
            "reference_frequency_hz": self.omega_ref / TWO_PI,
        }


def mass_weighted_hessian(cfg: ChainConfig) -> np.ndarray:
    mu = np.asarray(cfg.masses) / cfg.reference_mass
    h = hessian(equilibrium_positions(cfg.n_ions))
    s = 1 / np.sqrt(mu)
    return s[:, None] * h * s[None, :]


def _eig(cfg: ChainConfig) -> tuple[np.ndarray, np.ndarray]:
    lam, vec = np.linalg.eigh(mass_weighted_hessian(cfg))
    if lam[0] <= 0:
        raise ChainError("Hessian is not positive definite")
    # fix signs: first qubit-ion component positive (else first nonzero one)
    for m in range(vec.shape[1]):
        v = vec[:, m]
        ref = v[cfg.qubit_ions[0]]
        if abs(ref) < 1e-12:
            ref = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
        vec[:, m] = v * np.sign(ref)
    return lam, vec


def mode_ratios(cfg: ChainConfig) -> np.ndarray:
    """Mode frequencies in units of the reference-ion axial frequency."""
    return np.sqrt(_eig(cfg)[0])


def axial_modes(cfg: ChainConfig = ChainConfig()) -> ModeSpectrum:
    lam, vec = _eig(cfg)
    w0 = cfg.omega_ref()
    return ModeSpectrum(w0 * np.sqrt(lam), vec, equilibrium_positions(cfg.n_ions), w0, cfg.masses)


def hessian_from_spectrum(spec: ModeSpectrum, cfg: ChainConfig) -> np.ndarray:
    """Rebuild the dimensionless Hessian from frequencies and eigenvectors."""
    mu = np.sqrt(np.asarray(cfg.masses) / cfg.reference_mass)
    a = (spec.eigenvectors * spec.ratios**2) @ spec.eigenvectors.T
    return mu[:, None] * a * mu[None, :]


# -- driven loops -----------------------------------------------------------

@dataclass(frozen=True)
class ForcedModeParams:
    drive: float  # Omega_m, rad/s
    detuning: float  # delta_m, rad/s, signed
    duration: float  # s

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.detuning == 0:
            raise ValueError("detuning must be nonzero")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    alpha: np.ndarray
    phase: float


def alpha_closed_form(p: ForcedModeParams, t) -> np.ndarray:
    return (p.drive / p.detuning) * (1 - np.exp(1j * p.detuning * np.asarray(t)))


def phase_closed_form(p: ForcedModeParams, t) -> np.ndarray:
    """Im of the path integral of alpha* d alpha up to time t."""
    x = p.detuning * np.asarray(t)
    return (p.drive / p.detuning) ** 2 * (x - np.sin(x))


def forced_trajectory(p: ForcedModeParams, n_points: int = 401) -> Trajectory:
    t = np.linspace(0, p.duration, n_points)
    return Trajectory(t, alpha_closed_form(p, t), float(phase_closed_form(p, p.duration)))


def integrate_trajectory(p: ForcedModeParams, rtol: float = 1e-12, atol: float = 1e-14) -> Trajectory:
    """Numerical solution of d alpha/dt = -i Omega e^{i delta t}, dPhi/dt = Im(alpha* d alpha/dt)."""
    def rhs(t, y):
        a = y[0] + 1j * y[1]
        da = -1j * p.drive * np.exp(1j * p.detuning * t)
        return [da.real, da.imag, (np.conj(a) * da).imag]

    sol = solve_ivp(rhs, (0, p.duration), [0.0, 0.0, 0.0], method="DOP853", rtol=rtol, atol=atol,
                    dense_output=False)
    if not sol.success:
        raise ChainError(sol.message)
    return Trajectory(sol.t, sol.y[0] + 1j * sol.y[1], float(sol.y[2, -1]))


def enclosed_area(alpha: np.ndarray) -> float:
    """Signed area of a closed phase-space path (shoelace formula)."""
    x, y = alpha.real, alpha.imag
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# -- two-mode gate ----------------------------------------------------------

def mode_couplings(spec: ModeSpectrum, cfg: ChainConfig) -> np.ndarray:
    """Relative drive on each mode per qubit ion, shape (modes, 2).

    An ion of relative mass mu moves b / sqrt(mu) per unit mode coordinate,
    whose zero-point extent scales as 1 / sqrt(omega); the second qubit ion
    carries the relative force sign.
    """
    mu = np.asarray(cfg.masses) / cfg.reference_mass
    i, j = cfg.qubit_ions
    b = spec.eigenvectors
    scale = 1 / np.sqrt(spec.ratios)
    return np.stack([b[i] / np.sqrt(mu[i]) * scale,
                     cfg.be_force_sign * b[j] / np.sqrt(mu[j]) * scale], axis=1)


@dataclass(frozen=True)
class GatePhases:
    delta: float
    splitting: float
    detunings: tuple[float, float]
    loops: tuple[int, int]
    phases: tuple[float, float]  # spin-spin phase of modes 3 and 4 per unit drive^2
    ratio: float

    def to_dict(self) -> dict:
        return {
            "delta_hz": self.delta / TWO_PI,
            "splitting_hz": self.splitting / TWO_PI,
            "three_delta_hz": 3 * self.delta / TWO_PI,
            "detunings_hz": [d / TWO_PI for d in self.detunings],
            "loops": list(self.loops),
            "phases": list(self.phases),
            "phase_ratio": self.ratio,
        }


def gate_phases(cfg: ChainConfig = ChainConfig(), delta: float = DEFAULT_DETUNING,
                splitting_tol: float = TWO_PI * 1e3) -> GatePhases:
    """Spin-dependent phase of the two highest modes for a drive at w3 + delta = w4 - 2 delta.

    For qubit spins z1, z2 = +-1 mode m is displaced by
    Omega_m = c1 z1 + c2 z2; the part of (Omega_m / delta_m)^2 that depends on
    z1 z2 is 2 c1 c2 / delta_m^2, and mode m runs k_m loops.
    """
    spec = axial_modes(cfg)
    w3, w4 = spec.frequencies[-2:]
    splitting = w4 - w3
    if abs(splitting - 3 * delta) > splitting_tol:
        raise ChainError(f"mode splitting {splitting / TWO_PI:.1f} Hz is not 3 x delta "
                         f"= {3 * delta / TWO_PI:.1f} Hz")
    drive = w3 + delta
    c = mode_couplings(spec, cfg)[-2:]
    detunings = (drive - w3, drive - w4)
    loops = (1, 2)
    phases = []
    for (c1, c2), dm, k in zip(c, detunings, loops):
        p = ForcedModeParams(drive=1.0, detuning=dm, duration=TWO_PI * k / abs(dm))
        phases.append(2 * c1 * c2 * float(phase_closed_form(p, p.duration)))
    return GatePhases(delta, splitting, detunings, loops, tuple(phases), phases[0] / phases[1])


def gate_phase_ratio(cfg: ChainConfig = ChainConfig(), delta: float = DEFAULT_DETUNING) -> float:
    return gate_phases(cfg, delta).ratio
