"""Bases, states and operator builders for the matter systems and the cavity.

Two matter systems are supported:

* a collective spin of ``N`` two-level atoms, stored in the Dicke basis
  ``|m>`` with ``m = -J..J`` ascending and ``J = N/2``, dispersively coupled
  to the cavity photon number (``omega_s * c^dag c * J_z``);
* a mechanical oscillator, stored in the undisplaced Fock basis, whose
  equilibrium is displaced by the intracavity photon number
  (``omega_m * a^dag a - g0 * c^dag c * (a + a^dag)``).

With one photon in the cavity the oscillator rotates about the shifted mode
``a - x1`` where ``x1 = g0/omega_m``; its eigenstates (displaced Fock
states) play the role the Dicke states play for the spin.  The conditional
(no-click) evolution of the joint system is generated by the non-Hermitian
``H_eff = H_matter + E0(t) c^dag + conj(E0) c - i (kappa_total/2) c^dag c``
in the frame rotating at the bare cavity frequency.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln

from .exceptions import CutoffError

# population allowed in the top retained level before a cutoff is rejected
LEAK_TOL = 1e-6


@dataclass(frozen=True)
class SpinModel:
    """Collective spin of n_atoms two-level atoms, J = n_atoms/2."""

    n_atoms: int
    omega_s: float = 1.0

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")

    @property
    def j(self) -> float:
        return self.n_atoms / 2.0

    @property
    def dim(self) -> int:
        return self.n_atoms + 1

    @property
    def m_values(self) -> np.ndarray:
        """J_z eigenvalues, ascending."""
        return np.arange(self.dim) - self.j

    @property
    def omega(self) -> float:
        return self.omega_s

    @property
    def mu(self) -> float:
        """Frequency-comb offset; zero for the spin."""
        return 0.0


@dataclass(frozen=True)
class MechModel:
    """Mechanical oscillator with photon-number-dependent displacement."""

    omega_m: float
    g0: float
    n_ph_max: int = 32

    def __post_init__(self):
        if self.omega_m <= 0:
            raise ValueError("omega_m must be > 0")
        if self.g0 <= 0:
            raise ValueError("g0 must be > 0")
        if self.n_ph_max < 2:
            raise ValueError("n_ph_max must be >= 2")

    @property
    def x1(self) -> float:
        """Single-photon displacement of the mode amplitude."""
        return self.g0 / self.omega_m

    @property
    def mu(self) -> float:
        """Frequency-comb offset x1**2 of the displaced-Fock ladder."""
        return self.x1 ** 2

    @property
    def dim(self) -> int:
        return self.n_ph_max + 1

    @property
    def m_values(self) -> np.ndarray:
        """Displaced-Fock quantum numbers 0..n_ph_max."""
        return np.arange(self.dim, dtype=float)

    @property
    def omega(self) -> float:
        return self.omega_m


SystemModel = SpinModel | MechModel


@dataclass(frozen=True)
class CavityModel:
    """Cavity linewidths; kappa is the detected output port.

    kappa == 0 is tolerated so that closed-system (unitarity) regressions
    can run; heralding requires kappa > 0.
    """

    kappa: float
    kappa_loss: float = 0.0
    n_c_max: int = 3

    def __post_init__(self):
        if self.kappa < 0 or self.kappa_loss < 0:
            raise ValueError("linewidths must be >= 0")
        if self.n_c_max < 1:
            raise ValueError("n_c_max must be >= 1")

    @property
    def kappa_total(self) -> float:
        return self.kappa + self.kappa_loss

    @property
    def dim(self) -> int:
        return self.n_c_max + 1


# ---------------------------------------------------------------------------
# elementary operators

def annihilation(dim: int) -> np.ndarray:
    a = np.zeros((dim, dim), dtype=complex)
    ns = np.arange(1, dim)
    a[ns - 1, ns] = np.sqrt(ns)
    return a


def number_op(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim).astype(complex))


def h_matter(system: SystemModel, n_photons: int) -> np.ndarray:
    """Matter Hamiltonian projected on the n-photon cavity sector."""
    if isinstance(system, SpinModel):
        return np.diag(n_photons * system.omega_s * system.m_values).astype(complex)
    a = annihilation(system.dim)
    h = system.omega_m * (a.conj().T @ a) - n_photons * system.g0 * (a + a.conj().T)
    return h


def u1_generator(system: SystemModel) -> np.ndarray:
    return h_matter(system, 1)


@lru_cache(maxsize=32)
def u1_eigensystem(system: SystemModel) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues/vectors of the one-photon matter Hamiltonian.

    For the spin the eigenvalues are omega_s*m; for the mechanics they are
    omega_m*(m - x1**2) with displaced-Fock eigenvectors.
    """
    if isinstance(system, SpinModel):
        return system.omega_s * system.m_values, np.eye(system.dim, dtype=complex)
    evals, evecs = np.linalg.eigh(u1_generator(system))
    return evals, evecs.astype(complex)


def u1_propagator(system: SystemModel, tau: float) -> np.ndarray:
    """Conditional rotation for one intracavity photon over duration tau."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if isinstance(system, SpinModel):
        return np.diag(np.exp(-1j * system.omega_s * system.m_values * tau))
    return expm(-1j * u1_generator(system) * tau)


def rotation_operator(system: SystemModel, angle: float) -> np.ndarray:
    """One-photon rotation by a (possibly negative) angle = omega * tau."""
    evals, evecs = u1_eigensystem(system)
    phases = np.exp(-1j * evals * (angle / system.omega))
    if isinstance(system, SpinModel):
        return np.diag(phases)
    return (evecs * phases) @ evecs.conj().T


def free_phases(system: SystemModel, dt: float) -> np.ndarray:
    """Diagonal of exp(-i H_matter(0 photons) dt) in the storage basis."""
    if isinstance(system, SpinModel):
        return np.ones(system.dim, dtype=complex)
    return np.exp(-1j * system.omega_m * np.arange(system.dim) * dt)


# ---------------------------------------------------------------------------
# matter states

def coherent_spin_state(spin: SpinModel, polar: float, azimuth: float) -> np.ndarray:
    """CSS pointing along (polar, azimuth); +z is polar=0, +x is (pi/2, 0)."""
    if not (np.isfinite(polar) and np.isfinite(azimuth)):
        raise ValueError("angles must be finite")
    j = spin.j
    m = spin.m_values
    # amplitudes via log-binomial for stability at large N
    ln_binom = gammaln(2 * j + 1) - gammaln(j + m + 1) - gammaln(j - m + 1)
    c, s = np.cos(polar / 2.0), np.sin(polar / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ln_mag = 0.5 * ln_binom \
            + (j + m) * np.where(c > 0, np.log(np.maximum(c, 1e-300)), -np.inf) \
            + (j - m) * np.where(s > 0, np.log(np.maximum(s, 1e-300)), -np.inf)
    mag = np.exp(ln_mag)
    if c == 0.0:
        mag = np.where(j + m == 0, 1.0, 0.0)
    if s == 0.0:
        mag = np.where(j - m == 0, 1.0, 0.0)
    state = mag * np.exp(-1j * m * azimuth)
    return state / np.linalg.norm(state)


def spin_x_state(spin: SpinModel) -> np.ndarray:
    """The x-polarized CSS, the standard initial state."""
    return coherent_spin_state(spin, np.pi / 2.0, 0.0)


def rotate_spin(state: np.ndarray, phi: float) -> np.ndarray:
    """Rotate a Dicke-basis state about z: amplitudes pick up exp(-i phi m)."""
    dim = state.shape[0]
    m = np.arange(dim) - (dim - 1) / 2.0
    return state * np.exp(-1j * phi * m)


def mech_ground_state(mech: MechModel) -> np.ndarray:
    psi = np.zeros(mech.dim, dtype=complex)
    psi[0] = 1.0
    return psi


def displacement_matrix(dim: int, alpha: complex) -> np.ndarray:
    """Truncated displacement operator from the closed-form matrix elements.

    <n|D(alpha)|m> = sqrt(m!/n!) alpha^(n-m) e^(-|a|^2/2) L_m^(n-m)(|a|^2)
    for n >= m, and the conjugate-transpose relation below the diagonal.
    Exact per element (no series truncation), but columns lose norm when the
    displaced state leaks past the retained dimension.
    """
    alpha = complex(alpha)
    aa = abs(alpha) ** 2
    pref = np.exp(-aa / 2.0)
    d = np.zeros((dim, dim), dtype=complex)
    ns = np.arange(dim)
    for m in range(dim):
        k = ns[m:] - m  # n - m >= 0
        ln_ratio = 0.5 * (gammaln(m + 1) - gammaln(ns[m:] + 1))
        lag = eval_genlaguerre(m, k, aa)
        d[m:, m] = np.exp(ln_ratio) * alpha ** k * pref * lag
        if m > 0:
            k = m - ns[:m]  # m - n > 0
            ln_ratio = 0.5 * (gammaln(ns[:m] + 1) - gammaln(m + 1))
            lag = eval_genlaguerre(ns[:m], k, aa)
            d[:m, m] = np.exp(ln_ratio) * (-np.conj(alpha)) ** k * pref * lag
    return d


@lru_cache(maxsize=32)
def _displacement_for(mech: MechModel) -> np.ndarray:
    return displacement_matrix(mech.dim, mech.x1)


def displaced_fock_state(mech: MechModel, m: int, margin: int = 2) -> np.ndarray:
    """Eigenstate |m> of (a^dag - x1)(a - x1) in the storage Fock basis."""
    if m < 0 or m > mech.n_ph_max - margin:
        raise ValueError(f"m={m} outside retained range with margin {margin}")
    col = _displacement_for(mech)[:, m].copy()
    deficit = 1.0 - float(np.vdot(col, col).real)
    if deficit > LEAK_TOL:
        raise CutoffError(
            f"displaced Fock m={m}: truncated norm deficit {deficit:.2e}"
        )
    return col / np.linalg.norm(col)


def displaced_fock_coefficients(mech: MechModel, state: np.ndarray) -> np.ndarray:
    """Coefficients <m~|state> in the displaced-Fock basis."""
    d = _displacement_for(mech)
    return d.conj().T @ state


def initial_coefficients(system: SystemModel, state: np.ndarray) -> np.ndarray:
    """Expansion of a matter state over the painting basis (Dicke/displaced)."""
    if isinstance(system, SpinModel):
        return np.asarray(state, dtype=complex)
    return displaced_fock_coefficients(system, state)


def state_from_coefficients(system: SystemModel, coeffs: np.ndarray) -> np.ndarray:
    """Inverse of initial_coefficients."""
    if isinstance(system, SpinModel):
        return np.asarray(coeffs, dtype=complex)
    return _displacement_for(system) @ np.asarray(coeffs, dtype=complex)


def default_initial_state(system: SystemModel) -> np.ndarray:
    if isinstance(system, SpinModel):
        return spin_x_state(system)
    return mech_ground_state(system)


# ---------------------------------------------------------------------------
# joint (matter x cavity) states and the effective Hamiltonian

@dataclass(frozen=True)
class JointState:
    """Complex amplitudes on (matter basis) x (cavity Fock basis).

    Possibly unnormalized: conditional amplitudes are stored as-is and
    normalization happens only on explicit request.
    """

    amplitudes: np.ndarray  # shape (matter_dim, n_c_max + 1)

    @property
    def matter_dim(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def cavity_dim(self) -> int:
        return self.amplitudes.shape[1]

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def inner(self, other: "JointState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def normalized(self) -> "JointState":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero state")
        return JointState(self.amplitudes / n)

    def cavity_populations(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=0)

    def matter_populations(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    def project_cavity_vacuum(self) -> np.ndarray:
        return self.amplitudes[:, 0].copy()


def joint_from_matter(matter_state: np.ndarray, cavity: CavityModel) -> JointState:
    amp = np.zeros((matter_state.shape[0], cavity.dim), dtype=complex)
    amp[:, 0] = matter_state
    return JointState(amp)


@lru_cache(maxsize=32)
def joint_operators(system: SystemModel, cavity: CavityModel):
    """Static pieces of H_eff: (H0, C, Cdag, Nc) on the flattened joint basis.

    H0 contains the matter part, the photon-number coupling and the
    anti-Hermitian decay; the drive adds E0*Cdag + conj(E0)*C.
    Flattened index = matter_index * cavity_dim + n_photons.
    """
    dim_m, dim_c = system.dim, cavity.dim
    eye_m = np.eye(dim_m, dtype=complex)
    c = annihilation(dim_c)
    nc = number_op(dim_c)
    if isinstance(system, SpinModel):
        h_sys = system.omega_s * np.kron(np.diag(system.m_values).astype(complex), nc)
    else:
        a = annihilation(dim_m)
        h_sys = system.omega_m * np.kron(a.conj().T @ a, np.eye(dim_c, dtype=complex)) \
            - system.g0 * np.kron(a + a.conj().T, nc)
    h0 = h_sys - 0.5j * cavity.kappa_total * np.kron(eye_m, nc)
    return h0, np.kron(eye_m, c), np.kron(eye_m, c.conj().T), np.kron(eye_m, nc)


def build_h_eff(system: SystemModel, cavity: CavityModel,
                envelope_value: complex) -> np.ndarray:
    """Dense H_eff for a given instantaneous drive envelope value."""
    h0, c, cdag, _ = joint_operators(system, cavity)
    e0 = complex(envelope_value)
    return h0 + e0 * cdag + np.conj(e0) * c


def check_joint_leakage(system: SystemModel, cavity: CavityModel,
                        state: JointState, where: str = "") -> None:
    """Reject states with weight in the top retained levels.

    The relevant measures are the top cavity level and, for the mechanics,
    the top phonon level, both relative to the current state norm.
    """
    total = float(np.sum(np.abs(state.amplitudes) ** 2))
    if total == 0.0:
        return
    top_cav = float(np.sum(np.abs(state.amplitudes[:, -1]) ** 2)) / total
    if top_cav > LEAK_TOL:
        raise CutoffError(
            f"cavity cutoff n_c_max={cavity.n_c_max} too small "
            f"(top-level population {top_cav:.2e}){' at ' + where if where else ''}"
        )
    if isinstance(system, MechModel):
        top_ph = float(np.sum(np.abs(state.amplitudes[-1, :]) ** 2)) / total
        if top_ph > LEAK_TOL:
            raise CutoffError(
                f"phonon cutoff n_ph_max={system.n_ph_max} too small "
                f"(top-level population {top_ph:.2e})"
                f"{' at ' + where if where else ''}"
            )
