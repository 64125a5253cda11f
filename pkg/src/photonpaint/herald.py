"""Target states, fidelity metrics, cooperativity limits and sweep drivers.

The conditional fidelity is F_eps = |<psi1|target>|^2 / <psi1|psi1> with the
target normalized.  Imperfect detection (quantum efficiency q, dark-count
rate r_d) lower-bounds the heralded fidelity as

    F_min = F_eps * R_s / (R_t + r_d/q).

Sweep cells are pure functions of a parameter dict and run either serially
or on a process pool; rows come back in row-major order of the declared
axes regardless of completion order.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import evolve, pulses, statespace
from .exceptions import ConfigError
from .statespace import (CavityModel, MechModel, SpinModel, SystemModel,
                         default_initial_state, displaced_fock_state,
                         rotation_operator, state_from_coefficients,
                         u1_eigensystem)

log = logging.getLogger("photonpaint")

SWEEP_COLUMNS = ("preset", "eps_over_omega", "phi", "t_d", "eta",
                 "rd_over_qkappa", "r_s", "r_t", "f_eps", "f_min")


@dataclass(frozen=True)
class DetectorModel:
    """Single-photon counter: quantum efficiency and dark-count rate."""

    q: float = 1.0
    r_d: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.q <= 1.0):
            raise ValueError("quantum efficiency must be in (0, 1]")
        if self.r_d < 0:
            raise ValueError("dark-count rate must be >= 0")


@dataclass(frozen=True)
class CooperativityInput:
    """Single-atom cooperativity eta, directly or via (g_rabi, gamma, kappa)."""

    n_atoms: int
    eta: float | None = None
    g_rabi: float | None = None
    gamma: float | None = None
    kappa: float | None = None

    def resolved_eta(self) -> float:
        if self.eta is not None:
            return self.eta
        if None in (self.g_rabi, self.gamma, self.kappa):
            raise ValueError("need eta or all of (g_rabi, gamma, kappa)")
        return self.g_rabi ** 2 / (self.kappa * self.gamma)


@dataclass(frozen=True)
class CooperativityLimits:
    phi_c_max: float       # largest per-lifetime phase shift, sqrt(eta/2N)
    cat_size_max: float    # sqrt(eta/2), in units of Phi*sqrt(N)
    kappa_n: float | None  # broadened linewidth for the requested phase
    requested_phi_ok: bool | None


def cooperativity_limits(inp: CooperativityInput, omega_s: float | None = None,
                         requested_phi: float | None = None
                         ) -> CooperativityLimits:
    """Closed-form ceilings from the cooperativity inequality.

    phi_c_max = sqrt(eta/(2N)) bounds the phase imparted within one cavity
    lifetime; the corresponding cat-size ceiling is phi_c_max*sqrt(N) =
    sqrt(eta/2).  For a requested phase, kappa_n = omega_s/phi is the
    linewidth at which that phase fills one lifetime; phases above the
    ceiling are flagged (success decays exponentially there).
    """
    eta = inp.resolved_eta()
    if eta <= 0 or inp.n_atoms <= 0:
        raise ValueError("eta and n_atoms must be > 0")
    phi_c_max = float(np.sqrt(eta / (2.0 * inp.n_atoms)))
    cat_size_max = float(np.sqrt(eta / 2.0))
    kappa_n = None
    ok = None
    if requested_phi is not None:
        ok = requested_phi <= phi_c_max
        if not ok:
            warnings.warn(
                f"requested phase {requested_phi:.4g} exceeds the "
                f"cooperativity ceiling {phi_c_max:.4g}; success rate is "
                "exponentially suppressed in this regime")
        if omega_s is not None:
            kappa_n = omega_s / requested_phi
    return CooperativityLimits(phi_c_max, cat_size_max, kappa_n, ok)


def kappa_loss_from_cooperativity(eta: float, n_atoms: int, omega_s: float,
                                  kappa: float) -> float:
    """Undetected broadening N*omega_s^2/(2*eta*kappa) of the dispersive port.

    Phenomenological single-channel model; its optimum over omega_s
    reproduces the phi_c ceiling sqrt(eta/(2N)) exactly.
    """
    return n_atoms * omega_s ** 2 / (2.0 * eta * kappa)


# ---------------------------------------------------------------------------
# target-state constructors

def target_cat(system: SystemModel, phi_sep: float, rel_phase: float,
               t_d: float, initial: np.ndarray | None = None) -> np.ndarray:
    """Normalized superposition of two rotated copies of the initial state.

    (|angle1> + e^{i rel_phase} |angle2>)/norm with angle1 = omega*t_d and
    angle2 = omega*t_d - phi_sep; for the mechanics the branches are
    coherent states on the circle of radius x1.
    """
    if initial is None:
        initial = default_initial_state(system)
    th1 = system.omega * t_d
    b1 = rotation_operator(system, th1) @ initial
    b2 = rotation_operator(system, th1 - phi_sep) @ initial
    psi = b1 + np.exp(1j * rel_phase) * b2
    return psi / np.linalg.norm(psi)


def target_from_weight(system: SystemModel, target: pulses.TargetSpec,
                       initial: np.ndarray | None = None, tol: float = 1e-10,
                       max_rounds: int = 18) -> np.ndarray:
    """Normalized integral of f(phi) U1(phi/omega)|initial> over the angle."""
    if not target.is_weight_form:
        raise ValueError("target is not in weight-function form")
    if initial is None:
        initial = default_initial_state(system)
    evals, evecs = u1_eigensystem(system)
    w0 = evecs.conj().T @ np.asarray(initial, dtype=complex)
    acc = np.zeros(w0.shape, dtype=complex)
    for phi0, w in target.f_deltas:
        acc += w * np.exp(-1j * evals * (phi0 / system.omega)) * w0
    if target.f_samples is not None and target.f_samples.size > 0 \
            and np.any(target.f_samples != 0):
        from scipy.interpolate import CubicSpline
        sp_re = CubicSpline(target.phi_grid, target.f_samples.real)
        sp_im = CubicSpline(target.phi_grid, target.f_samples.imag)
        lo, hi = float(target.phi_grid[0]), float(target.phi_grid[-1])
        rate = float(np.max(np.abs(evals))) / system.omega + 1.0
        n = int(max(64, np.ceil((hi - lo) * rate * 8.0)))
        prev = None
        for _ in range(max_rounds):
            phi = np.linspace(lo, hi, n + 1)
            f = sp_re(phi) + 1j * sp_im(phi)
            branches = np.exp(np.outer(-1j * evals / system.omega, phi)) \
                * w0[:, None]
            integ = np.trapezoid(branches * f[None, :], phi, axis=1)
            if prev is not None and float(np.linalg.norm(integ - prev)) \
                    < tol * max(float(np.linalg.norm(integ)), 1e-300):
                acc += integ
                break
            prev = integ
            n *= 2
        else:
            raise RuntimeError("weight-target quadrature did not converge")
    psi = evecs @ acc
    n = np.linalg.norm(psi)
    if n == 0.0:
        raise ValueError("target state integrates to zero")
    return psi / n


def target_from_coeffs(system: SystemModel,
                       target: pulses.TargetSpec) -> np.ndarray:
    """Normalized state with the given painting-basis coefficients."""
    if target.is_weight_form or target.coeffs is None:
        raise ValueError("target is not in coefficient form")
    full = np.zeros(system.dim, dtype=complex)
    for m, cf in zip(target.coeff_m, target.coeffs):
        idx = int(np.argmin(np.abs(system.m_values - m)))
        if abs(system.m_values[idx] - m) > 1e-9:
            raise ValueError(f"target m={m} not in the matter basis")
        full[idx] = cf
    psi = state_from_coefficients(system, full)
    return psi / np.linalg.norm(psi)


# ---------------------------------------------------------------------------
# fidelity metrics

def fidelity_eps(psi1: np.ndarray, target: np.ndarray,
                 system: SystemModel | None = None,
                 optimize_rotation: bool = False,
                 rotation_tol: float = 1e-6) -> float:
    """F_eps = |<psi1|target>|^2/<psi1|psi1>, target normalized.

    With optimize_rotation the overlap is maximized over a single global
    one-photon rotation angle (coarse scan plus golden-section refinement),
    since shaped drives prepare the target only up to such a rotation.
    """
    psi1 = np.asarray(psi1, dtype=complex)
    n2 = float(np.vdot(psi1, psi1).real)
    if n2 == 0.0:
        raise ValueError("psi1 has zero norm")
    target = np.asarray(target, dtype=complex)
    target = target / np.linalg.norm(target)
    if not optimize_rotation:
        return float(abs(np.vdot(target, psi1)) ** 2 / n2)
    if system is None:
        raise ValueError("rotation optimization needs the system model")
    evals, evecs = u1_eigensystem(system)
    w = np.conj(evecs.conj().T @ target) * (evecs.conj().T @ psi1)
    nu = evals / system.omega

    def overlap2(theta):
        return abs(np.sum(w * np.exp(-1j * nu * theta))) ** 2

    thetas = np.linspace(0.0, 2 * np.pi, 1024, endpoint=False)
    vals = np.abs(np.exp(-1j * np.outer(thetas, nu)) @ w) ** 2
    best = int(np.argmax(vals))
    lo = thetas[best] - 2 * np.pi / 1024
    hi = thetas[best] + 2 * np.pi / 1024
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c_pt = b - gr * (b - a)
    d_pt = a + gr * (b - a)
    fc, fd = overlap2(c_pt), overlap2(d_pt)
    while b - a > rotation_tol:
        if fc > fd:
            b, d_pt, fd = d_pt, c_pt, fc
            c_pt = b - gr * (b - a)
            fc = overlap2(c_pt)
        else:
            a, c_pt, fc = c_pt, d_pt, fd
            d_pt = a + gr * (b - a)
            fd = overlap2(d_pt)
    return float(max(fc, fd) / n2)


def fidelity_min(f_eps: float, r_s: float, r_t: float,
                 detector: DetectorModel) -> float:
    """Detector-limited fidelity bound F_eps * R_s/(R_t + r_d/q).

    Evaluated as f_eps times the rate ratio so the r_d = 0, R_s = R_t limit
    returns f_eps exactly and the r_d/q = R_t = R_s case returns f_eps/2
    exactly in floating point.
    """
    if r_s < 0 or r_t < 0:
        raise ValueError("rates must be >= 0")
    return f_eps * (r_s / (r_t + detector.r_d / detector.q))


# ---------------------------------------------------------------------------
# sweep machinery

@dataclass
class SweepPlan:
    """Preset name, base cell parameters, and ordered sweep axes."""

    preset: str
    base: dict
    axes: list[tuple[str, list]]

    def cells(self) -> list[dict]:
        """Row-major cartesian product of the axes over the base dict."""
        if self.axes:
            for name, values in self.axes:
                if len(values) > 10_000:
                    raise ConfigError(f"axis {name!r} exceeds 10^4 points")
            total = int(np.prod([len(v) for _, v in self.axes]))
            if total > 1_000_000:
                raise ConfigError("sweep exceeds 10^6 cells")
        names = [n for n, _ in self.axes]
        out = []
        for combo in itertools.product(*(v for _, v in self.axes)):
            cell = dict(self.base)
            cell.update(dict(zip(names, combo)))
            out.append(cell)
        return out


def cavity_cutoff_for(drive: pulses.DriveWaveform, kappa_total: float,
                      n_min: int = 3, tol: float = 1e-8) -> int:
    """Photon cutoff keeping the top-level population below tol.

    Sizes the basis from the peak coherent amplitude the drive can build
    up: the summed kick areas plus the steady-state response to the
    largest smooth amplitude.
    """
    alpha = drive.total_kick_area()
    if kappa_total > 0:
        alpha += 2.0 * drive.max_amplitude() / kappa_total
    else:
        alpha += drive.max_amplitude() * drive.t_end
    aa = alpha ** 2
    n = n_min
    while n < 120:
        # Poisson tail bound at the top level, with safety factor
        log_p = n * np.log(aa + 1e-300) - float(np.sum(np.log(np.arange(1, n + 1))))
        if aa == 0.0 or log_p - aa < np.log(tol) - 2.0:
            return n
        n += 1
    return n


def _build_system(params: dict) -> SystemModel:
    if params.get("system_kind", "spin") == "spin":
        return SpinModel(n_atoms=int(params["n_atoms"]),
                         omega_s=float(params["omega_s"]))
    return MechModel(omega_m=float(params["omega_m"]), g0=float(params["g0"]),
                     n_ph_max=int(params.get("n_ph_max", 32)))


def _build_cavity(params: dict, drive: pulses.DriveWaveform | None = None) -> CavityModel:
    kappa = float(params["kappa"])
    kappa_loss = float(params.get("kappa_loss", 0.0))
    n_c = params.get("n_c_max")
    if n_c is None:
        n_c = cavity_cutoff_for(drive, kappa + kappa_loss) if drive is not None else 3
    return CavityModel(kappa=kappa, kappa_loss=kappa_loss, n_c_max=int(n_c))


def _finish_row(params, system, r_s, r_t, f_eps) -> dict:
    det = DetectorModel(q=float(params.get("q", 1.0)),
                        r_d=float(params.get("rd_over_qkappa", 0.0))
                        * float(params.get("q", 1.0)) * float(params["kappa"]))
    f_min = fidelity_min(f_eps, r_s, r_t, det)
    return {
        "preset": params["preset"],
        "eps_over_omega": float(params["eps_over_omega"]),
        "phi": float(params.get("phi_sep", np.nan)),
        "t_d": float(params["t_d"]),
        "eta": float(params.get("eta", np.nan)),
        "rd_over_qkappa": float(params.get("rd_over_qkappa", 0.0)),
        "r_s": r_s,
        "r_t": r_t,
        "f_eps": f_eps,
        "f_min": f_min,
    }


def _cell_cat_spin(params: dict) -> dict:
    system = _build_system(params)
    eps = float(params["eps_over_omega"]) * system.omega
    phi = float(params["phi_sep"])
    kn = float(params["kappa"]) + float(params.get("kappa_loss", 0.0))
    drive = pulses.cat_pulse(phi, float(params.get("rel_phase", 0.0)),
                             system.omega, kn, eps)
    cavity = _build_cavity(params, drive)
    initial = default_initial_state(system)
    t_d = float(params["t_d"])
    res = evolve.heralded_state_spin_exact(system, cavity, drive, initial, t_d)
    r_t = float(evolve.transmission_rate(system, cavity, drive, initial,
                                         [t_d], method="classical")[0])
    tgt = target_cat(system, phi, float(params.get("rel_phase", 0.0)), t_d,
                     initial)
    f_eps = fidelity_eps(res.psi1, tgt)
    return _finish_row(params, system, res.r_s, r_t, f_eps)


def _cell_cat_mech(params: dict) -> dict:
    system = _build_system(params)
    eps = float(params["eps_over_omega"]) * system.omega
    phi = float(params["phi_sep"])
    kn = float(params["kappa"]) + float(params.get("kappa_loss", 0.0))
    drive = pulses.cat_pulse(phi, float(params.get("rel_phase", 0.0)),
                             system.omega, kn, eps)
    cavity = _build_cavity(params, drive)
    initial = default_initial_state(system)
    t_d = float(params["t_d"])
    # weak-limit fast path: first-order amplitude, r_t = r_s + O(eps^2)
    psi1 = evolve.weak_drive_heralded_state(system, cavity, drive, initial, t_d)
    r_s = float(np.vdot(psi1, psi1).real)
    r_t = r_s
    tgt = target_cat(system, phi, float(params.get("rel_phase", 0.0)), t_d,
                     initial)
    f_eps = fidelity_eps(psi1, tgt)
    return _finish_row(params, system, r_s, r_t, f_eps)


def _coeff_drive(params, system, initial):
    eps = float(params["eps_over_omega"]) * system.omega
    kn = float(params["kappa"]) + float(params.get("kappa_loss", 0.0))
    basis = "dicke" if isinstance(system, SpinModel) else "displaced_fock"
    target = pulses.TargetSpec.from_coeffs([float(params["m_target"])], [1.0],
                                           basis)
    return pulses.synthesize_from_coeffs(target, system, initial, kn, eps)


def _cell_dicke(params: dict) -> dict:
    system = _build_system(params)
    initial = default_initial_state(system)
    drive = _coeff_drive(params, system, initial)
    cavity = _build_cavity(params, drive)
    t_d = float(params["t_d"])
    res = evolve.heralded_state_spin_exact(system, cavity, drive, initial, t_d)
    r_t = float(evolve.transmission_rate(system, cavity, drive, initial,
                                         [t_d], method="classical")[0])
    m_idx = int(np.argmin(np.abs(system.m_values - float(params["m_target"]))))
    tgt = np.zeros(system.dim, dtype=complex)
    tgt[m_idx] = 1.0
    f_eps = fidelity_eps(res.psi1, tgt)
    return _finish_row(params, system, res.r_s, r_t, f_eps)


def _cell_fock(params: dict) -> dict:
    system = _build_system(params)
    initial = default_initial_state(system)
    drive = _coeff_drive(params, system, initial)
    cavity = _build_cavity(params, drive)
    t_d = float(params["t_d"])
    res = evolve.heralded_state(system, cavity, drive, initial, t_d)
    r_t = res.r_s  # weak drive: R_t = R_s to O(eps^2)
    tgt = displaced_fock_state(system, int(params["m_target"]))
    f_eps = fidelity_eps(res.psi1, tgt, system=system, optimize_rotation=True)
    return _finish_row(params, system, res.r_s, r_t, f_eps)


def _cell_mech_qubit(params: dict) -> dict:
    system = _build_system(params)
    initial = default_initial_state(system)
    eps = float(params["eps_over_omega"]) * system.omega
    kn = float(params["kappa"]) + float(params.get("kappa_loss", 0.0))
    drive = pulses.mech_qubit_pulse(system, kn, eps)
    cavity = _build_cavity(params, drive)
    t_d = float(params["t_d"])
    res = evolve.heralded_state(system, cavity, drive, initial, t_d)
    r_t = res.r_s
    tgt = (displaced_fock_state(system, 0) + displaced_fock_state(system, 1)) \
        / np.sqrt(2.0)
    f_eps = fidelity_eps(res.psi1, tgt, system=system, optimize_rotation=True)
    return _finish_row(params, system, res.r_s, r_t, f_eps)


def _cell_paint(params: dict) -> dict:
    system = _build_system(params)
    initial = default_initial_state(system)
    eps = float(params["eps_over_omega"]) * system.omega
    kn = float(params["kappa"]) + float(params.get("kappa_loss", 0.0))
    spec = pulses.TargetSpec.from_weight(
        np.asarray(params["f_phi"], dtype=float),
        np.asarray(params["f_re"], dtype=float)
        + 1j * np.asarray(params.get("f_im", np.zeros(len(params["f_phi"]))),
                          dtype=float),
        deltas=params.get("f_deltas", ()))
    drive = pulses.synthesize_from_weight(spec, system.omega, kn, eps)
    cavity = _build_cavity(params, drive)
    t_d = float(params["t_d"])
    if isinstance(system, SpinModel):
        res = evolve.heralded_state_spin_exact(system, cavity, drive, initial,
                                               t_d)
        r_t = float(evolve.transmission_rate(system, cavity, drive, initial,
                                             [t_d], method="classical")[0])
    else:
        res = evolve.heralded_state(system, cavity, drive, initial, t_d)
        r_t = res.r_s
    tgt = target_from_weight(system, spec, initial)
    # undo the known rotation accumulated since the end of the painting
    undo = rotation_operator(system,
                             -(system.omega * t_d - spec.phi_max))
    f_eps = fidelity_eps(undo @ res.psi1, tgt)
    return _finish_row(params, system, res.r_s, r_t, f_eps)


PRESET_EVALUATORS = {
    "cat-spin": _cell_cat_spin,
    "cat-mech": _cell_cat_mech,
    "dicke": _cell_dicke,
    "fock": _cell_fock,
    "mech-qubit": _cell_mech_qubit,
    "paint": _cell_paint,
}


def evaluate_cell(preset: str, params: dict) -> dict:
    if preset not in PRESET_EVALUATORS:
        raise ConfigError(f"unknown preset {preset!r}")
    params = dict(params)
    params["preset"] = preset
    return PRESET_EVALUATORS[preset](params)


def _evaluate_cell_guarded(args):
    preset, params, index = args
    try:
        return index, evaluate_cell(preset, params), None
    except Exception as exc:  # per-cell failures recorded, sweep continues
        return index, None, f"{type(exc).__name__}: {exc}"


def run_sweep(plan: SweepPlan, jobs: int = 1):
    """Evaluate every cell; returns (rows, errors) in declaration order.

    Failed cells yield a row of nans for the numeric columns; errors is a
    list of (cell_index, message).
    """
    cells = plan.cells()
    tasks = [(plan.preset, cell, i) for i, cell in enumerate(cells)]
    results = [None] * len(cells)
    errors = []
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for index, row, err in pool.map(_evaluate_cell_guarded, tasks):
                results[index] = (row, err)
                log.info("cell %d/%d done", index + 1, len(cells))
    else:
        for task in tasks:
            index, row, err = _evaluate_cell_guarded(task)
            results[index] = (row, err)
            log.info("cell %d/%d done", index + 1, len(cells))
    rows = []
    for i, (row, err) in enumerate(results):
        if err is not None:
            errors.append((i, err))
            row = {k: (plan.preset if k == "preset" else np.nan)
                   for k in SWEEP_COLUMNS}
        rows.append(row)
    return rows, errors
