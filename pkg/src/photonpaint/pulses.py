"""Drive-waveform synthesis from target-state descriptions.

A target can be given either as a weight function ``f(phi)`` over rotation
angles (samples on a uniform grid plus optional delta spikes) or as a list
of coefficients over the painting basis (Dicke states for the spin,
displaced Fock states for the mechanics).  Both map onto a complex envelope
``E0(t)`` in the cavity rotating frame:

* weight form:   ``E0(t) = eps * f(phi_max - omega*t) * exp(-kappa*t/2)``
* coefficient:   ``E0(t) = (eps/2pi) * sum_m (cf_m/c0_m)
  * exp(-i*omega*(m - mu)*t - kappa*t/2)`` over one full revolution

Delta spikes are kept symbolically as (time, complex area) atoms; an atom
of area beta applies the instantaneous cavity kick exp(-i(beta c^dag +
conj(beta) c)).  ``kappa`` here is always the *total* linewidth the pulse
must compensate (detected + undetected).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import QuadratureError, UnreachableTargetError
from .statespace import MechModel, SpinModel, SystemModel, initial_coefficients

# delta-kick area above which a waveform stops being two-photon safe
WEAK_KICK_BOUND = 0.3
# samples per cycle of the fastest synthesized frequency component
SAMPLES_PER_CYCLE = 64


@dataclass(frozen=True)
class DeltaAtom:
    time: float
    area: complex


@dataclass(eq=False)
class DriveWaveform:
    """Complex drive envelope: uniform samples plus delta-pulse atoms."""

    dt: float
    samples: np.ndarray  # complex, samples[k] = E0(k*dt); empty if delta-only
    delta_atoms: tuple[DeltaAtom, ...]
    t_end: float
    epsilon: float
    _interp: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        for atom in self.delta_atoms:
            if not (0.0 <= atom.time <= self.t_end):
                raise ValueError("delta atom outside [0, t_end]")
        if self.samples.size not in (0, 1):
            span = (self.samples.size - 1) * self.dt
            if not np.isclose(span, self.t_end, rtol=1e-9, atol=1e-12):
                raise ValueError("sample grid does not span [0, t_end]")

    def _interpolator(self):
        if self._interp is None:
            if self.samples.size >= 4:
                t = self.dt * np.arange(self.samples.size)
                sp_re = CubicSpline(t, self.samples.real)
                sp_im = CubicSpline(t, self.samples.imag)
                object.__setattr__(self, "_interp", ("cubic", sp_re, sp_im))
            else:
                object.__setattr__(self, "_interp", ("none",))
        return self._interp

    def envelope_at(self, t):
        """E0(t); zero outside [0, t_end]. Scalar or array argument."""
        t_arr = np.asarray(t, dtype=float)
        scalar = t_arr.ndim == 0
        t_arr = np.atleast_1d(t_arr)
        out = np.zeros(t_arr.shape, dtype=complex)
        if self.samples.size > 0:
            mask = (t_arr >= 0.0) & (t_arr <= self.t_end)
            if np.any(mask):
                interp = self._interpolator()
                if interp[0] == "cubic":
                    out[mask] = interp[1](t_arr[mask]) + 1j * interp[2](t_arr[mask])
                elif self.samples.size == 1:
                    out[mask] = self.samples[0]
                else:
                    tk = self.dt * np.arange(self.samples.size)
                    out[mask] = np.interp(t_arr[mask], tk, self.samples.real) \
                        + 1j * np.interp(t_arr[mask], tk, self.samples.imag)
        return complex(out[0]) if scalar else out

    def max_amplitude(self) -> float:
        return float(np.max(np.abs(self.samples))) if self.samples.size else 0.0

    def total_kick_area(self) -> float:
        return float(sum(abs(a.area) for a in self.delta_atoms))

    # -- JSON exchange format ------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "dt": self.dt,
            "samples": [[float(z.real), float(z.imag)] for z in self.samples],
            "deltas": [
                {"t": a.time, "re": float(a.area.real), "im": float(a.area.imag)}
                for a in self.delta_atoms
            ],
            "t_end": self.t_end,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DriveWaveform":
        samples = np.array([complex(re, im) for re, im in d["samples"]],
                           dtype=complex)
        atoms = tuple(DeltaAtom(a["t"], complex(a["re"], a["im"]))
                      for a in d["deltas"])
        return cls(dt=d["dt"], samples=samples, delta_atoms=atoms,
                   t_end=d["t_end"], epsilon=d["epsilon"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path) -> "DriveWaveform":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(eq=False)
class TargetSpec:
    """Target state, as a weight function over angles or as coefficients."""

    # weight form
    phi_grid: np.ndarray | None = None
    f_samples: np.ndarray | None = None
    f_deltas: tuple[tuple[float, complex], ...] = ()
    phi_max: float | None = None
    # coefficient form
    coeff_m: np.ndarray | None = None
    coeffs: np.ndarray | None = None
    basis: str | None = None

    @classmethod
    def from_weight(cls, phi_grid, f_samples, deltas=(), phi_max=None):
        phi_grid = np.asarray(phi_grid, dtype=float)
        f_samples = np.asarray(f_samples, dtype=complex)
        if phi_grid.shape != f_samples.shape:
            raise ValueError("phi grid and f samples must match")
        deltas = tuple((float(p), complex(w)) for p, w in deltas)
        if phi_max is None:
            candidates = [phi_grid[-1] if phi_grid.size else 0.0]
            candidates += [p for p, _ in deltas]
            phi_max = max(candidates)
        if phi_max > 2 * np.pi + 1e-12:
            raise ValueError("phi_max must be <= 2*pi")
        return cls(phi_grid=phi_grid, f_samples=f_samples, f_deltas=deltas,
                   phi_max=float(phi_max))

    @classmethod
    def from_coeffs(cls, m_values, coeffs, basis):
        if basis not in ("dicke", "displaced_fock"):
            raise ValueError("basis must be 'dicke' or 'displaced_fock'")
        m_values = np.asarray(m_values, dtype=float)
        coeffs = np.asarray(coeffs, dtype=complex)
        if m_values.shape != coeffs.shape:
            raise ValueError("m list and coefficients must match")
        norm = np.linalg.norm(coeffs)
        if norm == 0.0:
            raise ValueError("coefficient target is identically zero")
        return cls(coeff_m=m_values, coeffs=coeffs / norm, basis=basis)

    @property
    def is_weight_form(self) -> bool:
        return self.phi_grid is not None or len(self.f_deltas) > 0


def _sample_grid_dt(omega: float, kappa: float, nu_max: float) -> float:
    """Grid step resolving the fastest synthesized component and the decay."""
    dt = 2 * np.pi / (SAMPLES_PER_CYCLE * omega * max(nu_max, 1.0))
    if kappa > 0:
        dt = min(dt, 1.0 / (20.0 * kappa))
    return dt


def synthesize_from_weight(target: TargetSpec, omega: float, kappa: float,
                           epsilon: float) -> DriveWaveform:
    """Envelope eps*f(phi_max - omega*t)*exp(-kappa*t/2) on [0, phi_max/omega].

    ``kappa`` is the total linewidth the shaping must compensate.  Delta
    spikes in f become instantaneous drive kicks with the decay weight
    evaluated at their arrival time.
    """
    if not target.is_weight_form:
        raise ValueError("target is not in weight-function form")
    have_smooth = target.f_samples is not None and target.f_samples.size > 0 \
        and np.any(target.f_samples != 0)
    if not have_smooth and not target.f_deltas:
        raise ValueError("weight function is empty or identically zero")
    if epsilon / omega > WEAK_KICK_BOUND:
        warnings.warn(f"eps/omega = {epsilon / omega:.3g} exceeds the "
                      "weak-drive regime; heralded state acquires "
                      "multi-photon corrections")
    phi_max = target.phi_max
    t_end = phi_max / omega

    atoms = []
    for phi0, w in target.f_deltas:
        t0 = (phi_max - phi0) / omega
        area = epsilon * w / omega * np.exp(-kappa * t0 / 2.0)
        atoms.append(DeltaAtom(float(t0), complex(area)))
    atoms.sort(key=lambda a: a.time)

    if have_smooth:
        dphi = target.phi_grid[1] - target.phi_grid[0] if target.phi_grid.size > 1 \
            else phi_max
        dt = min(_sample_grid_dt(omega, kappa, 1.0), dphi / omega)
        n = max(8, int(np.ceil(t_end / dt)))
        dt = t_end / n
        t = dt * np.arange(n + 1)
        f_re = CubicSpline(target.phi_grid, target.f_samples.real)
        f_im = CubicSpline(target.phi_grid, target.f_samples.imag)
        phi = phi_max - omega * t
        samples = epsilon * (f_re(phi) + 1j * f_im(phi)) * np.exp(-kappa * t / 2.0)
    else:
        dt, samples = 0.0, np.zeros(0, dtype=complex)

    wf = DriveWaveform(dt=dt, samples=samples, delta_atoms=tuple(atoms),
                       t_end=t_end, epsilon=epsilon)
    _warn_strong_kicks(wf)
    return wf


def cat_pulse(phi_sep: float, rel_phase: float, omega: float, kappa: float,
              epsilon: float) -> DriveWaveform:
    """Pair of kicks separated by T = phi_sep/omega.

    The second kick is weaker by exp(-kappa*T/2), cancelling the detection
    bias toward late arrivals so the heralded superposition carries equal
    weights with relative phase rel_phase on the delayed branch.
    """
    if not (0.0 < phi_sep <= 2 * np.pi):
        raise ValueError("phi_sep must lie in (0, 2*pi]")
    t_sep = phi_sep / omega
    beta1 = epsilon / (np.sqrt(2.0) * omega)
    beta2 = beta1 * np.exp(1j * rel_phase) * np.exp(-kappa * t_sep / 2.0)
    wf = DriveWaveform(dt=0.0, samples=np.zeros(0, dtype=complex),
                       delta_atoms=(DeltaAtom(0.0, complex(beta1)),
                                    DeltaAtom(t_sep, complex(beta2))),
                       t_end=t_sep, epsilon=epsilon)
    _warn_strong_kicks(wf)
    return wf


def synthesize_from_coeffs(target: TargetSpec, system: SystemModel,
                           initial: np.ndarray, kappa: float,
                           epsilon: float) -> DriveWaveform:
    """Frequency-comb envelope preparing given painting-basis coefficients.

    One component per target coefficient at offset omega*(m - mu) with the
    common exp(-kappa*t/2) decay, applied over one full revolution
    2*pi/omega so the components address their ladder states independently.
    """
    if target.is_weight_form or target.coeffs is None:
        raise ValueError("target is not in coefficient form")
    expected = "dicke" if isinstance(system, SpinModel) else "displaced_fock"
    if target.basis != expected:
        raise ValueError(f"target basis {target.basis!r} does not match the "
                         f"{expected!r} system")
    omega, mu = system.omega, system.mu
    c0_full = initial_coefficients(system, np.asarray(initial, dtype=complex))
    ratios = np.zeros(target.coeffs.size, dtype=complex)
    c0_scale = np.max(np.abs(c0_full))
    for k, m in enumerate(target.coeff_m):
        idx = np.argmin(np.abs(system.m_values - m))
        if abs(system.m_values[idx] - m) > 1e-9:
            raise ValueError(f"target m={m} is not in the matter basis")
        c0 = c0_full[idx]
        if abs(target.coeffs[k]) > 0 and abs(c0) < 1e-12 * max(c0_scale, 1e-300):
            raise UnreachableTargetError(
                f"target component m={m} has zero weight in the initial state")
        ratios[k] = target.coeffs[k] / c0
    if epsilon / omega > WEAK_KICK_BOUND:
        warnings.warn(f"eps/omega = {epsilon / omega:.3g} exceeds the "
                      "weak-drive regime")

    t_end = 2 * np.pi / omega
    nu = target.coeff_m - mu
    dt = _sample_grid_dt(omega, kappa, float(np.max(np.abs(nu))))
    n = max(8, int(np.ceil(t_end / dt)))
    dt = t_end / n
    t = dt * np.arange(n + 1)
    phases = np.exp(-1j * omega * np.outer(nu, t))
    samples = (epsilon / (2 * np.pi)) * (ratios @ phases) * np.exp(-kappa * t / 2.0)
    return DriveWaveform(dt=dt, samples=samples, delta_atoms=(),
                         t_end=t_end, epsilon=epsilon)


def mech_qubit_amplitude(mech: MechModel) -> float:
    """Envelope normalization A for the equal-superposition qubit drive."""
    x1 = mech.x1
    return float(np.exp(x1 ** 2 / 2.0) / (2 * np.pi * np.sqrt(2.0) * x1))


def mech_qubit_pulse(mech: MechModel, kappa: float,
                     epsilon: float) -> DriveWaveform:
    """Drive preparing an equal superposition of displaced Fock 0 and 1.

    E0(t) = eps*A*exp(i*x1^2*omega_m*t - kappa*t/2)*(x1 + exp(-i*omega_m*t))
    over one mechanical period; A = exp(x1^2/2)/(2*pi*sqrt(2)*x1).  The
    detection rate relative to a unit-coefficient drive of the same
    amplitude scale eps*A is suppressed by A^-2 = 8*pi^2*x1^2*exp(-x1^2).
    """
    omega, x1 = mech.omega_m, mech.x1
    a_norm = mech_qubit_amplitude(mech)
    t_end = 2 * np.pi / omega
    dt = _sample_grid_dt(omega, kappa, max(1.0, mech.mu))
    n = max(8, int(np.ceil(t_end / dt)))
    dt = t_end / n
    t = dt * np.arange(n + 1)
    samples = epsilon * a_norm * np.exp(1j * x1 ** 2 * omega * t - kappa * t / 2.0) \
        * (x1 + np.exp(-1j * omega * t))
    return DriveWaveform(dt=dt, samples=samples, delta_atoms=(),
                         t_end=t_end, epsilon=epsilon)


def fourier_weights(target: TargetSpec, m_values: np.ndarray,
                    tol: float = 1e-6, max_rounds: int = 20) -> np.ndarray:
    """f_m = integral of f(phi)*exp(i*m*phi) over [0, phi_max], per m.

    Smooth samples are treated as their cubic-spline interpolant and
    integrated by doubling trapezoid sums until converged; delta spikes
    contribute w*exp(i*m*phi0) exactly.
    """
    if not target.is_weight_form:
        raise ValueError("target is not in weight-function form")
    m_values = np.asarray(m_values, dtype=float)
    out = np.zeros(m_values.shape, dtype=complex)
    for phi0, w in target.f_deltas:
        out += w * np.exp(1j * m_values * phi0)
    if target.f_samples is None or target.f_samples.size == 0 \
            or not np.any(target.f_samples != 0):
        return out
    phi_lo, phi_hi = target.phi_grid[0], target.phi_grid[-1]
    sp_re = CubicSpline(target.phi_grid, target.f_samples.real)
    sp_im = CubicSpline(target.phi_grid, target.f_samples.imag)
    n = max(64, 8 * (target.phi_grid.size - 1))
    prev = None
    for _ in range(max_rounds):
        phi = np.linspace(phi_lo, phi_hi, n + 1)
        f = sp_re(phi) + 1j * sp_im(phi)
        integ = np.trapezoid(f[None, :] * np.exp(1j * np.outer(m_values, phi)),
                             phi, axis=1)
        if prev is not None and np.max(np.abs(integ - prev)) < tol:
            return out + integ
        prev = integ
        n *= 2
    raise QuadratureError("fourier_weights did not converge")


def _warn_strong_kicks(wf: DriveWaveform) -> None:
    worst = max((abs(a.area) for a in wf.delta_atoms), default=0.0)
    if worst > WEAK_KICK_BOUND:
        warnings.warn(f"delta kick area {worst:.3g} exceeds the weak-drive "
                      f"bound {WEAK_KICK_BOUND}; two-photon events are not "
                      "negligible")
