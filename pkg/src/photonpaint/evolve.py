"""Time-ordered non-Hermitian propagation and heralded-state extraction.

The conditional (no-click) state evolves under ``H_eff = H_matter +
E0(t) c^dag + conj(E0) c - i (kappa_total/2) c^dag c``; detected clicks
apply ``sqrt(kappa) c`` and undetected losses ``sqrt(kappa_loss) c``.  The
heralded path of interest is: no-jump propagate to the detection time,
apply the detected-port jump, no-jump propagate until the cavity is empty,
then project onto the cavity vacuum.  The success rate is the squared norm
of that amplitude, a probability per unit time.

Propagation uses a fixed-step classical 4th-order integrator with step
halving until the final states of successive refinements agree; delta-pulse
atoms of the drive are applied between steps as exact cavity kicks.
Everything here is deterministic: no random sampling of trajectories.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .exceptions import CutoffError, QuadratureError
from .pulses import DriveWaveform
from .statespace import (LEAK_TOL, CavityModel, JointState, MechModel,
                         SpinModel, SystemModel, annihilation,
                         check_joint_leakage, free_phases, joint_from_matter,
                         joint_operators, u1_eigensystem)

DEFAULT_STEP_TOL = 1e-8
MAX_HALVINGS = 14
# padding after the detection time, in cavity lifetimes, before the vacuum
# projection that enforces "no further photons"
TAIL_LIFETIMES = 10.0
MIN_TAIL_LIFETIMES = 8.0


@dataclass(frozen=True)
class ClickRecord:
    """Detected click times (ascending) and number of undetected losses."""

    click_times: tuple[float, ...]
    loss_events: int = 0


@dataclass
class HeraldedResult:
    """Conditional state and figures of merit at one detection time."""

    t_d: float
    psi1: np.ndarray  # unnormalized conditional matter amplitude
    r_s: float
    r_t: float | None = None
    f_eps: float | None = None
    f_min: float | None = None
    record: ClickRecord = field(default_factory=lambda: ClickRecord(()))

    def normalized_state(self) -> np.ndarray:
        n = np.linalg.norm(self.psi1)
        if n == 0.0:
            raise ValueError("heralded amplitude is zero")
        return self.psi1 / n


# ---------------------------------------------------------------------------
# integrator core

def _kick_matrix(dim_c: int, area: complex) -> np.ndarray:
    c = annihilation(dim_c)
    return expm(-1j * (area * c.conj().T + np.conj(area) * c))


def _joint_kick_matrix(system: SystemModel, cavity: CavityModel,
                       area: complex) -> np.ndarray:
    return np.kron(np.eye(system.dim, dtype=complex),
                   _kick_matrix(cavity.dim, area))


def apply_delta_kick(cavity: CavityModel, state: JointState,
                     area: complex) -> JointState:
    """Instantaneous cavity displacement kick exp(-i(b c^dag + b* c))."""
    k = _kick_matrix(cavity.dim, area)
    return JointState(state.amplitudes @ k.T)


def _spectral_scale(system: SystemModel, cavity: CavityModel,
                    drive: DriveWaveform) -> float:
    h0, _, _, _ = joint_operators(system, cavity)
    emax = drive.max_amplitude()
    return float(np.linalg.norm(h0, np.inf)) \
        + 2.0 * emax * np.sqrt(cavity.dim) + 1e-30


def _rk4_sweep(h0, c, cdag, drive, psi0, t0, t1, n):
    """n fixed RK4 steps; psi0 may be a vector or a matrix of columns."""
    h = (t1 - t0) / n
    tg = t0 + h * np.arange(n + 1)
    eg = drive.envelope_at(tg)
    em = drive.envelope_at(tg[:-1] + h / 2.0)
    psi = psi0
    for k in range(n):
        e1, e2, e3 = eg[k], em[k], eg[k + 1]
        k1 = -1j * (h0 @ psi + e1 * (cdag @ psi) + np.conj(e1) * (c @ psi))
        v = psi + (0.5 * h) * k1
        k2 = -1j * (h0 @ v + e2 * (cdag @ v) + np.conj(e2) * (c @ v))
        v = psi + (0.5 * h) * k2
        k3 = -1j * (h0 @ v + e2 * (cdag @ v) + np.conj(e2) * (c @ v))
        v = psi + h * k3
        k4 = -1j * (h0 @ v + e3 * (cdag @ v) + np.conj(e3) * (c @ v))
        psi = psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return psi


def _integrate_interval(h0, c, cdag, drive, psi0, t0, t1, tol, lam):
    """RK4 with step halving until successive refinements agree."""
    if t1 <= t0:
        return psi0
    n = max(4, int(np.ceil((t1 - t0) * lam / 0.5)))
    prev = _rk4_sweep(h0, c, cdag, drive, psi0, t0, t1, n)
    for _ in range(MAX_HALVINGS):
        n *= 2
        cur = _rk4_sweep(h0, c, cdag, drive, psi0, t0, t1, n)
        if float(np.max(np.abs(cur - prev))) < tol:
            return cur
        prev = cur
    raise QuadratureError(
        f"step-size underflow: no convergence to {tol:g} on [{t0:g}, {t1:g}]")


def _atoms_at(drive: DriveWaveform, t: float):
    return [a for a in drive.delta_atoms if a.time == t]


def _window_edges(drive: DriveWaveform, t0: float, t1: float) -> list[float]:
    """Interval edges: kicks in [t0, t1) and the end of the shaped drive."""
    edges = {t0, t1}
    edges.update(a.time for a in drive.delta_atoms if t0 <= a.time < t1)
    if t0 < drive.t_end < t1:
        edges.add(drive.t_end)
    return sorted(edges)


def propagate_nojump(system: SystemModel, cavity: CavityModel,
                     drive: DriveWaveform, state: JointState,
                     t0: float, t1: float,
                     tol: float = DEFAULT_STEP_TOL) -> JointState:
    """No-jump conditional propagation of the joint state over [t0, t1).

    Delta kicks with times in [t0, t1) are applied (a kick exactly at t1
    belongs to the next window).  The returned amplitude is unnormalized;
    with no drive its norm is non-increasing.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    h0, c, cdag, _ = joint_operators(system, cavity)
    lam = _spectral_scale(system, cavity, drive)
    psi = state.amplitudes
    edges = _window_edges(drive, t0, t1)
    for a, b in zip(edges[:-1], edges[1:]):
        for atom in _atoms_at(drive, a):
            psi = psi @ _kick_matrix(cavity.dim, atom.area).T
        flat = _integrate_interval(h0, c, cdag, drive, psi.reshape(-1),
                                   a, b, tol, lam)
        psi = flat.reshape(psi.shape)
    out = JointState(psi)
    check_joint_leakage(system, cavity, out, where=f"t={t1:g}")
    return out


# ---------------------------------------------------------------------------
# heralded state, both routes

def heralded_state(system: SystemModel, cavity: CavityModel,
                   drive: DriveWaveform, initial: np.ndarray, t_d: float,
                   t_final: float | None = None,
                   tol: float = DEFAULT_STEP_TOL) -> HeraldedResult:
    """Exactly-one-detected-click amplitude via the full no-jump path.

    Path: no-jump propagate 0 -> t_d, apply sqrt(kappa) c, no-jump propagate
    t_d -> t_final, project the cavity vacuum.  The matter state is reported
    in the detection-time frame (the deterministic free evolution over the
    tail is undone) so it compares directly with targets evaluated at t_d.
    """
    if cavity.kappa <= 0:
        raise ValueError("heralding requires a detected port, kappa > 0")
    if t_d < 0:
        raise ValueError("t_d must be >= 0")
    kn = cavity.kappa_total
    if t_final is None:
        t_final = t_d + TAIL_LIFETIMES / kn
    elif t_final < t_d + MIN_TAIL_LIFETIMES / kn:
        raise ValueError("t_final too close to t_d for the vacuum projection")
    joint = joint_from_matter(np.asarray(initial, dtype=complex), cavity)
    pre = propagate_nojump(system, cavity, drive, joint, 0.0, t_d, tol=tol)
    cav_c = annihilation(cavity.dim)
    clicked = JointState(np.sqrt(cavity.kappa) * (pre.amplitudes @ cav_c.T))
    post = propagate_nojump(system, cavity, drive, clicked, t_d, t_final,
                            tol=tol)
    psi1 = post.project_cavity_vacuum()
    psi1 = np.conj(free_phases(system, t_final - t_d)) * psi1
    r_s = float(np.vdot(psi1, psi1).real)
    return HeraldedResult(t_d=t_d, psi1=psi1, r_s=r_s,
                          record=ClickRecord((t_d,), 0))


def weak_drive_heralded_state(system: SystemModel, cavity: CavityModel,
                              drive: DriveWaveform, initial: np.ndarray,
                              t_d: float, tol: float = 1e-10,
                              max_rounds: int = 18) -> np.ndarray:
    """First-order heralded amplitude by quadrature.

    psi1 = -i*sqrt(kappa) * integral d tau E0(t_d - tau)
           * exp(-kappa_total*tau/2) * U1(tau) |initial>,
    with delta atoms added analytically.  Serves as the fast path for weak
    drives and as the independent oracle for heralded_state.
    """
    if t_d < 0:
        raise ValueError("t_d must be >= 0")
    evals, evecs = u1_eigensystem(system)
    w0 = evecs.conj().T @ np.asarray(initial, dtype=complex)
    kn = cavity.kappa_total

    def branch(tau):
        """exp(-i H1 tau - kn tau/2) |initial> in the eigenbasis, batched."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        ph = np.exp(np.outer(-1j * evals - kn / 2.0, tau))
        return ph * w0[:, None]

    acc = np.zeros(w0.shape, dtype=complex)
    for atom in drive.delta_atoms:
        if atom.time < t_d:
            acc = acc + atom.area * branch(t_d - atom.time)[:, 0]

    tau_lo = max(0.0, t_d - drive.t_end)
    tau_hi = t_d
    if drive.samples.size > 0 and tau_hi > tau_lo:
        rate = float(np.max(np.abs(evals))) + kn / 2.0 + system.omega
        n = int(max(64, np.ceil((tau_hi - tau_lo) * rate * 4.0)))
        prev = None
        converged = False
        for _ in range(max_rounds):
            tau = np.linspace(tau_lo, tau_hi, n + 1)
            integrand = branch(tau) * drive.envelope_at(t_d - tau)[None, :]
            integ = np.trapezoid(integrand, tau, axis=1)
            if prev is not None:
                scale = max(float(np.linalg.norm(integ)), 1e-300)
                if float(np.linalg.norm(integ - prev)) < tol * scale:
                    converged = True
                    acc = acc + integ
                    break
            prev = integ
            n *= 2
        if not converged:
            raise QuadratureError("weak-drive quadrature did not converge")

    psi1 = -1j * np.sqrt(cavity.kappa) * (evecs @ acc)
    norm2 = float(np.vdot(psi1, psi1).real)
    if isinstance(system, MechModel) and norm2 > 0.0:
        top = float(np.abs(psi1[-1]) ** 2) / norm2
        if top > LEAK_TOL:
            raise CutoffError(
                f"phonon cutoff n_ph_max={system.n_ph_max} too small "
                f"(top-level weight {top:.2e} in the heralded amplitude)")
    return psi1


# ---------------------------------------------------------------------------
# exact per-sector route for the spin (linear cavity in every J_z sector)

def _sector_trajectories(spin: SpinModel, cavity: CavityModel,
                         drive: DriveWaveform, t_grid: np.ndarray,
                         tol: float = 1e-11):
    """Coherent parameters (alpha_m, log mu_m) on a time grid, all sectors.

    In each J_z sector the cavity is a linear driven lossy mode, so the
    no-jump state stays an unnormalized coherent state
    mu * exp(alpha c^dag)|0>, with alpha' = -i*omega_tilde*alpha - i*E0 and
    (log mu)' = -i*conj(E0)*alpha.  A delta kick of area beta shifts alpha
    by -i*beta and rescales mu.  Exact at any drive strength.
    """
    wt = spin.omega_s * spin.m_values - 0.5j * cavity.kappa_total
    alpha = np.zeros(spin.dim, dtype=complex)
    logmu = np.zeros(spin.dim, dtype=complex)
    out_a = np.zeros((t_grid.size, spin.dim), dtype=complex)
    out_lm = np.zeros((t_grid.size, spin.dim), dtype=complex)

    def apply_kicks(t, alpha, logmu):
        for atom in _atoms_at(drive, t):
            gamma = -1j * atom.area
            logmu = logmu + 1j * np.imag(gamma * np.conj(alpha)) \
                + (np.abs(alpha) ** 2 - np.abs(alpha + gamma) ** 2) / 2.0
            alpha = alpha + gamma
        return alpha, logmu

    def quad_update(alpha0, logmu0, t0, t1, n):
        """Integrating-factor quadrature of the linear sector ODEs.

        alpha(t) = e^{-i wt (t-t0)} (alpha0 - i J(t)) with the cumulative
        J(t) = Int_t0^t E(u) e^{i wt (u-t0)} du; logmu accumulates
        -i Int conj(E) alpha via the same grid.
        """
        t = np.linspace(t0, t1, n + 1)
        h = (t1 - t0) / n
        e = drive.envelope_at(t)
        grow = np.exp(1j * np.outer(wt, t - t0))
        integrand = e[None, :] * grow
        j_cum = np.zeros_like(integrand)
        j_cum[:, 1:] = np.cumsum(
            0.5 * h * (integrand[:, 1:] + integrand[:, :-1]), axis=1)
        alpha_t = (alpha0[:, None] - 1j * j_cum) / grow
        dlog = -1j * np.trapezoid(np.conj(e)[None, :] * alpha_t, t, axis=1)
        return alpha_t[:, -1], logmu0 + dlog

    out_a[0], out_lm[0] = alpha, logmu
    for i in range(t_grid.size - 1):
        t0, t1 = float(t_grid[i]), float(t_grid[i + 1])
        alpha, logmu = apply_kicks(t0, alpha, logmu)
        if t1 > t0:
            scale = float(np.max(np.abs(wt))) + 1.0
            n = max(64, int(np.ceil((t1 - t0) * scale * 8.0)))
            coarse = quad_update(alpha, logmu, t0, t1, n)
            prev = None
            for _ in range(MAX_HALVINGS):
                n *= 2
                fine = quad_update(alpha, logmu, t0, t1, n)
                # one Richardson level: trapezoid error is O(h^2)-smooth
                rich = ((4.0 * fine[0] - coarse[0]) / 3.0,
                        (4.0 * fine[1] - coarse[1]) / 3.0)
                if prev is not None:
                    err = max(float(np.max(np.abs(rich[0] - prev[0]))),
                              float(np.max(np.abs(rich[1] - prev[1]))))
                    if err < tol:
                        break
                prev = rich
                coarse = fine
            else:
                raise QuadratureError("sector trajectory did not converge")
            alpha, logmu = prev
        out_a[i + 1], out_lm[i + 1] = alpha, logmu
    # a kick sitting exactly at the final grid time still rescales the
    # bookkeeping that outlives the grid (mu of the heralded amplitude)
    final_alpha, final_logmu = apply_kicks(float(t_grid[-1]), alpha, logmu)
    return out_a, out_lm, final_alpha, final_logmu


def _sector_grid(drive: DriveWaveform, times) -> np.ndarray:
    pts = {0.0, drive.t_end}
    pts.update(a.time for a in drive.delta_atoms)
    pts.update(float(t) for t in times)
    return np.array(sorted(pts))


def heralded_state_spin_exact(spin: SpinModel, cavity: CavityModel,
                              drive: DriveWaveform, initial: np.ndarray,
                              t_d: float) -> HeraldedResult:
    """Exact heralded amplitude for the spin at arbitrary drive strength.

    Same observable as heralded_state, from the closed coherent-state form
    of the per-sector no-jump evolution.  The vacuum-projected amplitude
    after the click is sqrt(kappa)*alpha_m(t_d)*mu_m, where mu_m keeps
    accumulating while the drive is on (clicks do not disturb a coherent
    state) and freezes once it is off; no explicit tail is needed.
    """
    if cavity.kappa <= 0:
        raise ValueError("heralding requires a detected port, kappa > 0")
    t_stop = max(t_d, drive.t_end)
    grid = _sector_grid(drive, [t_d, t_stop])
    grid = grid[grid <= t_stop + 1e-15]
    alphas, _, _, logmu_end = _sector_trajectories(spin, cavity, drive, grid)
    i_d = int(np.argmin(np.abs(grid - t_d)))
    psi1 = np.asarray(initial, dtype=complex) * np.sqrt(cavity.kappa) \
        * alphas[i_d] * np.exp(logmu_end)
    r_s = float(np.vdot(psi1, psi1).real)
    return HeraldedResult(t_d=t_d, psi1=psi1, r_s=r_s,
                          record=ClickRecord((t_d,), 0))


# ---------------------------------------------------------------------------
# unconditional transmission rate

def transmission_rate(system: SystemModel, cavity: CavityModel,
                      drive: DriveWaveform, initial: np.ndarray,
                      times, method: str = "auto",
                      tol: float = DEFAULT_STEP_TOL) -> np.ndarray:
    """R_t(t) = kappa * <c^dag c> from the unconditional master equation.

    method 'master' integrates the Lindblad equation with the single decay
    channel at rate kappa_total (the detected port reads out the kappa
    fraction); 'classical' uses the per-sector driven-mode amplitudes,
    exact for the spin; 'auto' picks classical for spins and master for
    the mechanics.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if method == "auto":
        method = "classical" if isinstance(system, SpinModel) else "master"
    if method == "classical":
        if not isinstance(system, SpinModel):
            raise ValueError("classical sector amplitudes exist only for spins")
        weights = np.abs(np.asarray(initial, dtype=complex)) ** 2
        grid = _sector_grid(drive, times)
        grid = grid[grid <= float(np.max(times)) + 1e-15]
        alphas = _sector_trajectories(system, cavity, drive, grid)[0]
        out = np.zeros(times.size)
        for k, t in enumerate(times):
            i = int(np.argmin(np.abs(grid - t)))
            out[k] = cavity.kappa * float(weights @ (np.abs(alphas[i]) ** 2))
        return out
    if method != "master":
        raise ValueError(f"unknown method {method!r}")
    return _master_transmission(system, cavity, drive, initial, times, tol)


def _master_transmission(system, cavity, drive, initial, times, tol):
    h0, c, cdag, nc = joint_operators(system, cavity)
    kn = cavity.kappa_total
    h_herm = h0 + 0.5j * kn * nc  # strip the anti-Hermitian part
    psi = joint_from_matter(np.asarray(initial, dtype=complex),
                            cavity).amplitudes.reshape(-1)
    rho = np.outer(psi, psi.conj())
    lam = 2.0 * _spectral_scale(system, cavity, drive)

    def rk4(rho, t0, t1, n):
        h = (t1 - t0) / n
        tg = t0 + h * np.arange(n + 1)
        eg = drive.envelope_at(tg)
        em = drive.envelope_at(tg[:-1] + h / 2.0)

        def rhs(e, r):
            hh = h_herm + e * cdag + np.conj(e) * c
            out = -1j * (hh @ r - r @ hh)
            if kn > 0:
                out = out + kn * (c @ r @ cdag - 0.5 * (nc @ r + r @ nc))
            return out

        r = rho
        for k in range(n):
            k1 = rhs(eg[k], r)
            k2 = rhs(em[k], r + 0.5 * h * k1)
            k3 = rhs(em[k], r + 0.5 * h * k2)
            k4 = rhs(eg[k + 1], r + h * k3)
            r = r + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return r

    def march(rho, t0, t1):
        for a, b in zip(*(lambda e: (e[:-1], e[1:]))(
                _window_edges(drive, t0, t1))):
            for atom in _atoms_at(drive, a):
                k = _joint_kick_matrix(system, cavity, atom.area)
                rho = k @ rho @ k.conj().T
            if b > a:
                n = max(4, int(np.ceil((b - a) * lam / 0.5)))
                prev = rk4(rho, a, b, n)
                for _ in range(MAX_HALVINGS):
                    n *= 2
                    cur = rk4(rho, a, b, n)
                    if float(np.max(np.abs(cur - prev))) < tol:
                        rho = cur
                        break
                    prev = cur
                else:
                    raise QuadratureError("master-equation step underflow")
        return rho

    order = np.argsort(times)
    out = np.zeros(times.size)
    t_prev = 0.0
    for idx in order:
        rho = march(rho, t_prev, float(times[idx]))
        t_prev = float(times[idx])
        out[idx] = cavity.kappa * float(np.trace(nc @ rho).real)
    return out


def success_ratio(system: SystemModel, cavity: CavityModel,
                  drive: DriveWaveform, initial: np.ndarray,
                  t: float | None = None) -> float:
    """R_s(t)/R_t(t) at the end of the shaped drive (or a given t).

    Warns when the result departs from exp(-|eps/omega|^2) by more than 5%
    inside the regime where that approximation should hold.
    """
    if t is None:
        t = drive.t_end
    if isinstance(system, SpinModel):
        r_s = heralded_state_spin_exact(system, cavity, drive, initial, t).r_s
    else:
        r_s = heralded_state(system, cavity, drive, initial, t).r_s
    r_t = float(transmission_rate(system, cavity, drive, initial, [t])[0])
    ratio = r_s / r_t
    eps_ratio = drive.epsilon / system.omega
    if eps_ratio <= 0.5:
        approx = float(np.exp(-eps_ratio ** 2))
        if abs(ratio - approx) > 0.05 * approx:
            warnings.warn(
                f"success ratio {ratio:.4f} departs from exp(-|eps/omega|^2)"
                f" = {approx:.4f} by more than 5%")
    return ratio


# ---------------------------------------------------------------------------
# click-record decomposition (completeness bookkeeping)

def record_completeness(system: SystemModel, cavity: CavityModel,
                        drive: DriveWaveform, initial: np.ndarray,
                        t_final: float, max_events: int = 3,
                        nodes_per_unit: float | None = None,
                        coarse_stride: int = 4, triple_stride: int = 3,
                        tol: float = DEFAULT_STEP_TOL) -> dict:
    """Probabilities of 0..max_events emission records up to t_final.

    A k-event record weight is the time-ordered integral of
    kappa_total^k * ||U(t_f,t_k) c .. c U(t_1,0) psi0||^2; the detected vs
    lost identity of each event is a binomial split in kappa/kappa_total
    and does not change the total.  The summed weights approach 1 minus the
    basis-truncation leakage.  Meant for small joint dimensions: stores
    suffix propagators at every quadrature node.
    """
    kn = cavity.kappa_total
    if kn <= 0:
        raise ValueError("no decay channel: the only record is no-emission")
    h0, c, cdag, _ = joint_operators(system, cavity)
    lam = _spectral_scale(system, cavity, drive)
    if nodes_per_unit is None:
        nodes_per_unit = 24.0 * max(kn, system.omega)

    # flat node list; duplicate times at kick boundaries carry one-sided
    # values (pre/post kick), link i connects node i to node i+1
    breaks = sorted({0.0, t_final} | {min(drive.t_end, t_final)}
                    | {a.time for a in drive.delta_atoms if a.time < t_final})
    node_t, piece_id, links = [], [], []
    dim = h0.shape[0]
    eye = np.eye(dim, dtype=complex)
    for p, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        grid = np.linspace(a, b, max(8, int(np.ceil((b - a) * nodes_per_unit))) + 1)
        if p > 0:
            kick = eye
            for atom in _atoms_at(drive, a):
                kick = _joint_kick_matrix(system, cavity, atom.area) @ kick
            links.append(kick)  # zero-duration link at the boundary
        elif _atoms_at(drive, a):
            # kick at t=0 folds into the first node's prefix
            pass
        node_t.extend(grid.tolist())
        piece_id.extend([p] * grid.size)
        for k in range(grid.size - 1):
            links.append(_integrate_interval(h0, c, cdag, drive, eye,
                                             float(grid[k]),
                                             float(grid[k + 1]), tol, lam))
    node_t = np.array(node_t)
    piece_id = np.array(piece_id)
    n_nodes = node_t.size

    psi0 = joint_from_matter(np.asarray(initial, dtype=complex),
                             cavity).amplitudes.reshape(-1)
    for atom in _atoms_at(drive, 0.0):
        psi0 = _joint_kick_matrix(system, cavity, atom.area) @ psi0

    prefix = np.zeros((n_nodes, dim), dtype=complex)
    prefix[0] = psi0
    for i in range(n_nodes - 1):
        prefix[i + 1] = links[i] @ prefix[i]
    suffix = np.zeros((n_nodes, dim, dim), dtype=complex)
    suffix[-1] = eye
    for i in range(n_nodes - 2, -1, -1):
        suffix[i] = suffix[i + 1] @ links[i]

    def node_weights(indices):
        """Per-piece trapezoid weights on a subset of node indices."""
        w = np.zeros(len(indices))
        idx = np.asarray(indices)
        for p in np.unique(piece_id[idx]):
            local = np.where(piece_id[idx] == p)[0]
            tt = node_t[idx[local]]
            if tt.size == 1:
                continue
            lw = np.zeros(tt.size)
            lw[0] = (tt[1] - tt[0]) / 2.0
            lw[-1] += (tt[-1] - tt[-2]) / 2.0
            if tt.size > 2:
                lw[1:-1] = (tt[2:] - tt[:-2]) / 2.0
            w[local] = lw
        return w

    out = {0: float(np.vdot(prefix[-1], prefix[-1]).real)}

    jumped = (c @ prefix.T).T  # c psi_nj at every node
    if max_events >= 1:
        w_all = node_weights(np.arange(n_nodes))
        dens = np.array([kn * float(np.vdot(suffix[i] @ jumped[i],
                                            suffix[i] @ jumped[i]).real)
                         for i in range(n_nodes)])
        out[1] = float(w_all @ dens)

    if max_events >= 2:
        sel = _strided_selection(piece_id, coarse_stride)
        wsel = node_weights(sel)
        nsel = len(sel)
        w2 = np.zeros((nsel, nsel))
        for i in range(nsel):
            v = jumped[sel[i]].copy()
            for j in range(i, nsel):
                fv = suffix[sel[j]] @ (c @ v)
                w2[i, j] = kn ** 2 * float(np.vdot(fv, fv).real)
                if j < nsel - 1:
                    for lk in range(sel[j], sel[j + 1]):
                        v = links[lk] @ v
        p2 = 0.0
        for i in range(nsel):
            for j in range(i, nsel):
                mult = 2.0 if j > i else 1.0
                p2 += wsel[i] * wsel[j] * w2[i, j] * mult
        out[2] = p2 / 2.0

    if max_events >= 3:
        sel_all = _strided_selection(piece_id, coarse_stride)
        sel3 = sel_all[::triple_stride]
        if sel3[-1] != sel_all[-1]:
            sel3 = sel3 + [sel_all[-1]]
        w3sel = node_weights(sel3)
        n3 = len(sel3)
        p3 = 0.0
        for i in range(n3):
            v1 = jumped[sel3[i]].copy()
            for j in range(i, n3):
                v2k = c @ v1
                for k in range(j, n3):
                    fv = suffix[sel3[k]] @ (c @ v2k)
                    w3 = kn ** 3 * float(np.vdot(fv, fv).real)
                    mult = _ordered_multiplicity(i, j, k)
                    p3 += w3sel[i] * w3sel[j] * w3sel[k] * w3 * mult
                    if k < n3 - 1:
                        for lk in range(sel3[k], sel3[k + 1]):
                            v2k = links[lk] @ v2k
                if j < n3 - 1:
                    for lk in range(sel3[j], sel3[j + 1]):
                        v1 = links[lk] @ v1
        out[3] = p3 / 6.0

    out["total"] = float(sum(v for k, v in out.items() if isinstance(k, int)))
    return out


def _strided_selection(piece_id: np.ndarray, stride: int) -> list[int]:
    """Every stride-th node per piece, always keeping piece endpoints."""
    sel = []
    for p in np.unique(piece_id):
        idxs = np.where(piece_id == p)[0]
        keep = list(idxs[::stride])
        if keep[-1] != idxs[-1]:
            keep.append(idxs[-1])
        sel.extend(keep)
    return sel


def _ordered_multiplicity(i: int, j: int, k: int) -> float:
    if i == j == k:
        return 1.0
    if i == j or j == k:
        return 3.0
    return 6.0


# ---------------------------------------------------------------------------
# debugging export

def dump_trajectory_csv(path, system: SystemModel, cavity: CavityModel,
                        drive: DriveWaveform, initial: np.ndarray,
                        times) -> None:
    """Write the no-jump state at the given times: t, sector, re, im."""
    times = sorted(float(t) for t in np.atleast_1d(times))
    state = joint_from_matter(np.asarray(initial, dtype=complex), cavity)
    if isinstance(system, SpinModel):
        matter_labels = [f"m={m:g}" for m in system.m_values]
    else:
        matter_labels = [f"ph={k}" for k in range(system.dim)]
    rows = ["t,sector,re,im"]
    t_prev = 0.0
    for t in times:
        state = propagate_nojump(system, cavity, drive, state, t_prev, t)
        t_prev = t
        for i, ml in enumerate(matter_labels):
            for n in range(cavity.dim):
                z = state.amplitudes[i, n]
                rows.append(f"{t:.16e},{ml}|n={n},{z.real:.16e},{z.imag:.16e}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(rows) + "\n")
