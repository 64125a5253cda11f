"""Phase-space maps for verification and figures.

Oscillator states get a Wigner function on coherent-amplitude coordinates:
a coherent state of amplitude b peaks at (x, p) = (Re b, Im b), which is
the displacement in zero-point units, and the map integrates to 1 over the
plane (vacuum peak 2/pi).  Spin states get the Husimi distribution on the
sphere, Q(theta, phi) = (2J+1)/(4pi) |<CSS(theta,phi)|psi>|^2, integrating
to 1 against sin(theta) dtheta dphi.

The Wigner values come from the position-representation integral
W(x,p) = (1/pi) Int dy psi*(x+y) psi(x-y) exp(2ipy) evaluated with stable
Hermite-function recurrences, then rescaled to the coherent-amplitude
coordinates; this is equivalent to the displaced-parity expectation and
avoids the large-argument Laguerre cancellations of the truncated
displacement matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .statespace import SpinModel, coherent_spin_state

WINDOW_EDGE_TOL = 1e-6


@dataclass
class PhaseSpaceGrid:
    """Rectangular phase-space map: axes plus a real value array."""

    kind: str                  # "wigner" or "husimi"
    axis1: np.ndarray          # x values, or theta
    axis2: np.ndarray          # p values, or phi
    values: np.ndarray         # shape (len(axis1), len(axis2))
    meta: dict = field(default_factory=dict)

    def min_value(self) -> float:
        return float(np.min(self.values))


# ---------------------------------------------------------------------------
# oscillator Wigner function

def _psi_position(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Wavefunction sum_n c_n phi_n(x) by the Hermite-function recurrence."""
    coeffs = np.asarray(coeffs, dtype=complex)
    h_prev = np.pi ** -0.25 * np.exp(-x ** 2 / 2.0)
    acc = coeffs[0] * h_prev
    if coeffs.size == 1:
        return acc
    h_cur = np.sqrt(2.0) * x * h_prev
    acc = acc + coeffs[1] * h_cur
    for n in range(2, coeffs.size):
        h_next = np.sqrt(2.0 / n) * x * h_cur - np.sqrt((n - 1) / n) * h_prev
        acc = acc + coeffs[n] * h_next
        h_prev, h_cur = h_cur, h_next
    return acc


def _y_quadrature(coeffs_len: int, x_std_max: float, p_std_max: float):
    """Uniform y grid resolving both wavefunction and transform phases."""
    support = np.sqrt(2.0 * (coeffs_len + 1.0)) + 6.0
    half = x_std_max + support
    k_max = 2.0 * np.sqrt(2.0 * (coeffs_len + 1.0)) + 2.0 * p_std_max + 4.0
    dy = np.pi / (1.25 * k_max)
    n = int(np.ceil(2.0 * half / dy)) + 1
    return np.linspace(-half, half, n)


def wigner_values(state: np.ndarray, xs: np.ndarray,
                  ps: np.ndarray) -> np.ndarray:
    """W on the product grid xs x ps; coherent-amplitude coordinates."""
    state = np.asarray(state, dtype=complex)
    state = state / np.linalg.norm(state)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ps = np.atleast_1d(np.asarray(ps, dtype=float))
    x_std = np.sqrt(2.0) * xs
    p_std = np.sqrt(2.0) * ps
    y = _y_quadrature(state.size, float(np.max(np.abs(x_std), initial=0.0)),
                      float(np.max(np.abs(p_std), initial=0.0)))
    psi_plus = _psi_position(state, x_std[:, None] + y[None, :])
    psi_minus = _psi_position(state, x_std[:, None] - y[None, :])
    g = np.conj(psi_plus) * psi_minus
    dy = y[1] - y[0]
    phases = np.exp(2j * np.outer(y, p_std)) * dy
    w_std = (g @ phases).real / np.pi
    return 2.0 * w_std  # Jacobian of (x,p) -> (x,p)/sqrt(2)


def wigner_point_values(state: np.ndarray, points_x: np.ndarray,
                        points_p: np.ndarray) -> np.ndarray:
    """W at arbitrary (x, p) pairs (same-length arrays)."""
    state = np.asarray(state, dtype=complex)
    state = state / np.linalg.norm(state)
    x_std = np.sqrt(2.0) * np.atleast_1d(np.asarray(points_x, dtype=float))
    p_std = np.sqrt(2.0) * np.atleast_1d(np.asarray(points_p, dtype=float))
    y = _y_quadrature(state.size, float(np.max(np.abs(x_std))),
                      float(np.max(np.abs(p_std))))
    psi_plus = _psi_position(state, x_std[:, None] + y[None, :])
    psi_minus = _psi_position(state, x_std[:, None] - y[None, :])
    g = np.conj(psi_plus) * psi_minus
    dy = y[1] - y[0]
    phases = np.exp(2j * y[None, :] * p_std[:, None]) * dy
    return 2.0 * np.sum(g * phases, axis=1).real / np.pi


def _auto_window(state: np.ndarray):
    """Initial window from the first two moments of the mode amplitude."""
    state = np.asarray(state, dtype=complex)
    state = state / np.linalg.norm(state)
    n = state.size
    ns = np.arange(n)
    a_psi = np.zeros(n, dtype=complex)
    a_psi[:-1] = np.sqrt(ns[1:]) * state[1:]
    mean_a = complex(np.vdot(state, a_psi))
    mean_n = float(np.vdot(state, ns * state).real)
    # conservative symmetric window around the mean amplitude
    spread = np.sqrt(max(mean_n - abs(mean_a) ** 2, 0.0) + 1.0)
    cx, cp = mean_a.real, mean_a.imag
    half = 3.5 * spread + 1.5
    return cx, cp, half


def wigner(state: np.ndarray, x_range=None, p_range=None, nx: int = 101,
           n_p: int = 101, max_expand: int = 8) -> PhaseSpaceGrid:
    """Wigner map on an auto-expanded window covering the state support."""
    if x_range is None or p_range is None:
        cx, cp, half = _auto_window(state)
        x_range = (cx - half, cx + half)
        p_range = (cp - half, cp + half)
    for _ in range(max_expand):
        xs = np.linspace(*x_range, nx)
        ps = np.linspace(*p_range, n_p)
        vals = wigner_values(state, xs, ps)
        edge = max(float(np.max(np.abs(vals[0, :]))),
                   float(np.max(np.abs(vals[-1, :]))),
                   float(np.max(np.abs(vals[:, 0]))),
                   float(np.max(np.abs(vals[:, -1]))))
        if edge < WINDOW_EDGE_TOL:
            break
        grow_x = 0.25 * (x_range[1] - x_range[0])
        grow_p = 0.25 * (p_range[1] - p_range[0])
        x_range = (x_range[0] - grow_x, x_range[1] + grow_x)
        p_range = (p_range[0] - grow_p, p_range[1] + grow_p)
    return PhaseSpaceGrid(kind="wigner", axis1=xs, axis2=ps, values=vals,
                          meta={"x_range": list(x_range),
                                "p_range": list(p_range)})


def wigner_integral(grid: PhaseSpaceGrid) -> float:
    return float(np.trapezoid(np.trapezoid(grid.values, grid.axis2, axis=1),
                              grid.axis1))


def wigner_negativity(grid: PhaseSpaceGrid) -> tuple[float, float]:
    """(min W, integrated negative volume)."""
    neg = np.where(grid.values < 0.0, grid.values, 0.0)
    vol = float(np.trapezoid(np.trapezoid(neg, grid.axis2, axis=1),
                             grid.axis1))
    return float(np.min(grid.values)), -vol


def find_lobes(grid: PhaseSpaceGrid, exclusion_radius: float = 1.2,
               smooth_sigma: float = 0.55):
    """Locations of the two strongest coherent lobes and their separation.

    Interference fringes of a cat state peak higher than the lobes
    themselves, so the peak search runs on a copy smoothed with a
    coherent-state-width Gaussian, which suppresses the fringes while
    barely moving the lobe centers.
    """
    from scipy.ndimage import gaussian_filter
    dx = grid.axis1[1] - grid.axis1[0]
    dp = grid.axis2[1] - grid.axis2[0]
    vals = gaussian_filter(grid.values, sigma=(smooth_sigma / dx,
                                               smooth_sigma / dp),
                           mode="constant")
    i1, j1 = np.unravel_index(np.argmax(vals), vals.shape)
    x1, p1 = grid.axis1[i1], grid.axis2[j1]
    xx, pp = np.meshgrid(grid.axis1, grid.axis2, indexing="ij")
    masked = np.where((xx - x1) ** 2 + (pp - p1) ** 2
                      > exclusion_radius ** 2, vals, -np.inf)
    i2, j2 = np.unravel_index(np.argmax(masked), vals.shape)
    x2, p2 = grid.axis1[i2], grid.axis2[j2]
    sep = float(np.hypot(x2 - x1, p2 - p1))
    return (float(x1), float(p1)), (float(x2), float(p2)), sep


# ---------------------------------------------------------------------------
# spin Husimi distribution on the sphere

def husimi_sphere(spin: SpinModel, state: np.ndarray, n_theta: int = 64,
                  n_phi: int = 128) -> PhaseSpaceGrid:
    """Q(theta, phi) over a product mesh; phi excludes the 2pi endpoint."""
    state = np.asarray(state, dtype=complex)
    state = state / np.linalg.norm(state)
    thetas = np.linspace(0.0, np.pi, n_theta)
    phis = np.linspace(0.0, 2.0 * np.pi, n_phi, endpoint=False)
    j = spin.j
    m = spin.m_values
    # conj(css amplitudes) factorize: B_m(theta) * exp(+i m phi)
    bmat = np.zeros((n_theta, spin.dim))
    for i, th in enumerate(thetas):
        bmat[i] = coherent_spin_state(spin, th, 0.0).real
    phase = np.exp(1j * np.outer(m, phis))
    overlaps = (bmat * state[None, :]) @ phase
    q = (2.0 * j + 1.0) / (4.0 * np.pi) * np.abs(overlaps) ** 2
    return PhaseSpaceGrid(kind="husimi", axis1=thetas, axis2=phis, values=q)


def husimi_integral(grid: PhaseSpaceGrid) -> float:
    """Integral of Q sin(theta) dtheta dphi (phi by the periodic rectangle)."""
    dphi = grid.axis2[1] - grid.axis2[0]
    inner = np.sum(grid.values, axis=1) * dphi
    return float(np.trapezoid(inner * np.sin(grid.axis1), grid.axis1))


# ---------------------------------------------------------------------------
# exports

def grid_to_csv(grid: PhaseSpaceGrid, path) -> None:
    names = ("x", "p", "W") if grid.kind == "wigner" else ("theta", "phi", "Q")
    lines = [",".join(names)]
    for i, a in enumerate(grid.axis1):
        for k, b in enumerate(grid.axis2):
            lines.append(f"{a:.16e},{b:.16e},{grid.values[i, k]:.16e}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _diverging_color(v: float, vmax: float) -> str:
    """Blue-white-red scale anchored at zero."""
    if vmax <= 0:
        return "#ffffff"
    t = max(-1.0, min(1.0, v / vmax))
    if t >= 0:
        r, g, b = 255, int(255 * (1 - t)), int(255 * (1 - t))
    else:
        r, g, b = int(255 * (1 + t)), int(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def grid_to_svg(grid: PhaseSpaceGrid, path, cell_px: int = 4) -> None:
    """Minimal deterministic heatmap; diverging scale anchored at 0."""
    n1, n2 = grid.values.shape
    width, height = n2 * cell_px, n1 * cell_px
    vmax = float(np.max(np.abs(grid.values)))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f"<!-- {grid.kind}: rows axis1 {grid.axis1[0]:.6g}..{grid.axis1[-1]:.6g}, "
        f"cols axis2 {grid.axis2[0]:.6g}..{grid.axis2[-1]:.6g}, "
        f"color scale +-{vmax:.6g} anchored at 0 -->",
    ]
    for i in range(n1):
        for k in range(n2):
            color = _diverging_color(float(grid.values[n1 - 1 - i, k]), vmax)
            parts.append(f'<rect x="{k * cell_px}" y="{i * cell_px}" '
                         f'width="{cell_px}" height="{cell_px}" '
                         f'fill="{color}"/>')
    parts.append("</svg>")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(parts) + "\n")
