"""Run configuration: TOML loading, unit conversion, model construction.

Physical quantities may be plain numbers (already in the native units:
rad/s for rates, rad for angles, s for times) or strings with an explicit
unit suffix.  Frequency suffixes (Hz, kHz, MHz, GHz) denote ordinary
frequencies and are converted to angular rates with the 2*pi factor, so
``kappa = "500 MHz"`` means kappa = 2*pi*5e8 rad/s.  Dimensionless runs
just set kappa = 1.0 and quote everything in cavity units.
"""

from __future__ import annotations

import copy

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .exceptions import ConfigError
from .herald import DetectorModel, kappa_loss_from_cooperativity
from .statespace import CavityModel, MechModel, SpinModel

_RATE_UNITS = {
    "Hz": 2.0 * np.pi,
    "kHz": 2.0 * np.pi * 1e3,
    "MHz": 2.0 * np.pi * 1e6,
    "GHz": 2.0 * np.pi * 1e9,
    "rad/s": 1.0,
}
_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
_ANGLE_UNITS = {"rad": 1.0, "deg": np.pi / 180.0}


def parse_quantity(value, kind: str) -> float:
    """Convert a number or 'value unit' string to native units."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"cannot parse quantity {value!r}")
    parts = value.split()
    if len(parts) != 2:
        raise ConfigError(f"quantity {value!r} must be 'number unit'")
    try:
        num = float(parts[0])
    except ValueError as exc:
        raise ConfigError(f"bad number in quantity {value!r}") from exc
    units = {"rate": _RATE_UNITS, "time": _TIME_UNITS,
             "angle": _ANGLE_UNITS}.get(kind)
    if units is None:
        raise ConfigError(f"unknown quantity kind {kind!r}")
    if parts[1] not in units:
        raise ConfigError(f"unknown {kind} unit {parts[1]!r} in {value!r}")
    return num * units[parts[1]]


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from exc


# preset defaults; physical values in native units (rad/s, rad, s)
_TWO_PI = 2.0 * np.pi

PRESET_DEFAULTS = {
    "cat-spin": {
        "system": {"kind": "spin", "n_atoms": 30, "omega_s": 1.0},
        "cavity": {"kappa": 1.0, "kappa_loss": 0.0},
        "drive": {"phi_sep": 2.0 * np.pi / 3.0, "rel_phase": 0.0,
                  "eps_over_omega": list(np.logspace(-2, 0, 9))},
        "detector": {"q": 1.0,
                     "rd_over_qkappa": [1e-5, 1e-4, 1e-3, 1e-2]},
        "run": {},
    },
    "cat-mech": {
        "system": {"kind": "mech", "omega_m": _TWO_PI * 100e3 / 8.0,
                   "g0": _TWO_PI * 100e3, "n_ph_max": 140},
        "cavity": {"kappa": _TWO_PI * 100e3, "kappa_loss": 0.0},
        "drive": {"t_sep": 3.0 / (_TWO_PI * 100e3), "rel_phase": 0.0,
                  "eps_over_omega": [1e-3]},
        "detector": {"q": 1.0,
                     "rd_over_qkappa": [1e-6, 1e-5, 1e-4, 1e-3]},
        "run": {"t_d_count": 65, "t_d_span_lifetimes": 2.0},
    },
    "dicke": {
        "system": {"kind": "spin", "n_atoms": 8, "omega_s": 1.0},
        "cavity": {"kappa": 1.0, "kappa_loss": 0.0},
        "drive": {"m_target": 2, "eps_over_omega": [1e-3]},
        "detector": {"q": 1.0, "rd_over_qkappa": [0.0]},
        "run": {"t_d_count": 5, "t_d_span_lifetimes": 2.0},
    },
    "fock": {
        "system": {"kind": "mech", "omega_m": 1.0, "g0": 0.5, "n_ph_max": 32},
        "cavity": {"kappa": 1.0, "kappa_loss": 0.0},
        "drive": {"m_target": 1, "eps_over_omega": [1e-3]},
        "detector": {"q": 1.0, "rd_over_qkappa": [0.0]},
        "run": {"t_d_count": 3, "t_d_span_lifetimes": 1.0},
    },
    "mech-qubit": {
        "system": {"kind": "mech", "omega_m": _TWO_PI * 4e9,
                   "g0": _TWO_PI * 1e6, "n_ph_max": 10},
        "cavity": {"kappa": _TWO_PI * 500e6, "kappa_loss": 0.0},
        "drive": {"eps_over_omega": [1e-3]},
        "detector": {"q": 1.0,
                     "rd_over_qkappa": [1e-10, 1e-9, 1e-8, 1e-7]},
        "run": {"t_d_count": 3, "t_d_span_lifetimes": 1.0},
    },
    "paint": {
        "system": {"kind": "spin", "n_atoms": 8, "omega_s": 1.0},
        "cavity": {"kappa": 1.0, "kappa_loss": 0.0},
        "drive": {"eps_over_omega": [1e-3]},
        "detector": {"q": 1.0, "rd_over_qkappa": [0.0]},
        "run": {"t_d_count": 3, "t_d_span_lifetimes": 1.0},
    },
}

_QUANTITY_KINDS = {
    ("system", "omega_s"): "rate",
    ("system", "omega_m"): "rate",
    ("system", "g0"): "rate",
    ("cavity", "kappa"): "rate",
    ("cavity", "kappa_loss"): "rate",
    ("cavity", "gamma"): "rate",
    ("cavity", "g_rabi"): "rate",
    ("drive", "phi_sep"): "angle",
    ("drive", "rel_phase"): "angle",
    ("drive", "t_sep"): "time",
    ("detector", "r_d"): "rate",
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(preset: str, user: dict) -> dict:
    """Preset defaults overlaid with the user config, units normalized."""
    if preset not in PRESET_DEFAULTS:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = _merge(PRESET_DEFAULTS[preset], user or {})
    if "system" not in cfg or "kind" not in cfg["system"]:
        raise ConfigError("config must contain a [system] block with a kind")
    kind = cfg["system"]["kind"]
    if kind not in ("spin", "mech"):
        raise ConfigError(f"system kind must be 'spin' or 'mech', got {kind!r}")
    spin_keys = {"omega_s", "n_atoms"}
    mech_keys = {"omega_m", "g0", "n_ph_max"}
    wrong = (mech_keys if kind == "spin" else spin_keys) \
        & set(k for k in cfg["system"] if k != "kind")
    if wrong:
        raise ConfigError(f"system block mixes spin and mech keys: {wrong}")
    for (block, key), qkind in _QUANTITY_KINDS.items():
        if block in cfg and key in cfg[block] and cfg[block][key] is not None:
            cfg[block][key] = parse_quantity(cfg[block][key], qkind)
    for block, key in (("drive", "eps_over_omega"),
                       ("detector", "rd_over_qkappa")):
        if block in cfg and key in cfg[block] \
                and not isinstance(cfg[block][key], (list, tuple)):
            cfg[block][key] = [float(cfg[block][key])]
    cfg["preset"] = preset
    return cfg


def build_system(cfg: dict):
    sys_cfg = cfg["system"]
    if sys_cfg["kind"] == "spin":
        return SpinModel(n_atoms=int(sys_cfg["n_atoms"]),
                         omega_s=float(sys_cfg["omega_s"]))
    return MechModel(omega_m=float(sys_cfg["omega_m"]),
                     g0=float(sys_cfg["g0"]),
                     n_ph_max=int(sys_cfg.get("n_ph_max", 32)))


def build_cavity(cfg: dict, system) -> CavityModel:
    cav = cfg["cavity"]
    kappa = float(cav["kappa"])
    if "eta" in cav and "kappa_loss" not in cfg.get("_user_cavity", {}):
        if not isinstance(system, SpinModel):
            raise ConfigError("cooperativity-based loss needs a spin system")
        kappa_loss = kappa_loss_from_cooperativity(
            float(cav["eta"]), system.n_atoms, system.omega_s, kappa)
    else:
        kappa_loss = float(cav.get("kappa_loss", 0.0))
    return CavityModel(kappa=kappa, kappa_loss=kappa_loss,
                       n_c_max=int(cav["n_c_max"])) \
        if cav.get("n_c_max") is not None \
        else CavityModel(kappa=kappa, kappa_loss=kappa_loss)


def build_detector(cfg: dict) -> DetectorModel:
    det = cfg.get("detector", {})
    return DetectorModel(q=float(det.get("q", 1.0)),
                         r_d=float(det.get("r_d", 0.0)))
