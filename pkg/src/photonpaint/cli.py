"""Configuration-driven command-line front end.

Subcommands map to the scenario presets (cat-spin, cat-mech, dicke, fock,
mech-qubit, paint), a generic sweep runner, and phase-space exporters
(wigner, husimi).  Every run writes results.csv, metadata.json and the
fully-resolved config into the output directory; data files contain no
timestamps, so identical configs give byte-identical CSV output.

Exit codes: 0 success, 2 configuration error, 3 physics-validity error
(cutoff leakage, unreachable target).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, config as cfgmod, evolve, herald, phasespace, pulses
from .exceptions import ConfigError, PhysicsValidityError
from .statespace import MechModel, SpinModel, default_initial_state

log = logging.getLogger("photonpaint")

PRESETS = ("cat-spin", "cat-mech", "dicke", "fock", "mech-qubit", "paint")


def _fmt(value) -> str:
    return f"{float(value):.16e}"


def write_rows_csv(path, rows) -> None:
    lines = [",".join(herald.SWEEP_COLUMNS)]
    for row in rows:
        cells = []
        for col in herald.SWEEP_COLUMNS:
            v = row[col]
            cells.append(str(v) if col == "preset" else _fmt(v))
        lines.append(",".join(cells))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _drive_for(cfg, system):
    """Build the configured drive at the first sweep epsilon."""
    drv = cfg["drive"]
    eps = float(drv["eps_over_omega"][0]) * system.omega
    kn = float(cfg["cavity"]["kappa"]) + float(cfg["cavity"].get("kappa_loss", 0.0))
    preset = cfg["preset"]
    if preset in ("cat-spin", "cat-mech"):
        phi = _phi_sep(cfg, system)
        return pulses.cat_pulse(phi, float(drv.get("rel_phase", 0.0)),
                                system.omega, kn, eps)
    if preset in ("dicke", "fock"):
        basis = "dicke" if isinstance(system, SpinModel) else "displaced_fock"
        tgt = pulses.TargetSpec.from_coeffs([float(drv["m_target"])], [1.0],
                                            basis)
        return pulses.synthesize_from_coeffs(tgt, system,
                                             default_initial_state(system),
                                             kn, eps)
    if preset == "mech-qubit":
        return pulses.mech_qubit_pulse(system, kn, eps)
    if preset == "paint":
        spec = _paint_target(cfg)
        return pulses.synthesize_from_weight(spec, system.omega, kn, eps)
    raise ConfigError(f"no drive builder for preset {preset!r}")


def _phi_sep(cfg, system) -> float:
    drv = cfg["drive"]
    if "phi_sep" in drv:
        return float(drv["phi_sep"])
    if "t_sep" in drv:
        return system.omega * float(drv["t_sep"])
    raise ConfigError("cat presets need phi_sep or t_sep in [drive]")


def _paint_target(cfg) -> pulses.TargetSpec:
    drv = cfg["drive"]
    if "f_table" in drv:
        path = drv["f_table"]
        try:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except OSError as exc:
            raise ConfigError(f"cannot read f table {path!r}: {exc}") from exc
        phi = data[:, 0]
        f_re = data[:, 1]
        f_im = data[:, 2] if data.shape[1] > 2 else np.zeros_like(phi)
    elif "f_phi" in drv:
        phi = np.asarray(drv["f_phi"], dtype=float)
        f_re = np.asarray(drv["f_re"], dtype=float)
        f_im = np.asarray(drv.get("f_im", np.zeros_like(phi)), dtype=float)
    else:
        raise ConfigError("paint preset needs f_table or f_phi/f_re in [drive]")
    return pulses.TargetSpec.from_weight(phi, f_re + 1j * f_im)


def _t_d_values(cfg, system, drive) -> list[float]:
    run = cfg.get("run", {})
    if "t_d" in run:
        vals = run["t_d"]
        return [float(v) for v in (vals if isinstance(vals, list) else [vals])]
    kn = float(cfg["cavity"]["kappa"]) + float(cfg["cavity"].get("kappa_loss", 0.0))
    if cfg["preset"] == "cat-spin":
        return [drive.t_end]
    count = int(run.get("t_d_count", 3))
    span = float(run.get("t_d_span_lifetimes", 1.0)) / kn
    return [drive.t_end + span * (i + 1) / count for i in range(count)]


def _base_params(cfg, system) -> dict:
    params = {"preset": cfg["preset"], "q": float(cfg["detector"].get("q", 1.0)),
              "kappa": float(cfg["cavity"]["kappa"]),
              "kappa_loss": float(cfg["cavity"].get("kappa_loss", 0.0))}
    if cfg["cavity"].get("n_c_max") is not None:
        params["n_c_max"] = int(cfg["cavity"]["n_c_max"])
    if "eta" in cfg["cavity"]:
        params["eta"] = float(cfg["cavity"]["eta"])
    if isinstance(system, SpinModel):
        params.update(system_kind="spin", n_atoms=system.n_atoms,
                      omega_s=system.omega_s)
    else:
        params.update(system_kind="mech", omega_m=system.omega_m,
                      g0=system.g0, n_ph_max=system.n_ph_max)
    drv = cfg["drive"]
    if cfg["preset"] in ("cat-spin", "cat-mech"):
        params["phi_sep"] = _phi_sep(cfg, system)
        params["rel_phase"] = float(drv.get("rel_phase", 0.0))
    if "m_target" in drv:
        params["m_target"] = float(drv["m_target"])
    if cfg["preset"] == "paint":
        spec = _paint_target(cfg)
        params["f_phi"] = spec.phi_grid.tolist()
        params["f_re"] = spec.f_samples.real.tolist()
        params["f_im"] = spec.f_samples.imag.tolist()
    return params


def build_plan(cfg) -> herald.SweepPlan:
    system = cfgmod.build_system(cfg)
    drive = _drive_for(cfg, system)
    base = _base_params(cfg, system)
    axes = [
        ("eps_over_omega", [float(v) for v in cfg["drive"]["eps_over_omega"]]),
        ("rd_over_qkappa", [float(v) for v in
                            cfg["detector"].get("rd_over_qkappa", [0.0])]),
        ("t_d", _t_d_values(cfg, system, drive)),
    ]
    return herald.SweepPlan(preset=cfg["preset"], base=base, axes=axes)


def _heralded_state_for(cfg):
    """Normalized heralded matter state at the first configured cell."""
    system = cfgmod.build_system(cfg)
    drive = _drive_for(cfg, system)
    cavity = cfgmod.build_cavity(cfg, system)
    if cfg["cavity"].get("n_c_max") is None:
        n_c = herald.cavity_cutoff_for(drive, cavity.kappa_total)
        cavity = type(cavity)(kappa=cavity.kappa, kappa_loss=cavity.kappa_loss,
                              n_c_max=n_c)
    initial = default_initial_state(system)
    t_d = _t_d_values(cfg, system, drive)[0]
    eps_ratio = float(cfg["drive"]["eps_over_omega"][0])
    if isinstance(system, SpinModel):
        res = evolve.heralded_state_spin_exact(system, cavity, drive, initial,
                                               t_d)
        psi = res.psi1
    elif eps_ratio <= 0.01:
        psi = evolve.weak_drive_heralded_state(system, cavity, drive, initial,
                                               t_d)
    else:
        psi = evolve.heralded_state(system, cavity, drive, initial, t_d).psi1
    return system, psi / np.linalg.norm(psi), t_d


def _preset_extras(cfg, rows) -> dict:
    extras = {}
    if cfg["preset"] == "mech-qubit" and rows:
        system = cfgmod.build_system(cfg)
        a_norm = pulses.mech_qubit_amplitude(system)
        kn = float(cfg["cavity"]["kappa"]) + float(cfg["cavity"].get("kappa_loss", 0.0))
        row = rows[0]
        ref = float(cfg["cavity"]["kappa"]) \
            * (row["eps_over_omega"] * a_norm) ** 2 \
            * np.exp(-kn * row["t_d"])
        extras["heralding_suppression_measured"] = row["r_s"] / ref
        extras["heralding_suppression_predicted"] = \
            8.0 * np.pi ** 2 * system.x1 ** 2 * np.exp(-system.x1 ** 2)
        extras["x1_squared"] = system.x1 ** 2
    return extras


def _write_outputs(out_dir, cfg, rows, errors, formats, extras) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_rows_csv(os.path.join(out_dir, "results.csv"), rows)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, default=list)
    meta = {
        "package": "photonpaint",
        "version": __version__,
        "preset": cfg.get("preset"),
        "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "rows": len(rows),
        "cell_errors": [{"index": i, "error": msg} for i, msg in errors],
        **extras,
    }
    with open(os.path.join(out_dir, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    if "json" in formats:
        with open(os.path.join(out_dir, "results.json"), "w") as fh:
            json.dump([{k: (v if isinstance(v, str) else float(v))
                        for k, v in row.items()} for row in rows],
                      fh, indent=2, sort_keys=True)


_PHYSICS_ERROR_NAMES = ("CutoffError", "UnreachableTargetError",
                        "PhysicsValidityError")


def run_preset(name: str, cfg_user: dict, out_dir: str, formats,
               jobs: int = 1) -> int:
    cfg = cfgmod.resolve_config(name, cfg_user)
    system = cfgmod.build_system(cfg)
    plan = build_plan(cfg)
    rows, errors = herald.run_sweep(plan, jobs=jobs)
    extras = _preset_extras(cfg, rows)
    _write_outputs(out_dir, cfg, rows, errors, formats, extras)
    # a preset is one coherent scenario: a physics-validity failure in any
    # of its cells invalidates the run (unlike generic sweeps)
    for _, msg in errors:
        if msg.startswith(_PHYSICS_ERROR_NAMES):
            raise PhysicsValidityError(msg)
    drive = _drive_for(cfg, system)
    drive.save(os.path.join(out_dir, "waveform.json"))
    if "svg" in formats or name in ("cat-mech", "fock"):
        if isinstance(system, MechModel):
            _, psi, _ = _heralded_state_for(cfg)
            grid = phasespace.wigner(psi)
            phasespace.grid_to_csv(grid, os.path.join(out_dir, "wigner.csv"))
            if "svg" in formats:
                phasespace.grid_to_svg(grid, os.path.join(out_dir, "wigner.svg"))
            (_, _), (_, _), sep = phasespace.find_lobes(grid)
            log.info("wigner: min %.4g, lobe separation %.4g",
                     grid.min_value(), sep)
    for _, msg in errors:
        log.warning("cell failed: %s", msg)
    print(f"{name}: {len(rows)} rows -> {out_dir}", file=sys.stderr)
    return 0


def run_sweep_file(plan_path: str, cfg_user: dict, out_dir: str, formats,
                   jobs: int = 1) -> int:
    plan_cfg = cfgmod.load_config(plan_path)
    if "preset" not in plan_cfg:
        # empty plan: header-only CSV
        os.makedirs(out_dir, exist_ok=True)
        write_rows_csv(os.path.join(out_dir, "results.csv"), [])
        _write_outputs(out_dir, {"preset": None}, [], [], formats, {})
        return 0
    preset = plan_cfg["preset"]
    cfg = cfgmod.resolve_config(preset, cfg_user)
    system = cfgmod.build_system(cfg)
    base_plan = build_plan(cfg)
    base = dict(base_plan.base)
    defaults = dict(base_plan.axes)
    axes_cfg = plan_cfg.get("axes", {})
    axes = []
    declared = set()
    for name, values in axes_cfg.items():
        axes.append((name, list(values)))
        declared.add(name)
    for name, values in defaults.items():
        if name not in declared:
            base[name] = values[0]
    if not axes:
        axes = base_plan.axes
    plan = herald.SweepPlan(preset=preset, base=base, axes=axes)
    rows, errors = herald.run_sweep(plan, jobs=jobs)
    _write_outputs(out_dir, cfg, rows, errors, formats, {})
    return 0


def run_phase_space(which: str, cfg_user: dict, preset: str, out_dir: str,
                    formats) -> int:
    cfg = cfgmod.resolve_config(preset, cfg_user)
    system, psi, t_d = _heralded_state_for(cfg)
    os.makedirs(out_dir, exist_ok=True)
    if which == "wigner":
        if not isinstance(system, MechModel):
            raise ConfigError("wigner output needs a mechanical system")
        grid = phasespace.wigner(psi)
        stem = "wigner"
    else:
        if not isinstance(system, SpinModel):
            raise ConfigError("husimi output needs a spin system")
        grid = phasespace.husimi_sphere(system, psi)
        stem = "husimi"
    phasespace.grid_to_csv(grid, os.path.join(out_dir, f"{stem}.csv"))
    if "svg" in formats:
        phasespace.grid_to_svg(grid, os.path.join(out_dir, f"{stem}.svg"))
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, default=list)
    print(f"{stem} at t_d={t_d:.6g} -> {out_dir}", file=sys.stderr)
    return 0


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="photonpaint",
                                  description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="parallel sweep workers")
        p.add_argument("--format", action="append", default=None,
                       choices=("csv", "json", "svg"),
                       help="output formats (repeatable; default csv)")

    for name in PRESETS:
        common(sub.add_parser(name, help=f"run the {name} scenario"))
    p_sweep = sub.add_parser("sweep", help="run a sweep plan file")
    common(p_sweep)
    p_sweep.add_argument("--plan", required=True, help="TOML plan file")
    for name in ("wigner", "husimi"):
        p = sub.add_parser(name, help=f"emit a {name} map of the heralded state")
        common(p)
        p.add_argument("--preset", default=None,
                       help="scenario preset providing the drive")
    return top


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    formats = args.format or ["csv"]
    try:
        cfg_user = cfgmod.load_config(args.config) if args.config else {}
        if args.command in PRESETS:
            return run_preset(args.command, cfg_user, args.out, formats,
                              jobs=args.jobs)
        if args.command == "sweep":
            return run_sweep_file(args.plan, cfg_user, args.out, formats,
                                  jobs=args.jobs)
        preset = args.preset or ("cat-mech" if args.command == "wigner"
                                 else "cat-spin")
        return run_phase_space(args.command, cfg_user, preset, args.out,
                               formats)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PhysicsValidityError as exc:
        print(f"physics validity error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
