"""Configuration parsing, run orchestration, and output emission.

Config files are TOML with sections [layers], [profile], [grid], [time],
[init], [thin], [attractor], [verify], [output].  Parsing validates every
cross-field constraint and reports all violations at once, each naming the
failing key.  All numeric output uses 17-significant-digit decimals so runs
are reproducible byte for byte under a fixed configuration.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time as _time
from dataclasses import dataclass, replace

import numpy as np
import tomli

from . import estimates, thinlimit
from .fields import write_field
from .geometry import LayerStack, build_family, build_grid, build_profile
from .transport import (
    InitSpec,
    TimeConfig,
    build_initial,
    read_record,
    simulate,
    write_record,
)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Carries every validation problem found in a config, not just the first."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("invalid configuration:\n" + "\n".join(self.issues))


def _fmt(x):
    return f"{x:.17g}"


@dataclass(frozen=True)
class LayersConfig:
    L: float = 1.0
    interfaces: tuple = (0.0, -1.0)
    K: tuple = (1.0,)
    D: tuple = (1.0,)


@dataclass(frozen=True)
class ProfileConfig:
    delta: float = None    # resolved to H/8 when omitted
    c0: float = 0.0
    c_mH: float = 0.0


@dataclass(frozen=True)
class GridConfig:
    nx: int = 32
    target_dz: float = 0.05
    max_cells: int = 1_000_000


@dataclass(frozen=True)
class ThinConfig:
    j: int = 2
    thin_K: float = 1.0
    thin_D: float = 1.0
    epsilons: tuple = ()
    h: float = None   # optional; must match the base band thickness when given
    n_fit: int = 4


@dataclass(frozen=True)
class AttractorConfig:
    n_init: int = 8
    radius: float = 0.5
    spin_pad: float = 2.0
    window: float = 20.0
    cadence: float = 2.0
    min_snapshots: int = 4
    seed: int = 0


@dataclass(frozen=True)
class VerifyConfig:
    enabled: bool = True
    run_h1: bool = True
    c1: float = 1.0
    c2: float = 1.0
    cu: float = 1.0
    cp: float = 1.0
    cgen: float = 1.0
    tol_factor: float = 10.0


@dataclass(frozen=True)
class OutputConfig:
    save_snapshots: bool = False


@dataclass(frozen=True)
class RunConfig:
    schema: int = SCHEMA_VERSION
    layers: LayersConfig = LayersConfig()
    profile: ProfileConfig = ProfileConfig()
    grid: GridConfig = GridConfig()
    time: TimeConfig = TimeConfig()
    init: InitSpec = InitSpec()
    thin: ThinConfig = None
    attractor: AttractorConfig = AttractorConfig()
    verify: VerifyConfig = VerifyConfig()
    output: OutputConfig = OutputConfig()


_TIME_KEYMAP = {"observer_cadence": "cadence"}  # config key -> dataclass field

_SECTIONS = {
    "layers": (LayersConfig, {"L": float, "interfaces": list, "K": list, "D": list}),
    "profile": (ProfileConfig, {"delta": float, "c0": float, "c_mH": float}),
    "grid": (GridConfig, {"nx": int, "target_dz": float, "max_cells": int}),
    "time": (TimeConfig, {
        "t_end": float, "dt_max": float, "safety": float,
        "observer_cadence": float, "freeze_velocity": bool, "upwind": bool,
    }),
    "init": (InitSpec, {
        "kind": str, "amplitude": float, "mode": int, "seed": int,
        "norm": float, "snapshot_path": str,
    }),
    "thin": (ThinConfig, {
        "j": int, "thin_K": float, "thin_D": float, "epsilons": list,
        "h": float, "n_fit": int,
    }),
    "attractor": (AttractorConfig, {
        "n_init": int, "radius": float, "spin_pad": float, "window": float,
        "cadence": float, "min_snapshots": int, "seed": int,
    }),
    "verify": (VerifyConfig, {
        "enabled": bool, "run_h1": bool, "c1": float, "c2": float,
        "cu": float, "cp": float, "cgen": float, "tol_factor": float,
    }),
    "output": (OutputConfig, {"save_snapshots": bool}),
}


def _coerce(value, want, path, issues):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            issues.append(f"{path}: expected a number, got {value!r}")
            return None
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            issues.append(f"{path}: expected an integer, got {value!r}")
            return None
        return value
    if want is bool:
        if not isinstance(value, bool):
            issues.append(f"{path}: expected true/false, got {value!r}")
            return None
        return value
    if want is str:
        if not isinstance(value, str):
            issues.append(f"{path}: expected a string, got {value!r}")
            return None
        return value
    if want is list:
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
        ):
            issues.append(f"{path}: expected an array of numbers, got {value!r}")
            return None
        return tuple(float(v) for v in value)
    raise AssertionError(want)


def parse_config(text):
    """Parse and fully validate a TOML config; raises ConfigError carrying
    every problem found."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"syntax error: {exc}"]) from None

    issues = []
    kwargs = {}

    schema = raw.pop("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        issues.append(f"schema: unsupported version {schema!r} (expected {SCHEMA_VERSION})")
    kwargs["schema"] = SCHEMA_VERSION

    for name, section in raw.items():
        if name not in _SECTIONS:
            issues.append(f"{name}: unknown section")
    for name, (cls, keys) in _SECTIONS.items():
        section = raw.get(name)
        if section is None:
            if name == "thin":
                kwargs["thin"] = None
            continue
        if not isinstance(section, dict):
            issues.append(f"{name}: expected a table")
            continue
        vals = {}
        for key, value in section.items():
            if key not in keys:
                issues.append(f"{name}.{key}: unknown key")
                continue
            got = _coerce(value, keys[key], f"{name}.{key}", issues)
            if got is not None:
                vals[_TIME_KEYMAP.get(key, key) if name == "time" else key] = got
        try:
            kwargs[name] = cls(**vals)
        except TypeError as exc:
            issues.append(f"{name}: {exc}")

    cfg = RunConfig(**{k: v for k, v in kwargs.items() if k != "schema"})
    if cfg.profile.delta is None:
        z = cfg.layers.interfaces
        if len(z) >= 2 and z[-1] < 0.0:
            cfg = replace(cfg, profile=replace(cfg.profile, delta=-z[-1] / 8.0))
    issues.extend(_cross_validate(cfg))
    if issues:
        raise ConfigError(issues)
    return cfg


def _cross_validate(cfg):
    issues = []
    lay = cfg.layers
    z = lay.interfaces
    stack = None
    if len(z) < 2 or z[0] != 0.0 or z[-1] >= 0.0 or any(
        not b < a for a, b in zip(z, z[1:])
    ):
        issues.append(
            "layers.interfaces: must strictly decrease from 0 to -H"
        )
    elif len(lay.K) != len(z) - 1 or len(lay.D) != len(z) - 1:
        issues.append(
            f"layers.K/layers.D: need {len(z) - 1} entries for {len(z) - 1} layers"
        )
    elif any(v <= 0 for v in lay.K) or any(v <= 0 for v in lay.D):
        issues.append("layers.K/layers.D: entries must be positive")
    elif lay.L <= 0:
        issues.append("layers.L: must be positive")
    else:
        stack = LayerStack(lay.L, z, lay.K, lay.D)

    H = -z[-1] if len(z) >= 2 and z[-1] < 0 else None
    if H is not None and cfg.profile.delta is not None:
        if not 0.0 < cfg.profile.delta < 0.5 * H:
            issues.append(
                f"profile.delta: must satisfy 0 < delta < H/2 = {_fmt(0.5 * H)}"
            )
    if cfg.grid.nx < 4:
        issues.append("grid.nx: must be at least 4")
    if cfg.grid.target_dz <= 0:
        issues.append("grid.target_dz: must be positive")
    if cfg.grid.max_cells < 2:
        issues.append("grid.max_cells: must allow at least 2 cells")
    if cfg.time.t_end < 0:
        issues.append("time.t_end: must be nonnegative")
    if cfg.time.dt_max <= 0:
        issues.append("time.dt_max: must be positive")
    if not 0.0 < cfg.time.safety <= 1.0:
        issues.append("time.safety: must lie in (0, 1]")
    if cfg.time.cadence <= 0:
        issues.append("time.observer_cadence: must be positive")
    if cfg.init.kind not in ("zero", "mode", "random", "snapshot"):
        issues.append(
            f"init.kind: unknown kind {cfg.init.kind!r} "
            "(zero, mode, random, snapshot)"
        )
    if cfg.init.kind == "snapshot" and not cfg.init.snapshot_path:
        issues.append("init.snapshot_path: required for snapshot initial data")
    if cfg.init.kind == "random" and cfg.init.norm <= 0:
        issues.append("init.norm: must be positive for random initial data")
    if cfg.init.mode < 0:
        issues.append("init.mode: must be nonnegative")

    if cfg.thin is not None and stack is not None:
        thin = cfg.thin
        if not 2 <= thin.j <= stack.n_layers + 1:
            issues.append(
                f"thin.j: must lie in [2, {stack.n_layers + 1}] "
                f"for a {stack.n_layers}-layer base"
            )
        else:
            h = stack.thicknesses[thin.j - 2]
            if thin.h is not None and abs(thin.h - h) > 1e-12 * stack.H:
                issues.append(
                    f"thin.h: {_fmt(thin.h)} does not match the base band "
                    f"thickness {_fmt(h)}"
                )
            eps_pos = [e for e in thin.epsilons if e != 0.0]
            if not thin.epsilons:
                issues.append("thin.epsilons: must be nonempty")
            elif any(e < 0 for e in thin.epsilons) or any(
                not b < a for a, b in zip(thin.epsilons, thin.epsilons[1:])
            ):
                issues.append(
                    "thin.epsilons: must strictly decrease and stay nonnegative"
                )
            elif eps_pos and eps_pos[0] >= h:
                issues.append(
                    f"thin.epsilons: largest value must be below h = {_fmt(h)}"
                )
        if thin.thin_K <= 0 or thin.thin_D <= 0:
            issues.append("thin.thin_K/thin.thin_D: must be positive")
        if thin.n_fit < 2:
            issues.append("thin.n_fit: need at least 2 points to fit a rate")
    att = cfg.attractor
    if att.n_init < 1:
        issues.append("attractor.n_init: must be at least 1")
    if att.radius <= 0:
        issues.append("attractor.radius: must be positive")
    if att.window <= 0 or att.cadence <= 0:
        issues.append("attractor.window/attractor.cadence: must be positive")
    if att.spin_pad < 0:
        issues.append("attractor.spin_pad: must be nonnegative")
    if att.min_snapshots < 1:
        issues.append("attractor.min_snapshots: must be at least 1")
    for key in ("c1", "c2", "cu", "cp", "cgen", "tol_factor"):
        if getattr(cfg.verify, key) <= 0:
            issues.append(f"verify.{key}: must be positive")
    return issues


def serialize_config(cfg):
    """Canonical TOML text; parse(serialize(cfg)) == cfg."""
    out = [f"schema = {cfg.schema}", ""]

    def emit(name, obj, keys):
        out.append(f"[{name}]")
        for key, want in keys.items():
            attr = _TIME_KEYMAP.get(key, key) if name == "time" else key
            val = getattr(obj, attr)
            if want is bool:
                out.append(f"{key} = {'true' if val else 'false'}")
            elif want is int:
                out.append(f"{key} = {val}")
            elif want is float:
                out.append(f"{key} = {_fmt(val)}")
            elif want is str:
                out.append(f'{key} = "{val}"')
            elif want is list:
                out.append(f"{key} = [{', '.join(_fmt(v) for v in val)}]")
        out.append("")

    for name, (cls, keys) in _SECTIONS.items():
        if name == "thin":
            if cfg.thin is None:
                continue
            if cfg.thin.h is None:
                keys = {k: v for k, v in keys.items() if k != "h"}
        if name == "profile" and cfg.profile.delta is None:
            keys = {k: v for k, v in keys.items() if k != "delta"}
        emit(name, getattr(cfg, name), keys)
    return "\n".join(out)


# --- orchestration ----------------------------------------------------------


def _build_geometry(cfg):
    stack = LayerStack(cfg.layers.L, cfg.layers.interfaces, cfg.layers.K, cfg.layers.D)
    grid = build_grid(stack, cfg.grid.nx, cfg.grid.target_dz, cfg.grid.max_cells)
    profile = build_profile(stack, grid, cfg.profile.delta, cfg.profile.c0,
                            cfg.profile.c_mH)
    return stack, grid, profile


def _build_family(cfg):
    if cfg.thin is None:
        raise ConfigError(["thin: section required for this command"])
    stack = LayerStack(cfg.layers.L, cfg.layers.interfaces, cfg.layers.K, cfg.layers.D)
    eps = tuple(e for e in cfg.thin.epsilons if e > 0.0)
    return build_family(stack, cfg.thin.j, cfg.thin.thin_K, cfg.thin.thin_D, eps)


def _embed(cfg):
    v = cfg.verify
    return estimates.EmbedConstants(v.c1, v.c2, v.cu, v.cp, v.cgen)


def _write_verify_outputs(out_dir, record, report, results):
    lines = ["# check applicable passed worst"]
    summary = []
    summary.append(f"m1={_fmt(report.m1)}")
    summary.append(f"m2={_fmt(report.m2)}")
    summary.append(f"m3={_fmt(report.m3)}")
    summary.append(f"t1={_fmt(report.t1)}")
    summary.append(f"delta_max={_fmt(report.delta_max)}")
    summary.append(f"admissible={'true' if report.admissible else 'false'}")
    failed = False
    for res in results:
        if not res.applicable:
            lines.append(f"{res.name} no - -")
            summary.append(f"{res.name}=not_applicable")
            continue
        worst = max(res.worst.values()) if res.worst else 0.0
        lines.append(
            f"{res.name} yes {'yes' if res.passed else 'no'} {_fmt(worst)}"
        )
        summary.append(f"{res.name}={'pass' if res.passed else 'fail'}")
        for key, val in res.worst.items():
            summary.append(f"{res.name}_worst_{key}={_fmt(val)}")
        failed |= not res.passed
    with open(os.path.join(out_dir, "verify_report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary) + "\n")
    return failed


def _cmd_simulate(cfg, out_dir, workers):
    stack, grid, profile = _build_geometry(cfg)
    psi0 = build_initial(cfg.init, grid)
    observers = []
    if cfg.output.save_snapshots:
        counter = [0]

        def snap(state):
            write_field(
                os.path.join(out_dir, f"psi_{counter[0]:05d}.field"),
                state.psi, state.t,
            )
            counter[0] += 1

        observers.append(snap)
    record, final = simulate(psi0, stack, grid, profile, cfg.time,
                             observers=tuple(observers))
    write_record(os.path.join(out_dir, "trajectory.txt"), record)
    write_field(os.path.join(out_dir, "psi_final.field"), final.psi, final.t)
    status = 1 if record.failed else 0
    if cfg.verify.enabled and record.t.size:
        report = estimates.constants(
            stack, profile, embed=_embed(cfg),
            psi0_l2=math.sqrt(record.psi_sq[0]),
            psi0_grad=math.sqrt(record.grad_sq[0]),
            horizon=max(cfg.time.t_end, 1e-12),
        )
        results = [estimates.audit_l2(record, report,
                                      tol_factor=cfg.verify.tol_factor)]
        if cfg.verify.run_h1:
            results.append(estimates.audit_h1(record, report,
                                              tol_factor=cfg.verify.tol_factor))
        if _write_verify_outputs(out_dir, record, report, results):
            status = 1
    return status


def _cmd_verify(cfg, out_dir, record_path):
    record = read_record(record_path)
    stack, grid, profile = _build_geometry(cfg)
    if not record.t.size:
        print("verify: empty trajectory record", file=sys.stderr)
        return 1
    report = estimates.constants(
        stack, profile, embed=_embed(cfg),
        psi0_l2=math.sqrt(record.psi_sq[0]),
        psi0_grad=math.sqrt(record.grad_sq[0]),
        horizon=max(float(record.t[-1]), 1e-12),
    )
    results = [estimates.audit_l2(record, report,
                                  tol_factor=cfg.verify.tol_factor)]
    if cfg.verify.run_h1:
        results.append(estimates.audit_h1(record, report,
                                          tol_factor=cfg.verify.tol_factor))
    failed = _write_verify_outputs(out_dir, record, report, results)
    for res in results:
        state = "not applicable" if not res.applicable else (
            "pass" if res.passed else "FAIL"
        )
        print(f"verify {res.name}: {state}")
    return 1 if failed else 0


def _setup_from(cfg):
    return thinlimit.RunSetup(
        cfg.grid.nx, cfg.grid.target_dz, cfg.profile.delta, cfg.profile.c0,
        cfg.profile.c_mH, cfg.time, cfg.init, cfg.grid.max_cells,
    )


def _cmd_sweep(cfg, out_dir, workers):
    family = _build_family(cfg)
    setup = _setup_from(cfg)
    result = thinlimit.sweep(family, setup, n_fit=cfg.thin.n_fit, workers=workers)
    for rec in result.records:
        path = os.path.join(out_dir, f"eps_{rec.eps:.6g}.txt")
        with open(path, "w") as fh:
            fh.write(f"# eps = {_fmt(rec.eps)}\n")
            fh.write(f"# ktilde_l2 = {_fmt(rec.ktilde_l2)}\n")
            fh.write(f"# dtilde_l2 = {_fmt(rec.dtilde_l2)}\n")
            fh.write(f"# interp_floor = {_fmt(rec.interp_floor)}\n")
            fh.write(f"# failed = {'true' if rec.failed else 'false'}\n")
            fh.write("# columns: t psi_tilde_sq u_tilde_sq gradp_tilde_sq e\n")
            for i in range(rec.times.size):
                fh.write(" ".join(_fmt(v) for v in (
                    rec.times[i], rec.psi_sq[i], rec.u_sq[i], rec.gradp_sq[i],
                    rec.e[i],
                )) + "\n")
    with open(os.path.join(out_dir, "rates.txt"), "w") as fh:
        fh.write("# columns: eps sup_e ktilde_l2 dtilde_l2 interp_floor\n")
        for rec in result.records:
            fh.write(" ".join(_fmt(v) for v in (
                rec.eps, rec.sup_e, rec.ktilde_l2, rec.dtilde_l2,
                rec.interp_floor,
            )) + "\n")
        fh.write(f"# null_family = {'true' if result.null_family else 'false'}\n")
        fh.write(f"# fitted_rate = {_fmt(result.rate)}\n")
        fh.write(f"# prefactor = {_fmt(result.prefactor)}\n")
        fh.write(f"# n_fit = {result.n_fit}\n")
        fh.write(f"# solver_floor = {_fmt(result.solver_floor)}\n")
    return 1 if any(rec.failed for rec in result.records) else 0


def _cmd_attractor(cfg, out_dir, workers):
    family = _build_family(cfg)
    setup = _setup_from(cfg)
    att = cfg.attractor
    samples = {}
    for eps in (0.0,) + tuple(family.epsilons):
        stack = family.instantiate(eps)
        samples[eps] = thinlimit.sample_attractor(
            stack, setup, family.base, att.n_init, att.radius, att.spin_pad,
            att.window, att.cadence, att.seed, att.min_snapshots,
            eps=eps, workers=workers,
        )
        sample = samples[eps]
        manifest = os.path.join(out_dir, f"attractor_eps_{eps:.6g}.txt")
        with open(manifest, "w") as fh:
            fh.write(f"# eps = {_fmt(eps)}\n")
            fh.write(f"# spin_time = {_fmt(sample.spin_time)}\n")
            fh.write(f"# t1 = {_fmt(sample.t1)}\n")
            fh.write(f"# window = {_fmt(sample.window)}\n")
            fh.write(f"# cadence = {_fmt(sample.cadence)}\n")
            fh.write("# columns: index seed t psi_l2\n")
            g = sample.grid
            for i in range(sample.snapshots.shape[0]):
                nrm = math.sqrt(
                    g.L / g.nx * float(np.sum(sample.snapshots[i] ** 2 * g.dz[:, None]))
                )
                fh.write(
                    f"{i} {sample.seeds[i]} {_fmt(sample.times[i])} {_fmt(nrm)}\n"
                )
    with open(os.path.join(out_dir, "semidistance.txt"), "w") as fh:
        fh.write("# columns: eps d_to_limit\n")
        for eps in family.epsilons:
            d = thinlimit.semidistance(samples[eps], samples[0.0])
            fh.write(f"{_fmt(eps)} {_fmt(d)}\n")
    return 0


def dispatch(cmd, cfg, out_dir, workers=1, record_path=None):
    """Run one subcommand pipeline into ``out_dir``; returns the exit code."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.toml"), "w") as fh:
        fh.write(serialize_config(cfg) + "\n")
    if cmd == "simulate":
        return _cmd_simulate(cfg, out_dir, workers)
    if cmd == "verify":
        if record_path is None:
            print("verify: --record is required", file=sys.stderr)
            return 2
        return _cmd_verify(cfg, out_dir, record_path)
    if cmd == "sweep-epsilon":
        return _cmd_sweep(cfg, out_dir, workers)
    if cmd == "attractor":
        return _cmd_attractor(cfg, out_dir, workers)
    print(f"unknown command {cmd!r}", file=sys.stderr)
    return 2


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="darcylayers",
        description="Layered porous-media convection simulator and "
                    "thin-layer-limit verification harness",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name in ("simulate", "sweep-epsilon", "attractor", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default $DARCYLAYERS_WORKERS or 1)")
        if name == "sweep-epsilon":
            p.add_argument("--epsilons", default=None,
                           help="comma-separated thicknesses overriding [thin]")
            p.add_argument("--t-end", type=float, default=None,
                           help="override time.t_end")
        if name == "verify":
            p.add_argument("--record", required=True,
                           help="trajectory record to audit")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for issue in exc.issues:
            print(issue, file=sys.stderr)
        return 2

    if getattr(args, "epsilons", None):
        eps = tuple(float(v) for v in args.epsilons.split(","))
        thin = cfg.thin if cfg.thin is not None else ThinConfig()
        cfg = replace(cfg, thin=replace(thin, epsilons=eps))
        issues = _cross_validate(cfg)
        if issues:
            for issue in issues:
                print(issue, file=sys.stderr)
            return 2
    if getattr(args, "t_end", None) is not None:
        cfg = replace(cfg, time=replace(cfg.time, t_end=args.t_end))

    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("DARCYLAYERS_WORKERS", "1"))
    out_dir = args.out or _time.strftime("run-%Y%m%d-%H%M%S")
    record_path = getattr(args, "record", None)
    return dispatch(args.cmd, cfg, out_dir, workers=workers, record_path=record_path)


if __name__ == "__main__":
    sys.exit(main())
