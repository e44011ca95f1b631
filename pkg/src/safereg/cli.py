"""Configuration parsing and the command-line front end.

Subcommands:
    kernels      solve and dump the controller/observer kernels + residuals
    simulate     run a closed-loop scenario, write trajectory/fields/metrics
    check-safety print the safe-initialization verdict and h at t0 + 1/q2
    envelope     print the robustness-envelope constants
    sweep        cartesian parameter grid of simulate runs

Exit codes: 0 ok, 2 configuration error, 3 numeric failure,
4 safety acceptance failure (unsafe verdict / unresolved rescue).
"""

import argparse
import concurrent.futures
import copy
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import kernels as kmod
from . import simkit
from .barrier import AffineBarrier, Gains, TwoSidedDecayBarrier
from .errors import (
    ConfigError,
    NonFinite,
    ParseError,
    QuadratureFailure,
    FixedPointDiverged,
    NotHurwitz,
    SafeRegError,
    SchemaError,
    ValidationError,
)
from .exo import validate_exo
from .observer import ObserverState
from .plant import FieldIC, Plant, UavParams, build_uav, validate_plant
from .regulator import InitBounds

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_SAFETY = 4


# ---------------------------------------------------------------------------
# config loading


def _require(cfg, key, where):
    if key not in cfg:
        raise SchemaError("missing required field", field=f"{where}.{key}" if where else key)
    return cfg[key]


def parse_config(path_or_name):
    """Load a YAML scenario config from a path or a bundled name."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
    else:
        name = str(path_or_name).removesuffix(".yaml")
        res = resources.files("safereg").joinpath(f"configs/{name}.yaml")
        if not res.is_file():
            raise ParseError(f"no such config file or bundled scenario: {path_or_name}")
        text = res.read_text()
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"YAML parse failure: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ParseError("config root must be a mapping")
    validate_config(cfg)
    return cfg


def bundled_configs():
    base = resources.files("safereg").joinpath("configs")
    return sorted(f.name[:-5] for f in base.iterdir() if f.name.endswith(".yaml"))


def validate_config(cfg):
    """Structural checks with precise field paths; numeric validation is
    delegated to the module validators during building."""
    if "plant" not in cfg:
        raise SchemaError("missing required field", field="plant")
    gains = _require(cfg, "gains", "")
    _require(gains, "k", "gains")
    exo = _require(cfg, "exosystem", "")
    for key in ("S_r", "Pbar_r"):
        _require(exo, key, "exosystem")
    init = _require(cfg, "init", "")
    for key in ("z0", "w0", "Y0", "v0"):
        _require(init, key, "init")
    barrier = _require(cfg, "barrier", "")
    _require(barrier, "family", "barrier")
    ctrl = cfg.get("controller", {})
    if ctrl.get("mode", "state") == "output":
        obs = _require(cfg, "observer", "")
        for key in ("L_d", "L_r"):
            _require(obs, key, "observer")
    return cfg


def _field_fn(spec, where):
    kind = _require(spec, "kind", where)
    a = float(spec.get("a", 1.0))
    c = float(spec.get("c", 0.0))
    if kind == "sin":
        return lambda x: np.sin(a * np.pi * np.asarray(x, float)) + c
    if kind == "cos":
        return lambda x: np.cos(a * np.pi * np.asarray(x, float)) + c
    if kind == "const":
        return lambda x: np.full_like(np.asarray(x, float), c)
    raise SchemaError(f"unknown field kind {kind!r}", field=where)


def _gmap_fn(spec):
    xc = np.asarray(spec.get("x_coeffs", []), dtype=float)
    const = np.asarray(spec.get("const", np.zeros_like(xc)), dtype=float)
    return lambda x: xc * x + const


def _build_plant(cfg):
    pc = cfg["plant"]
    if "uav" in pc:
        return build_uav(UavParams(**{k: float(v) for k, v in pc["uav"].items()}))
    for key in ("A", "b", "C", "q1", "q2"):
        _require(pc, key, "plant")
    m_d = len(pc.get("G4", []))
    zmap = lambda x: np.zeros(m_d)
    plant = Plant(
        A=np.asarray(pc["A"], dtype=float),
        b=float(pc["b"]),
        C=np.asarray(pc["C"], dtype=float).reshape(1, -1),
        p=float(pc.get("p", 1.0)),
        q=float(pc.get("q", 1.0)),
        q1=float(pc["q1"]),
        q2=float(pc["q2"]),
        d1=float(pc.get("d1", 0.0)),
        d2=float(pc.get("d2", 0.0)),
        G1=np.asarray(pc.get("G1", np.zeros((len(pc["A"]), m_d))), dtype=float),
        G2=_gmap_fn(pc["G2"]) if "G2" in pc else zmap,
        G3=_gmap_fn(pc["G3"]) if "G3" in pc else zmap,
        G4=np.asarray(pc.get("G4", np.zeros(m_d)), dtype=float),
        G5=np.asarray(pc.get("G5", np.zeros(m_d)), dtype=float),
        c_self=float(pc.get("c_self", 0.0)),
    )
    return validate_plant(plant)


def _build_barrier(cfg):
    bc = cfg["barrier"]
    family = bc["family"]
    if family == "affine":
        return AffineBarrier()
    if family == "two_sided_decay":
        return TwoSidedDecayBarrier(float(bc["M_delta"]), float(bc["sigma_delta"]))
    raise SchemaError(f"unknown barrier family {family!r}", field="barrier.family")


def _build_bounds(cfg, ic, nv):
    bc = cfg.get("bounds")
    if not bc:
        return None
    def boxed(fn, off_lo, off_hi):
        return (lambda x: fn(x) + off_lo), (lambda x: fn(x) + off_hi)
    z_lo, z_hi = boxed(ic.z0, float(bc["z"]["lo_offset"]), float(bc["z"]["hi_offset"]))
    w_lo, w_hi = boxed(ic.w0, float(bc["w"]["lo_offset"]), float(bc["w"]["hi_offset"]))
    if "lo" in bc.get("v", {}):
        v_lo = np.asarray(bc["v"]["lo"], dtype=float)
        v_hi = np.asarray(bc["v"]["hi"], dtype=float)
    else:
        v_lo = ic.v0 + float(bc["v"]["lo_offset"])
        v_hi = ic.v0 + float(bc["v"]["hi_offset"])
    return InitBounds(z_lo=z_lo, z_hi=z_hi, w_lo=w_lo, w_hi=w_hi,
                      v_lo=v_lo, v_hi=v_hi)


def build_scenario_from_config(cfg, controller_override=None, refine=1,
                               snapshot_stride=None):
    """Translate a parsed config into a ready-to-run Scenario."""
    plant = _build_plant(cfg)
    ec = cfg["exosystem"]
    exo = validate_exo(
        np.asarray(ec["S_r"], dtype=float),
        np.asarray(ec.get("S_d", np.zeros((0, 0))), dtype=float),
        np.asarray(ec["Pbar_r"], dtype=float),
        np.asarray(ec.get("Pbar_d", np.zeros((0, 0))), dtype=float),
    )
    spec = _build_barrier(cfg)
    gains = Gains(np.asarray(cfg["gains"]["k"], dtype=float))

    ic_cfg = cfg["init"]
    ic = FieldIC(
        z0=_field_fn(ic_cfg["z0"], "init.z0"),
        w0=_field_fn(ic_cfg["w0"], "init.w0"),
        Y0=np.asarray(ic_cfg["Y0"], dtype=float),
        v0=np.asarray(ic_cfg["v0"], dtype=float),
    )

    num = cfg.get("numerics", {})
    mode = controller_override or cfg.get("controller", {}).get("mode", "state")
    sim = simkit.SimConfig(
        N=int(num.get("N", 20)) * refine,
        dt=float(num.get("dt", 1e-3)) / refine,
        T_end=float(num.get("T_end", 20.0)),
        controller=mode,
        snapshot_stride=(
            snapshot_stride if snapshot_stride is not None
            else int(num.get("snapshot_stride", 0))
        ),
        N_k=int(num.get("N_k", kmod.DEFAULT_NK)),
        tol_h=float(num.get("tol_h", 1e-2)),
    )
    sim.validate(plant)

    bump_cfg = cfg.get("bump", {})
    bounds = _build_bounds(cfg, ic, exo.n_v)

    observer_gains = None
    obs_ic = None
    oc = cfg.get("observer")
    if oc and "L_d" in oc:
        observer_gains = (
            np.asarray(oc["L_d"], dtype=float),
            np.asarray(oc["L_r"], dtype=float),
        )
        icc = oc.get("ic", {})
        xs = sim.grid()
        zoff = float(icc.get("z_offset", 0.0))
        woff = float(icc.get("w_offset", 0.0))
        vhat_r = np.asarray(
            icc.get("vhat_r", ic.v0[: exo.n_r] + float(icc.get("v_offset", 0.0))),
            dtype=float,
        )
        vhat_d = np.asarray(
            icc.get("vhat_d", ic.v0[exo.n_r:] + float(icc.get("v_offset", 0.0))),
            dtype=float,
        )
        obs_ic = ObserverState(
            zhat=ic.z0(xs) + zoff, what=ic.w0(xs) + woff,
            vhat_r=vhat_r, vhat_d=vhat_d,
        )

    env_cfg = cfg.get("envelope")
    return simkit.build_scenario(
        plant, exo, ic, spec, gains, sim,
        epsilon=float(bump_cfg.get("epsilon", 2.0)),
        t_a=float(bump_cfg.get("t_a", 2.0)),
        observer_gains=observer_gains, obs_ic=obs_ic,
        envelope_cfg=env_cfg, bounds=bounds,
    )


# ---------------------------------------------------------------------------
# commands


def _fmt(x):
    return f"{x:.9g}"


def cmd_kernels(cfg, out):
    sc = build_scenario_from_config(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ks = sc.kset
    with open(out / "controller_kernels.csv", "w", newline="\n") as fh:
        fh.write("x,y,Psi,Phi\n")
        for i, x in enumerate(ks.xs):
            for j in range(i + 1):
                fh.write(",".join(_fmt(v) for v in
                                  (x, ks.xs[j], ks.Psi[i, j], ks.Phi[i, j])) + "\n")
    n, nv = sc.plant.n, sc.exo.n_v
    with open(out / "controller_gain_rows.csv", "w", newline="\n") as fh:
        hdr = ["x"] + [f"lam{i + 1}" for i in range(n)] + [f"lambar{i + 1}" for i in range(nv)]
        fh.write(",".join(hdr) + "\n")
        for i, x in enumerate(ks.xs):
            row = [x] + list(ks.lam[i]) + list(ks.lambar[i])
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    rep = kmod.controller_residuals(ks, sc.plant)
    lines = [f"controller {k}: {v:.6e}" for k, v in rep.items()]
    if sc.okset is not None:
        oks = sc.okset
        with open(out / "observer_kernels.csv", "w", newline="\n") as fh:
            fh.write("x,y,K11,K12,K21,K22\n")
            for i, x in enumerate(oks.xs):
                for j in range(i, len(oks.xs)):
                    fh.write(",".join(_fmt(v) for v in (
                        x, oks.xs[j], oks.K11[i, j], oks.K12[i, j],
                        oks.K21[i, j], oks.K22[i, j])) + "\n")
        with open(out / "observer_gain_rows.csv", "w", newline="\n") as fh:
            nd = sc.exo.n_d
            hdr = (["x", "L1", "L2", "p1", "p2"]
                   + [f"Lam{i + 1}" for i in range(nd)]
                   + [f"Lam1_{i + 1}" for i in range(nd)])
            fh.write(",".join(hdr) + "\n")
            for i, x in enumerate(oks.xs):
                row = ([x, oks.L1[i], oks.L2[i], oks.p1[i], oks.p2[i]]
                       + list(oks.Lam[i]) + list(oks.Lam1[i]))
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        rep2 = kmod.observer_residuals(oks, sc.plant)
        lines += [f"observer {k}: {v:.6e}" for k, v in rep2.items()]
    report = "\n".join(lines) + "\n"
    (out / "residual_report.txt").write_text(report)
    print(report, end="")
    return EXIT_OK


def cmd_simulate(cfg, out):
    sc = build_scenario_from_config(
        cfg,
        controller_override=cfg.get("_controller_override"),
        refine=cfg.get("_refine", 1),
        snapshot_stride=cfg.get("_snapshot_stride"),
    )
    traj = simkit.run_closed_loop(sc)
    out.mkdir(parents=True, exist_ok=True)
    simkit.write_trajectory_csv(traj, out / "trajectory.csv")
    if traj.snapshots:
        simkit.write_fields_csv(traj, out / "fields.csv")
    met = simkit.metrics(traj, tol_h=sc.sim.tol_h)
    lines = [
        f"verdict: {sc.verdict}",
        f"h_tbar0: {_fmt(sc.h_tbar0)}",
        f"rescue_time: {_fmt(met.rescue_time)}",
        f"rescue_unresolved: {met.rescue_unresolved}",
        f"first_reentry_time: {_fmt(met.first_reentry_time)}",
        f"min_h_after_rescue: {_fmt(met.min_h_after_rescue)}",
        f"terminal_abs_e: {_fmt(met.terminal_abs_e)}",
        f"sup_Y: {_fmt(met.sup_Y)}",
        f"sup_fields: {_fmt(met.sup_fields)}",
        f"observer_decay_ratio: {_fmt(met.observer_decay_ratio)}",
        f"diverged: {traj.diverged}",
        f"runtime_s: {traj.runtime_s:.2f}",
    ]
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if met.rescue_unresolved and sc.sim.controller != "open_loop":
        return EXIT_SAFETY
    return EXIT_OK


def cmd_check_safety(cfg, out):
    sc = build_scenario_from_config(cfg)
    print(f"verdict: {sc.verdict}")
    print(f"h_tbar0: {_fmt(sc.h_tbar0)}")
    if sc.bounds is not None:
        from .regulator import lower_h_at_tbar0

        lb = lower_h_at_tbar0(sc.bounds, sc.predictor, sc.spec, sc.ic.Y0)
        print(f"h_tbar0_lower_bound: {_fmt(lb)}")
    return EXIT_OK if sc.verdict == "safe" else EXIT_SAFETY


def cmd_envelope(cfg, out):
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("envelope", {})["mode"] = "exact"
    sc = build_scenario_from_config(cfg, controller_override="output")
    env = sc.envelope
    lines = [f"{k}: {_fmt(v)}" for k, v in env.constants.items()]
    lines.append(f"two_max: {_fmt(env.two_max)}")
    lines.append(f"xi_e: {_fmt(env.xi_e)}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "envelope.txt").write_text(text)
        ts = np.linspace(0.0, sc.sim.T_end, 201)
        with open(out / "envelope.csv", "w", newline="\n") as fh:
            fh.write("t,rho_e,rho_e1,rho_e2\n")
            for t in ts:
                fh.write(",".join(_fmt(v) for v in (
                    t, env.rho_e(t), env.rho_e1(t), env.rho_e2(t))) + "\n")
    return EXIT_OK


def _set_path(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def _sweep_cell(args):
    cfg, outdir = args
    return cmd_simulate(cfg, Path(outdir))


def cmd_sweep(cfg, out):
    grid = cfg.get("sweep")
    if not grid:
        raise SchemaError("missing required field", field="sweep")
    import itertools

    keys = sorted(grid.keys())
    cells = list(itertools.product(*[grid[k] for k in keys]))
    jobs = []
    for cell in cells:
        sub = copy.deepcopy(cfg)
        sub.pop("sweep", None)
        tag = []
        for key, val in zip(keys, cell):
            _set_path(sub, key, val)
            tag.append(f"{key.replace('.', '_')}={val}")
        jobs.append((sub, str(out / "__".join(tag))))
    codes = []
    with concurrent.futures.ProcessPoolExecutor() as ex:
        for code in ex.map(_sweep_cell, jobs):
            codes.append(code)
    print(f"sweep: {len(jobs)} cells -> {out}")
    return max(codes) if codes else EXIT_OK


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="safereg",
        description="Safe output regulation of coupled hyperbolic PDE-ODE systems",
    )
    ap.add_argument("command",
                    choices=["kernels", "simulate", "check-safety", "envelope", "sweep"])
    ap.add_argument("--config", required=True,
                    help="path to a YAML scenario or a bundled name "
                         f"({', '.join(bundled_configs())})")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--controller", choices=["state", "output", "open-loop"],
                    help="override the configured controller mode")
    ap.add_argument("--refine", type=int, default=1,
                    help="grid refinement factor (N*f, dt/f)")
    ap.add_argument("--snapshot-stride", type=int, default=None,
                    help="record field snapshots every N steps")
    args = ap.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.controller:
            cfg["_controller_override"] = args.controller.replace("-", "_")
        cfg["_refine"] = args.refine
        cfg["_snapshot_stride"] = args.snapshot_stride
        out = Path(args.out)
        handler = {
            "kernels": cmd_kernels,
            "simulate": cmd_simulate,
            "check-safety": cmd_check_safety,
            "envelope": cmd_envelope,
            "sweep": cmd_sweep,
        }[args.command]
        return handler(cfg, out)
    except (ConfigError, ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFinite, QuadratureFailure, FixedPointDiverged, NotHurwitz) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SafeRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
