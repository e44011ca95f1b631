"""Finite-difference closed-loop simulation and metrics.

First-order upwind transport for both fields, explicit Euler for the ODE,
exact rotation for the exogenous state.  Interior nodes advance from
time-t values; boundary values are then collocated at the new level.  The
control input computed from time-t data enters the new-level actuated
boundary (one-step hold).  Everything is deterministic: identical
configurations produce bit-identical trajectories.
"""

import time as _time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels as kmod
from .barrier import Gains, HChain, RescueBump, min_gains
from .errors import CflViolation, NonFinite, Unresolved
from .observer import Measurement, ObserverIntegrator, ObserverState, error_norm
from .predictor import Predictor, initial_safety_check
from .regulator import (
    Controller,
    EnvelopeParams,
    check_smooth_dominance,
    estimate_xi_e,
    lemma3_envelope,
    lower_h_at_tbar0,
    sign,
)

_DIVERGENCE_LIMIT = 1e9


@dataclass(frozen=True)
class SimConfig:
    N: int = 20
    dt: float = 1e-3
    T_end: float = 20.0
    controller: str = "state"            # "state" | "output" | "open_loop"
    snapshot_stride: int = 0             # 0 disables field snapshots
    N_k: int = kmod.DEFAULT_NK
    tol_h: float = 1e-2

    def grid(self):
        return np.linspace(0.0, 1.0, self.N + 1)

    def validate(self, plant):
        dx = 1.0 / self.N
        cfl = max(plant.q1, plant.q2) * self.dt / dx
        if cfl >= 1.0:
            raise CflViolation(f"CFL = {cfl:.4f} >= 1 (dt too large for N = {self.N})")
        if self.controller not in ("state", "output", "open_loop"):
            raise ValueError(f"unknown controller mode {self.controller!r}")
        return self


@dataclass
class Trajectory:
    t: np.ndarray
    Y: np.ndarray                 # (steps, n)
    r: np.ndarray
    e: np.ndarray
    h: np.ndarray                 # barrier value h(e(t), t)
    h_chain: np.ndarray           # (steps, n)
    U: np.ndarray
    rho: np.ndarray
    err_norm: np.ndarray
    z_bound: np.ndarray           # (steps, 2): z(0), z(1)
    w_bound: np.ndarray           # (steps, 2): w(0), w(1)
    beta1_resid: np.ndarray
    e_pred: np.ndarray            # e predicted one transport-time ahead
    snapshots: list               # [(t, z copy, w copy)]
    xs: np.ndarray
    tbar0: float
    t_a: float
    diverged: bool = False
    runtime_s: float = 0.0

    @property
    def steps(self):
        return len(self.t)


@dataclass(frozen=True)
class Metrics:
    rescue_time: float
    rescue_unresolved: bool
    min_h_after_rescue: float
    first_reentry_time: float
    terminal_abs_e: float
    sup_Y: float
    sup_fields: float
    observer_decay_ratio: float
    tol_h: float


def plant_step(z, w, Y, U, d, plant, dt, d_next=None):
    """One upwind/Euler step of the plant alone; boundary values are set
    after the interior update (d_next defaults to d)."""
    xs = np.linspace(0.0, 1.0, len(z))
    dx = xs[1] - xs[0]
    if max(plant.q1, plant.q2) * dt / dx >= 1.0:
        raise CflViolation("speed*dt/dx >= 1")
    if d_next is None:
        d_next = d
    G2x = np.array([plant.G2(x) for x in xs])
    G3x = np.array([plant.G3(x) for x in xs])
    zn = z.copy()
    wn = w.copy()
    zn[1:] = z[1:] - plant.q1 * dt / dx * (z[1:] - z[:-1]) + dt * (
        plant.d1 * w[1:] + plant.c_self * z[1:] + (G2x[1:] @ d if d.size else 0.0)
    )
    wn[:-1] = w[:-1] + plant.q2 * dt / dx * (w[1:] - w[:-1]) + dt * (
        plant.d2 * z[:-1] + plant.c_self * w[:-1] + (G3x[:-1] @ d if d.size else 0.0)
    )
    Yn = Y + dt * (plant.A @ Y + plant.B * w[0] + (plant.G1 @ d if d.size else 0.0))
    zn[0] = plant.p * wn[0] + float(np.asarray(plant.C).ravel() @ Yn) + (
        float(plant.G4 @ d_next) if d.size else 0.0
    )
    wn[-1] = plant.q * zn[-1] + (float(plant.G5 @ d_next) if d.size else 0.0) + U
    if not np.all(np.isfinite(zn)) or np.max(np.abs(zn)) > _DIVERGENCE_LIMIT:
        raise NonFinite("plant state diverged")
    return zn, wn, Yn


@dataclass
class Scenario:
    """Everything a closed-loop run needs, pre-assembled."""

    plant: object
    exo: object
    chain: object
    kset: object
    ic: object                    # FieldIC
    spec: object                  # BarrierSpec
    gains: Gains
    sim: SimConfig
    bump: RescueBump = None
    hchain: HChain = None
    predictor: Predictor = None
    controller: Controller = None
    observer: Optional[ObserverIntegrator] = None
    obs_ic: Optional[ObserverState] = None
    okset: object = None
    envelope: Optional[EnvelopeParams] = None
    bounds: object = None
    verdict: str = ""
    h_tbar0: float = 0.0
    gain_thresholds: np.ndarray = None

    @property
    def tbar0(self):
        return 1.0 / self.plant.q2


def build_scenario(plant, exo, ic, spec, gains, sim, epsilon=2.0, t_a=2.0,
                   observer_gains=None, obs_ic=None, envelope_cfg=None,
                   bounds=None, kset=None, okset=None):
    """Assemble kernels, predictor, bump, controller and observer for a run.

    The rescue bump activates on the sign of h at the initial regulation
    time: computed exactly from the initial data under state feedback, or
    replaced by its certified lower bound over the declared boxes when the
    run is output-feedback and bounds are given."""
    from . import chain as chain_mod
    from .plant import validate_plant

    validate_plant(plant, warn_observability=False)
    sim.validate(plant)
    gains = gains if isinstance(gains, Gains) else Gains(np.asarray(gains, float))
    chain = chain_mod.build_chain(plant, exo)
    if kset is None:
        kset = kmod.solve_controller_kernels(plant, exo, chain, N_k=sim.N_k)
    xs = sim.grid()
    pred = Predictor(plant, exo, chain, kset, xs)

    z0 = np.asarray(ic.z0(xs), dtype=float)
    w0 = np.asarray(ic.w0(xs), dtype=float)
    verdict, h_tb0 = initial_safety_check((z0, w0, ic.Y0, ic.v0), pred, spec)

    # the bump activates on the (known) sign of h at the regulation time; in
    # output mode its coefficient is the certified lower bound over the boxes
    active = h_tb0 <= 0.0
    h_for_bump = h_tb0
    if active and sim.controller == "output" and bounds is not None:
        h_for_bump = min(h_tb0, lower_h_at_tbar0(bounds, pred, spec, ic.Y0))
    bump = RescueBump(
        active=active, h_at_tbar0=h_for_bump if active else 0.0,
        epsilon=epsilon, t_a=t_a, tbar0=1.0 / plant.q2,
    )
    hchain = HChain(spec, bump, gains)

    # gain thresholds: exact initial state, or corner samples of the v-box
    if bounds is not None:
        cands = []
        for vc in bounds.v_corners():
            Zc, _, _ = pred.predict(z0, w0, ic.Y0, vc)
            cands.append(Zc)
        Z_cands = np.array(cands)
    else:
        Zt, _, _ = pred.predict(z0, w0, ic.Y0, ic.v0)
        Z_cands = Zt
    thresholds, _ = min_gains(spec, bump, Z_cands, 1.0 / plant.q2,
                              k_fixed=gains.k[:-1] if gains.n > 1 else None)

    envelope = None
    observer = None
    sign_theta0 = 1.0
    if sim.controller == "output" and observer_gains is None:
        raise ValueError("output-feedback mode needs observer_gains=(L_d, L_r)")
    if observer_gains is not None:
        L_d, L_r = observer_gains
        if okset is None:
            okset = kmod.solve_observer_kernels(plant, exo, L_d, L_r, N_k=sim.N_k)
        observer = ObserverIntegrator(plant, exo, okset, xs, sim.dt)
        cfg = dict(envelope_cfg or {})
        mode = cfg.get("mode", "smooth")
        xi_e = cfg.get("xi_e")
        if xi_e is None:
            xi_e = estimate_xi_e(pred, hchain, plant)
        if mode == "exact":
            if bounds is None:
                raise ValueError("exact envelope mode needs initial-data bounds")
            envelope = lemma3_envelope(bounds, okset, kset, plant, exo, xi_e=xi_e)
        elif "M_c" in cfg:
            envelope = EnvelopeParams(mode="smooth", M_c=cfg.get("M_c", 0.0),
                                      sigma_c=cfg.get("sigma_c", 1.0), xi_e=xi_e)
            if bounds is not None:
                exact = lemma3_envelope(bounds, okset, kset, plant, exo, xi_e=xi_e)
                check_smooth_dominance(envelope, exact, horizon=sim.T_end)
        e0 = float(ic.Y0[0]) - (float(exo.P_r[0] @ ic.v0) if exo.n_v else 0.0)
        sign_theta0 = sign(spec.partial(1, 0, e0, 0.0))

    ctrl = Controller(plant, exo, chain, kset, pred, hchain,
                      envelope=envelope, sign_theta0=sign_theta0)
    return Scenario(
        plant=plant, exo=exo, chain=chain, kset=kset, ic=ic, spec=spec,
        gains=gains, sim=sim, bump=bump, hchain=hchain, predictor=pred,
        controller=ctrl, observer=observer, obs_ic=obs_ic, okset=okset,
        envelope=envelope, bounds=bounds, verdict=verdict, h_tbar0=h_tb0,
        gain_thresholds=thresholds,
    )


def run_closed_loop(sc):
    """Run the configured scenario and record the trajectory."""
    import warnings

    if np.any(sc.gains.k[:-1] <= np.maximum(0.0, sc.gain_thresholds)):
        warnings.warn(
            "configured gains do not clear the safe-initialization "
            f"thresholds {np.round(sc.gain_thresholds, 4)}",
            stacklevel=2,
        )
    t_start = _time.perf_counter()
    sim = sc.sim
    plant = sc.plant
    xs = sim.grid()
    dx = xs[1] - xs[0]
    dt = sim.dt
    nsteps = int(round(sim.T_end / dt))
    nv = sc.exo.n_v

    G2x = np.array([plant.G2(x) for x in xs])
    G3x = np.array([plant.G3(x) for x in xs])
    if nv:
        vals, vecs = np.linalg.eig(sc.exo.S)
        eSdt = ((vecs * np.exp(vals * dt)) @ np.linalg.inv(vecs)).real
        P_r = sc.exo.P_r[0]
        P_d = sc.exo.P_d
    else:
        eSdt = np.zeros((0, 0))
        P_r = np.zeros(0)
        P_d = np.zeros((0, 0))

    z = np.asarray(sc.ic.z0(xs), dtype=float).copy()
    w = np.asarray(sc.ic.w0(xs), dtype=float).copy()
    Y = np.asarray(sc.ic.Y0, dtype=float).copy()
    v = np.asarray(sc.ic.v0, dtype=float).copy()
    obs = sc.obs_ic.copy() if sc.obs_ic is not None else None

    T = np.zeros(nsteps)
    Yrec = np.zeros((nsteps, plant.n))
    rrec = np.zeros(nsteps)
    erec = np.zeros(nsteps)
    hrec = np.zeros(nsteps)
    hcrec = np.zeros((nsteps, plant.n))
    Urec = np.zeros(nsteps)
    rhorec = np.zeros(nsteps)
    enrec = np.zeros(nsteps)
    zb = np.zeros((nsteps, 2))
    wb = np.zeros((nsteps, 2))
    b1rec = np.zeros(nsteps)
    eprec = np.zeros(nsteps)
    snaps = []
    diverged = False

    ctrl = sc.controller
    hch = sc.hchain
    wts = ctrl.wts
    t = 0.0
    steps_done = nsteps
    for k in range(nsteps):
        d = P_d @ v if nv else np.zeros(0)
        if sim.controller == "state":
            U = ctrl.u_state(z, w, Y, v, t)
        elif sim.controller == "output":
            U, _ = ctrl.u_output(obs, z[-1], Y, t)
        else:
            U = 0.0
        meas_t = Measurement(Y=Y.copy(), z1=float(z[-1]), w0=float(w[0]),
                             r=float(P_r @ v) if nv else 0.0)
        # plant step (interior from time-t values, boundaries collocated new)
        zn = z.copy()
        wn = w.copy()
        zn[1:] = z[1:] - plant.q1 * dt / dx * (z[1:] - z[:-1]) + dt * (
            plant.d1 * w[1:] + plant.c_self * z[1:] + (G2x[1:] @ d if nv else 0.0)
        )
        wn[:-1] = w[:-1] + plant.q2 * dt / dx * (w[1:] - w[:-1]) + dt * (
            plant.d2 * z[:-1] + plant.c_self * w[:-1] + (G3x[:-1] @ d if nv else 0.0)
        )
        Yn = Y + dt * (plant.A @ Y + plant.B * w[0] + (plant.G1 @ d if nv else 0.0))
        vn = eSdt @ v if nv else v
        dn = P_d @ vn if nv else np.zeros(0)
        zn[0] = plant.p * wn[0] + float(np.asarray(plant.C).ravel() @ Yn) + (
            float(plant.G4 @ dn) if nv else 0.0
        )
        wn[-1] = plant.q * zn[-1] + (float(plant.G5 @ dn) if nv else 0.0) + U
        z, w, Y, v = zn, wn, Yn, vn
        t += dt

        if obs is not None:
            meas_n = Measurement(Y=Y.copy(), z1=float(z[-1]), w0=float(w[0]),
                                 r=float(P_r @ v) if nv else 0.0)
            obs = sc.observer.step(obs, meas_t, U, meas_end=meas_n)

        r = float(P_r @ v) if nv else 0.0
        e = float(Y[0]) - r
        T[k] = t
        Yrec[k] = Y
        rrec[k] = r
        erec[k] = e
        hrec[k] = sc.spec.h(e, t)
        Z = sc.chain.T_z @ Y + (sc.chain.T_v @ v if nv else 0.0)
        hcrec[k] = hch.h_values(Z, t)
        Urec[k] = U
        rhorec[k] = sc.envelope.rho(t) if sc.envelope is not None else 0.0
        zb[k] = (z[0], z[-1])
        wb[k] = (w[0], w[-1])
        if obs is not None:
            enrec[k] = error_norm(obs, z, w, v, xs)
        # transformed-boundary residual at the new level (diagnostic oracle)
        Zp, _, e_pred = ctrl.pred.predict(z, w, Y, v)
        eprec[k] = e_pred
        p1t = ctrl.pred.p_boundary(z, w, Y, v, hch, t)
        b1rec[k] = (
            w[-1] - wts @ (ctrl.Psi1 * z) - wts @ (ctrl.Phi1 * w)
            - ctrl.lam1 @ Y - (ctrl.lbar1 @ v if nv else 0.0) - p1t
        )
        if sim.snapshot_stride and (k % sim.snapshot_stride == 0):
            snaps.append((t, z.copy(), w.copy()))
        if not np.all(np.isfinite(z)) or max(
            np.max(np.abs(z)), np.max(np.abs(w)), np.max(np.abs(Y))
        ) > _DIVERGENCE_LIMIT:
            diverged = True
            steps_done = k + 1
            break

    sl = slice(0, steps_done)
    return Trajectory(
        t=T[sl], Y=Yrec[sl], r=rrec[sl], e=erec[sl], h=hrec[sl],
        h_chain=hcrec[sl], U=Urec[sl], rho=rhorec[sl], err_norm=enrec[sl],
        z_bound=zb[sl], w_bound=wb[sl], beta1_resid=b1rec[sl],
        e_pred=eprec[sl], snapshots=snaps, xs=xs,
        tbar0=sc.tbar0, t_a=sc.bump.t_a if sc.bump else 0.0,
        diverged=diverged, runtime_s=_time.perf_counter() - t_start,
    )


def metrics(traj, tol_h=1e-2, strict=False):
    """Summary metrics of a finished run.

    rescue_time is the earliest recorded time after which h >= -tol_h holds
    for every remaining sample (the start time when that is true throughout);
    first_reentry_time is the first crossing into h >= -tol_h."""
    h = traj.h
    t = traj.t
    bad = np.where(h < -tol_h)[0]
    if len(bad) == 0:
        rescue, unresolved = float(t[0]), False
        first = float(t[0])
    elif bad[-1] + 1 < len(t):
        rescue, unresolved = float(t[bad[-1] + 1]), False
        ok = np.where(h >= -tol_h)[0]
        first = float(t[ok[0]]) if len(ok) else float("inf")
    else:
        rescue, unresolved = float("inf"), True
        first = float("inf")
    if unresolved and strict:
        raise Unresolved("h never settles above -tol_h")
    after = h[t >= rescue] if not unresolved else h[:0]
    tail = max(1, int(0.05 * len(t)))
    en = traj.err_norm
    nz = en[en > 0]
    decay = float(nz[-1] / nz[0]) if len(nz) > 1 else 0.0
    return Metrics(
        rescue_time=rescue,
        rescue_unresolved=unresolved,
        min_h_after_rescue=float(after.min()) if after.size else float("nan"),
        first_reentry_time=first,
        terminal_abs_e=float(np.max(np.abs(traj.e[-tail:]))),
        sup_Y=float(np.max(np.abs(traj.Y))),
        sup_fields=float(
            max(np.max(np.abs(traj.z_bound)), np.max(np.abs(traj.w_bound)))
        ),
        observer_decay_ratio=decay,
        tol_h=tol_h,
    )


def write_trajectory_csv(traj, path):
    """Columns: t,y1,...,yn,r,e,h,U,rho,err_norm,z0,z1,w0,w1 at 9 significant
    digits, LF line endings."""
    n = traj.Y.shape[1]
    cols = (
        ["t"] + [f"y{i + 1}" for i in range(n)]
        + ["r", "e", "h", "U", "rho", "err_norm", "z0", "z1", "w0", "w1"]
    )
    fmt = lambda x: f"{x:.9g}"
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(traj.steps):
            row = (
                [traj.t[k]] + list(traj.Y[k])
                + [traj.r[k], traj.e[k], traj.h[k], traj.U[k], traj.rho[k],
                   traj.err_norm[k], traj.z_bound[k, 0], traj.z_bound[k, 1],
                   traj.w_bound[k, 0], traj.w_bound[k, 1]]
            )
            fh.write(",".join(fmt(x) for x in row) + "\n")


def write_fields_csv(traj, path):
    """Long-format snapshots: x,t,z,w."""
    fmt = lambda x: f"{x:.9g}"
    with open(path, "w", newline="\n") as fh:
        fh.write("x,t,z,w\n")
        for t, z, w in traj.snapshots:
            for j, x in enumerate(traj.xs):
                fh.write(
                    ",".join(fmt(val) for val in (x, t, z[j], w[j])) + "\n"
                )
