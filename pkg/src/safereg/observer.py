"""State observer and disturbance estimator.

Runs the same upwind/Euler discretization as the plant, driven by the
boundary measurements Y(t), z(1,t) and the known reference r(t):

    vhat_r' = S_r vhat_r + L_r (r - Pbar_r vhat_r)
    vhat_d' = S_d vhat_d + L_d (z(1,t) - zhat(1,t))
    zhat_t  = -q1 zhat_x + d1 what + c zhat + Gb2(x) vhat_d + L1(x) inj
    what_t  = +q2 what_x + d2 zhat + c what + Gb3(x) vhat_d + L2(x) inj
    zhat(0) = p what(0) + C Y + Gb4 vhat_d
    what(1) = q z(1,t) + U + Gb5 vhat_d

The zhat(0) boundary closes the reflection through the observer's own
what(0); that is what makes the error system match the kernel design (its
boundary must read ztil(0) = p wtil(0) + Gb4 vtil_d).  A "measured" mode that
plugs the measured w(0,t) in instead is available for comparison, but it
breaks the reflection in the error dynamics and with it the designed
estimator poles, so it is not the default.

The marginally stable drift of the estimator ODEs is advanced by its exact
rotation over one step; the injection enters by explicit Euler.  Boundary
values are collocated at the new time level when end-of-step measurements
are supplied.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as kmod
from .errors import CflViolation


@dataclass
class ObserverState:
    zhat: np.ndarray
    what: np.ndarray
    vhat_r: np.ndarray
    vhat_d: np.ndarray

    def vhat(self):
        return np.concatenate([self.vhat_r, self.vhat_d])

    def copy(self):
        return ObserverState(
            self.zhat.copy(), self.what.copy(),
            self.vhat_r.copy(), self.vhat_d.copy(),
        )


@dataclass(frozen=True)
class Measurement:
    Y: np.ndarray
    z1: float
    w0: float
    r: float


class ObserverIntegrator:
    """Precompiled observer stepping on the simulation grid."""

    def __init__(self, plant, exo, okset, xs, dt, boundary_w0="estimate"):
        self.plant = plant
        self.exo = exo
        self.xs = np.asarray(xs, dtype=float)
        self.dt = float(dt)
        dx = self.xs[1] - self.xs[0]
        if max(plant.q1, plant.q2) * dt / dx >= 1.0:
            raise CflViolation(
                f"CFL = {max(plant.q1, plant.q2) * dt / dx:.3f} >= 1"
            )
        if boundary_w0 not in ("estimate", "measured"):
            raise ValueError("boundary_w0 must be 'estimate' or 'measured'")
        self.boundary_w0 = boundary_w0
        self.L1 = kmod.interp_rows(okset.L1, okset.xs, self.xs)
        self.L2 = kmod.interp_rows(okset.L2, okset.xs, self.xs)
        self.L_d = okset.L_d
        self.L_r = okset.L_r
        if exo.n_d:
            self.Gb2 = np.array([plant.G2(x) @ exo.Pbar_d for x in self.xs])
            self.Gb3 = np.array([plant.G3(x) @ exo.Pbar_d for x in self.xs])
            self.Gb4 = plant.G4 @ exo.Pbar_d
            self.Gb5 = plant.G5 @ exo.Pbar_d
            # exact marginal rotation over one step
            vals_d, vecs_d = np.linalg.eig(exo.S_d)
            self.eSd = ((vecs_d * np.exp(vals_d * dt)) @ np.linalg.inv(vecs_d)).real
        else:
            N = len(self.xs)
            self.Gb2 = np.zeros((N, 0))
            self.Gb3 = np.zeros((N, 0))
            self.Gb4 = np.zeros(0)
            self.Gb5 = np.zeros(0)
            self.eSd = np.zeros((0, 0))
        vals_r, vecs_r = np.linalg.eig(exo.S_r)
        self.eSr = ((vecs_r * np.exp(vals_r * dt)) @ np.linalg.inv(vecs_r)).real

    def step(self, obs, meas, U, meas_end=None):
        """Advance one step.  meas holds start-of-step measurements (used by
        the in-domain injection); meas_end, when given, holds end-of-step
        measurements used to collocate the boundary values."""
        pl = self.plant
        dt, dx = self.dt, self.xs[1] - self.xs[0]
        me = meas_end if meas_end is not None else meas
        zh, wh = obs.zhat, obs.what
        inj = meas.z1 - zh[-1]

        zn = zh.copy()
        wn = wh.copy()
        zn[1:] = (
            zh[1:]
            - pl.q1 * dt / dx * (zh[1:] - zh[:-1])
            + dt * (pl.d1 * wh[1:] + pl.c_self * zh[1:]
                    + self.Gb2[1:] @ obs.vhat_d + self.L1[1:] * inj)
        )
        wn[:-1] = (
            wh[:-1]
            + pl.q2 * dt / dx * (wh[1:] - wh[:-1])
            + dt * (pl.d2 * zh[:-1] + pl.c_self * wh[:-1]
                    + self.Gb3[:-1] @ obs.vhat_d + self.L2[:-1] * inj)
        )
        vr = self.eSr @ obs.vhat_r + dt * self.L_r * (meas.r - float(self.exo.Pbar_r @ obs.vhat_r))
        vd = (self.eSd @ obs.vhat_d + dt * self.L_d * inj) if self.exo.n_d else obs.vhat_d

        w0 = wn[0] if self.boundary_w0 == "estimate" else me.w0
        zn[0] = pl.p * w0 + float(np.asarray(pl.C).ravel() @ me.Y) + float(self.Gb4 @ vd)
        wn[-1] = pl.q * me.z1 + U + float(self.Gb5 @ vd)
        return ObserverState(zn, wn, vr, vd)


def observer_step(obs, meas, U, okset, plant, exo, dt, xs=None,
                  meas_end=None, boundary_w0="estimate"):
    """One-shot convenience wrapper around ObserverIntegrator.step."""
    if xs is None:
        xs = np.linspace(0.0, 1.0, len(obs.zhat))
    integ = ObserverIntegrator(plant, exo, okset, xs, dt, boundary_w0=boundary_w0)
    return integ.step(obs, meas, U, meas_end=meas_end)


def error_norm(obs, z, w, v, xs):
    """Omega~ = ||ztil|| + ||wtil|| + |vtil| (trapezoid L2 field norms)."""
    zt = z - obs.zhat
    wt = w - obs.what
    l2 = lambda f: float(np.sqrt(np.trapezoid(f * f, xs)))
    return l2(zt) + l2(wt) + float(np.linalg.norm(v - obs.vhat()))
