"""Control laws and robustness envelopes.

State feedback:
    U = -q z(1,t) + int Psi(1,y) z + int Phi(1,y) w + lam(1) Y
        - (Gac5 - lambar(1)) v + p(1,t)

Output feedback replaces (z, w, v) by the observer estimates and adds
sign(theta(t0)) * rho(t), where rho is either a configured smooth envelope
M_c e^{-sigma_c t} or the certified estimation-error envelope assembled from
the initial-data boxes (exact mode).  The certified constants are sound
over-approximations built from grid norms of the kernels; they are loose by
construction and exist to make the dominance inequality provable, not tight.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels as kmod

sign = lambda u: 1.0 if u >= 0 else -1.0


def lemma2_bound(A_H):
    """(M_H, sigma1) such that ||e^{A_H t}||_2 <= M_H e^{-sigma1 t}.

    sigma1 is the spectral abscissa magnitude, M_H the eigenbasis condition
    number.  NotHurwitz when the abscissa is nonnegative; Defective when the
    eigenbasis is too ill-conditioned (polynomial Jordan branch not
    implemented)."""
    return kmod.hurwitz_constants(A_H)


@dataclass(frozen=True)
class InitBounds:
    """Pointwise boxes for the unknown initial data."""

    z_lo: Callable[[np.ndarray], np.ndarray]
    z_hi: Callable[[np.ndarray], np.ndarray]
    w_lo: Callable[[np.ndarray], np.ndarray]
    w_hi: Callable[[np.ndarray], np.ndarray]
    v_lo: np.ndarray
    v_hi: np.ndarray

    def validate(self, xs):
        for lo, hi, name in (
            (self.z_lo(xs), self.z_hi(xs), "z"),
            (self.w_lo(xs), self.w_hi(xs), "w"),
            (self.v_lo, self.v_hi, "v"),
        ):
            if np.any(np.asarray(lo) > np.asarray(hi) + 1e-15):
                raise ValueError(f"InitBounds: lower {name} bound exceeds upper")

    def v_corners(self, include_mid=True):
        """All box corners of the exogenous block, plus the midpoint."""
        lo = np.asarray(self.v_lo, dtype=float)
        hi = np.asarray(self.v_hi, dtype=float)
        nv = lo.size
        out = []
        for mask in range(2**nv):
            out.append(np.where(
                [(mask >> i) & 1 for i in range(nv)], hi, lo))
        if include_mid:
            out.append((lo + hi) / 2.0)
        return np.array(out)


@dataclass
class EnvelopeParams:
    """Compensation envelope rho(t) added to the output-feedback law."""

    mode: str = "smooth"                  # "smooth" | "exact"
    M_c: float = 0.0
    sigma_c: float = 0.0
    xi_e: float = 0.0
    Tstar: float = 0.0
    two_max: float = 0.0
    constants: dict = field(default_factory=dict)
    rho_e1: Optional[Callable[[float], float]] = None
    rho_e2: Optional[Callable[[float], float]] = None

    def rho_e(self, t):
        """Certified bound on |U - Uhat| (exact-mode constants required)."""
        base = self.rho_e1(t) if t < self.Tstar else self.rho_e2(t)
        return self.two_max * base

    def rho(self, t):
        if self.mode == "smooth":
            return self.M_c * np.exp(-self.sigma_c * t)
        return self.rho_e(t)


def _l2_grid(vals, xs):
    return float(np.sqrt(np.trapezoid(np.asarray(vals) ** 2, xs)))


def _hs_norm(K, xs):
    """Hilbert-Schmidt norm of a gridded kernel (2-d trapezoid)."""
    w = kmod._trapz_weights(xs)
    return float(np.sqrt(np.einsum("i,ij,j->", w, np.asarray(K) ** 2, w)))


def lemma3_envelope(bounds, okset, kset, plant, exo, xi_e=0.0):
    """Exact-mode envelope from the initial-data boxes.

    Assembles the two-phase bound on the estimation-error norm
    Omega~(t) = ||ztil|| + ||wtil|| + |vtil|:
        rho_e1 on [0, Tstar),  Tstar = 1/q1 + 1/q2,
        rho_e2 afterwards (exponential),
    and the factor 2*max{||Psi(1,.)||, ||Phi(1,.)||, |Gac5 +- lambar(1)|,
    xi_e} converting it to a bound on the control mismatch.  Every constant
    is a sound over-approximation computed from the gridded kernels; the
    sampled matrix-exponential sup is documented as sampled."""
    xs = okset.xs
    bounds.validate(xs)
    Tstar = 1.0 / plant.q1 + 1.0 / plant.q2
    n_r = exo.n_r

    dv = np.asarray(bounds.v_hi, dtype=float) - np.asarray(bounds.v_lo, dtype=float)
    M_0 = float(np.linalg.norm(dv[:n_r]))
    M_1 = float(np.linalg.norm(dv[n_r:]))

    dz = bounds.z_hi(xs) - bounds.z_lo(xs)
    dw = bounds.w_hi(xs) - bounds.w_lo(xs)
    nz2, nw2 = _l2_grid(dz, xs), _l2_grid(dw, xs)
    nzs, nws = float(np.max(np.abs(dz))), float(np.max(np.abs(dw)))

    kappa = sum(
        _hs_norm(K, xs) for K in (okset.K11, okset.K12, okset.K21, okset.K22)
    )
    if kappa >= 1.0:
        raise ValueError(
            f"kernel contraction bound kappa = {kappa:.3f} >= 1; "
            "cannot certify the inverse-transform norm"
        )
    h = xs[1] - xs[0]
    row_int = max(
        float(np.max((np.abs(okset.K11) + np.abs(okset.K12)).sum(axis=1) * h)),
        float(np.max((np.abs(okset.K21) + np.abs(okset.K22)).sum(axis=1) * h)),
    )
    sup_lam = float(np.max(np.linalg.norm(okset.Lam, axis=1))) if exo.n_d else 0.0
    sup_lam1 = float(np.max(np.linalg.norm(okset.Lam1, axis=1))) if exo.n_d else 0.0
    l2_lam = _l2_grid(np.linalg.norm(okset.Lam, axis=1), xs) if exo.n_d else 0.0
    l2_lam1 = _l2_grid(np.linalg.norm(okset.Lam1, axis=1), xs) if exo.n_d else 0.0

    grow = float(np.exp(max(plant.c_self, 0.0) * Tstar))
    M_bar_d = np.sqrt(2.0) / (1.0 - kappa) * (nz2 + nw2) + (l2_lam + l2_lam1) * M_1
    M_bar_d *= grow
    if row_int < 1.0:
        M_sup = (nzs + nws) / (1.0 - row_int) + (sup_lam + sup_lam1) * M_1
    else:  # fall back to a Gronwall-type factor
        M_sup = (nzs + nws) * float(np.exp(row_int)) + (sup_lam + sup_lam1) * M_1
    M_sup *= grow

    if exo.n_d:
        A_d = exo.S_d - np.outer(okset.L_d, okset.Lam_end)
        M_2, sigma_e = lemma2_bound(A_d)
        taus = np.linspace(0.0, Tstar, 201)
        from scipy.linalg import expm

        maxE = max(np.linalg.norm(expm(A_d * tau), 2) for tau in taus)
        M_d = (M_1 + Tstar * float(np.linalg.norm(okset.L_d)) * M_sup) * maxE
        M_check_d = M_d * max(
            float(np.linalg.norm(expm(A_d * Tstar), 2)), float(np.exp(sigma_e * Tstar))
        )
    else:
        M_2, sigma_e, M_d, M_check_d = 1.0, 1.0, 0.0, 0.0
    A_r = exo.S_r - np.outer(okset.L_r, exo.Pbar_r)
    M_r, sigma_r = lemma2_bound(A_r)

    Ups1 = (1.0 + kappa) * (1.0 + max(sup_lam, sup_lam1))

    def rho_e1(t):
        return Ups1 * M_bar_d + (1 + Ups1) * M_d + (1 + Ups1) * M_0 * M_r * np.exp(-sigma_r * t)

    def rho_e2(t):
        return (1 + Ups1) * (
            M_check_d * M_2 * np.exp(-sigma_e * t) + M_0 * M_r * np.exp(-sigma_r * t)
        )

    lb1 = kset.lambar[-1]
    Gac5 = plant.G5 @ exo.P_d
    w_k = kset.xs
    norms = {
        "psi1": _l2_grid(kset.Psi_1, w_k),
        "phi1": _l2_grid(kset.Phi_1, w_k),
        "g5_plus_lambar1": float(np.linalg.norm(Gac5 + lb1)),
        "g5_minus_lambar1": float(np.linalg.norm(Gac5 - lb1)),
    }
    two_max = 2.0 * max(
        norms["psi1"], norms["phi1"],
        norms["g5_plus_lambar1"], norms["g5_minus_lambar1"], xi_e,
    )
    constants = dict(
        M_0=M_0, M_1=M_1, M_bar_d=M_bar_d, M_sup=M_sup, M_d=M_d,
        M_check_d=M_check_d, Upsilon1=Ups1, kappa=kappa,
        M_2=M_2, sigma_e=sigma_e, M_r=M_r, sigma_r=sigma_r, **norms,
    )
    return EnvelopeParams(
        mode="exact", xi_e=xi_e, Tstar=Tstar, two_max=two_max,
        constants=constants, rho_e1=rho_e1, rho_e2=rho_e2,
    )


def check_smooth_dominance(env_smooth, env_exact, horizon=20.0, samples=200):
    """Warn when the configured smooth envelope fails to dominate the
    certified one (the premise of the discontinuity-free variant)."""
    ts = np.linspace(0.0, horizon, samples)
    bad = [t for t in ts if env_smooth.rho(t) < env_exact.rho_e(t)]
    if bad:
        warnings.warn(
            "smooth envelope rho_c does not dominate the certified rho_e "
            f"(first violation at t = {bad[0]:.3f}); safety margins are not "
            "certified with this configuration",
            stacklevel=2,
        )
        return False
    return True


class Controller:
    """Precompiled control laws on the simulation grid."""

    def __init__(self, plant, exo, chain, kset, predictor, hchain,
                 envelope=None, sign_theta0=1.0):
        self.plant = plant
        self.exo = exo
        self.chain = chain
        self.pred = predictor
        self.hchain = hchain
        self.envelope = envelope
        self.sign_theta0 = float(sign_theta0)
        xs = predictor.xs
        self.wts = kmod._trapz_weights(xs)
        self.Psi1 = predictor.PsiS[-1]
        self.Phi1 = predictor.PhiS[-1]
        self.lam1 = predictor.lamS[-1]
        self.lbar1 = predictor.lbarS[-1]
        self.Gac5 = plant.G5 @ exo.P_d if exo.n_v else np.zeros(0)

    def _u_formula(self, z, w, Y, v, t):
        p1t = self.pred.p_boundary(z, w, Y, v, self.hchain, t)
        U = (
            -self.plant.q * z[-1]
            + self.wts @ (self.Psi1 * z)
            + self.wts @ (self.Phi1 * w)
            + self.lam1 @ Y
            + p1t
        )
        if self.exo.n_v:
            U = U - (self.Gac5 - self.lbar1) @ v
        return float(U)

    def u_state(self, z, w, Y, v, t):
        """Full-information safe regulation law."""
        return self._u_formula(z, w, Y, v, t)

    def u_output(self, obs, z1_meas, Y, t):
        """Observer-based law: the state-feedback formula on the estimates
        plus the signed compensation envelope."""
        vhat = obs.vhat()
        U_hat = (
            -self.plant.q * z1_meas
            + self.wts @ (self.Psi1 * obs.zhat)
            + self.wts @ (self.Phi1 * obs.what)
            + self.lam1 @ Y
            + self.pred.p_boundary(obs.zhat, obs.what, Y, vhat, self.hchain, t)
        )
        if self.exo.n_v:
            U_hat = U_hat - (self.Gac5 - self.lbar1) @ vhat
        rho = self.envelope.rho(t) if self.envelope is not None else 0.0
        return float(U_hat + self.sign_theta0 * rho), float(U_hat)


def state_feedback(z, w, Y, v, plant, exo, chain, kset, hchain, t, xs=None):
    """One-shot convenience wrapper around Controller.u_state."""
    from .predictor import Predictor

    if xs is None:
        xs = np.linspace(0.0, 1.0, len(z))
    pred = Predictor(plant, exo, chain, kset, xs)
    return Controller(plant, exo, chain, kset, pred, hchain).u_state(z, w, Y, v, t)


def output_feedback(obs, z1_meas, Y, plant, exo, chain, kset, hchain,
                    envelope, sign_theta0, t, xs=None):
    """One-shot convenience wrapper around Controller.u_output."""
    from .predictor import Predictor

    if xs is None:
        xs = np.linspace(0.0, 1.0, len(obs.zhat))
    pred = Predictor(plant, exo, chain, kset, xs)
    ctrl = Controller(plant, exo, chain, kset, pred, hchain,
                      envelope=envelope, sign_theta0=sign_theta0)
    return ctrl.u_output(obs, z1_meas, Y, t)


def estimate_xi_e(predictor, hchain, plant, probe_scale=1.0):
    """Sound slope bound for the prediction-feedback mismatch term.

    Treats g = -e^{c/q2} f(Z_pred)/theta as a functional of the estimation
    errors through the (linear) prediction map and returns xi with
    |g(true) - g(est)| <= xi (|vtil| + ||ztil|| + ||wtil||).  Exact for the
    affine family; for piecewise-linear families the slope vector is probed
    on both branches (the kink itself escapes any finite slope bound, which
    the two-sided family documents)."""
    n = predictor.n
    b = plant.b
    t_probe = 0.0
    f0 = hchain.f(np.zeros(n), t_probe, b, check=False)
    cf = np.zeros(n)
    for j in range(n):
        for s in (probe_scale, -probe_scale):
            e_j = np.zeros(n)
            e_j[j] = s
            slope = abs(hchain.f(e_j, t_probe, b, check=False) - f0) / abs(s)
            cf[j] = max(cf[j], slope)
    growth = np.exp(plant.c_self / plant.q2)
    xs = predictor.xs
    wts = kmod._trapz_weights(xs)
    # |cf . Ztil_pred| decomposed over (ztil, wtil, vtil)
    a_z = cf @ (predictor.PB_full @ (-predictor.PsiW))
    a_w = cf @ (predictor.PB_full @ (np.eye(len(xs)) - predictor.PhiW))
    dual = lambda a: float(np.sqrt(np.sum(a**2 / wts)))
    xi_fields = max(dual(a_z), dual(a_w))
    if predictor.exo.n_v:
        r_v = cf @ (predictor.Ea_full @ predictor.chain.T_v
                    - predictor.PB_full @ predictor.lbarS)
        xi_v = float(np.linalg.norm(r_v))
    else:
        xi_v = 0.0
    # 1/|theta| is 1 for the shipped families (slopes +-1); generic families
    # supply their own bound through configuration instead.
    return float(growth * max(xi_fields, xi_v))


def lower_h_at_tbar0(bounds, predictor, spec, Y0, t0=0.0, n_scan=201):
    """Certified lower bound of h at the initial regulation time over the
    initial-data boxes (fields enter the prediction linearly, so the box
    extremes of e are exact; h is then scanned over that interval)."""
    xs = predictor.xs
    N = len(xs)
    zeros = np.zeros(N)
    nv = predictor.exo.n_v
    v0 = np.zeros(nv)
    _, _, e_base = predictor.predict(zeros, zeros, Y0, v0)
    gz = np.zeros(N)
    gw = np.zeros(N)
    for i in range(N):
        ei = np.zeros(N)
        ei[i] = 1.0
        gz[i] = predictor.predict(ei, zeros, Y0, v0)[2] - e_base
        gw[i] = predictor.predict(zeros, ei, Y0, v0)[2] - e_base
    gv = np.zeros(nv)
    for i in range(nv):
        vi = np.zeros(nv)
        vi[i] = 1.0
        gv[i] = predictor.predict(zeros, zeros, Y0, vi)[2] - e_base

    z_lo, z_hi = bounds.z_lo(xs), bounds.z_hi(xs)
    w_lo, w_hi = bounds.w_lo(xs), bounds.w_hi(xs)
    lo = (
        e_base
        + np.sum(np.minimum(gz * z_lo, gz * z_hi))
        + np.sum(np.minimum(gw * w_lo, gw * w_hi))
        + np.sum(np.minimum(gv * bounds.v_lo, gv * bounds.v_hi))
    )
    hi = (
        e_base
        + np.sum(np.maximum(gz * z_lo, gz * z_hi))
        + np.sum(np.maximum(gw * w_lo, gw * w_hi))
        + np.sum(np.maximum(gv * bounds.v_lo, gv * bounds.v_hi))
    )
    tb = t0 + predictor.a_max
    es = np.linspace(lo, hi, n_scan)
    return float(min(spec.h(e, tb) for e in es))
