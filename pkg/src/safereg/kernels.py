"""Backstepping kernels for the controller and the observer.

Controller side (triangle 0 <= y <= x <= 1):
    q2 Psi_x - q1 Psi_y = d2 Phi
    q2 Phi_x + q2 Phi_y = d1 Psi
    Psi(x,x) = -d2/(q1+q2),  q2 Phi(x,0) - q1 p Psi(x,0) = lam(x) B

solved in closed form through the pair (F, H) (Bessel/Pi functions of the
grid coordinates) plus a convolution correction L(x,y) = -lam(x-y) B / q2,
with lam marching an integro-ODE from lam(0) = -K.

Observer side (triangle 0 <= x <= y <= 1): the four kernels K11..K22 are the
same closed forms after swapping domain orientation and parameters:
    (K21, K11)(x,y) = (F, H)(y, x; q1<->q2, p -> p q1/q2)
    (K12, K22)(x,y) = (F, H)(y, x; d1 -> -d2, d2 -> -d1, p -> q2/(p q1))
which the residual tests verify directly against the kernel PDEs.

The in-domain self-coupling c_self of the damped-wave variant leaves every
kernel PDE, diagonal and edge condition unchanged but shifts the ODE
coefficient matrices: A -> A - c I in the lam march, S -> S - c I in the
lambar march, S_d -> S_d - c I in the Lambda marches.  (With c = 0 this
reduces to the plain transport design.)
"""

from dataclasses import dataclass, field

import numpy as np

from . import bessel
from .errors import FixedPointDiverged, NotHurwitz, QuadratureFailure

DEFAULT_NK = 201


# ---------------------------------------------------------------------------
# Pi function


def _pi_quad(s1, s2, tol=1e-12, max_doublings=16):
    """integral_0^1 exp(-tau s2) I0(2 sqrt(tau s1 s2)) dtau, adaptive
    composite Simpson with doubling, vectorized over equally shaped s1, s2."""
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)

    def g(tau):
        # tau: (m,) broadcast against point arrays
        t = tau.reshape((-1,) + (1,) * s1.ndim)
        return np.exp(-t * s2) * bessel.G0(t * s1 * s2)

    m = 4
    taus = np.linspace(0.0, 1.0, m + 1)
    vals = g(taus)
    h = 1.0 / m
    S_prev = (h / 3.0) * (
        vals[0] + vals[-1] + 4.0 * vals[1:-1:2].sum(axis=0) + 2.0 * vals[2:-2:2].sum(axis=0)
    )
    for _ in range(max_doublings):
        m *= 2
        h = 1.0 / m
        new_vals = g(np.arange(1, m, 2) * h)
        full = np.empty((m + 1,) + s1.shape)
        full[::2] = vals
        full[1::2] = new_vals
        vals = full
        S = (h / 3.0) * (
            vals[0] + vals[-1] + 4.0 * vals[1:-1:2].sum(axis=0) + 2.0 * vals[2:-2:2].sum(axis=0)
        )
        if np.max(np.abs(S - S_prev)) < tol:
            return S
        S_prev = S
    raise QuadratureFailure(
        f"Pi quadrature did not reach tol={tol} within {max_doublings} doublings"
    )


def pi_func(s1, s2, tol=1e-12):
    """Pi(s1, s2) = e^{s1+s2} (1 - s2 e^{-s1} integral_0^1 e^{-tau s2}
    I0(2 sqrt(tau s1 s2)) dtau).  Pi(s1, 0) = e^{s1}, Pi(0, s2) = 1."""
    s1a = np.asarray(s1, dtype=float)
    s2a = np.asarray(s2, dtype=float)
    scalar = s1a.ndim == 0 and s2a.ndim == 0
    s1a, s2a = np.broadcast_arrays(np.atleast_1d(s1a), np.atleast_1d(s2a))
    quad = _pi_quad(s1a, s2a, tol=tol)
    out = np.exp(s1a + s2a) * (1.0 - s2a * np.exp(-s1a) * quad)
    return float(out.ravel()[0]) if scalar else out


# ---------------------------------------------------------------------------
# closed-form Goursat pair


@dataclass(frozen=True)
class FHKernel:
    """Closed-form solution pair (F, H) of the controller-kernel PDEs with a
    homogeneous edge (q2 H(x,0) = q1 p F(x,0)) on 0 <= y <= x <= 1."""

    q1: float
    q2: float
    d1: float
    d2: float
    p: float

    def __call__(self, x, y):
        q1, q2, d1, d2, p = self.q1, self.q2, self.d1, self.d2, self.p
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        qs = q1 + q2
        Ssum = (q1 / q2) * x + y
        u = d1 * d2 * (x - y) * Ssum / qs**2
        s1 = (p * q1 * d2 / q2) * (x - y) / qs
        s2 = (d1 / (p * q1)) * (q1 * x + q2 * y) / qs
        g0 = bessel.G0(u)
        g1 = bessel.G1(u)
        piv = pi_func(s1, s2)
        F = (-1.0 / (p * qs)) * (
            (d1 * q2 / (p * q1)) * g0
            + (d1 * d2 * (x - y) / qs) * g1
            + (p * d2 - d1 * q2 / (p * q1)) * piv
        )
        H = (-1.0 / qs) * (
            (d1 / p) * g0
            + (d1 * d2 * Ssum / qs) * g1
            + (p * d2 * q1 / q2 - d1 / p) * piv
        )
        return F, H


def eval_FH(plant, x, y):
    """Closed-form (F, H) for a plant's parameters; requires 0 <= y <= x <= 1."""
    if np.any(np.asarray(y) > np.asarray(x)):
        raise ValueError("eval_FH requires y <= x")
    return FHKernel(plant.q1, plant.q2, plant.d1, plant.d2, plant.p)(x, y)


def _tri_grid(fh, xs, lower=True):
    """Fill (F, H) on the lower (y<=x) or upper (x<=y) triangle of xs x xs."""
    Nk = len(xs)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    mask = Y <= X if lower else Y >= X
    Fg = np.zeros((Nk, Nk))
    Hg = np.zeros((Nk, Nk))
    a = (X[mask], Y[mask]) if lower else (Y[mask], X[mask])
    Fv, Hv = fh(*a)
    Fg[mask] = Fv
    Hg[mask] = Hv
    return Fg, Hg


# ---------------------------------------------------------------------------
# kernel sets


@dataclass(frozen=True)
class KernelSet:
    xs: np.ndarray            # kernel grid nodes
    Psi: np.ndarray           # (Nk, Nk), lower triangle
    Phi: np.ndarray
    lam: np.ndarray           # (Nk, n)
    lambar: np.ndarray        # (Nk, n_v)
    F: np.ndarray = field(repr=False, default=None)
    H: np.ndarray = field(repr=False, default=None)

    @property
    def N_k(self):
        return len(self.xs)

    def lam_fn(self, x):
        return np.array([np.interp(x, self.xs, self.lam[:, i]) for i in range(self.lam.shape[1])])

    def lambar_fn(self, x):
        return np.array([np.interp(x, self.xs, self.lambar[:, i]) for i in range(self.lambar.shape[1])])

    @property
    def Psi_1(self):
        """Boundary slice Psi(1, .) on the kernel grid."""
        return self.Psi[-1]

    @property
    def Phi_1(self):
        return self.Phi[-1]


@dataclass(frozen=True)
class ObsKernelSet:
    xs: np.ndarray
    K11: np.ndarray           # (Nk, Nk), upper triangle
    K12: np.ndarray
    K21: np.ndarray
    K22: np.ndarray
    Kbar1: np.ndarray         # (Nk, n_d)
    Kbar2: np.ndarray
    Lam: np.ndarray           # (Nk, n_d)
    Lam1: np.ndarray
    p1: np.ndarray            # (Nk,)
    p2: np.ndarray
    L1: np.ndarray            # (Nk,)
    L2: np.ndarray
    L_d: np.ndarray           # (n_d,)
    L_r: np.ndarray           # (n_r,)

    @property
    def N_k(self):
        return len(self.xs)

    @property
    def Lam_end(self):
        """Lambda(1), the row closing the disturbance-estimator loop."""
        return self.Lam[-1]


def _trapz_weights(xs):
    h = xs[1] - xs[0]
    w = np.full(len(xs), h)
    w[0] = w[-1] = h / 2.0
    return w


def _volterra_lower(Lg, Fg, xs):
    """T[i, j] = integral_{y_j}^{x_i} L(x_i, r) F(r, y_j) dr by trapezoid,
    for the whole lower triangle at once."""
    h = xs[1] - xs[0]
    A = Lg * h                      # Lg already zero above the diagonal
    T = A @ Fg                      # sum_r A[i,r] F[r,j]; F zero for r < j
    # endpoint half-weights: subtract (h/2)(L[i,j]F[j,j] + L[i,i]F[i,j])
    Fdiag = np.diag(Fg)
    Ldiag = np.diag(Lg)
    T = T - (h / 2.0) * (Lg * Fdiag[None, :]) - (h / 2.0) * (Ldiag[:, None] * Fg)
    return np.tril(T)


def solve_controller_kernels(plant, exo, chain, N_k=DEFAULT_NK):
    """Gridded controller kernels Psi, Phi plus the gain rows lam, lambar."""
    q1, q2, p, b, c = plant.q1, plant.q2, plant.p, plant.b, plant.c_self
    n = plant.n
    xs = np.linspace(0.0, 1.0, N_k)
    h = xs[1] - xs[0]
    fh = FHKernel(q1, q2, plant.d1, plant.d2, p)
    Fg, Hg = _tri_grid(fh, xs, lower=True)
    F0 = Fg[:, 0]
    B = plant.B
    C_row = np.asarray(plant.C, dtype=float).ravel()
    A_c = plant.A - c * np.eye(n)

    # lam integro-ODE, RK4 with trapezoid convolution over computed history;
    # substage convolution appends the stage point to the history nodes.
    lam = np.zeros((N_k, n))
    lam[0] = -chain.K

    def conv(x_eval, j_hist, lam_stage):
        zs = xs[: j_hist + 1]
        vals = (lam[: j_hist + 1] @ B) * np.interp(x_eval - zs, xs, F0)
        if x_eval > zs[-1] + 1e-15:
            zs = np.append(zs, x_eval)
            vals = np.append(vals, (lam_stage @ B) * F0[0])
        return np.trapezoid(vals, zs)

    def rhs(x_eval, lam_x, j_hist):
        cv = conv(x_eval, j_hist, lam_x)
        F0x = np.interp(x_eval, xs, F0)
        return (lam_x @ A_c - (q1 / q2) * C_row * cv + q1 * C_row * F0x) / q2

    for j in range(N_k - 1):
        xj = xs[j]
        k1 = rhs(xj, lam[j], j)
        k2 = rhs(xj + h / 2, lam[j] + (h / 2) * k1, j)
        k3 = rhs(xj + h / 2, lam[j] + (h / 2) * k2, j)
        k4 = rhs(xj + h, lam[j] + h * k3, j)
        lam[j + 1] = lam[j] + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    # Psi, Phi assembly through L(x,y) = -lam(x-y) B / q2
    lamB = lam @ B
    idx = np.arange(N_k)
    diff = xs[:, None] - xs[None, :]
    Lg = np.where(idx[:, None] >= idx[None, :], -np.interp(diff, xs, lamB) / q2, 0.0)
    Psi = Fg + _volterra_lower(Lg, Fg, xs)
    Phi = Hg - Lg + _volterra_lower(Lg, Hg, xs)
    Psi = np.tril(Psi)
    Phi = np.tril(Phi)

    # lambar ODE (Heun), trapezoid integrals over the gridded kernels
    n_v = exo.n_v
    S_c = exo.S - c * np.eye(n_v)
    Gac1 = plant.G1 @ exo.P_d
    Gac2 = np.array([exo.P_d.T @ plant.G2(x) for x in xs])
    Gac3 = np.array([exo.P_d.T @ plant.G3(x) for x in xs])
    Gac4 = exo.P_d.T @ plant.G4
    w = _trapz_weights(xs)

    def lb_rhs(i, lb):
        if i >= 1:
            wi = w.copy()[: i + 1]
            wi[0] = wi[-1] = h / 2.0
            iG3 = (Phi[i, : i + 1] * wi) @ Gac3[: i + 1]
            iG2 = (Psi[i, : i + 1] * wi) @ Gac2[: i + 1]
        else:
            iG3 = iG2 = np.zeros(n_v)
        return (lb @ S_c + lam[i] @ Gac1 - Gac3[i] + iG3 + iG2 + q1 * Psi[i, 0] * Gac4) / q2

    lambar = np.zeros((N_k, n_v))
    lambar[0] = chain.Gbar0_row
    for i in range(N_k - 1):
        k1 = lb_rhs(i, lambar[i])
        k2 = lb_rhs(i + 1, lambar[i] + h * k1)
        lambar[i + 1] = lambar[i] + (h / 2.0) * (k1 + k2)

    return KernelSet(xs=xs, Psi=Psi, Phi=Phi, lam=lam, lambar=lambar, F=Fg, H=Hg)


def hurwitz_constants(A_H, cond_limit=1e8):
    """(M_H, sigma1) with ||e^{A_H t}|| <= M_H e^{-sigma1 t}.

    sigma1 = -max Re eig, M_H = cond_2 of the eigenvector matrix.  Raises
    NotHurwitz when sigma1 <= 0 and Defective when the eigenbasis is too
    ill-conditioned for the bound to be meaningful.
    """
    from .errors import Defective

    A_H = np.atleast_2d(np.asarray(A_H, dtype=float))
    vals, vecs = np.linalg.eig(A_H)
    sigma1 = -np.max(vals.real)
    if sigma1 <= 0:
        raise NotHurwitz(
            f"matrix is not Hurwitz (max Re eig = {-sigma1:.6g})", eigenvalues=vals
        )
    cond = np.linalg.cond(vecs)
    if cond > cond_limit:
        raise Defective(
            f"eigenbasis condition number {cond:.3e} exceeds {cond_limit:.0e}"
        )
    M_H = float(np.linalg.norm(vecs, 2) * np.linalg.norm(np.linalg.inv(vecs), 2))
    return M_H, float(sigma1)


def solve_observer_kernels(plant, exo, L_d, L_r, N_k=DEFAULT_NK,
                           fp_tol=1e-10, fp_maxiter=200, check_hurwitz=True):
    """Observer kernels, injection gains L1(x), L2(x), and Hurwitz checks."""
    q1, q2, p, c = plant.q1, plant.q2, plant.p, plant.c_self
    n_d = exo.n_d
    L_d = np.asarray(L_d, dtype=float).ravel()
    L_r = np.asarray(L_r, dtype=float).ravel()
    xs = np.linspace(0.0, 1.0, N_k)
    h = xs[1] - xs[0]

    fh_a = FHKernel(q2, q1, plant.d1, plant.d2, p * q1 / q2)
    fh_b = FHKernel(q1, q2, -plant.d2, -plant.d1, q2 / (p * q1))
    F1g, H1g = _tri_grid(fh_a, xs, lower=False)   # evaluated at (y, x)
    F2g, H2g = _tri_grid(fh_b, xs, lower=False)
    K21, K11 = F1g, H1g
    K12, K22 = F2g, H2g

    Gb2 = np.array([plant.G2(x) for x in xs])      # Pbar_d-weighted rows
    Gb3 = np.array([plant.G3(x) for x in xs])
    if exo.n_d:
        Gb2 = Gb2 @ exo.Pbar_d
        Gb3 = Gb3 @ exo.Pbar_d
        Gb4 = plant.G4 @ exo.Pbar_d
        Gb5 = plant.G5 @ exo.Pbar_d
    else:
        Gb2 = np.zeros((N_k, 0))
        Gb3 = np.zeros((N_k, 0))
        Gb4 = np.zeros(0)
        Gb5 = np.zeros(0)

    # Kbar fixed point (successive approximation over the upper triangle)
    def upper_int(K, V):
        """(integral_x^1 K(x,y) V(y) dy)_i by trapezoid, V of shape (Nk, nd)."""
        A = K * h
        T = A @ V
        Kdiag = np.diag(K)
        T = T - (h / 2.0) * (Kdiag[:, None] * V) - (h / 2.0) * np.outer(K[:, -1], V[-1])
        return T

    Kb1 = Gb3.copy()
    Kb2 = Gb2.copy()
    base1 = Gb3 + q2 * np.outer(K22[:, -1], Gb5)
    base2 = Gb2 + q2 * np.outer(K12[:, -1], Gb5)
    prev_delta = np.inf
    for it in range(fp_maxiter):
        n1 = base1 + upper_int(K22, Kb1) + upper_int(K21, Kb2)
        n2 = base2 + upper_int(K11, Kb2) + upper_int(K12, Kb1)
        delta = max(np.max(np.abs(n1 - Kb1)), np.max(np.abs(n2 - Kb2))) if n_d else 0.0
        Kb1, Kb2 = n1, n2
        if delta < fp_tol:
            break
        if it > 3 and delta > prev_delta * 1.5:
            raise FixedPointDiverged(
                f"Kbar iteration diverging (delta {delta:.3e} after {it} iterations)"
            )
        prev_delta = delta
    else:
        raise FixedPointDiverged(f"Kbar iteration did not reach {fp_tol}")

    # Lambda marches with the self-coupling shift
    Sdc = exo.S_d - c * np.eye(n_d)
    Lam1 = np.zeros((N_k, n_d))
    if n_d:
        Lam1[-1] = Gb5
        for i in range(N_k - 1, 0, -1):
            f = lambda v, idx: (v @ Sdc - Kb1[idx]) / q2
            k1 = f(Lam1[i], i)
            k2 = f(Lam1[i] - h * k1, i - 1)
            Lam1[i - 1] = Lam1[i] - (h / 2.0) * (k1 + k2)
    Lam = np.zeros((N_k, n_d))
    if n_d:
        Lam[0] = p * Lam1[0] + Gb4
        for i in range(N_k - 1):
            f = lambda v, idx: (Kb2[idx] - v @ Sdc) / q1
            k1 = f(Lam[i], i)
            k2 = f(Lam[i] + h * k1, i + 1)
            Lam[i + 1] = Lam[i] + (h / 2.0) * (k1 + k2)

    p1 = -(Lam @ L_d) if n_d else np.zeros(N_k)
    p2 = -(Lam1 @ L_d) if n_d else np.zeros(N_k)

    def upper_int_vec(K, v):
        A = K * h
        T = A @ v
        T = T - (h / 2.0) * (np.diag(K) * v) - (h / 2.0) * K[:, -1] * v[-1]
        return T

    L1 = -p1 + upper_int_vec(K11, p1) + upper_int_vec(K12, p2) - q1 * K11[:, -1]
    L2 = -p2 + upper_int_vec(K21, p1) + upper_int_vec(K22, p2) - q1 * K21[:, -1]

    if check_hurwitz:
        if n_d:
            hurwitz_constants(exo.S_d - np.outer(L_d, Lam[-1]))
        hurwitz_constants(exo.S_r - np.outer(L_r, exo.Pbar_r))

    return ObsKernelSet(
        xs=xs, K11=K11, K12=K12, K21=K21, K22=K22,
        Kbar1=Kb1, Kbar2=Kb2, Lam=Lam, Lam1=Lam1,
        p1=p1, p2=p2, L1=L1, L2=L2, L_d=L_d, L_r=L_r,
    )


# ---------------------------------------------------------------------------
# residual diagnostics


def controller_residuals(kset, plant):
    """Max centered-difference residuals of the two controller-kernel PDEs
    over interior triangle points, plus the diagonal/edge condition defects."""
    xs = kset.xs
    h = xs[1] - xs[0]
    q1, q2, d1, d2, p = plant.q1, plant.q2, plant.d1, plant.d2, plant.p
    Psi, Phi = kset.Psi, kset.Phi
    r1 = r2 = 0.0
    Nk = len(xs)
    for i in range(2, Nk - 1):
        for j in range(1, i - 1):
            Px = (Psi[i + 1, j] - Psi[i - 1, j]) / (2 * h)
            Py = (Psi[i, j + 1] - Psi[i, j - 1]) / (2 * h)
            Qx = (Phi[i + 1, j] - Phi[i - 1, j]) / (2 * h)
            Qy = (Phi[i, j + 1] - Phi[i, j - 1]) / (2 * h)
            r1 = max(r1, abs(q2 * Px - q1 * Py - d2 * Phi[i, j]))
            r2 = max(r2, abs(q2 * Qx + q2 * Qy - d1 * Psi[i, j]))
    diag = np.max(np.abs(np.diag(Psi) + d2 / (q1 + q2)))
    edge = np.max(np.abs(q2 * Phi[:, 0] - q1 * p * Psi[:, 0] - kset.lam @ plant.B))
    return {"pde_psi": r1, "pde_phi": r2, "diag_psi": diag, "edge": edge}


def observer_residuals(okset, plant):
    """Same diagnostics for the four observer-kernel PDEs and conditions."""
    xs = okset.xs
    h = xs[1] - xs[0]
    q1, q2, d1, d2, p = plant.q1, plant.q2, plant.d1, plant.d2, plant.p
    K11, K12, K21, K22 = okset.K11, okset.K12, okset.K21, okset.K22
    r = np.zeros(4)
    Nk = len(xs)
    for i in range(1, Nk - 2):
        for j in range(i + 2, Nk - 1):
            dx = lambda M: (M[i + 1, j] - M[i - 1, j]) / (2 * h)
            dy = lambda M: (M[i, j + 1] - M[i, j - 1]) / (2 * h)
            r[0] = max(r[0], abs(q1 * dx(K11) + q1 * dy(K11) - d1 * K21[i, j]))
            r[1] = max(r[1], abs(q1 * dx(K12) - q2 * dy(K12) - d1 * K22[i, j]))
            r[2] = max(r[2], abs(q2 * dx(K21) - q1 * dy(K21) + d2 * K11[i, j]))
            r[3] = max(r[3], abs(q2 * dx(K22) + q2 * dy(K22) + d2 * K12[i, j]))
    return {
        "pde_K11": r[0], "pde_K12": r[1], "pde_K21": r[2], "pde_K22": r[3],
        "diag_K21": np.max(np.abs(np.diag(K21) + d2 / (q1 + q2))),
        "diag_K12": np.max(np.abs(np.diag(K12) - d1 / (q1 + q2))),
        "edge_K11": np.max(np.abs(K11[0] - p * K21[0])),
        "edge_K22": np.max(np.abs(K22[0] - K12[0] / p)),
    }


def interp_matrix(Kg, xk, xs_new, lower=True):
    """Bilinear interpolation of a triangular kernel grid onto new nodes."""
    f = np.interp(xs_new, xk, np.arange(len(xk), dtype=float))
    N = len(xs_new)
    out = np.zeros((N, N))
    i0 = np.clip(f.astype(int), 0, len(xk) - 2)
    t = f - i0
    for a in range(N):
        rng = range(a + 1) if lower else range(a, N)
        for b in rng:
            ia, ib = i0[a], i0[b]
            ta, tb = t[a], t[b]
            out[a, b] = (
                (1 - ta) * (1 - tb) * Kg[ia, ib]
                + ta * (1 - tb) * Kg[ia + 1, ib]
                + (1 - ta) * tb * Kg[ia, ib + 1]
                + ta * tb * Kg[ia + 1, ib + 1]
            )
    return out


def interp_rows(vec_grid, xk, xs_new):
    """Columnwise 1-d interpolation for (Nk, m) gain tables."""
    vec_grid = np.asarray(vec_grid)
    if vec_grid.ndim == 1:
        return np.interp(xs_new, xk, vec_grid)
    return np.vstack(
        [np.interp(xs_new, xk, vec_grid[:, i]) for i in range(vec_grid.shape[1])]
    ).T
