"""Barrier families, the rescue bump, and the nonovershooting chain
h_1 .. h_n with its input-matching nonlinearity f.

The chain is

    h_1(z_1, t) = h(z_1, t) + sigma(t)
    h_i = sum_{j<i} (dh_{i-1}/dz_j) z_{j+1} + dh_{i-1}/dt + k_{i-1} h_{i-1}

which closes over a small term algebra: every h_i (and each of its partials)
is a finite sum  coeff * z_2^e2 ... z_n^en * atom  where an atom is either a
mixed partial D^{a,b} h(z_1, t) or a bump derivative sigma^(k)(t).  Building
the expressions symbolically once gives exact high-order partials for any
barrier family that can supply its own mixed partials; no numerical
differentiation is involved.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ZeroBarrier

# ---------------------------------------------------------------------------
# barrier families


class BarrierSpec:
    """A barrier family supplies exact mixed partials of h(e, t).

    Subclasses implement ``partial(a, b, e, t)`` returning
    d^{a+b} h / de^a dt^b evaluated at (e, t).  The slope partial(1,0) is the
    multiplier the control law divides by and must never vanish on the
    family's domain.
    """

    name = "custom"

    def __init__(self, partials=None):
        if partials is not None:
            self.partial = partials  # callable (a, b, e, t) -> float

    def h(self, e, t):
        return self.partial(0, 0, e, t)

    def theta(self, e, t):
        """Slope dh/de; raises DomainError where it vanishes."""
        th = self.partial(1, 0, e, t)
        if th == 0.0:
            raise DomainError(f"barrier slope is zero at e={e}, t={t}")
        return th


class AffineBarrier(BarrierSpec):
    """h(e, t) = e: the safe region is e >= 0 (one-sided constraint)."""

    name = "affine"

    def partial(self, a, b, e, t):
        if (a, b) == (0, 0):
            return float(e)
        if (a, b) == (1, 0):
            return 1.0
        return 0.0


class TwoSidedDecayBarrier(BarrierSpec):
    """h(e, t) = M_delta * exp(-sigma_delta t) - |e|.

    Two-sided constraint with exponentially shrinking margin delta(t).
    The slope at the kink is fixed by convention to theta = -1 for e > 0 and
    theta = +1 for e <= 0 (so sign(0) counts as the lower branch).
    """

    name = "two_sided_decay"

    def __init__(self, M_delta, sigma_delta):
        if M_delta <= 0 or sigma_delta <= 0:
            raise ValueError("M_delta and sigma_delta must be positive")
        self.M_delta = float(M_delta)
        self.sigma_delta = float(sigma_delta)

    def delta(self, t, order=0):
        return self.M_delta * (-self.sigma_delta) ** order * math.exp(-self.sigma_delta * t)

    def partial(self, a, b, e, t):
        if a == 0:
            d = self.delta(t, b)
            return d - abs(e) if b == 0 else d
        if a == 1 and b == 0:
            return -1.0 if e > 0 else 1.0
        return 0.0


# ---------------------------------------------------------------------------
# rescue bump


@dataclass(frozen=True)
class RescueBump:
    """Smooth compactly supported offset restoring an unsafe start.

    Active form on [t0, tbar0 + t_a):
        sigma(t) = exp(1/t_a^2) (-h_at_tbar0 + epsilon) exp(-1/(t-tbar0-t_a)^2)
    and identically zero afterwards (all derivatives vanish at the switch).
    h_at_tbar0 may be a certified lower bound instead of the exact value;
    the bump then overshoots, which preserves every guarantee.
    """

    active: bool
    h_at_tbar0: float = 0.0
    epsilon: float = 2.0
    t_a: float = 2.0
    tbar0: float = 0.0

    def __post_init__(self):
        if self.active and (self.epsilon <= 0 or self.t_a <= 0):
            raise ValueError("epsilon and t_a must be positive")

    @property
    def amplitude(self):
        return math.exp(1.0 / self.t_a**2) * (-self.h_at_tbar0 + self.epsilon)


def sigma_eval(bump, t, order=0):
    """sigma^(order)(t), exact through the recurrence
    d/ds [R(s) e^{-1/s^2}] = (R'(s) + 2 R(s)/s^3) e^{-1/s^2}
    with s = t - tbar0 - t_a < 0 on the active window."""
    if not bump.active:
        return 0.0
    s = t - bump.tbar0 - bump.t_a
    if s >= 0.0:
        return 0.0
    coef = {0: bump.amplitude}          # R as sum of c_j * s^{-j}
    for _ in range(order):
        new = {}
        for j, c in coef.items():
            if j > 0:
                new[j + 1] = new.get(j + 1, 0.0) - j * c
            new[j + 3] = new.get(j + 3, 0.0) + 2.0 * c
        coef = new
    R = sum(c * s ** (-j) for j, c in coef.items())
    return R * math.exp(-1.0 / s**2)


# ---------------------------------------------------------------------------
# gains


@dataclass(frozen=True)
class Gains:
    k: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float)
        if np.any(k <= 0):
            raise ValueError("all gains k_i must be positive")
        object.__setattr__(self, "k", k)

    @property
    def n(self):
        return self.k.size

    @property
    def A_h(self):
        out = np.diag(-self.k)
        out[np.arange(self.n - 1), np.arange(1, self.n)] = 1.0
        return out


# ---------------------------------------------------------------------------
# term algebra: expr = {(monomial, atom): coeff}
# monomial: exponent tuple for (z_2, ..., z_n); atom: ("h", a, b) | ("s", k)


def _e_add(dst, key, c):
    if c != 0.0:
        dst[key] = dst.get(key, 0.0) + c
        if dst[key] == 0.0:
            del dst[key]


def _e_scale(expr, c):
    return {k: c * v for k, v in expr.items() if c * v != 0.0}


def _e_sum(*exprs):
    out = {}
    for e in exprs:
        for k, v in e.items():
            _e_add(out, k, v)
    return out


def _e_mul_z(expr, var_idx, nvars):
    """Multiply by z_{var_idx+2} (monomial variable var_idx)."""
    out = {}
    for (mono, atom), c in expr.items():
        m = list(mono)
        m[var_idx] += 1
        _e_add(out, (tuple(m), atom), c)
    return out


def _e_dz(expr, j, nvars):
    """Partial with respect to z_j (1-based)."""
    out = {}
    for (mono, atom), c in expr.items():
        if j == 1:
            if atom[0] == "h":                       # D^{a,b} -> D^{a+1,b}
                _e_add(out, (mono, ("h", atom[1] + 1, atom[2])), c)
            # sigma atoms do not depend on z_1
        else:
            idx = j - 2
            if mono[idx] > 0:
                m = list(mono)
                m[idx] -= 1
                _e_add(out, (tuple(m), atom), c * mono[idx])
    return out


def _e_dt(expr):
    out = {}
    for (mono, atom), c in expr.items():
        if atom[0] == "h":
            _e_add(out, (mono, ("h", atom[1], atom[2] + 1)), c)
        else:
            _e_add(out, (mono, ("s", atom[1] + 1)), c)
    return out


class HChain:
    """Precompiled barrier chain for a given family, bump, and gains.

    Exposes exact evaluators for h_i, their partials, and f.  All
    expressions are built once at construction; per-step evaluation is a
    small dictionary sweep.
    """

    def __init__(self, spec, bump, gains):
        self.spec = spec
        self.bump = bump
        self.gains = gains
        n = gains.n
        self.n = n
        nv = n - 1
        one = (0,) * nv
        k = gains.k

        h1 = {(one, ("h", 0, 0)): 1.0, (one, ("s", 0)): 1.0}
        self.h_exprs = [h1]
        for i in range(2, n + 1):
            prev = self.h_exprs[-1]
            acc = _e_sum(_e_dt(prev), _e_scale(prev, k[i - 2]))
            for j in range(1, i):
                acc = _e_sum(acc, _e_mul_z(_e_dz(prev, j, nv), j - 1, nv))
            self.h_exprs.append(acc)

        self.dz_exprs = [
            [_e_dz(h, j, nv) for j in range(1, n + 1)] for h in self.h_exprs
        ]
        self.dt_exprs = [_e_dt(h) for h in self.h_exprs]

        # f = (1/b) [ sum_{j<n} dh_n/dz_j z_{j+1} + dh_n/dt + k_n h_n ]
        hn = self.h_exprs[-1]
        acc = _e_sum(_e_dt(hn), _e_scale(hn, k[-1]))
        for j in range(1, n):
            acc = _e_sum(acc, _e_mul_z(_e_dz(hn, j, nv), j - 1, nv))
        self.f_expr = acc               # still to be divided by b
        # printed long form: k_n multiplies the recursion body of h_n instead
        if n >= 2:
            prev = self.h_exprs[-2]
            body = _e_sum(_e_dt(prev), _e_scale(prev, k[n - 2]))
            for j in range(1, n):
                body = _e_sum(body, _e_mul_z(_e_dz(prev, j, nv), j - 1, nv))
            acc2 = _e_sum(_e_dt(hn), _e_scale(body, k[-1]))
            for j in range(1, n):
                acc2 = _e_sum(acc2, _e_mul_z(_e_dz(hn, j, nv), j - 1, nv))
            self.f_expr_long = acc2
        else:
            self.f_expr_long = dict(self.f_expr)

    def _atom(self, atom, z1, t):
        if atom[0] == "h":
            return self.spec.partial(atom[1], atom[2], z1, t)
        return sigma_eval(self.bump, t, atom[1])

    def eval_expr(self, expr, Z, t):
        Z = np.asarray(Z, dtype=float)
        z1 = float(Z[0])
        total = 0.0
        for (mono, atom), c in expr.items():
            term = c
            for idx, e in enumerate(mono):
                if e:
                    term *= Z[idx + 1] ** e
            total += term * self._atom(atom, z1, t)
        return total

    def h_values(self, Z, t):
        return np.array([self.eval_expr(e, Z, t) for e in self.h_exprs])

    def dh_dz(self, Z, t):
        n = self.n
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                out[i, j] = self.eval_expr(self.dz_exprs[i][j], Z, t)
        return out

    def dh_dt(self, Z, t):
        return np.array([self.eval_expr(e, Z, t) for e in self.dt_exprs])

    def theta(self, z1, t):
        th = self.spec.partial(1, 0, z1, t)
        if th == 0.0:
            raise DomainError(f"barrier slope is zero at e={z1}, t={t}")
        return th

    def f(self, Z, t, b, check=True):
        val = self.eval_expr(self.f_expr, Z, t) / b
        if check:
            alt = self.eval_expr(self.f_expr_long, Z, t) / b
            scale = max(1.0, abs(val))
            if abs(val - alt) > 1e-9 * scale:
                raise AssertionError(
                    f"dual-path f evaluation mismatch: {val} vs {alt}"
                )
        return val


def chain_eval(spec, bump, gains, Z, t):
    """One-shot evaluation of the chain; returns (h_values, dh_dz, dh_dt)."""
    ch = HChain(spec, bump, gains)
    return ch.h_values(Z, t), ch.dh_dz(Z, t), ch.dh_dt(Z, t)


def f_eval(spec, bump, gains, Z, t, b):
    """One-shot evaluation of f (both definitional forms cross-checked)."""
    return HChain(spec, bump, gains).f(Z, t, b)


def min_gains(spec, bump, Z_tbar0, tbar0, margin=1e-6, k_fixed=None):
    """Sequential safe-gain thresholds kacute_1 .. kacute_{n-1}.

    Z_tbar0 may be a single state vector or an array of candidate states
    (corner samples of the exogenous uncertainty box); with candidates the
    threshold at each level is the max over them.  The level-i barrier value
    depends on the already-fixed lower gains: by default each level's gain is
    set to max(0, threshold) + margin before the next level is evaluated;
    passing k_fixed instead sequences through a prescribed gain vector (the
    mode used to verify a configured controller).  Returns
    (thresholds, gains-used).
    """
    cands = np.atleast_2d(np.asarray(Z_tbar0, dtype=float))
    n = cands.shape[1]
    if n < 2:
        return np.zeros(0), np.zeros(0)
    k = np.ones(n) if k_fixed is None else np.append(np.asarray(k_fixed, dtype=float), 1.0)[:n]
    thresholds = np.zeros(n - 1)
    for i in range(1, n):
        ch = HChain(spec, bump, Gains(k))
        worst = -np.inf
        for Z in cands:
            hi = ch.eval_expr(ch.h_exprs[i - 1], Z, tbar0)
            if hi == 0.0:
                raise ZeroBarrier(f"h_{i} vanishes at the initial regulation time")
            num = ch.eval_expr(ch.dt_exprs[i - 1], Z, tbar0)
            for j in range(1, i + 1):
                num += ch.eval_expr(ch.dz_exprs[i - 1][j - 1], Z, tbar0) * Z[j]
            worst = max(worst, -num / hi)
        thresholds[i - 1] = worst
        if k_fixed is None:
            k[i - 1] = max(0.0, worst) + margin
    return thresholds, k[: n - 1]
