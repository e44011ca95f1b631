"""Finite-dimensional exogenous signal model generating references and
disturbances.

The model is the marginally stable autonomous system v' = S v with
S = blockdiag(S_r, S_d); the reference is r = Pbar_r v_r and the disturbance
d = Pbar_d v_d.  Constant signals (zero blocks) and trigonometric signals
(rotation blocks) and sums of both are covered.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import Defective, NotObservable, SpectrumOffAxis

_COND_LIMIT = 1e8


@dataclass(frozen=True)
class ExoModel:
    """Validated signal generator.  Immutable; all operations are pure."""

    S_r: np.ndarray
    S_d: np.ndarray
    Pbar_r: np.ndarray
    Pbar_d: np.ndarray
    S: np.ndarray = field(init=False, repr=False)
    n_r: int = field(init=False)
    n_d: int = field(init=False)
    n_v: int = field(init=False)
    m_d: int = field(init=False)

    def __post_init__(self):
        n_r = self.S_r.shape[0]
        n_d = self.S_d.shape[0]
        S = np.zeros((n_r + n_d, n_r + n_d))
        S[:n_r, :n_r] = self.S_r
        S[n_r:, n_r:] = self.S_d
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "n_r", n_r)
        object.__setattr__(self, "n_d", n_d)
        object.__setattr__(self, "n_v", n_r + n_d)
        object.__setattr__(self, "m_d", self.Pbar_d.shape[0] if n_d else 0)

    # full-state selector rows: P_r = [Pbar_r, 0], P_d = [0, Pbar_d]
    @property
    def P_r(self):
        out = np.zeros((1, self.n_v))
        out[0, : self.n_r] = self.Pbar_r
        return out

    @property
    def P_d(self):
        out = np.zeros((self.m_d, self.n_v))
        if self.n_d:
            out[:, self.n_r:] = self.Pbar_d
        return out

    def split(self, v):
        """Partition a full state into (v_r, v_d)."""
        v = np.asarray(v, dtype=float)
        return v[: self.n_r], v[self.n_r:]


def _check_marginal(name, M, tol):
    if M.size == 0:
        return
    eig = np.linalg.eigvals(M)
    worst = np.max(np.abs(eig.real))
    if worst > tol:
        raise SpectrumOffAxis(
            f"{name} has eigenvalue with |Re| = {worst:.3e} > {tol:.3e}"
        )


def validate_exo(S_r, S_d, Pbar_r, Pbar_d):
    """Build a validated ExoModel.

    Checks: marginal stability of S_r and S_d (spectrum within
    tol = 1e-9*(1+||S||) of the imaginary axis), diagonalizability of the
    combined matrix, observability of (S_r, Pbar_r).  Controllability of
    (S_d, Pbar_d-weighted input) is not constructively used anywhere, so a
    failure there only warns.
    """
    S_r = np.atleast_2d(np.asarray(S_r, dtype=float))
    S_d = np.asarray(S_d, dtype=float)
    S_d = S_d.reshape(0, 0) if S_d.size == 0 else np.atleast_2d(S_d)
    Pbar_r = np.asarray(Pbar_r, dtype=float).reshape(1, -1)
    Pbar_d = np.asarray(Pbar_d, dtype=float)
    if S_d.shape[0] == 0:
        Pbar_d = Pbar_d.reshape(0, 0) if Pbar_d.size == 0 else Pbar_d
    else:
        Pbar_d = np.atleast_2d(Pbar_d)

    n_r, n_d = S_r.shape[0], S_d.shape[0]
    if S_r.shape != (n_r, n_r) or S_d.shape != (n_d, n_d):
        raise ValueError("S_r and S_d must be square")
    if Pbar_r.shape[1] != n_r:
        raise ValueError("Pbar_r width must match S_r")
    if n_d and Pbar_d.shape[1] != n_d:
        raise ValueError("Pbar_d width must match S_d")

    model = ExoModel(S_r=S_r, S_d=S_d, Pbar_r=Pbar_r[0], Pbar_d=Pbar_d)
    tol = 1e-9 * (1.0 + np.linalg.norm(model.S, 2))
    _check_marginal("S_r", S_r, tol)
    _check_marginal("S_d", S_d, tol)

    # numerically diagonalizable eigenbasis for the block-diagonal matrix
    _, vecs = np.linalg.eig(model.S)
    if np.linalg.cond(vecs) > _COND_LIMIT:
        raise Defective("exosystem matrix eigenbasis is ill-conditioned")

    obs = np.vstack(
        [Pbar_r @ np.linalg.matrix_power(S_r, k) for k in range(n_r)]
    )
    if np.linalg.matrix_rank(obs, tol=1e-8 * max(1.0, np.linalg.norm(obs, 2))) < n_r:
        raise NotObservable("(S_r, Pbar_r) is not observable")

    if n_d and np.linalg.matrix_rank(
        np.hstack([np.linalg.matrix_power(S_d, k) @ Pbar_d.T for k in range(n_d)])
    ) < n_d:
        warnings.warn(
            "(S_d, Pbar_d) controllability-style rank test failed; "
            "not required constructively, continuing",
            stacklevel=2,
        )
    return model


def propagator(model, t):
    """exp(S t) computed exactly through the (validated) eigenbasis."""
    if model.n_v == 0:
        return np.zeros((0, 0))
    vals, vecs = np.linalg.eig(model.S)
    M = (vecs * np.exp(vals * t)) @ np.linalg.inv(vecs)
    return M.real


def evolve_exo(model, v0, t):
    """v(t) = exp(S t) v0 for t >= 0."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    v0 = np.asarray(v0, dtype=float)
    return propagator(model, t) @ v0


def signals(model, v):
    """Reference and disturbance read off the exosystem state:
    r = Pbar_r v_r, d = Pbar_d v_d."""
    v_r, v_d = model.split(v)
    r = float(model.Pbar_r @ v_r)
    d = model.Pbar_d @ v_d if model.n_d else np.zeros(0)
    return r, d
