"""Coupled 2x2 hyperbolic PDE - ODE plant description and the UAV
cable-payload instance.

Structure (on x in [0,1]):

    Y' = A Y + B w(0,t) + G1 d
    z_t = -q1 z_x + d1 w + c_self z + G2(x) d
    w_t = +q2 w_x + d2 z + c_self w + G3(x) d
    z(0,t) = p w(0,t) + C Y + G4 d
    w(1,t) = q z(1,t) + G5 d + U

A is companion-like (ones on the superdiagonal, zeros above it),
B = (0,...,0,b)^T with b > 0.  c_self covers the damped-wave Riemann variant
where both PDEs carry an identical self-coupling; it is 0 for the plain
transport plant.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    BadCompanionForm,
    NonpositiveGain,
    NonpositiveSpeed,
    NotObservable,
)

_RANK_RTOL = 1e-8


@dataclass(frozen=True)
class Plant:
    A: np.ndarray
    b: float
    C: np.ndarray
    p: float
    q: float
    q1: float
    q2: float
    d1: float
    d2: float
    G1: np.ndarray                       # (n, m_d)
    G2: Callable[[float], np.ndarray]    # x -> (m_d,)
    G3: Callable[[float], np.ndarray]
    G4: np.ndarray                       # (m_d,)
    G5: np.ndarray                       # (m_d,)
    c_self: float = 0.0

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m_d(self):
        return self.G4.shape[0]

    @property
    def B(self):
        out = np.zeros(self.n)
        out[-1] = self.b
        return out


@dataclass(frozen=True)
class UavParams:
    """Physical cable-payload parameters (SI units)."""

    L: float = 1.0
    rho_lin: float = 0.5
    M_L: float = 15.0
    g: float = 9.8
    d_c: float = -1.0
    d_0: float = -1.0

    def __post_init__(self):
        if min(self.L, self.rho_lin, self.M_L, self.g) <= 0:
            raise ValueError("L, rho_lin, M_L, g must be positive")


@dataclass(frozen=True)
class FieldIC:
    """Initial data: fields sampled on the grid builder, ODE and exo states."""

    z0: Callable[[np.ndarray], np.ndarray]
    w0: Callable[[np.ndarray], np.ndarray]
    Y0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    v0: np.ndarray = field(default_factory=lambda: np.zeros(0))


def validate_plant(plant, strict_observability=False, warn_observability=True):
    """Structural checks; returns the plant unchanged on success.

    The (A, C) observability rank test is advisory: none of the control or
    estimation constructions use it (Y is measured in full), and the
    cable-payload instance itself fails it (its C reads only the velocity
    state).  It therefore warns by default and raises only when
    strict_observability is set.
    """
    A = np.asarray(plant.A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise BadCompanionForm("A must be square")
    for i in range(n - 1):
        if not np.isclose(A[i, i + 1], 1.0, atol=1e-12):
            raise BadCompanionForm(f"A[{i}][{i + 1}] must equal 1")
        if np.any(np.abs(A[i, i + 2:]) > 1e-12):
            raise BadCompanionForm(f"row {i} of A has nonzeros above the superdiagonal")
    if plant.b <= 0:
        raise NonpositiveGain(f"b = {plant.b} must be positive")
    if plant.q1 <= 0 or plant.q2 <= 0:
        raise NonpositiveSpeed("transport speeds q1, q2 must be positive")
    C = np.asarray(plant.C, dtype=float).reshape(1, n)
    obs = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(n)])
    s = np.linalg.svd(obs, compute_uv=False)
    if s[-1] <= _RANK_RTOL * s[0]:
        if strict_observability:
            raise NotObservable("(A, C) fails the observability rank test")
        if warn_observability:
            warnings.warn(
                "(A, C) fails the observability rank test; the pair is not "
                "used constructively, continuing",
                stacklevel=2,
            )
    return plant


def build_uav(params=UavParams(), wind_maps=None):
    """Cable-payload plant in Riemann variables.

    T0 = M_L*g, q1 = q2 = sqrt(T0/rho), and the anti-damping coefficient
    enters as c_self = d1 = d2 = -d_c/(2 rho).  wind_maps may override the
    default disturbance input matrices (keys G1, G2, G3, G4, G5).
    """
    T0 = params.M_L * params.g
    qs = float(np.sqrt(T0 / params.rho_lin))
    c = -params.d_c / (2.0 * params.rho_lin)
    b = float(np.sqrt(T0 * params.rho_lin) / params.M_L)
    a22 = float((-params.d_0 - np.sqrt(T0 * params.rho_lin)) / params.M_L)
    A = np.array([[0.0, 1.0], [0.0, a22]])
    C = np.array([[0.0, 2.0]])

    maps = {
        "G1": np.array([[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]]),
        "G2": lambda x: np.array([x, 0.0, 0.0, 0.0]),
        "G3": lambda x: np.array([0.0, x, 0.0, 0.0]),
        "G4": np.array([0.0, 1.0, 0.0, 1.0]),
        "G5": np.array([1.0, 0.0, 1.0, 0.0]),
    }
    if wind_maps:
        maps.update(wind_maps)

    plant = Plant(
        A=A, b=b, C=C, p=1.0, q=1.0, q1=qs, q2=qs, d1=c, d2=c,
        G1=np.asarray(maps["G1"], dtype=float),
        G2=maps["G2"], G3=maps["G3"],
        G4=np.asarray(maps["G4"], dtype=float),
        G5=np.asarray(maps["G5"], dtype=float),
        c_self=c,
    )
    return validate_plant(plant, warn_observability=False)


def riemann(u_t, u_x, T0, rho):
    """Characteristic variables of the wave equation:
    z = u_t - sqrt(T0/rho) u_x,  w = u_t + sqrt(T0/rho) u_x."""
    cwave = np.sqrt(T0 / rho)
    u_t = np.asarray(u_t, dtype=float)
    u_x = np.asarray(u_x, dtype=float)
    return u_t - cwave * u_x, u_t + cwave * u_x


def riemann_inverse(z, w, T0, rho):
    """Recover (u_t, u_x) from the characteristic variables."""
    cwave = np.sqrt(T0 / rho)
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    return (z + w) / 2.0, (w - z) / (2.0 * cwave)
