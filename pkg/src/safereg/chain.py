"""First transformation: carries (Y, v) into chain-of-integrators error
coordinates Z = T_z Y + T_v v with z_1 the tracking error and
z_i' = z_{i+1} for i < n.

The coefficients are built by exact recursions in the entries of A and of
G1*P_d; evaluated in plain floating point (case studies use n = 2, anything
up to n ~ 5 stays exact to roundoff in the integer-polynomial sense).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChainMaps:
    T_z: np.ndarray          # (n, n) unit lower triangular
    T_v: np.ndarray          # (n, n_v)
    K: np.ndarray            # (n,) feedback row, so U-side uses K @ Y
    Gbar0_row: np.ndarray    # (n_v,) = (lambda_n + P_r S^n) / b
    varrho: np.ndarray       # (n+1, n+1) table, varrho[i, j] for 1<=j<=i<=n
    lambda_rows: np.ndarray  # (n+1, n_v), lambda_rows[i] = lambda_i

    @property
    def n(self):
        return self.T_z.shape[0]

    @property
    def A_z(self):
        out = np.zeros((self.n, self.n))
        out[np.arange(self.n - 1), np.arange(1, self.n)] = 1.0
        return out


def build_chain(plant, exo):
    """Assemble the transformation data from a validated plant and exosystem.

    The varrho table satisfies
        varrho[1,1] = a11
        varrho[i,1] = a_{i,1} + sum_j varrho[i-1,j] a_{j,1}
        varrho[i,l] = a_{i,l} + varrho[i-1,l-1] + sum_{j>=l} varrho[i-1,j] a_{j,l}
        varrho[i,i] = a_{i,i} + varrho[i-1,i-1]
    and the lambda rows
        lambda_0 = 0,
        lambda_i = -sum_{j<i} varrho[i-1,j] g_j - g_i + lambda_{i-1} S
    with g_j the j-th row of G1 P_d.
    """
    A = plant.A
    n = plant.n
    S = exo.S
    n_v = exo.n_v
    Gac1 = plant.G1 @ exo.P_d if n_v else np.zeros((n, 0))  # G1 P_d, rows g_j

    a = np.zeros((n + 1, n + 1))
    a[1: n + 1, 1: n + 1] = A

    vr = np.zeros((n + 1, n + 1))
    if n >= 1:
        vr[1, 1] = a[1, 1]
    for i in range(2, n + 1):
        vr[i, 1] = a[i, 1] + sum(vr[i - 1, j] * a[j, 1] for j in range(1, i))
        for l in range(2, i):
            vr[i, l] = (
                a[i, l]
                + vr[i - 1, l - 1]
                + sum(vr[i - 1, j] * a[j, l] for j in range(l, i))
            )
        vr[i, i] = a[i, i] + vr[i - 1, i - 1]

    lam = np.zeros((n + 1, n_v))
    for i in range(1, n + 1):
        acc = -Gac1[i - 1].copy()
        for j in range(1, i):
            acc -= vr[i - 1, j] * Gac1[j - 1]
        lam[i] = acc + lam[i - 1] @ S

    T_z = np.eye(n)
    for i in range(2, n + 1):          # row i holds varrho[i-1, 1..i-1]
        T_z[i - 1, : i - 1] = vr[i - 1, 1:i]

    P_r = exo.P_r[0] if n_v else np.zeros(0)
    T_v = np.zeros((n, n_v))
    Spow = np.eye(n_v)
    for i in range(n):                 # row i+1: -(lambda_i + P_r S^i)
        T_v[i] = -(lam[i] + P_r @ Spow)
        Spow = Spow @ S

    K = vr[n, 1: n + 1] / plant.b
    Gbar0_row = (lam[n] + P_r @ np.linalg.matrix_power(S, n)) / plant.b

    return ChainMaps(
        T_z=T_z, T_v=T_v, K=K, Gbar0_row=Gbar0_row,
        varrho=vr, lambda_rows=lam,
    )


def to_error(maps, Y, v):
    """Z = T_z Y + T_v v; Z[0] is the tracking error y1 - r."""
    Y = np.asarray(Y, dtype=float)
    v = np.asarray(v, dtype=float)
    return maps.T_z @ Y + (maps.T_v @ v if v.size else np.zeros(maps.n))
