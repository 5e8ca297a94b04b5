"""Fused elementwise loops for propagating jets through tanh."""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def tanh_jet_forward(z, t, dim, has_hess):
    _, n_pts, width = z.shape
    out = np.empty_like(z)
    for n in range(n_pts):
        for j in range(width):
            tt = t[n, j]
            s = 1.0 - tt * tt
            t2 = -2.0 * tt * s
            out[0, n, j] = tt
            for i in range(dim):
                g = z[1 + i, n, j]
                out[1 + i, n, j] = s * g
                if has_hess:
                    out[1 + dim + i, n, j] = t2 * g * g + s * z[1 + dim + i, n, j]
    return out


@numba.njit(cache=True, fastmath=False)
def tanh_jet_backward(adj, z, t, dim, has_hess):
    _, n_pts, width = z.shape
    gz = np.empty_like(z)
    for n in range(n_pts):
        for j in range(width):
            tt = t[n, j]
            s = 1.0 - tt * tt
            t2 = -2.0 * tt * s
            t3 = -2.0 * s * (1.0 - 3.0 * tt * tt)
            dz = adj[0, n, j] * s
            for i in range(dim):
                g = z[1 + i, n, j]
                ag = adj[1 + i, n, j]
                dz += t2 * ag * g
                dg = ag * s
                if has_hess:
                    ah = adj[1 + dim + i, n, j]
                    dz += ah * (t3 * g * g + t2 * z[1 + dim + i, n, j])
                    dg += 2.0 * ah * t2 * g
                    gz[1 + dim + i, n, j] = ah * s
                gz[1 + i, n, j] = dg
            gz[0, n, j] = dz
    return gz
