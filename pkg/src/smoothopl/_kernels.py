"""Compiled Monte Carlo kernel for the Gaussian policy."""
import math

import numpy as np
from numba import njit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def gaussian_mc_jacobian(t, eps, with_jacobian):
    """MC propensities of the Gaussian policy and their Jacobian in ``t``.

    For each row ``i`` and draw ``e = eps[i, s]`` the contribution to action
    ``a`` is ``prod_{b != a} Phi(e + t[i, a] - t[i, b])``. The result is the
    unnormalized average over draws.

    Parameters
    ----------
    t : (m, K) scaled scores ``phi(x)^T mu_a / sigma``
    eps : (m, S) standard normal draws
    with_jacobian : bool

    Returns
    -------
    P : (m, K)
    J : (m, K, K) with ``J[i, a, b] = dP[i, a] / dt[i, b]`` (zeros if not requested)
    """
    m, K = t.shape
    S = eps.shape[1]
    P = np.zeros((m, K))
    if with_jacobian:
        J = np.zeros((m, K, K))
    else:
        J = np.zeros((0, K, K))
    phi = np.empty(K)
    pdf = np.empty(K)
    pre = np.empty(K + 1)
    suf = np.empty(K + 1)
    inv_s = 1.0 / S
    for i in range(m):
        for s in range(S):
            e = eps[i, s]
            for a in range(K):
                ta = t[i, a] + e
                for b in range(K):
                    if b == a:
                        phi[b] = 1.0
                        pdf[b] = 0.0
                    else:
                        z = ta - t[i, b]
                        phi[b] = 0.5 * math.erfc(-z * _INV_SQRT2)
                        if with_jacobian:
                            pdf[b] = math.exp(-0.5 * z * z) * _INV_SQRT_2PI
                pre[0] = 1.0
                for b in range(K):
                    pre[b + 1] = pre[b] * phi[b]
                P[i, a] += pre[K] * inv_s
                if with_jacobian:
                    suf[K] = 1.0
                    for b in range(K - 1, -1, -1):
                        suf[b] = suf[b + 1] * phi[b]
                    for b in range(K):
                        if b != a:
                            dv = pre[b] * suf[b + 1] * pdf[b] * inv_s
                            J[i, a, a] += dv
                            J[i, a, b] -= dv
    return P, J
