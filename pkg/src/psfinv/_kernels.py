"""Fused Adam kernels for the metric trainer.

Both layers of the metric network receive rank-one gradients
(``outer(left, right)``), so the update can be applied without ever
materializing the gradient matrix. The arithmetic mirrors
:func:`psfinv.metric.adam_step` operation for operation.
"""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def adam_rank1(W, M, V, left, right, beta1, beta2, step, sqrt_c2, eps):
    n, p = W.shape
    for i in range(n):
        li = left[i]
        if li == 0.0:
            # zero gradient row: moments decay, update is m / (sqrt(v)/s + eps)
            for j in range(p):
                m = beta1 * M[i, j]
                v = beta2 * V[i, j]
                M[i, j] = m
                V[i, j] = v
                W[i, j] -= step * m / (np.sqrt(v) / sqrt_c2 + eps)
            continue
        for j in range(p):
            g = li * right[j]
            m = beta1 * M[i, j] + (1.0 - beta1) * g
            v = beta2 * V[i, j] + (1.0 - beta2) * (g * g)
            M[i, j] = m
            V[i, j] = v
            W[i, j] -= step * m / (np.sqrt(v) / sqrt_c2 + eps)


@numba.njit(cache=True, nogil=True)
def adam_dense(W, M, V, g, beta1, beta2, step, sqrt_c2, eps):
    for i in range(W.shape[0]):
        gi = g[i]
        m = beta1 * M[i] + (1.0 - beta1) * gi
        v = beta2 * V[i] + (1.0 - beta2) * (gi * gi)
        M[i] = m
        V[i] = v
        W[i] -= step * m / (np.sqrt(v) / sqrt_c2 + eps)
