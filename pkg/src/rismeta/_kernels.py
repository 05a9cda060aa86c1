"""Hot inner-loop kernels, numba-compiled with a pure-numpy fallback.

Set ``RISMETA_NUMBA=0`` in the environment before import to force the numpy
path (also used automatically when numba is missing). ``BACKEND`` reports the
active choice; :data:`numpy_kernels` and :data:`numba_kernels` expose both
sets explicitly for tests and benchmarks.

All complex gradients follow ``g = dL/dRe + 1j * dL/dIm``.
"""
from __future__ import annotations

import os
import types

import numpy as np

LN2 = np.log(2.0)


# --------------------------------------------------------------------------
# numpy reference path

def _rate_grad_np(A, sigma2, w):
    """SE of the K x K response matrix ``A[k, j] = h_ck w_j`` and ``dR/dA``."""
    p = A.real**2 + A.imag**2
    sig = np.diagonal(p).copy()
    total = p.sum(axis=1) + sigma2
    interf = total - sig
    rate = float(np.sum(w * np.log1p(sig / interf))) / LN2
    coef = (w / total)[:, None] - (w / interf)[:, None] * (1.0 - np.eye(A.shape[0]))
    return rate, (2.0 / LN2) * coef * A


def _rate_np(A, sigma2, w):
    p = A.real**2 + A.imag**2
    sig = np.diagonal(p)
    total = p.sum(axis=1) + sigma2
    return float(np.sum(w * np.log1p(sig / (total - sig)))) / LN2


def _phase_grad_np(H, phi, g_hphi):
    """Reduce a gradient w.r.t. ``H * phi`` to d/dtheta (real, length N)."""
    g_phi = np.sum(H.conj() * g_hphi, axis=0)
    return -(g_phi.conj() * phi).imag


def _mlp_forward_np(W1, b1, W2, b2, x):
    """Batched Linear-ReLU-Linear; ``x`` is (batch, in)."""
    z = x @ W1.T + b1
    a = np.maximum(z, 0.0)
    return a @ W2.T + b2, z, a


def _mlp_backward_np(W1, W2, x, z, a, up):
    gb2 = up.sum(axis=0)
    gW2 = up.T @ a
    ga = up @ W2
    gz = ga * (z > 0.0)
    gb1 = gz.sum(axis=0)
    gW1 = gz.T @ x
    gx = gz @ W1
    return gW1, gb1, gW2, gb2, gx


numpy_kernels = types.SimpleNamespace(
    name="numpy",
    rate_grad=_rate_grad_np,
    rate=_rate_np,
    phase_grad=_phase_grad_np,
    mlp_forward=_mlp_forward_np,
    mlp_backward=_mlp_backward_np,
)


# --------------------------------------------------------------------------
# numba path

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def rate_grad(A, sigma2, w):
        K = A.shape[0]
        g = np.empty_like(A)
        rate = 0.0
        c = 2.0 / np.log(2.0)
        for k in range(K):
            total = sigma2
            for j in range(K):
                total += A[k, j].real ** 2 + A[k, j].imag ** 2
            sig = A[k, k].real ** 2 + A[k, k].imag ** 2
            interf = total - sig
            rate += w[k] * np.log1p(sig / interf)
            a = w[k] / total
            b = w[k] / interf
            for j in range(K):
                if j == k:
                    g[k, j] = c * a * A[k, j]
                else:
                    g[k, j] = c * (a - b) * A[k, j]
        return rate / np.log(2.0), g

    @njit(cache=True)
    def rate(A, sigma2, w):
        K = A.shape[0]
        r = 0.0
        for k in range(K):
            total = sigma2
            for j in range(K):
                total += A[k, j].real ** 2 + A[k, j].imag ** 2
            sig = A[k, k].real ** 2 + A[k, k].imag ** 2
            r += w[k] * np.log1p(sig / (total - sig))
        return r / np.log(2.0)

    @njit(cache=True)
    def phase_grad(H, phi, g_hphi):
        K, N = H.shape
        out = np.empty(N)
        for n in range(N):
            acc = 0j
            for k in range(K):
                acc += H[k, n].conjugate() * g_hphi[k, n]
            out[n] = -(acc.conjugate() * phi[n]).imag
        return out

    @njit(cache=True)
    def mlp_forward(W1, b1, W2, b2, x):
        z = np.dot(x, W1.T)
        B, hid = z.shape
        a = np.empty_like(z)
        for s in range(B):
            for h in range(hid):
                v = z[s, h] + b1[h]
                z[s, h] = v
                a[s, h] = v if v > 0.0 else 0.0
        y = np.dot(a, W2.T)
        for s in range(B):
            for o in range(y.shape[1]):
                y[s, o] += b2[o]
        return y, z, a

    @njit(cache=True)
    def mlp_backward(W1, W2, x, z, a, up):
        B, hid = z.shape
        gb2 = np.zeros(up.shape[1])
        for s in range(B):
            for o in range(up.shape[1]):
                gb2[o] += up[s, o]
        gW2 = np.dot(up.T, a)
        gz = np.dot(up, W2)
        gb1 = np.zeros(hid)
        for s in range(B):
            for h in range(hid):
                if z[s, h] <= 0.0:
                    gz[s, h] = 0.0
                gb1[h] += gz[s, h]
        gW1 = np.dot(gz.T, x)
        gx = np.dot(gz, W1)
        return gW1, gb1, gW2, gb2, gx

    return types.SimpleNamespace(
        name="numba",
        rate_grad=rate_grad,
        rate=rate,
        phase_grad=phase_grad,
        mlp_forward=mlp_forward,
        mlp_backward=mlp_backward,
    )


try:
    numba_kernels = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_kernels = None

_want_numba = os.environ.get("RISMETA_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")
active = numba_kernels if (_want_numba and numba_kernels is not None) else numpy_kernels
BACKEND = active.name
