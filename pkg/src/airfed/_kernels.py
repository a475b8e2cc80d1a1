"""Hot numeric kernels for the over-the-air uplink.

Two interchangeable backends: numba-compiled loops (default) and pure
numpy.  Set AIRFED_DISABLE_NUMBA=1 before import, or flip USE_NUMBA at
runtime, to select the numpy path.  benchmarks/bench_channel.py compares
the two.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("AIRFED_DISABLE_NUMBA", "") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations

def _uplink_combine_np(h, x, p_t, z):
    """Superpose M users over the fading channel and MRC-combine.

    h: (M, K, N) channel coefficients, x: (M, N) transmit symbols,
    z: (K, N) receiver noise.  Returns the per-antenna received signal
    y[k, n] = p_t * sum_m h*x + z and the combined vector
    (1/K) * sum_k conj(sum_m h[m,k,n]) * y[k, n].
    """
    y = p_t * np.einsum("mkn,mn->kn", h, x) + z
    hs = h.sum(axis=0)
    combined = (np.conj(hs) * y).sum(axis=0) / h.shape[1]
    return y, combined


def _decompose_np(h, x, p_t, z):
    """Split the combined output into signal, interference, and noise terms."""
    K = h.shape[1]
    gain = (h.real ** 2 + h.imag ** 2).sum(axis=1) / K   # (M, N)
    sig = p_t * (gain * x).sum(axis=0)
    hs = h.sum(axis=0)
    sx = np.einsum("mkn,mn->kn", h, x)
    if h.shape[0] == 1:          # single user: no cross terms at all
        itf = np.zeros(h.shape[2], dtype=np.complex128)
    else:
        itf = p_t * ((np.conj(hs) * sx).sum(axis=0) / K
                     - (gain * x).sum(axis=0))
    noi = (np.conj(hs) * z).sum(axis=0) / K
    return sig, itf, noi


# ---------------------------------------------------------------------------
# numba implementations

if USE_NUMBA:

    @njit(cache=True)
    def _uplink_combine_nb(h, x, p_t, z):
        M, K, N = h.shape
        y = np.empty((K, N), dtype=np.complex128)
        combined = np.zeros(N, dtype=np.complex128)
        for k in range(K):
            for n in range(N):
                acc = 0.0 + 0.0j
                hs = 0.0 + 0.0j
                for m in range(M):
                    acc += h[m, k, n] * x[m, n]
                    hs += h[m, k, n]
                y[k, n] = p_t * acc + z[k, n]
                combined[n] += np.conj(hs) * y[k, n]
        for n in range(N):
            combined[n] /= K
        return y, combined

    @njit(cache=True)
    def _decompose_nb(h, x, p_t, z):
        M, K, N = h.shape
        sig = np.zeros(N, dtype=np.complex128)
        itf = np.zeros(N, dtype=np.complex128)
        noi = np.zeros(N, dtype=np.complex128)
        for n in range(N):
            for m in range(M):
                g = 0.0
                for k in range(K):
                    c = h[m, k, n]
                    g += c.real * c.real + c.imag * c.imag
                sig[n] += (g / K) * x[m, n]
            sig[n] *= p_t
            acc_i = 0.0 + 0.0j
            for m in range(M):
                for mp in range(M):
                    if mp == m:
                        continue
                    for k in range(K):
                        acc_i += np.conj(h[m, k, n]) * h[mp, k, n] * x[mp, n]
            itf[n] = p_t * acc_i / K
            acc_z = 0.0 + 0.0j
            for m in range(M):
                for k in range(K):
                    acc_z += np.conj(h[m, k, n]) * z[k, n]
            noi[n] = acc_z / K
        return sig, itf, noi


def uplink_combine(h, x, p_t, z):
    """Fused OTA uplink + MRC combine; see _uplink_combine_np."""
    if USE_NUMBA:
        return _uplink_combine_nb(np.ascontiguousarray(h),
                                  np.ascontiguousarray(x), float(p_t),
                                  np.ascontiguousarray(z))
    return _uplink_combine_np(h, x, p_t, z)


def decompose(h, x, p_t, z):
    """Signal / interference / noise terms of the combined output."""
    if USE_NUMBA:
        return _decompose_nb(np.ascontiguousarray(h),
                             np.ascontiguousarray(x), float(p_t),
                             np.ascontiguousarray(z))
    return _decompose_np(h, x, p_t, z)
