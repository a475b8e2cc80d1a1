"""Over-the-air uplink: complex packing, fading, superposition, MRC, recovery.

Model-difference vectors of even length 2N are packed into N complex
symbols, all users in a cluster transmit simultaneously through i.i.d.
Rayleigh fading to the K-antenna IS, the IS combines antennas with the
conjugated channel sum, and the cluster update is recovered by dividing
out the nominal combining gain p_t * M * sigma_h2 * beta_bar.
"""

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .rng import as_generator


def pack_complex(delta: np.ndarray) -> np.ndarray:
    """First half -> real parts, second half -> imaginary parts."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 1 or delta.size % 2 != 0:
        raise ValueError(f"model vector must be 1-D with even length, "
                         f"got shape {delta.shape}")
    n = delta.size // 2
    return delta[:n] + 1j * delta[n:]


def unpack_complex(symbols: np.ndarray) -> np.ndarray:
    """Exact inverse of pack_complex."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    return np.concatenate([symbols.real, symbols.imag])


@dataclass
class ChannelTensor:
    """Fading draws for one cluster and one local iteration.

    coefficients[m, k, n] = sqrt(beta_m) * g with g ~ CN(0, sigma_h2),
    redrawn per user, antenna, and symbol.
    """

    coefficients: np.ndarray         # (M, K, N) complex128
    small_scale_variance: float
    betas: np.ndarray                # (M,)

    @property
    def shape(self):
        return self.coefficients.shape


@dataclass
class ReceivedSignal:
    """Per-antenna symbols at the IS, plus the draw parameters."""

    symbols: np.ndarray              # (K, N) complex128
    noise_variance: float
    transmit_power: float
    noise: Optional[np.ndarray] = None  # (K, N), recorded when requested


def draw_channels_from_betas(betas, K, N, sigma_h2, rng,
                             unit: bool = False) -> ChannelTensor:
    """Draw an (M, K, N) fading tensor for per-user large-scale gains betas.

    unit=True forces every small-scale coefficient g to the constant 1
    (degenerate coherent channel used by equivalence tests).
    """
    betas = np.asarray(betas, dtype=np.float64)
    if sigma_h2 <= 0:
        raise ValueError("sigma_h2 must be positive")
    M = betas.size
    if unit:
        g = np.ones((M, K, N), dtype=np.complex128)
    else:
        gen = as_generator(rng)
        raw = gen.standard_normal((M, K, N, 2)) * np.sqrt(sigma_h2 / 2.0)
        g = raw.view(np.complex128)[..., 0]
    coeff = np.sqrt(betas)[:, None, None] * g
    return ChannelTensor(coeff, float(sigma_h2), betas)


def draw_channels(topo, cluster: int, num_symbols: int, sigma_h2, rng,
                  unit: bool = False) -> ChannelTensor:
    """Fading tensor for one cluster of a SystemTopology."""
    return draw_channels_from_betas(topo.beta[cluster], topo.antennas_per_is,
                                    num_symbols, sigma_h2, rng, unit=unit)


def draw_noise(K, N, sigma_z2, rng) -> np.ndarray:
    """i.i.d. CN(0, sigma_z2) receiver noise, or exact zeros for sigma_z2=0."""
    if sigma_z2 < 0:
        raise ValueError("sigma_z2 must be nonnegative")
    if sigma_z2 == 0:
        return np.zeros((K, N), dtype=np.complex128)
    gen = as_generator(rng)
    raw = gen.standard_normal((K, N, 2)) * np.sqrt(sigma_z2 / 2.0)
    return raw.view(np.complex128)[..., 0]


def ota_uplink(symbols, ch: ChannelTensor, p_t, sigma_z2, rng,
               record_noise: bool = False) -> ReceivedSignal:
    """Superpose all users' symbols through the channel and add noise.

    y[k, n] = p_t * sum_m h[m,k,n] * x[m,n] + z[k,n].
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    M, K, N = ch.shape
    if symbols.shape != (M, N):
        raise ValueError(f"need (M, N) = ({M}, {N}) symbols, got {symbols.shape}")
    if p_t <= 0:
        raise ValueError("transmit power must be positive")
    z = draw_noise(K, N, sigma_z2, rng)
    y = p_t * np.einsum("mkn,mn->kn", ch.coefficients, symbols) + z
    return ReceivedSignal(y, float(sigma_z2), float(p_t),
                          z if record_noise else None)


def mrc_combine(rx: ReceivedSignal, ch: ChannelTensor) -> np.ndarray:
    """Per symbol: (1/K) * sum_k conj(sum_m h[m,k,n]) * y[k,n]."""
    M, K, N = ch.shape
    if rx.symbols.shape != (K, N):
        raise ValueError("received signal does not match channel dimensions")
    hs = ch.coefficients.sum(axis=0)
    return (np.conj(hs) * rx.symbols).sum(axis=0) / K


def uplink_and_combine(symbols, ch: ChannelTensor, p_t, z):
    """Fused hot path: uplink superposition + MRC combine with given noise."""
    return _kernels.uplink_combine(ch.coefficients,
                                   np.asarray(symbols, dtype=np.complex128),
                                   p_t, z)


def decompose_terms(symbols, ch: ChannelTensor, p_t, noise):
    """Signal, interference, and noise summands of the combined output.

    Requires the recorded noise draws so the decomposition is exact:
    signal + interference + noise equals mrc_combine(ota_uplink(...)).
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    M, K, N = ch.shape
    if symbols.shape != (M, N):
        raise ValueError("symbols do not match channel dimensions")
    if noise is None:
        raise ValueError("decompose_terms needs the recorded noise draws")
    return _kernels.decompose(ch.coefficients, symbols, float(p_t),
                              np.asarray(noise, dtype=np.complex128))


def recover_cluster_update(combined, p_t, M, sigma_h2, beta_bar) -> np.ndarray:
    """Divide out the nominal gain and unpack back to a 2N real vector."""
    denom = p_t * M * sigma_h2 * beta_bar
    if denom <= 0:
        raise ValueError("recovery denominator must be positive")
    return unpack_complex(np.asarray(combined, dtype=np.complex128)) / denom


# ---------------------------------------------------------------------------
# debug dump: little-endian binary, 16-byte header (M, K, N, reserved)

def dump_channel_tensor(ch: ChannelTensor, path):
    M, K, N = ch.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4I", M, K, N, 0))
        inter = np.empty((M, K, N, 2), dtype="<f8")
        inter[..., 0] = ch.coefficients.real
        inter[..., 1] = ch.coefficients.imag
        fh.write(inter.tobytes())


def load_channel_tensor(path, sigma_h2, betas) -> ChannelTensor:
    with open(path, "rb") as fh:
        M, K, N, _ = struct.unpack("<4I", fh.read(16))
        inter = np.frombuffer(fh.read(M * K * N * 16), dtype="<f8")
    inter = inter.reshape(M, K, N, 2)
    coeff = inter[..., 0] + 1j * inter[..., 1]
    return ChannelTensor(coeff, float(sigma_h2), np.asarray(betas, dtype=np.float64))
