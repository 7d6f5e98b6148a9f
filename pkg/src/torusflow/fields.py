"""Divergence-free spectral fields on the 2-torus [0, 2pi)^2.

A field u(x) = sum_k u_hat(k) e^{i k.x} is stored on the half mode box
kx in [-N, N], ky in [0, N] (Hermitian symmetry supplies ky < 0); axis
layout is (..., components, 2N+1, N+1) with kx at index kx + N.  The ky = 0
row carries both signs of kx and is kept self-conjugate explicitly.

Collocation uses a grid of M >= 3N + 2 points per axis, so products of two
band-limited fields are exact convolutions on the retained modes (the
classical dealiasing rule realized by zero padding).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

__all__ = [
    "block_mode_counts",
    "ModeGrid",
    "grid_for",
    "enforce_hermitian",
    "to_physical",
    "from_physical",
    "leray_project",
    "divergence_max",
    "energy",
    "inner",
    "sup_norm",
    "block_sup_norms",
    "block_count",
    "holder_exponents",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ModeGrid:
    """Precomputed wavenumber geometry for one cutoff N."""

    N: int
    M: int
    kx: np.ndarray          # (2N+1, 1) float
    ky: np.ndarray          # (1, N+1) float
    k_sq: np.ndarray        # (2N+1, N+1) float, |k|^2
    weight: np.ndarray      # (1, N+1): 1 on the ky=0 row, else 2
    lap: np.ndarray         # -|k|^2 (Laplacian symbol)

    @property
    def shape(self) -> tuple[int, int]:
        return (2 * self.N + 1, self.N + 1)

    def component_shape(self, d: int = 2) -> tuple[int, int, int]:
        return (d,) + self.shape


@lru_cache(maxsize=None)
def grid_for(N: int) -> ModeGrid:
    if N < 1:
        raise ValueError("mode cutoff N must be >= 1")
    M = scipy.fft.next_fast_len(3 * N + 2, real=True)
    kx = np.arange(-N, N + 1, dtype=float)[:, None]
    ky = np.arange(0, N + 1, dtype=float)[None, :]
    k_sq = kx ** 2 + ky ** 2
    weight = np.where(ky == 0, 1.0, 2.0)
    return ModeGrid(N=N, M=M, kx=kx, ky=ky, k_sq=k_sq, weight=weight,
                    lap=-k_sq)


def enforce_hermitian(data: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """Make the ky = 0 row self-conjugate and zero the mean mode, in place."""
    N = grid.N
    row = data[..., :, 0]
    pos = row[..., N + 1:]
    data[..., :N, 0] = np.conj(pos[..., ::-1])
    data[..., N, 0] = 0.0
    return data


_EMB_CACHE: dict[tuple, np.ndarray] = {}


def _embedding_buffer(shape: tuple, dtype) -> np.ndarray:
    """Reusable zero-padded buffer; only the mode-box slices are ever
    written, so the padding stays zero across uses (single-threaded)."""
    key = (shape, np.dtype(dtype).str)
    buf = _EMB_CACHE.get(key)
    if buf is None:
        buf = _EMB_CACHE[key] = np.zeros(shape, dtype=dtype)
    return buf


def to_physical(data: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """Evaluate on the M x M collocation grid (real output).

    Accepts any leading batch axes; the last two axes are the mode box.
    """
    N, M = grid.N, grid.M
    half = M // 2 + 1
    emb = _embedding_buffer(data.shape[:-2] + (M, half), data.dtype)
    # kx >= 0 rows map to FFT rows 0..N, negative kx wrap to M-N..M-1
    emb[..., : N + 1, : N + 1] = data[..., N:, :]
    emb[..., M - N:, : N + 1] = data[..., :N, :]
    out = scipy.fft.irfft2(emb, s=(M, M), axes=(-2, -1))
    out *= M * M
    return out


def from_physical(phys: np.ndarray, grid: ModeGrid,
                  out_dtype=None) -> np.ndarray:
    """Project collocation samples back onto the mode box."""
    N, M = grid.N, grid.M
    spec = scipy.fft.rfft2(phys, axes=(-2, -1))
    spec /= (M * M)
    out = np.empty(phys.shape[:-2] + (2 * N + 1, N + 1),
                   dtype=out_dtype or spec.dtype)
    out[..., N:, :] = spec[..., : N + 1, : N + 1]
    out[..., :N, :] = spec[..., M - N:, : N + 1]
    return out


def leray_project(data: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """Project onto divergence-free fields: u_hat -= k (k.u_hat)/|k|^2.

    The mean mode is pinned to zero (the dynamics is mean-free).
    The components axis is the third from the right.
    """
    kx, ky = grid.kx, grid.ky
    k_sq = np.where(grid.k_sq == 0.0, 1.0, grid.k_sq)
    dot = (kx * data[..., 0, :, :] + ky * data[..., 1, :, :]) / k_sq
    out = data.copy()
    out[..., 0, :, :] -= kx * dot
    out[..., 1, :, :] -= ky * dot
    out[..., :, grid.N, 0] = 0.0
    return out


def divergence_max(data: np.ndarray, grid: ModeGrid) -> float:
    """max_k |k . u_hat(k)|, the divergence-free defect."""
    div = grid.kx * data[..., 0, :, :] + grid.ky * data[..., 1, :, :]
    return float(np.max(np.abs(div)))


def energy(data: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """L2 norm squared on the torus, (2 pi)^2 sum_k |u_hat|^2 (all components)."""
    s = np.sum(grid.weight * (data.real.astype(np.float64) ** 2
                              + data.imag.astype(np.float64) ** 2),
               axis=(-3, -2, -1))
    return TWO_PI ** 2 * s


def inner(a: np.ndarray, b: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """Real L2 inner product of two real fields from their mode boxes."""
    s = np.sum(grid.weight * (a.real.astype(np.float64) * b.real.astype(np.float64)
                              + a.imag.astype(np.float64) * b.imag.astype(np.float64)),
               axis=(-3, -2, -1))
    return TWO_PI ** 2 * s


def sup_norm(data: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """Max over components and collocation points of |u|."""
    phys = to_physical(data, grid)
    return np.max(np.abs(phys), axis=(-3, -2, -1))


# ---------------------------------------------------------------------------
# dyadic (Littlewood-Paley style) blocks over |k|
# ---------------------------------------------------------------------------

def block_count(N: int) -> int:
    return int(np.floor(np.log2(np.sqrt(2.0) * N))) + 1


@lru_cache(maxsize=None)
def _block_masks(N: int) -> np.ndarray:
    grid = grid_for(N)
    kmag = np.sqrt(grid.k_sq)
    J = block_count(N)
    masks = np.zeros((J,) + grid.shape, dtype=bool)
    for j in range(J):
        masks[j] = (kmag >= 2 ** j) & (kmag < 2 ** (j + 1))
    return masks


def block_sup_norms(data: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """sup norm of each dyadic frequency block, shape (..., J).

    Block j keeps wave-vectors with 2^j <= |k| < 2^{j+1}; the mean mode is
    identically zero for the fields produced here and is skipped.
    """
    masks = _block_masks(grid.N)
    J = masks.shape[0]
    out_shape = data.shape[:-3] + (J,)
    out = np.empty(out_shape)
    for j in range(J):
        blocked = np.where(masks[j], data, 0.0)
        out[..., j] = sup_norm(blocked, grid)
    return out


def holder_exponents(N: int) -> np.ndarray:
    """Block scale exponents j = 0..J-1 used by the norm proxies."""
    return np.arange(block_count(N), dtype=float)


def block_mode_counts(N: int) -> np.ndarray:
    """Number of full-box modes per dyadic block (half-box doubled)."""
    masks = _block_masks(N)
    grid = grid_for(N)
    return np.array([float(np.sum(grid.weight * m)) for m in masks])
