"""Measurement ensembles and the lifted bilinear measurement operator.

A measurement ensemble is a list of ``r`` pairs ``(B_i, C_i)`` with
``B_i`` an ``L x K_i`` matrix with orthonormal columns and ``C_i`` an
``L x N_i`` matrix of i.i.d. circular-symmetric complex Gaussians.  The
``l``-th measurement of a lifted signal ``X = (X_1, ..., X_r)`` is

.. math::

    \\mathcal{A}(X)_\\ell = \\sum_i b_{i,\\ell}^* X_i c_{i,\\ell}

where ``b_{i,l}^*`` is row ``l`` of ``B_i`` and ``c_{i,l}`` is row ``l``
of ``C_i`` read as a column vector.  Indices are zero-based throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, NormalizationError

__all__ = [
    "BasisKind",
    "SubspaceBasis",
    "Encoder",
    "MeasurementEnsemble",
    "LiftedSignal",
    "FactoredSignal",
    "Observation",
    "sample_cn",
    "build_partial_dft_basis",
    "build_orthonormal_basis",
    "sample_encoder",
    "build_ensemble",
    "sample_factored",
    "forward",
    "forward_block",
    "adjoint",
    "adjoint_block",
    "restricted_forward",
    "circular_convolve",
    "circular_convolve_direct",
    "lift",
    "synthesize_observation",
]

# slack for B^*B = I on stored or user-supplied bases
ORTHONORMAL_TOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def sample_cn(rng, shape):
    """Draw i.i.d. CN(0, 1) entries as ``(g1 + i g2) / sqrt(2)``."""
    g = rng.standard_normal((2,) + tuple(np.atleast_1d(shape)))
    return (g[0] + 1j * g[1]) / np.sqrt(2.0)


class BasisKind(str, enum.Enum):
    PARTIAL_DFT = "PartialDFT"
    GENERAL_ORTHONORMAL = "GeneralOrthonormal"


@dataclass(frozen=True)
class SubspaceBasis:
    """``L x K`` matrix with orthonormal columns.

    Row ``l`` of ``entries`` is ``b_l^*``, so ``conj(entries)`` stacks the
    vectors ``b_l`` as rows.
    """

    entries: np.ndarray
    kind: BasisKind = BasisKind.GENERAL_ORTHONORMAL

    def __post_init__(self):
        e = _frozen(self.entries)
        if e.ndim != 2 or e.shape[1] < 1 or e.shape[1] > e.shape[0]:
            raise DimensionError(f"basis must be L x K with 1 <= K <= L, got {e.shape}")
        dev = np.linalg.norm(e.conj().T @ e - np.eye(e.shape[1]), 2)
        if not dev <= ORTHONORMAL_TOL:
            raise NormalizationError(f"basis columns are not orthonormal (deviation {dev:.3g})")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "kind", BasisKind(self.kind))

    @property
    def L(self):
        return self.entries.shape[0]

    @property
    def K(self):
        return self.entries.shape[1]

    @property
    def row_norms_sq(self):
        """``||b_l||^2`` for every ``l``."""
        return np.sum(np.abs(self.entries) ** 2, axis=1)


@dataclass(frozen=True)
class Encoder:
    """``L x N`` encoding matrix; row ``l`` is ``c_l^T``."""

    entries: np.ndarray

    def __post_init__(self):
        e = _frozen(self.entries)
        if e.ndim != 2 or min(e.shape) < 1:
            raise DimensionError(f"encoder must be a nonempty L x N matrix, got {e.shape}")
        object.__setattr__(self, "entries", e)

    @property
    def L(self):
        return self.entries.shape[0]

    @property
    def N(self):
        return self.entries.shape[1]


@dataclass(frozen=True)
class MeasurementEnsemble:
    """The ``r`` basis/encoder pairs sharing ``L`` measurements."""

    L: int
    blocks: tuple

    def __post_init__(self):
        blocks = tuple((b, c) for b, c in self.blocks)
        if len(blocks) < 1:
            raise DimensionError("ensemble needs at least one block")
        for i, (b, c) in enumerate(blocks):
            if not isinstance(b, SubspaceBasis) or not isinstance(c, Encoder):
                raise TypeError(f"block {i} must be a (SubspaceBasis, Encoder) pair")
            if b.L != self.L or c.L != self.L:
                raise DimensionError(
                    f"block {i}: basis has {b.L} rows and encoder {c.L}, expected L={self.L}"
                )
        object.__setattr__(self, "blocks", blocks)

    @property
    def r(self):
        return len(self.blocks)

    @property
    def K_dims(self):
        return tuple(b.K for b, _ in self.blocks)

    @property
    def N_dims(self):
        return tuple(c.N for _, c in self.blocks)

    @property
    def K(self):
        return max(self.K_dims)

    @property
    def N(self):
        return max(self.N_dims)

    @property
    def shapes(self):
        return tuple(zip(self.K_dims, self.N_dims))

    def basis(self, i):
        return self.blocks[i][0].entries

    def encoder(self, i):
        return self.blocks[i][1].entries

    def zeros(self):
        return LiftedSignal.zeros(self.shapes)

    def permuted(self, order):
        """Ensemble with blocks reordered by ``order``."""
        return MeasurementEnsemble(self.L, tuple(self.blocks[j] for j in order))


class LiftedSignal:
    """Tuple of complex ``K_i x N_i`` blocks with block-wise Frobenius geometry.

    Instances are treated as immutable; arithmetic returns new objects.
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks: Iterable):
        bl = []
        for z in blocks:
            z = np.array(z, dtype=complex)
            if z.ndim != 2:
                raise DimensionError(f"lifted blocks must be matrices, got ndim={z.ndim}")
            z.setflags(write=False)
            bl.append(z)
        if not bl:
            raise DimensionError("a lifted signal needs at least one block")
        self.blocks = tuple(bl)

    @classmethod
    def zeros(cls, shapes):
        return cls(np.zeros(s, dtype=complex) for s in shapes)

    @property
    def r(self):
        return len(self.blocks)

    @property
    def shapes(self):
        return tuple(z.shape for z in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def __iter__(self):
        return iter(self.blocks)

    def _check(self, other):
        if not isinstance(other, LiftedSignal):
            return NotImplemented
        if self.shapes != other.shapes:
            raise DimensionError(f"shape mismatch {self.shapes} vs {other.shapes}")
        return other

    def __add__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return LiftedSignal(a + b for a, b in zip(self.blocks, other.blocks))

    def __sub__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return LiftedSignal(a - b for a, b in zip(self.blocks, other.blocks))

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return LiftedSignal(scalar * a for a in self.blocks)

    __rmul__ = __mul__

    def __neg__(self):
        return LiftedSignal(-a for a in self.blocks)

    def inner(self, other):
        """``<self, other>_F = sum_i Tr(self_i other_i^*)``."""
        self._check(other)
        return complex(sum(np.vdot(b, a) for a, b in zip(self.blocks, other.blocks)))

    def norm(self):
        return float(np.sqrt(sum(np.sum(np.abs(a) ** 2) for a in self.blocks)))

    def nuclear_norm(self):
        return float(sum(np.linalg.svd(a, compute_uv=False).sum() for a in self.blocks))

    def block_norms(self):
        return np.array([np.linalg.norm(a) for a in self.blocks])

    def __repr__(self):
        return f"LiftedSignal(shapes={self.shapes})"


@dataclass(frozen=True)
class FactoredSignal:
    """Channel vectors ``h_i`` and message vectors ``x_i``."""

    channels: tuple
    messages: tuple

    def __post_init__(self):
        h = tuple(_frozen(np.ravel(v)) for v in self.channels)
        x = tuple(_frozen(np.ravel(v)) for v in self.messages)
        if len(h) != len(x) or not h:
            raise DimensionError("need equally many (>= 1) channels and messages")
        object.__setattr__(self, "channels", h)
        object.__setattr__(self, "messages", x)

    @property
    def r(self):
        return len(self.channels)

    @property
    def sigmas(self):
        """``sigma_i = ||x_i||``."""
        return np.array([np.linalg.norm(x) for x in self.messages])

    def normalized(self):
        """Rescale so every nonzero ``h_i`` has unit norm; the lift is unchanged."""
        hs, xs = [], []
        for h, x in zip(self.channels, self.messages):
            nh = np.linalg.norm(h)
            if nh > 0:
                hs.append(h / nh)
                xs.append(x * nh)
            else:
                hs.append(h)
                xs.append(np.zeros_like(x))
        return FactoredSignal(tuple(hs), tuple(xs))


@dataclass(frozen=True)
class Observation:
    y: np.ndarray
    tau: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen(np.ravel(self.y)))
        if not self.tau >= 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")
        object.__setattr__(self, "tau", float(self.tau))


def build_partial_dft_basis(L, K):
    """First ``K`` columns of the unitary ``L``-point DFT.

    Entry ``(l, k)`` is ``exp(2 pi i l k / L) / sqrt(L)`` (zero-based).
    """
    L, K = int(L), int(K)
    if not 1 <= K <= L:
        raise DimensionError(f"need 1 <= K <= L, got K={K}, L={L}")
    l = np.arange(L)[:, None]
    k = np.arange(K)[None, :]
    # reduce l*k mod L before scaling so large L keeps full phase accuracy
    return SubspaceBasis(np.exp(2j * np.pi * ((l * k) % L) / L) / np.sqrt(L), BasisKind.PARTIAL_DFT)


def build_orthonormal_basis(L, K, rng):
    """QR-orthonormalized i.i.d. Gaussian ``L x K`` matrix."""
    L, K = int(L), int(K)
    if not 1 <= K <= L:
        raise DimensionError(f"need 1 <= K <= L, got K={K}, L={L}")
    q, _ = np.linalg.qr(sample_cn(rng, (L, K)))
    return SubspaceBasis(q, BasisKind.GENERAL_ORTHONORMAL)


def sample_encoder(L, N, rng):
    """``L x N`` matrix of i.i.d. CN(0, 1) entries drawn from ``rng``."""
    L, N = int(L), int(N)
    if L < 1 or N < 1:
        raise DimensionError(f"need L, N >= 1, got L={L}, N={N}")
    return Encoder(sample_cn(rng, (L, N)))


def build_ensemble(L, K_dims, N_dims, rng, basis="dft"):
    """Ensemble with one basis/encoder pair per entry of ``K_dims``/``N_dims``.

    ``basis`` is ``"dft"`` for partial DFT bases or ``"random"`` for
    QR-orthonormalized Gaussian bases.
    """
    if len(K_dims) != len(N_dims):
        raise DimensionError("K_dims and N_dims must have equal length")
    blocks = []
    for K, N in zip(K_dims, N_dims):
        if basis == "dft":
            b = build_partial_dft_basis(L, K)
        elif basis == "random":
            b = build_orthonormal_basis(L, K, rng)
        else:
            raise ValueError(f"unknown basis kind {basis!r}")
        blocks.append((b, sample_encoder(L, N, rng)))
    return MeasurementEnsemble(int(L), tuple(blocks))


def sample_factored(K_dims, N_dims, rng, normalize=False):
    """Ground truth with i.i.d. CN(0, 1) channels and messages."""
    hs = tuple(sample_cn(rng, K) for K in K_dims)
    xs = tuple(sample_cn(rng, N) for N in N_dims)
    f = FactoredSignal(hs, xs)
    return f.normalized() if normalize else f


def _blocks_of(ens, X):
    blocks = X.blocks if isinstance(X, LiftedSignal) else tuple(X)
    if len(blocks) != ens.r:
        raise DimensionError(f"expected {ens.r} blocks, got {len(blocks)}")
    for i, (z, shp) in enumerate(zip(blocks, ens.shapes)):
        if np.shape(z) != shp:
            raise DimensionError(f"block {i} has shape {np.shape(z)}, expected {shp}")
    return blocks


def forward_block(ens, i, Xi):
    """``A_i(X_i)_l = b_{i,l}^* X_i c_{i,l}``."""
    B, C = ens.basis(i), ens.encoder(i)
    if np.shape(Xi) != (B.shape[1], C.shape[1]):
        raise DimensionError(f"block {i} expects {(B.shape[1], C.shape[1])}, got {np.shape(Xi)}")
    return np.einsum("ln,ln->l", B @ Xi, C)


def forward(ens, X):
    """Apply the lifted measurement operator; returns a length-``L`` vector."""
    blocks = _blocks_of(ens, X)
    y = np.zeros(ens.L, dtype=complex)
    for i, z in enumerate(blocks):
        y += forward_block(ens, i, z)
    return y


def adjoint_block(ens, i, y):
    """``A_i^*(y) = sum_l y[l] b_{i,l} c_{i,l}^*``."""
    B, C = ens.basis(i), ens.encoder(i)
    return B.conj().T @ (y[:, None] * C.conj())


def adjoint(ens, y):
    """Adjoint of :func:`forward` with respect to the block Frobenius product."""
    y = np.asarray(y)
    if y.shape != (ens.L,):
        raise DimensionError(f"expected a vector of length {ens.L}, got shape {y.shape}")
    return LiftedSignal(adjoint_block(ens, i, y) for i in range(ens.r))


def _index_mask(L, indices):
    idx = np.asarray(list(indices), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= L):
        raise DimensionError(f"indices out of range [0, {L})")
    mask = np.zeros(L, dtype=bool)
    mask[idx] = True
    return mask


def restricted_forward(ens, indices, X):
    """``forward(X)`` with entries outside ``indices`` set to zero."""
    mask = _index_mask(ens.L, indices)
    y = forward(ens, X)
    y[~mask] = 0
    return y


def circular_convolve(w, s):
    """Circular convolution via ``sqrt(L) F^* diag(F w) F s`` with unitary ``F``.

    Output ``k`` equals ``sum_j w[j] s[(k - j) mod L]``, so an impulse at
    index 0 is the identity.
    """
    w = np.asarray(w, dtype=complex)
    s = np.asarray(s, dtype=complex)
    if w.ndim != 1 or w.shape != s.shape:
        raise DimensionError(f"need two vectors of equal length, got {w.shape} and {s.shape}")
    L = w.shape[0]
    Fw = np.fft.fft(w, norm="ortho")
    Fs = np.fft.fft(s, norm="ortho")
    return np.sqrt(L) * np.fft.ifft(Fw * Fs, norm="ortho")


def circular_convolve_direct(w, s):
    """O(L^2) reference evaluation of :func:`circular_convolve`."""
    w = np.asarray(w, dtype=complex)
    s = np.asarray(s, dtype=complex)
    if w.ndim != 1 or w.shape != s.shape:
        raise DimensionError(f"need two vectors of equal length, got {w.shape} and {s.shape}")
    L = w.shape[0]
    out = np.zeros(L, dtype=complex)
    for k in range(L):
        for j in range(L):
            out[k] += w[j] * s[(k - j) % L]
    return out


def lift(f: FactoredSignal) -> LiftedSignal:
    """Blocks ``h_i x_i^*``."""
    return LiftedSignal(np.outer(h, x.conj()) for h, x in zip(f.channels, f.messages))


def synthesize_observation(ens, truth, tau, rng):
    """``y = A(lift(truth)) + e`` with ``e`` uniform on the sphere of radius ``tau``."""
    tau = float(tau)
    if not tau >= 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    y = forward(ens, lift(truth))
    if tau > 0:
        e = sample_cn(rng, ens.L)
        y = y + tau * e / np.linalg.norm(e)
    return Observation(y, tau)
