"""Tangent spaces, the golfing construction of a dual certificate, and isometry spectra.

For a rank-one block ``X_i = sigma_i h_i m_i^*`` with unit ``h_i, m_i``
the tangent space is ``T_i = {h_i u^* + v m_i^* : u, v}`` and

.. math::

    P_{T_i} Z = h_i h_i^* Z + (I - h_i h_i^*) Z m_i m_i^*.

The golfing scheme builds ``Y = A^*(z)`` one partition set at a time,
correcting each step with ``S_{i,p} = T_{i,p}^{-1}`` so that the residual
``W_p = sgn(X) - P_T(Y_p)`` contracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FrameError
from .operators import FactoredSignal, LiftedSignal, adjoint_block

__all__ = [
    "TangentFrame",
    "GolfingTrace",
    "DualConditionReport",
    "IsometrySpectrum",
    "sgn_lifted",
    "build_frame",
    "project_tangent",
    "project_tangent_perp",
    "golfing_run",
    "verify_dual_conditions",
    "local_isometry_spectrum",
]

RANK_TOL = 1e-10
ORTHO_TOL = 1e-10


def _unit_or_e1(v):
    v = np.asarray(v, dtype=complex)
    n = np.linalg.norm(v)
    if n > 0:
        return v / n
    e = np.zeros_like(v)
    e[0] = 1.0
    return e


def sgn_lifted(truth):
    """Blocks ``h_i m_i^*`` with ``h_i = h / ||h||`` and ``m_i = x / ||x||``; zero if either factor vanishes."""
    blocks = []
    for h, x in zip(truth.channels, truth.messages):
        nh, nx = np.linalg.norm(h), np.linalg.norm(x)
        if nh > 0 and nx > 0:
            blocks.append(np.outer(h / nh, np.conj(x / nx)))
        else:
            blocks.append(np.zeros((h.size, x.size), dtype=complex))
    return LiftedSignal(blocks)


def _complement(h):
    """Orthonormal basis of ``h^perp`` as columns."""
    K = h.size
    q, _ = np.linalg.qr(np.column_stack([h, np.eye(K)]))
    return q[:, 1:K]


def _tangent_basis(h, m):
    K, N = h.size, m.size
    elems = [np.outer(h, e) for e in np.eye(N)]
    comp = _complement(h)
    elems += [np.outer(comp[:, j], m.conj()) for j in range(K - 1)]
    return np.array(elems).reshape(K + N - 1, K, N)


def _gram_schmidt(spanning, tol=RANK_TOL):
    """Orthonormalize flattened matrices, dropping those within ``tol`` of the span."""
    shape = spanning[0].shape
    out = []
    for a in spanning:
        v = np.ravel(a).astype(complex)
        n0 = np.linalg.norm(v)
        if n0 == 0:
            continue
        for _ in range(2):
            for u in out:
                v = v - np.vdot(u, v) * u
        n = np.linalg.norm(v)
        if n > tol * n0:
            out.append(v / n)
    return np.array(out).reshape((len(out),) + shape)


def _check_orthonormal(basis, label):
    V = basis.reshape(basis.shape[0], -1)
    dev = np.max(np.abs(V.conj() @ V.T - np.eye(V.shape[0]))) if V.size else 0.0
    if dev > ORTHO_TOL:
        raise FrameError(f"{label} basis deviates from orthonormal by {dev:.3g}")


@dataclass(frozen=True)
class TangentFrame:
    """Unit factors of a rank-one lifted signal and orthonormal bases of ``T_i``.

    ``bases[i]`` has shape ``(K_i + N_i - 1, K_i, N_i)``.  ``tp_bases[p][i]``
    spans ``T_{h} + T_{S_{i,p} h} + T_m`` for block ``i`` when a partition
    was supplied.
    """

    channels: tuple
    messages: tuple
    bases: tuple = field(repr=False)
    tp_bases: tuple | None = field(default=None, repr=False)

    @property
    def r(self):
        return len(self.channels)

    @property
    def dim(self):
        return sum(b.shape[0] for b in self.bases)

    def check(self):
        for i, b in enumerate(self.bases):
            _check_orthonormal(b, f"T_{i}")
        for p, bs in enumerate(self.tp_bases or ()):
            for i, b in enumerate(bs):
                _check_orthonormal(b, f"T^{p} block {i}")


def build_frame(truth, partition=None):
    """Tangent frame at ``lift(truth)``.

    Channels are normalized; a zero message gets ``m_i = e_1`` so that
    ``T_i`` is still well defined.  With a partition the per-set bases of
    ``T^p`` are built by Gram-Schmidt over ``h_i u^*``, ``(S_{i,p} h_i) u^*``
    and ``v m_i^*``.
    """
    if not isinstance(truth, FactoredSignal):
        raise TypeError("truth must be a FactoredSignal")
    hs = tuple(_unit_or_e1(h) for h in truth.channels)
    ms = tuple(_unit_or_e1(x) for x in truth.messages)
    bases = tuple(_tangent_basis(h, m) for h, m in zip(hs, ms))
    tp = None
    if partition is not None:
        tp = []
        for p in range(partition.P):
            per_block = []
            for i, (h, m) in enumerate(zip(hs, ms)):
                K, N = h.size, m.size
                sh = partition.s_matrix(i, p) @ h
                span = [np.outer(h, e) for e in np.eye(N)]
                span += [np.outer(sh, e) for e in np.eye(N)]
                span += [np.outer(e, m.conj()) for e in np.eye(K)]
                per_block.append(_gram_schmidt(span))
            tp.append(tuple(per_block))
        tp = tuple(tp)
    frame = TangentFrame(hs, ms, bases, tp)
    frame.check()
    return frame


def _frame_blocks(frame, X):
    blocks = X.blocks if isinstance(X, LiftedSignal) else tuple(X)
    if len(blocks) != frame.r:
        raise DimensionError(f"expected {frame.r} blocks, got {len(blocks)}")
    for i, (Z, h, m) in enumerate(zip(blocks, frame.channels, frame.messages)):
        if np.shape(Z) != (h.size, m.size):
            raise DimensionError(f"block {i} has shape {np.shape(Z)}, expected {(h.size, m.size)}")
    return blocks


def project_tangent(frame, X):
    """Block-wise ``P_{T_i} Z = h h^* Z + (I - h h^*) Z m m^*``."""
    out = []
    for Z, h, m in zip(_frame_blocks(frame, X), frame.channels, frame.messages):
        hZ = np.outer(h, h.conj() @ Z)
        Zm = np.outer(Z @ m, m.conj())
        out.append(hZ + Zm - np.outer(h, (h.conj() @ Zm)))
    return LiftedSignal(out)


def project_tangent_perp(frame, X):
    """Block-wise ``(I - h h^*) Z (I - m m^*)``."""
    blocks = _frame_blocks(frame, X)
    return LiftedSignal(np.asarray(Z) - T for Z, T in zip(blocks, project_tangent(frame, blocks)))


@dataclass
class GolfingTrace:
    """Record of one golfing run.

    ``w_norms[p]`` is ``||W_p||_F`` for ``p = 0..P``; ``mu_seq[p]`` is
    ``mu_p`` for ``p = 0..P-1``.  ``extras`` holds the largest deviations
    seen in the recursion and ``A^*(z) = Y`` consistency checks.
    """

    w_norms: list
    mu_seq: list
    certificate: LiftedSignal
    dual_vector: np.ndarray
    alpha_achieved: float
    beta_achieved: float
    z_norm: float
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "w_norms": [float(v) for v in self.w_norms],
            "mu_seq": [float(v) for v in self.mu_seq],
            "alpha_achieved": float(self.alpha_achieved),
            "beta_achieved": float(self.beta_achieved),
            "z_norm": float(self.z_norm),
            **{k: v for k, v in self.extras.items()},
        }


def _mu(ens, partition, p, W):
    L = ens.L
    idx = partition.sets[p]
    best = 0.0
    for k, Wk in enumerate(W):
        rows = np.conj(ens.basis(k)[idx])
        # row l: (W_k^* S b_l)^T = b_l^T S^T conj(W_k)
        U = rows @ partition.s_matrix(k, p).T @ np.conj(Wk)
        best = max(best, float(np.max(np.linalg.norm(U, axis=1))) if U.size else 0.0)
    return math.sqrt(L) * best


def golfing_run(ens, truth, partition):
    """Run the golfing recursion over every set of ``partition``.

    ``Y_p = Y_{p-1} + (L/Q) (A^p)^* A^p S^p (W_{p-1})`` with ``W_0 = sgn(X)``
    and ``W_p = sgn(X) - P_T(Y_p)``.  The dual vector is
    ``z = (L/Q) sum_p A^p S^p (W_{p-1})`` so that ``Y_P = A^*(z)``.

    Raises
    ------
    PartitionDegeneracyError
        Some ``T_{i,p}`` is singular.
    """
    if ens.r != truth.r:
        raise DimensionError("truth and ensemble have different block counts")
    fac = truth.normalized()
    frame = build_frame(fac)
    sgn = sgn_lifted(fac)
    L, Q = ens.L, partition.Q
    scale = L / Q
    Bs = [ens.basis(i) for i in range(ens.r)]
    Cs = [ens.encoder(i) for i in range(ens.r)]

    W = sgn
    Y = ens.zeros()
    z = np.zeros(L, dtype=complex)
    w_norms = [W.norm()]
    mu_seq = []
    rec_dev = 0.0
    for p in range(partition.P):
        mu_seq.append(_mu(ens, partition, p, W))
        idx = partition.sets[p]
        u = np.zeros(len(idx), dtype=complex)
        for i, Wi in enumerate(W):
            SW = partition.s_matrix(i, p) @ Wi
            u += np.einsum("ln,ln->l", Bs[i][idx] @ SW, Cs[i][idx])
        z[idx] += scale * u
        step = LiftedSignal(
            scale * (Bs[i][idx].conj().T @ (u[:, None] * Cs[i][idx].conj())) for i in range(ens.r)
        )
        Y = Y + step
        W_new = sgn - project_tangent(frame, Y)
        rec_dev = max(rec_dev, (W_new - (W - project_tangent(frame, step))).norm())
        W = W_new
        w_norms.append(W.norm())

    adj_dev = max(
        float(np.max(np.abs(adjoint_block(ens, i, z) - Y[i]))) for i in range(ens.r)
    )
    perp = project_tangent_perp(frame, Y)
    beta = max(float(np.linalg.norm(B, 2)) for B in perp)
    return GolfingTrace(
        w_norms=[float(v) for v in w_norms],
        mu_seq=mu_seq,
        certificate=Y,
        dual_vector=z,
        alpha_achieved=float(W.norm()),
        beta_achieved=beta,
        z_norm=float(np.linalg.norm(z)),
        extras={"recursion_deviation": float(rec_dev), "adjoint_deviation": adj_dev},
    )


@dataclass(frozen=True)
class DualConditionReport:
    cond1_ok: bool
    cond2_ok: bool
    margin: tuple
    alpha_bound: float
    beta_bound: float

    def to_dict(self):
        return {
            "cond1_ok": self.cond1_ok,
            "cond2_ok": self.cond2_ok,
            "margin": list(self.margin),
            "alpha_bound": self.alpha_bound,
            "beta_bound": self.beta_bound,
        }


def verify_dual_conditions(trace, gamma):
    """Test ``alpha <= 1/(8 gamma)`` and ``beta <= 1/4``; ``margin`` is the slack in each."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    a_bound, b_bound = 1.0 / (8.0 * gamma), 0.25
    return DualConditionReport(
        cond1_ok=bool(trace.alpha_achieved <= a_bound),
        cond2_ok=bool(trace.beta_achieved <= b_bound),
        margin=(a_bound - trace.alpha_achieved, b_bound - trace.beta_achieved),
        alpha_bound=a_bound,
        beta_bound=b_bound,
    )


@dataclass(frozen=True)
class IsometrySpectrum:
    """Extreme eigenvalues of the ``T``-restricted Gram matrix.

    ``per_p`` lists ``(min, max)`` of the weighted per-set spectra when a
    partition was given.
    """

    min_eig: float
    max_eig: float
    per_p: tuple = ()

    def to_dict(self):
        return {
            "min_eig": self.min_eig,
            "max_eig": self.max_eig,
            "per_p": [list(v) for v in self.per_p],
        }


def _measure_basis(ens, bases, rows=None):
    """Columns ``A(E_a)`` for every block basis element, restricted to ``rows``."""
    cols = []
    for i, E in enumerate(bases):
        B, C = ens.basis(i), ens.encoder(i)
        if rows is not None:
            B, C = B[rows], C[rows]
        cols.append(np.einsum("lk,dkn,ln->ld", B, E, C))
    return np.concatenate(cols, axis=1)


def local_isometry_spectrum(ens, frame, partition=None):
    """Eigenvalues of ``G_ab = <A(E_a), A(E_b)>`` over an orthonormal basis of ``T``.

    With a partition, also the spectrum of ``(L/Q) ||A^p(Y)||^2`` relative
    to ``sum_i ||T_{i,p}^{1/2} Y_i||^2`` over ``T^p`` for each set.

    Raises
    ------
    FrameError
        A basis is not orthonormal.
    """
    frame.check()
    if frame.r != ens.r:
        raise DimensionError("frame and ensemble have different block counts")
    M = _measure_basis(ens, frame.bases)
    ev = np.linalg.eigvalsh(M.conj().T @ M)
    per_p = []
    if partition is not None:
        if frame.tp_bases is None:
            raise FrameError("frame has no T^p bases; build it with the partition")
        for p in range(partition.P):
            bases = frame.tp_bases[p]
            Mp = _measure_basis(ens, bases, partition.sets[p])
            G = (ens.L / partition.Q) * (Mp.conj().T @ Mp)
            H = np.zeros_like(G)
            off = 0
            for i, E in enumerate(bases):
                d = E.shape[0]
                TE = np.einsum("kj,djn->dkn", partition.t_matrices[i][p], E)
                H[off : off + d, off : off + d] = E.reshape(d, -1).conj() @ TE.reshape(d, -1).T
                off += d
            w, U = np.linalg.eigh(0.5 * (H + H.conj().T))
            Hm = (U / np.sqrt(w)) @ U.conj().T
            evp = np.linalg.eigvalsh(Hm @ G @ Hm)
            per_p.append((float(evp[0]), float(evp[-1])))
    return IsometrySpectrum(float(ev[0]), float(ev[-1]), tuple(per_p))
