"""Coherence parameters and admissible partitions of the measurement indices.

For a basis ``B_i`` with rows ``b_{i,l}^*`` the coherence is
``mu_i^2 = (L / K_i) max_l ||b_{i,l}||^2`` and ``K_{i,mu} = K_i mu_i^2``.
A partition ``{Gamma_p}`` of ``[L]`` into ``P`` sets of nominal size
``Q = L / P`` carries the frame matrices

.. math::

    T_{i,p} = \\frac{L}{Q} \\sum_{\\ell \\in \\Gamma_p} b_{i,\\ell} b_{i,\\ell}^*

and their inverses ``S_{i,p}``, which unbias the golfing estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convex import operator_norm_estimate
from .errors import (
    ConstructionError,
    DimensionError,
    NormalizationError,
    PartitionDegeneracyError,
)
from .operators import BasisKind, SubspaceBasis

__all__ = [
    "Partition",
    "AdmissibilityReport",
    "CoherenceReport",
    "mu_max",
    "k_mu",
    "ensemble_k_mu",
    "gamma_tilde",
    "partition_from_sets",
    "decimated_partition",
    "construct_partition",
    "refine_assignment",
    "verify_admissible",
    "select_P",
    "construct_admissible",
    "mu_h_terms",
    "mu_h_sq",
    "b_norm",
    "coherence_report",
]

ADMISSIBLE_NU = 1.0 / 32
# T matrices with a condition number above this are treated as singular
_SINGULAR_COND = 1e12


def _rows(ens, i):
    """Vectors ``b_{i,l}`` stacked as rows, i.e. ``conj(B_i)``."""
    return np.conj(ens.basis(i))


def _entries(basis):
    return basis.entries if isinstance(basis, SubspaceBasis) else np.asarray(basis)


def mu_max(basis, L=None):
    """Coherence ``mu^2 = (L / K) max_l ||b_l||^2`` of one basis."""
    B = _entries(basis)
    L = B.shape[0] if L is None else int(L)
    if B.shape[0] != L:
        raise DimensionError(f"basis has {B.shape[0]} rows, expected L={L}")
    K = B.shape[1]
    return float(L / K * np.max(np.sum(np.abs(B) ** 2, axis=1)))


def k_mu(basis, L=None):
    """``K_mu = K mu^2 = L max_l ||b_l||^2``."""
    return _entries(basis).shape[1] * mu_max(basis, L)


def ensemble_k_mu(ens):
    """``K_mu = max_i K_{i,mu}`` over the blocks of ``ens``."""
    return max(k_mu(ens.basis(i)) for i in range(ens.r))


def gamma_tilde(ens, omega=1.0):
    """``2 sqrt(omega max{1, r K_mu N / L} log2(L + r K N))``."""
    if omega < 1:
        raise ValueError("omega must be >= 1")
    r, L, K, N = ens.r, ens.L, ens.K, ens.N
    ratio = max(1.0, r * ensemble_k_mu(ens) * N / L)
    return 2.0 * math.sqrt(omega * ratio * math.log2(L + r * K * N))


def _op_norm_hermitian(M):
    if M.shape[0] <= 64:
        return float(np.max(np.abs(np.linalg.eigvalsh(M))))
    v = np.ones(M.shape[0], dtype=complex) / math.sqrt(M.shape[0])
    est = 0.0
    for _ in range(500):
        w = M @ v
        n = float(np.linalg.norm(w))
        if n == 0:
            return 0.0
        v = w / n
        if abs(n - est) <= 1e-12 * n:
            break
        est = n
    return n


@dataclass(frozen=True)
class Partition:
    """Index sets with their frame matrices.

    ``t_matrices[i][p]`` is ``T_{i,p}``; ``s_matrices[i][p]`` its inverse,
    or ``None`` when ``T_{i,p}`` is numerically singular.
    """

    sets: tuple
    P: int
    Q: float
    t_matrices: tuple = field(repr=False)
    s_matrices: tuple = field(repr=False)
    nu_achieved: float

    @property
    def sizes(self):
        return np.array([len(s) for s in self.sets])

    def labels(self, L):
        lab = np.empty(L, dtype=int)
        for p, s in enumerate(self.sets):
            lab[s] = p
        return lab

    def s_matrix(self, i, p):
        S = self.s_matrices[i][p]
        if S is None:
            raise PartitionDegeneracyError(f"T_{{{i},{p}}} is singular")
        return S

    def to_dict(self):
        return {
            "sets": [s.tolist() for s in self.sets],
            "P": self.P,
            "Q": self.Q,
            "nu_achieved": self.nu_achieved,
        }


def partition_from_sets(ens, sets):
    """Build a :class:`Partition` from disjoint index sets covering ``[L]``."""
    L = ens.L
    sets = tuple(np.sort(np.asarray(s, dtype=int)) for s in sets)
    P = len(sets)
    if P < 1:
        raise DimensionError("need at least one set")
    cover = np.concatenate(sets) if P else np.array([], int)
    if cover.size != L or not np.array_equal(np.sort(cover), np.arange(L)):
        raise DimensionError("sets must be disjoint and cover range(L)")
    for s in sets:
        s.setflags(write=False)
    Q = L / P
    T, S = [], []
    nu = 0.0
    for i in range(ens.r):
        rows = _rows(ens, i)
        K = rows.shape[1]
        Ti, Si = [], []
        for s in sets:
            V = rows[s]
            t = (L / Q) * (V.T @ V.conj())
            t = 0.5 * (t + t.conj().T)
            t.setflags(write=False)
            nu = max(nu, _op_norm_hermitian(np.eye(K) - t))
            if len(s) == 0 or np.linalg.cond(t) > _SINGULAR_COND:
                Si.append(None)
            else:
                st = np.linalg.inv(t)
                st.setflags(write=False)
                Si.append(st)
            Ti.append(t)
        T.append(tuple(Ti))
        S.append(tuple(Si))
    return Partition(sets, P, Q, tuple(T), tuple(S), float(nu))


def decimated_partition(ens, P):
    """Arithmetic-progression sets ``{p, p + P, p + 2P, ...}``."""
    P = int(P)
    if not 1 <= P <= ens.L:
        raise DimensionError(f"need 1 <= P <= L, got P={P}")
    return partition_from_sets(ens, [np.arange(p, ens.L, P) for p in range(P)])


def _dft_shortcut_applies(ens, P):
    if ens.L % P:
        return False
    if any(b.kind is not BasisKind.PARTIAL_DFT for b, _ in ens.blocks):
        return False
    return ens.K <= ens.L // P


def refine_assignment(ens, labels, P, nu, max_moves=None):
    """Greedy single-index moves that decrease ``sum ||T_{i,p} - Id||_F^2``.

    Each move reassigns the index with the largest decrease while keeping
    every set size within ``[Q/2, 3Q/2]``.  Stops once
    ``max ||Id - T_{i,p}|| <= nu`` or no move decreases the sum.

    Returns the new labels.
    """
    L = ens.L
    lab = np.array(labels, dtype=int)
    Q = L / P
    w = L / Q
    rows = [_rows(ens, i) for i in range(ens.r)]
    max_moves = 4 * L if max_moves is None else int(max_moves)
    D = []
    for V in rows:
        K = V.shape[1]
        D.append([w * (V[lab == p].T @ V[lab == p].conj()) - np.eye(K) for p in range(P)])
    quart = sum(np.sum(np.abs(V) ** 2, axis=1) ** 2 for V in rows)
    sizes = np.bincount(lab, minlength=P)
    idx = np.arange(L)
    for _ in range(max_moves):
        if max(_op_norm_hermitian(d) for Di in D for d in Di) <= nu:
            break
        # g[l, p] = sum_i b_{i,l}^* D_{i,p} b_{i,l}
        g = np.zeros((L, P))
        for V, Di in zip(rows, D):
            for p in range(P):
                g[:, p] += np.einsum("lk,kj,lj->l", V.conj(), Di[p], V).real
        delta = 2 * w * (g - g[idx, lab][:, None]) + 2 * w * w * quart[:, None]
        delta[idx, lab] = np.inf
        delta[sizes[lab] - 1 < Q / 2, :] = np.inf
        delta[:, sizes + 1 > 1.5 * Q] = np.inf
        l, q = divmod(int(np.argmin(delta)), P)
        if not delta[l, q] < 0:
            break
        p = lab[l]
        for V, Di in zip(rows, D):
            M = w * np.outer(V[l], V[l].conj())
            Di[p] = Di[p] - M
            Di[q] = Di[q] + M
        lab[l] = q
        sizes[p] -= 1
        sizes[q] += 1
    return lab


def _sizes_ok(sizes, Q):
    return bool(np.all(sizes >= Q / 2) and np.all(sizes <= 1.5 * Q))


def construct_partition(
    ens, P, nu=ADMISSIBLE_NU, dft_shortcut=True, rng=None, max_attempts=50, refine=True
):
    """Find a partition into ``P`` sets with ``nu_achieved <= nu`` and balanced sizes.

    Parameters
    ----------
    ens : MeasurementEnsemble
    P : int
        Number of sets, ``1 <= P <= L``.
    nu : float
        Target for ``max_{i,p} ||Id - T_{i,p}||``, in ``(0, 1)``.
    dft_shortcut : bool
        Use the decimated partition (``nu_achieved = 0``) when every basis
        is a partial DFT, ``P`` divides ``L`` and ``K_i <= L / P``.
    rng : numpy.random.Generator, optional
    max_attempts : int
        Number of i.i.d. uniform label draws.
    refine : bool
        Improve each draw with :func:`refine_assignment` before testing.
        Without it, each attempt is a plain uniform draw.

    Raises
    ------
    ConstructionError
        No attempt met both conditions; carries the best ``nu`` seen.
    """
    P = int(P)
    if not 1 <= P <= ens.L:
        raise DimensionError(f"need 1 <= P <= L, got P={P}, L={ens.L}")
    if not 0 < nu < 1:
        raise ValueError("nu must lie in (0, 1)")
    if P == 1:
        return partition_from_sets(ens, [np.arange(ens.L)])
    if dft_shortcut and _dft_shortcut_applies(ens, P):
        return decimated_partition(ens, P)
    rng = np.random.default_rng() if rng is None else rng
    Q = ens.L / P
    best = math.inf
    for _ in range(int(max_attempts)):
        lab = rng.integers(0, P, ens.L)
        if refine:
            lab = refine_assignment(ens, lab, P, nu)
        sizes = np.bincount(lab, minlength=P)
        if not _sizes_ok(sizes, Q):
            continue
        part = partition_from_sets(ens, [np.flatnonzero(lab == p) for p in range(P)])
        best = min(best, part.nu_achieved)
        if part.nu_achieved <= nu:
            return part
    raise ConstructionError(f"no admissible partition in {max_attempts} attempts", best)


@dataclass(frozen=True)
class AdmissibilityReport:
    size_ok: bool
    nu_ok: bool
    p_range_ok: bool
    gamma_tilde: float
    p_lower: float
    p_upper: float
    failed: tuple = ()

    @property
    def admissible(self):
        return self.size_ok and self.nu_ok and self.p_range_ok

    def to_dict(self):
        return {
            "size_ok": self.size_ok,
            "nu_ok": self.nu_ok,
            "p_range_ok": self.p_range_ok,
            "gamma_tilde": self.gamma_tilde,
            "p_lower": self.p_lower,
            "p_upper": self.p_upper,
            "failed": list(self.failed),
        }


def _p_bounds(ens, omega):
    gt = gamma_tilde(ens, omega)
    upper = math.log2(8 * gt * math.sqrt(ens.r))
    return gt, 0.5 * upper, upper


def verify_admissible(partition, ens, omega=1.0):
    """Check set sizes, ``nu_achieved <= 1/32`` and the range of ``P``.

    ``failed`` names each violated condition; for the range of ``P`` it
    says which bound is violated.
    """
    gt, lo, hi = _p_bounds(ens, omega)
    size_ok = _sizes_ok(partition.sizes, partition.Q)
    nu_ok = partition.nu_achieved <= ADMISSIBLE_NU
    failed = []
    if not size_ok:
        failed.append("size")
    if not nu_ok:
        failed.append("nu")
    if partition.P < lo:
        failed.append("P_lower")
    if partition.P > hi:
        failed.append("P_upper")
    return AdmissibilityReport(
        size_ok=size_ok,
        nu_ok=bool(nu_ok),
        p_range_ok=lo <= partition.P <= hi,
        gamma_tilde=gt,
        p_lower=lo,
        p_upper=hi,
        failed=tuple(failed),
    )


def select_P(ens, omega=1.0):
    """Smallest integer ``P`` above the lower admissible bound, clamped to ``[1, L]``."""
    _, lo, _ = _p_bounds(ens, omega)
    return int(min(max(math.ceil(lo), 1), ens.L))


def construct_admissible(ens, omega=1.0, nu=ADMISSIBLE_NU, rng=None, max_attempts=50, refine=True):
    """:func:`construct_partition` at :func:`select_P`, retrying with ``P + 1`` twice."""
    P0 = select_P(ens, omega)
    err = None
    for P in range(P0, min(P0 + 2, ens.L) + 1):
        try:
            return construct_partition(ens, P, nu, True, rng, max_attempts, refine)
        except ConstructionError as e:
            err = e
    raise err


def _check_channels(ens, channels, tol=1e-10):
    if len(channels) != ens.r:
        raise DimensionError(f"expected {ens.r} channel vectors, got {len(channels)}")
    hs = []
    for i, h in enumerate(channels):
        h = np.ravel(np.asarray(h, dtype=complex))
        if h.shape != (ens.K_dims[i],):
            raise DimensionError(f"channel {i} has length {h.size}, expected {ens.K_dims[i]}")
        if abs(np.linalg.norm(h) - 1) > tol:
            raise NormalizationError(f"channel {i} has norm {np.linalg.norm(h):.6g}, expected 1")
        hs.append(h)
    return hs


def mu_h_terms(partition, ens, channels):
    """The two inner maxima of ``mu_h^2``.

    Returns ``(L max_{l,i} |b_{i,l}^* h_i|^2, L max_{p,l,i} |b_{i,l}^* S_{i,p} h_i|^2)``.
    """
    hs = _check_channels(ens, channels)
    L = ens.L
    first = second = 0.0
    for i, h in enumerate(hs):
        B = ens.basis(i)
        first = max(first, L * float(np.max(np.abs(B @ h) ** 2)))
        for p in range(partition.P):
            Sh = partition.s_matrix(i, p) @ h
            second = max(second, L * float(np.max(np.abs(B @ Sh) ** 2)))
    return first, second


def mu_h_sq(partition, ens, channels):
    """``mu_h^2`` for the given partition and unit channel vectors."""
    return max(mu_h_terms(partition, ens, channels))


def b_norm(X, ens):
    """``||Z||_B = sqrt(L max_l sum_i ||Z_i^* b_{i,l}||^2)``."""
    acc = np.zeros(ens.L)
    for i, Z in enumerate(X):
        # row l of B_i @ Z is (Z^* b_{i,l})^*
        acc += np.sum(np.abs(ens.basis(i) @ np.asarray(Z)) ** 2, axis=1)
    return float(math.sqrt(ens.L * acc.max()))


@dataclass(frozen=True)
class CoherenceReport:
    mu_sq_per_block: tuple
    k_mu_per_block: tuple
    k_mu: float
    mu_h_sq: float | None
    gamma_tilde: float
    gamma_estimate: float
    mu_h_terms: tuple | None = None

    def to_dict(self):
        return {
            "mu_sq_per_block": list(self.mu_sq_per_block),
            "k_mu_per_block": list(self.k_mu_per_block),
            "k_mu": self.k_mu,
            "mu_h_sq": self.mu_h_sq,
            "gamma_tilde": self.gamma_tilde,
            "gamma_estimate": self.gamma_estimate,
            "mu_h_terms": None if self.mu_h_terms is None else list(self.mu_h_terms),
        }


def coherence_report(ens, partition=None, channels=None, omega=1.0, power_iters=200, rng=None):
    """Collect the coherence parameters of ``ens``.

    ``mu_h_sq`` is only filled in when both a partition and channel
    vectors are given.
    """
    mus = tuple(mu_max(ens.basis(i)) for i in range(ens.r))
    kmus = tuple(K * m for K, m in zip(ens.K_dims, mus))
    terms = None
    if partition is not None and channels is not None:
        terms = mu_h_terms(partition, ens, channels)
    rng = np.random.default_rng(0) if rng is None else rng
    return CoherenceReport(
        mu_sq_per_block=mus,
        k_mu_per_block=kmus,
        k_mu=max(kmus),
        mu_h_sq=None if terms is None else max(terms),
        gamma_tilde=gamma_tilde(ens, omega),
        gamma_estimate=operator_norm_estimate(ens, power_iters, rng),
        mu_h_terms=terms,
    )
