"""Nuclear-norm recovery of a lifted signal by primal-dual splitting.

Solves

.. math::

    \\min_X \\sum_i \\|X_i\\|_* \\quad \\text{s.t.} \\quad \\|\\mathcal{A}(X) - y\\|_2 \\le \\tau

by one of two splitting methods.  Both use block-wise singular value
thresholding as the prox of the objective.

- ``"admm"`` (default): Douglas-Rachford splitting with an exact
  projection onto the residual ball, computed from a dense SVD of the
  lifted operator.  Its speed does not depend on the conditioning of
  ``A``, which matters for noisy, heavily oversampled instances.
- ``"pdhg"``: Chambolle-Pock primal-dual hybrid gradient with the dual
  prox from the Moreau decomposition of the ball indicator.  It needs
  only forward and adjoint applications.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import NumericError
from .operators import LiftedSignal, adjoint_block, forward_block, sample_cn

__all__ = [
    "SolverStatus",
    "ConvexConfig",
    "SolverResult",
    "svt",
    "project_ball",
    "operator_norm_estimate",
    "solve_nuclear",
    "dual_objective",
    "lifted_matrix",
    "ResidualBallProjector",
]


class SolverStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"


@dataclass(frozen=True)
class ConvexConfig:
    """Iteration controls for :func:`solve_nuclear`.

    ``tol_feas`` of ``None`` means ``1e-9 * (1 + ||y||)``.

    ``admm_rho`` is the initial penalty of the splitting method (``None``
    picks one from the scale of the start point); it is rebalanced every
    10 iterations up to ``admm_adapt_iters``.

    The remaining fields control ``"pdhg"``.  ``step_ratio`` is the
    initial primal step divided by the dual step.
    With ``adaptive`` the ratio is rebalanced whenever the primal and dual
    residuals differ by more than ``adapt_delta``; each rebalance scales
    by ``1 - alpha`` and then shrinks ``alpha`` by ``adapt_eta``, so the
    steps settle after finitely many effective changes.  The product of
    the two steps never changes.
    """

    max_iters: int = 5000
    tol_rel: float = 1e-7
    tol_feas: float | None = None
    step_ratio: float = 1.0
    operator_norm_margin: float = 0.05
    power_iters: int = 200
    adaptive: bool = True
    adapt_delta: float = 1.5
    adapt_alpha: float = 0.5
    adapt_eta: float = 0.95
    method: str = "admm"
    admm_rho: float | None = None
    admm_adapt_iters: int = 2000

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol_rel > 0 or (self.tol_feas is not None and not self.tol_feas > 0):
            raise ValueError("tolerances must be positive")
        if not self.step_ratio > 0:
            raise ValueError("step_ratio must be positive")
        if not 0 <= self.operator_norm_margin < 1:
            raise ValueError("operator_norm_margin must lie in [0, 1)")
        if self.method not in ("pdhg", "admm"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.admm_rho is not None and not self.admm_rho > 0:
            raise ValueError("admm_rho must be positive")
        if not (self.adapt_delta > 1 and 0 < self.adapt_alpha < 1 and 0 < self.adapt_eta < 1):
            raise ValueError("need adapt_delta > 1 and adapt_alpha, adapt_eta in (0, 1)")

    def feasibility_tolerance(self, y):
        if self.tol_feas is not None:
            return self.tol_feas
        return 1e-9 * (1.0 + float(np.linalg.norm(y)))


@dataclass
class SolverResult:
    """Output of either recovery algorithm.

    ``factored`` is only set by the Wirtinger solver; ``trace`` holds
    per-iteration objective values when the solver records them.
    """

    estimate: LiftedSignal
    iterations: int
    final_objective: float
    feasibility_gap: float
    status: SolverStatus
    factored: object = None
    trace: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        from .serialization import encode_complex

        out = {
            "estimate": [encode_complex(z) for z in self.estimate],
            "iterations": int(self.iterations),
            "final_objective": float(self.final_objective),
            "feasibility_gap": float(self.feasibility_gap),
            "status": SolverStatus(self.status).value,
        }
        if self.factored is not None:
            out["factored"] = {
                "channels": [encode_complex(h) for h in self.factored.channels],
                "messages": [encode_complex(x) for x in self.factored.messages],
            }
        out.update({k: v for k, v in self.extras.items()})
        return out


def svt(M, threshold):
    """Singular value thresholding, the prox of ``threshold * ||.||_*``."""
    M = np.asarray(M)
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if not np.all(np.isfinite(M)):
        raise NumericError("svt input contains non-finite entries")
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    return (U * s) @ Vh


def _svt_with_values(M, threshold):
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    return (U * s) @ Vh, s


def project_ball(v, center, radius):
    """Euclidean projection of ``v`` onto the ball ``{u : ||u - center|| <= radius}``."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    d = np.asarray(v) - np.asarray(center)
    n = np.linalg.norm(d)
    if n <= radius:
        return np.array(v, dtype=complex, copy=True)
    return np.asarray(center) + (radius / n) * d


def operator_norm_estimate(ens, iters=100, rng=None):
    """Power-iteration estimate of ``||A||_{F->2}``.

    The estimate ``||A v_k||`` with ``v_k`` proportional to ``(A^*A)^k v_0``
    is nondecreasing in ``k`` for a fixed starting vector ``v_0``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    v = [sample_cn(rng, shp) for shp in ens.shapes]
    nv = np.sqrt(sum(np.vdot(a, a).real for a in v))
    v = [a / nv for a in v]
    est = 0.0
    for _ in range(iters):
        Av = sum(forward_block(ens, i, a) for i, a in enumerate(v))
        new = float(np.linalg.norm(Av))
        w = [adjoint_block(ens, i, Av) for i in range(ens.r)]
        nw = np.sqrt(sum(np.vdot(a, a).real for a in w))
        if nw == 0:
            return new
        v = [a / nw for a in w]
        converged = est > 0 and new - est <= 1e-13 * new
        est = max(est, new)
        if converged:
            break
    return est


def dual_objective(ens, y, tau, z):
    """Dual value at ``z`` after scaling it into the dual-feasible set.

    The dual of the recovery program is
    ``max -Re<z, y> - tau ||z||`` subject to ``||A_i^* z||_op <= 1``.
    """
    scale = max(
        1.0, max(np.linalg.norm(adjoint_block(ens, i, z), 2) for i in range(ens.r))
    )
    zs = z / scale
    return float(-np.vdot(y, zs).real - tau * np.linalg.norm(zs))


def _solve_pdhg(ens, obs, cfg, gamma=None, x0=None):
    """Chambolle-Pock iteration for :func:`solve_nuclear`.

    Parameters
    ----------
    ens : MeasurementEnsemble
    obs : Observation
        Measurements ``y`` and noise bound ``tau``.
    cfg : ConvexConfig, optional
    gamma : float, optional
        Operator norm of ``A``; estimated by power iteration when omitted.
    x0 : LiftedSignal, optional
        Warm start; zero by default.
    """
    y = np.asarray(obs.y, dtype=complex)
    tau = float(obs.tau)
    tol_feas = cfg.feasibility_tolerance(y)
    if gamma is None:
        gamma = operator_norm_estimate(ens, cfg.power_iters, np.random.default_rng(0))
    r = ens.r
    Bs = [ens.basis(i) for i in range(r)]
    BHs = [b.conj().T for b in Bs]
    Cs = [ens.encoder(i) for i in range(r)]
    Ccs = [c.conj() for c in Cs]

    def A(blocks):
        out = np.zeros(ens.L, dtype=complex)
        for Bi, Ci, Z in zip(Bs, Cs, blocks):
            out += np.einsum("ln,ln->l", Bi @ Z, Ci)
        return out

    def At(v):
        return [BHi @ (v[:, None] * Cci) for BHi, Cci in zip(BHs, Ccs)]

    def gap_of(Ax):
        return max(0.0, float(np.linalg.norm(Ax - y)) - tau)

    s = np.sqrt(1.0 - cfg.operator_norm_margin) / max(gamma, 1e-300)
    t_primal = s * np.sqrt(cfg.step_ratio)
    t_dual = s / np.sqrt(cfg.step_ratio)

    if x0 is None:
        X = [np.zeros(shp, dtype=complex) for shp in ens.shapes]
    else:
        X = [np.array(b, dtype=complex) for b in x0]
    AX = A(X)
    z = np.zeros(ens.L, dtype=complex)
    AXbar = AX.copy()

    obj = float(sum(np.linalg.svd(b, compute_uv=False).sum() for b in X))
    best = (X, obj, gap_of(AX), z)
    best_key = (max(best[2] - tol_feas, 0.0), obj)
    status = SolverStatus.MAX_ITERS
    it = 0
    Atz = [np.zeros(shp, dtype=complex) for shp in ens.shapes]
    alpha = cfg.adapt_alpha
    for it in range(1, cfg.max_iters + 1):
        u = z + t_dual * AXbar
        z_new = u - t_dual * project_ball(u / t_dual, y, tau)
        Atz_new = At(z_new)
        Xn, obj = [], 0.0
        for Xi, Gi in zip(X, Atz_new):
            Zi, sv = _svt_with_values(Xi - t_primal * Gi, t_primal)
            Xn.append(Zi)
            obj += float(sv.sum())
        AXn = A(Xn)
        if not (np.isfinite(obj) and np.all(np.isfinite(AXn))):
            raise NumericError("primal-dual iteration diverged", iteration=it)
        dX = [a - b for a, b in zip(X, Xn)]
        diff = np.sqrt(sum(np.vdot(d, d).real for d in dX))
        nrm = np.sqrt(sum(np.vdot(a, a).real for a in Xn))
        if cfg.adaptive and alpha > 1e-8:
            # residuals of the two optimality conditions at the new point
            p_res = np.sqrt(
                sum(
                    np.linalg.norm(d / t_primal - (g0 - g1)) ** 2
                    for d, g0, g1 in zip(dX, Atz, Atz_new)
                )
            )
            d_res = np.linalg.norm((z - z_new) / t_dual - (AX - AXn))
            if p_res > cfg.adapt_delta * d_res:
                t_primal, t_dual = t_primal / (1 - alpha), t_dual * (1 - alpha)
                alpha *= cfg.adapt_eta
            elif d_res > cfg.adapt_delta * p_res:
                t_primal, t_dual = t_primal * (1 - alpha), t_dual / (1 - alpha)
                alpha *= cfg.adapt_eta
        AXbar = 2.0 * AXn - AX
        X, AX, z, Atz = Xn, AXn, z_new, Atz_new
        gap = gap_of(AX)
        key = (max(gap - tol_feas, 0.0), obj)
        if key <= best_key:
            best, best_key = (X, obj, gap, z), key
        if diff <= cfg.tol_rel * max(nrm, 1e-300) and gap <= tol_feas:
            best = (X, obj, gap, z)
            status = SolverStatus.CONVERGED
            break
        if nrm == 0 and gap <= tol_feas:
            best = (X, obj, gap, z)
            status = SolverStatus.CONVERGED
            break

    Xb, objb, gapb, zb = best
    pd_gap = objb - dual_objective(ens, y, tau, zb)
    return SolverResult(
        estimate=LiftedSignal(Xb),
        iterations=it,
        final_objective=objb,
        feasibility_gap=gapb,
        status=status,
        extras={
            "method": "pdhg",
            "operator_norm": float(gamma),
            "primal_step": float(t_primal),
            "dual_step": float(t_dual),
            "duality_gap": float(pd_gap),
        },
    )


def lifted_matrix(ens):
    """Dense ``L x sum_i K_i N_i`` matrix of ``A`` acting on row-major block vectors."""
    cols = []
    for i, (K, N) in enumerate(ens.shapes):
        B, C = ens.basis(i), ens.encoder(i)
        cols.append((B[:, :, None] * C[:, None, :]).reshape(ens.L, K * N))
    return np.concatenate(cols, axis=1)


class ResidualBallProjector:
    """Euclidean projection onto ``{x : ||M x - y|| <= tau}``.

    With the thin SVD ``M = U diag(s) V^*`` the projection only moves the
    coordinates ``a = V^* x``, to ``(a + lam s c) / (1 + lam s^2)`` where
    ``c = U^* y`` and ``lam >= 0`` solves a scalar secular equation.  When
    ``tau`` is below the distance from ``y`` to the range of ``M`` the set
    is empty and the projection lands on the least-squares solutions.
    """

    def __init__(self, M, y, tau, rank_tol=1e-10):
        U, s, Vh = np.linalg.svd(M, full_matrices=False)
        keep = s > rank_tol * (s[0] if s.size else 0.0)
        self.U, self.s, self.Vh = U[:, keep], s[keep], Vh[keep]
        self.c = self.U.conj().T @ y
        self.residual_floor = float(
            np.sqrt(max(np.linalg.norm(y) ** 2 - np.linalg.norm(self.c) ** 2, 0.0))
        )
        self.radius = float(np.sqrt(max(tau**2 - self.residual_floor**2, 0.0)))
        self.feasible = tau >= self.residual_floor
        self.last_multiplier = 0.0

    def __call__(self, v):
        s, c, t = self.s, self.c, self.radius
        a = self.Vh @ v
        d = s * a - c
        d2 = np.abs(d) ** 2
        if d2.sum() <= t * t:
            self.last_multiplier = 0.0
            return v
        if t == 0:
            self.last_multiplier = np.inf
            a_new = c / s
        else:
            def phi(lam):
                return float(np.sum(d2 / (1.0 + lam * s * s) ** 2)) - t * t

            hi = 1.0
            while phi(hi) > 0:
                hi *= 10.0
            lam = brentq(phi, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
            self.last_multiplier = lam
            a_new = (a + lam * s * c) / (1.0 + lam * s * s)
        return v + self.Vh.conj().T @ (a_new - a)


def _split(vec, shapes):
    out, off = [], 0
    for K, N in shapes:
        out.append(vec[off : off + K * N].reshape(K, N))
        off += K * N
    return out


def _solve_admm(ens, obs, cfg, gamma=None, x0=None):
    """Douglas-Rachford splitting between the residual ball and the nuclear norm.

    Scaled ADMM on ``min ||Z||_* + 1_C(X)`` subject to ``X = Z``, with
    ``C = {X : ||A(X) - y|| <= tau}`` handled by an exact projection.
    The penalty ``rho`` is rebalanced from the primal and dual residuals
    during the first ``admm_adapt_iters`` iterations.
    """
    y = np.asarray(obs.y, dtype=complex)
    tau = float(obs.tau)
    tol_feas = cfg.feasibility_tolerance(y)
    shapes = ens.shapes
    M = lifted_matrix(ens)
    proj = ResidualBallProjector(M, y, tau)

    def gap_of(x):
        return max(0.0, float(np.linalg.norm(M @ x - y)) - tau)

    def prox(v, thr):
        out, total = [], 0.0
        for blk in _split(v, shapes):
            Zi, sv = _svt_with_values(blk, thr)
            out.append(Zi.ravel())
            total += float(sv.sum())
        return np.concatenate(out), total

    if x0 is None:
        Z = proj(np.zeros(M.shape[1], dtype=complex))
    else:
        Z = np.concatenate([np.asarray(b, dtype=complex).ravel() for b in x0])
    U = np.zeros_like(Z)
    if cfg.admm_rho is not None:
        rho = cfg.admm_rho
    else:
        # threshold 1/rho starts small next to the singular values of the start point
        rho = np.sqrt(len(shapes)) * 100.0 / max(np.linalg.norm(Z), 1e-12)
    obj = float(sum(np.linalg.svd(b, compute_uv=False).sum() for b in _split(Z, shapes)))
    status = SolverStatus.MAX_ITERS
    it = 0
    X = Z
    for it in range(1, cfg.max_iters + 1):
        X = proj(Z - U)
        Z_old = Z
        Z, obj = prox(X + U, 1.0 / rho)
        U = U + X - Z
        if not (np.isfinite(obj) and np.all(np.isfinite(Z))):
            raise NumericError("splitting iteration diverged", iteration=it)
        r_norm = np.linalg.norm(X - Z)
        s_norm = rho * np.linalg.norm(Z - Z_old)
        scale = max(np.linalg.norm(X), np.linalg.norm(Z), 1e-300)
        if (
            r_norm <= cfg.tol_rel * scale
            and s_norm <= cfg.tol_rel * max(rho * np.linalg.norm(U), 1e-300)
            and gap_of(Z) <= tol_feas
        ):
            status = SolverStatus.CONVERGED
            break
        if np.linalg.norm(Z) == 0 and np.linalg.norm(X) == 0:
            status = SolverStatus.CONVERGED
            break
        if it <= cfg.admm_adapt_iters and it % 10 == 0:
            if r_norm > 10.0 * s_norm:
                rho *= 2.0
                U /= 2.0
            elif s_norm > 10.0 * r_norm:
                rho /= 2.0
                U *= 2.0

    # dual vector: A^* z = -rho U at a fixed point
    w = -rho * U
    if 0 < proj.last_multiplier < np.inf:
        z = rho * proj.last_multiplier * (M @ X - y)
    else:
        z = proj.U @ ((proj.Vh @ w) / proj.s)
    est = _split(Z, shapes)
    pd_gap = obj - dual_objective(ens, y, tau, z)
    return SolverResult(
        estimate=LiftedSignal(est),
        iterations=it,
        final_objective=obj,
        feasibility_gap=gap_of(Z),
        status=status,
        extras={
            "method": "admm",
            "penalty": float(rho),
            "duality_gap": float(pd_gap),
            "consensus_residual": float(np.linalg.norm(X - Z)),
            "residual_floor": proj.residual_floor,
        },
    )


def solve_nuclear(ens, obs, cfg=None, gamma=None, x0=None):
    """Minimize the summed nuclear norm subject to the residual ball.

    Parameters
    ----------
    ens : MeasurementEnsemble
    obs : Observation
        Measurements ``y`` and noise bound ``tau``.
    cfg : ConvexConfig, optional
        ``cfg.method`` picks primal-dual hybrid gradient (``"pdhg"``) or
        Douglas-Rachford splitting with an exact residual-ball projection
        (``"admm"``).
    gamma : float, optional
        Operator norm of ``A``; estimated by power iteration when omitted.
        Only the ``"pdhg"`` step sizes use it.
    x0 : LiftedSignal, optional
        Warm start.

    Returns
    -------
    SolverResult
        ``extras`` holds the method, its step parameters and the
        primal-dual gap at the returned iterate.
    """
    cfg = ConvexConfig() if cfg is None else cfg
    if cfg.method == "admm":
        return _solve_admm(ens, obs, cfg, gamma, x0)
    return _solve_pdhg(ens, obs, cfg, gamma, x0)
