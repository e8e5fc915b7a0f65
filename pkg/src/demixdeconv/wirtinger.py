"""Nonconvex recovery: spectral initialization plus Wirtinger gradient descent.

The residual

.. math::

    F(h, x) = \\|\\mathcal{A}(h_1 x_1^*, \\ldots, h_r x_r^*) - y\\|_2^2

is minimized over the factors directly.  Gradients follow the
convention ``grad_z f = (df/dz)^*``; for real ``f`` the gradient with
respect to the stacked real and imaginary parts is twice this vector.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .convex import SolverResult, SolverStatus, operator_norm_estimate
from .errors import NumericError
from .operators import FactoredSignal, lift

__all__ = [
    "StepPolicy",
    "WirtingerConfig",
    "WirtingerState",
    "objective",
    "gradients",
    "spectral_init",
    "line_search",
    "solve_wirtinger",
]


class StepPolicy(str, enum.Enum):
    FIXED_INVERSE_LIPSCHITZ = "FixedInverseLipschitzEstimate"
    DOUBLE_PREVIOUS = "DoublePrevious"


@dataclass(frozen=True)
class WirtingerConfig:
    grad_tol: float = 1e-4
    max_iters: int = 1000
    armijo_c: float = 1e-4
    shrink: float = 0.5
    eta_init_policy: StepPolicy = StepPolicy.DOUBLE_PREVIOUS
    max_backtracks: int = 50

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0 < self.armijo_c <= 0.5:
            raise ValueError("armijo_c must lie in (0, 0.5]")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be >= 0")
        object.__setattr__(self, "eta_init_policy", StepPolicy(self.eta_init_policy))


@dataclass
class WirtingerState:
    v: list
    u: list
    objective: float
    grad_norm: float
    residual: np.ndarray = field(repr=False, default=None)
    grad_h: list = field(repr=False, default=None)
    grad_x: list = field(repr=False, default=None)


def _cx(ens, x):
    return [ens.encoder(i) @ np.conj(xi) for i, xi in enumerate(x)]


def _bh(ens, h):
    return [ens.basis(i) @ hi for i, hi in enumerate(h)]


def _residual(ens, y, h, x):
    res = -np.asarray(y, dtype=complex)
    for bh, cx in zip(_bh(ens, h), _cx(ens, x)):
        res = res + bh * cx
    return res


def objective(ens, obs, h, x):
    """``F(h, x) = ||A(h x^*) - y||^2``."""
    res = _residual(ens, obs.y, h, x)
    return float(np.vdot(res, res).real)


def _grads(ens, h, x, res):
    gh, gx = [], []
    rc = np.conj(res)
    for i in range(ens.r):
        B, C = ens.basis(i), ens.encoder(i)
        cx = C @ np.conj(x[i])
        bh = B @ h[i]
        gh.append(B.conj().T @ (np.conj(cx) * res))
        gx.append(C.T @ (bh * rc))
    return gh, gx


def gradients(ens, obs, h, x):
    """Block-wise Wirtinger gradients of :func:`objective`.

    ``grad_h_i = (diag(C_i conj(x_i)) B_i)^* res`` and
    ``grad_x_i = (diag(B_i h_i) C_i)^T conj(res)`` with
    ``res = A(h x^*) - y``.
    """
    res = _residual(ens, obs.y, h, x)
    return _grads(ens, h, x, res)


def _norm_sq(vs):
    return float(sum(np.vdot(v, v).real for v in vs))


def _state(ens, y, h, x):
    res = _residual(ens, y, h, x)
    gh, gx = _grads(ens, h, x, res)
    return WirtingerState(
        v=list(h),
        u=list(x),
        objective=float(np.vdot(res, res).real),
        grad_norm=np.sqrt(_norm_sq(gh) + _norm_sq(gx)),
        residual=res,
        grad_h=gh,
        grad_x=gx,
    )


def spectral_init(ens, obs, return_info=False):
    """Top singular pair of each block of ``A^*(y)``, scaled by ``sqrt(sigma_max)``.

    The pair is rotated so the largest-magnitude entry of the left
    singular vector is real and nonnegative.  With ``return_info`` the
    top singular values and a per-block flag for a degenerate (tied)
    top singular value are returned as well.
    """
    y = np.asarray(obs.y, dtype=complex)
    v0, u0, d, ties = [], [], [], []
    for i in range(ens.r):
        B, C = ens.basis(i), ens.encoder(i)
        Z = B.conj().T @ (y[:, None] * C.conj())
        U, s, Vh = np.linalg.svd(Z)
        left, right = U[:, 0], Vh[0].conj()
        k = int(np.argmax(np.abs(left)))
        if abs(left[k]) > 0:
            ph = left[k] / abs(left[k])
            left, right = left / ph, right / ph
        dk = float(s[0])
        v0.append(np.sqrt(dk) * left)
        u0.append(np.sqrt(dk) * right)
        d.append(dk)
        ties.append(bool(len(s) > 1 and dk > 0 and s[0] - s[1] <= 1e-12 * dk))
    if return_info:
        return v0, u0, {"top_singular_values": d, "degenerate_top": ties}
    return v0, u0


def line_search(ens, obs, state, eta0, cfg=None):
    """Armijo backtracking along the negative gradient.

    Tries ``eta0 * shrink**k`` for ``k = 0 .. max_backtracks`` and accepts
    the first step with ``F(new) <= F(old) - armijo_c * eta * ||grad||^2``.

    Returns
    -------
    eta : float
    new_state : WirtingerState
        State at the trial point for ``eta``.
    stalled : bool
        True if no trial satisfied the decrease condition; ``eta`` is
        then the smallest step tried.
    backtracks : int
    """
    cfg = WirtingerConfig() if cfg is None else cfg
    if state.grad_norm == 0:
        raise ValueError("line search needs a nonzero gradient")
    g2 = state.grad_norm**2
    eta = float(eta0)
    new = None
    for k in range(cfg.max_backtracks + 1):
        h = [a - eta * g for a, g in zip(state.v, state.grad_h)]
        x = [a - eta * g for a, g in zip(state.u, state.grad_x)]
        res = _residual(ens, obs.y, h, x)
        f = float(np.vdot(res, res).real)
        if not np.isfinite(f):
            f = np.inf
        if f <= state.objective - cfg.armijo_c * eta * g2:
            gh, gx = _grads(ens, h, x, res)
            new = WirtingerState(h, x, f, np.sqrt(_norm_sq(gh) + _norm_sq(gx)), res, gh, gx)
            return eta, new, False, k
        if k < cfg.max_backtracks:
            eta *= cfg.shrink
    gh, gx = _grads(ens, h, x, res)
    new = WirtingerState(h, x, f, np.sqrt(_norm_sq(gh) + _norm_sq(gx)), res, gh, gx)
    return eta, new, True, cfg.max_backtracks


def solve_wirtinger(ens, obs, cfg=None, gamma=None, init=None):
    """Spectral initialization followed by gradient descent with backtracking.

    Both factor families move with one shared step per iteration.  The
    loop stops once ``||grad F|| < grad_tol`` (status ``Converged``),
    after ``max_iters`` iterations, or when the line search stalls; in the
    last two cases the status is ``MaxIters`` and ``extras['stalled']``
    tells them apart.
    """
    cfg = WirtingerConfig() if cfg is None else cfg
    y = np.asarray(obs.y, dtype=complex)
    if init is None:
        h, x, info = spectral_init(ens, obs, return_info=True)
    else:
        h, x = [np.array(a, dtype=complex) for a in init[0]], [np.array(a, dtype=complex) for a in init[1]]
        info = {}
    state = _state(ens, y, h, x)
    trace = [state.objective]
    if gamma is None and (
        cfg.eta_init_policy is StepPolicy.FIXED_INVERSE_LIPSCHITZ or cfg.max_iters > 0
    ):
        gamma = operator_norm_estimate(ens, 100, np.random.default_rng(0))
    base_eta = 1.0 / gamma**2 if gamma else 1.0

    status = SolverStatus.CONVERGED if state.grad_norm < cfg.grad_tol else SolverStatus.MAX_ITERS
    stalled = False
    it = 0
    eta = base_eta
    total_backtracks = 0
    while status is not SolverStatus.CONVERGED and it < cfg.max_iters:
        if cfg.eta_init_policy is StepPolicy.DOUBLE_PREVIOUS and it > 0:
            eta0 = 2.0 * eta
        else:
            eta0 = base_eta
        eta, new, stall, nb = line_search(ens, obs, state, eta0, cfg)
        total_backtracks += nb
        if stall and not new.objective <= state.objective:
            stalled = True
            break
        it += 1
        if not np.isfinite(new.objective):
            raise NumericError("objective became non-finite", iteration=it)
        state = new
        trace.append(state.objective)
        if state.grad_norm < cfg.grad_tol:
            status = SolverStatus.CONVERGED
        if stall:
            stalled = True
            break

    fac = FactoredSignal(tuple(state.v), tuple(state.u))
    return SolverResult(
        estimate=lift(fac),
        iterations=it,
        final_objective=state.objective,
        feasibility_gap=max(0.0, float(np.sqrt(state.objective)) - float(obs.tau)),
        status=status,
        factored=fac,
        trace=trace,
        extras={
            "grad_norm": float(state.grad_norm),
            "stalled": stalled,
            "backtracks": int(total_backtracks),
            "trace_length": len(trace),
            **info,
        },
    )
