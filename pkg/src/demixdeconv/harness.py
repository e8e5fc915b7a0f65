"""Monte-Carlo experiments: recovery trials, phase-transition sweeps, noise scaling.

Experiment instances follow the numerical protocol of the model: partial
DFT bases, and i.i.d. CN(0, 1) encoders, channels and messages with no
normalization.  The oversampling ratio is ``rho = L / sum_i (K_i + N_i)``
and ``L = round(rho * r * (K + N))``.

Every trial draws from its own stream, seeded by hashing
``(master_seed, tag, rho, trial_index)`` through
:class:`numpy.random.SeedSequence`; results therefore do not depend on
execution order or on which other grid points are in the sweep.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .convex import ConvexConfig, solve_nuclear
from .errors import DemixError, DimensionError, TrialError, UndefinedRatioError
from .operators import (
    LiftedSignal,
    Observation,
    build_ensemble,
    forward,
    lift,
    sample_cn,
    sample_factored,
    synthesize_observation,
)
from .wirtinger import WirtingerConfig, solve_wirtinger

__all__ = [
    "Solver",
    "ExperimentConfig",
    "PhaseRow",
    "PhaseTransitionTable",
    "NoiseRow",
    "NoiseTable",
    "SolveOutcome",
    "TrialResult",
    "trial_rng",
    "parse_grid",
    "relative_errors",
    "success",
    "run_trial",
    "phase_transition_sweep",
    "noise_scaling_study",
    "loglog_slope",
    "SUCCESS_THRESHOLD",
]

SUCCESS_THRESHOLD = 0.01


class Solver(str, enum.Enum):
    CONVEX = "Convex"
    WIRTINGER = "Wirtinger"
    BOTH = "Both"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for s in cls:
            if str(value).lower() == s.value.lower():
                return s
        raise ValueError(f"unknown solver {value!r}")

    def expand(self):
        if self is Solver.BOTH:
            return (Solver.CONVEX, Solver.WIRTINGER)
        return (self,)


@dataclass(frozen=True)
class ExperimentConfig:
    """Geometry and protocol of an experiment.

    All blocks share ``K`` and ``N``.  ``workers > 1`` runs trials in a
    process pool; results are identical to a serial run.
    """

    r: int
    K: int
    N: int
    rho_grid: tuple = (1.0,)
    trials_per_point: int = 10
    solver: Solver = Solver.BOTH
    tau: float = 0.0
    master_seed: int = 0
    omega: float = 1.0
    convex: ConvexConfig = field(default_factory=ConvexConfig)
    wirtinger: WirtingerConfig = field(default_factory=WirtingerConfig)
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "solver", Solver.parse(self.solver))
        object.__setattr__(self, "rho_grid", tuple(float(v) for v in self.rho_grid))
        if min(self.r, self.K, self.N) < 1:
            raise DimensionError("r, K and N must be positive")
        if self.trials_per_point < 0:
            raise ValueError("trials_per_point must be >= 0")
        if not self.tau >= 0:
            raise ValueError("tau must be nonnegative")
        if self.omega < 1:
            raise ValueError("omega must be >= 1")
        for rho in self.rho_grid:
            if not rho > 0:
                raise ValueError(f"rho values must be positive, got {rho}")
            self.L_for(rho)

    def L_for(self, rho):
        L = int(round(rho * self.r * (self.K + self.N)))
        if L < max(self.K, self.N):
            raise DimensionError(f"rho={rho} gives L={L} < max(K, N)")
        return L


def parse_grid(spec):
    """``"a:b:step"`` (inclusive, like ``numpy.arange`` with a tolerant end) or ``"v1,v2,..."``."""
    spec = str(spec).strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid {spec!r} must be start:stop:step")
        a, b, h = (float(p) for p in parts)
        if not h > 0 or b < a:
            raise ValueError(f"grid {spec!r} needs step > 0 and stop >= start")
        n = int(math.floor((b - a) / h + 1e-9)) + 1
        return tuple(round(a + k * h, 12) for k in range(n))
    vals = tuple(float(v) for v in spec.split(",") if v.strip())
    if not vals:
        raise ValueError("empty grid")
    return vals


def trial_rng(master_seed, tag, rho, trial_index):
    """Independent generator for one trial.

    ``rho`` enters through ``round(rho * 1e6)`` so equal grid values map to
    equal streams.
    """
    key = [
        int(master_seed) & 0xFFFFFFFFFFFFFFFF,
        zlib.crc32(str(tag).encode()),
        int(round(float(rho) * 1e6)),
        int(trial_index),
    ]
    return np.random.default_rng(np.random.SeedSequence(key))


def relative_errors(estimate, truth):
    """``||X_i - X0_i||_F / ||X0_i||_F`` per block."""
    est = estimate.blocks if isinstance(estimate, LiftedSignal) else tuple(estimate)
    ref = truth.blocks if isinstance(truth, LiftedSignal) else tuple(truth)
    if len(est) != len(ref):
        raise DimensionError("estimate and truth have different block counts")
    out = []
    for i, (a, b) in enumerate(zip(est, ref)):
        if np.shape(a) != np.shape(b):
            raise DimensionError(f"block {i}: shapes {np.shape(a)} and {np.shape(b)} differ")
        nb = np.linalg.norm(b)
        if nb == 0:
            raise UndefinedRatioError(f"truth block {i} is zero")
        out.append(float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / nb))
    return np.array(out)


def success(estimate, truth, threshold=SUCCESS_THRESHOLD):
    """Per-block flags ``relative error <= threshold`` on the lifted matrices."""
    return relative_errors(estimate, truth) <= threshold


@dataclass
class SolveOutcome:
    flags: list
    rel_errors: list
    iterations: int
    status: str
    seconds: float = 0.0

    def telemetry(self):
        return {
            "flags": [bool(f) for f in self.flags],
            "rel_errors": [float(e) for e in self.rel_errors],
            "iterations": int(self.iterations),
            "status": self.status,
        }


@dataclass
class TrialResult:
    rho: float
    trial_index: int
    L: int
    outcomes: dict

    def telemetry(self):
        """Deterministic part of the result; wall-clock time is left out."""
        return {
            "rho": self.rho,
            "trial_index": self.trial_index,
            "L": self.L,
            "outcomes": {k: v.telemetry() for k, v in self.outcomes.items()},
        }


def _instance(cfg, rho, trial_index, tag="sweep"):
    L = cfg.L_for(rho)
    rng = trial_rng(cfg.master_seed, tag, rho, trial_index)
    dims = [cfg.K] * cfg.r
    ndims = [cfg.N] * cfg.r
    ens = build_ensemble(L, dims, ndims, rng, basis="dft")
    truth = sample_factored(dims, ndims, rng)
    return ens, truth, rng


def _solve(solver, ens, obs, cfg):
    if solver is Solver.CONVEX:
        return solve_nuclear(ens, obs, cfg.convex)
    return solve_wirtinger(ens, obs, cfg.wirtinger)


def run_trial(cfg, rho, trial_index):
    """One recovery trial at oversampling ``rho`` for every configured solver.

    All solvers see the same instance.

    Raises
    ------
    TrialError
        A solver raised; the original exception is chained.
    """
    ens, truth, rng = _instance(cfg, rho, trial_index)
    obs = synthesize_observation(ens, truth, cfg.tau, rng)
    X0 = lift(truth)
    outcomes = {}
    for s in cfg.solver.expand():
        t0 = time.perf_counter()
        try:
            res = _solve(s, ens, obs, cfg)
        except (DemixError, ArithmeticError, np.linalg.LinAlgError) as e:
            raise TrialError(str(e), rho, trial_index, s.value) from e
        errs = relative_errors(res.estimate, X0)
        outcomes[s.value] = SolveOutcome(
            flags=list(errs <= SUCCESS_THRESHOLD),
            rel_errors=list(errs),
            iterations=res.iterations,
            status=str(getattr(res.status, "value", res.status)),
            seconds=time.perf_counter() - t0,
        )
    return TrialResult(float(rho), int(trial_index), ens.L, outcomes)


def _run_trial_args(args):
    return run_trial(*args)


@dataclass
class PhaseRow:
    """One (solver, rho) cell; ``trials`` counts block-level recovery attempts."""

    solver: str
    r: int
    K: int
    N: int
    L: int
    rho: float
    trials: int
    successes: int
    success_rate: float | None
    mean_iterations: float | None
    mean_seconds: float | None


_FIELDS = [f for f in PhaseRow.__dataclass_fields__]


def _csv(rows, fields):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        d = asdict(row)
        w.writerow(["" if d[k] is None else d[k] for k in fields])
    return buf.getvalue()


@dataclass
class PhaseTransitionTable:
    rows: list

    def to_csv(self):
        return _csv(self.rows, _FIELDS)

    def to_dict(self):
        return {"rows": [asdict(r) for r in self.rows]}

    def to_json(self):
        return json.dumps(self.to_dict())

    def for_solver(self, solver):
        name = Solver.parse(solver).value
        return [r for r in self.rows if r.solver == name]

    def crossing(self, solver, level=0.5):
        """First ``rho`` where the success rate reaches ``level``, by linear interpolation.

        Returns ``None`` when the rate never reaches ``level``.
        """
        rows = [r for r in self.for_solver(solver) if r.success_rate is not None]
        rows.sort(key=lambda r: r.rho)
        if not rows:
            return None
        if rows[0].success_rate >= level:
            return rows[0].rho
        for a, b in zip(rows, rows[1:]):
            if a.success_rate < level <= b.success_rate:
                t = (level - a.success_rate) / (b.success_rate - a.success_rate)
                return a.rho + t * (b.rho - a.rho)
        return None


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def phase_transition_sweep(cfg, progress=None):
    """Success rates over ``cfg.rho_grid``.

    Each row aggregates every block of every trial, so ``trials`` is
    ``r * trials_per_point``.  Rows are ordered by solver, then ``rho``.
    ``progress`` is called with each finished :class:`TrialResult` when
    trials run serially.
    """
    if not cfg.rho_grid:
        raise ValueError("rho_grid is empty")
    jobs = [(cfg, rho, t) for rho in cfg.rho_grid for t in range(cfg.trials_per_point)]
    if cfg.workers > 1:
        results = _map(_run_trial_args, jobs, cfg.workers)
    else:
        results = []
        for j in jobs:
            results.append(run_trial(*j))
            if progress is not None:
                progress(results[-1])
    rows = []
    for s in cfg.solver.expand():
        for rho in cfg.rho_grid:
            res = [tr for tr in results if tr.rho == rho]
            outs = [tr.outcomes[s.value] for tr in res]
            n = cfg.r * len(outs)
            k = int(sum(sum(bool(f) for f in o.flags) for o in outs))
            rows.append(
                PhaseRow(
                    solver=s.value,
                    r=cfg.r,
                    K=cfg.K,
                    N=cfg.N,
                    L=cfg.L_for(rho),
                    rho=rho,
                    trials=n,
                    successes=k,
                    success_rate=(k / n) if n else None,
                    mean_iterations=float(np.mean([o.iterations for o in outs])) if outs else None,
                    mean_seconds=float(np.mean([o.seconds for o in outs])) if outs else None,
                )
            )
    return PhaseTransitionTable(rows)


@dataclass
class NoiseRow:
    tau: float
    mean_error: float
    theorem_bound_value: float | None


@dataclass
class NoiseTable:
    rows: list
    bound_constant: float | None = None

    def to_csv(self):
        return _csv(self.rows, ["tau", "mean_error", "theorem_bound_value"])

    def to_dict(self):
        return {"rows": [asdict(r) for r in self.rows], "bound_constant": self.bound_constant}

    def to_json(self):
        return json.dumps(self.to_dict())

    def slope(self):
        rows = [r for r in self.rows if r.tau > 0]
        return loglog_slope([r.tau for r in rows], [r.mean_error for r in rows])


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if lx.size < 2:
        raise ValueError("need at least two points")
    return float(np.polyfit(lx, ly, 1)[0])


def _bound_shape(r, K, N, L):
    """``sqrt(r max{1, r K N / L} log2 L)``, the tau-free part of the error envelope."""
    return math.sqrt(r * max(1.0, r * K * N / L) * math.log2(L))


def noise_scaling_study(cfg, tau_grid, trials=None):
    """Mean lifted error ``||X_hat - X0||_F`` of the convex solver per noise level.

    Uses ``rho = cfg.rho_grid[0]``.  Each trial fixes its ensemble, truth
    and unit noise direction across all ``tau``, so only the noise level
    varies along a row of the study.  The envelope is
    ``C tau sqrt(r max{1, r K N / L} log2 L)`` with ``C`` fitted at the
    smallest positive ``tau``.
    """
    taus = [float(t) for t in tau_grid]
    if any(t < 0 for t in taus):
        raise ValueError("tau values must be nonnegative")
    trials = cfg.trials_per_point if trials is None else int(trials)
    rho = cfg.rho_grid[0]
    L = cfg.L_for(rho)
    shape = _bound_shape(cfg.r, cfg.K, cfg.N, L)
    errs = {t: [] for t in taus}
    for k in range(trials):
        ens, truth, rng = _instance(cfg, rho, k, tag="noise")
        X0 = lift(truth)
        y0 = forward(ens, X0)
        e = sample_cn(rng, ens.L)
        e /= np.linalg.norm(e)
        for t in taus:
            obs = Observation(y0 + t * e, t)
            try:
                res = solve_nuclear(ens, obs, cfg.convex)
            except (DemixError, ArithmeticError, np.linalg.LinAlgError) as exc:
                raise TrialError(str(exc), rho, k, Solver.CONVEX.value) from exc
            errs[t].append((res.estimate - X0).norm())
    means = {t: float(np.mean(v)) if v else float("nan") for t, v in errs.items()}
    positive = [t for t in taus if t > 0]
    C = None
    if positive:
        t0 = min(positive)
        C = means[t0] / (t0 * shape)
    rows = [
        NoiseRow(t, means[t], None if C is None else C * t * shape) for t in taus
    ]
    return NoiseTable(rows, C)
