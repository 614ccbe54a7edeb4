"""Unsupervised alignment of embedding clouds by stochastic alternation.

Each step samples a batch from both clouds, solves an entropic OT problem on
the batch similarity matrix to get a soft matching, hardens it, and takes a
projected gradient step on the orthogonal map. Point clouds use mean vectors
only; Gaussian clouds add a second phase in which the matching cost also
scores agreement between per-dimension variance vectors, refining the map
learned from the means.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, InvalidInputError, NumericalError
from .geometry import (
    GaussianCloud,
    OrthogonalMap,
    PointCloud,
    orthogonality_error,
    project_orthogonal,
    solve_procrustes,
)
from .transport import coupling_to_matching, sinkhorn

INIT_MODES = ("identity", "convex")

# Regularization used for the linear subproblems of the convex initializer,
# applied after the gradient is rescaled to [0, 1].
_FW_REG = 0.005
_FW_MAX_ITER = 2000


@dataclass(frozen=True)
class AlignConfig:
    """Hyperparameters of a full alignment run.

    The epoch schedule starts at (initial_batch, initial_iters); at every
    epoch boundary the batch size doubles and the iteration count divides by
    4 (floor). nested_iters and nested_lr_factor control the variance-aware
    refinement phase of Gaussian alignment.
    """

    epochs: int = 5
    initial_batch: int = 500
    initial_iters: int = 5000
    learning_rate: float = 0.5
    sinkhorn_reg: float = 0.05
    sinkhorn_max_iter: int = 1000
    sinkhorn_tol: float = 1e-6
    nested_iters: int = 2
    nested_lr_factor: float = 0.1
    train_top_k: int = 20000
    seed: int = 0
    normalize_inputs: bool = True
    init_mode: str = "identity"
    init_sample_size: int = 500
    init_fw_iters: int = 10
    cov_weight: float = 1.0
    nested_per_step: bool = False
    full_gradient: bool = False
    check_every_step: bool = False

    def __post_init__(self):
        for name in ("epochs", "initial_batch", "initial_iters", "nested_iters",
                     "train_top_k", "init_sample_size", "sinkhorn_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("learning_rate", "sinkhorn_reg", "nested_lr_factor",
                     "sinkhorn_tol"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.nested_lr_factor > 1.0:
            raise ConfigError(
                f"nested_lr_factor must be <= 1, got {self.nested_lr_factor}"
            )
        if self.init_fw_iters < 0:
            raise ConfigError(f"init_fw_iters must be >= 0, got {self.init_fw_iters}")
        if self.cov_weight < 0.0:
            raise ConfigError(f"cov_weight must be >= 0, got {self.cov_weight}")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(
                f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}"
            )


@dataclass(frozen=True)
class AlignResult:
    """Outcome of an alignment run.

    objective_trace has one row per gradient step: (step index, mean per-row
    squared residual of the batch under the pre-update map). schedule is the
    realized (batch, iterations) pair per epoch.
    """

    map: OrthogonalMap
    objective_trace: np.ndarray
    epochs_run: int
    final_batch: int
    schedule: tuple
    stage1_map: OrthogonalMap = None
    max_orthogonality_error: float = None

    def __post_init__(self):
        trace = np.asarray(self.objective_trace, dtype=np.float64)
        if trace.ndim != 2 or trace.shape[1] != 2 or trace.shape[0] < 1:
            raise InvalidInputError("objective trace must be a non-empty (k, 2) array")
        if not np.all(np.isfinite(trace)):
            raise InvalidInputError("objective trace contains non-finite values")
        object.__setattr__(self, "objective_trace", trace)


def epoch_schedule(epochs, initial_batch, initial_iters):
    """Realized (batch, iterations) per epoch: batch doubles, iters // 4."""
    return tuple(
        (initial_batch * 2**e, initial_iters // 4**e) for e in range(epochs)
    )


def normalize_embeddings(means, variances=None):
    """Center means to a zero mean vector and scale so the average row norm
    is 1; variances scale by the same squared factor. Returns new arrays."""
    m = np.array(means, dtype=np.float64)
    m -= m.mean(axis=0)
    avg = float(np.mean(np.sqrt(np.sum(m * m, axis=1))))
    scale = 1.0 / avg if avg > 0.0 else 1.0
    m *= scale
    if variances is None:
        return m
    return m, np.asarray(variances, dtype=np.float64) * scale**2


def batch_gradient(x_batch, matched_y, rotation, full=True):
    """Gradient in R of ||X R - Y||²_F for a fixed matched batch.

    full=True includes the curvature term 2 XᵀX R; full=False keeps only
    -2 Xᵀ Y, the variant used by the projected stochastic update.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    y = np.asarray(matched_y, dtype=np.float64)
    r = rotation.matrix if isinstance(rotation, OrthogonalMap) else np.asarray(rotation)
    if full:
        return 2.0 * x.T @ (x @ r - y)
    return -2.0 * x.T @ y


def _scaled_variance_rows(variances):
    """Rescale a variance matrix to unit mean row norm (similarity scoring
    only; objective values always use raw variances)."""
    v = np.asarray(variances, dtype=np.float64)
    avg = float(np.mean(np.sqrt(np.sum(v * v, axis=1))))
    return v / avg if avg > 0.0 else v.copy()


class _StepLoop:
    """Shared state for one alignment run: clouds, map, trace, RNG."""

    def __init__(self, x_pool, y_pool, r0, cfg, vx_pool=None, vy_pool=None):
        self.xp = x_pool
        self.yp = y_pool
        self.vx = vx_pool
        self.vy = vy_pool
        self.r = r0
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.trace = []
        self.step = 0
        self.max_ortho_err = 0.0 if cfg.check_every_step else None

    def run_steps(self, n_steps, batch, lr, with_variances):
        cfg = self.cfg
        for _ in range(n_steps):
            ix = self.rng.choice(self.xp.shape[0], size=batch, replace=False)
            iy = self.rng.choice(self.yp.shape[0], size=batch, replace=False)
            xb = self.xp[ix]
            yb = self.yp[iy]
            xr = xb @ self.r
            sim = xr @ yb.T
            if with_variances:
                sim = sim + cfg.cov_weight * (self.vx[ix] @ self.vy[iy].T)
            res = sinkhorn(
                -sim,
                cfg.sinkhorn_reg,
                max_iter=cfg.sinkhorn_max_iter,
                tol=cfg.sinkhorn_tol,
            )
            match = coupling_to_matching(res.coupling)
            ym = yb[match.target_of]
            diff = xr - ym
            obj = float(np.sum(diff * diff)) / batch
            if not np.isfinite(obj):
                raise NumericalError(
                    f"batch objective diverged at step {self.step}", step=self.step
                )
            if cfg.full_gradient:
                grad = (2.0 * xb.T @ diff) / batch
            else:
                grad = (-2.0 * xb.T @ ym) / batch
            self.r = project_orthogonal(self.r - lr * grad).matrix
            if cfg.check_every_step:
                err = orthogonality_error(self.r)
                if err > self.max_ortho_err:
                    self.max_ortho_err = err
            self.trace.append((self.step, obj))
            self.step += 1
            if with_variances is False and cfg.nested_per_step and self.vx is not None:
                self._nested_burst(batch)

    def _nested_burst(self, batch):
        cfg = self.cfg
        self.run_nested(cfg.nested_iters, batch)

    def run_nested(self, n_steps, batch):
        cfg = self.cfg
        self.run_steps_nested = True
        lr = cfg.learning_rate * cfg.nested_lr_factor
        self.run_steps(n_steps, batch, lr, with_variances=True)


def _prepare_points(x, y, cfg):
    xm = x.data if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)
    ym = y.data if isinstance(y, PointCloud) else np.asarray(y, dtype=np.float64)
    if xm.ndim != 2 or ym.ndim != 2:
        raise InvalidInputError("clouds must be 2-D matrices")
    if xm.shape[1] != ym.shape[1]:
        raise InvalidInputError(
            f"clouds must share dimension, got d={xm.shape[1]} and d={ym.shape[1]}"
        )
    if cfg.normalize_inputs:
        xm = normalize_embeddings(xm)
        ym = normalize_embeddings(ym)
    else:
        xm = np.array(xm, dtype=np.float64)
        ym = np.array(ym, dtype=np.float64)
    return xm, ym


def _check_schedule(schedule, pool_n, pool_m):
    largest = max(b for b, _ in schedule)
    if largest > min(pool_n, pool_m):
        raise ConfigError(
            f"schedule reaches batch {largest} but only {min(pool_n, pool_m)} "
            "rows are available for sampling (cloud size capped by train_top_k)"
        )


def _initial_map(xp, yp, cfg):
    if cfg.init_mode == "convex":
        return convex_init(
            xp, yp, cfg.init_sample_size, cfg.init_fw_iters, cfg.seed
        ).matrix
    return np.eye(xp.shape[1])


def align_points(x, y, cfg):
    """Learn an orthogonal map from source cloud x to target cloud y with no
    supervision, using mean vectors only. Deterministic given cfg.seed."""
    xm, ym = _prepare_points(x, y, cfg)
    schedule = epoch_schedule(cfg.epochs, cfg.initial_batch, cfg.initial_iters)
    xp = xm[: min(xm.shape[0], cfg.train_top_k)]
    yp = ym[: min(ym.shape[0], cfg.train_top_k)]
    _check_schedule(schedule, xp.shape[0], yp.shape[0])
    loop = _StepLoop(xp, yp, _initial_map(xp, yp, cfg), cfg)
    for batch, iters in schedule:
        loop.run_steps(iters, batch, cfg.learning_rate, with_variances=False)
    return AlignResult(
        map=OrthogonalMap(loop.r),
        objective_trace=np.array(loop.trace, dtype=np.float64),
        epochs_run=cfg.epochs,
        final_batch=schedule[-1][0],
        schedule=schedule,
        max_orthogonality_error=loop.max_ortho_err,
    )


def align_gaussian(gx, gy, cfg):
    """Align two diagonal-Gaussian clouds.

    Phase 1 runs the full mean-only schedule (identical to align_points with
    the same config and seed). Phase 2 refines: nested_iters times the final
    epoch's iteration count of extra steps whose matching cost combines mean
    similarity with variance-vector similarity, at learning rate scaled by
    nested_lr_factor. With cfg.nested_per_step the refinement interleaves
    after every phase-1 step instead.
    """
    if not isinstance(gx, GaussianCloud) or not isinstance(gy, GaussianCloud):
        raise InvalidInputError("align_gaussian expects GaussianCloud inputs")
    if gx.d != gy.d:
        raise InvalidInputError(
            f"clouds must share dimension, got d={gx.d} and d={gy.d}"
        )
    if cfg.normalize_inputs:
        xm, vx = normalize_embeddings(gx.means, gx.variances)
        ym, vy = normalize_embeddings(gy.means, gy.variances)
    else:
        xm, vx = np.array(gx.means), np.array(gx.variances)
        ym, vy = np.array(gy.means), np.array(gy.variances)
    schedule = epoch_schedule(cfg.epochs, cfg.initial_batch, cfg.initial_iters)
    top_x = min(xm.shape[0], cfg.train_top_k)
    top_y = min(ym.shape[0], cfg.train_top_k)
    _check_schedule(schedule, top_x, top_y)
    loop = _StepLoop(
        xm[:top_x],
        ym[:top_y],
        _initial_map(xm[:top_x], ym[:top_y], cfg),
        cfg,
        vx_pool=_scaled_variance_rows(vx[:top_x]),
        vy_pool=_scaled_variance_rows(vy[:top_y]),
    )
    for batch, iters in schedule:
        loop.run_steps(iters, batch, cfg.learning_rate, with_variances=False)
    stage1 = OrthogonalMap(loop.r)
    if not cfg.nested_per_step:
        final_batch, final_iters = schedule[-1]
        loop.run_nested(cfg.nested_iters * final_iters, final_batch)
    return AlignResult(
        map=OrthogonalMap(loop.r),
        objective_trace=np.array(loop.trace, dtype=np.float64),
        epochs_run=cfg.epochs,
        final_batch=schedule[-1][0],
        schedule=schedule,
        stage1_map=stage1,
        max_orthogonality_error=loop.max_ortho_err,
    )


def objective(gx, gy, rotation, matching):
    """Alignment objective under a hard matching: (mean term, variance term).

    mean term = ||Mx R - My[matching]||²_F, variance term =
    ||Vx - Vy[matching]||²_F. Variances are never rotated.
    """
    if not isinstance(gx, GaussianCloud) or not isinstance(gy, GaussianCloud):
        raise InvalidInputError("objective expects GaussianCloud inputs")
    r = rotation.matrix if isinstance(rotation, OrthogonalMap) else np.asarray(rotation)
    t = np.asarray(
        matching.target_of if hasattr(matching, "target_of") else matching,
        dtype=np.int64,
    )
    if t.shape != (gx.n,):
        raise InvalidInputError(
            f"matching must cover all {gx.n} source rows, got {t.shape}"
        )
    if t.size and (t.min() < 0 or t.max() >= gy.n):
        raise InvalidInputError("matching targets out of range")
    mean_diff = gx.means @ r - gy.means[t]
    var_diff = gx.variances - gy.variances[t]
    return float(np.sum(mean_diff * mean_diff)), float(np.sum(var_diff * var_diff))


def convex_init(x, y, sample_size, fw_iters, seed=0):
    """Initial orthogonal map from a convex relaxation of the matching.

    On the top sample_size rows, minimize ||Kx P - P Ky||²_F over couplings
    with uniform marginals (Kx, Ky sample Gram matrices) by Frank-Wolfe with
    step 2/(2+k), solving each linear subproblem with a sharply regularized
    Sinkhorn pass. The final coupling is hardened and seeds a Procrustes
    solve. seed is accepted for interface stability; the procedure is
    deterministic and draws no randomness.
    """
    xm = x.data if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)
    ym = y.data if isinstance(y, PointCloud) else np.asarray(y, dtype=np.float64)
    if xm.shape[1] != ym.shape[1]:
        raise InvalidInputError(
            f"clouds must share dimension, got d={xm.shape[1]} and d={ym.shape[1]}"
        )
    if sample_size < 1:
        raise ConfigError(f"sample_size must be >= 1, got {sample_size}")
    if sample_size > min(xm.shape[0], ym.shape[0]):
        raise ConfigError(
            f"sample_size {sample_size} exceeds the available "
            f"{min(xm.shape[0], ym.shape[0])} rows"
        )
    if fw_iters < 0:
        raise ConfigError(f"fw_iters must be >= 0, got {fw_iters}")
    xs = normalize_embeddings(xm[:sample_size])
    ys = normalize_embeddings(ym[:sample_size])
    kx = xs @ xs.T
    ky = ys @ ys.T
    s = sample_size
    p = np.full((s, s), 1.0 / (s * s))
    for k in range(fw_iters):
        resid = kx @ p - p @ ky
        grad = 2.0 * (kx @ resid - resid @ ky)
        lo, hi = float(grad.min()), float(grad.max())
        if hi > lo:
            grad = (grad - lo) / (hi - lo)
        vertex = sinkhorn(
            grad, _FW_REG, max_iter=_FW_MAX_ITER, tol=1e-9
        ).coupling.data
        gamma = 2.0 / (2.0 + k)
        p = (1.0 - gamma) * p + gamma * vertex
    match = coupling_to_matching(p)
    return solve_procrustes(xs, ys[match.target_of])


def config_with(cfg, **overrides):
    """Copy of cfg with selected fields replaced (validated)."""
    return replace(cfg, **overrides)
