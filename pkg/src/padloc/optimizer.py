"""Trajectory estimation: Gauss-Newton with QR solving, instant single-pose
tracking, joint window optimization, and the adaptive incremental solver
that maintains the square-root information matrix across steps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import solve_triangular

from .factors import (DegenerateOrigin, EtFactor, NoiseModel, PriorFactor,
                      RtFactor, ORIGIN_EPS)
from .geometry import PointBehindCamera


class RankDeficient(np.linalg.LinAlgError):
    """Square-root information matrix has a (numerically) zero diagonal."""


class NonConvergence(RuntimeError):
    """Gauss-Newton did not reach the step tolerance; best iterate attached."""

    def __init__(self, message, estimate, iterations):
        super().__init__(message)
        self.estimate = estimate
        self.iterations = iterations


@dataclass(frozen=True)
class SquareRootInfo:
    """Upper-triangular factor R and right-hand side d with R x = d."""

    R: np.ndarray
    d: np.ndarray
    ordering: tuple
    validate: bool = True

    def __post_init__(self):
        if self.validate and not np.allclose(self.R, np.triu(self.R)):
            raise ValueError("R must be upper triangular")


def _rank_tol(R: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(np.diag(R)).max(initial=0.0)))
    return max(R.shape) * np.finfo(float).eps * scale * 10


def back_substitute(R: np.ndarray, d: np.ndarray) -> np.ndarray:
    if R.shape[0] == 0:
        return np.zeros(0)
    if np.abs(np.diag(R)).min() <= _rank_tol(R):
        raise RankDeficient("zero diagonal in R")
    return solve_triangular(R, d, lower=False)


def qr_solve(A: np.ndarray, b: np.ndarray, ordering=()):
    """Least-squares solve of ||A x - b|| via QR; returns (x, SquareRootInfo)."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if m < n:
        raise ValueError("system must have at least as many rows as unknowns")
    # Givens elimination from scratch; Q is never formed.  Rotation cost is
    # bounded by the band profile, so block-banded factor-graph systems
    # factor in O(rows * bandwidth^2).
    R = np.zeros((n, n))
    d = np.zeros(n)
    _givens_kernel(R, d, np.ascontiguousarray(A, dtype=float),
                   np.ascontiguousarray(b, dtype=float))
    x = back_substitute(R, d)
    # R is triangular by construction (below-diagonal entries never written)
    return x, SquareRootInfo(R=R, d=d, ordering=tuple(ordering) or tuple(range(n)),
                             validate=False)


@njit(cache=True)
def _givens_kernel(R, d, rows, rhs):
    """Fold measurement rows into the triangular factor by Givens rotations.

    Tracks the last nonzero column of each R row so banded systems (factors
    over a few consecutive poses) rotate in O(bandwidth) per element.
    """
    n = R.shape[0]
    hi = np.empty(n, dtype=np.int64)
    for j in range(n):
        h = j
        for m in range(n - 1, j - 1, -1):
            if R[j, m] != 0.0:
                h = m
                break
        hi[j] = h
    for k in range(rows.shape[0]):
        a = rows[k].copy()
        beta = rhs[k]
        ha = 0
        for m in range(n - 1, -1, -1):
            if a[m] != 0.0:
                ha = m
                break
        for j in range(n):
            if a[j] == 0.0:
                continue
            rjj = R[j, j]
            rho = np.hypot(rjj, a[j])
            c = rjj / rho
            s = a[j] / rho
            top = hi[j] if hi[j] > ha else ha
            for m in range(j, top + 1):
                rjm = R[j, m]
                R[j, m] = c * rjm + s * a[m]
                a[m] = -s * rjm + c * a[m]
            hi[j] = top
            ha = top
            dj = d[j]
            d[j] = c * dj + s * beta
            beta = -s * dj + c * beta


_givens_kernel(np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)), np.zeros(0))


def givens_append(R: np.ndarray, d: np.ndarray, rows: np.ndarray, rhs: np.ndarray):
    """Fold new measurement rows into (R, d) with Givens rotations, in place."""
    RR = R if R.flags["C_CONTIGUOUS"] and R.dtype == float else (
        np.ascontiguousarray(R, dtype=float))
    dd = d if d.flags["C_CONTIGUOUS"] and d.dtype == float else (
        np.ascontiguousarray(d, dtype=float))
    _givens_kernel(RR, dd, np.ascontiguousarray(rows, dtype=float),
                   np.ascontiguousarray(rhs, dtype=float))
    if RR is not R:
        R[...] = RR
    if dd is not d:
        d[...] = dd
    return R, d


def _split_factors(factors, free_index):
    """Partition factors by type, keeping only those touching a free variable.

    Returns (priors, ets, rts, others, row_offsets, total_rows) where the
    offsets preserve the original factor order in the stacked system.
    """
    priors, ets, rts, others = [], [], [], []
    offsets = {"prior": [], "et": [], "rt": [], "other": []}
    total = 0
    for f in factors:
        if not any(i in free_index for i in f.idx):
            continue
        if type(f) is PriorFactor:
            priors.append(f)
            offsets["prior"].append(total)
        elif type(f) is EtFactor:
            ets.append(f)
            offsets["et"].append(total)
        elif type(f) is RtFactor:
            rts.append(f)
            offsets["rt"].append(total)
        else:
            others.append(f)
            offsets["other"].append(total)
        total += f.dim
    return priors, ets, rts, others, offsets, total


def _et_terms(ets, V, noise):
    """Batched Huber-weighted reprojection residuals and Jacobian blocks."""
    idx = np.array([f.idx[0] for f in ets])
    xm = np.array([f.x_meas for f in ets], dtype=float)
    intr = ets[0].intr
    t = V[idx]
    Z = t[:, 2]
    if np.any(Z <= 0):
        raise PointBehindCamera("pose depth must be positive for projection")
    proj = np.stack([intr.fx * t[:, 0] / Z + intr.cx,
                     intr.fy * t[:, 1] / Z + intr.cy], axis=1)
    raw = xm - proj
    nrm = np.linalg.norm(raw, axis=1)
    w = np.where(nrm <= noise.huber_k, 1.0,
                 noise.huber_k / np.maximum(nrm, 1e-300))
    sw = np.sqrt(w)
    r = sw[:, None] * raw / noise.sigma_et
    J = np.zeros((len(ets), 2, 3))
    J[:, 0, 0] = intr.fx / Z
    J[:, 0, 2] = -intr.fx * t[:, 0] / Z**2
    J[:, 1, 1] = intr.fy / Z
    J[:, 1, 2] = -intr.fy * t[:, 1] / Z**2
    J *= -sw[:, None, None] / noise.sigma_et
    return idx, r, J, nrm


def _rt_terms(rts, V, noise):
    """Batched radar residuals (range, direction, displacement rows)."""
    idx = np.array([f.idx for f in rts])
    D = np.array([f.distance for f in rts], dtype=float)
    vbar = np.array([f.direction for f in rts], dtype=float)
    U = np.array([f.displacement for f in rts], dtype=float)
    t = V[idx[:, 0]]
    tp = V[idx[:, 1]]
    norm = np.linalg.norm(t, axis=1)
    if np.any(norm <= ORIGIN_EPS):
        raise DegenerateOrigin("pose too close to the sensor origin")
    unit = t / norm[:, None]
    r = np.empty((len(rts), 7))
    r[:, 0] = (norm - D) / noise.sigma_d
    r[:, 1:4] = (unit - vbar) / noise.sigma_v
    r[:, 4:7] = ((t - tp) - U) / noise.sigma_ue
    J_i = np.zeros((len(rts), 7, 3))
    J_i[:, 0, :] = unit / noise.sigma_d
    J_i[:, 1:4, :] = ((np.eye(3) - unit[:, :, None] * unit[:, None, :])
                      / (norm[:, None, None] * noise.sigma_v))
    J_i[:, 4:7, :] = np.eye(3) / noise.sigma_ue
    return idx, r, J_i


def _scatter_block(A, row_off, cols, J):
    """Write per-factor Jacobian blocks J (n, rdim, 3) into A at free columns."""
    keep = cols >= 0
    if not keep.any():
        return
    rdim = J.shape[1]
    rows = row_off[keep, None, None] + np.arange(rdim)[None, :, None]
    ccols = 3 * cols[keep, None, None] + np.arange(3)[None, None, :]
    A[rows, ccols] = J[keep]


def _build_system(values, factors, noise, free_index):
    """Stack whitened residuals and Jacobians over the free variables.

    ``free_index`` maps global variable index -> column block; variables not
    present are treated as constants at their current values.
    """
    n = 3 * len(free_index)
    if len(factors) < 8:
        # small systems (instant tracking): direct per-factor assembly
        blocks_A, blocks_b = [], []
        for f in factors:
            jac = f.jacobians(values, noise)
            if not any(i in free_index for i in jac):
                continue
            row = np.zeros((f.dim, n))
            for i, J in jac.items():
                col = free_index.get(i)
                if col is not None:
                    row[:, 3 * col:3 * col + 3] = J
            blocks_A.append(row)
            blocks_b.append(-f.residual(values, noise))
        if not blocks_A:
            return np.zeros((0, n)), np.zeros(0)
        return np.vstack(blocks_A), np.concatenate(blocks_b)
    V = np.asarray(values, dtype=float).reshape(-1, 3)
    col_map = np.full(len(values), -1)
    for g, c in free_index.items():
        col_map[g] = c
    priors, ets, rts, others, offsets, total = _split_factors(factors,
                                                              free_index)
    A = np.zeros((total, n))
    b = np.zeros(total)
    if priors:
        pidx = np.array([f.idx for f in priors])
        off = np.array(offsets["prior"])
        r = (V[pidx[:, 0]] - 2.0 * V[pidx[:, 1]] + V[pidx[:, 2]]) / noise.sigma_prior
        rows = (off[:, None] + np.arange(3)).ravel()
        b[rows] = -r.ravel()
        for slot, coef in ((0, 1.0), (1, -2.0), (2, 1.0)):
            cols = col_map[pidx[:, slot]]
            keep = cols >= 0
            rr = (off[keep, None] + np.arange(3)).ravel()
            cc = (3 * cols[keep, None] + np.arange(3)).ravel()
            A[rr, cc] = coef / noise.sigma_prior
    if ets:
        idx, r, J, _ = _et_terms(ets, V, noise)
        off = np.array(offsets["et"])
        rows = (off[:, None] + np.arange(2)).ravel()
        b[rows] = -r.ravel()
        _scatter_block(A, off, col_map[idx], J)
    if rts:
        idx, r, J_i = _rt_terms(rts, V, noise)
        off = np.array(offsets["rt"])
        rows = (off[:, None] + np.arange(7)).ravel()
        b[rows] = -r.ravel()
        _scatter_block(A, off, col_map[idx[:, 0]], J_i)
        J_im1 = np.zeros((len(rts), 7, 3))
        J_im1[:, 4:7, :] = -np.eye(3) / noise.sigma_ue
        _scatter_block(A, off, col_map[idx[:, 1]], J_im1)
    for f, off in zip(others, offsets["other"]):
        b[off:off + f.dim] = -f.residual(values, noise)
        for i, J in f.jacobians(values, noise).items():
            col = free_index.get(i)
            if col is not None:
                A[off:off + f.dim, 3 * col:3 * col + 3] = J
    return A, b


def _huber_cost(e_raw, k):
    """True Huber energy for raw whitened residual norms."""
    return np.where(e_raw <= k, 0.5 * e_raw**2, k * (e_raw - 0.5 * k)).sum()


def total_energy(values, factors, noise) -> float:
    """Robust total energy (Huber on the reprojection factor)."""
    if len(factors) < 8:
        e = 0.0
        k_w = noise.huber_k / noise.sigma_et
        for f in factors:
            r = f.residual(values, noise)
            if type(f) is EtFactor:
                norm_w = float(np.linalg.norm(r))
                e_raw = norm_w if norm_w <= k_w else norm_w**2 / k_w
                e += float(_huber_cost(np.array([e_raw]), k_w))
            else:
                e += 0.5 * float(r @ r)
        return e
    V = np.asarray(values, dtype=float).reshape(-1, 3)
    all_vars = {i for f in factors for i in f.idx}
    dummy_index = {i: 0 for i in all_vars}
    priors, ets, rts, others, _, _ = _split_factors(factors, dummy_index)
    e = 0.0
    if priors:
        pidx = np.array([f.idx for f in priors])
        r = (V[pidx[:, 0]] - 2.0 * V[pidx[:, 1]] + V[pidx[:, 2]]) / noise.sigma_prior
        e += 0.5 * float((r * r).sum())
    if ets:
        _, _, _, nrm = _et_terms(ets, V, noise)
        e += float(_huber_cost(nrm / noise.sigma_et,
                               noise.huber_k / noise.sigma_et))
    if rts:
        _, r, _ = _rt_terms(rts, V, noise)
        e += 0.5 * float((r * r).sum())
    for f in others:
        r = f.residual(values, noise)
        e += 0.5 * float(r @ r)
    return e


def _solve_possibly_deficient(A, b, ordering):
    """qr_solve with a small Tikhonov fallback for rank-deficient systems.

    Damping pulls the unobservable directions of the step toward zero
    without noticeably biasing the well-constrained ones.
    """
    try:
        return qr_solve(A, b, ordering=ordering)
    except RankDeficient:
        n = A.shape[1]
        scale = np.sqrt(1e-8) * max(1.0, float(np.abs(A).max()))
        A_damped = np.vstack([A, scale * np.eye(n)])
        b_damped = np.concatenate([b, np.zeros(n)])
        return qr_solve(A_damped, b_damped, ordering=ordering)


def gauss_newton(values, factors, noise, free, max_iter=20, step_tol=1e-8,
                 max_halvings=12, energy_rtol=1e-13):
    """Gauss-Newton with step halving; energy never increases on accepted steps.

    ``values`` is a list of 3-vectors (mutated copy returned), ``free`` the
    sorted free variable indices.  Stops on a small step or a negligible
    energy decrease.  Returns (values, iterations, last_sri, fresh) where
    ``fresh`` says the factor was computed at the returned values.
    """
    vals = [np.array(v, dtype=float) for v in values]
    free = list(free)
    free_index = {g: c for c, g in enumerate(free)}
    sri = None
    energy = total_energy(vals, factors, noise)
    for it in range(1, max_iter + 1):
        A, b = _build_system(vals, factors, noise, free_index)
        if A.shape[0] < A.shape[1]:
            raise RankDeficient("underdetermined window")
        dx, sri = _solve_possibly_deficient(A, b, ordering=free)
        if np.linalg.norm(dx) < step_tol:
            return vals, it, sri, True
        alpha = 1.0
        accepted = False
        for _ in range(max_halvings):
            trial = [np.array(v) for v in vals]
            for c, g in enumerate(free):
                trial[g] = vals[g] + alpha * dx[3 * c:3 * c + 3]
            try:
                trial_energy = total_energy(trial, factors, noise)
            except (PointBehindCamera, DegenerateOrigin):
                # infeasible trial point (pose behind camera / at the sensor
                # origin): reject and shorten the step
                alpha *= 0.5
                continue
            if trial_energy <= energy + 1e-15:
                decrease = energy - trial_energy
                vals, energy = trial, trial_energy
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return vals, it, sri, True
        if alpha * np.linalg.norm(dx) < step_tol:
            return vals, it + 1, sri, True
        if decrease <= energy_rtol * (1.0 + energy):
            # stalled on a robust-kernel plateau; the iterate is as good as
            # this linearization gets (factor is one step stale)
            return vals, it + 1, sri, False
    raise NonConvergence("Gauss-Newton hit the iteration cap", vals, max_iter)


def local_optimize(values, factors, noise, free, max_iter=20, step_tol=1e-8):
    """Joint optimization of a pose window; wraps Gauss-Newton with QR solve."""
    if len(free) < 1:
        raise ValueError("no free variables")
    try:
        vals, iters, sri, fresh = gauss_newton(values, factors, noise, free,
                                               max_iter=max_iter,
                                               step_tol=step_tol)
        if not fresh:
            sri = None
    except NonConvergence as exc:
        return exc.estimate, exc.iterations, None, False
    return vals, iters, sri, True


def constant_velocity_prediction(t_im1, t_im2) -> np.ndarray:
    return 2.0 * np.asarray(t_im1, dtype=float) - np.asarray(t_im2, dtype=float)


def inter_sae_track(t_im1, t_im2, noise, intr=None, x_meas=None, distance=None,
                    direction=None, displacement=None, init=None,
                    max_iter=20, step_tol=1e-8):
    """Instant single-pose estimate from the current window's measurements.

    Starts from the constant-velocity prediction; any of the event (x_meas)
    or radar (distance/direction/displacement) measurements may be absent,
    in which case the corresponding factor is omitted.
    Returns (estimate, converged, iterations).
    """
    start = np.asarray(init if init is not None else
                       constant_velocity_prediction(t_im1, t_im2), dtype=float)
    if x_meas is not None and start[2] <= 1e-3:
        # extrapolation crossed the image plane; restart just in front of it
        start = start.copy()
        start[2] = 1e-3
    values = [np.asarray(t_im2, dtype=float), np.asarray(t_im1, dtype=float),
              start]
    factors = [PriorFactor(idx=(2, 1, 0))]
    if x_meas is not None:
        if intr is None:
            raise ValueError("event measurement requires camera intrinsics")
        factors.append(EtFactor(idx=(2,), x_meas=tuple(x_meas), intr=intr))
    if distance is not None:
        factors.append(RtFactor(idx=(2, 1), distance=float(distance),
                                direction=tuple(direction),
                                displacement=tuple(displacement)))
    try:
        vals, iters, _, _ = gauss_newton(values, factors, noise, free=[2],
                                         max_iter=max_iter, step_tol=step_tol)
        return vals[2], True, iters
    except NonConvergence as exc:
        return exc.estimate[2], False, exc.iterations


@dataclass
class AdaptiveConfig:
    """Triggers of the adaptive incremental solver."""

    delta: float = 0.01      # m, per-variable relinearization trigger
    l_threshold: int = 3     # number of triggered variables forcing a full update
    norm_delta: float = 0.05  # m, total-change trigger
    window: int = 50         # free poses retained after a full update

    def __post_init__(self):
        if self.delta <= 0 or self.norm_delta <= 0 or self.l_threshold < 1:
            raise ValueError("adaptive triggers must be positive")


@dataclass
class StepInfo:
    full_update: bool
    iterations: int
    n_free: int
    triggered: int


class AdaptiveSolver:
    """Incremental window estimator following the adaptive update policy.

    New measurements are folded into the square-root information matrix by
    Givens rotations and solved by back-substitution; when enough variables
    drift from their linearization points (or the total drift norm trips),
    the window is relinearized and R rebuilt from a full QR factorization,
    iterated to convergence.
    """

    def __init__(self, noise: NoiseModel, config: AdaptiveConfig = None,
                 force_full: bool = False):
        self.noise = noise
        self.config = config or AdaptiveConfig()
        self.force_full = force_full
        self.values: list = []       # current estimates, all poses
        self.lin: list = []          # linearization points
        self.factors: list = []
        self.first_free = 0
        self.R = np.zeros((0, 0))
        self.d = np.zeros(0)

    # -- bootstrap -----------------------------------------------------
    def seed(self, poses):
        """Install initial poses as frozen anchors (no factors attached)."""
        for p in poses:
            self.values.append(np.asarray(p, dtype=float).copy())
            self.lin.append(np.asarray(p, dtype=float).copy())
        self.first_free = len(self.values)

    @property
    def free_indices(self):
        return list(range(self.first_free, len(self.values)))

    def _free_index_map(self):
        return {g: c for c, g in enumerate(self.free_indices)}

    # -- full relinearization -------------------------------------------
    def _full_update(self, max_iter=20):
        cfg = self.config
        n = len(self.values)
        self.first_free = max(self.first_free, n - cfg.window)
        # factors over frozen poses only are constants; drop them
        self.factors = [f for f in self.factors
                        if any(i >= self.first_free for i in f.idx)]
        free = self.free_indices
        vals, iters, sri, _ = local_optimize(self.values, self.factors,
                                             self.noise, free,
                                             max_iter=max_iter)
        self.values = vals
        for g in free:
            self.lin[g] = np.array(vals[g])
        if sri is None:
            # non-converged fallback: factor at the best iterate
            A, b = _build_system(self.values, self.factors, self.noise,
                                 self._free_index_map())
            _, sri = _solve_possibly_deficient(A, b, ordering=free)
        self.R = np.array(sri.R)
        self.d = np.array(sri.d)
        return iters

    # -- one measurement step -------------------------------------------
    def add_step(self, init_pose, factors) -> StepInfo:
        """Append a pose and its factors, then run the adaptive update."""
        self.values.append(np.asarray(init_pose, dtype=float).copy())
        self.lin.append(np.asarray(init_pose, dtype=float).copy())
        self.factors.extend(factors)

        if self.force_full:
            iters = self._full_update()
            return StepInfo(True, iters, len(self.free_indices), 0)

        # grow R with the new variable's zero block
        n_old = self.R.shape[0]
        self.R = np.pad(self.R, ((0, 3), (0, 3)))
        self.d = np.pad(self.d, (0, 3))

        free_index = self._free_index_map()
        lin_vals = list(self.lin)
        rows, rhs = _build_system(lin_vals, factors, self.noise, free_index)
        if rows.shape[1] != self.R.shape[0]:
            # older frozen structure changed; rebuild
            iters = self._full_update()
            return StepInfo(True, iters, len(self.free_indices), 0)
        givens_append(self.R, self.d, rows, rhs)

        # fixed-lag window: marginalize the oldest free poses out of R
        # (leading rows/cols of an upper-triangular factor are exact marginals)
        while len(self.free_indices) > self.config.window:
            self.R = np.ascontiguousarray(self.R[3:, 3:])
            self.d = self.d[3:].copy()
            self.first_free += 1

        try:
            dx = back_substitute(self.R, self.d)
        except RankDeficient:
            iters = self._full_update()
            return StepInfo(True, iters, len(self.free_indices), 0)

        free = self.free_indices
        x_hat = [self.lin[g] + dx[3 * c:3 * c + 3] for c, g in enumerate(free)]
        # drift of the linear estimate away from the linearization points
        changes = [float(np.linalg.norm(dx[3 * c:3 * c + 3]))
                   for c in range(len(free))]
        triggered = sum(1 for c in changes if c >= self.config.delta)
        total = float(np.sqrt(sum(c * c for c in changes)))
        if any(p[2] <= 1e-6 or np.linalg.norm(p) <= ORIGIN_EPS for p in x_hat):
            # the linear step left the feasible domain (pose behind the
            # camera or at the sensor origin); relinearize from the current
            # feasible estimates instead of accepting it
            iters = self._full_update()
            return StepInfo(True, iters, len(self.free_indices), triggered)
        for c, g in enumerate(free):
            self.values[g] = x_hat[c]

        if (triggered >= self.config.l_threshold
                or total >= self.config.norm_delta):
            iters = self._full_update()
            return StepInfo(True, iters, len(self.free_indices), triggered)
        return StepInfo(False, 1, len(free), triggered)

    def estimate(self, g: int) -> np.ndarray:
        return np.array(self.values[g])
