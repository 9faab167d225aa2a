"""Monte Carlo campaigns: seeded plant simulation, aggregation, benchmarks.

Campaign determinism is structural rather than incidental: runs are split
into fixed-size blocks, every block partial is a pure function of its run
indices (noise is counter-indexed, accumulation order inside a block is the
run order), and block partials are merged in block order.  Worker count
only changes which process computes a block, so results are bit-identical
for any worker count.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing

import numpy as np

from . import _campaign, ocp, synthesis
from ._rng import normal_batch, psd_cholesky, standard_normals
from .controller import XI_ZERO_TOL, Controller
from .errors import InternalConsistencyError, SolverFailure
from .model import Problem

__all__ = ["SimConfig", "RunRecord", "McSummary", "sample_disturbance", "simulate_run",
           "monte_carlo", "lqr_analytic_violation", "write_summary_csv",
           "write_per_step_csv", "write_trajectories_csv"]

BLOCK_RUNS = 1000
_IPM_TOL = 1e-10
_IPM_MAX_ITER = 200


@dataclass(frozen=True)
class SimConfig:
    runs: int
    steps: int
    x0: np.ndarray
    master_seed: int = 0
    violation_row: int = 0
    record_trajectories: bool = False

    def __post_init__(self):
        if self.runs < 1 or self.steps < 1:
            raise ValueError("runs and steps must be >= 1")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())


@dataclass(frozen=True)
class RunRecord:
    run_index: int
    x: np.ndarray    # (T, nx) realized states
    u: np.ndarray    # (T, nu) applied inputs
    xi: np.ndarray   # (T,) interpolation values (NaN for lqr)
    cost: float      # sum of stage costs minus ell_ss
    backup_events: int


@dataclass(frozen=True)
class McSummary:
    variant: str
    runs: int
    steps: int
    violation_per_step: np.ndarray   # (T,) empirical frequencies
    violation_headline: float        # max over steps
    relative_cost: float             # percent; see relative-cost note below
    mean_traj: np.ndarray            # (T, nx)
    cov_traj: np.ndarray             # (T, nx, nx)
    infeasible_events: int
    backup_branch_events: int
    xi_zero_fraction: float          # NaN for lqr
    trajectories: list[RunRecord] | None = None
    block_seconds: np.ndarray = field(default=None, repr=False, compare=False)


def sample_disturbance(master_seed: int, run_index: int, step_index: int,
                       sigma_w: np.ndarray) -> np.ndarray:
    """w = L n with L the lower-triangular PSD factor of sigma_w.

    Bit-reproducible for fixed (master_seed, run_index, step_index)
    regardless of worker count or call order.
    """
    L = psd_cholesky(sigma_w)
    n = np.empty(L.shape[0])
    standard_normals(master_seed, run_index, step_index, n)
    return L @ n


def disturbance_batch(master_seed: int, run_index: int, steps: int,
                      sigma_w: np.ndarray) -> np.ndarray:
    """(steps, nx) stack of sample_disturbance for step_index = 0..steps-1."""
    L = psd_cholesky(sigma_w)
    out = np.empty((steps, L.shape[0]))
    normal_batch(master_seed, run_index, 0, out)
    return out @ L.T


# --- campaign context -------------------------------------------------------

_VARIANT_CODE = {"lqr": _campaign.VARIANT_LQR, "ic": _campaign.VARIANT_FREE_XI,
                 "lxi": _campaign.VARIANT_FREE_XI, "bak": _campaign.VARIANT_BAK}


class _Context:
    """Read-only arrays shared with workers (inherited through fork)."""

    def __init__(self, problem: Problem, variant: str, cfg: SimConfig):
        if variant not in _VARIANT_CODE:
            raise ValueError(f"unknown variant {variant!r}")
        design = synthesis.design(problem.system.A, problem.system.B,
                                  problem.cost.Q, problem.cost.R,
                                  problem.disturbance.covariance)
        self.design = design
        self.variant = variant
        self.variant_code = _VARIANT_CODE[variant]
        self.xi_penalty = problem.controller.xi_penalty if variant == "lxi" else 0.0
        self.steps = cfg.steps
        self.master_seed = int(cfg.master_seed)
        self.x0 = cfg.x0.copy()
        self.record = cfg.record_trajectories

        c = np.ascontiguousarray
        self.A = c(problem.system.A)
        self.B = c(problem.system.B)
        self.K = c(design.K)
        self.Lw = c(psd_cholesky(problem.disturbance.covariance))
        self.Qx = c(problem.cost.Q)
        self.Ru = c(problem.cost.R)
        self.ell_ss = design.ell_ss

        row = cfg.violation_row
        if not (0 <= row < problem.chance.state_set.nrows):
            raise ValueError(f"violation_row {row} out of range")
        self.viol_a = c(problem.chance.state_set.H[row])
        self.viol_b = float(problem.chance.state_set.h[row])

        if variant == "lqr":
            # kernel signature wants the arrays; 1-column dummies are never read
            nv = 1
            self.Hvv = np.zeros((nv, nv))
            self.CW = np.zeros((nv, nv))
            self.Wbar = np.zeros((nv, nv))
            self.Kstack = np.zeros((nv, self.A.shape[0]))
            self.Gv = np.zeros((0, nv))
            self.GxA = np.zeros((0, self.A.shape[0]))
            self.h0 = np.zeros(0)
        else:
            tp = ocp.tighten(problem, design)
            self.tp = tp
            cond = ocp.CondensedOcp(tp)
            self.Hvv = c(cond.Hvv)
            self.CW = c(cond.CW)
            self.Wbar = c(cond.Wbar)
            self.Kstack = c(cond.Kstack)
            self.Gv = c(cond.Gv)
            self.GxA = c(cond.GxA)
            self.h0 = c(cond.h0)
            # initial feasibility (z1_prev = x0 makes this the whole check)
            Controller(tp, variant).init(cfg.x0)

    def run_one(self, run_index: int, x_out, u_out, xi_out):
        return _campaign.simulate_run_kernel(
            self.variant_code, self.xi_penalty, self.x0, self.steps,
            self.master_seed, run_index,
            self.A, self.B, self.K, self.Lw,
            self.Hvv, self.CW, self.Wbar, self.Kstack, self.Gv, self.GxA, self.h0,
            self.Qx, self.Ru, self.ell_ss,
            _IPM_TOL, _IPM_MAX_ITER,
            x_out, u_out, xi_out)


_WORKER_CTX: _Context | None = None


def _block_worker(block: tuple[int, int]):
    return _compute_block(_WORKER_CTX, block)


def _compute_block(ctx: _Context, block: tuple[int, int]):
    """Partial sums for runs [start, start+count); pure in (ctx, block)."""
    start, count = block
    t0 = time.perf_counter()
    T = ctx.steps
    nx = ctx.A.shape[0]
    nu = ctx.B.shape[1]
    sum_x = np.zeros((T, nx))
    sum_xxT = np.zeros((T, nx, nx))
    viol = np.zeros(T, dtype=np.int64)
    costs = np.empty(count)
    backup = 0
    xi_zero = 0
    records = [] if ctx.record else None
    x_out = np.empty((T, nx))
    u_out = np.empty((T, nu))
    xi_out = np.empty(T)
    for i in range(count):
        run = start + i
        cost, bk, err, err_step = ctx.run_one(run, x_out, u_out, xi_out)
        if err != _campaign.ERR_NONE:
            return ("error", run, err_step, err)
        viol += (x_out @ ctx.viol_a > ctx.viol_b)
        sum_x += x_out
        sum_xxT += np.einsum("ti,tj->tij", x_out, x_out)
        costs[i] = cost
        backup += bk
        if ctx.variant != "lqr":
            xi_zero += int(np.count_nonzero(xi_out <= XI_ZERO_TOL))
        if records is not None:
            records.append(RunRecord(run, x_out.copy(), u_out.copy(), xi_out.copy(),
                                     float(cost), int(bk)))
    return ("ok", sum_x, sum_xxT, viol, float(np.sum(costs)), backup, xi_zero,
            records, time.perf_counter() - t0)


def simulate_run(problem: Problem, variant: str, run_index: int, cfg: SimConfig) -> RunRecord:
    """One closed-loop run through the campaign kernel."""
    ctx = _Context(problem, variant, cfg)
    T, nx, nu = cfg.steps, ctx.A.shape[0], ctx.B.shape[1]
    x_out = np.empty((T, nx))
    u_out = np.empty((T, nu))
    xi_out = np.empty(T)
    cost, bk, err, err_step = ctx.run_one(run_index, x_out, u_out, xi_out)
    _raise_on_error(err, run_index, err_step, variant)
    return RunRecord(run_index, x_out, u_out, xi_out, float(cost), int(bk))


def _raise_on_error(err: int, run: int, step: int, variant: str) -> None:
    if err == _campaign.ERR_NONE:
        return
    if err == _campaign.ERR_BACKUP_INFEASIBLE:
        raise InternalConsistencyError(
            f"bak backup branch infeasible at run {run}, step {step}")
    raise SolverFailure(f"{variant} solver failure at run {run}, step {step}")


def resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("SMPC_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def monte_carlo(problem: Problem, variant: str, cfg: SimConfig,
                workers: int | None = None) -> McSummary:
    """Aggregate cfg.runs closed-loop runs; identical output for any worker count.

    relative_cost is reported as
        100 * (mean_k sum(stage - ell_ss) + tr(sigma_inf P)) / (x0' P x0),
    i.e. the Monte Carlo estimate of the expected cost with the stationary
    constant added back, which anchors the plain LQR at 100%.
    """
    ctx = _Context(problem, variant, cfg)
    blocks = [(s, min(BLOCK_RUNS, cfg.runs - s)) for s in range(0, cfg.runs, BLOCK_RUNS)]
    nworkers = resolve_workers(workers)

    # warm the JIT cache in the parent so forked workers inherit compiled code
    _warmup(ctx)

    if nworkers <= 1 or len(blocks) == 1:
        partials = [_compute_block(ctx, b) for b in blocks]
    else:
        global _WORKER_CTX
        _WORKER_CTX = ctx
        try:
            mp = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=min(nworkers, len(blocks)),
                                     mp_context=mp) as pool:
                partials = list(pool.map(_block_worker, blocks, chunksize=1))
        finally:
            _WORKER_CTX = None

    for p in partials:
        if p[0] == "error":
            _raise_on_error(p[3], p[1], p[2], variant)

    T = cfg.steps
    runs = cfg.runs
    sum_x = np.sum(np.stack([p[1] for p in partials]), axis=0)
    sum_xxT = np.sum(np.stack([p[2] for p in partials]), axis=0)
    viol = np.sum(np.stack([p[3] for p in partials]), axis=0)
    cost_sum = float(np.sum(np.array([p[4] for p in partials])))
    backup = int(sum(p[5] for p in partials))
    xi_zero = int(sum(p[6] for p in partials))
    records = None
    if ctx.record:
        records = [r for p in partials for r in p[7]]
    block_seconds = np.array([p[8] for p in partials])

    mean_traj = sum_x / runs
    cov_traj = sum_xxT / runs - np.einsum("ti,tj->tij", mean_traj, mean_traj)
    cov_traj = 0.5 * (cov_traj + np.transpose(cov_traj, (0, 2, 1)))
    violation_per_step = viol / runs

    denom = float(cfg.x0 @ ctx.design.P @ cfg.x0)
    const = float(np.trace(ctx.design.sigma_inf @ ctx.design.P))
    relative_cost = 100.0 * (cost_sum / runs + const) / denom if denom > 1e-300 else float("nan")

    return McSummary(
        variant=variant, runs=runs, steps=T,
        violation_per_step=violation_per_step,
        violation_headline=float(violation_per_step.max()),
        relative_cost=relative_cost,
        mean_traj=mean_traj, cov_traj=cov_traj,
        infeasible_events=backup if variant == "bak" else 0,
        backup_branch_events=backup if variant == "bak" else 0,
        xi_zero_fraction=(xi_zero / (runs * T)) if variant != "lqr" else float("nan"),
        trajectories=records,
        block_seconds=block_seconds)


def _warmup(ctx: _Context) -> None:
    nx, nu = ctx.A.shape[0], ctx.B.shape[1]
    x_out = np.empty((1, nx))
    u_out = np.empty((1, nu))
    xi_out = np.empty(1)
    _campaign.simulate_run_kernel(
        ctx.variant_code, ctx.xi_penalty, ctx.x0, 1, ctx.master_seed, 0,
        ctx.A, ctx.B, ctx.K, ctx.Lw,
        ctx.Hvv, ctx.CW, ctx.Wbar, ctx.Kstack, ctx.Gv, ctx.GxA, ctx.h0,
        ctx.Qx, ctx.Ru, ctx.ell_ss, _IPM_TOL, _IPM_MAX_ITER,
        x_out, u_out, xi_out)


def lqr_analytic_violation(problem: Problem, design: synthesis.DesignArtifacts,
                           x0: np.ndarray, T: int, violation_row: int = 0) -> np.ndarray:
    """Exact per-step violation probabilities for u = Kx under Gaussian noise.

    The closed loop is linear-Gaussian, so mean and covariance propagate in
    closed form and the halfspace violation is a normal tail probability.
    Zero variance (e.g. k = 0) degenerates to a deterministic indicator.
    """
    a = problem.chance.state_set.H[violation_row]
    b = float(problem.chance.state_set.h[violation_row])
    A_K = design.A_K
    Sw = problem.disturbance.covariance
    mu = np.asarray(x0, dtype=float).ravel().copy()
    S = np.zeros_like(Sw)
    out = np.empty(T)
    for k in range(T):
        var = float(a @ S @ a)
        if var <= 0.0:
            out[k] = 0.0 if a @ mu <= b else 1.0
        else:
            out[k] = 0.5 * math.erfc((b - float(a @ mu)) / math.sqrt(2.0 * var))
        mu = A_K @ mu
        S = A_K @ S @ A_K.T + Sw
    return out


# --- CSV outputs ------------------------------------------------------------

def _fmt(v) -> str:
    return f"{v:.17g}"


def write_summary_csv(path, summaries: list[McSummary]) -> None:
    lines = ["variant,violation_headline,relative_cost,infeasible_events,"
             "backup_branch_events,xi_zero_fraction"]
    for s in summaries:
        lines.append(",".join([s.variant, _fmt(s.violation_headline), _fmt(s.relative_cost),
                               str(s.infeasible_events), str(s.backup_branch_events),
                               _fmt(s.xi_zero_fraction)]))
    _write(path, lines)


def write_per_step_csv(path, summary: McSummary) -> None:
    nx = summary.mean_traj.shape[1]
    header = ["step", "violation_freq"] + [f"mean_x{i+1}" for i in range(nx)]
    header += [f"cov_{i+1}_{j+1}" for i in range(nx) for j in range(nx)]
    lines = [",".join(header)]
    for k in range(summary.steps):
        row = [str(k), _fmt(summary.violation_per_step[k])]
        row += [_fmt(v) for v in summary.mean_traj[k]]
        row += [_fmt(v) for v in summary.cov_traj[k].ravel()]
        lines.append(",".join(row))
    _write(path, lines)


def write_trajectories_csv(path, summary: McSummary) -> None:
    if summary.trajectories is None:
        raise ValueError("campaign was run without record_trajectories")
    nx = summary.mean_traj.shape[1]
    nu = summary.trajectories[0].u.shape[1] if summary.trajectories else 0
    header = ["run", "step"] + [f"x{i+1}" for i in range(nx)] + \
             [f"u{i+1}" for i in range(nu)] + ["xi"]
    lines = [",".join(header)]
    for rec in summary.trajectories:
        for k in range(rec.x.shape[0]):
            row = [str(rec.run_index), str(k)]
            row += [_fmt(v) for v in rec.x[k]]
            row += [_fmt(v) for v in rec.u[k]]
            row.append(_fmt(rec.xi[k]))
            lines.append(",".join(row))
    _write(path, lines)


def _write(path, lines: list[str]) -> None:
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
