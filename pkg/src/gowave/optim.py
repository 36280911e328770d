"""Budgeted optimizers for waveform inversion and their shared linesearch.

Four methods are implemented on the same objective F(m) = Phi(m) + R(m):

* run_nlcg:  Polak-Ribiere+ nonlinear CG preconditioned with a fixed
  curvature model (diagonal misfit estimate + regularizer Hessian).
* run_lbfgs: two-loop L-BFGS initialized with the same curvature model,
  with every direction post-smoothed through the regularizer inverse.
* run_gncg:  inexact Gauss-Newton-CG where each Hessian-vector product
  costs PDE solves, preconditioned by a quasi-Newton operator built from
  previous iterations' products and seeded with a fixed Richardson sweep.
* run_gogn:  gradient-only Gauss-Newton; the Gauss-Newton model is built
  from the per-source gradients alone, so forming and solving the step
  consumes zero PDE solves beyond the gradient evaluation.

All runs charge PDE work to a Budget wrapping the problem's solve ledger;
an iteration may start only while the budget is unspent, so at most one
iteration's cost overshoots. Accepted steps must strictly decrease F.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .gogn import assemble, step_woodbury
from .wave import ModelGrid


@dataclass
class LinesearchPolicy:
    """Shared step-length protocol: one initial trial, a quadratic
    interpolation phase, then plain halving; accept on strict decrease."""

    max_iters: int = 10
    quad_interp_phase: int = 5
    armijo_factor: float = 0.5
    armijo_c1: float = 0.0
    initial_step_rule: str = "cap"  # "cap": alpha0 = step_cap/||p||_inf, or "unit"
    step_cap: float = 0.05

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("need at least one linesearch evaluation")
        if self.quad_interp_phase > self.max_iters:
            raise ValueError("interpolation phase cannot exceed max_iters")
        if self.initial_step_rule not in ("cap", "unit"):
            raise ValueError(f"unknown initial step rule {self.initial_step_rule!r}")

    def initial_alpha(self, p: np.ndarray) -> float:
        if self.initial_step_rule == "unit":
            return 1.0
        pinf = float(np.max(np.abs(p)))
        if pinf == 0.0:
            raise ValueError("zero direction")
        return self.step_cap / pinf


class Budget:
    """PDE-solve budget counted against a ledger from the moment of creation."""

    def __init__(self, ledger, max_solves: int = 100):
        if max_solves < 1:
            raise ValueError("budget must allow at least one solve")
        self.ledger = ledger
        self.max_solves = max_solves
        self._base = ledger.snapshot()

    def used(self) -> int:
        return self.ledger.delta(self._base).total

    def exhausted(self) -> bool:
        return self.used() >= self.max_solves


@dataclass
class TraceRecord:
    """One accepted iterate in a run trace."""

    iter: int
    solves: int
    objective: float
    grad_norm: float
    model_error: float
    step: float
    ls_evals: int
    extra: str = ""


@dataclass
class RunResult:
    """Full trace of one optimizer run plus its final model."""

    name: str
    records: list
    status: str            # "budget", "stalled", or "converged"
    m_final: np.ndarray = field(repr=False)


def linesearch(objective, m, p, f0: float, g0: float, policy: LinesearchPolicy):
    """Find a step along p that strictly decreases the objective.

    Returns (alpha, m_new, f_new, evals); alpha = 0.0 and m_new = None when
    no trial decreased the objective (the caller should stop). Trials: the
    rule-based initial step, then up to quad_interp_phase steps placed at
    the minimizer of the quadratic through (0, f0, g0) and the latest trial
    (clamped to [0.1, 0.9] of it), then halving.
    """
    if g0 >= 0:
        raise ValueError(f"directional derivative {g0:.3e} is not a descent direction")
    alpha = policy.initial_alpha(p)
    evals = 0
    while evals < policy.max_iters:
        trial = m + alpha * p
        f_t = objective(trial)
        evals += 1
        if f_t < f0 + policy.armijo_c1 * alpha * g0:
            return alpha, trial, f_t, evals
        if evals <= policy.quad_interp_phase:
            # minimizer of the interpolating parabola; the denominator is
            # positive whenever the trial failed to decrease
            denom = f_t - f0 - g0 * alpha
            proposal = -g0 * alpha * alpha / (2.0 * denom)
            alpha = float(np.clip(proposal, 0.1 * alpha, 0.9 * alpha))
        else:
            alpha *= policy.armijo_factor
    return 0.0, None, f0, evals


class CurvatureModel:
    """Fixed operator M = diag(h0) + D^T D with exact solves and a damped
    Richardson sweep, shared by the three baseline optimizers."""

    def __init__(self, h0_diag: np.ndarray, reg):
        self.h0 = np.asarray(h0_diag, dtype=np.float64).ravel()
        if np.any(self.h0 <= 0):
            raise ValueError("diagonal curvature estimate must be positive")
        self.reg = reg
        matrix = sp.diags(self.h0) + reg.D.T @ reg.D
        self._lu = splu(matrix.tocsc())
        self._lambda_max = None

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.h0 * v + self.reg.hess_vec(v)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=np.float64))

    def lambda_max(self, iters: int = 20) -> float:
        """Largest eigenvalue by power iteration with a fixed start vector."""
        if self._lambda_max is None:
            rng = np.random.default_rng(0)
            v = rng.standard_normal(self.h0.size)
            v /= np.linalg.norm(v)
            est = 0.0
            for _ in range(iters):
                w = self.apply(v)
                est = float(np.dot(v, w))
                nw = np.linalg.norm(w)
                if nw == 0.0:
                    break
                v = w / nw
            self._lambda_max = est
        return self._lambda_max

    def richardson(self, b: np.ndarray, iters: int = 300) -> np.ndarray:
        """Fixed-iteration-count Richardson solve: linear in b by construction."""
        omega = 1.0 / self.lambda_max()
        x = np.zeros_like(b)
        for _ in range(iters):
            x += omega * (b - self.apply(x))
        return x


def admit_curvature_pair(pairs, s, y, tol: float = 1e-10) -> bool:
    """Append (s, y, 1/y^T s) unless the pair's curvature is not safely
    positive; returns whether the pair was admitted."""
    sy = float(np.dot(s, y))
    if sy <= tol * np.linalg.norm(s) * np.linalg.norm(y):
        return False
    pairs.append((s, y, 1.0 / sy))
    return True


def two_loop_apply(pairs, base_apply, grad: np.ndarray) -> np.ndarray:
    """Inverse-Hessian application from curvature pairs (most recent last),
    with base_apply supplying the action of the initial inverse."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    z = base_apply(q)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(np.dot(y, z))
        z += (a - b) * s
    return z


class _Run:
    """Bookkeeping shared by the optimizer drivers."""

    def __init__(self, name, problem, reg, budget, policy, m_start):
        self.name = name
        self.problem = problem
        self.reg = reg
        self.budget = budget
        self.policy = policy
        self.values = (np.array(m_start, dtype=np.float64).ravel().copy()
                       if m_start is not None else reg.m0.copy())
        self.records = []
        self.status = "budget"

    def model(self, values) -> ModelGrid:
        return ModelGrid(values, self.problem.grid.nx, self.problem.grid.ny)

    def objective(self, values) -> float:
        total, _ = self.problem.misfit_only(self.model(values))
        return total + self.reg.value(values)

    def eval_fg(self, values):
        """Objective with total gradient; also returns the raw report."""
        report = self.problem.misfit_and_gradients(self.model(values))
        f = report.total + self.reg.value(values)
        g = report.gradients.sum(axis=0) + self.reg.grad(values)
        return f, g, report

    def model_error(self) -> float:
        if self.problem.m_true is None:
            return float("nan")
        return float(np.linalg.norm(self.problem.m_true.values - self.values))

    def record(self, it, f, gnorm, step, ls_evals, extra=""):
        self.records.append(TraceRecord(
            iter=it, solves=self.budget.used(), objective=f, grad_norm=gnorm,
            model_error=self.model_error(), step=step, ls_evals=ls_evals,
            extra=extra,
        ))

    def result(self) -> RunResult:
        return RunResult(name=self.name, records=self.records,
                         status=self.status, m_final=self.values)


def run_nlcg(problem, reg, h0_diag, budget, policy=None, m_start=None) -> RunResult:
    """Preconditioned Polak-Ribiere+ nonlinear conjugate gradient.

    The preconditioner solves (diag(h0) + D^T D) z = grad F exactly through
    a sparse factorization; beta is clipped at zero and the direction is
    restarted to preconditioned steepest descent whenever it fails to be a
    descent direction.
    """
    policy = policy or LinesearchPolicy(initial_step_rule="cap")
    run = _Run("nlcg", problem, reg, budget, policy, m_start)
    curv = CurvatureModel(h0_diag, reg)

    f, g, _ = run.eval_fg(run.values)
    gnorm = float(np.linalg.norm(g))
    run.record(0, f, gnorm, 0.0, 0)
    p = None
    g_prev = z_prev = None
    it = 0
    while not budget.exhausted():
        if gnorm == 0.0:
            run.status = "converged"
            break
        z = curv.solve(g)
        if p is None:
            p = -z
        else:
            denom = float(np.dot(g_prev, z_prev))
            beta = max(0.0, float(np.dot(g - g_prev, z)) / denom)
            p = -z + beta * p
            if float(np.dot(p, g)) >= 0.0:
                p = -z  # restart
        g0 = float(np.dot(g, p))
        alpha, new_values, f_new, evals = linesearch(run.objective, run.values,
                                                     p, f, g0, policy)
        if new_values is None:
            run.status = "stalled"
            break
        run.values = new_values
        g_prev, z_prev = g, z
        f, g, _ = run.eval_fg(run.values)
        gnorm = float(np.linalg.norm(g))
        it += 1
        run.record(it, f, gnorm, alpha, evals)
    return run.result()


def run_lbfgs(problem, reg, h0_diag, budget, memory: int = 10, policy=None,
              m_start=None) -> RunResult:
    """L-BFGS with curvature-model initialization and direction smoothing.

    The two-loop recursion is seeded with exact solves of diag(h0) + D^T D.
    Each raw direction is then smoothed as p = mu * (D^T D)^{-1} p_raw, with
    mu = (lam nu)^2 so the constant mode is left untouched. If the smoothed
    direction fails to point downhill the memory is bypassed for that
    iteration in favor of smoothed steepest descent.
    """
    if memory < 1:
        raise ValueError("memory must be at least 1")
    policy = policy or LinesearchPolicy(initial_step_rule="cap")
    run = _Run("lbfgs", problem, reg, budget, policy, m_start)
    curv = CurvatureModel(h0_diag, reg)
    pairs = deque(maxlen=memory)  # (s, y, 1/(y^T s))

    f, g, _ = run.eval_fg(run.values)
    gnorm = float(np.linalg.norm(g))
    run.record(0, f, gnorm, 0.0, 0)
    it = 0
    while not budget.exhausted():
        if gnorm == 0.0:
            run.status = "converged"
            break
        p = -reg.mu * reg.solve_normal(two_loop_apply(pairs, curv.solve, g))
        g0 = float(np.dot(g, p))
        if g0 >= 0.0:
            p = -reg.mu * reg.solve_normal(g)
            g0 = float(np.dot(g, p))
        alpha, new_values, f_new, evals = linesearch(run.objective, run.values,
                                                     p, f, g0, policy)
        if new_values is None:
            run.status = "stalled"
            break
        s = new_values - run.values
        run.values = new_values
        f, g_new, _ = run.eval_fg(run.values)
        y = g_new - g
        admit_curvature_pair(pairs, s, y)
        g = g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
        run.record(it, f, gnorm, alpha, evals)
    return run.result()


def run_gncg(problem, reg, h0_diag, budget, policy=None, m_start=None,
             cg_tol: float = 1e-1, cg_maxiter: int = 5,
             richardson_iters: int = 300, retain_pairs: int = 20) -> RunResult:
    """Inexact Gauss-Newton-CG with a quasi-Newton preconditioner.

    Each inner CG iteration applies the true Gauss-Newton Hessian (2N PDE
    solves against cached wavefields) plus the regularizer Hessian. The
    preconditioner is an L-BFGS-style inverse assembled from (v, Hv) pairs
    harvested in earlier outer iterations; within one CG solve it stays
    fixed, keeping it a linear operator as CG requires. Its base case is a
    300-iteration Richardson sweep with the fixed curvature model.
    """
    if not 0.0 < cg_tol < 1.0:
        raise ValueError("cg_tol must lie in (0, 1)")
    policy = policy or LinesearchPolicy(initial_step_rule="unit")
    run = _Run("gncg", problem, reg, budget, policy, m_start)
    curv = CurvatureModel(h0_diag, reg)
    harvested = deque(maxlen=retain_pairs)  # (v, Hv, 1/(v^T Hv))

    def richardson_base(q):
        return curv.richardson(q, richardson_iters)

    def preconditioner(pairs_snapshot):
        return lambda r: two_loop_apply(pairs_snapshot, richardson_base, r)

    # gradient evaluations keep their wavefields for the inner CG solves
    report = problem.misfit_and_gradients(run.model(run.values), keep_fields=True)
    f = report.total + reg.value(run.values)
    g = report.gradients.sum(axis=0) + reg.grad(run.values)
    gnorm = float(np.linalg.norm(g))
    run.record(0, f, gnorm, 0.0, 0)
    it = 0
    while not budget.exhausted():
        if gnorm == 0.0:
            run.status = "converged"
            break
        # inner preconditioned CG on (H_gn + D^T D) p = -g
        precond = preconditioner(list(harvested))
        b = -g
        x = np.zeros_like(b)
        r = b.copy()
        z = precond(r)
        d = z
        rz = float(np.dot(r, z))
        bnorm = float(np.linalg.norm(b))
        inner = 0
        while inner < cg_maxiter and not budget.exhausted():
            hd = problem.gn_hessian_vec(run.model(run.values), d,
                                        fields=report.fields) + reg.hess_vec(d)
            dhd = float(np.dot(d, hd))
            if dhd <= 0.0:
                if inner == 0:
                    x = z  # fall back to the preconditioned gradient
                break
            admit_curvature_pair(harvested, d.copy(), hd)
            alpha_cg = rz / dhd
            x = x + alpha_cg * d
            r = r - alpha_cg * hd
            inner += 1
            if float(np.linalg.norm(r)) <= cg_tol * bnorm:
                break
            z_new = precond(r)
            rz_new = float(np.dot(r, z_new))
            d = z_new + (rz_new / rz) * d
            z, rz = z_new, rz_new
        if not np.any(x):
            run.status = "budget" if budget.exhausted() else "stalled"
            break
        p = x
        g0 = float(np.dot(g, p))
        if g0 >= 0.0:
            run.status = "stalled"
            break
        alpha, new_values, f_new, evals = linesearch(run.objective, run.values,
                                                     p, f, g0, policy)
        if new_values is None:
            run.status = "stalled"
            break
        run.values = new_values
        report = problem.misfit_and_gradients(run.model(run.values), keep_fields=True)
        f = report.total + reg.value(run.values)
        g = report.gradients.sum(axis=0) + reg.grad(run.values)
        gnorm = float(np.linalg.norm(g))
        it += 1
        run.record(it, f, gnorm, alpha, evals, extra=str(inner))
    return run.result()


def run_gogn(problem, reg, budget, policy=None, m_start=None,
             eps_phi: float = 0.0) -> RunResult:
    """Gradient-only Gauss-Newton: Gauss-Newton steps at gradient cost.

    Every iteration spends 2N solves on the gradient evaluation, builds the
    gradient-only Jacobian from the per-source values and gradients it
    already has, and solves for the step without touching the PDE again.
    The direction is provably a descent direction, so no preconditioning
    or smoothing is applied.
    """
    policy = policy or LinesearchPolicy(initial_step_rule="cap")
    run = _Run("gogn", problem, reg, budget, policy, m_start)

    report = problem.misfit_and_gradients(run.model(run.values))
    f = report.total + reg.value(run.values)
    g = report.gradients.sum(axis=0) + reg.grad(run.values)
    gnorm = float(np.linalg.norm(g))
    run.record(0, f, gnorm, 0.0, 0)
    it = 0
    while not budget.exhausted():
        if gnorm == 0.0:
            run.status = "converged"
            break
        J = assemble(report, eps_phi=eps_phi)
        step = step_woodbury(J, run.values, reg)
        if step.directional_derivative >= 0.0:
            # only possible when the gradient vanishes or the fallback step
            # is zero; nothing left to do
            run.status = "converged"
            break
        alpha, new_values, f_new, evals = linesearch(
            run.objective, run.values, step.p, f, step.directional_derivative,
            policy)
        if new_values is None:
            run.status = "stalled"
            break
        run.values = new_values
        report = problem.misfit_and_gradients(run.model(run.values))
        f = report.total + reg.value(run.values)
        g = report.gradients.sum(axis=0) + reg.grad(run.values)
        gnorm = float(np.linalg.norm(g))
        it += 1
        run.record(it, f, gnorm, alpha, evals, extra=f"{step.cond_estimate:.6e}")
    return run.result()
