"""Gradient-only Gauss-Newton step construction.

The misfit is recast as Phi = 0.5 * sum_i rho_i^2 with rho_i = sqrt(2 phi_i),
so the N x p Jacobian of the vector rho has rows grad(phi_i) / sqrt(2 phi_i).
Those rows come straight from the per-source gradients that any gradient
method already computes, so building the Gauss-Newton model costs zero
additional PDE solves. The step solves

    (J^T J + D^T D) p = -(J^T rho + D^T D (m - m0))

via the Woodbury identity: only an N x N dense system and N smoothing solves
are needed, never a p x p factorization beyond the one the regularizer
already holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .regularizer import SmoothingOperator


@dataclass
class GoJacobian:
    """Rows grad(phi_i) / rho_i for the active sources, zero rows otherwise."""

    rows: np.ndarray     # (N, p)
    rho: np.ndarray      # (N,)
    active: np.ndarray   # (N,) bool

    @property
    def n_active(self) -> int:
        return int(self.active.sum())


@dataclass
class GognStep:
    """A computed step direction with its small-system diagnostics."""

    p: np.ndarray
    n_small: int
    cond_estimate: float
    directional_derivative: float
    fallback: bool = False


def assemble(report, eps_phi: float = 0.0) -> GoJacobian:
    """Build the gradient-only Jacobian from a misfit report.

    Sources with phi_i > eps_phi contribute row grad(phi_i) / sqrt(2 phi_i);
    the rest get zero rows and are marked inactive. The default threshold
    keeps every source that is not exactly fit, since the row is finite
    (if large) for any phi_i > 0. Consumes no PDE solves.
    """
    if eps_phi < 0:
        raise ValueError("eps_phi must be non-negative")
    phi = np.asarray(report.phi, dtype=np.float64)
    grads = np.asarray(report.gradients, dtype=np.float64)
    active = phi > eps_phi
    rho = np.where(active, np.sqrt(2.0 * phi), 0.0)
    rows = np.zeros_like(grads)
    if np.any(active):
        rows[active] = grads[active] / rho[active, None]
    return GoJacobian(rows=rows, rho=rho, active=active)


def _gradient(J: GoJacobian, delta: np.ndarray, reg: SmoothingOperator) -> np.ndarray:
    """grad F = J^T rho + D^T D delta (identity J^T rho = sum grad(phi_i))."""
    return J.rows.T @ J.rho + reg.hess_vec(delta)


def step_woodbury(J: GoJacobian, m_k, reg: SmoothingOperator) -> GognStep:
    """Solve the Gauss-Newton system through the low-rank update formula.

    p = A J^T S (J delta - rho) - delta with A = (D^T D)^{-1} applied via
    the precomputed factorization and S = (I + J A J^T)^{-1} solved densely
    (N x N Cholesky). With no active rows the step degenerates to the pure
    regularization pull p = -delta, flagged as a fallback. No PDE solves.
    """
    values = m_k.values if hasattr(m_k, "values") else np.asarray(m_k, dtype=np.float64)
    delta = values.ravel() - reg.m0

    if J.n_active == 0:
        p = -delta
        grad = reg.hess_vec(delta)
        return GognStep(p=p, n_small=0, cond_estimate=1.0,
                        directional_derivative=float(np.dot(grad, p)),
                        fallback=True)

    rows = J.rows[J.active]
    rho = J.rho[J.active]
    n_a = rows.shape[0]

    ajt = np.column_stack([reg.solve_normal(rows[i]) for i in range(n_a)])
    small = np.eye(n_a) + rows @ ajt  # I + J A J^T, SPD by construction
    try:
        chol = scipy.linalg.cho_factor(small)
    except scipy.linalg.LinAlgError as exc:
        raise RuntimeError(
            f"low-rank system not SPD (cond ~ {np.linalg.cond(small):.3e}); "
            "this indicates a broken smoothing operator"
        ) from exc
    y = scipy.linalg.cho_solve(chol, rows @ delta - rho)
    p = ajt @ y - delta

    grad = _gradient(J, delta, reg)
    return GognStep(
        p=p,
        n_small=n_a,
        cond_estimate=float(np.linalg.cond(small)),
        directional_derivative=float(np.dot(grad, p)),
    )


def step_dense_oracle(J: GoJacobian, m_k, reg: SmoothingOperator) -> GognStep:
    """Reference path: explicitly assemble J^T J + D^T D and solve.

    Only for verification on small problems; guarded to p <= 2000.
    """
    values = m_k.values if hasattr(m_k, "values") else np.asarray(m_k, dtype=np.float64)
    values = values.ravel()
    if values.size > 2000:
        raise ValueError(f"dense oracle limited to 2000 parameters, got {values.size}")
    delta = values - reg.m0

    rows = J.rows[J.active]
    dtd = (reg.D.T @ reg.D).toarray()
    hess = rows.T @ rows + dtd
    grad = _gradient(J, delta, reg)
    p = np.linalg.solve(hess, -grad)

    if rows.shape[0] > 0:
        small = np.eye(rows.shape[0]) + rows @ np.linalg.solve(dtd, rows.T)
        cond = float(np.linalg.cond(small))
    else:
        cond = 1.0
    return GognStep(
        p=p,
        n_small=rows.shape[0],
        cond_estimate=cond,
        directional_derivative=float(np.dot(grad, p)),
        fallback=J.n_active == 0,
    )
