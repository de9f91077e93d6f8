"""Box-and-inequality constrained convex QP by augmented Lagrangian.

Solves  min 0.5 x'Hx + c'x  s.t.  lb <= x <= ub,  Gx <= h.

Box bounds are folded in as rows. Each outer iteration minimizes the
augmented Lagrangian, a convex piecewise quadratic, with a semismooth Newton
method (generalized Hessian H + mu G_A'G_A over the rows that are currently
active, exact line search along each direction). Newton steps are insensitive to the poor
conditioning that long position-type rows introduce, which is why this is
used instead of a first-order inner loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    max_violation: float
    outer_iterations: int
    inner_iterations: int
    converged: bool


def _line_min(dHd, gd, m, Gd, mu, t0=1.0, iters=60):
    """Minimize the piecewise quadratic phi(t) along a search direction.

    phi'(t) = gd + t*dHd + sum_i Gd_i * max(0, m_i + mu*t*Gd_i) is monotone, so
    a safeguarded Newton iteration on phi' converges in a few steps.
    """

    def deriv(t):
        z = m + mu * t * Gd
        act = z > 0
        return gd + t * dHd + Gd[act] @ z[act], dHd + mu * (Gd[act] @ Gd[act])

    lo, hi = 0.0, None
    t = t0
    for _ in range(iters):
        g, curv = deriv(t)
        if g > 0:
            hi = t
        else:
            lo = t
        if abs(g) <= 1e-14 * (1.0 + abs(gd)):
            break
        nxt = t - g / curv if curv > 0 else np.inf
        if hi is None:
            t = nxt if np.isfinite(nxt) and nxt > lo else 2.0 * max(t, 1.0)
        elif lo < nxt < hi:
            t = nxt
        else:
            t = 0.5 * (lo + hi)
        if hi is not None and hi - lo <= 1e-15 * max(1.0, hi):
            break
    return t


def _newton(H, c, G, h, lam, mu, x, grad_tol, max_inner, reg):
    """Minimize 0.5x'Hx + c'x + 1/(2mu) sum max(0, lam + mu(Gx - h))^2."""
    n = x.size
    it = 0
    for it in range(1, max_inner + 1):
        m = lam + mu * (G @ x - h)
        act = m > 0
        grad = H @ x + c + G[act].T @ m[act]
        if np.max(np.abs(grad), initial=0.0) <= grad_tol:
            break
        Ga = G[act]
        hess = H + mu * Ga.T @ Ga + reg * np.eye(n)
        try:
            d = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        gd = grad @ d
        if gd >= 0:
            d, gd = -grad, -(grad @ grad)
        Hd = H @ d
        # phi(x + t d) with grad @ d split into its smooth and penalty parts
        smooth = (H @ x + c) @ d
        t = _line_min(d @ Hd, smooth, m, G @ d, mu)
        step = t * d
        x = x + step
        if np.max(np.abs(step)) <= 1e-15 * max(1.0, np.max(np.abs(x))):
            break
    return x, it


def solve_qp(
    H: np.ndarray,
    c: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    G: np.ndarray | None = None,
    h: np.ndarray | None = None,
    x0: np.ndarray | None = None,
    feas_tol: float = 1e-8,
    grad_tol: float = 1e-9,
    mu0: float = 10.0,
    max_outer: int = 40,
    max_inner: int = 100,
    mu_max: float = 1e10,
) -> QPResult:
    n = c.size
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    if G is None or np.size(G) == 0:
        G = np.zeros((0, n))
        h = np.zeros(0)
    lb = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
    ub = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
    eye = np.eye(n)
    fin_lo, fin_hi = np.isfinite(lb), np.isfinite(ub)
    A = np.vstack([np.asarray(G, dtype=float), eye[fin_hi], -eye[fin_lo]])
    b = np.concatenate([np.asarray(h, dtype=float), ub[fin_hi], -lb[fin_lo]])
    # unit-norm rows keep the penalty curvature comparable across constraints
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    A = A / norms[:, None]
    b = b / norms

    x = np.clip(x0 if x0 is not None else np.where(fin_lo & fin_hi, 0.5 * (lb + ub), 0.0), lb, ub).astype(float)
    lam = np.zeros(A.shape[0])
    mu = mu0
    reg = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H)), initial=1.0)))
    prev_viol = np.inf
    inner_total = 0
    converged = False

    outer = 0
    for outer in range(1, max_outer + 1):
        x, used = _newton(H, c, A, b, lam, mu, x, grad_tol, max_inner, reg)
        inner_total += used
        g = A @ x - b
        viol = float(np.max(g, initial=0.0))
        lam = np.maximum(0.0, lam + mu * g)
        if viol <= feas_tol:
            # KKT stationarity with the updated multipliers
            stat = H @ x + c + A.T @ lam
            if np.max(np.abs(stat), initial=0.0) <= 1e-6 * max(1.0, np.max(np.abs(x), initial=0.0)):
                converged = True
                break
        if viol > 0.25 * prev_viol:
            if mu >= mu_max:
                # violation no longer responds to the penalty: treat as infeasible
                break
            mu *= 10.0
        prev_viol = max(viol, feas_tol)

    x = np.clip(x, lb, ub)
    gh = (np.asarray(G, dtype=float) @ x - np.asarray(h, dtype=float)) if G.shape[0] else np.zeros(0)
    return QPResult(
        x=x,
        objective=float(0.5 * x @ H @ x + c @ x),
        max_violation=float(np.max(gh, initial=0.0)),
        outer_iterations=outer,
        inner_iterations=inner_total,
        converged=converged,
    )
