"""Compiled inner loops for the iterative proximal mappings."""

import numpy as np
from numba import njit

ADMM_OK = 0
ADMM_MAXITER = 1

NEWTON_OK = 0
NEWTON_MAXITER = 1
NEWTON_OVERFLOW = 2


@njit(cache=True)
def _soft(v, t):
    out = np.empty_like(v)
    for i in range(v.shape[0]):
        a = abs(v[i])
        out[i] = 0.0 if a <= t else (a - t) * (1.0 if v[i] > 0 else -1.0)
    return out


@njit(cache=True)
def genlasso_objective(eta, z, D, tau):
    r = eta - z
    return 0.5 * np.dot(r, r) + tau * np.sum(np.abs(D @ eta))


@njit(cache=True)
def _polish_pattern(z, D, tau, pattern):
    """Solve the equality-constrained QP implied by a sign ``pattern`` of ``D eta``.

    Entries with ``pattern == 0`` are constrained to ``D_j eta = 0``; the rest
    carry the fixed subgradient ``tau * pattern[j]``.  Returns ``(eta, u,
    d_eta)`` where ``u`` is the full dual vector.
    """
    q, m = D.shape
    y = z.copy()
    n_zero = 0
    for j in range(q):
        if pattern[j] != 0:
            y -= tau * pattern[j] * D[j]
        else:
            n_zero += 1
    u = tau * pattern.astype(np.float64)
    eta = y
    if n_zero > 0:
        C = np.empty((n_zero, m))
        idx = np.empty(n_zero, dtype=np.int64)
        k = 0
        for j in range(q):
            if pattern[j] == 0:
                C[k] = D[j]
                idx[k] = j
                k += 1
        v = np.linalg.solve(C @ C.T, C @ y)
        eta = y - C.T @ v
        for i in range(n_zero):
            u[idx[i]] = v[i]
    return eta, u, D @ eta


@njit(cache=True)
def _polish(z, D, tau, w, rounds):
    """Polish the sparsity pattern of ``w`` into an exact solution.

    Starts from the sign pattern of the ADMM split variable and applies up to
    ``rounds`` primal-dual active-set corrections: zero-set entries whose dual
    exceeds ``tau`` are released, and free entries whose difference has the
    wrong sign are fused.  Returns ``(eta, certified)``; ``certified`` is True
    when the KKT conditions of the full problem hold at ``eta``.
    """
    q = D.shape[0]
    pattern = np.zeros(q, dtype=np.int64)
    for j in range(q):
        if w[j] > 0:
            pattern[j] = 1
        elif w[j] < 0:
            pattern[j] = -1
    bound = tau * (1.0 + 1e-9) + 1e-13
    eta = z
    for _ in range(rounds + 1):
        eta, u, d_eta = _polish_pattern(z, D, tau, pattern)
        changed = False
        for j in range(q):
            if pattern[j] == 0:
                if abs(u[j]) > bound:
                    pattern[j] = 1 if u[j] > 0 else -1
                    changed = True
            elif d_eta[j] * pattern[j] <= 0.0:
                pattern[j] = 0
                changed = True
        if not changed:
            return eta, True
    return eta, False


@njit(cache=True)
def band_dmul(coef, x):
    """``D @ x`` for a difference matrix whose rows are shifts of ``coef``."""
    w = coef.shape[0]
    q = x.shape[0] - w + 1
    out = np.zeros(q)
    for j in range(q):
        acc = 0.0
        for l in range(w):
            acc += coef[l] * x[j + l]
        out[j] = acc
    return out


@njit(cache=True)
def band_dtmul(coef, v, m):
    """``D.T @ v`` for the same banded difference matrix."""
    w = coef.shape[0]
    out = np.zeros(m)
    for j in range(v.shape[0]):
        vj = v[j]
        for l in range(w):
            out[j + l] += coef[l] * vj
    return out


@njit(cache=True)
def band_cholesky_solve(Lb, b):
    """Solve ``L L' x = b`` with ``L`` lower banded, ``Lb[i, j] = L[i, i - j]``."""
    m, bw = Lb.shape
    y = np.empty(m)
    for i in range(m):
        acc = b[i]
        for j in range(1, min(bw, i + 1)):
            acc -= Lb[i, j] * y[i - j]
        y[i] = acc / Lb[i, 0]
    x = np.empty(m)
    for i in range(m - 1, -1, -1):
        acc = y[i]
        for j in range(1, min(bw, m - i)):
            acc -= Lb[i + j, j] * x[i + j]
        x[i] = acc / Lb[i, 0]
    return x


@njit(cache=True)
def admm_genlasso(z, coef, Lb, D, tau, rho, tol, max_iter, check_every, rounds):
    """ADMM for ``min 0.5 ||eta - z||^2 + tau ||D eta||_1`` (scaled form).

    ``coef`` holds one row pattern of the banded ``D``; ``Lb`` is the banded
    Cholesky factor of ``I + rho D'D``.  Every ``check_every`` iterations the
    sparsity pattern of the split variable is polished into an exact
    candidate, and iteration stops early when that candidate satisfies the
    KKT conditions.  ``rounds`` bounds the active-set corrections per polish.

    Returns ``(eta, status, iterations, primal_residual, dual_residual, polished)``.
    """
    m = z.shape[0]
    w = _soft(band_dmul(coef, z), tau / rho)
    u = np.zeros(w.shape[0])
    eta = z.copy()
    r_norm = np.inf
    s_norm = np.inf
    for it in range(1, max_iter + 1):
        eta = band_cholesky_solve(Lb, z + rho * band_dtmul(coef, w - u, m))
        d_eta = band_dmul(coef, eta)
        w_old = w
        w = _soft(d_eta + u, tau / rho)
        u = u + d_eta - w
        r_norm = np.sqrt(np.sum((d_eta - w) ** 2))
        s_norm = rho * np.sqrt(np.sum(band_dtmul(coef, w - w_old, m) ** 2))
        if r_norm < tol and s_norm < tol:
            cand, ok = _polish(z, D, tau, w, rounds)
            if ok:
                return cand, ADMM_OK, it, r_norm, s_norm, True
            return eta, ADMM_OK, it, r_norm, s_norm, False
        if it % check_every == 0:
            cand, ok = _polish(z, D, tau, w, rounds)
            if ok:
                return cand, ADMM_OK, it, r_norm, s_norm, True
    return eta, ADMM_MAXITER, max_iter, r_norm, s_norm, False


@njit(cache=True)
def poisson_objective(eta, mu, u_eta, u_mu, n, ysum, s2, c2, lam):
    I = eta.shape[0]
    psi = (
        np.sum(eta * eta) / (2.0 * s2)
        - mu * np.sum(eta) / s2
        + np.sum(n * np.exp(eta))
        - np.sum(eta * ysum)
        + 0.5 * mu * mu * (I / s2 + 1.0 / c2)
    )
    d = np.sum((eta - u_eta) ** 2) + (mu - u_mu) ** 2
    return psi + d / (2.0 * lam)


@njit(cache=True)
def _poisson_fgrad(eta, mu, u_eta, u_mu, n, ysum, s2, c2, lam):
    I = eta.shape[0]
    g = np.empty(I + 1)
    e = n * np.exp(eta)
    g[:I] = eta / s2 - mu / s2 + e - ysum + (eta - u_eta) / lam
    g[I] = mu * (I / s2 + 1.0 / c2) - np.sum(eta) / s2 + (mu - u_mu) / lam
    return g, e


@njit(cache=True)
def newton_poisson(u, n, ysum, s2, c2, lam, tol, max_iter, max_halvings):
    """Alternating diagonal Newton step on ``eta`` and closed-form ``mu`` update.

    The stopping rule is ``|grad| < tol * scale`` where ``scale`` is the
    magnitude of the terms that enter the gradient, so the tolerance stays
    above double-precision round-off for large counts or small ``lam``.

    Returns ``(v, status, iterations, grad_norm)``.
    """
    I = n.shape[0]
    u_eta = u[:I]
    u_mu = u[I]
    scale = 1.0 + np.max(np.abs(u)) / lam + np.max(ysum)
    eta = u_eta.copy()
    mu = u_mu
    denom = I / s2 + 1.0 / c2 + 1.0 / lam
    v = np.empty(I + 1)
    gnorm = np.inf
    for it in range(max_iter + 1):
        g, e = _poisson_fgrad(eta, mu, u_eta, u_mu, n, ysum, s2, c2, lam)
        gnorm = np.sqrt(np.sum(g * g))
        if not np.isfinite(gnorm):
            v[:I] = eta
            v[I] = mu
            return v, NEWTON_OVERFLOW, it, gnorm
        if gnorm < tol * scale:
            v[:I] = eta
            v[I] = mu
            return v, NEWTON_OK, it, gnorm
        if it == max_iter:
            break
        hess = 1.0 / s2 + e + 1.0 / lam
        for i in range(I):
            if not np.isfinite(hess[i]):
                v[:I] = eta
                v[I] = mu
                return v, NEWTON_OVERFLOW, it, gnorm
        step = g[:I] / hess
        f0 = poisson_objective(eta, mu, u_eta, u_mu, n, ysum, s2, c2, lam)
        slack = 1e-13 * (1.0 + abs(f0))
        t = 1.0
        new_eta = eta - step
        for _ in range(max_halvings):
            f1 = poisson_objective(new_eta, mu, u_eta, u_mu, n, ysum, s2, c2, lam)
            if f1 <= f0 + slack:
                break
            t *= 0.5
            new_eta = eta - t * step
        eta = new_eta
        mu = (np.sum(eta) / s2 + u_mu / lam) / denom
    v[:I] = eta
    v[I] = mu
    return v, NEWTON_MAXITER, max_iter, gnorm
