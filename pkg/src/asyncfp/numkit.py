"""Dense linear algebra kernels: sum-constrained least squares for the
extrapolation coefficients, a cyclic-Jacobi symmetric eigensolver, and a
full-memory GMRES used as an independent reference in tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COND_DROP_THRESHOLD = 1e12


@dataclass(frozen=True)
class LsSolution:
    """Coefficients of the sum-to-one residual minimization."""

    coefficients: np.ndarray   # one weight per history entry, oldest first
    residual_norm: float
    dropped_columns: int


def solve_constrained_ls(residual_history, regularization: float = 0.0) -> LsSolution:
    """Minimize ||sum_j a_j r_j||_2 subject to sum_j a_j = 1.

    The constraint is eliminated through the difference reformulation:
    with dR[:, i] = r_{i+1} - r_i the combined residual equals
    r_last - dR @ g for unconstrained g, solved by QR. When the difference
    matrix has a condition estimate above 1e12, the oldest columns are
    dropped (their history entries get weight zero) until it is tame.

    residual_history is ordered oldest first. regularization >= 0 adds a
    Tikhonov penalty on g.
    """
    if len(residual_history) == 0:
        raise ValueError("residual history is empty")
    if regularization < 0:
        raise ValueError("regularization must be nonnegative")
    vectors = [np.asarray(r, dtype=float).ravel() for r in residual_history]
    dim = vectors[0].size
    for v in vectors:
        if v.size != dim:
            raise ValueError("residual vectors have mismatched lengths")
        if not np.all(np.isfinite(v)):
            raise ValueError("residual history contains non-finite values")

    m = len(vectors) - 1
    if m == 0:
        return LsSolution(np.array([1.0]), float(np.linalg.norm(vectors[0])), 0)

    R = np.stack(vectors, axis=1)          # dim x (m+1)
    dR = np.diff(R, axis=1)                # dim x m
    dropped = 0
    while dR.shape[1] > 1 and np.linalg.cond(dR) > COND_DROP_THRESHOLD:
        dR = dR[:, 1:]
        dropped += 1

    r_last = R[:, -1]
    if regularization > 0.0:
        k = dR.shape[1]
        stacked = np.vstack([dR, np.sqrt(regularization) * np.eye(k)])
        rhs = np.concatenate([r_last, np.zeros(k)])
        q, rr = np.linalg.qr(stacked)
    else:
        q, rr = np.linalg.qr(dR)
        rhs = r_last
    # rr can still be numerically singular for a rank-deficient window
    diag = np.abs(np.diag(rr))
    if dR.shape[1] > 0 and (diag.min() == 0.0 or not np.all(np.isfinite(rr))):
        gamma, *_ = np.linalg.lstsq(dR, r_last, rcond=None)
    else:
        gamma = np.linalg.solve(rr, q.T @ rhs)

    k = dR.shape[1]
    alpha_active = np.empty(k + 1)
    alpha_active[0] = gamma[0]
    for i in range(1, k):
        alpha_active[i] = gamma[i] - gamma[i - 1]
    alpha_active[k] = 1.0 - gamma[k - 1]

    alpha = np.zeros(m + 1)
    alpha[dropped:] = alpha_active
    residual = float(np.linalg.norm(R @ alpha))
    return LsSolution(alpha, residual, dropped)


def sym_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvectors as columns). Each
    eigenvector is normalized so its first component of nonnegligible
    magnitude is positive. Sweeps stop once the off-diagonal Frobenius
    norm falls below 1e-12 * ||a||_F.
    """
    A = np.array(a, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains non-finite entries")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(A), initial=0.0)):
        raise ValueError("matrix is not symmetric within tolerance")
    n = A.shape[0]
    if n == 1:
        return A[0].copy(), np.array([[1.0]])

    A = 0.5 * (A + A.T)
    V = np.eye(n)
    norm_a = np.linalg.norm(A)
    if norm_a == 0.0:
        return np.zeros(n), V

    def offdiag(mat):
        off = mat.copy()
        np.fill_diagonal(off, 0.0)
        return np.linalg.norm(off)

    converged = False
    for _ in range(60):
        if offdiag(A) <= 1e-12 * norm_a:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = A[:, p].copy()
                rot_q = A[:, q].copy()
                A[:, p] = c * rot_p - s * rot_q
                A[:, q] = s * rot_p + c * rot_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    if not converged and offdiag(A) > 1e-12 * norm_a:
        raise RuntimeError("jacobi eigensolver did not converge in 60 sweeps")

    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    V = V[:, order]
    for j in range(n):
        col = V[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        lead = nz[0] if nz.size else 0
        if col[lead] < 0:
            V[:, j] = -col
    return w, V


def gmres_reference(a_apply, b, max_iters: int) -> list[float]:
    """Full-memory GMRES from a zero initial guess; returns the residual
    norm after each iteration, starting with ||b||.

    a_apply is a callback computing the operator-vector product. On happy
    breakdown the history up to the breakdown is returned.
    """
    b = np.asarray(b, dtype=float).ravel()
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite values")
    beta = float(np.linalg.norm(b))
    history = [beta]
    if beta == 0.0 or max_iters <= 0:
        return history

    n = b.size
    V = [b / beta]
    H = np.zeros((max_iters + 1, max_iters))
    cs = np.zeros(max_iters)
    sn = np.zeros(max_iters)
    g = np.zeros(max_iters + 1)
    g[0] = beta

    for j in range(max_iters):
        w = np.asarray(a_apply(V[j]), dtype=float).ravel()
        for i in range(j + 1):
            H[i, j] = V[i] @ w
            w = w - H[i, j] * V[i]
        H[j + 1, j] = np.linalg.norm(w)

        for i in range(j):
            hij = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = hij
        denom = np.hypot(H[j, j], H[j + 1, j])
        if denom == 0.0:
            break
        cs[j] = H[j, j] / denom
        sn[j] = H[j + 1, j] / denom
        H[j, j] = denom
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        history.append(abs(float(g[j + 1])))

        if H[j + 1, j] <= 1e-14 * max(1.0, beta) or abs(g[j + 1]) <= 1e-300:
            break
        if j + 1 < max_iters:
            V.append(w / H[j + 1, j])
    return history
