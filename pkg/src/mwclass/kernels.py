"""Inner numeric loops.

Every function here is written in the numpy subset numba understands, so the
same body runs compiled (default) or interpreted (``MWCLASS_DISABLE_NUMBA=1``).
"""
import numpy as np

from ._accel import jit


# ---------------------------------------------------------------- distances

@jit
def cross_class_distances(Xpos, Xneg):
    """All ``len(Xpos) * len(Xneg)`` Euclidean distances between the rows."""
    npos = Xpos.shape[0]
    nneg = Xneg.shape[0]
    out = np.empty(npos * nneg)
    for a in range(npos):
        for b in range(nneg):
            diff = Xpos[a] - Xneg[b]
            out[a * nneg + b] = np.sqrt(np.sum(diff * diff))
    return out


# ---------------------------------------------------------------- DWD

@jit
def dwd_loss(u, C):
    """Per-sample DWD loss with the slack minimized out.

    ``1/u`` above ``1/sqrt(C)``, the tangent line ``2 sqrt(C) - C u`` below.
    """
    sc = np.sqrt(C)
    tau = 1.0 / sc
    return np.where(u >= tau, 1.0 / np.maximum(u, tau), 2.0 * sc - C * u)


@jit
def dwd_slack(u, C):
    return np.maximum(0.0, 1.0 / np.sqrt(C) - u)


@jit
def _dwd_barrier_value(Z, y, a, beta, C, t):
    s = np.dot(a, a)
    if s >= 1.0:
        return np.inf
    u = y * (Z @ a + beta)
    return t * np.sum(dwd_loss(u, C)) - np.log(1.0 - s)


@jit
def dwd_barrier_newton(Z, y, C, tol, max_iter):
    """Log-barrier Newton method for the DWD program in sample coordinates.

    Minimizes ``sum_i V_C(y_i (z_i . a + beta))`` over ``|a| <= 1``.
    Returns ``(a, beta, objective, newton_steps, gap_bound, converged)``;
    ``gap_bound`` bounds the distance to the optimal objective.
    """
    n, k = Z.shape
    sc = np.sqrt(C)
    tau = 1.0 / sc
    A = np.empty((n, k + 1))
    for i in range(n):
        for j in range(k):
            A[i, j] = y[i] * Z[i, j]
        A[i, k] = y[i]
    x = np.zeros(k + 1)
    t = 1.0
    steps = 0
    converged = False
    f = np.sum(dwd_loss(np.zeros(n), C))
    xn = x.copy()
    while steps < max_iter:
        centered = False
        while steps < max_iter:
            a = x[:k]
            s = np.dot(a, a)
            u = A @ x
            above = u >= tau
            um = np.maximum(u, tau)
            g1 = np.where(above, -1.0 / (um * um), -C)
            h1 = np.where(above, 2.0 / (um * um * um), 0.0)
            grad = t * (A.T @ g1)
            H = t * (A.T @ (A * h1.reshape(n, 1)))
            inv = 1.0 / (1.0 - s)
            for j in range(k):
                grad[j] += 2.0 * a[j] * inv
                H[j, j] += 2.0 * inv
                for l in range(k):
                    H[j, l] += 4.0 * a[j] * a[l] * inv * inv
            scale = 0.0
            for j in range(k + 1):
                scale += H[j, j]
            scale = max(1.0, scale / (k + 1))
            phi0 = _dwd_barrier_value(Z, y, a, x[k], C, t)
            # Levenberg-Marquardt damping: the loss is linear in beta while
            # every margin is below tau, so H can be singular there
            mu = 1e-12 * scale
            accepted = False
            centered = False
            while mu < 1e12 * scale:
                Hd = H.copy()
                for j in range(k + 1):
                    Hd[j, j] += mu
                d = -np.linalg.solve(Hd, grad)
                dec = -np.dot(grad, d)
                if dec * 0.5 <= 1e-10:
                    centered = True
                    break
                # largest step keeping |a + h da| < 1
                da = d[:k]
                qa = np.dot(da, da)
                hmax = 1.0
                if qa > 0.0:
                    qb = np.dot(a, da)
                    root = (-qb + np.sqrt(qb * qb + qa * (1.0 - s))) / qa
                    hmax = min(1.0, 0.99 * root)
                h = hmax
                while h > 1e-6:
                    xn = x + h * d
                    phi = _dwd_barrier_value(Z, y, xn[:k], xn[k], C, t)
                    if phi <= phi0 - 0.25 * h * dec:
                        accepted = True
                        break
                    h *= 0.5
                if accepted:
                    break
                mu = max(mu * 100.0, 1e-8 * scale)
            steps += 1
            if not accepted:
                break
            x = xn
        if not centered:
            # centering stalled; the 1/t gap bound does not apply
            f = np.sum(dwd_loss(A @ x, C))
            break
        f = np.sum(dwd_loss(A @ x, C))
        gap = 1.0 / t
        if gap <= tol * max(1.0, f):
            converged = True
            break
        t *= 10.0
    return x[:k].copy(), x[k], f, steps, 1.0 / t, converged


# ---------------------------------------------------------------- SVM

@jit
def svm_smo(K, y, Cbox, tol, max_iter):
    """SMO with second-order working-set selection for the C-SVM dual.

    ``max 1'a - a'Qa/2`` with ``Q = yy' * K``, ``0 <= a <= Cbox``, ``y'a = 0``.
    Returns ``(alpha, rho, iterations, kkt_gap, converged)``; the decision
    function is ``sum_i alpha_i y_i K(x_i, x) - rho``.
    """
    n = K.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.empty(n)
    for i in range(n):
        QD[i] = K[i, i]
    eps = 1e-12
    it = 0
    gap = np.inf
    converged = False
    while it < max_iter:
        Gmax = -np.inf
        Gmax2 = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < Cbox and -G[t] >= Gmax:
                    Gmax = -G[t]
                    i = t
            else:
                if alpha[t] > 0.0 and G[t] >= Gmax:
                    Gmax = G[t]
                    i = t
        j = -1
        obj_min = np.inf
        for t in range(n):
            if i < 0:
                break
            Qit = y[i] * y[t] * K[i, t]
            if y[t] > 0:
                if alpha[t] > 0.0:
                    gd = Gmax + G[t]
                    if G[t] >= Gmax2:
                        Gmax2 = G[t]
                    if gd > 0.0:
                        quad = QD[i] + QD[t] - 2.0 * y[i] * Qit
                        od = -(gd * gd) / max(quad, eps)
                        if od <= obj_min:
                            obj_min = od
                            j = t
            else:
                if alpha[t] < Cbox:
                    gd = Gmax - G[t]
                    if -G[t] >= Gmax2:
                        Gmax2 = -G[t]
                    if gd > 0.0:
                        quad = QD[i] + QD[t] + 2.0 * y[i] * Qit
                        od = -(gd * gd) / max(quad, eps)
                        if od <= obj_min:
                            obj_min = od
                            j = t
        gap = Gmax + Gmax2
        if gap < tol or j < 0:
            converged = True
            break
        it += 1
        Qij = y[i] * y[j] * K[i, j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * Qij
            if quad <= 0.0:
                quad = eps
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0.0:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0.0:
                if alpha[i] > Cbox:
                    alpha[i] = Cbox
                    alpha[j] = Cbox - diff
            else:
                if alpha[j] > Cbox:
                    alpha[j] = Cbox
                    alpha[i] = Cbox + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Qij
            if quad <= 0.0:
                quad = eps
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > Cbox:
                if alpha[i] > Cbox:
                    alpha[i] = Cbox
                    alpha[j] = total - Cbox
            else:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > Cbox:
                if alpha[j] > Cbox:
                    alpha[j] = Cbox
                    alpha[i] = total - Cbox
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = alpha[i] - ai_old
        dj = alpha[j] - aj_old
        for t in range(n):
            G[t] += y[t] * (y[i] * K[i, t] * di + y[j] * K[j, t] * dj)
    # rho from free vectors, midpoint of the feasible range otherwise
    ub = np.inf
    lb = -np.inf
    sfree = 0.0
    nfree = 0
    for t in range(n):
        yg = y[t] * G[t]
        at_upper = alpha[t] >= Cbox
        at_lower = alpha[t] <= 0.0
        if at_upper:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif at_lower:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    if nfree > 0:
        rho = sfree / nfree
    else:
        rho = 0.5 * (ub + lb)
    return alpha, rho, it, gap, converged
