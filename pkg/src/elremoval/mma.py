"""Method of moving asymptotes.

Problem form::

    min  f0(x) + a0 z + sum_i (c_i y_i + d_i y_i^2 / 2)
    s.t. f_i(x) - a_i z - y_i <= 0,   xmin <= x <= xmax,   y, z >= 0

The convex subproblem is solved either through its dual (``solver="dual"``,
the default: bisection for one constraint, projected Newton otherwise) or by
the primal-dual interior-point method (``solver="interior"``). The dual
route keeps z = 0, which is what the default a = 0 allows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MMASettings:
    asyinit: float = 0.1
    asyincr: float = 1.05
    asydecr: float = 0.65
    move: float = 0.1
    albefa: float = 0.1
    raa0: float = 1e-5
    epsimin: float = 1e-9
    c: float = 1000.0
    d: float = 1.0
    a0: float = 1.0
    solver: str = "dual"  # "dual" or "interior"


@dataclass
class MMAState:
    """Iteration history the asymptote update needs."""

    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    iteration: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class Subproblem:
    low: np.ndarray
    upp: np.ndarray
    alfa: np.ndarray
    beta: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    b: np.ndarray
    a0: float
    a: np.ndarray
    c: np.ndarray
    d: np.ndarray


def build_subproblem(x, df0dx, fval, dfdx, xmin, xmax, state: MMAState, s: MMASettings) -> Subproblem:
    x = np.asarray(x, dtype=float)
    n = x.size
    fval = np.atleast_1d(np.asarray(fval, dtype=float))
    dfdx = np.atleast_2d(np.asarray(dfdx, dtype=float))
    m = fval.size
    span = xmax - xmin
    k = state.iteration + 1
    if k <= 2 or state.low is None:
        low = x - s.asyinit * span
        upp = x + s.asyinit * span
    else:
        sign = (x - state.xold1) * (state.xold1 - state.xold2)
        factor = np.ones(n)
        factor[sign > 0] = s.asyincr
        factor[sign < 0] = s.asydecr
        low = x - factor * (state.xold1 - state.low)
        upp = x + factor * (state.upp - state.xold1)
        low = np.clip(low, x - 10 * span, x - 0.01 * span)
        upp = np.clip(upp, x + 0.01 * span, x + 10 * span)
    alfa = np.maximum.reduce([low + s.albefa * (x - low), x - s.move * span, xmin])
    beta = np.minimum.reduce([upp - s.albefa * (upp - x), x + s.move * span, xmax])
    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    inv_span = 1.0 / np.maximum(span, 1e-5)
    p0 = ux2 * (1.001 * np.maximum(df0dx, 0) + 0.001 * np.maximum(-df0dx, 0) + s.raa0 * inv_span)
    q0 = xl2 * (0.001 * np.maximum(df0dx, 0) + 1.001 * np.maximum(-df0dx, 0) + s.raa0 * inv_span)
    P = ux2 * (1.001 * np.maximum(dfdx, 0) + 0.001 * np.maximum(-dfdx, 0) + s.raa0 * inv_span)
    Q = xl2 * (0.001 * np.maximum(dfdx, 0) + 1.001 * np.maximum(-dfdx, 0) + s.raa0 * inv_span)
    b = P @ (1 / (upp - x)) + Q @ (1 / (x - low)) - fval
    return Subproblem(low, upp, alfa, beta, p0, q0, P, Q, b, s.a0, np.zeros(m), np.full(m, s.c), np.full(m, s.d))


def mma_update(x, df0dx, fval, dfdx, state: MMAState, settings: MMASettings | None = None,
               xmin=0.0, xmax=1.0) -> tuple[np.ndarray, MMAState, dict]:
    """One MMA step. With no constraints a dummy inactive one is added.

    Returns (new x, updated state, info) where info holds the subproblem's
    slack ``y`` (nonzero when the linearized constraints could not be met).
    """
    s = settings or MMASettings()
    x = np.asarray(x, dtype=float)
    n = x.size
    xmin = np.broadcast_to(np.asarray(xmin, dtype=float), (n,)).copy()
    xmax = np.broadcast_to(np.asarray(xmax, dtype=float), (n,)).copy()
    fval = np.atleast_1d(np.asarray(fval, dtype=float))
    dfdx = np.asarray(dfdx, dtype=float).reshape(fval.size, n) if fval.size else np.zeros((0, n))
    if fval.size == 0:
        fval = np.array([-1.0])
        dfdx = np.zeros((1, n))
    df0dx = np.asarray(df0dx, dtype=float)
    if not (np.all(np.isfinite(df0dx)) and np.all(np.isfinite(dfdx)) and np.all(np.isfinite(fval))):
        raise ValueError("MMA needs finite function values and gradients")
    sub = build_subproblem(x, df0dx, fval, dfdx, xmin, xmax, state, s)
    if s.solver == "dual":
        xnew, y, z, lam = dual_solve(sub, s.epsimin)
    else:
        xnew, y, z, lam = subsolv(sub, s.epsimin)
    new_state = MMAState(xold1=x.copy(), xold2=None if state.xold1 is None else state.xold1.copy(),
                         low=sub.low, upp=sub.upp, iteration=state.iteration + 1)
    info = {"y": y, "z": z, "lam": lam, "relaxed": bool(np.any(y > 1e-6))}
    return xnew, new_state, info


def subsolv(sp: Subproblem, epsimin: float = 1e-9):
    """Primal-dual Newton method on the convex separable MMA subproblem."""
    low, upp, alfa, beta = sp.low, sp.upp, sp.alfa, sp.beta
    p0, q0, P, Q, b = sp.p0, sp.q0, sp.P, sp.Q, sp.b
    a0, a, c, d = sp.a0, sp.a, sp.c, sp.d
    m, n = P.shape
    een, eem = np.ones(n), np.ones(m)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = eem.copy()
    z = 1.0
    lam = eem.copy()
    xsi = np.maximum(een / (x - alfa), een)
    eta = np.maximum(een / (beta - x), een)
    mu = np.maximum(eem, 0.5 * c)
    zet = 1.0
    s = eem.copy()

    def residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1, xl1 = upp - x, x - low
        plam = p0 + lam @ P
        qlam = q0 + lam @ Q
        gvec = P @ (1 / ux1) + Q @ (1 / xl1)
        dpsidx = plam / ux1**2 - qlam / xl1**2
        r = np.concatenate([
            dpsidx - xsi + eta,
            c + d * y - mu - lam,
            [a0 - zet - a @ lam],
            gvec - a * z - y + s - b,
            xsi * (x - alfa) - epsi,
            eta * (beta - x) - epsi,
            mu * y - epsi,
            [zet * z - epsi],
            lam * s - epsi,
        ])
        return r

    while epsi > epsimin:
        r = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        resnorm, resmax = np.linalg.norm(r), np.max(np.abs(r))
        it = 0
        while resmax > 0.9 * epsi and it < 200:
            it += 1
            ux1, xl1 = upp - x, x - low
            ux2, xl2 = ux1**2, xl1**2
            plam = p0 + lam @ P
            qlam = q0 + lam @ Q
            gvec = P @ (1 / ux1) + Q @ (1 / xl1)
            GG = P / ux2 - Q / xl2
            dpsidx = plam / ux2 - qlam / xl2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2 * (plam / (ux2 * ux1) + qlam / (xl2 * xl1)) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1 / diagy
            if m < n:
                blam = dellam + dely / diagy - GG @ (delx / diagx)
                Alam = np.diag(diaglamyi) + (GG / diagx) @ GG.T
                AA = np.block([[Alam, a[:, None]], [a[None, :], np.array([[-zet / z]])]])
                sol = np.linalg.solve(AA, np.concatenate([blam, [delz]]))
                dlam, dz = sol[:m], sol[m]
                dx = -delx / diagx - (dlam @ GG) / diagx
            else:
                dellamyi = dellam + dely / diagy
                Axx = np.diag(diagx) + (GG.T / diaglamyi) @ GG
                azz = zet / z + a @ (a / diaglamyi)
                axz = -GG.T @ (a / diaglamyi)
                bx = delx + GG.T @ (dellamyi / diaglamyi)
                bz = delz - a @ (dellamyi / diaglamyi)
                AA = np.block([[Axx, axz[:, None]], [axz[None, :], np.array([[azz]])]])
                sol = np.linalg.solve(AA, -np.concatenate([bx, [bz]]))
                dx, dz = sol[:n], sol[n]
                dlam = (GG @ dx) / diaglamyi - dz * (a / diaglamyi) + dellamyi / diaglamyi
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - (xsi * dx) / (x - alfa)
            deta = -eta + epsi / (beta - x) + (eta * dx) / (beta - x)
            dmu = -mu + epsi / y - (mu * dy) / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - (s * dlam) / lam
            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stmxx = np.max(-1.01 * dxx / xx)
            stmalfa = np.max(-1.01 * dx / (x - alfa))
            stmbeta = np.max(1.01 * dx / (beta - x))
            steg = 1.0 / max(stmxx, stmalfa, stmbeta, 1.0)
            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            resnew = 2 * resnorm
            for _ in range(50):
                x = old[0] + steg * dx
                y = old[1] + steg * dy
                z = old[2] + steg * dz
                lam = old[3] + steg * dlam
                xsi = old[4] + steg * dxsi
                eta = old[5] + steg * deta
                mu = old[6] + steg * dmu
                zet = old[7] + steg * dzet
                s = old[8] + steg * ds
                r = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                resnew = np.linalg.norm(r)
                if resnew <= resnorm:
                    break
                steg /= 2
            resnorm, resmax = resnew, np.max(np.abs(r))
        epsi *= 0.1
    return x, y, z, lam


# -- dual method ----------------------------------------------------------------
#
# With a = 0 the artificial variable z is zero at the optimum and the
# subproblem separates in x and y for fixed multipliers lam >= 0:
#   x_j(lam) = clip((sqrt(p_j) L_j + sqrt(q_j) U_j) / (sqrt(p_j) + sqrt(q_j)), alfa_j, beta_j)
#   y_i(lam) = max(0, (lam_i - c_i) / d_i)
# and the concave dual W(lam) has gradient g(x(lam)) - y(lam) - b.

def _primal(sp: Subproblem, lam: np.ndarray):
    p = sp.p0 + lam @ sp.P
    q = sp.q0 + lam @ sp.Q
    rp, rq = np.sqrt(p), np.sqrt(q)
    x = (rp * sp.low + rq * sp.upp) / (rp + rq)
    x = np.clip(x, sp.alfa, sp.beta)
    y = np.maximum(0.0, (lam - sp.c) / sp.d)
    return x, y, p, q


def dual_value(sp: Subproblem, lam: np.ndarray):
    """Dual function W(lam), its gradient and the minimizing (x, y)."""
    x, y, p, q = _primal(sp, lam)
    ux, xl = sp.upp - x, x - sp.low
    g = sp.P @ (1 / ux) + sp.Q @ (1 / xl)
    W = np.sum(p / ux + q / xl) + sp.c @ y + 0.5 * sp.d @ y**2 - lam @ (y + sp.b)
    return W, g - y - sp.b, x, y


def _dual_hessian(sp: Subproblem, lam: np.ndarray, x: np.ndarray) -> np.ndarray:
    p = sp.p0 + lam @ sp.P
    q = sp.q0 + lam @ sp.Q
    ux, xl = sp.upp - x, x - sp.low
    free = (x > sp.alfa) & (x < sp.beta)
    dg = sp.P / ux**2 - sp.Q / xl**2  # d g_i / d x_j
    curv = 2 * p / ux**3 + 2 * q / xl**3
    Hf = -(dg[:, free] / curv[free]) @ dg[:, free].T
    return Hf - np.diag((lam > sp.c) / sp.d)


def dual_solve(sp: Subproblem, tol: float = 1e-9, max_iter: int = 200):
    """Maximize the dual over lam >= 0 until the projected gradient is below ``tol``."""
    m = sp.b.size
    if m == 1:
        lam = _dual_1d(sp, tol)
    else:
        lam = _dual_newton(sp, tol, max_iter)
    x, y, _, _ = _primal(sp, lam)
    return x, y, 0.0, lam


def _dual_1d(sp: Subproblem, tol: float) -> np.ndarray:
    grad = lambda l: dual_value(sp, np.array([l]))[1][0]
    if grad(0.0) <= tol:
        return np.array([0.0])
    lo, hi = 0.0, 1.0
    while grad(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > 1e30:
            raise RuntimeError("MMA dual is unbounded")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        gm = grad(mid)
        if abs(gm) <= tol or hi - lo <= 1e-16 * max(1.0, hi):
            return np.array([mid])
        lo, hi = (mid, hi) if gm > 0 else (lo, mid)
    return np.array([0.5 * (lo + hi)])


def _dual_newton(sp: Subproblem, tol: float, max_iter: int) -> np.ndarray:
    m = sp.b.size
    lam = np.zeros(m)
    W, G, x, _ = dual_value(sp, lam)
    for _ in range(max_iter):
        pg = np.where(lam > 0, G, np.maximum(G, 0.0))
        if np.max(np.abs(pg)) <= tol:
            return lam
        free = (lam > 0) | (G > 0)
        H = _dual_hessian(sp, lam, x)
        d = np.zeros(m)
        Hff = H[np.ix_(free, free)] - 1e-12 * np.eye(free.sum())
        try:
            d[free] = -np.linalg.solve(Hff, G[free])
        except np.linalg.LinAlgError:
            d[free] = G[free]
        if G @ d <= 0:  # not an ascent direction; fall back to the projected gradient
            d = pg
        t = 1.0
        while t > 1e-20:
            lam_new = np.maximum(lam + t * d, 0.0)
            W_new, G_new, x_new, _ = dual_value(sp, lam_new)
            if W_new >= W + 1e-4 * G @ (lam_new - lam):
                break
            t *= 0.5
        else:
            return lam
        lam, W, G, x = lam_new, W_new, G_new, x_new
    return lam
