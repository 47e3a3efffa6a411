"""Primal-dual interior-point method for cone programs.

Path following on the homogeneous self-dual embedding of

    min c'x  s.t.  A x = b,  G x + s = h,  s in K

with Nesterov-Todd scaling and a Mehrotra predictor-corrector.  The embedding
yields either an optimal pair or a Farkas-type certificate of primal or dual
infeasibility without a phase-one problem.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeLayout
from .program import ConicProgram, rotated_to_soc, rotation_matrix

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
NUMERICAL_FAILURE = "numerical_failure"
NEAR_OPTIMAL = "near-optimal"  # best iterate within NEAR_FACTOR * tol after a stall

RECOVERY_FACTOR = 10.0
NEAR_FACTOR = 1e3
DENSE_LIMIT = 350
STEP_FRACTION = 0.99


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    y: np.ndarray  # equality multipliers
    z: np.ndarray  # cone multipliers, same layout as the program's slacks
    s: np.ndarray
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def usable(self) -> bool:
        """Optimal, or the best iterate of a stalled solve at a looser accuracy."""
        return self.status in (OPTIMAL, NEAR_OPTIMAL)


class _KKTSolver:
    """Factor and solve  [0 A' G'; A 0 0; G 0 -W^2] u = r  by eliminating dz.

    Small systems keep every operator dense; the scaling W is then formed
    explicitly, which is far cheaper than block-wise application in Python.
    """

    def __init__(self, A, G, reg, refine):
        self.n = G.shape[1]
        self.p = A.shape[0]
        self.dense = self.n + self.p <= DENSE_LIMIT and G.shape[0] <= 2 * DENSE_LIMIT
        if self.dense:
            self.A = A.toarray()
            self.G = G.toarray()
            self.At = self.A.T.copy()
            self.Gt = self.G.T.copy()
        else:
            self.A = A
            self.G = G
            self.At = A.T.tocsr()
            self.Gt = G.T.tocsr()
        self.reg = reg
        self.refine = refine

    def factor(self, scaling):
        self.scaling = scaling
        n, p, reg = self.n, self.p, self.reg
        if self.dense:
            W = scaling.dense()
            Winv = scaling.dense(inverse=True)
            self._W, self._Winv = W, Winv
            GW = Winv @ self.G
            M = np.zeros((n + p, n + p))
            M[:n, :n] = GW.T @ GW
            M[np.arange(n), np.arange(n)] += reg
            M[:n, n:] = self.At
            M[n:, :n] = self.A
            M[np.arange(n, n + p), np.arange(n, n + p)] = -reg
            self._lu = sla.lu_factor(M, check_finite=True)
            self._solve = lambda r: sla.lu_solve(self._lu, r, check_finite=False)
        else:
            Winv = scaling.matrix(inverse=True)
            GW = (Winv @ self.G).tocsc()
            H = (GW.T @ GW).tocsc()
            M = sp.bmat(
                [[H + reg * sp.identity(n), self.At], [self.A, -reg * sp.identity(p)]],
                format="csc",
            )
            N = n + p
            if not np.all(np.isfinite(M.data)):
                # SuperLU does not guard against non-finite entries
                raise np.linalg.LinAlgError("non-finite KKT matrix")
            if M.nnz > 0.05 * N * N:
                self._lu = sla.lu_factor(M.toarray())
                self._solve = lambda r: sla.lu_solve(self._lu, r, check_finite=False)
                return
            # quasi-definite: a symmetric ordering without pivoting keeps fill low
            try:
                lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                               options=dict(SymmetricMode=True))
                if not np.all(np.isfinite(lu.U.diagonal())):
                    raise RuntimeError("non-finite pivot")
            except RuntimeError:
                lu = spla.splu(M, permc_spec="COLAMD")
            self._solve = lu.solve

    def apply(self, v):
        return self._W @ v if self.dense else self.scaling.apply(v)

    def apply_inv(self, v):
        return self._Winv @ v if self.dense else self.scaling.apply_inv(v)

    def _w2inv(self, v):
        if self.dense:
            return self._Winv @ (self._Winv @ v)
        return self.scaling.apply_inv(self.scaling.apply_inv(v))

    def _w2(self, v):
        if self.dense:
            return self._W @ (self._W @ v)
        return self.scaling.apply(self.scaling.apply(v))

    def _reduced(self, r1, r2, r3):
        t = self._w2inv(r3)
        rhs = np.concatenate([r1 + self.Gt @ t, r2])
        sol = self._solve(rhs)
        dx, dy = sol[: self.n], sol[self.n:]
        dz = self._w2inv(self.G @ dx - r3)
        return dx, dy, dz

    def solve(self, r1, r2, r3):
        dx, dy, dz = self._reduced(r1, r2, r3)
        for _ in range(self.refine):
            e1 = r1 - (self.At @ dy + self.Gt @ dz)
            e2 = r2 - self.A @ dx
            e3 = r3 - (self.G @ dx - self._w2(dz))
            ex, ey, ez = self._reduced(e1, e2, e3)
            dx, dy, dz = dx + ex, dy + ey, dz + ez
        return dx, dy, dz


def _initial_point(A, b, G, h, c):
    """Least-squares primal and dual points (before the shift into the cone)."""
    n, p, m = G.shape[1], A.shape[0], G.shape[0]
    M = sp.bmat(
        [[1e-10 * sp.identity(n), A.T, G.T], [A, -1e-10 * sp.identity(p), None],
         [G, None, -sp.identity(m)]],
        format="csc",
    )
    try:
        lu = spla.splu(M)
    except RuntimeError:
        return np.zeros(n), np.zeros(m), np.zeros(p), np.zeros(m)
    sol = lu.solve(np.concatenate([np.zeros(n), b, h]))
    x, s = sol[:n], -sol[n + p:]
    sol = lu.solve(np.concatenate([-c, np.zeros(p), np.zeros(m)]))
    y, z = sol[n:n + p], sol[n + p:]
    return x, s, y, z


def _equilibrate(A, G, layout, passes=12):
    """Ruiz scaling: column factors D and row factors for A and G.

    Rows of a second-order block share one factor so the cone is preserved.
    """
    n = A.shape[1]
    D = np.ones(n)
    Ea = np.ones(A.shape[0])
    Eg = np.ones(G.shape[0])
    absA, absG = abs(A).tocsr(), abs(G).tocsr()
    for _ in range(passes):
        SA = sp.diags(Ea) @ absA @ sp.diags(D)
        SG = sp.diags(Eg) @ absG @ sp.diags(D)
        col = np.maximum(
            SA.max(axis=0).toarray().ravel() if A.shape[0] else np.zeros(n),
            SG.max(axis=0).toarray().ravel() if G.shape[0] else np.zeros(n),
        )
        ra = SA.max(axis=1).toarray().ravel() if A.shape[0] else np.zeros(0)
        rg = SG.max(axis=1).toarray().ravel() if G.shape[0] else np.zeros(0)
        for idx in layout.groups.values():
            rg[idx] = rg[idx].max(axis=1, keepdims=True)
        col[col == 0] = 1.0
        ra[ra == 0] = 1.0
        rg[rg == 0] = 1.0
        D = np.clip(D / np.sqrt(col), 1e-4, 1e4)
        Ea = np.clip(Ea / np.sqrt(ra), 1e-4, 1e4)
        Eg = np.clip(Eg / np.sqrt(rg), 1e-4, 1e4)
    return D, Ea, Eg


def solve(program: ConicProgram, tol: float = 1e-8, max_iters: int = 200,
          reg: float = 1e-9, refine: int = 2) -> ConicSolution:
    """Solve a cone program; see module docstring for the problem form."""
    if not (0 < tol <= 1e-2):
        raise ValueError("tolerance must lie in (0, 1e-2]")
    # overflow near a degenerate optimum is detected through the status instead
    with np.errstate(all="ignore"):
        return _solve(program, tol, max_iters, reg, refine)


def _solve(program, tol, max_iters, reg, refine):
    original = program
    rotated = program.has_rotated()
    program = rotated_to_soc(program)
    n, p, m = program.n, program.p, program.m
    A, G = program.A, program.G
    cscale = max(1.0, float(np.max(np.abs(program.c), initial=0.0)))
    layout = ConeLayout(program.cones)
    e = layout.unit()
    c0, b0, h0 = program.c / cscale, program.b, program.h
    resx0 = max(1.0, np.linalg.norm(c0))
    resy0 = max(1.0, np.linalg.norm(b0))
    resz0 = max(1.0, np.linalg.norm(h0))

    D, Ea, Eg = _equilibrate(A, G, layout)
    A = (sp.diags(Ea) @ A @ sp.diags(D)).tocsr()
    G = (sp.diags(Eg) @ G @ sp.diags(D)).tocsr()
    c, b, h = c0 * D, b0 * Ea, h0 * Eg

    # shifted least-squares start
    x, s, y, z = _initial_point(A, b, G, h, c)
    for v in (s, z):
        t = layout.violation(v)
        if t >= -1e-8 * max(np.linalg.norm(v), 1.0):
            v += (1.0 + t) * e
    tau, kappa = 1.0, 1.0

    kkt = _KKTSolver(A, G, reg, refine)
    A, G, At, Gt = kkt.A, kkt.G, kkt.At, kkt.Gt
    status = ITERATION_LIMIT
    it = 0
    pres = dres = gap = np.inf
    pcost = dcost = np.nan
    best = (np.inf, None)  # (merit, iterate) kept for recovery after a breakdown
    for it in range(max_iters + 1):
        rx = At @ y + Gt @ z + c * tau
        ry = A @ x - b * tau
        rz = G @ x + s - h * tau
        cx, by, hz = c @ x, b @ y, h @ z
        rt = kappa + cx + by + hz

        pres = max(np.linalg.norm(ry / Ea) / resy0, np.linalg.norm(rz / Eg) / resz0) / tau
        dres = np.linalg.norm(rx / D) / resx0 / tau
        pcost = cx / tau
        dcost = -(by + hz) / tau
        gap = (s @ z) / tau ** 2
        scale_obj = 1.0 + abs(pcost)
        merit = max(pres, dres, gap / scale_obj, abs(pcost - dcost) / scale_obj)
        if merit < best[0]:
            best = (merit, (x, s, y, z, tau, kappa, it, pres, dres, gap))
        if pres <= tol and dres <= tol and gap <= tol * scale_obj and abs(pcost - dcost) <= tol * scale_obj:
            status = OPTIMAL
            break
        # certificates only count once the embedding leans towards kappa
        if hz + by < 0 and kappa > tau:
            pinf = np.linalg.norm((At @ y + Gt @ z) / D) * max(resy0, resz0) / (-(hz + by))
            if pinf <= tol:
                status = INFEASIBLE
                break
        if cx < 0 and kappa > tau:
            dinf = max(np.linalg.norm(A @ x / Ea), np.linalg.norm((G @ x + s) / Eg)) * resx0 / (-cx)
            if dinf <= tol:
                status = UNBOUNDED
                break
        if it == max_iters:
            break

        try:
            W = layout.nt_scaling(s, z)
            lam = W.lam
            kkt.factor(W)
            x1, y1, z1 = kkt.solve(c, -b, -h)
        except (np.linalg.LinAlgError, RuntimeError, ValueError, FloatingPointError) as exc:
            log.debug("KKT factorization failed at iteration %d: %s", it, exc)
            status = NUMERICAL_FAILURE
            break
        mu = (s @ z + tau * kappa) / (layout.degree + 1)
        denom = c @ x1 + b @ y1 + h @ z1 + kappa / tau

        def direction(eta, rcs, rkt):
            r3 = -eta * rz - kkt.apply(rcs)
            r4 = -eta * rt - rkt / tau
            dx0, dy0, dz0 = kkt.solve(-eta * rx, -eta * ry, r3)
            dtau = (c @ dx0 + b @ dy0 + h @ dz0 - r4) / denom
            dx, dy, dz = dx0 - dtau * x1, dy0 - dtau * y1, dz0 - dtau * z1
            dzs = kkt.apply(dz)
            dss = rcs - dzs
            dkappa = (rkt - kappa * dtau) / tau
            return dx, dy, dz, dss, dzs, dtau, dkappa

        def step_length(dss, dzs, dtau, dkappa):
            a = min(layout.max_step(lam, dss), layout.max_step(lam, dzs))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        # predictor
        aff = direction(1.0, -lam, -tau * kappa)
        alpha = min(1.0, step_length(*aff[3:]))
        sigma = min(1.0, max(0.0, 1.0 - alpha)) ** 3
        # corrector
        corr = layout.jprod(aff[3], aff[4])
        rcs = layout.jdiv(lam, sigma * mu * e - layout.jprod(lam, lam) - corr)
        rkt = sigma * mu - tau * kappa - aff[5] * aff[6]
        dx, dy, dz, dss, dzs, dtau, dkappa = direction(1.0 - sigma, rcs, rkt)
        alpha = min(1.0, STEP_FRACTION * step_length(dss, dzs, dtau, dkappa))
        log.debug("it %d pres %.2e dres %.2e gap %.2e pcost %.6e sigma %.2e alpha %.3f tau %.2e kappa %.2e",
                  it, pres, dres, gap, pcost, sigma, alpha, tau, kappa)
        if not np.isfinite(alpha) or alpha <= 0:
            status = NUMERICAL_FAILURE
            break

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * kkt.apply(dss)
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if not (np.all(np.isfinite(x)) and np.isfinite(tau)):
            status = NUMERICAL_FAILURE
            break

    if status in (NUMERICAL_FAILURE, ITERATION_LIMIT) and best[0] <= NEAR_FACTOR * tol:
        # ill-conditioning near the optimum (typically cones without interior); fall back
        # to the best iterate seen, which meets a relaxed tolerance
        log.debug("recovering iterate %d (merit %.2e) after %s", best[1][6], best[0], status)
        x, s, y, z, tau, kappa, it, pres, dres, gap = best[1]
        status = OPTIMAL if best[0] <= RECOVERY_FACTOR * tol else NEAR_OPTIMAL
    x, s, y, z = x * D, s / Eg, y * Ea, z * Eg
    b, h, c = b0, h0, c0
    if status == INFEASIBLE:
        nrm = -(program.b @ y + program.h @ z)
        x_out, s_out = np.full(n, np.nan), np.full(m, np.nan)
        y_out, z_out = y / nrm, z / nrm
        pobj, dobj = np.inf, np.inf
    elif status == UNBOUNDED:
        nrm = -(c @ x)
        x_out, s_out = x / nrm, s / nrm
        y_out, z_out = np.full(p, np.nan), np.full(m, np.nan)
        pobj, dobj = -np.inf, -np.inf
    else:
        x_out, s_out = x / tau, s / tau
        y_out, z_out = y * cscale / tau, z * cscale / tau
        pobj = float(program.c @ x_out)
        dobj = float(-(program.b @ y_out + program.h @ z_out))
    if rotated:
        Q = rotation_matrix(original)
        z_out = Q @ z_out
        s_out = Q @ s_out
    return ConicSolution(
        status=status, x=x_out, y=y_out, z=z_out, s=s_out,
        primal_objective=pobj, dual_objective=dobj,
        primal_residual=float(pres), dual_residual=float(dres),
        gap=float(gap * cscale), iterations=it,
    )
