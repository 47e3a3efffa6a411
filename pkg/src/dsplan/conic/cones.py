"""Vectorized algebra on products of nonnegative orthants and second-order cones.

Slack vectors are laid out block by block.  Second-order blocks of equal
dimension are gathered into 2-D index arrays so that Jordan products,
Nesterov-Todd scalings and step lengths run without Python loops over cones.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

NONNEG = "nonneg"
SOC = "soc"
RSOC = "rsoc"


class ConeLayout:
    """Index bookkeeping for a cone product made of ``nonneg`` and ``soc`` blocks."""

    def __init__(self, cones):
        nonneg = []
        groups: dict[int, list[int]] = {}
        offset = 0
        for kind, dim in cones:
            if kind == NONNEG:
                nonneg.extend(range(offset, offset + dim))
            elif kind == SOC:
                if dim < 1:
                    raise ValueError("second-order cone dimension must be >= 1")
                groups.setdefault(dim, []).append(offset)
            else:
                raise ValueError(f"unsupported cone kind {kind!r}")
            offset += dim
        self.m = offset
        self.nonneg = np.asarray(nonneg, dtype=np.int64)
        self.groups = {
            q: np.asarray(starts, dtype=np.int64)[:, None] + np.arange(q)[None, :]
            for q, starts in sorted(groups.items())
        }
        self.degree = len(self.nonneg) + sum(len(ix) for ix in self.groups.values())
        # sparsity pattern of the block-diagonal scaling matrices
        rows = [self.nonneg]
        cols = [self.nonneg]
        for idx in self.groups.values():
            q = idx.shape[1]
            rows.append(np.repeat(idx, q, axis=1).ravel())
            cols.append(np.tile(idx, (1, q)).ravel())
        self._rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        self._cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)

    def unit(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[self.nonneg] = 1.0
        for idx in self.groups.values():
            e[idx[:, 0]] = 1.0
        return e

    def jprod(self, u, v):
        """Jordan product u o v."""
        out = np.empty(self.m)
        out[self.nonneg] = u[self.nonneg] * v[self.nonneg]
        for idx in self.groups.values():
            U, V = u[idx], v[idx]
            out[idx[:, 0]] = np.einsum("ij,ij->i", U, V)
            out[idx[:, 1:]] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
        return out

    def jdiv(self, lam, r):
        """Solve lam o x = r for x (lam in the interior)."""
        out = np.empty(self.m)
        out[self.nonneg] = r[self.nonneg] / lam[self.nonneg]
        for idx in self.groups.values():
            L, R = lam[idx], r[idx]
            l0 = L[:, 0]
            det = l0 * l0 - np.einsum("ij,ij->i", L[:, 1:], L[:, 1:])
            x0 = (l0 * R[:, 0] - np.einsum("ij,ij->i", L[:, 1:], R[:, 1:])) / det
            out[idx[:, 0]] = x0
            out[idx[:, 1:]] = (R[:, 1:] - x0[:, None] * L[:, 1:]) / l0[:, None]
        return out

    def violation(self, s) -> float:
        """Smallest t with s + t e in the cone (negative when s is interior)."""
        worst = -np.inf
        if len(self.nonneg):
            worst = max(worst, float(np.max(-s[self.nonneg])))
        for idx in self.groups.values():
            S = s[idx]
            worst = max(worst, float(np.max(np.linalg.norm(S[:, 1:], axis=1) - S[:, 0])))
        return worst

    def max_step(self, x, d) -> float:
        """Largest alpha >= 0 with x + alpha d in the cone, for interior x."""
        alpha = np.inf
        if len(self.nonneg):
            dn = d[self.nonneg]
            neg = dn < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-x[self.nonneg][neg] / dn[neg])))
        for idx in self.groups.values():
            X, D = x[idx], d[idx]
            a = D[:, 0] ** 2 - np.einsum("ij,ij->i", D[:, 1:], D[:, 1:])
            b = X[:, 0] * D[:, 0] - np.einsum("ij,ij->i", X[:, 1:], D[:, 1:])
            c = X[:, 0] ** 2 - np.einsum("ij,ij->i", X[:, 1:], X[:, 1:])
            inside = (a >= 0) & (D[:, 0] >= 0)
            disc = np.sqrt(np.maximum(b * b - a * c, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                roots = c / (disc - b)
            roots = np.where(inside | ~(roots > 0), np.inf, roots)
            if roots.size:
                alpha = min(alpha, float(np.min(roots)))
        return alpha

    def nt_scaling(self, s, z) -> "NTScaling":
        return NTScaling(self, s, z)

    def block_matrix(self, diag, blocks) -> sp.csr_matrix:
        data = [diag] + [B.ravel() for B in blocks]
        return sp.csr_matrix(
            (np.concatenate(data), (self._rows, self._cols)), shape=(self.m, self.m)
        )


class NTScaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lambda (W symmetric)."""

    def __init__(self, layout: ConeLayout, s, z):
        self.layout = layout
        nn = layout.nonneg
        self.d = np.sqrt(s[nn] / z[nn])
        self.wbar = {}
        self.beta = {}
        for q, idx in layout.groups.items():
            S, Z = s[idx], z[idx]
            ns = np.sqrt(np.maximum(S[:, 0] ** 2 - np.einsum("ij,ij->i", S[:, 1:], S[:, 1:]), 1e-300))
            nz = np.sqrt(np.maximum(Z[:, 0] ** 2 - np.einsum("ij,ij->i", Z[:, 1:], Z[:, 1:]), 1e-300))
            Sb = S / ns[:, None]
            Zb = Z / nz[:, None]
            gamma = np.sqrt(np.maximum((1.0 + np.einsum("ij,ij->i", Sb, Zb)) / 2.0, 1e-300))
            W = np.empty_like(S)
            W[:, 0] = (Sb[:, 0] + Zb[:, 0]) / (2 * gamma)
            W[:, 1:] = (Sb[:, 1:] - Zb[:, 1:]) / (2 * gamma[:, None])
            self.wbar[q] = W
            self.beta[q] = np.sqrt(ns / nz)
        self.lam = self.apply(z)

    def _apply(self, v, inverse):
        L = self.layout
        out = np.empty_like(v)
        out[L.nonneg] = v[L.nonneg] / self.d if inverse else v[L.nonneg] * self.d
        for q, idx in L.groups.items():
            W, beta = self.wbar[q], self.beta[q]
            V = v[idx]
            w0, w1 = W[:, 0], W[:, 1:]
            sign = -1.0 if inverse else 1.0
            w1v1 = np.einsum("ij,ij->i", w1, V[:, 1:])
            o0 = w0 * V[:, 0] + sign * w1v1
            o1 = sign * V[:, :1] * w1 + V[:, 1:] + w1 * (w1v1 / (1.0 + w0))[:, None]
            scale = 1.0 / beta if inverse else beta
            out[idx[:, 0]] = scale * o0
            out[idx[:, 1:]] = scale[:, None] * o1
        return out

    def apply(self, v):
        return self._apply(v, False)

    def apply_inv(self, v):
        return self._apply(v, True)

    def dense(self, inverse=False) -> np.ndarray:
        """Dense W (or W^{-1}); cheaper than the sparse form for small m."""
        L = self.layout
        out = np.zeros((L.m, L.m))
        diag, blocks = self._blocks(inverse)
        out[L.nonneg, L.nonneg] = diag
        for idx, B in zip(L.groups.values(), blocks):
            out[idx[:, :, None], idx[:, None, :]] = B
        return out

    def matrix(self, inverse=False) -> sp.csr_matrix:
        """Sparse block-diagonal W (or W^{-1})."""
        return self.layout.block_matrix(*self._blocks(inverse))

    def _blocks(self, inverse):
        L = self.layout
        diag = 1.0 / self.d if inverse else self.d
        blocks = []
        for q, idx in L.groups.items():
            W, beta = self.wbar[q], self.beta[q]
            w0, w1 = W[:, 0], W[:, 1:]
            k = len(w0)
            B = np.zeros((k, q, q))
            sign = -1.0 if inverse else 1.0
            B[:, 0, 0] = w0
            B[:, 0, 1:] = sign * w1
            B[:, 1:, 0] = sign * w1
            B[:, 1:, 1:] = np.eye(q - 1)[None] + w1[:, :, None] * w1[:, None, :] / (1.0 + w0)[:, None, None]
            scale = 1.0 / beta if inverse else beta
            blocks.append(B * scale[:, None, None])
        return diag, blocks
