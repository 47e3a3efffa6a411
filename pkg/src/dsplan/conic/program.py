"""Cone program container and rotated-cone preprocessing.

A program is stored in the slack form

    minimize    c'x
    subject to  A x = b
                G x + s = h,   s in K

with ``x`` free and ``K`` a product of the blocks listed in ``cones``.  A
``rsoc`` block of dimension q holds (a, b, c_1..c_{q-2}) with
2ab >= ||c||^2, a, b >= 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cones import NONNEG, RSOC, SOC

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class ConicProgram:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    cones: tuple
    names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        object.__setattr__(self, "A", sp.csr_matrix(self.A, dtype=float))
        object.__setattr__(self, "G", sp.csr_matrix(self.G, dtype=float))
        object.__setattr__(self, "cones", tuple((str(k), int(d)) for k, d in self.cones))
        n = self.c.shape[0]
        if self.A.shape != (self.b.shape[0], n):
            raise ValueError(f"A has shape {self.A.shape}, expected ({self.b.shape[0]}, {n})")
        if self.G.shape != (self.h.shape[0], n):
            raise ValueError(f"G has shape {self.G.shape}, expected ({self.h.shape[0]}, {n})")
        total = 0
        for kind, dim in self.cones:
            if kind == SOC and dim < 2:
                raise ValueError("soc blocks need dimension >= 2")
            if kind == RSOC and dim < 3:
                raise ValueError("rsoc blocks need dimension >= 3")
            if kind not in (NONNEG, SOC, RSOC) or dim < 0:
                raise ValueError(f"bad cone block {(kind, dim)}")
            total += dim
        if total != self.h.shape[0]:
            raise ValueError(f"cone layout covers {total} rows, G has {self.h.shape[0]}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.h))):
            raise ValueError("program data must be finite")
        if self.names and len(self.names) != n:
            raise ValueError("names must match the number of columns")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def p(self) -> int:
        return self.b.shape[0]

    @property
    def m(self) -> int:
        return self.h.shape[0]

    def has_rotated(self) -> bool:
        return any(kind == RSOC for kind, _ in self.cones)

    def block_offsets(self):
        out, off = [], 0
        for kind, dim in self.cones:
            out.append((kind, off, dim))
            off += dim
        return out

    def slack(self, x):
        return self.h - self.G @ x

    def is_feasible(self, x, tol=1e-7) -> bool:
        """Check A x = b and h - G x in K up to ``tol`` (scaled by the data)."""
        x = np.asarray(x, float)
        if self.p and np.max(np.abs(self.A @ x - self.b)) > tol * (1 + np.max(np.abs(self.b))):
            return False
        s = self.slack(x)
        scale = tol * (1 + (np.max(np.abs(self.h)) if self.m else 0.0))
        for kind, off, dim in self.block_offsets():
            blk = s[off:off + dim]
            if kind == NONNEG and np.min(blk, initial=0.0) < -scale:
                return False
            if kind == SOC and np.linalg.norm(blk[1:]) - blk[0] > scale:
                return False
            if kind == RSOC:
                a, bb, rest = blk[0], blk[1], blk[2:]
                if min(a, bb) < -scale or rest @ rest - 2 * a * bb > scale * (1 + abs(a) + abs(bb)):
                    return False
        return True


def rotation_matrix(program: ConicProgram) -> sp.csr_matrix:
    """Orthogonal, symmetric row map taking each rotated block to a standard one.

    (a, b, c) goes to ((a+b)/sqrt2, (a-b)/sqrt2, c); other rows are untouched.
    """
    m = program.m
    diag = np.ones(m)
    rows, cols, vals = [], [], []
    r = 1.0 / SQRT2
    for kind, off, dim in program.block_offsets():
        if kind != RSOC:
            continue
        diag[off] = diag[off + 1] = 0.0
        rows += [off, off, off + 1, off + 1]
        cols += [off, off + 1, off, off + 1]
        vals += [r, r, r, -r]
    return (sp.diags(diag) + sp.csr_matrix((vals, (rows, cols)), shape=(m, m))).tocsr()


def rotated_to_soc(program: ConicProgram) -> ConicProgram:
    """Rewrite every ``rsoc`` block as an ``soc`` block.

    The image lies in the standard cone exactly when the original slack lies
    in the rotated one.  The row map is its own inverse, so cone duals come
    back through the same matrix.
    """
    if not program.has_rotated():
        return program
    Q = rotation_matrix(program)
    cones = tuple((SOC if k == RSOC else k, d) for k, d in program.cones)
    return ConicProgram(
        program.c, program.A, program.b, Q @ program.G, Q @ program.h, cones, program.names
    )


def rotated_point_to_soc(a, b, c):
    """Map (a, b, c) to the un-normalized standard form (a+b, sqrt2*c, a-b).

    ``2ab >= ||c||^2`` holds exactly when the image t = a+b satisfies
    ``||(sqrt2*c, a-b)|| <= t``; the identity (a+b)^2 - (a-b)^2 = 4ab links them.
    """
    c = np.atleast_1d(np.asarray(c, float))
    return a + b, np.concatenate([SQRT2 * c, [a - b]])


def dump_program(program: ConicProgram) -> str:
    """Serialize to the plain-text ``conic-program`` format (see docs/formats.md)."""
    lines = ["conic-program 1", f"dims {program.n} {program.p} {program.m}"]
    lines.append("cones " + " ".join(f"{k}:{d}" for k, d in program.cones))
    if program.names:
        lines.append("names " + " ".join(program.names))
    lines.append("c " + " ".join(repr(float(v)) for v in program.c))
    lines.append("b " + " ".join(repr(float(v)) for v in program.b))
    lines.append("h " + " ".join(repr(float(v)) for v in program.h))
    for tag, M in (("A", program.A), ("G", program.G)):
        coo = M.tocoo()
        for i, j, v in sorted(zip(coo.row, coo.col, coo.data)):
            if v != 0.0:
                lines.append(f"{tag} {i} {j} {float(v)!r}")
    return "\n".join(lines) + "\n"


def parse_program(text: str) -> ConicProgram:
    vec = {"c": [], "b": [], "h": []}
    trip = {"A": ([], [], []), "G": ([], [], [])}
    names: tuple = ()
    cones: list = []
    dims = None
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "conic-program":
            continue
        if key == "dims":
            dims = tuple(int(v) for v in parts[1:4])
        elif key == "cones":
            for tok in parts[1:]:
                k, d = tok.split(":")
                cones.append((k, int(d)))
        elif key == "names":
            names = tuple(parts[1:])
        elif key in vec:
            vec[key] = [float(v) for v in parts[1:]]
        elif key in trip:
            r, cidx, v = trip[key]
            r.append(int(parts[1]))
            cidx.append(int(parts[2]))
            v.append(float(parts[3]))
        else:
            raise ValueError(f"line {lineno}: unknown record {key!r}")
    if dims is None:
        raise ValueError("missing dims record")
    n, p, m = dims
    A = sp.csr_matrix((trip["A"][2], (trip["A"][0], trip["A"][1])), shape=(p, n))
    G = sp.csr_matrix((trip["G"][2], (trip["G"][0], trip["G"][1])), shape=(m, n))
    return ConicProgram(np.array(vec["c"]), A, np.array(vec["b"]), G, np.array(vec["h"]), tuple(cones), names)
