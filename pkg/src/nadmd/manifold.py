"""Matrix-manifold primitives used by the online interpolation.

* Grassmann logarithm / exponential for reduced-order bases,
* orthogonal Procrustes alignment,
* principal matrix logarithm and the matrix exponential,
* entry-wise tensor-product interpolation over Cartesian stencils.

The Grassmann maps operate on the last two axes and broadcast over leading
ones, which lets the online step map a whole grid of bases at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import BranchError, ExtrapolationError, NeighborhoodError

__all__ = [
    "InterpolantSpec",
    "grassmann_log",
    "grassmann_exp",
    "procrustes_align",
    "matrix_log_principal",
    "matrix_exp",
    "stencil_weights",
    "interp_entrywise",
    "cartesian_weights",
    "orthonormality_error",
]

COND_LIMIT = 1e8


def _mT(a):
    return np.swapaxes(a, -1, -2)


def orthonormality_error(V) -> float:
    """``max ||V^T V - I||_F`` over any leading axes."""
    V = np.asarray(V)
    G = _mT(V) @ V - np.eye(V.shape[-1])
    return float(np.max(np.linalg.norm(G, axis=(-2, -1))))


# Grassmann maps =============================================================
def grassmann_log(V0, Vm, P=None) -> np.ndarray:
    """Tangent matrix at ``range(V0)`` pointing to ``range(Vm)``.

    Computes the thin SVD ``(I - V0 V0^T) Vm P^{-1} = U diag(w) W^T`` with
    ``P = V0^T Vm`` and returns ``U diag(arctan w) W^T``. Its singular values
    are the principal angles between the two subspaces.

    Raises
    ------
    NeighborhoodError
        If ``P`` has condition number ``>= 1e8``, i.e. some principal angle
        is close to pi/2 and the logarithm is not defined reliably.
    """
    V0 = np.asarray(V0, dtype=float)
    Vm = np.asarray(Vm, dtype=float)
    if P is None:
        P = _mT(V0) @ Vm
    P = np.asarray(P, dtype=float)
    cond = np.linalg.cond(P)
    bad = ~(cond < COND_LIMIT)
    if np.any(bad):
        where = np.argwhere(np.atleast_1d(bad)).ravel().tolist()
        raise NeighborhoodError(
            f"V0^T Vm is ill-conditioned (cond >= {COND_LIMIT:g}) at stencil "
            f"entries {where[:10]}{'...' if len(where) > 10 else ''}; the subspaces "
            "are nearly orthogonal. Choose another reference node or a smaller "
            "stencil."
        )
    A = Vm - V0 @ P
    # A P^{-1} = (P^{-T} A^T)^T
    A = _mT(np.linalg.solve(_mT(P), _mT(A)))
    U, w, Wt = np.linalg.svd(A, full_matrices=False)
    return (U * np.arctan(w)[..., None, :]) @ Wt


def grassmann_exp(V0, M) -> np.ndarray:
    """Orthonormal basis of the subspace reached from ``range(V0)`` along ``M``.

    With the thin SVD ``M = U diag(a) W^T`` this returns
    ``(V0 W cos(a) + U sin(a)) W^T``. The trailing ``W^T`` selects the
    representative closest to ``V0`` (``V0^T V*`` is symmetric positive
    definite for angles below pi/2), which is the same representative the
    Procrustes alignment picks for stored bases. ``M`` is first projected onto
    the orthogonal complement of ``range(V0)``.
    """
    V0 = np.asarray(V0, dtype=float)
    M = np.asarray(M, dtype=float)
    M = M - V0 @ (_mT(V0) @ M)
    U, a, Wt = np.linalg.svd(M, full_matrices=False)
    W = _mT(Wt)
    V = (V0 @ W) * np.cos(a)[..., None, :] + U * np.sin(a)[..., None, :]
    return V @ Wt


def procrustes_align(P) -> np.ndarray:
    """Orthogonal ``S`` maximizing ``trace(S^T P)``.

    For ``P = V_m^T V_ref`` this minimizes ``||V_m S - V_ref||_F``.
    """
    U, _, Zt = np.linalg.svd(np.asarray(P, dtype=float))
    return U @ Zt


# Matrix functions ===========================================================
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
# Largest 1-norm for which the degree-m Pade approximant is accurate to
# double precision (Higham 2005).
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_terms(A, m):
    b = _PADE[m]
    n = A.shape[0]
    ident = np.eye(n)
    if m < 13:
        A2 = A @ A
        powers = [ident, A2]
        for _ in range(2, m // 2 + 1):
            powers.append(powers[-1] @ A2)
        U = A @ sum(b[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
        V = sum(b[2 * k] * powers[k] for k in range(m // 2 + 1))
        return U, V
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    return U, V


def matrix_exp(A) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Pade kernel."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if not np.any(A @ A):
        return np.eye(A.shape[0]) + A  # nilpotent of index <= 2: series stops
    norm = np.linalg.norm(A, 1)
    for m in (3, 5, 7, 9):
        if norm <= _THETA[m]:
            U, V = _pade_terms(A, m)
            return np.linalg.solve(V - U, V + U)
    s = max(0, int(np.ceil(np.log2(norm / _THETA[13])))) if norm > 0 else 0
    U, V = _pade_terms(A / 2.0**s, 13)
    X = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        X = X @ X
    return X


def matrix_log_principal(A) -> np.ndarray:
    """Principal logarithm of a real matrix via its eigendecomposition.

    Raises
    ------
    BranchError
        If ``A`` is singular or has an eigenvalue on the closed negative real
        axis, so no real principal logarithm exists, or if the result fails the
        ``exp(log A) = A`` check.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    lam, X = np.linalg.eig(A)
    scale = max(np.max(np.abs(lam)), np.finfo(float).tiny)
    mag = np.abs(lam)
    if np.any(mag <= 1e-14 * scale):
        raise BranchError("matrix is singular; the logarithm is undefined")
    on_cut = (lam.real < 0) & (np.abs(lam.imag) <= 1e-12 * mag)
    if np.any(on_cut):
        raise BranchError(
            f"eigenvalue(s) {lam[on_cut].real.tolist()} on the negative real axis; "
            "no real principal logarithm"
        )
    norm_a = np.linalg.norm(A)
    L = None
    if np.linalg.cond(X) < 1e6:
        Lc = (X * np.log(lam)) @ np.linalg.inv(X)
        L = Lc.real
        if np.linalg.norm(Lc.imag) > 1e-8 * max(1.0, np.linalg.norm(L)):
            L = None
    if L is None or np.linalg.norm(matrix_exp(L) - A) > 1e-10 * norm_a:
        # Nearly defective spectrum: Schur-based inverse scaling and squaring.
        Lc = scipy.linalg.logm(A)
        L = np.real(Lc)
    if np.linalg.norm(matrix_exp(L) - A) > 1e-8 * norm_a:
        raise BranchError("principal logarithm could not be computed accurately")
    return L


# Interpolation ==============================================================
@dataclass(frozen=True)
class InterpolantSpec:
    """How tangent-space data are interpolated over the parameter grid.

    ``scheme`` is ``"tensor_lagrange"`` or ``"nearest"``. ``stencil`` is
    ``"full"`` (all grid nodes), ``"cell"`` (the 2-per-dimension sub-grid
    enclosing the target, i.e. multilinear), or an explicit sequence of grid
    indices forming a Cartesian sub-grid.

    ``operator`` selects how reduced operators are blended: ``"manifold"``
    interpolates ``log(K~_m K~_ref^{-1})`` on the nonsingular matrices,
    ``"entrywise"`` interpolates the aligned operators directly. The latter
    is the only option when the operators are numerically singular, as for
    stiff diffusion where fast modes decay to round-off within one step.
    """

    scheme: str = "tensor_lagrange"
    stencil: object = "full"
    allow_extrapolation: bool = False
    operator: str = "manifold"

    def __post_init__(self):
        if self.scheme not in ("tensor_lagrange", "nearest"):
            raise ValueError(f"unknown interpolation scheme {self.scheme!r}")
        if self.operator not in ("manifold", "entrywise"):
            raise ValueError(f"unknown operator interpolation {self.operator!r}")
        if isinstance(self.stencil, str):
            if self.stencil not in ("full", "cell"):
                raise ValueError(f"unknown stencil {self.stencil!r}")
        else:
            object.__setattr__(self, "stencil", tuple(int(i) for i in self.stencil))

    def to_dict(self) -> dict:
        st = self.stencil if isinstance(self.stencil, str) else list(self.stencil)
        return {"scheme": self.scheme, "stencil": st,
                "allow_extrapolation": self.allow_extrapolation, "operator": self.operator}


def _lagrange_1d(nodes, x):
    w = np.ones(len(nodes))
    for j in range(len(nodes)):
        for i in range(len(nodes)):
            if i != j:
                w[j] *= (x - nodes[i]) / (nodes[j] - nodes[i])
    hit = np.flatnonzero(nodes == x)
    if hit.size:
        w[:] = 0.0
        w[hit[0]] = 1.0
    return w


def _axis_weights(nodes, x, scheme, stencil):
    nodes = np.asarray(nodes, dtype=float)
    if scheme == "nearest":
        w = np.zeros(len(nodes))
        w[int(np.argmin(np.abs(nodes - x)))] = 1.0
        return w
    if stencil == "cell" and len(nodes) > 2:
        i = int(np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2))
        w = np.zeros(len(nodes))
        w[i : i + 2] = _lagrange_1d(nodes[i : i + 2], x)
        return w
    return _lagrange_1d(nodes, x)


def _check_box(axes, target, allow):
    for d, (ax, x) in enumerate(zip(axes, target)):
        lo, hi = ax[0], ax[-1]
        slack = 1e-12 * max(hi - lo, abs(lo), abs(hi), 1.0)
        if not (lo - slack <= x <= hi + slack) and not allow:
            raise ExtrapolationError(
                f"target coordinate {d} = {x!r} outside [{lo!r}, {hi!r}]",
                point=np.asarray(target, dtype=float),
            )


def stencil_weights(axes: Sequence[np.ndarray], target, spec: InterpolantSpec) -> np.ndarray:
    """Weights of all nodes of a Cartesian grid (row-major, flattened).

    The interpolant at ``target`` is ``sum_m w[m] * f(node_m)``; nodes outside
    the stencil receive weight zero.
    """
    target = np.asarray(target, dtype=float).ravel()
    if len(target) != len(axes):
        raise ValueError(f"target has {len(target)} coordinates, grid has {len(axes)}")
    _check_box(axes, target, spec.allow_extrapolation)
    stencil = spec.stencil if isinstance(spec.stencil, str) else "full"
    w = np.ones(())
    for ax, x in zip(axes, target):
        w = np.multiply.outer(w, _axis_weights(ax, x, spec.scheme, stencil))
    return w.ravel()


def cartesian_weights(points, target, spec: InterpolantSpec | None = None) -> np.ndarray:
    """Interpolation weight of each of ``points`` (given in any order) at
    ``target``.

    ``points`` must contain every node of the Cartesian product of their
    per-dimension coordinates exactly once.
    """
    spec = spec or InterpolantSpec()
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    axes, index = [], []
    for d in range(points.shape[1]):
        ax, inv = np.unique(points[:, d], return_inverse=True)
        axes.append(ax)
        index.append(inv.ravel())
    shape = tuple(len(ax) for ax in axes)
    flat = np.ravel_multi_index(tuple(index), shape)
    if int(np.prod(shape)) != len(points) or len(np.unique(flat)) != len(points):
        raise ValueError("points do not form a full Cartesian grid")
    return stencil_weights(axes, target, spec)[flat]


def interp_entrywise(points, mats, target, spec: InterpolantSpec | None = None) -> np.ndarray:
    """Interpolate matrices given at the nodes of a Cartesian grid, entry by
    entry, at ``target``."""
    mats = np.asarray(mats, dtype=float)
    if mats.shape[0] != len(points):
        raise ValueError(f"{mats.shape[0]} matrices for {len(points)} points")
    w = cartesian_weights(points, target, spec)
    return np.tensordot(w, mats, axes=(0, 0))
