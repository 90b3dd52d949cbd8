"""Online step: interpolate local surrogates at new parameter points and
march the state forward.

Per step ``k`` the input is parameterized on ``[t_k, t_k + dt]``, the basis
``V_k`` is obtained by Grassmann interpolation and the operator ``K_k`` by
interpolation on the manifold of nonsingular matrices (after aligning all
stored operators to the reference node's coordinates), and the state is
advanced through the lifted, reduced linear map.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ._csvio import write_csv
from .dmd import ModelStore, gram
from .errors import (
    BranchError,
    ExtrapolationError,
    ReferenceOperatorError,
)
from .manifold import (
    InterpolantSpec,
    cartesian_weights,
    grassmann_exp,
    grassmann_log,
    matrix_exp,
    matrix_log_principal,
    procrustes_align,
    stencil_weights,
)
from .observables import lift, unlift
from .signals import ParameterGrid, parameterize_local, step_count

__all__ = [
    "AlignedStore",
    "PredictionTrajectory",
    "ErrorReport",
    "Predictor",
    "align_roms",
    "rob_tangents",
    "operator_logs",
    "interpolate_rob",
    "interpolate_rom",
    "predict",
    "evaluate",
]

log = logging.getLogger(__name__)


def _resolve_ref(store: ModelStore, ref_index) -> int:
    if ref_index is None:
        return store.grid.center_index
    ref = int(ref_index)
    if not 0 <= ref < len(store):
        raise ValueError(f"reference node {ref} outside 0..{len(store) - 1}")
    return ref


def _stencil(grid: ParameterGrid, point, spec: InterpolantSpec):
    """Indices and weights of the grid nodes contributing at ``point``."""
    if isinstance(spec.stencil, tuple):
        idx = np.asarray(spec.stencil, dtype=int)
        sub = InterpolantSpec(spec.scheme, "full", spec.allow_extrapolation)
        w = cartesian_weights(grid.points[idx], point, sub)
    else:
        w = stencil_weights(grid.axes, point, spec)
        idx = np.arange(len(w))
    keep = w != 0.0
    return idx[keep], w[keep]


# Step A: alignment ==========================================================
@dataclass(frozen=True, eq=False)
class AlignedStore:
    """Stored operators expressed in coordinates aligned with the reference
    node's basis: ``K~_m = S_m^T K_m S_m``."""

    ref_index: int
    grid: ParameterGrid
    operators: np.ndarray  # (M, r, r)
    rotations: np.ndarray  # (M, r, r), S_m
    degenerate: tuple[int, ...] = ()  # nodes with rank-deficient V_m^T V_ref


def align_roms(store: ModelStore, ref_index=None) -> AlignedStore:
    ref = _resolve_ref(store, ref_index)
    P = gram(store.V, store.V[ref])
    S = procrustes_align(P)
    S[ref] = np.eye(store.rank)
    K = np.swapaxes(S, -1, -2) @ store.K @ S
    K[ref] = store.K[ref]
    smin = np.linalg.svd(P, compute_uv=False)[:, -1]
    degenerate = tuple(int(m) for m in np.flatnonzero(smin <= 1e-12))
    if degenerate:
        log.warning("Procrustes factor not unique at %d node(s): %s",
                    len(degenerate), list(degenerate[:10]))
    return AlignedStore(ref_index=ref, grid=store.grid, operators=K, rotations=S,
                        degenerate=degenerate)


# Tangent images (input independent, computed once per run) ==================
def rob_tangents(store: ModelStore, ref_index=None, indices=None) -> np.ndarray:
    """Grassmann logarithms of the stored bases at the reference subspace.

    Returns an ``(M, N, r)`` array; rows not in ``indices`` are left zero.
    """
    ref = _resolve_ref(store, ref_index)
    idx = np.arange(len(store)) if indices is None else np.asarray(indices, dtype=int)
    out = np.zeros_like(store.V)
    V0 = store.V[ref]
    out[idx] = grassmann_log(V0, store.V[idx], gram(V0, store.V[idx]))
    out[ref] = 0.0
    return out


def operator_logs(aligned: AlignedStore):
    """``log(K~_m K~_ref^{-1})`` for every node.

    Returns ``(logs, failed)``; ``failed`` lists nodes whose product has no
    real principal logarithm (their ``logs`` rows are NaN).
    """
    K = aligned.operators
    K0 = K[aligned.ref_index]
    if not np.linalg.cond(K0) < 1e12:
        raise ReferenceOperatorError(
            f"aligned operator at reference node {aligned.ref_index} is singular; "
            "choose a different reference node"
        )
    # K_m K0^{-1} = (K0^{-T} K_m^T)^T
    R = np.swapaxes(np.linalg.solve(K0.T[None], np.swapaxes(K, -1, -2)), -1, -2)
    logs = np.full_like(K, np.nan)
    failed = []
    for m in range(len(K)):
        if m == aligned.ref_index:
            logs[m] = 0.0
            continue
        try:
            logs[m] = matrix_log_principal(R[m])
        except BranchError:
            failed.append(m)
    return logs, failed


def interpolate_rob(store: ModelStore, ref_index, point, spec: InterpolantSpec | None = None,
                    tangents=None) -> np.ndarray:
    """Basis at ``point`` by interpolation in the tangent space of the
    reference subspace."""
    spec = spec or InterpolantSpec()
    ref = _resolve_ref(store, ref_index)
    idx, w = _stencil(store.grid, point, spec)
    if tangents is None:
        tangents = rob_tangents(store, ref, idx)
    M = np.tensordot(w, tangents[idx], axes=(0, 0))
    return grassmann_exp(store.V[ref], M)


def interpolate_rom(aligned: AlignedStore, point, spec: InterpolantSpec | None = None,
                    logs=None, failed=None, return_info: bool = False):
    """Reduced operator at ``point`` on the manifold of nonsingular matrices:
    ``exp(sum_m w_m log(K~_m K~_ref^{-1})) K~_ref``.

    If any contributing node has no real logarithm, the aligned operators
    are interpolated entry by entry instead and ``info["fallback"]`` is set.
    """
    spec = spec or InterpolantSpec()
    idx, w = _stencil(aligned.grid, point, spec)
    info = {"fallback": False, "stencil": int(len(idx))}
    if spec.operator == "entrywise":
        K = np.tensordot(w, aligned.operators[idx], axes=(0, 0))
        return (K, info) if return_info else K
    if logs is None:
        logs, failed = operator_logs(aligned)
    failed = set(failed or ())
    if failed.intersection(idx.tolist()):
        info["fallback"] = True
        K = np.tensordot(w, aligned.operators[idx], axes=(0, 0))
    else:
        M = np.tensordot(w, logs[idx], axes=(0, 0))
        K = matrix_exp(M) @ aligned.operators[aligned.ref_index]
    return (K, info) if return_info else K


# Prediction =================================================================
class Predictor:
    """Precomputes everything about a store that does not depend on the test
    input: alignment, tangent images of all bases and operator logarithms."""

    def __init__(self, store: ModelStore, ref_index=None, spec: InterpolantSpec | None = None):
        self.store = store
        self.spec = spec or InterpolantSpec()
        self.ref_index = _resolve_ref(store, ref_index)
        self.aligned = align_roms(store, self.ref_index)
        if isinstance(self.spec.stencil, tuple):
            self.tangents = rob_tangents(store, self.ref_index, self.spec.stencil)
        else:
            self.tangents = rob_tangents(store, self.ref_index)
        self.logs, self.failed = None, []
        if self.spec.operator == "manifold":
            self.logs, self.failed = operator_logs(self.aligned)
        if self.failed:
            log.warning("no real operator logarithm at %d node(s); steps touching them "
                        "fall back to entry-wise interpolation", len(self.failed))

    def local_model(self, point):
        """``(V, K, info)`` at parameter point ``point``."""
        V = interpolate_rob(self.store, self.ref_index, point, self.spec, self.tangents)
        K, info = interpolate_rom(self.aligned, point, self.spec, self.logs, self.failed,
                                  return_info=True)
        return V, K, info

    def step(self, state, point):
        V, K, info = self.local_model(point)
        obs = self.store.observable
        y = lift(state, obs)
        return unlift(V @ (K @ (V.T @ y)), obs), info


@dataclass(eq=False)
class PredictionTrajectory:
    times: np.ndarray  # (n,)
    states: np.ndarray  # (n, N_S)
    params: np.ndarray  # (n - 1, N_par), input parameterization per step
    diagnostics: list = field(default_factory=list)
    divergence: dict | None = None

    @property
    def diverged(self) -> bool:
        return self.divergence is not None

    def to_csv(self, path, reference=None, errors=None):
        """``t, S_1..S_N [, ref_1.., abserr_1..]`` with a one-line header."""
        n = self.states.shape[1]
        header = ["t"] + [f"S_{i + 1}" for i in range(n)]
        cols = [self.times[:, None], self.states]
        if reference is not None:
            header += [f"ref_{i + 1}" for i in range(n)]
            header += [f"abserr_{i + 1}" for i in range(n)]
            reference = np.asarray(reference)[: len(self.times)]
            cols += [reference, np.abs(self.states - reference)]
        write_csv(path, header, np.hstack(cols))

    def write_diagnostics(self, path):
        with open(path, "w") as fh:
            for rec in self.diagnostics:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if self.divergence is not None:
                fh.write(json.dumps({"divergence": self.divergence}, sort_keys=True) + "\n")


def predict(store: ModelStore, s0, signals, T: float, ref_index=None,
            spec: InterpolantSpec | None = None, t0: float = 0.0,
            predictor: Predictor | None = None) -> PredictionTrajectory:
    """March the surrogate from ``s0`` under ``signals`` up to ``T``.

    A non-finite state stops the march; the partial trajectory is returned
    with ``divergence`` set.
    """
    pred = predictor or Predictor(store, ref_index, spec)
    signals = list(signals)
    bases = store.bases
    if len(signals) != len(bases):
        raise ValueError(f"model expects {len(bases)} input channels, got {len(signals)}")
    n = step_count(t0, T, store.dt)
    s = np.asarray(s0, dtype=float).reshape(-1)
    if s.shape[0] != store.observable.state_dim:
        raise ValueError(f"s0 has length {s.shape[0]}, model state_dim is "
                         f"{store.observable.state_dim}")
    box = store.provenance.get("state_box")
    if box is not None:
        box = np.asarray(box)
        if np.any(s < box[:, 0]) or np.any(s > box[:, 1]):
            log.warning("initial state %s lies outside the training box", s.tolist())
    times = t0 + store.dt * np.arange(n + 1)
    states = [s]
    params, diags = [], []
    divergence = None
    for k in range(n):
        p = parameterize_local(signals, times[k], bases)
        try:
            # overflow is detected below and reported as divergence
            with np.errstate(over="ignore", invalid="ignore"):
                s, info = pred.step(s, p)
        except ExtrapolationError as exc:
            raise ExtrapolationError(f"step {k} (t={times[k]:g}): {exc}", point=p) from None
        params.append(p)
        rec = {"k": k, "t": float(times[k]), **info}
        if box is not None:
            rec["outside_state_box"] = bool(np.any(s < box[:, 0]) or np.any(s > box[:, 1]))
        diags.append(rec)
        if not np.all(np.isfinite(s)):
            divergence = {"k": k, "t": float(times[k + 1]), "reason": "non-finite state"}
            log.error("prediction diverged at step %d", k)
            break
        states.append(s)
    m = len(states)
    return PredictionTrajectory(
        times=times[:m], states=np.stack(states),
        params=np.stack(params) if params else np.zeros((0, store.grid.ndim)),
        diagnostics=diags, divergence=divergence,
    )


# Evaluation =================================================================
@dataclass(eq=False)
class ErrorReport:
    times: np.ndarray
    abs_error: np.ndarray  # (n, N_S)
    max_abs: float
    rel_l2: float

    def to_csv(self, path):
        n = self.abs_error.shape[1]
        header = ["t"] + [f"abserr_{i + 1}" for i in range(n)]
        write_csv(path, header, np.hstack([self.times[:, None], self.abs_error]))


def evaluate(trajectory: PredictionTrajectory, ref_times, ref_states) -> ErrorReport:
    """Absolute error per step and component, max-abs and relative l2."""
    ref_times = np.asarray(ref_times, dtype=float)
    ref_states = np.asarray(ref_states, dtype=float).reshape(len(ref_times), -1)
    if len(ref_times) != len(trajectory.times) or ref_states.shape != trajectory.states.shape:
        raise ValueError(
            f"trajectory has {len(trajectory.times)} samples of shape "
            f"{trajectory.states.shape}, reference {ref_states.shape}"
        )
    if not np.allclose(ref_times, trajectory.times, rtol=0, atol=1e-9 * max(1.0, ref_times[-1])):
        raise ValueError("trajectory and reference time stamps differ")
    err = np.abs(trajectory.states - ref_states)
    denom = np.linalg.norm(ref_states)
    rel = float(np.linalg.norm(trajectory.states - ref_states) / denom) if denom > 0 else float(
        np.linalg.norm(err))
    return ErrorReport(times=trajectory.times, abs_error=err, max_abs=float(err.max()),
                       rel_l2=rel)
