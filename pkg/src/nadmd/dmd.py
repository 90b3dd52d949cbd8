"""Offline step: one truncated DMD surrogate per parameter grid point.

At grid point ``m`` the lifted snapshot matrices ``Y1 = g(S_in)`` and
``Y2 = g(S_out)`` (one column per snapshot) give the thin SVD
``Y1 ~ V diag(s) Z^T`` truncated to rank ``r`` and the reduced operator
``K_r = V^T Y2 Z diag(s)^{-1}``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _binio
from .errors import (
    ChecksumError,
    RankDeficiencyError,
    RankInfeasibleError,
    StoreFormatError,
    TrainingError,
)
from .observables import ObservableSpec, lift
from .signals import LocalBasis, ParameterGrid

__all__ = [
    "LocalROM",
    "ModelStore",
    "RankPolicy",
    "fit_local",
    "choose_rank",
    "train",
    "gram",
    "training_residuals",
    "save",
    "load",
]

STORE_FORMAT = "nadmd-modelstore"
STORE_VERSION = 1
RANK_FLOOR = 1e-12


@dataclass(frozen=True)
class RankPolicy:
    """Global truncation rule: ``fixed`` rank or smallest rank reaching an
    ``energy`` fraction of the squared singular values at every point."""

    kind: str = "energy"
    value: float = 1.0 - 1e-10

    def __post_init__(self):
        if self.kind == "fixed":
            if int(self.value) != self.value or self.value < 1:
                raise ValueError(f"fixed rank must be a positive integer, got {self.value}")
        elif self.kind == "energy":
            if not 0.0 < self.value <= 1.0:
                raise ValueError(f"energy fraction must lie in (0, 1], got {self.value}")
        else:
            raise ValueError(f"unknown rank policy {self.kind!r}")

    @classmethod
    def fixed(cls, r: int) -> "RankPolicy":
        return cls("fixed", int(r))

    @classmethod
    def energy(cls, eta: float) -> "RankPolicy":
        return cls("energy", float(eta))

    def to_dict(self):
        return {"policy": self.kind, "value": self.value}


@dataclass(frozen=True, eq=False)
class LocalROM:
    point: np.ndarray
    V: np.ndarray  # (N, r), orthonormal columns
    K: np.ndarray  # (r, r)
    singular_values: np.ndarray  # all singular values of Y1

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    def full_operator(self) -> np.ndarray:
        """``V K V^T``, the rank-r surrogate acting on observables."""
        return self.V @ self.K @ self.V.T


def _signed_svd(Y):
    """Thin SVD with each left singular vector's largest-magnitude entry
    made positive (and the right vector flipped to match)."""
    U, s, Zt = np.linalg.svd(Y, full_matrices=False)
    idx = np.argmax(np.abs(U), axis=0)
    sign = np.sign(U[idx, np.arange(U.shape[1])])
    sign[sign == 0] = 1.0
    return U * sign, s, Zt * sign[:, None]


def fit_local(s_in, s_out, spec: ObservableSpec, r: int, point=None, index=None) -> LocalROM:
    """DMD fit on one grid point's snapshot pairs.

    ``s_in`` and ``s_out`` have shape ``(n_snap, N_S)``.
    """
    s_in = np.atleast_2d(np.asarray(s_in, dtype=float))
    s_out = np.atleast_2d(np.asarray(s_out, dtype=float))
    if s_in.shape != s_out.shape:
        raise ValueError(f"snapshot shapes differ: {s_in.shape} vs {s_out.shape}")
    if s_in.shape[0] < 1:
        raise ValueError("at least one snapshot pair is required")
    Y1 = lift(s_in, spec).T
    Y2 = lift(s_out, spec).T
    where = f"grid point {index}" if index is not None else "this point"
    if not 1 <= r <= min(Y1.shape):
        raise RankInfeasibleError(
            f"rank {r} infeasible at {where}: min(N, n_snap) = {min(Y1.shape)}",
            points=[index],
        )
    U, s, Zt = _signed_svd(Y1)
    if not s[0] > 0 or s[r - 1] / s[0] <= RANK_FLOOR:
        ratio = s[r - 1] / s[0] if s[0] > 0 else 0.0
        raise RankDeficiencyError(
            f"snapshot matrix at {where} is rank deficient: "
            f"sigma_{r}/sigma_1 = {ratio:.3e} <= {RANK_FLOOR:g}",
            point=index,
        )
    V = U[:, :r]
    K = (V.T @ Y2 @ Zt[:r].T) / s[:r]
    p = np.asarray(point, dtype=float) if point is not None else np.zeros(0)
    return LocalROM(point=p, V=V, K=K, singular_values=s)


def choose_rank(singular_values, policy: RankPolicy) -> int:
    """Common truncation rank for all grid points.

    ``singular_values`` is a sequence (one entry per point) of descending
    singular value arrays of the lifted snapshot matrices.
    """
    svs = [np.asarray(s, dtype=float) for s in singular_values]
    if not svs:
        raise ValueError("no singular values given")
    cap = min(len(s) for s in svs)
    if policy.kind == "fixed":
        r = int(policy.value)
        bad = [m for m, s in enumerate(svs)
               if r > len(s) or not s[0] > 0 or s[r - 1] / s[0] <= RANK_FLOOR]
        if bad:
            raise RankInfeasibleError(
                f"fixed rank {r} infeasible at {len(bad)} grid point(s) "
                f"(max feasible {cap}); first: {bad[:10]}",
                points=bad,
            )
        return r
    r = 1
    for s in svs:
        energy = np.cumsum(s**2)
        if energy[-1] == 0:
            continue
        r = max(r, int(np.searchsorted(energy / energy[-1], policy.value)) + 1)
    return min(r, cap)


def gram(Va, Vb) -> np.ndarray:
    """``Va^T Vb`` (broadcasts over leading axes)."""
    Va = np.asarray(Va, dtype=float)
    Vb = np.asarray(Vb, dtype=float)
    if Va.shape[-2] != Vb.shape[-2]:
        raise ValueError(f"gram of incompatible shapes {Va.shape} and {Vb.shape}")
    return np.swapaxes(Va, -1, -2) @ Vb


@dataclass(frozen=True, eq=False)
class ModelStore:
    """All local surrogates plus what is needed to use them online."""

    observable: ObservableSpec
    grid: ParameterGrid
    dt: float
    nodes: tuple[int, ...]
    rank: int
    V: np.ndarray  # (M, N, r)
    K: np.ndarray  # (M, r, r)
    singular_values: np.ndarray  # (M, min(N, n_snap))
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.V.shape[0]

    @property
    def bases(self) -> tuple[LocalBasis, ...]:
        return tuple(LocalBasis(n, self.dt) for n in self.nodes)

    def local_rom(self, m: int) -> LocalROM:
        return LocalROM(point=self.grid.points[m], V=self.V[m], K=self.K[m],
                        singular_values=self.singular_values[m])


def train(ts, spec: ObservableSpec, policy: RankPolicy | None = None) -> ModelStore:
    """Fit every grid point of a :class:`~nadmd.systems.TrainingSet`."""
    policy = policy or RankPolicy()
    if ts.n_points == 0 or ts.n_snap == 0:
        raise ValueError("training set is empty")
    if ts.n_points != len(ts.grid):
        raise ValueError(f"training set has {ts.n_points} points, grid has {len(ts.grid)}")
    if ts.s_in.shape[-1] != spec.state_dim:
        raise ValueError(
            f"observable expects state_dim {spec.state_dim}, data has {ts.s_in.shape[-1]}"
        )
    Y1 = np.swapaxes(lift(ts.s_in, spec), -1, -2)
    sv = np.linalg.svd(Y1, compute_uv=False)
    r = choose_rank(sv, policy)
    pts = ts.grid.points
    roms, failures = [], []
    for m in range(ts.n_points):
        try:
            roms.append(fit_local(ts.s_in[m], ts.s_out[m], spec, r, point=pts[m], index=m))
        except (RankDeficiencyError, RankInfeasibleError) as exc:
            failures.append((m, str(exc)))
    if failures:
        head = "; ".join(msg for _, msg in failures[:3])
        raise TrainingError(
            f"{len(failures)} grid point(s) failed at rank {r}: {head}",
            failures=failures,
        )
    provenance = {
        "system": ts.system,
        "seed": ts.seed,
        "n_snap": ts.n_snap,
        "substeps": ts.substeps,
        "rank_policy": policy.to_dict(),
    }
    if getattr(ts, "state_box", None) is not None:
        provenance["state_box"] = np.asarray(ts.state_box).tolist()
    return ModelStore(
        observable=spec, grid=ts.grid, dt=ts.dt, nodes=ts.nodes, rank=r,
        V=np.stack([rom.V for rom in roms]), K=np.stack([rom.K for rom in roms]),
        singular_values=np.stack([rom.singular_values for rom in roms]),
        provenance=provenance,
    )


def training_residuals(store: ModelStore, ts) -> np.ndarray:
    """Relative one-step residual ``||V K V^T Y1 - Y2|| / ||Y2||`` per point."""
    Y1 = np.swapaxes(lift(ts.s_in, store.observable), -1, -2)
    Y2 = np.swapaxes(lift(ts.s_out, store.observable), -1, -2)
    Vt = np.swapaxes(store.V, -1, -2)
    pred = store.V @ (store.K @ (Vt @ Y1))
    return np.linalg.norm(pred - Y2, axis=(-2, -1)) / np.linalg.norm(Y2, axis=(-2, -1))


# Persistence ================================================================
def save(store: ModelStore, path) -> Path:
    """Write ``manifest.json`` and one ``rom_<m>.bin`` per grid point."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for m in range(len(store)):
        name = f"rom_{m}.bin"
        digest = _binio.write_arrays(
            path / name, [store.V[m], store.K[m], store.singular_values[m]]
        )
        files.append({"name": name, "sha256": digest})
    manifest = {
        "format": STORE_FORMAT,
        "version": STORE_VERSION,
        "observable": store.observable.to_dict(),
        "grid": store.grid.to_dict(),
        "dt": store.dt,
        "nodes": list(store.nodes),
        "rank": store.rank,
        "provenance": store.provenance,
        "files": files,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load(path) -> ModelStore:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StoreFormatError(f"cannot read model manifest in {path}: {exc}") from None
    if manifest.get("format") != STORE_FORMAT:
        raise StoreFormatError(f"{path} is not a model store")
    if manifest.get("version") != STORE_VERSION:
        raise StoreFormatError(
            f"model store version {manifest.get('version')} unsupported "
            f"(expected {STORE_VERSION})"
        )
    grid = ParameterGrid.from_dict(manifest["grid"])
    if len(manifest["files"]) != len(grid):
        raise StoreFormatError(
            f"manifest lists {len(manifest['files'])} ROMs for {len(grid)} grid points"
        )
    Vs, Ks, svs = [], [], []
    for entry in manifest["files"]:
        try:
            data = (path / entry["name"]).read_bytes()
        except OSError as exc:
            raise StoreFormatError(f"missing ROM file: {exc}") from None
        if hashlib.sha256(data).hexdigest() != entry["sha256"]:
            raise ChecksumError(f"checksum mismatch for {entry['name']}")
        V, K, s = _binio.unpack_arrays(data)
        Vs.append(V)
        Ks.append(K)
        svs.append(s)
    return ModelStore(
        observable=ObservableSpec.from_dict(manifest["observable"]),
        grid=grid,
        dt=float(manifest["dt"]),
        nodes=tuple(int(n) for n in manifest["nodes"]),
        rank=int(manifest["rank"]),
        V=np.stack(Vs), K=np.stack(Ks), singular_values=np.stack(svs),
        provenance=manifest.get("provenance", {}),
    )
