"""Reference dynamical systems, a fixed-step RK4 flow map and training-set
generation.

The integrator stands in for the unknown flow map: training pairs are
produced by advancing randomly drawn states one macro step under a locally
parameterized input, and reference trajectories for evaluation are produced
under the exact inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _binio
from .errors import ChecksumError, DivergenceError, StoreFormatError
from .signals import (
    LocalBasis,
    ParameterGrid,
    as_bases,
    channel_slices,
    step_count,
)

__all__ = [
    "ReferenceSystem",
    "IntegratorConfig",
    "TrainingSet",
    "integrate_step",
    "integrate_reference",
    "generate_training_set",
    "builtin_linear_scalar",
    "builtin_predator_prey",
    "builtin_forced_oscillator",
    "builtin_heat_1d",
    "get_system",
    "save_training_set",
    "load_training_set",
]

TRAININGSET_FORMAT = "nadmd-trainingset"
TRAININGSET_VERSION = 1


@dataclass(frozen=True, eq=False)
class ReferenceSystem:
    """A known ODE ``dS/dt = rhs(S, u, t)`` with ``u`` the input channel values.

    ``rhs`` must broadcast over leading batch dimensions of the state and
    input arrays.
    """

    name: str
    state_dim: int
    channel_labels: tuple[str, ...]
    rhs: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    state_box: np.ndarray  # (N_S, 2)
    param_bounds: np.ndarray  # (N_par, 2), default training domain
    nodes: tuple[int, ...]  # default nodes per channel
    substeps: int = 100

    @property
    def n_channels(self) -> int:
        return len(self.channel_labels)

    def bases(self, dt: float, nodes=None) -> tuple[LocalBasis, ...]:
        return tuple(LocalBasis(n, dt) for n in (nodes or self.nodes))


@dataclass(frozen=True)
class IntegratorConfig:
    substeps: int = 100

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError(f"substeps must be a positive integer, got {self.substeps}")


# Integration ================================================================
def _rk4(rhs, s, inputs, h, n_sub, t0=0.0):
    """``n_sub`` RK4 substeps; ``inputs[i]`` holds the input values at
    ``t0 + i*h/2``."""
    for j in range(n_sub):
        t = t0 + j * h
        u0, u1, u2 = inputs[2 * j], inputs[2 * j + 1], inputs[2 * j + 2]
        k1 = rhs(s, u0, t)
        k2 = rhs(s + 0.5 * h * k1, u1, t + 0.5 * h)
        k3 = rhs(s + 0.5 * h * k2, u1, t + 0.5 * h)
        k4 = rhs(s + h * k3, u2, t + h)
        s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        finite = np.isfinite(s)
        if not finite.all():
            index = tuple(int(b) for b in np.argwhere(~finite)[0][:-1])
            raise DivergenceError(
                f"non-finite state at substep {j} (batch index {index})",
                substep=j,
                index=index,
            )
    return s


def _local_inputs(p, bases, n_sub) -> np.ndarray:
    """Input values at the ``2*n_sub + 1`` half-substep local times.

    Returns shape ``(2*n_sub + 1, ..., n_channels)``.
    """
    dt = bases[0].dt
    taus = np.arange(2 * n_sub + 1) * (dt / (2 * n_sub))
    taus[-1] = dt
    cols = []
    for sl, b in zip(channel_slices(bases), bases):
        card = b.cardinal(taus)  # (n_tau, n_nodes)
        coeffs = p[..., sl]
        card = card.reshape((card.shape[0],) + (1,) * (coeffs.ndim - 1) + (b.n_nodes,))
        cols.append(np.sum(coeffs[None] * card, axis=-1))
    return np.stack(cols, axis=-1)


def integrate_step(system: ReferenceSystem, s0, p, basis, cfg: IntegratorConfig | None = None):
    """Advance the locally parameterized system one macro step ``dt``.

    ``s0`` has shape ``(..., N_S)`` and ``p`` shape ``(..., N_par)``; leading
    dimensions broadcast.
    """
    cfg = cfg or IntegratorConfig(system.substeps)
    bases = as_bases(basis, system.n_channels)
    s0 = np.asarray(s0, dtype=float)
    p = np.asarray(p, dtype=float)
    if s0.shape[-1] != system.state_dim:
        raise ValueError(f"state length {s0.shape[-1]} != {system.state_dim}")
    if p.shape[-1] != sum(b.n_nodes for b in bases):
        raise ValueError(f"parameter length {p.shape[-1]} does not match the basis")
    if not np.all(np.isfinite(s0)):
        raise ValueError("initial state is not finite")
    n_sub = cfg.substeps
    inputs = _local_inputs(p, bases, n_sub)
    h = bases[0].dt / n_sub
    return _rk4(system.rhs, s0, inputs, h, n_sub)


def integrate_reference(system: ReferenceSystem, s0, signals, t0: float, T: float,
                        dt: float, cfg: IntegratorConfig | None = None):
    """Trajectory under the exact inputs, sampled every ``dt``.

    Returns ``(times, states)`` with ``states`` of shape ``(N_T + 1, N_S)``.
    """
    cfg = cfg or IntegratorConfig(system.substeps)
    signals = list(signals)
    if len(signals) != system.n_channels:
        raise ValueError(f"{system.name} takes {system.n_channels} input channels")
    n_steps = step_count(t0, T, dt)
    n_sub = cfg.substeps
    h = dt / n_sub
    s = np.asarray(s0, dtype=float).copy()
    times = t0 + dt * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, system.state_dim))
    states[0] = s
    half = np.arange(2 * n_sub + 1) * (h / 2)
    for k in range(n_steps):
        tk = times[k]
        inputs = np.stack([sig(tk + half) for sig in signals], axis=-1)
        try:
            s = _rk4(system.rhs, s, inputs, h, n_sub, t0=tk)
        except DivergenceError as exc:
            raise DivergenceError(f"reference diverged in step {k}: {exc}",
                                  substep=exc.substep, index=(k,)) from None
        states[k + 1] = s
    return times, states


# Training data ==============================================================
@dataclass(frozen=True, eq=False)
class TrainingSet:
    """One-step snapshot pairs per grid point.

    ``s_in[m, j]`` is the j-th initial state drawn at grid point ``m`` and
    ``s_out[m, j]`` its image after one step.
    """

    system: str
    grid: ParameterGrid
    dt: float
    bases: tuple[LocalBasis, ...]
    n_snap: int
    seed: int
    substeps: int
    s_in: np.ndarray  # (M, n_snap, N_S)
    s_out: np.ndarray
    state_box: np.ndarray | None = None  # (N_S, 2) sampling box

    @property
    def n_points(self) -> int:
        return self.s_in.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.s_in.shape[0] * self.s_in.shape[1]

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(b.n_nodes for b in self.bases)

    def pairs(self, m: int):
        return self.s_in[m], self.s_out[m]


def generate_training_set(system: ReferenceSystem, grid: ParameterGrid, n_snap: int,
                          dt: float, basis=None, cfg: IntegratorConfig | None = None,
                          seed: int = 0, state_box=None, chunk: int = 256) -> TrainingSet:
    """Draw ``n_snap`` initial states per grid point and advance each one step.

    Point ``m`` uses its own generator seeded by ``(seed, m)``, so the result
    does not depend on ``chunk`` or on evaluation order.
    """
    cfg = cfg or IntegratorConfig(system.substeps)
    bases = as_bases(basis if basis is not None else system.bases(dt), system.n_channels)
    if abs(bases[0].dt - dt) > 1e-15 * dt:
        raise ValueError("basis dt does not match dt")
    n_par = sum(b.n_nodes for b in bases)
    if grid.ndim != n_par:
        raise ValueError(
            f"grid has {grid.ndim} dimensions but the parameterization of "
            f"{system.name} has {n_par} coefficients"
        )
    if n_snap < 1:
        raise ValueError("n_snap must be >= 1")
    box = np.asarray(state_box if state_box is not None else system.state_box, dtype=float)
    box = box.reshape(system.state_dim, 2)
    pts = grid.points
    M = len(pts)
    s_in = np.empty((M, n_snap, system.state_dim))
    for m in range(M):
        rng = np.random.default_rng([int(seed), m])
        s_in[m] = rng.uniform(box[:, 0], box[:, 1], size=(n_snap, system.state_dim))
    s_out = np.empty_like(s_in)
    for start in range(0, M, chunk):
        stop = min(start + chunk, M)
        try:
            s_out[start:stop] = integrate_step(
                system, s_in[start:stop], pts[start:stop, None, :], bases, cfg
            )
        except DivergenceError as exc:
            m, j = (exc.index + (0, 0))[:2]
            raise DivergenceError(
                f"training data diverged at grid point {start + m}, snapshot {j}",
                substep=exc.substep,
                index=(start + m, j),
            ) from None
    return TrainingSet(
        system=system.name, grid=grid, dt=float(dt), bases=bases, n_snap=int(n_snap),
        seed=int(seed), substeps=cfg.substeps, s_in=s_in, s_out=s_out, state_box=box,
    )


def save_training_set(ts: TrainingSet, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for m in range(ts.n_points):
        name = f"point_{m}.bin"
        digest = _binio.write_arrays(path / name, [ts.s_in[m], ts.s_out[m]])
        files.append({"name": name, "sha256": digest})
    manifest = {
        "format": TRAININGSET_FORMAT,
        "version": TRAININGSET_VERSION,
        "system": ts.system,
        "grid": ts.grid.to_dict(),
        "dt": ts.dt,
        "nodes": list(ts.nodes),
        "n_snap": ts.n_snap,
        "seed": ts.seed,
        "integrator": {"substeps": ts.substeps},
        "state_box": None if ts.state_box is None else np.asarray(ts.state_box).tolist(),
        "files": files,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_training_set(path) -> TrainingSet:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StoreFormatError(f"cannot read training-set manifest in {path}: {exc}") from None
    if manifest.get("format") != TRAININGSET_FORMAT:
        raise StoreFormatError(f"{path} is not a training set")
    if manifest.get("version") != TRAININGSET_VERSION:
        raise StoreFormatError(
            f"training-set version {manifest.get('version')} unsupported "
            f"(expected {TRAININGSET_VERSION})"
        )
    grid = ParameterGrid.from_dict(manifest["grid"])
    dt = float(manifest["dt"])
    s_in, s_out = [], []
    for entry in manifest["files"]:
        try:
            data = (path / entry["name"]).read_bytes()
        except OSError as exc:
            raise StoreFormatError(f"missing training-set file: {exc}") from None
        if hashlib.sha256(data).hexdigest() != entry["sha256"]:
            raise ChecksumError(f"checksum mismatch for {entry['name']}")
        a, b = _binio.unpack_arrays(data)
        s_in.append(a)
        s_out.append(b)
    return TrainingSet(
        system=manifest["system"], grid=grid, dt=dt,
        bases=tuple(LocalBasis(n, dt) for n in manifest["nodes"]),
        n_snap=int(manifest["n_snap"]), seed=int(manifest["seed"]),
        substeps=int(manifest["integrator"]["substeps"]),
        s_in=np.stack(s_in), s_out=np.stack(s_out),
        state_box=None if manifest.get("state_box") is None else np.array(manifest["state_box"]),
    )


# Built-in systems ===========================================================
def builtin_linear_scalar() -> ReferenceSystem:
    """``dS/dt = -alpha(t) S + beta(t)``."""

    def rhs(s, u, t):
        return -u[..., 0:1] * s + u[..., 1:2]

    return ReferenceSystem(
        name="linear_scalar", state_dim=1, channel_labels=("alpha", "beta"), rhs=rhs,
        state_box=np.array([[-2.0, 2.0]]), param_bounds=np.array([[-5.0, 5.0]] * 6),
        nodes=(3, 3), substeps=100,
    )


def builtin_predator_prey() -> ReferenceSystem:
    """Lotka-Volterra with an additive input on the prey equation."""

    def rhs(s, u, t):
        s1, s2 = s[..., 0], s[..., 1]
        return np.stack([s1 - s1 * s2 + u[..., 0], -s2 + s1 * s2], axis=-1)

    return ReferenceSystem(
        name="predator_prey", state_dim=2, channel_labels=("u",), rhs=rhs,
        state_box=np.array([[0.0, 5.0]] * 2), param_bounds=np.array([[0.0, 5.0]] * 3),
        nodes=(3,), substeps=100,
    )


def builtin_forced_oscillator() -> ReferenceSystem:
    """``S1' = S2``, ``S2' = -nu(t) S1 - S2 + f(t)``."""

    def rhs(s, u, t):
        s1, s2 = s[..., 0], s[..., 1]
        return np.stack([s2, -u[..., 0] * s1 - s2 + u[..., 1]], axis=-1)

    return ReferenceSystem(
        name="forced_oscillator", state_dim=2, channel_labels=("nu", "f"), rhs=rhs,
        state_box=np.array([[-3.0, 3.0]] * 2), param_bounds=np.array([[-1.0, 1.0]] * 6),
        nodes=(3, 3), substeps=100,
    )


def builtin_heat_1d(n_nodes: int = 20) -> ReferenceSystem:
    """Heat equation on ``[0, 1]`` with homogeneous Dirichlet ends and source
    ``alpha(t) * exp(-(x - mu)^2 / sigma^2)``.

    Second-order central differences on the interior nodes
    ``x_i = i / (n_nodes + 1)``. Channels are ``alpha`` (time-dependent),
    ``mu`` and ``sigma`` (constant per step, one coefficient each).
    """
    dx = 1.0 / (n_nodes + 1)
    x = dx * np.arange(1, n_nodes + 1)
    inv_dx2 = 1.0 / dx**2

    def rhs(s, u, t):
        lap = -2.0 * s
        lap[..., 1:] += s[..., :-1]
        lap[..., :-1] += s[..., 1:]
        alpha, mu, sigma = u[..., 0:1], u[..., 1:2], u[..., 2:3]
        return inv_dx2 * lap + alpha * np.exp(-((x - mu) ** 2) / sigma**2)

    bounds = np.array([[0.0, 1.0]] * 5 + [[0.0, 3.0], [0.05, 0.5]])
    return ReferenceSystem(
        name="heat_1d", state_dim=n_nodes, channel_labels=("alpha", "mu", "sigma"),
        rhs=rhs, state_box=np.array([[0.0, 1.0]] * n_nodes), param_bounds=bounds,
        nodes=(5, 1, 1), substeps=200,
    )


_SYSTEMS = {
    "linear_scalar": builtin_linear_scalar,
    "predator_prey": builtin_predator_prey,
    "forced_oscillator": builtin_forced_oscillator,
    "heat_1d": builtin_heat_1d,
}


def get_system(name: str) -> ReferenceSystem:
    try:
        return _SYSTEMS[name]()
    except KeyError:
        raise ValueError(f"unknown system {name!r}; expected one of {sorted(_SYSTEMS)}") from None
