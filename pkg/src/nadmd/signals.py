"""Time-dependent inputs and their local polynomial parameterization.

An input channel is represented on each step ``[t_k, t_k + dt]`` by its
samples at equally spaced nodes; with the Lagrange cardinal basis those
samples are exactly the local coefficients, so parameterizing a new input
amounts to sampling it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import HorizonError, ParameterizationError, SignalRangeError

__all__ = [
    "InputSignal",
    "LocalBasis",
    "GlobalParam",
    "ParameterGrid",
    "parameterize_local",
    "evaluate_local",
    "parameterize_global",
    "cartesian_grid",
    "channel_slices",
    "as_bases",
    "signal_from_declaration",
]


# Input signals ===============================================================
@dataclass(frozen=True)
class InputSignal:
    """One scalar input channel, a (vectorized) function of model time."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    label: str = "u"

    def __call__(self, t):
        return np.asarray(self.evaluator(np.asarray(t, dtype=float)), dtype=float)


def constant(value, label="constant"):
    value = float(value)
    return InputSignal(lambda t: np.full(np.shape(t), value), label)


def sin_affine(amplitude=1.0, frequency=1.0, phase=0.0, offset=0.0, label="sin"):
    """``amplitude * sin(frequency * t + phase) + offset``."""
    a, w, ph, c = map(float, (amplitude, frequency, phase, offset))
    return InputSignal(lambda t: a * np.sin(w * t + ph) + c, label)


def cos_affine(amplitude=1.0, frequency=1.0, phase=0.0, offset=0.0, label="cos"):
    """``amplitude * cos(frequency * t + phase) + offset``."""
    a, w, ph, c = map(float, (amplitude, frequency, phase, offset))
    return InputSignal(lambda t: a * np.cos(w * t + ph) + c, label)


def cos_power(amplitude=1.0, rate=1.0, power=1.0, offset=0.0, label="cos_power"):
    """``amplitude * cos(rate * t**power) + offset`` (slow chirps)."""
    a, k, q, c = map(float, (amplitude, rate, power, offset))
    return InputSignal(lambda t: a * np.cos(k * t**q) + c, label)


def poly_ratio(coefficients, denominator=1.0, label="poly_ratio"):
    """Polynomial in ``t`` (ascending coefficients) divided by a constant."""
    coefficients = [float(c) for c in coefficients]
    denominator = float(denominator)
    if denominator == 0.0:
        raise ValueError("poly_ratio denominator must be nonzero")
    poly = np.polynomial.Polynomial(coefficients)
    return InputSignal(lambda t: poly(t) / denominator, label)


def sawtooth(period=1.0, amplitude=1.0, offset=0.0, label="sawtooth"):
    """``amplitude * (t/period - floor(t/period)) + offset``."""
    period, a, c = float(period), float(amplitude), float(offset)
    if period <= 0:
        raise ValueError("sawtooth period must be positive")

    def _saw(t):
        x = t / period
        return a * (x - np.floor(x)) + c

    return InputSignal(_saw, label)


def signal_sum(terms, label="sum"):
    terms = list(terms)
    return InputSignal(lambda t: sum(term(t) for term in terms), label)


_BUILTINS = {
    "constant": constant,
    "sin_affine": sin_affine,
    "cos_affine": cos_affine,
    "cos_power": cos_power,
    "poly_ratio": poly_ratio,
    "sawtooth": sawtooth,
}


def signal_from_declaration(decl: dict, label: str | None = None) -> InputSignal:
    """Build a signal from a config entry such as ``{"kind": "sawtooth"}``.

    ``{"kind": "sum", "terms": [...]}`` adds its terms.
    """
    decl = dict(decl)
    kind = decl.pop("kind", None)
    name = label or decl.pop("label", None) or str(kind)
    decl.pop("label", None)
    if kind == "sum":
        terms = [signal_from_declaration(d) for d in decl.pop("terms")]
        if decl:
            raise ValueError(f"unexpected fields for 'sum': {sorted(decl)}")
        return signal_sum(terms, label=name)
    if kind not in _BUILTINS:
        raise ValueError(
            f"unknown signal kind {kind!r}; expected one of "
            f"{sorted(_BUILTINS) + ['sum']}"
        )
    try:
        return _BUILTINS[kind](label=name, **decl)
    except TypeError as exc:
        raise ValueError(f"bad parameters for signal {kind!r}: {exc}") from None


# Local basis ================================================================
@dataclass(frozen=True)
class LocalBasis:
    """Lagrange cardinal polynomials on ``n_nodes`` equispaced points in
    ``[0, dt]``.

    ``n_nodes == 1`` describes a channel held constant over the step (its
    single node sits at local time 0).
    """

    n_nodes: int
    dt: float

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise ValueError(f"n_nodes must be a positive integer, got {self.n_nodes}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")

    @property
    def node_times(self) -> np.ndarray:
        if self.n_nodes == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.dt, self.n_nodes)

    def cardinal(self, tau) -> np.ndarray:
        """Values of all cardinal polynomials at ``tau``; shape ``(..., n_nodes)``."""
        tau = np.asarray(tau, dtype=float)[..., None]
        nodes = self.node_times
        out = np.ones(tau.shape[:-1] + (self.n_nodes,))
        for j in range(self.n_nodes):
            for i in range(self.n_nodes):
                if i != j:
                    out[..., j] *= (tau[..., 0] - nodes[i]) / (nodes[j] - nodes[i])
        return out


def as_bases(basis, n_channels: int) -> tuple[LocalBasis, ...]:
    """Normalize a shared basis or a per-channel sequence to a tuple."""
    if isinstance(basis, LocalBasis):
        return (basis,) * n_channels
    bases = tuple(basis)
    if len(bases) != n_channels:
        raise ValueError(f"{len(bases)} bases given for {n_channels} channels")
    if len({b.dt for b in bases}) != 1:
        raise ValueError("all channel bases must share the same dt")
    return bases


def channel_slices(bases: Sequence[LocalBasis]) -> list[slice]:
    """Slices of the concatenated parameter vector owned by each channel."""
    out, start = [], 0
    for b in bases:
        out.append(slice(start, start + b.n_nodes))
        start += b.n_nodes
    return out


def parameterize_local(signals, t_k: float, basis) -> np.ndarray:
    """Local coefficients of all channels on ``[t_k, t_k + dt]``.

    Returns the concatenation, in channel order, of each signal sampled at
    ``t_k + node_times``.
    """
    signals = list(signals)
    bases = as_bases(basis, len(signals))
    blocks = []
    for c, (sig, b) in enumerate(zip(signals, bases)):
        times = t_k + b.node_times
        values = np.broadcast_to(sig(times), times.shape).astype(float)
        bad = ~np.isfinite(values)
        if bad.any():
            t_bad = float(times[np.argmax(bad)])
            raise ParameterizationError(
                f"channel {c} ({sig.label!r}) is not finite at t={t_bad!r}"
            )
        blocks.append(values)
    return np.concatenate(blocks)


def evaluate_local(p_k, channel: int, tau, basis) -> float | np.ndarray:
    """Reconstruct channel ``channel`` at local time ``tau`` from ``p_k``."""
    p_k = np.asarray(p_k, dtype=float)
    if isinstance(basis, LocalBasis):
        n_channels = p_k.shape[-1] // basis.n_nodes
    else:
        n_channels = len(basis)
    bases = as_bases(basis, n_channels)
    if sum(b.n_nodes for b in bases) != p_k.shape[-1]:
        raise ValueError(
            f"parameter vector of length {p_k.shape[-1]} does not match the basis"
        )
    b = bases[channel]
    tau = np.asarray(tau, dtype=float)
    slack = 1e-12 * b.dt
    if np.any(tau < -slack) or np.any(tau > b.dt + slack):
        raise SignalRangeError(f"local time {tau} outside [0, {b.dt}]")
    coeffs = p_k[..., channel_slices(bases)[channel]]
    val = np.sum(coeffs * b.cardinal(tau), axis=-1)
    return float(val) if val.ndim == 0 else val


# Global parameterization ====================================================
def step_count(t0: float, T: float, dt: float) -> int:
    ratio = (T - t0) / dt
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9:
        raise HorizonError(
            f"horizon T - t0 = {T - t0!r} must be a positive integer multiple "
            f"of dt = {dt!r}"
        )
    return n


@dataclass(frozen=True, eq=False)
class GlobalParam:
    """Per-step local coefficients of an input over ``[t0, t0 + N_T*dt]``."""

    steps: np.ndarray  # (N_T, N_par)
    dt: float
    t0: float
    bases: tuple[LocalBasis, ...]

    @property
    def n_steps(self) -> int:
        return self.steps.shape[0]

    def step_index(self, t: float) -> int:
        """Index of the step owning ``t`` (closed-left; last step closed)."""
        k = math.floor((t - self.t0) / self.dt)
        end = self.t0 + self.n_steps * self.dt
        if k == self.n_steps and abs(t - end) <= 1e-12 * max(1.0, abs(end)):
            k -= 1
        if not 0 <= k < self.n_steps:
            raise SignalRangeError(f"t={t} outside [{self.t0}, {end}]")
        return k

    def evaluate(self, t: float, channel: int = 0) -> float:
        k = self.step_index(t)
        tau = min(max(t - (self.t0 + k * self.dt), 0.0), self.dt)
        return evaluate_local(self.steps[k], channel, tau, self.bases)


def parameterize_global(signals, t0: float, T: float, basis) -> GlobalParam:
    signals = list(signals)
    bases = as_bases(basis, len(signals))
    dt = bases[0].dt
    n = step_count(t0, T, dt)
    steps = np.stack([parameterize_local(signals, t0 + k * dt, bases) for k in range(n)])
    return GlobalParam(steps=steps, dt=dt, t0=float(t0), bases=bases)


# Parameter grid =============================================================
@dataclass(frozen=True, eq=False)
class ParameterGrid:
    """Cartesian grid over a box, enumerated in row-major order (the first
    dimension varies slowest)."""

    bounds: np.ndarray  # (d, 2)
    points_per_dim: int = 3

    @property
    def ndim(self) -> int:
        return self.bounds.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_dim,) * self.ndim

    def __len__(self):
        return self.points_per_dim**self.ndim

    @cached_property
    def axes(self) -> list[np.ndarray]:
        out = []
        for lo, hi in self.bounds:
            ax = np.linspace(lo, hi, self.points_per_dim)
            ax[0], ax[-1] = lo, hi
            if self.points_per_dim % 2 == 1:
                ax[self.points_per_dim // 2] = 0.5 * (lo + hi)
            out.append(ax)
        return out

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def multi_index(self, m: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(m, self.shape))

    def flat_index(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    @property
    def center_index(self) -> int:
        return self.flat_index([self.points_per_dim // 2] * self.ndim)

    def to_dict(self) -> dict:
        return {"bounds": self.bounds.tolist(), "points_per_dim": self.points_per_dim}

    @classmethod
    def from_dict(cls, d) -> "ParameterGrid":
        return cartesian_grid(d["bounds"], d["points_per_dim"])


def cartesian_grid(bounds, points_per_dim: int = 3) -> ParameterGrid:
    bounds = np.array(bounds, dtype=float).reshape(-1, 2)
    if int(points_per_dim) != points_per_dim or points_per_dim < 2:
        raise ValueError(f"points_per_dim must be an integer >= 2, got {points_per_dim}")
    if bounds.shape[0] == 0:
        raise ValueError("at least one dimension is required")
    bad = np.flatnonzero(~(bounds[:, 0] < bounds[:, 1]))
    if bad.size:
        raise ValueError(
            f"inverted or empty bounds in dimension(s) {bad.tolist()}: "
            f"{bounds[bad].tolist()}"
        )
    return ParameterGrid(bounds=bounds, points_per_dim=int(points_per_dim))
