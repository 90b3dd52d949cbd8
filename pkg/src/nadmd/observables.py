"""Observable dictionaries lifting states into a space where the one-step
dynamics is (approximately) linear, and the inverse map back to states."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement
from math import comb

import numpy as np

__all__ = ["ObservableSpec", "lift", "unlift", "dictionary_dim"]

_KINDS = ("identity", "monomials")


@dataclass(frozen=True)
class ObservableSpec:
    """Which dictionary to use.

    ``monomials`` enumerates every monomial of total degree ``1..degree`` in
    graded-lexicographic order, so the raw coordinates come first. For two
    states and degree 3 the order is ``S1, S2, S1^2, S1 S2, S2^2, S1^3,
    S1^2 S2, S1 S2^2, S2^3``.

    ``constant=True`` appends the constant observable 1 after all other
    entries, which lets a linear surrogate carry additive forcing.
    """

    kind: str
    state_dim: int
    degree: int = 1
    constant: bool = False

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}; expected {_KINDS}")
        if self.state_dim < 1:
            raise ValueError("state_dim must be positive")
        if self.kind == "monomials" and self.degree < 1:
            raise ValueError("monomial degree must be >= 1")

    @cached_property
    def terms(self) -> tuple[tuple[int, ...], ...]:
        """Coordinate index tuples of each monomial (repetition = power)."""
        if self.kind == "identity":
            return tuple((i,) for i in range(self.state_dim))
        out = []
        for d in range(1, self.degree + 1):
            out.extend(combinations_with_replacement(range(self.state_dim), d))
        return tuple(out)

    @property
    def dim(self) -> int:
        return dictionary_dim(self)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "degree": self.degree, "state_dim": self.state_dim,
                "constant": self.constant}

    @classmethod
    def from_dict(cls, d) -> "ObservableSpec":
        return cls(kind=d["kind"], state_dim=int(d["state_dim"]),
                   degree=int(d.get("degree", 1)), constant=bool(d.get("constant", False)))


def dictionary_dim(spec: ObservableSpec) -> int:
    if spec.kind == "identity":
        n = spec.state_dim
    else:
        n = comb(spec.state_dim + spec.degree, spec.degree) - 1
    return n + int(spec.constant)


def lift(s, spec: ObservableSpec) -> np.ndarray:
    """Map states of shape ``(..., N_S)`` to observables ``(..., N)``."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 0 or s.shape[-1] != spec.state_dim:
        raise ValueError(
            f"state has trailing dimension {s.shape[-1:] or ()}, expected {spec.state_dim}"
        )
    out = np.empty(s.shape[:-1] + (spec.dim,))
    if spec.kind == "identity":
        out[..., : spec.state_dim] = s
    else:
        for k, term in enumerate(spec.terms):
            val = s[..., term[0]].copy()
            for i in term[1:]:
                val *= s[..., i]
            out[..., k] = val
    if spec.constant:
        out[..., -1] = 1.0
    return out


def unlift(y, spec: ObservableSpec) -> np.ndarray:
    """Recover states from observables by reading the raw-coordinate block."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or y.shape[-1] != spec.dim:
        raise ValueError(
            f"observable has trailing dimension {y.shape[-1:] or ()}, expected {spec.dim}"
        )
    return y[..., : spec.state_dim].copy()
