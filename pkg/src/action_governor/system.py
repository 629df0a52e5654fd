"""Discrete-time linear plant x(k+1) = A x(k) + B u(k)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularMatrix


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Plant matrices and sampling period.

    ``A`` must be invertible so unrecoverable sets can be pulled back
    through the dynamics.
    """

    A: np.ndarray
    B: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("system matrices contain NaN or Inf")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.atleast_1d(np.asarray(u, dtype=float))

    def check_invertible(self) -> None:
        s = np.linalg.svd(self.A, compute_uv=False)
        if s[-1] <= 1e-12 * max(s[0], 1.0):
            raise SingularMatrix("A is singular (reciprocal condition below 1e-12)")
