"""Deadbeat disturbance-feedback gains for constant and time-varying nominal chains.

A disturbance ``d0`` injected as the initial state of the nominal chain
``x_{j+1} = A_j x_j + B_j u_j`` is driven to zero in ``M`` steps by
``u_j = K_j d0``. The gains solve ``P_M [K_0; ...; K_{M-1}] = -A_{M-1}...A_0``
with ``P_M = [A_{M-1}..A_1 B_0 | ... | A_{M-1} B_{M-2} | B_{M-1}]``; the LTI
case is the call with constant sequences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_RANK_TOL = 1e-10
RESIDUAL_TOL = 1e-8


class UncontrollableError(ValueError):
    pass


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DeadbeatPolicy:
    horizon_m: int
    gains: tuple  # K_0 .. K_{M-1}, each m x n
    phi: tuple  # Phi_0 .. Phi_{M-2}, each n x n
    residual: float

    def to_json(self) -> dict:
        return {
            "horizon_m": self.horizon_m,
            "gains": [k.tolist() for k in self.gains],
            "phi": [p.tolist() for p in self.phi],
            "residual": self.residual,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DeadbeatPolicy":
        gains = tuple(np.atleast_2d(np.array(k, dtype=float)) for k in data["gains"])
        phi = tuple(np.atleast_2d(np.array(p, dtype=float)) for p in data["phi"])
        return cls(int(data["horizon_m"]), gains, phi, float(data["residual"]))

    def digest(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _seq(mats: Sequence, length: int) -> list[np.ndarray]:
    mats = [np.atleast_2d(np.asarray(a, dtype=float)) for a in mats]
    if len(mats) < length:
        raise SynthesisError(f"sequence has {len(mats)} entries, need {length}")
    return mats[:length]


def reachability_matrix(a_seq, b_seq, horizon_m: int) -> np.ndarray:
    """``P_M`` for the chain ``(A_0, B_0), ..., (A_{M-1}, B_{M-1})``."""
    a = _seq(a_seq, horizon_m)
    b = _seq(b_seq, horizon_m)
    n = a[0].shape[0]
    blocks = []
    for j in range(horizon_m):
        t = np.eye(n)
        for i in range(j + 1, horizon_m):
            t = a[i] @ t
        blocks.append(t @ b[j])
    return np.hstack(blocks)


def chain_product(a_seq, horizon_m: int) -> np.ndarray:
    """``A_{M-1} ... A_1 A_0``."""
    a = _seq(a_seq, horizon_m)
    prod = np.eye(a[0].shape[0])
    for mat in a:
        prod = mat @ prod
    return prod


def _numerical_rank(mat: np.ndarray, rank_tol: float) -> int:
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def deadbeat_horizon(a_seq, b_seq, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Smallest ``M`` for which ``P_M`` has full row rank."""
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    length = min(len(a_seq), len(b_seq))
    n = np.atleast_2d(a_seq[0]).shape[0]
    for m in range(1, length + 1):
        if _numerical_rank(reachability_matrix(a_seq, b_seq, m), rank_tol) == n:
            return m
    raise UncontrollableError(
        f"P_M does not reach rank {n} for any M <= {length}; the nominal pair is not controllable"
    )


def aux_matrices(a_seq, b_seq, gains: Sequence[np.ndarray]) -> list[np.ndarray]:
    """``Phi_j = A_j Phi_{j-1} + B_j K_j`` with ``Phi_{-1} = I`` for j = 0..M-1."""
    a = _seq(a_seq, len(gains))
    b = _seq(b_seq, len(gains))
    phi = np.eye(a[0].shape[0])
    out = []
    for j, k in enumerate(gains):
        phi = a[j] @ phi + b[j] @ k
        out.append(phi)
    return out


def solve_gains(a_seq, b_seq, horizon_m: int, rank_tol: float = DEFAULT_RANK_TOL) -> DeadbeatPolicy:
    """Minimum-Frobenius-norm deadbeat gains for a horizon of ``horizon_m`` steps."""
    if horizon_m < 1:
        raise SynthesisError("deadbeat horizon must be at least 1")
    p_m = reachability_matrix(a_seq, b_seq, horizon_m)
    n = p_m.shape[0]
    m = np.atleast_2d(b_seq[0]).shape[1]
    if _numerical_rank(p_m, rank_tol) < n:
        raise SynthesisError(
            f"P_M is rank deficient at M={horizon_m}; try a larger deadbeat horizon"
        )
    target = -chain_product(a_seq, horizon_m)
    # columns of the stacked gain are independent, so lstsq gives the min-Frobenius solution
    stacked, *_ = np.linalg.lstsq(p_m, target, rcond=None)
    gains = tuple(stacked[j * m : (j + 1) * m, :] for j in range(horizon_m))
    phis = aux_matrices(a_seq, b_seq, gains)
    residual = float(np.linalg.norm(phis[-1]))
    if residual > RESIDUAL_TOL:
        raise SynthesisError(f"deadbeat residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    return DeadbeatPolicy(horizon_m, gains, tuple(phis[:-1]), residual)


def verify_deadbeat(policy: DeadbeatPolicy, a_seq, b_seq, d0) -> float:
    """Run ``u_j = K_j d0`` from ``x_0 = d0`` and return ``||x_M||``."""
    a = _seq(a_seq, policy.horizon_m)
    b = _seq(b_seq, policy.horizon_m)
    d0 = np.asarray(d0, dtype=float).ravel()
    x = d0.copy()
    for j, k in enumerate(policy.gains):
        x = a[j] @ x + b[j] @ (k @ d0)
    return float(np.linalg.norm(x))
