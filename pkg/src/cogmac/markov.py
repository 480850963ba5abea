"""Off-period and on-period chains over the number of secondary transmitters.

State ``k`` means exactly ``k`` secondary users transmitted in a slot.  The
full matrices use the bordered orderings ``(0, 2, ..., N | 1)`` for the
off-period chain and ``(1, ..., N | 0)`` for the on-period chain, so the
transient block is always the upper-left ``N x N`` corner and the first
entry of an absorption solve refers to state 0 (off) or state 1 (on).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .core import ModelDomainError, NumericalError, Protocol

SOLVE_RESIDUAL_TOL = 1e-8


@lru_cache(maxsize=64)
def _pascal(n: int) -> np.ndarray:
    C = np.zeros((n + 1, n + 1))
    C[:, 0] = 1.0
    for k in range(1, n + 1):
        C[k, 1 : k + 1] = C[k - 1, 0:k] + C[k - 1, 1 : k + 1]
    C.setflags(write=False)
    return C


def binomial_row(n: int, p) -> np.ndarray:
    """Binomial(n, p) probabilities of ``0..n``; ``p`` may carry leading axes."""
    p = np.asarray(p, dtype=float)[..., None]
    j = np.arange(n + 1)
    return _pascal(n)[n] * p**j * (1.0 - p) ** (n - j)


def binomial_table(n: int, p) -> np.ndarray:
    """``T[..., k, j] = C(k, j) p^j (1-p)^(k-j)`` for ``0 <= j <= k <= n``.

    ``p`` may be a scalar or an array; extra leading axes follow its shape.
    """
    p = np.asarray(p, dtype=float)[..., None, None]
    k = np.arange(n + 1)[:, None]
    j = np.arange(n + 1)[None, :]
    # exponent is clipped so entries above the diagonal stay finite (they are zeroed by C)
    return _pascal(n) * p**j * (1.0 - p) ** np.maximum(k - j, 0)


def off_order(n: int) -> list[int]:
    return [0] + list(range(2, n + 1)) + [1]


def on_order(n: int) -> list[int]:
    return list(range(1, n + 1)) + [0]


@dataclass(frozen=True)
class OffChain:
    """Off-period transition structure (primary silent)."""

    protocol: Protocol
    n: int
    full_matrix: np.ndarray
    q_block: np.ndarray
    e: np.ndarray = field(repr=False)

    @property
    def order(self) -> list[int]:
        return off_order(self.n)

    def natural_matrix(self) -> np.ndarray:
        """Transition matrix indexed by state ``0..N`` in natural order."""
        idx = np.argsort(self.order)
        return self.full_matrix[np.ix_(idx, idx)]

    def absorption_slots(self) -> np.ndarray:
        return expected_absorption_slots(self.q_block, params=_params(self.protocol, self.n))


@dataclass(frozen=True)
class OnChain:
    """On-period transition structure; state 0 (primary success) absorbs."""

    protocol: Protocol
    n: int
    full_matrix: np.ndarray
    q_block: np.ndarray
    absorbing_state: int = 0

    @property
    def order(self) -> list[int]:
        return on_order(self.n)

    def natural_matrix(self) -> np.ndarray:
        idx = np.argsort(self.order)
        return self.full_matrix[np.ix_(idx, idx)]

    def absorption_slots(self) -> np.ndarray:
        return expected_absorption_slots(self.q_block, params=_params(self.protocol, self.n))


def _params(protocol: Protocol, n: int) -> dict:
    return {"q": protocol.q, "r": protocol.r, "theta": protocol.theta, "n": n}


def _check_n(n) -> int:
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    return int(n)


def off_matrix_natural(protocol: Protocol, n: int) -> np.ndarray:
    n = _check_n(n)
    P = binomial_table(n, protocol.r)
    P[0, :] = binomial_row(n, protocol.q)
    P[1, :] = 0.0
    P[1, 0] = protocol.theta
    P[1, 1] = 1.0 - protocol.theta
    return P


def on_matrix_natural(protocol: Protocol, n: int) -> np.ndarray:
    n = _check_n(n)
    P = binomial_table(n, protocol.r)
    # state 0 is absorbing: Binomial(0, r) already puts unit mass on 0
    return P


def build_off_chain(protocol: Protocol, n: int) -> OffChain:
    P = off_matrix_natural(protocol, n)
    order = off_order(n)
    full = P[np.ix_(order, order)]
    return OffChain(
        protocol=protocol,
        n=n,
        full_matrix=full,
        q_block=full[:n, :n].copy(),
        e=np.ones(n),
    )


def build_on_chain(protocol: Protocol, n: int) -> OnChain:
    P = on_matrix_natural(protocol, n)
    order = on_order(n)
    full = P[np.ix_(order, order)]
    return OnChain(protocol=protocol, n=n, full_matrix=full, q_block=full[:n, :n].copy())


def expected_absorption_slots(q_block: np.ndarray, params: Optional[dict] = None) -> np.ndarray:
    """Mean number of slots spent before absorption, ``(I - Q)^{-1} e``.

    Computed with an LU solve; raises :class:`NumericalError` when the system
    is singular or the residual exceeds ``SOLVE_RESIDUAL_TOL``.
    """
    Q = np.asarray(q_block, dtype=float)
    m = Q.shape[0]
    A = np.eye(m) - Q
    e = np.ones(m)
    try:
        x = np.linalg.solve(A, e)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular absorption system: {exc}", params) from None
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite absorption times", params)
    residual = np.max(np.abs(A @ x - e))
    if residual > SOLVE_RESIDUAL_TOL:
        raise NumericalError(f"absorption solve residual {residual:.3e} too large", params)
    return x


def stationary_distribution(chain: OffChain) -> np.ndarray:
    """Stationary vector of the off-period chain, indexed by state ``0..N``.

    Solves ``w (P - I) = 0`` with one balance equation replaced by the
    normalisation ``sum(w) = 1``.
    """
    proto = chain.protocol
    # q in {0, 1} or r = 1 traps the chain in a subset of states
    if not (0.0 < proto.q < 1.0 and 0.0 <= proto.r < 1.0):
        raise ModelDomainError(
            f"off-period chain needs q in (0, 1) and r in [0, 1) to be irreducible (q={proto.q}, r={proto.r})"
        )
    P = chain.natural_matrix()
    m = P.shape[0]
    A = P.T - np.eye(m)
    A[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    try:
        w = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"stationary system singular: {exc}", _params(proto, chain.n)) from None
    if np.min(w) < -1e-12:
        raise NumericalError("negative stationary probability", _params(proto, chain.n))
    w = np.clip(w, 0.0, None)
    residual = max(np.max(np.abs(w @ P - w)), abs(w.sum() - 1.0))
    if residual > 1e-10:
        raise NumericalError(f"stationary residual {residual:.3e}", _params(proto, chain.n))
    return w
