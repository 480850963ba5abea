"""Closed-form performance of theta-fair non-intrusive protocols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Metrics, ModelDomainError, NetworkConfig, Protocol, collision_probability
from .markov import (
    OffChain,
    binomial_row,
    binomial_table,
    build_off_chain,
    build_on_chain,
    stationary_distribution,
)


@dataclass(frozen=True)
class CollisionProfile:
    """Expected primary collisions in an on period, by the last off-slot state."""

    d: np.ndarray
    w_off: np.ndarray
    t_col: float


def contention_length(protocol: Protocol, n: int) -> float:
    """Mean contention-period length: slots from an idle slot to the next success."""
    return float(build_off_chain(protocol, n).absorption_slots()[0])


def _check_interior(protocol: Protocol) -> None:
    if not (0.0 < protocol.q < 1.0 and 0.0 < protocol.r < 1.0):
        raise ModelDomainError(f"off-period analysis needs q, r in (0, 1) (q={protocol.q}, r={protocol.r})")


def success_probability(protocol: Protocol, n: int) -> float:
    _check_interior(protocol)
    t_ns = contention_length(protocol, n)
    return 1.0 / (protocol.theta * t_ns + 1.0)


def collision_profile(
    protocol: Protocol, n: int, p1_enabled: bool = False, off_chain: OffChain | None = None
) -> CollisionProfile:
    """Per-state collision counts ``d(k)`` and their stationary average.

    With ``p1_enabled`` a user that fails right after a success backs off, so
    an on period entered from a success slot costs at most one collision.
    """
    if not 0.0 <= protocol.r < 1.0:
        raise ModelDomainError(f"on-period chain needs r in [0, 1) (r={protocol.r})")
    theta = protocol.theta
    x = build_on_chain(protocol, n).absorption_slots()  # x[k-1] for state k
    d = np.empty(n + 1)
    d[2:] = x[1:] - 1.0
    d[1] = (1.0 - theta) if p1_enabled else (1.0 - theta) * x[0]
    d[0] = float(binomial_row(n, protocol.q)[1:] @ x)
    w = stationary_distribution(off_chain or build_off_chain(protocol, n))
    return CollisionProfile(d=d, w_off=w, t_col=float(w @ d))


def assemble_metrics(p_s: float, t_ns: float, theta: float, t_col: float, config: NetworkConfig) -> Metrics:
    t_int, t_pac = config.t_int, config.t_pac
    if not t_col < t_int - t_pac:
        raise ModelDomainError(
            f"unstable: t_col={t_col:.6g} >= t_int - t_pac = {t_int - t_pac:.6g}"
        )
    c_s = p_s * (t_int - t_pac - t_col) / t_int
    c_p = t_pac / t_int
    c = c_p + c_s
    return Metrics(
        p_s=p_s,
        t_ns_tilde=t_ns,
        t_s_tilde=1.0 / theta,
        t_col=t_col,
        p_c=collision_probability(t_col, t_pac),
        c_s=c_s,
        c_p=c_p,
        c_total=c,
        efficiency=c,  # the ideal-control bound on C is 1
    )


def full_metrics(protocol: Protocol, config: NetworkConfig, p1_enabled: bool = False) -> Metrics:
    n = config.n_secondary
    _check_interior(protocol)
    off = build_off_chain(protocol, n)
    t_ns = float(off.absorption_slots()[0])
    p_s = 1.0 / (protocol.theta * t_ns + 1.0)
    profile = collision_profile(protocol, n, p1_enabled, off_chain=off)
    return assemble_metrics(p_s, t_ns, protocol.theta, profile.t_col, config)


@dataclass(frozen=True)
class MetricGrid:
    """Metrics over a ``(q, r)`` grid; arrays are indexed ``[i_q, j_r]``.

    ``c_s`` is NaN where the stability condition fails.
    """

    q: np.ndarray
    r: np.ndarray
    p_s: np.ndarray
    t_ns: np.ndarray
    t_col: np.ndarray
    c_s: np.ndarray

    @property
    def stable(self) -> np.ndarray:
        return np.isfinite(self.c_s)


def metric_grid(
    qs,
    rs,
    theta: float,
    config: NetworkConfig,
    p1_enabled: bool = False,
) -> MetricGrid:
    """Evaluate ``P_s``, ``T_col`` and ``C_s`` on every ``(q, r)`` pair.

    All ``q`` values sharing one ``r`` are solved as a single batch.  The
    stationary weights come from row 0 of the off-period fundamental matrix
    (visits before the first success, scaled by the renewal cycle length),
    which needs only one transposed solve per grid point.  Requires
    ``q, r`` in ``(0, 1)``.
    """
    qs = np.asarray(qs, dtype=float)
    rs = np.asarray(rs, dtype=float)
    n = config.n_secondary
    if np.any((qs <= 0) | (qs >= 1)) or np.any((rs <= 0) | (rs >= 1)):
        raise ModelDomainError("grid values must lie strictly inside (0, 1)")
    nq, nr = len(qs), len(rs)
    trans = [0] + list(range(2, n + 1))  # transient states of the off chain

    row0 = binomial_row(n, qs)  # (nq, n+1)
    tables = binomial_table(n, rs)  # (nr, n+1, n+1)

    # on-period absorption times depend on r only
    Q_on = tables[:, 1:, 1:]
    x_on = np.linalg.solve(np.eye(n)[None] - Q_on, np.ones((nr, n, 1)))[..., 0]  # (nr, n)

    p_s = np.empty((nq, nr))
    t_ns = np.empty((nq, nr))
    t_col = np.empty((nq, nr))
    eye = np.eye(n)
    for j in range(nr):
        Q = np.empty((nq, n, n))
        Q[:, 1:, :] = tables[j][np.ix_(trans[1:], trans)][None]
        Q[:, 0, :] = row0[:, trans]
        # y = e_0^T (I - Q)^{-1}: expected visits to each transient state
        A_t = np.transpose(eye[None] - Q, (0, 2, 1))
        rhs = np.zeros((nq, n, 1))
        rhs[:, 0, 0] = 1.0
        visits = np.linalg.solve(A_t, rhs)[..., 0]
        tns = visits.sum(axis=1)
        cycle = theta * tns + 1.0

        x = x_on[j]
        d = np.empty((nq, n + 1))
        d[:, 2:] = x[1:] - 1.0
        d[:, 1] = (1.0 - theta) if p1_enabled else (1.0 - theta) * x[0]
        d[:, 0] = row0[:, 1:] @ x
        d_trans = d[:, trans]
        t_ns[:, j] = tns
        p_s[:, j] = 1.0 / cycle
        t_col[:, j] = (theta * np.sum(visits * d_trans, axis=1) + d[:, 1]) / cycle

    t_int, t_pac = config.t_int, config.t_pac
    c_s = p_s * (t_int - t_pac - t_col) / t_int
    c_s = np.where(t_col < t_int - t_pac, c_s, np.nan)
    return MetricGrid(q=qs, r=rs, p_s=p_s, t_ns=t_ns, t_col=t_col, c_s=c_s)
