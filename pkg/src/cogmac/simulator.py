"""Slot-level Monte Carlo simulation of one primary and N secondary users.

Every secondary user draws its transmission decisions from its own Philox
stream spawned from the master seed; the primary's traffic uses one more
stream.  Random numbers are generated in blocks and handed to a compiled
slot loop (:func:`_run_block`).  :func:`step` is a plain-Python rendering of
the same slot transition that consumes the same numbers, used to cross-check
the compiled loop.
"""

from __future__ import annotations

import copy
import csv
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from numba import njit

from .core import NetworkConfig, Protocol, TrafficModel, ValidationError

IDLE, BUSY, SUCCESS, FAILURE = 0, 1, 2, 3
OUTCOME_NAMES = ("idle", "busy", "success", "failure")
# slot-level channel outcome used in traces
CH_IDLE, CH_SUCCESS, CH_COLLISION = 0, 1, 2

QUEUE_LIMIT_FACTOR = 100
BLOCK = 1 << 16


class UnstableRunError(RuntimeError):
    """The primary's backlog exceeded its bound; ``stats`` holds what was gathered."""

    def __init__(self, message: str, stats: "SimStats"):
        self.stats = stats
        super().__init__(message)


class UndefinedEstimateError(ValueError):
    pass


@dataclass(frozen=True)
class EnhancedPolicy:
    """Base protocol plus optional longer-memory rules.

    ``p1_enabled``: back off after a failure that follows a success.
    ``p2_enabled``: back off after ``b`` consecutive failures.
    """

    base: Protocol
    b: int = 5
    p1_enabled: bool = False
    p2_enabled: bool = False

    def __post_init__(self):
        if isinstance(self.b, bool) or int(self.b) != self.b or self.b < 2:
            raise ValidationError("b", f"memory length must be an integer >= 2, got {self.b!r}")
        object.__setattr__(self, "b", int(self.b))

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "b": self.b,
            "p1_enabled": self.p1_enabled,
            "p2_enabled": self.p2_enabled,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnhancedPolicy":
        return cls(
            Protocol.from_dict(data["base"]),
            data.get("b", 5),
            bool(data.get("p1_enabled", False)),
            bool(data.get("p2_enabled", False)),
        )


@dataclass
class PrimaryState:
    phase: str = "off"
    packets_remaining: int = 0
    slots_to_next_arrival: int = 0


@dataclass
class SecondaryState:
    last_outcome: str = "idle"
    history: deque = field(default_factory=deque)
    consecutive_failures: int = 0


@dataclass
class World:
    primary: PrimaryState
    secondaries: list
    slot: int = 0
    last_channel: int = CH_IDLE
    last_primary_success: bool = False


@dataclass
class SlotRecord:
    slot: int
    y_p: str
    transmitters: int
    outcome: int
    primary_transmitted: bool
    secondary_transmitters: int


def warmup_slots(config: NetworkConfig) -> int:
    return int(max(10_000, math.ceil(10 * config.t_int)))


def _traffic_params(config: NetworkConfig) -> tuple[int, float, float]:
    if config.traffic_model is TrafficModel.DETERMINISTIC:
        if not (float(config.t_int).is_integer() and float(config.t_pac).is_integer()):
            raise ValidationError("traffic_model", "deterministic traffic needs integer t_int and t_pac")
        return 0, config.t_int, config.t_pac
    if config.t_pac < 1:
        raise ValidationError("t_pac", "geometric packet counts need a mean of at least 1")
    return 1, config.t_int, config.t_pac


def _geometric(u: float, mean: float) -> int:
    # inverse CDF of the geometric law on {1, 2, ...} with the given mean
    if mean <= 1.0:
        return 1
    v = math.ceil(math.log1p(-u) / math.log1p(-1.0 / mean))
    return max(1, v)


def _draw_gap(u: float, model: int, t_int: float) -> int:
    return int(round(t_int)) if model == 0 else _geometric(u, t_int)


def _draw_packets(u: float, model: int, t_pac: float) -> int:
    return int(round(t_pac)) if model == 0 else _geometric(u, t_pac)


def initial_world(policy: EnhancedPolicy, config: NetworkConfig, gap_u: float) -> World:
    """Primary off with a full inter-arrival countdown; every secondary idle."""
    model, t_int, _ = _traffic_params(config)
    return World(
        primary=PrimaryState("off", 0, _draw_gap(gap_u, model, t_int)),
        secondaries=[
            SecondaryState("idle", deque(maxlen=policy.b), 0) for _ in range(config.n_secondary)
        ],
    )


def transmit_probability(state: SecondaryState, policy: EnhancedPolicy) -> float:
    hist = state.history
    if policy.p1_enabled and len(hist) >= 2 and hist[-2] == "success" and hist[-1] == "failure":
        return 0.0
    if policy.p2_enabled and state.consecutive_failures >= policy.b:
        return 0.0
    return policy.base.transmit_probability(state.last_outcome)


def step(
    world: World,
    user_u: np.ndarray,
    traffic_u: tuple[float, float],
    policy: EnhancedPolicy,
    config: NetworkConfig,
) -> tuple[World, SlotRecord]:
    """Advance one slot.

    ``user_u[i]`` decides secondary ``i``'s transmission; ``traffic_u`` holds
    the uniforms for the next inter-arrival gap and the packet count, used
    only when an arrival happens in this slot.
    """
    model, t_int, t_pac = _traffic_params(config)
    w = copy.deepcopy(world)
    pu = w.primary
    if pu.slots_to_next_arrival == 0:
        pu.packets_remaining += _draw_packets(traffic_u[1], model, t_pac)
        pu.slots_to_next_arrival = _draw_gap(traffic_u[0], model, t_int)
    pu.slots_to_next_arrival -= 1
    pu_tx = pu.packets_remaining > 0
    pu.phase = "on" if pu_tx else "off"

    tx = [user_u[i] < transmit_probability(s, policy) for i, s in enumerate(w.secondaries)]
    k = sum(tx)
    total = k + int(pu_tx)
    for s, sent in zip(w.secondaries, tx):
        if sent:
            outcome = "success" if total == 1 else "failure"
        else:
            outcome = "busy" if total >= 1 else "idle"
        s.last_outcome = outcome
        s.history.append(outcome)
        s.consecutive_failures = s.consecutive_failures + 1 if outcome == "failure" else 0

    pu_success = pu_tx and total == 1
    if pu_success:
        pu.packets_remaining -= 1
    channel = CH_IDLE if total == 0 else (CH_SUCCESS if total == 1 else CH_COLLISION)
    record = SlotRecord(w.slot, "on" if pu_tx else "off", total, channel, pu_tx, k)
    w.slot += 1
    w.last_channel = channel
    w.last_primary_success = pu_success
    return w, record


def uniform_blocks(seed: int, n: int, horizon: int, block: int = BLOCK) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(user_u, traffic_u)`` blocks covering ``horizon + 1`` slots.

    The first traffic row seeds the initial inter-arrival countdown.
    """
    children = np.random.SeedSequence(seed).spawn(n + 1)
    gens = [np.random.Generator(np.random.Philox(c)) for c in children]
    remaining = horizon + 1
    while remaining > 0:
        size = min(block, remaining)
        users = np.empty((size, n))
        for i in range(n):
            users[:, i] = gens[i + 1].random(size)
        yield users, gens[0].random((size, 2))
        remaining -= size


# indices into the integer state vector carried between blocks
_S_PACKETS, _S_COUNTDOWN, _S_PREV_ON, _S_PREV_PU_SUCCESS, _S_CUR_COL, _S_CUR_COUNTED = range(6)
_S_RUN_USER, _S_RUN_LEN, _S_SLOT, _S_UNSTABLE = range(6, 10)
_N_STATE = 10

# indices into the counter vector
(
    C_SLOTS,
    C_PU_ATTEMPTS,
    C_PU_COLLISIONS,
    C_PU_SUCCESSES,
    C_PU_OFF_SLOTS,
    C_SU_SUCCESSES,
    C_ARRIVALS,
    C_ON_PERIODS,
    C_ON_PERIOD_COLLISIONS,
    C_MAX_COLLISIONS,
    C_RUN_TRIALS,
    C_RUN_ENDS,
    C_RUNS_COMPLETE,
    C_RUNS_COMPLETE_LEN,
    C_RUNS_TRUNCATED,
    C_NONINTRUSIVE_VIOLATIONS,
    C_OFF_START_VIOLATIONS,
    C_ON_PERIOD_COLLISIONS_SQ,
) = range(18)
_N_COUNTERS = 18

# per-batch columns
B_SLOTS, B_SU_SUCC, B_OFF, B_PU_ATT, B_PU_COL, B_PERIODS, B_PERIOD_COL = range(7)
_N_BATCH = 7


@njit(cache=True)
def _geometric_nb(u, mean):
    if mean <= 1.0:
        return 1
    v = math.ceil(math.log1p(-u) / math.log1p(-1.0 / mean))
    return max(1, int(v))


@njit(cache=True)
def _run_block(
    users,
    traffic,
    start_row,
    last,
    prev,
    fails,
    state,
    counters,
    per_user,
    batches,
    q,
    r,
    f_success,
    p1,
    p2,
    b,
    model,
    t_int,
    t_pac,
    warmup,
    post_slots,
    queue_limit,
    trace,
    trace_on,
):
    n = users.shape[1]
    n_batches = batches.shape[0]
    sent = np.zeros(n, dtype=np.bool_)
    rows = users.shape[0]
    for row in range(start_row, rows):
        t = state[_S_SLOT]
        counted = t >= warmup
        bidx = 0
        if counted:
            bidx = (t - warmup) * n_batches // post_slots
            if bidx >= n_batches:
                bidx = n_batches - 1

        # primary traffic
        if state[_S_COUNTDOWN] == 0:
            if model == 0:
                state[_S_PACKETS] += int(round(t_pac))
                state[_S_COUNTDOWN] = int(round(t_int))
            else:
                state[_S_PACKETS] += _geometric_nb(traffic[row, 1], t_pac)
                state[_S_COUNTDOWN] = _geometric_nb(traffic[row, 0], t_int)
            if counted:
                counters[C_ARRIVALS] += 1
        state[_S_COUNTDOWN] -= 1
        pu_tx = state[_S_PACKETS] > 0

        # secondary decisions
        k = 0
        who = -1
        for i in range(n):
            y = last[i]
            if p1 and prev[i] == SUCCESS and y == FAILURE:
                p = 0.0
            elif p2 and fails[i] >= b:
                p = 0.0
            elif y == IDLE:
                p = q
            elif y == FAILURE:
                p = r
            elif y == SUCCESS:
                p = f_success
            else:
                p = 0.0
            s = users[row, i] < p
            sent[i] = s
            if s:
                k += 1
                who = i
        total = k + (1 if pu_tx else 0)

        for i in range(n):
            if sent[i]:
                o = SUCCESS if total == 1 else FAILURE
            elif total >= 1:
                o = BUSY
            else:
                o = IDLE
            prev[i] = last[i]
            last[i] = o
            if o == FAILURE:
                fails[i] += 1
            else:
                fails[i] = 0

        pu_success = pu_tx and total == 1
        channel = CH_IDLE if total == 0 else (CH_SUCCESS if total == 1 else CH_COLLISION)
        if trace_on:
            trace[row, 0] = t
            trace[row, 1] = 1 if pu_tx else 0
            trace[row, 2] = total
            trace[row, 3] = channel

        # on-period bookkeeping
        prev_on = state[_S_PREV_ON] == 1
        if pu_tx and not prev_on:
            state[_S_CUR_COL] = 0
            state[_S_CUR_COUNTED] = 1 if counted else 0
        if not pu_tx and prev_on:
            if state[_S_CUR_COUNTED] == 1:
                c = state[_S_CUR_COL]
                counters[C_ON_PERIODS] += 1
                counters[C_ON_PERIOD_COLLISIONS] += c
                counters[C_ON_PERIOD_COLLISIONS_SQ] += c * c
                if c > counters[C_MAX_COLLISIONS]:
                    counters[C_MAX_COLLISIONS] = c
                batches[bidx, B_PERIODS] += 1
                batches[bidx, B_PERIOD_COL] += c
            if counted and total != 0:
                counters[C_OFF_START_VIOLATIONS] += 1
        if counted and state[_S_PREV_PU_SUCCESS] == 1 and k > 0:
            counters[C_NONINTRUSIVE_VIOLATIONS] += 1

        # success runs of a single secondary while the primary is silent
        run_user = state[_S_RUN_USER]
        if run_user >= 0:
            if pu_tx:
                if counted:
                    counters[C_RUNS_TRUNCATED] += 1
                run_user = -1
            else:
                if counted:
                    counters[C_RUN_TRIALS] += 1
                if who == run_user and total == 1:
                    state[_S_RUN_LEN] += 1
                else:
                    if counted:
                        counters[C_RUN_ENDS] += 1
                        counters[C_RUNS_COMPLETE] += 1
                        counters[C_RUNS_COMPLETE_LEN] += state[_S_RUN_LEN]
                    run_user = -1
        if run_user < 0 and who >= 0 and total == 1:
            run_user = who
            state[_S_RUN_LEN] = 1
        state[_S_RUN_USER] = run_user

        if pu_tx:
            if total > 1:
                state[_S_CUR_COL] += 1
            else:
                state[_S_PACKETS] -= 1

        if counted:
            counters[C_SLOTS] += 1
            batches[bidx, B_SLOTS] += 1
            if pu_tx:
                counters[C_PU_ATTEMPTS] += 1
                batches[bidx, B_PU_ATT] += 1
                if total > 1:
                    counters[C_PU_COLLISIONS] += 1
                    batches[bidx, B_PU_COL] += 1
                else:
                    counters[C_PU_SUCCESSES] += 1
            else:
                counters[C_PU_OFF_SLOTS] += 1
                batches[bidx, B_OFF] += 1
                if total == 1:
                    counters[C_SU_SUCCESSES] += 1
                    batches[bidx, B_SU_SUCC] += 1
                    per_user[who] += 1

        state[_S_PREV_ON] = 1 if pu_tx else 0
        state[_S_PREV_PU_SUCCESS] = 1 if pu_success else 0
        state[_S_SLOT] = t + 1
        if state[_S_PACKETS] > queue_limit:
            state[_S_UNSTABLE] = 1
            return row + 1
    return rows


def _ratio_se(num: np.ndarray, den: np.ndarray) -> float:
    """Batch-means standard error of ``sum(num) / sum(den)`` (delta method)."""
    mask = den > 0
    num, den = num[mask], den[mask]
    m = len(num)
    if m < 2 or den.sum() == 0:
        return math.nan
    ratio = num.sum() / den.sum()
    resid = num - ratio * den
    return float(math.sqrt(np.sum(resid**2) / (m * (m - 1))) / den.mean())


@dataclass
class SimStats:
    slots_total: int
    pu_attempts: int
    pu_collisions: int
    pu_successes: int
    pu_off_slots: int
    su_successes: int
    successes_total: int
    arrivals: int
    on_periods_observed: int
    on_period_collisions: int
    max_collisions_in_on_period: int
    per_user_success_counts: list
    t_col_empirical: float
    run_trials: int
    run_natural_ends: int
    runs_complete: int
    runs_complete_length_sum: int
    runs_truncated: int
    nonintrusive_violations: int
    off_start_violations: int
    warmup: int
    horizon: int
    seed: int
    batches: list = field(repr=False, default_factory=list)
    on_period_collisions_sq: int = 0

    @property
    def p_s(self) -> float:
        return self.su_successes / self.pu_off_slots if self.pu_off_slots else math.nan

    @property
    def p_c(self) -> float:
        return self.pu_collisions / self.pu_attempts if self.pu_attempts else math.nan

    @property
    def c_s(self) -> float:
        return self.su_successes / self.slots_total if self.slots_total else math.nan

    @property
    def c_total(self) -> float:
        return self.successes_total / self.slots_total if self.slots_total else math.nan

    def standard_errors(self) -> dict:
        B = np.asarray(self.batches, dtype=float)
        if B.size == 0:
            return {k: math.nan for k in ("p_s", "p_c", "c_s", "t_col")}
        se = {
            "p_s": _ratio_se(B[:, B_SU_SUCC], B[:, B_OFF]),
            "p_c": _ratio_se(B[:, B_PU_COL], B[:, B_PU_ATT]),
            "c_s": _ratio_se(B[:, B_SU_SUCC], B[:, B_SLOTS]),
        }
        n = self.on_periods_observed
        if n > 1:
            mean = self.on_period_collisions / n
            var = (self.on_period_collisions_sq - n * mean * mean) / (n - 1)
            se["t_col"] = math.sqrt(max(var, 0.0) / n)
        else:
            se["t_col"] = math.nan
        return se

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(p_s=self.p_s, p_c=self.p_c, c_s=self.c_s, c_total=self.c_total)
        d["standard_errors"] = self.standard_errors()
        return d


def run(
    policy: EnhancedPolicy,
    config: NetworkConfig,
    horizon: int,
    seed: int,
    *,
    warmup: Optional[int] = None,
    n_batches: int = 50,
    trace_path: Optional[Path] = None,
    block: int = BLOCK,
) -> SimStats:
    """Simulate ``horizon`` slots (warm-up included) and aggregate statistics.

    Slots before ``warmup`` (default ``max(10^4, 10 T_int)``) evolve the
    system but are not counted.  With ``trace_path`` every slot is written
    to CSV as ``slot,y_p,transmitters,outcome``.
    """
    model, t_int, t_pac = _traffic_params(config)
    warmup = warmup_slots(config) if warmup is None else int(warmup)
    horizon = int(horizon)
    if horizon <= warmup:
        raise ValidationError("horizon", f"must exceed the warm-up of {warmup} slots, got {horizon}")
    n = config.n_secondary
    post = horizon - warmup
    base = policy.base

    last = np.full(n, IDLE, dtype=np.int64)
    prev = np.full(n, IDLE, dtype=np.int64)
    fails = np.zeros(n, dtype=np.int64)
    state = np.zeros(_N_STATE, dtype=np.int64)
    state[_S_RUN_USER] = -1
    counters = np.zeros(_N_COUNTERS, dtype=np.int64)
    per_user = np.zeros(n, dtype=np.int64)
    batches = np.zeros((max(1, n_batches), _N_BATCH), dtype=np.int64)
    queue_limit = int(QUEUE_LIMIT_FACTOR * t_pac)

    writer = None
    fh = None
    if trace_path is not None:
        fh = open(trace_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slot", "y_p", "transmitters", "outcome"])

    try:
        first = True
        for users, traffic in uniform_blocks(seed, n, horizon, block):
            start = 0
            if first:
                state[_S_COUNTDOWN] = _draw_gap(traffic[0, 0], model, t_int)
                start = 1
                first = False
            trace = np.zeros((users.shape[0], 4), dtype=np.int64)
            end = _run_block(
                users, traffic, start, last, prev, fails, state, counters, per_user, batches,
                base.q, base.r, base.f_success, policy.p1_enabled, policy.p2_enabled, policy.b,
                model, t_int, t_pac, warmup, post, queue_limit, trace, writer is not None,
            )
            if writer is not None:
                y_p = ("off", "on")
                out = ("idle", "success", "collision")
                for row in trace[start:end]:
                    writer.writerow([int(row[0]), y_p[row[1]], int(row[2]), out[row[3]]])
            if state[_S_UNSTABLE]:
                stats = _collect(counters, per_user, batches, warmup, horizon, seed)
                raise UnstableRunError(
                    f"primary backlog exceeded {queue_limit} packets at slot {state[_S_SLOT]}", stats
                )
    finally:
        if fh is not None:
            fh.close()
    return _collect(counters, per_user, batches, warmup, horizon, seed)


def _collect(counters, per_user, batches, warmup, horizon, seed) -> SimStats:
    c = [int(v) for v in counters]
    periods = c[C_ON_PERIODS]
    return SimStats(
        slots_total=c[C_SLOTS],
        pu_attempts=c[C_PU_ATTEMPTS],
        pu_collisions=c[C_PU_COLLISIONS],
        pu_successes=c[C_PU_SUCCESSES],
        pu_off_slots=c[C_PU_OFF_SLOTS],
        su_successes=c[C_SU_SUCCESSES],
        successes_total=c[C_SU_SUCCESSES] + c[C_PU_SUCCESSES],
        arrivals=c[C_ARRIVALS],
        on_periods_observed=periods,
        on_period_collisions=c[C_ON_PERIOD_COLLISIONS],
        max_collisions_in_on_period=c[C_MAX_COLLISIONS],
        per_user_success_counts=[int(v) for v in per_user],
        t_col_empirical=c[C_ON_PERIOD_COLLISIONS] / periods if periods else math.nan,
        run_trials=c[C_RUN_TRIALS],
        run_natural_ends=c[C_RUN_ENDS],
        runs_complete=c[C_RUNS_COMPLETE],
        runs_complete_length_sum=c[C_RUNS_COMPLETE_LEN],
        runs_truncated=c[C_RUNS_TRUNCATED],
        nonintrusive_violations=c[C_NONINTRUSIVE_VIOLATIONS],
        off_start_violations=c[C_OFF_START_VIOLATIONS],
        warmup=warmup,
        horizon=horizon,
        seed=seed,
        batches=batches.tolist(),
        on_period_collisions_sq=c[C_ON_PERIOD_COLLISIONS_SQ],
    )


def fairness_estimate(stats: SimStats) -> float:
    """Mean run of consecutive successes by one secondary while the primary is off.

    Each success slot followed by a primary-off slot is a continuation
    trial that the runner either repeats or ends.  Runs cut short by a
    primary arrival contribute their observed trials but no ending, which
    keeps the estimate free of the bias from discarding long runs.
    """
    if stats.run_natural_ends == 0:
        raise UndefinedEstimateError("no success run ended inside an off period")
    return stats.run_trials / stats.run_natural_ends


def simulate_trace(
    policy: EnhancedPolicy, config: NetworkConfig, slots: int, seed: int, block: int = BLOCK
) -> list[SlotRecord]:
    """Run :func:`step` for ``slots`` slots on the same random streams as :func:`run`."""
    records = []
    world = None
    for users, traffic in uniform_blocks(seed, config.n_secondary, slots, block):
        start = 0
        if world is None:
            world = initial_world(policy, config, traffic[0, 0])
            start = 1
        for row in range(start, users.shape[0]):
            world, rec = step(world, users[row], (traffic[row, 0], traffic[row, 1]), policy, config)
            records.append(rec)
    return records
