"""System model: configuration, randomness, channel/arrival sampling, queue updates.

The system is N users sharing a single downlink channel. Time is slotted; each
slot the channel is in one of M i.i.d. states drawn from ``state_probs``. When
user i is selected in state m it drains up to ``rate_matrix[m][i]`` packets.
Arrivals are per-slot Poisson draws at rate ``arrival_rates[i]`` (default) or a
deterministic fluid of exactly ``arrival_rates[i]`` packets per slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    IndexOutOfRangeError,
    NegativeEntryError,
    ProbabilitySumError,
)

PROB_SUM_TOL = 1e-9

ARRIVAL_POISSON = "poisson"
ARRIVAL_FLUID = "fluid"
ARRIVAL_MODELS = (ARRIVAL_POISSON, ARRIVAL_FLUID)


@dataclass(frozen=True)
class SystemConfig:
    """Ground truth of one experiment.

    rate_matrix is row-major with rows indexed by channel state:
    rate_matrix[m][i] = packets/slot served to user i when the state is m.
    """

    n_users: int
    n_states: int
    state_probs: np.ndarray
    rate_matrix: np.ndarray
    arrival_rates: np.ndarray
    arrival_model: str = ARRIVAL_POISSON


@dataclass(frozen=True)
class RandomSource:
    """Seed spec for one independent sample stream.

    Identical (master_seed, stream_index) pairs yield identical sequences;
    distinct stream_index values give statistically independent streams.
    """

    master_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((self.master_seed, self.stream_index)))
        )


@dataclass
class TraceCounters:
    """Cumulative bookkeeping of one recorded window of a replication.

    arrivals[i] / departures[i] are total packets in/out for user i;
    state_slots[m] counts slots spent in channel state m; served_slots[m][i]
    counts slots in state m in which user i was selected. The window starts
    at ``initial_queues`` (all-zero unless a burn-in prefix was discarded)
    and spans ``horizon`` slots ending at ``final_queues``.
    """

    arrivals: np.ndarray
    departures: np.ndarray
    state_slots: np.ndarray
    served_slots: np.ndarray
    horizon: int
    max_queue_seen: float
    initial_queues: np.ndarray
    final_queues: np.ndarray

    def validate(self, atol: float = 1e-9) -> None:
        """Check the conservation identities; raises AssertionError on violation."""
        assert np.all(self.state_slots == self.served_slots.sum(axis=1)), (
            "state_slots must equal served_slots summed over users"
        )
        assert int(self.state_slots.sum()) == self.horizon, (
            "state slot counts must total the recorded horizon"
        )
        assert np.all(self.departures <= self.arrivals + self.initial_queues + atol), (
            "departures may not exceed arrivals plus the initial backlog"
        )
        balance = self.final_queues - self.initial_queues - self.arrivals + self.departures
        assert np.all(np.abs(balance) <= atol), "queue balance identity violated"


def validate_config(raw: SystemConfig) -> SystemConfig:
    """Validate a SystemConfig and return a normalized copy.

    state_probs summing to 1 within 1e-9 are renormalized exactly; a larger
    deviation raises ProbabilitySumError.
    """
    p = np.asarray(raw.state_probs, dtype=float)
    rates = np.asarray(raw.rate_matrix, dtype=float)
    lam = np.asarray(raw.arrival_rates, dtype=float)

    if p.shape != (raw.n_states,):
        raise DimensionMismatchError(
            f"state_probs has shape {p.shape}, expected ({raw.n_states},)"
        )
    if rates.shape != (raw.n_states, raw.n_users):
        raise DimensionMismatchError(
            f"rate_matrix has shape {rates.shape}, expected ({raw.n_states}, {raw.n_users})"
        )
    if lam.shape != (raw.n_users,):
        raise DimensionMismatchError(
            f"arrival_rates has shape {lam.shape}, expected ({raw.n_users},)"
        )
    if raw.arrival_model not in ARRIVAL_MODELS:
        raise ValueError(f"arrival_model must be one of {ARRIVAL_MODELS}")

    if np.any(p < 0):
        raise NegativeEntryError("state_probs entries must be >= 0")
    if np.any(rates < 0):
        raise NegativeEntryError("rate_matrix entries must be >= 0")
    if np.any(lam <= 0):
        raise NegativeEntryError("arrival_rates entries must be > 0")

    total = p.sum()
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ProbabilitySumError(f"state_probs sum to {total}, deviation > {PROB_SUM_TOL}")
    p = p / total

    return SystemConfig(
        n_users=raw.n_users,
        n_states=raw.n_states,
        state_probs=p,
        rate_matrix=rates,
        arrival_rates=lam,
        arrival_model=raw.arrival_model,
    )


def config_from_json(source: str | Path | dict) -> SystemConfig:
    """Build a validated SystemConfig from a JSON document, path, or dict.

    Schema: {"n_users", "n_states", "state_probs", "rate_matrix",
    "arrival_rates", "arrival_model"}; rate_matrix is row-major, rows = states.
    """
    if isinstance(source, dict):
        doc = source
    else:
        if isinstance(source, Path):
            text = source.read_text()
        else:
            text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        doc = json.loads(text)
    raw = SystemConfig(
        n_users=int(doc["n_users"]),
        n_states=int(doc["n_states"]),
        state_probs=np.asarray(doc["state_probs"], dtype=float),
        rate_matrix=np.asarray(doc["rate_matrix"], dtype=float),
        arrival_rates=np.asarray(doc["arrival_rates"], dtype=float),
        arrival_model=doc.get("arrival_model", ARRIVAL_POISSON),
    )
    return validate_config(raw)


def config_to_json(cfg: SystemConfig) -> dict:
    return {
        "n_users": cfg.n_users,
        "n_states": cfg.n_states,
        "state_probs": cfg.state_probs.tolist(),
        "rate_matrix": cfg.rate_matrix.tolist(),
        "arrival_rates": cfg.arrival_rates.tolist(),
        "arrival_model": cfg.arrival_model,
    }


def sample_channel(gen: np.random.Generator, cfg: SystemConfig, size: int | None = None):
    """Draw channel state index(es) with probabilities cfg.state_probs.

    Returns an int for size=None, else an int array of the given length.
    Uses inverse-CDF lookup so batched and scalar draws share one code path.
    """
    cum = np.cumsum(cfg.state_probs)
    cum[-1] = 1.0  # guard against cumulative rounding
    if size is None:
        return int(np.searchsorted(cum, gen.random(), side="right"))
    return np.searchsorted(cum, gen.random(size), side="right").astype(np.int64)


def sample_arrivals(gen: np.random.Generator, cfg: SystemConfig, size: int | None = None):
    """Draw one slot of arrivals (or ``size`` slots as a (size, N) array).

    Poisson mode draws integer counts at rate lambda_i; fluid mode returns
    exactly lambda_i every slot.
    """
    if cfg.arrival_model == ARRIVAL_FLUID:
        if size is None:
            return cfg.arrival_rates.copy()
        return np.broadcast_to(cfg.arrival_rates, (size, cfg.n_users)).copy()
    if size is None:
        return gen.poisson(cfg.arrival_rates).astype(float)
    return gen.poisson(cfg.arrival_rates, size=(size, cfg.n_users)).astype(float)


def step_queues(
    q: np.ndarray,
    arrivals: np.ndarray,
    served_user: int,
    state: int,
    cfg: SystemConfig,
) -> tuple[np.ndarray, float]:
    """Advance the queue vector one slot; returns (new_queues, departure).

    The served user drains min(backlog + own arrivals, rate) packets, so the
    cumulative balance Q(T) = Q(0) + arrivals(T) - departures(T) is exact.
    """
    if not 0 <= served_user < cfg.n_users:
        raise IndexOutOfRangeError(f"served_user {served_user} outside [0, {cfg.n_users})")
    if not 0 <= state < cfg.n_states:
        raise IndexOutOfRangeError(f"state {state} outside [0, {cfg.n_states})")
    arrivals = np.asarray(arrivals, dtype=float)
    if np.any(arrivals < 0):
        raise NegativeEntryError("arrivals entries must be >= 0")

    new_q = q + arrivals
    departure = float(min(new_q[served_user], cfg.rate_matrix[state, served_user]))
    new_q[served_user] -= departure
    return new_q, departure


def reference_config(arrival_model: str = ARRIVAL_POISSON) -> SystemConfig:
    """The 4-user / 3-state reference system used throughout the experiments."""
    return validate_config(
        SystemConfig(
            n_users=4,
            n_states=3,
            state_probs=np.array([0.3, 0.6, 0.1]),
            rate_matrix=np.array(
                [
                    [0.0, 0.0, 0.0, 0.0],
                    [3.0, 9.0, 9.0, 9.0],
                    [5.0, 0.0, 1.0, 1.0],
                ]
            ),
            arrival_rates=np.array([1.0, 1.0, 1.0, 1.0]),
            arrival_model=arrival_model,
        )
    )
