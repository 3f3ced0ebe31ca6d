"""Monte-Carlo simulator of the exact feedback scheme.

Drives the per-epoch update rules directly: transfers are resolved
from the last intermediate node backwards, a packet leaves its sender
only on acknowledged storage, and queues are first-come first-serve.
Throughput and delay statistics come with batch-means standard errors;
runs are reproducible bit-for-bit from a counter-based seed.  A
continuous-time network with exponential service rates is analyzed by
discretizing time into epochs of length tau.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecValidationError
from .model import NetworkSpec, make_rng

__all__ = [
    "SimStats",
    "ContinuousSpec",
    "DiscretizedSpec",
    "simulate_feedback",
    "simulate_delay_fcfs",
    "discretize",
    "default_warmup",
]

_BLOCK = 1 << 14


@dataclass
class SimStats:
    """Outcome of one simulation run."""

    spec: NetworkSpec
    epochs: int
    warmup: int
    seed: int
    packets_delivered: int
    throughput: float
    throughput_se: float
    occupancy_counts: np.ndarray = field(repr=False)
    joint_counts: np.ndarray | None = field(repr=False, default=None)
    joint_stride: int = 1
    delay_mean: float | None = None
    delay_se: float | None = None
    delay_var: float | None = None
    delay_counts: np.ndarray | None = field(repr=False, default=None)
    delay_samples: int = 0

    def occupancy_frequencies(self) -> np.ndarray:
        return self.occupancy_counts / self.occupancy_counts.sum(axis=1, keepdims=True)

    def to_obj(self) -> dict:
        out = {
            "spec": self.spec.to_dict(),
            "epochs": self.epochs,
            "warmup": self.warmup,
            "seed": self.seed,
            "packets_delivered": self.packets_delivered,
            "throughput": self.throughput,
            "throughput_se": self.throughput_se,
            "occupancy_counts": self.occupancy_counts.tolist(),
        }
        if self.delay_mean is not None:
            out.update(
                delay_mean=self.delay_mean,
                delay_se=self.delay_se,
                delay_var=self.delay_var,
                delay_samples=self.delay_samples,
            )
        return out


def default_warmup(epochs: int) -> int:
    """One tenth of the run or 10^4 epochs, whichever is larger (but
    never half the run or more; buffers start empty and need to fill)."""
    return min(max(epochs // 10, 10_000), epochs // 2)


def _batch_se(values: np.ndarray) -> float:
    if values.size < 2:
        return float("nan")
    return float(values.std(ddof=1) / np.sqrt(values.size))


def simulate_feedback(
    spec: NetworkSpec,
    epochs: int,
    warmup: int | None = None,
    seed: int = 0,
    batches: int = 100,
    joint_stride: int = 0,
) -> SimStats:
    """Occupancy-level simulation; counts destination receipts.

    ``joint_stride`` > 0 additionally samples the joint occupancy state
    every that many epochs (thinned, so the samples decorrelate enough
    for goodness-of-fit testing).
    """
    if warmup is None:
        warmup = default_warmup(epochs)
    if not 0 <= warmup < epochs:
        raise SpecValidationError(f"need 0 <= warmup < epochs, got {warmup}, {epochs}")
    h = spec.h
    m = spec.buffers
    eps = np.asarray(spec.eps)
    rng = make_rng(seed)

    n = [0] * (h - 1)
    occupancy = np.zeros((h - 1, max(m) + 1), dtype=np.int64)
    weights = []
    wgt = 1
    for mm in m:
        weights.append(wgt)
        wgt *= mm + 1
    joint = np.zeros(spec.num_states, dtype=np.int64) if joint_stride > 0 else None

    measured = epochs - warmup
    batch_len = max(measured // batches, 1)
    batch_counts = []
    delivered = 0
    in_batch = 0

    done = 0
    while done < epochs:
        todo = min(_BLOCK, epochs - done)
        xs = rng.random((todo, h)) >= eps
        for row in range(todo):
            x = xs[row]
            t = done + row
            y_next = 1 if (x[h - 1] and n[h - 2] > 0) else 0
            arrived = y_next
            for a in range(h - 2, 0, -1):
                y = 1 if (x[a] and n[a - 1] > 0 and m[a] - n[a] + y_next > 0) else 0
                n[a] += y - y_next
                y_next = y
            y0 = 1 if (x[0] and m[0] - n[0] + y_next > 0) else 0
            n[0] += y0 - y_next
            if t >= warmup:
                if arrived:
                    delivered += 1
                    in_batch += 1
                for j in range(h - 1):
                    occupancy[j, n[j]] += 1
                if joint is not None and (t - warmup) % joint_stride == 0:
                    idx = 0
                    for j in range(h - 1):
                        idx += n[j] * weights[j]
                    joint[idx] += 1
                if (t - warmup + 1) % batch_len == 0 and len(batch_counts) < batches:
                    batch_counts.append(in_batch)
                    in_batch = 0
        done += todo

    throughput = delivered / measured
    batch_tputs = np.asarray(batch_counts, dtype=float) / batch_len
    return SimStats(
        spec=spec,
        epochs=epochs,
        warmup=warmup,
        seed=seed,
        packets_delivered=delivered,
        throughput=throughput,
        throughput_se=_batch_se(batch_tputs),
        occupancy_counts=occupancy,
        joint_counts=joint,
        joint_stride=joint_stride,
    )


def simulate_delay_fcfs(
    spec: NetworkSpec,
    epochs: int,
    warmup: int | None = None,
    seed: int = 0,
    batches: int = 100,
) -> SimStats:
    """Packet-tagged simulation measuring first-come first-serve delay.

    Each stored packet at the first intermediate node is tagged with
    its storage epoch; delay is the difference at destination receipt.
    Packets stored during warm-up are excluded.
    """
    if warmup is None:
        warmup = default_warmup(epochs)
    if not 0 <= warmup < epochs:
        raise SpecValidationError(f"need 0 <= warmup < epochs, got {warmup}, {epochs}")
    h = spec.h
    m = spec.buffers
    eps = np.asarray(spec.eps)
    rng = make_rng(seed)

    queues: list[deque] = [deque() for _ in range(h - 1)]
    occupancy = np.zeros((h - 1, max(m) + 1), dtype=np.int64)
    delays: list[int] = []
    delivered = 0

    done = 0
    while done < epochs:
        todo = min(_BLOCK, epochs - done)
        xs = rng.random((todo, h)) >= eps
        for row in range(todo):
            x = xs[row]
            t = done + row
            # resolve transfer indicators from the last hop backwards
            y = [0] * h
            y[h - 1] = 1 if (x[h - 1] and len(queues[h - 2]) > 0) else 0
            for a in range(h - 2, 0, -1):
                y[a] = (
                    1
                    if (x[a] and len(queues[a - 1]) > 0
                        and m[a] - len(queues[a]) + y[a + 1] > 0)
                    else 0
                )
            y[0] = 1 if (x[0] and m[0] - len(queues[0]) + y[1] > 0) else 0
            # apply moves; heads were fixed at the start of the epoch
            if y[h - 1]:
                tag = queues[h - 2].popleft()
                if tag >= 0:
                    delays.append(t - tag)
                delivered += 1 if t >= warmup else 0
            for a in range(h - 2, 0, -1):
                if y[a]:
                    queues[a].append(queues[a - 1].popleft())
            if y[0]:
                queues[0].append(t if t >= warmup else -1)
            if t >= warmup:
                for j in range(h - 1):
                    occupancy[j, len(queues[j])] += 1
        done += todo

    measured = epochs - warmup
    darr = np.asarray(delays, dtype=np.int64)
    if darr.size:
        counts = np.bincount(darr)
        nb = min(batches, max(darr.size // 50, 1))
        batch_means = np.array([b.mean() for b in np.array_split(darr, nb)])
        delay_mean = float(darr.mean())
        delay_se = _batch_se(batch_means)
        delay_var = float(darr.var(ddof=1))
    else:
        counts = np.zeros(1, dtype=np.int64)
        delay_mean = delay_se = delay_var = float("nan")
    return SimStats(
        spec=spec,
        epochs=epochs,
        warmup=warmup,
        seed=seed,
        packets_delivered=delivered,
        throughput=delivered / measured,
        throughput_se=float("nan"),
        occupancy_counts=occupancy,
        delay_mean=delay_mean,
        delay_se=delay_se,
        delay_var=delay_var,
        delay_counts=counts,
        delay_samples=int(darr.size),
    )


# ---------------------------------------------------------------------------
# continuous-time bridge
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousSpec:
    """Tandem of exponential servers: rates per second and buffer sizes."""

    lambdas: tuple[float, ...]
    buffers: tuple[int, ...]
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "buffers", tuple(int(v) for v in self.buffers))
        if self.tau <= 0:
            raise SpecValidationError("discretization step tau must be positive")
        if len(self.lambdas) != len(self.buffers) + 1:
            raise SpecValidationError(
                f"expected {len(self.buffers) + 1} service rates, got {len(self.lambdas)}"
            )
        for i, lam in enumerate(self.lambdas):
            if lam <= 0:
                raise SpecValidationError(f"service rate lambdas[{i}]={lam} must be positive")
            if lam * self.tau >= 1.0:
                raise SpecValidationError(
                    f"step too coarse: lambdas[{i}]*tau = {lam * self.tau} >= 1"
                )


@dataclass(frozen=True)
class DiscretizedSpec:
    """Epoch model of a continuous tandem plus the rate back-conversion."""

    network: NetworkSpec
    tau: float

    @property
    def rate_scale(self) -> float:
        """Multiply packets/epoch by this to obtain packets/second."""
        return 1.0 / self.tau


def discretize(c: ContinuousSpec) -> DiscretizedSpec:
    """Epoch model: a rate-lambda server succeeds a slot with prob lambda*tau."""
    eps = tuple(1.0 - lam * c.tau for lam in c.lambdas)
    return DiscretizedSpec(network=NetworkSpec(eps, c.buffers), tau=c.tau)
