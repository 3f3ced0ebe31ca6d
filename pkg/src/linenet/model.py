"""Domain types for finite-buffer erasure line networks.

A line network with ``h`` hops is a chain ``v_0 -> v_1 -> ... -> v_h``:
``v_0`` is the source (always backlogged), ``v_h`` the destination
(unbounded storage), and the ``h - 1`` intermediate nodes hold at most
``buffers[j]`` packets each.  Time is slotted; in each epoch every link
independently delivers its packet with probability ``1 - eps[link]``.

Indexing conventions: arrays are 0-based internally (``eps[i]`` is the
erasure probability of the link out of ``v_i``; ``buffers[j]`` and
occupancy ``s[j]`` belong to node ``v_{j+1}``).  State indices exposed
by :func:`state_index` / :func:`index_state` are 1-based to match the
row-index convention used in reports; file interfaces are 0-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import prod
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidStateError, SpecValidationError

__all__ = [
    "NetworkSpec",
    "state_index",
    "index_state",
    "enumerate_states",
    "sample_channels",
    "channel_generator",
]


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable description of one line network.

    Parameters
    ----------
    eps
        Per-link erasure probabilities, one per hop, each strictly inside
        (0, 1).  Boundary values are rejected rather than clamped.
    buffers
        Positive buffer sizes of the ``h - 1`` intermediate nodes.
    """

    eps: tuple[float, ...]
    buffers: tuple[int, ...]

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        buffers = tuple(int(m) for m in self.buffers)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "buffers", buffers)
        if len(eps) < 2:
            raise SpecValidationError("a line network needs at least 2 hops")
        if len(buffers) != len(eps) - 1:
            raise SpecValidationError(
                f"expected {len(eps) - 1} buffer sizes for {len(eps)} hops, "
                f"got {len(buffers)}"
            )
        for i, e in enumerate(eps):
            if not 0.0 < e < 1.0:
                raise SpecValidationError(
                    f"erasure probability eps[{i}]={e!r} must be strictly inside (0, 1)"
                )
        for j, m in enumerate(buffers):
            if m < 1:
                raise SpecValidationError(f"buffer size buffers[{j}]={m} must be >= 1")

    @property
    def h(self) -> int:
        """Number of hops."""
        return len(self.eps)

    @property
    def num_states(self) -> int:
        """Size of the joint occupancy state space, prod(m_j + 1)."""
        return prod(m + 1 for m in self.buffers)

    @property
    def min_cut(self) -> float:
        """Infinite-buffer throughput ceiling min_i (1 - eps[i])."""
        return min(1.0 - e for e in self.eps)

    def with_buffers(self, buffers: Sequence[int]) -> "NetworkSpec":
        return NetworkSpec(self.eps, tuple(int(m) for m in buffers))

    def with_eps(self, eps: Sequence[float]) -> "NetworkSpec":
        return NetworkSpec(tuple(float(e) for e in eps), self.buffers)

    # -- JSON document interface: {"eps": [...], "buffers": [...]} --

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkSpec":
        try:
            eps = doc["eps"]
            buffers = doc["buffers"]
        except (KeyError, TypeError) as exc:
            raise SpecValidationError(
                'network document must carry "eps" and "buffers" arrays'
            ) from exc
        return cls(tuple(eps), tuple(buffers))

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecValidationError(f"malformed network JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_dict(self) -> dict:
        return {"eps": list(self.eps), "buffers": list(self.buffers)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_state(s: Sequence[int], spec: NetworkSpec) -> tuple[int, ...]:
    s = tuple(int(v) for v in s)
    if len(s) != spec.h - 1:
        raise InvalidStateError(
            f"state has {len(s)} components, expected {spec.h - 1}"
        )
    for j, (v, m) in enumerate(zip(s, spec.buffers)):
        if not 0 <= v <= m:
            raise InvalidStateError(f"state component s[{j}]={v} outside [0, {m}]")
    return s


def state_index(s: Sequence[int], spec: NetworkSpec) -> int:
    """Map an occupancy vector to its canonical 1-based row index.

    The first component varies fastest: index = 1 + s_1 + sum_i s_i *
    prod_{j<i} (m_j + 1).  The map is a bijection onto 1..num_states.
    """
    s = _check_state(s, spec)
    idx = 0
    weight = 1
    for v, m in zip(s, spec.buffers):
        idx += v * weight
        weight *= m + 1
    return idx + 1


def index_state(k: int, spec: NetworkSpec) -> tuple[int, ...]:
    """Inverse of :func:`state_index` (mixed-radix decomposition)."""
    k = int(k)
    if not 1 <= k <= spec.num_states:
        raise InvalidStateError(f"index {k} outside 1..{spec.num_states}")
    rem = k - 1
    out = []
    for m in spec.buffers:
        rem, v = divmod(rem, m + 1)
        out.append(v)
    return tuple(out)


def enumerate_states(spec: NetworkSpec) -> np.ndarray:
    """All occupancy vectors as an (num_states, h-1) array in index order."""
    n = spec.num_states
    out = np.empty((n, spec.h - 1), dtype=np.int64)
    rem = np.arange(n, dtype=np.int64)
    for j, m in enumerate(spec.buffers):
        out[:, j] = rem % (m + 1)
        rem //= m + 1
    return out


def sample_channels(spec: NetworkSpec, rng: np.random.Generator) -> tuple[int, ...]:
    """One epoch of link outcomes; entry i is 1 iff link i delivers.

    Links are independent Bernoulli(1 - eps[i]) draws.
    """
    u = rng.random(spec.h)
    return tuple(int(ui >= e) for ui, e in zip(u, spec.eps))


def channel_generator(spec: NetworkSpec, seed: int) -> Iterator[tuple[int, ...]]:
    """Endless stream of channel realizations from a counter-based RNG."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    while True:
        yield sample_channels(spec, rng)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; distinct seeds give independent streams."""
    return np.random.Generator(np.random.Philox(key=seed))
