import numpy as np
import pytest

from linenet.model import NetworkSpec


def random_spec(rng: np.random.Generator, h_choices=(2, 3, 4), m_max=4) -> NetworkSpec:
    h = int(rng.choice(h_choices))
    eps = tuple(float(e) for e in rng.uniform(0.05, 0.95, size=h))
    buffers = tuple(int(m) for m in rng.integers(1, m_max + 1, size=h - 1))
    return NetworkSpec(eps, buffers)


@pytest.fixture(scope="session")
def paper_four_hop() -> NetworkSpec:
    return NetworkSpec((0.5, 0.4999, 0.4998, 0.4), (5, 5, 5))


def sample_mixture(mix, rng, n):
    """Draw inter-arrival gaps from a positive-weight mixture."""
    ws = np.array([float(p) for p, _ in mix.terms])
    ts = np.array([float(t) for _, t in mix.terms])
    comp = rng.choice(len(ws), size=n, p=ws)
    return rng.geometric(1 - ts[comp])


class QueueOracle:
    """Epoch-accurate single-queue simulation used as the reference.

    Arrivals follow a renewal mixture; each epoch a non-empty queue
    departs with the effective probability (channel success and no
    downstream blocking).  Records post-arrival occupancy, blocked
    arrivals, per-gap potential departures with an unbounded queue, and
    starvation gaps between an emptying departure and the next arrival.
    """

    def __init__(self, g_in, m, theta, q, n_arrivals, seed):
        rng = np.random.default_rng(seed)
        p_dep = (1 - theta) * (1 - q)
        gaps = sample_mixture(g_in, rng, n_arrivals)
        self.potential = rng.binomial(gaps, p_dep)
        occ = 0
        post = np.zeros(n_arrivals, dtype=np.int64)
        blocked = np.zeros(n_arrivals, dtype=bool)
        starve: list[int] = []
        for i, gap in enumerate(gaps):
            # epoch-level walk across this inter-arrival window
            left = occ
            drains = rng.random(gap) < p_dep
            t_empty = None
            for t_off in range(gap):
                if left > 0 and drains[t_off]:
                    left -= 1
                    if left == 0:
                        t_empty = t_off + 1
            if t_empty is not None and t_empty < gap and occ > 0:
                starve.append(gap - t_empty)
            blocked[i] = left == m
            if left < m:
                left += 1
            occ = left
            post[i] = occ
        self.post = post
        self.blocked = blocked
        self.starve = np.asarray(starve)
