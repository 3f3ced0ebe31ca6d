"""Packet-delay profile under first-come first-serve queueing.

Delay is counted from the epoch a packet is stored at the first
intermediate node to the epoch the destination receives it.  A packet
that finds k packets queued ahead waits for k + 1 effective service
completions, each geometric; the per-node waiting pmfs are therefore
mixtures of negative binomials, and the whole-path profile is their
convolution under the standing assumption that per-node delays are
independent.  The occupancy seen by a stored arrival and the blocking
probabilities come from either iterative estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dbie import DistSolution
from .errors import ConsistencyError, TruncationError
from .model import NetworkSpec
from .rbie import RateSolution

__all__ = [
    "NodeDelayInputs",
    "DelayProfile",
    "psi_rho_from_rbie",
    "psi_rho_from_dbie",
    "node_delay",
    "delay_profile",
    "mean_delay_little",
]


@dataclass(frozen=True)
class NodeDelayInputs:
    """Waiting-position and blocking estimates feeding the profile.

    ``psi[j][i]`` is the probability a packet stored at intermediate
    node j finds i packets ahead of it; ``rho[k]`` the blocking
    probability of node v_{k+1} (zero at the destination); and
    ``eps_eff[j]`` the per-epoch probability that node j's head packet
    fails to advance, blocking included.
    """

    psi: list[np.ndarray]
    rho: np.ndarray
    eps_eff: np.ndarray

    def validate(self, slack: float = 1e-9) -> None:
        for j, p in enumerate(self.psi):
            if abs(float(p.sum()) - 1.0) > slack:
                raise ConsistencyError(f"waiting distribution {j} sums to {p.sum()}")
            if float(p.min()) < -slack:
                raise ConsistencyError(f"waiting distribution {j} has negative mass")


def _effective_failures(spec: NetworkSpec, rho: np.ndarray) -> np.ndarray:
    eps = np.asarray(spec.eps)
    out = np.empty(spec.h - 1)
    for j in range(spec.h - 1):
        e = eps[j + 1]
        out[j] = e + rho[j + 1] * (1.0 - e)
    return out


def psi_rho_from_rbie(sol: RateSolution, spec: NetworkSpec) -> NodeDelayInputs:
    """Waiting distributions implied by the rate-based fixed point.

    A stored arrival at occupancy i either saw i with no departure this
    epoch or i+1 with one; conditioning removes the blocked case
    (full and no departure), which contributes the denominator.
    """
    rho = sol.pb.copy()
    eps_eff = _effective_failures(spec, rho)
    psi = []
    for j in range(spec.h - 1):
        m = spec.buffers[j]
        phi = sol.phi[j]
        e = eps_eff[j]
        denom = 1.0 - phi[m] * e
        p = np.empty(m)
        p[0] = (phi[0] + phi[1] * (1.0 - e)) / denom
        for i in range(1, m):
            p[i] = (phi[i] * e + phi[i + 1] * (1.0 - e)) / denom
        psi.append(p)
    out = NodeDelayInputs(psi=psi, rho=rho, eps_eff=eps_eff)
    out.validate()
    return out


def psi_rho_from_dbie(sol: DistSolution, spec: NetworkSpec) -> NodeDelayInputs:
    """Waiting distributions from the post-arrival occupancy chains."""
    rho = sol.pb.copy()
    eps_eff = _effective_failures(spec, rho)
    psi = []
    for j in range(spec.h - 1):
        m = spec.buffers[j]
        pi = sol.pi_embedded[j]
        pb = rho[j]
        p = np.empty(m)
        p[: m - 1] = pi[: m - 1] / (1.0 - pb)
        p[m - 1] = (pi[m - 1] - pb) / (1.0 - pb)
        if float(p.min()) < -1e-9:
            raise ConsistencyError(
                f"waiting distribution {j} has negative mass {p.min()}"
            )
        psi.append(np.maximum(p, 0.0))
    out = NodeDelayInputs(psi=psi, rho=rho, eps_eff=eps_eff)
    out.validate()
    return out


def _nbinom_pmf(k: int, failure: float, t_max: int) -> np.ndarray:
    """pmf of a sum of k geometrics with failure parameter ``failure``,
    on support 0..t_max (mass starts at t = k)."""
    out = np.zeros(t_max + 1)
    ts = np.arange(k, t_max + 1)
    out[k:] = stats.nbinom.pmf(ts - k, k, 1.0 - failure)
    return out


def node_delay(
    psi_j: np.ndarray, eps_eff_j: float, m_j: int, tail: float = 1e-9
) -> np.ndarray:
    """Waiting pmf of one node: a psi-mixture of negative binomials.

    The support is sized so the dropped tail is below ``tail``.
    """
    worst = int(stats.nbinom.ppf(1.0 - tail / (m_j + 1), m_j, 1.0 - eps_eff_j)) + m_j + 2
    out = np.zeros(worst + 1)
    for i in range(m_j):
        if psi_j[i] == 0.0:
            continue
        out += psi_j[i] * _nbinom_pmf(i + 1, eps_eff_j, worst)
    return out


@dataclass(frozen=True)
class DelayProfile:
    """Truncated whole-path delay pmf with its moments.

    ``pmf[t]`` is the probability of a total delay of t epochs; the
    tracked truncated tail mass stays within the profile budget.
    """

    pmf: np.ndarray
    mean: float
    variance: float
    tail_mass_dropped: float

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    def to_csv(self, path) -> None:
        cdf = self.cdf()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("delay_epochs,probability,cumulative\n")
            for t, (p, c) in enumerate(zip(self.pmf, cdf)):
                fh.write(f"{t},{float(p)!r},{float(c)!r}\n")


def delay_profile(
    spec: NetworkSpec,
    inputs: NodeDelayInputs,
    include_source: bool = False,
    tail_budget: float = 1e-6,
    per_factor_tail: float = 1e-9,
) -> DelayProfile:
    """Convolve the per-node waiting pmfs into the end-to-end profile.

    The source's own head-of-line wait is excluded by default because
    the delay clock starts at storage in the first intermediate node;
    ``include_source`` prepends that geometric wait.
    """
    inputs.validate()
    factors = [
        node_delay(inputs.psi[j], inputs.eps_eff[j], spec.buffers[j], tail=per_factor_tail)
        for j in range(spec.h - 1)
    ]
    if include_source:
        e1 = spec.eps[0] + inputs.rho[0] * (1.0 - spec.eps[0])
        t_max = int(np.ceil(np.log(per_factor_tail) / np.log(e1))) + 2
        g = np.zeros(t_max + 1)
        g[1:] = (1.0 - e1) * e1 ** (np.arange(1, t_max + 1) - 1.0)
        factors.insert(0, g)
    pmf = factors[0]
    for f in factors[1:]:
        pmf = np.convolve(pmf, f)
    dropped = 1.0 - float(pmf.sum())
    if dropped > tail_budget:
        raise TruncationError(
            f"delay profile dropped {dropped:.3e} of mass, over budget {tail_budget}"
        )
    ts = np.arange(pmf.size)
    mean = float(ts @ pmf) / float(pmf.sum())
    var = float((ts - mean) ** 2 @ pmf) / float(pmf.sum())
    return DelayProfile(pmf=pmf, mean=mean, variance=var, tail_mass_dropped=dropped)


def mean_delay_little(sol: RateSolution, spec: NetworkSpec) -> tuple[float, np.ndarray]:
    """Mean delay as total stored occupancy over throughput.

    Returns the mean and the per-node addends, each a node's share of
    the total delay.
    """
    cap = (1.0 - spec.eps[-1]) * (1.0 - sol.phi[-1][0])
    contributions = sol.occupancy_means() / cap
    return float(contributions.sum()), contributions
