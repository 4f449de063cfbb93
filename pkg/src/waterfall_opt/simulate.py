"""Run a user population through a waterfall against a valuation matrix.

Each traversal walks the instances top to bottom; at every instance the user's
valuation for that network is drawn afresh (keyed on the network's occurrence
count so far) and the first instance whose price is strictly below the draw
takes the impression.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import rng
from .core import DEFAULT_REVENUE_DIVISOR, PriceGrid, Waterfall, WaterfallConstraints, validate
from .errors import WaterfallValidationError
from .valuation import ValuationMatrix, zeta_vector


@dataclass(frozen=True)
class Population:
    """Users with integer traversal counts; replica ``r`` of a user gets its own draws."""

    users: tuple[str, ...]
    multiplicity: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "multiplicity", tuple(int(m) for m in self.multiplicity))
        if len(self.users) != len(self.multiplicity):
            raise ValueError("users and multiplicity differ in length")
        if not self.users:
            raise ValueError("population is empty")
        if any(m < 1 for m in self.multiplicity):
            raise ValueError("multiplicities must be >= 1")
        if max(self.multiplicity) > rng.MAX_REPLICA:
            raise ValueError(f"multiplicity above {rng.MAX_REPLICA} is not supported")

    @classmethod
    def of(cls, users: Sequence[str]) -> "Population":
        return cls(tuple(users), (1,) * len(users))

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]) -> "Population":
        return cls(tuple(counts), tuple(counts.values()))

    @property
    def size(self) -> int:
        return sum(self.multiplicity)


@dataclass(frozen=True)
class SimulationConfig:
    seed: int = 0
    population: Population | None = None  # None: every matrix user once
    revenue_divisor: float = DEFAULT_REVENUE_DIVISOR
    threads: int = 1


@dataclass
class SimulationResult:
    q_prime: np.ndarray
    requests: int
    unsold_users: int
    revenue: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "q_prime": [int(x) for x in self.q_prime],
            "requests": int(self.requests),
            "unsold_users": int(self.unsold_users),
            "revenue": float(self.revenue),
            "seed": int(self.seed),
        }

    def __eq__(self, other):
        if not isinstance(other, SimulationResult):
            return NotImplemented
        return (np.array_equal(self.q_prime, other.q_prime) and self.requests == other.requests
                and self.unsold_users == other.unsold_users and self.revenue == other.revenue
                and self.seed == other.seed)


class Simulator:
    """Reusable simulation context for one (matrix, population, seed).

    Unit Beta draws are cached per (network, occurrence); they do not depend on
    the waterfall or on ``zeta``, so every candidate evaluated through the same
    simulator sees common random numbers.
    """

    def __init__(self, matrix: ValuationMatrix, population: Population | None = None, seed: int = 0,
                 revenue_divisor: float = DEFAULT_REVENUE_DIVISOR, threads: int = 1):
        self.matrix = matrix
        self.population = population or Population.of(matrix.users)
        self.seed = int(seed)
        self.revenue_divisor = float(revenue_divisor)
        self.threads = max(1, int(threads))
        rows = np.array([matrix.user_index(u) for u in self.population.users], dtype=np.intp)
        mult = np.asarray(self.population.multiplicity, dtype=np.int64)
        self._rows = np.repeat(rows, mult)
        # replica index of each traversal within its user
        starts = np.repeat(np.cumsum(mult) - mult, mult)
        self._replicas = (np.arange(self._rows.size, dtype=np.int64) - starts).astype(np.uint64)
        self._draws: dict[tuple[int, int], np.ndarray] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, matrix: ValuationMatrix, cfg: SimulationConfig) -> "Simulator":
        return cls(matrix, cfg.population, cfg.seed, cfg.revenue_divisor, cfg.threads)

    @property
    def size(self) -> int:
        return int(self._rows.size)

    def unit_draws(self, network: int, occurrence: int) -> np.ndarray:
        key = (network, occurrence)
        arr = self._draws.get(key)
        if arr is None:
            with self._lock:
                arr = self._draws.get(key)
                if arr is None:
                    arr = self.matrix.unit_draws(self._rows, network, occurrence, self._replicas, self.seed)
                    arr.flags.writeable = False
                    self._draws[key] = arr
        return arr

    def _plan(self, w: Waterfall):
        plan, seen = [], {}
        for inst in w:
            if not self.matrix.has_network(inst.network):
                raise WaterfallValidationError(f"network {inst.network!r} is not in the valuation matrix")
            k = self.matrix.network_index(inst.network)
            occ = seen.get(k, 0)
            seen[k] = occ + 1
            plan.append((k, occ, inst.price))
        return plan

    def _traverse(self, plan, zv, lo, hi):
        r = len(plan)
        q = np.zeros(r, dtype=np.int64)
        requests = 0
        active = np.ones(hi - lo, dtype=bool)
        for i, (k, occ, price) in enumerate(plan):
            n_active = int(np.count_nonzero(active))
            if n_active == 0:
                break
            requests += n_active
            values = (zv[k] * self.matrix.price_scale) * self.unit_draws(k, occ)[lo:hi]
            sold = active & (values > price)
            q[i] = np.count_nonzero(sold)
            active &= ~sold
        return q, requests

    def run(self, w: Waterfall, zeta: Mapping[str, float] | None = None) -> SimulationResult:
        plan = self._plan(w)
        zv = zeta_vector(self.matrix, zeta)
        for k, occ, _ in plan:
            self.unit_draws(k, occ)
        n = self.size
        if self.threads > 1 and n >= 2 * self.threads:
            bounds = np.linspace(0, n, self.threads + 1).astype(int)
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(lambda b: self._traverse(plan, zv, *b), zip(bounds[:-1], bounds[1:])))
            q = np.sum([p[0] for p in parts], axis=0).astype(np.int64)
            requests = sum(p[1] for p in parts)
        else:
            q, requests = self._traverse(plan, zv, 0, n)
        rev = float(np.dot(q, w.prices)) / self.revenue_divisor if len(w) else 0.0
        return SimulationResult(q, int(requests), int(n - q.sum()), rev, self.seed)

    def revenue(self, w: Waterfall, zeta: Mapping[str, float] | None = None) -> float:
        return self.run(w, zeta).revenue


def run_waterfall(matrix: ValuationMatrix, w: Waterfall, zeta: Mapping[str, float] | None = None,
                  cfg: SimulationConfig | None = None, constraints: WaterfallConstraints | None = None,
                  grid: PriceGrid | None = None) -> SimulationResult:
    cfg = cfg or SimulationConfig()
    if constraints is not None:
        problems = validate(w, constraints, grid)
        if problems:
            raise WaterfallValidationError("invalid waterfall: " + "; ".join(v.detail for v in problems), problems)
    return Simulator.from_config(matrix, cfg).run(w, zeta)


def replay_counterfactual(matrix: ValuationMatrix, w: Waterfall, zeta: Mapping[str, float] | None,
                          cfg: SimulationConfig | None, base_w: Waterfall,
                          simulator: Simulator | None = None) -> SimulationResult:
    """Simulate ``w`` with the exact draws ``base_w`` would see.

    Draws are keyed by (user, network, occurrence), so any key shared by the
    two waterfalls produces a bit-identical valuation; users whose traversal
    prefix is unchanged behave identically. Passing ``simulator`` reuses its
    draw cache across many counterfactuals of one base.
    """
    sim = simulator or Simulator.from_config(matrix, cfg or SimulationConfig())
    sim._plan(base_w)  # base must be simulable against this matrix too
    return sim.run(w, zeta)
