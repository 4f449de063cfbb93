"""Synthetic populations: the four-network Beta benchmark and sale logs
generated by running a ground-truth population through a live waterfall."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Instance, PriceGrid, Waterfall
from .ingest import RawSaleRecord, SaleEventDataset, vectorize
from .rng import derive_seed
from .valuation import BetaParams, EstimationConfig, ValuationMatrix, estimate_matrix

BENCHMARK_BETAS = ((1.0, 6.0), (2.0, 6.0), (10.0, 5.0), (6.0, 1.0))
BENCHMARK_PRICE_SCALE = 30.0


def _rng(seed, label):
    return np.random.default_rng(derive_seed(seed, label))


@dataclass
class SyntheticScenario:
    networks: tuple[tuple[str, BetaParams], ...]
    user_count: int
    seed: int
    grid: PriceGrid
    price_scale: float = BENCHMARK_PRICE_SCALE
    init_set: dict[str, Waterfall] = field(default_factory=dict)

    def __post_init__(self):
        if self.user_count < 1:
            raise ValueError("user_count must be >= 1")
        names = [n for n, _ in self.networks]
        if len(set(names)) != len(names):
            raise ValueError("one Beta per network")

    @property
    def network_ids(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.networks)

    @property
    def users(self) -> tuple[str, ...]:
        width = len(str(self.user_count - 1))
        return tuple(f"u{i:0{width}d}" for i in range(self.user_count))

    def to_dict(self) -> dict:
        return {
            "networks": [{"id": n, "alpha": b.alpha, "beta": b.beta} for n, b in self.networks],
            "user_count": self.user_count,
            "seed": self.seed,
            "grid": list(self.grid.values),
            "price_scale": self.price_scale,
            "init_set": {k: [[i.network, i.price] for i in w] for k, w in self.init_set.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _descending_picks(grid: PriceGrid, k: int, rng) -> list[float]:
    idx = rng.choice(len(grid), size=min(k, len(grid)), replace=False)
    return sorted((grid.values[i] for i in idx), reverse=True)


def initial_waterfalls(networks: Sequence[tuple[str, BetaParams]], grid: PriceGrid, price_scale: float,
                       seed: int) -> dict[str, Waterfall]:
    """Five starting points: true order, empty, average-valuation price,
    and two reversed orders. Prices always descend top to bottom, so every
    start is valid under canonical ordering."""
    by_mean = sorted(networks, key=lambda nb: -nb[1].mean)
    true_order = [n for n, _ in by_mean]
    reverse = true_order[::-1]
    avg = np.mean([b.mean for _, b in networks]) * price_scale
    avg_price = grid.values[int(np.argmin(np.abs(grid.as_array() - avg)))]

    def build(order, prices):
        return Waterfall(tuple(Instance(n, p) for n, p in zip(order, prices)))

    return {
        "true_order": build(true_order, _descending_picks(grid, len(true_order), _rng(seed, "init-true"))),
        "empty": Waterfall(),
        "average_price": build(true_order, [avg_price] * len(true_order)),
        "reversed_1": build(reverse, _descending_picks(grid, len(reverse), _rng(seed, "init-rev-1"))),
        "reversed_2": build(reverse, _descending_picks(grid, len(reverse), _rng(seed, "init-rev-2"))),
    }


def beta_benchmark(user_count: int = 400_000, seed: int = 0, grid: PriceGrid | None = None,
                    price_scale: float = BENCHMARK_PRICE_SCALE) -> SyntheticScenario:
    """Four networks with Beta(1,6), Beta(2,6), Beta(10,5), Beta(6,1) valuations
    on a 30-price grid (1..30 by default)."""
    if user_count < 1:
        raise ValueError("user_count must be >= 1")
    grid = grid or PriceGrid.from_range(1, 30, 1)
    nets = tuple((f"N{i + 1}", BetaParams(a, b)) for i, (a, b) in enumerate(BENCHMARK_BETAS))
    return SyntheticScenario(nets, user_count, seed, grid, price_scale,
                             initial_waterfalls(nets, grid, price_scale, seed))


def sample_dataset(scenario: SyntheticScenario, samples_per_user: int = 50,
                   user_networks: Mapping[str, Sequence[str]] | None = None,
                   start: dt.date = dt.date(2021, 1, 1), days: int = 30,
                   revenue_divisor: float = 1000.0) -> SaleEventDataset:
    """Single-impression sale rows whose prices are direct valuation draws.

    ``user_networks`` restricts which networks a given user has sales on.
    """
    gen = _rng(scenario.seed, "pipeline-samples")
    users = scenario.users
    records = []
    for net, bp in scenario.networks:
        draws = gen.beta(bp.alpha, bp.beta, size=(len(users), samples_per_user)) * scenario.price_scale
        day = gen.integers(0, days, size=draws.shape)
        hour = gen.integers(0, 24, size=draws.shape)
        for ui, user in enumerate(users):
            if user_networks is not None and user in user_networks and net not in user_networks[user]:
                continue
            for s in range(samples_per_user):
                records.append(RawSaleRecord(start + dt.timedelta(days=int(day[ui, s])), int(hour[ui, s]),
                                             net, user, 1, float(draws[ui, s]) / revenue_divisor))
    records.sort(key=lambda r: (r.date, r.hour, r.user, r.network))
    return SaleEventDataset(records)


def generate_matrix(scenario: SyntheticScenario, mode: str = "oracle", samples_per_user: int = 50,
                    user_networks: Mapping[str, Sequence[str]] | None = None,
                    cfg: EstimationConfig | None = None, threads: int = 1) -> ValuationMatrix:
    """``oracle``: every user carries the network's true Beta.
    ``pipeline``: draw sales, vectorize and re-estimate through the normal path."""
    if mode == "oracle":
        return ValuationMatrix.homogeneous(scenario.users, dict(scenario.networks), scenario.price_scale)
    if mode != "pipeline":
        raise ValueError(f"unknown mode {mode!r}")
    ds = sample_dataset(scenario, samples_per_user, user_networks)
    cfg = cfg or EstimationConfig(price_scale=scenario.price_scale)
    return estimate_matrix(vectorize(ds), scenario.users, scenario.network_ids, cfg, threads)


@dataclass
class SalesLogScenario:
    dataset: SaleEventDataset
    live_waterfall: Waterfall
    truth: ValuationMatrix
    start: dt.date
    days: int


def sales_log_scenario(users: int = 300, days: int = 31, seed: int = 0,
                       start: dt.date = dt.date(2021, 1, 1), mean_requests: float = 3.0,
                       revenue_divisor: float = 1000.0) -> SalesLogScenario:
    """Hourly-aggregated sale log of a heterogeneous population under a live waterfall.

    Each user gets its own Beta per network (jittered around a base), makes a
    Poisson number of ad requests per day, and each request is sold to the
    first instance whose price the fresh valuation draw exceeds. Only sales are
    logged, one row per (day, hour, network, user, price), so the log carries
    the instance prices rather than the valuations.
    """
    gen = _rng(seed, "sales-log")
    base = {"G": (2.5, 5.0), "F": (2.0, 4.0), "U": (2.0, 5.0), "A": (2.0, 4.0)}
    nets = tuple(base)
    scale = 40.0
    uids = tuple(f"user{i:05d}" for i in range(users))
    jitter = gen.lognormal(0.0, 0.25, size=(users, len(nets), 2))
    alpha = np.array([[base[k][0] for k in nets]]) * jitter[:, :, 0]
    beta = np.array([[base[k][1] for k in nets]]) * jitter[:, :, 1]
    truth = ValuationMatrix(uids, nets, alpha, beta, np.zeros(alpha.shape, np.uint8), scale)
    live = Waterfall.of(("A", 30), ("A", 24), ("F", 20), ("G", 16), ("A", 14), ("F", 12),
                        ("G", 9), ("U", 7), ("F", 5), ("G", 3), ("U", 2))
    col = {k: j for j, k in enumerate(nets)}
    rows: dict[tuple, list] = {}
    for d in range(days):
        day = start + dt.timedelta(days=d)
        n_req = gen.poisson(mean_requests, size=users)
        for ui in np.flatnonzero(n_req):
            for _ in range(int(n_req[ui])):
                hour = int(gen.integers(0, 24))
                for inst in live:
                    j = col[inst.network]
                    if gen.beta(alpha[ui, j], beta[ui, j]) * scale > inst.price:
                        key = (day, hour, inst.network, uids[ui], inst.price)
                        rows.setdefault(key, [0])[0] += 1
                        break
    records = [RawSaleRecord(day, hour, net, user, n, n * price / revenue_divisor)
               for (day, hour, net, user, price), (n,) in sorted(rows.items())]
    return SalesLogScenario(SaleEventDataset(records), live, truth, start, days)
