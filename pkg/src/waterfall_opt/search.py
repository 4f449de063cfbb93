"""Local search over waterfalls.

A neighbor differs from its parent by one move: remove an instance, move one
instance's price one grid step up or down, or add a (network, price) pair that
is not yet present. Additions go to the descending-price slot, after any
instances of equal price.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (DEFAULT_REVENUE_DIVISOR, Instance, PriceGrid, Waterfall, WaterfallConstraints,
                   canonicalize, validate)
from .errors import SearchSpaceTooLarge
from .simulate import Population, Simulator
from .valuation import ValuationMatrix, zeta_vector

MOVE_KINDS = ("remove", "reprice-up", "reprice-down", "add")


@dataclass(frozen=True)
class SearchConfig:
    grid: PriceGrid
    constraints: WaterfallConstraints = field(default_factory=WaterfallConstraints)
    # None: the networks of the valuation matrix
    networks: tuple[str, ...] | None = None
    max_iter: int = 50
    epsilon: float = 0.0
    seed: int = 0
    revenue_divisor: float = DEFAULT_REVENUE_DIVISOR
    threads: int = 1

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class Move:
    kind: str
    position: int | None  # index in the parent; None for additions
    instance: Instance  # removed, repriced (new price) or added instance
    waterfall: Waterfall

    def describe(self) -> str:
        if self.kind == "add":
            return f"add {self.instance}"
        return f"{self.kind} #{self.position + 1} -> {self.instance}"


def neighbors(w: Waterfall, cfg: SearchConfig, networks: Sequence[str] | None = None) -> list[Move]:
    """All valid single-move neighbors in a fixed order: for each position its
    removal, up-step and down-step, then additions by network and price."""
    grid, cons = cfg.grid, cfg.constraints
    networks = tuple(networks if networks is not None else (cfg.networks or ()))
    moves: list[Move] = []
    seen: set = {w.key()}
    present = set(w.key())
    per_net: dict[str, int] = {}
    for inst in w:
        per_net[inst.network] = per_net.get(inst.network, 0) + 1

    def emit(kind, pos, inst, cand):
        key = cand.key()
        if key in seen or validate(cand, cons, grid):
            return
        seen.add(key)
        moves.append(Move(kind, pos, inst, cand))

    items = w.instances
    for pos, inst in enumerate(items):
        emit("remove", pos, inst, Waterfall(items[:pos] + items[pos + 1:]))
        gi = grid.index(inst.price)
        if gi is None:
            continue
        for kind, step in (("reprice-up", 1), ("reprice-down", -1)):
            j = gi + step
            if not 0 <= j < len(grid):
                continue
            new = Instance(inst.network, grid.values[j])
            if (new.network, new.price) in present:
                continue
            cand = Waterfall(items[:pos] + (new,) + items[pos + 1:])
            emit(kind, pos, new, canonicalize(cand, cons.canonical_descending))

    if len(w) < cons.max_length:
        for net in networks:
            if per_net.get(net, 0) >= cons.max_instances_per_network:
                continue
            for price in grid.values:
                if (net, price) in present:
                    continue
                new = Instance(net, price)
                slot = next((i for i, x in enumerate(items) if x.price < price), len(items))
                emit("add", None, new, Waterfall(items[:slot] + (new,) + items[slot:]))
    return moves


@dataclass
class TraceRecord:
    iteration: int
    revenue: float
    candidates_evaluated: int
    cumulative_candidates: int
    move_kind: str | None = None
    move_detail: str | None = None
    waterfall: Waterfall | None = None
    own_revenue: float | None = None  # lookahead search: adopted waterfall's own revenue

    def to_dict(self) -> dict:
        d = {
            "iteration": self.iteration,
            "revenue": self.revenue,
            "candidates_evaluated": self.candidates_evaluated,
            "cumulative_candidates": self.cumulative_candidates,
            "move_kind": self.move_kind,
            "move_detail": self.move_detail,
            "waterfall": [[i.network, i.price] for i in self.waterfall] if self.waterfall is not None else None,
        }
        if self.own_revenue is not None:
            d["own_revenue"] = self.own_revenue
        return d


@dataclass
class SearchTrace:
    algorithm: str
    seed: int
    records: list[TraceRecord] = field(default_factory=list)
    final: Waterfall | None = None
    converged: bool = False
    total_candidates: int = 0
    # best simulated waterfall seen (for lookahead, the grandchild behind the final revenue)
    best_waterfall: Waterfall | None = None

    @property
    def revenues(self) -> list[float]:
        return [r.revenue for r in self.records]

    @property
    def final_revenue(self) -> float:
        return self.records[-1].revenue

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "converged": self.converged,
            "total_candidates": self.total_candidates,
            "final_revenue": self.final_revenue,
            "final_waterfall": [[i.network, i.price] for i in self.final] if self.final is not None else None,
            "best_waterfall": ([[i.network, i.price] for i in self.best_waterfall]
                               if self.best_waterfall is not None else None),
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        return trace_csv(self.to_dict())


def trace_csv(trace: dict) -> str:
    """Learning-curve CSV from a serialized trace."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "revenue", "candidates_evaluated", "move_kind", "move_detail"])
    for r in trace["records"]:
        writer.writerow([r["iteration"], repr(float(r["revenue"])), r["candidates_evaluated"],
                         r["move_kind"] or "", r["move_detail"] or ""])
    return buf.getvalue()


class _Evaluator:
    """Memoized revenue of waterfalls under one simulator and zeta."""

    def __init__(self, simulator: Simulator, zeta, threads: int):
        self.sim = simulator
        self.zeta = dict(zeta or {})
        self.threads = max(1, int(threads))
        self.memo: dict = {}

    def many(self, waterfalls: Sequence[Waterfall]) -> list[float]:
        todo, keys = [], []
        for w in waterfalls:
            k = w.key()
            if k not in self.memo and k not in keys:
                keys.append(k)
                todo.append(w)
        if todo:
            for w in todo:  # warm the draw cache before fanning out
                self.sim._plan(w)
            if self.threads > 1 and len(todo) > 1:
                with ThreadPoolExecutor(self.threads) as pool:
                    revs = list(pool.map(lambda w: self.sim.revenue(w, self.zeta), todo))
            else:
                revs = [self.sim.revenue(w, self.zeta) for w in todo]
            self.memo.update(zip(keys, revs))
        return [self.memo[w.key()] for w in waterfalls]

    def one(self, w: Waterfall) -> float:
        return self.many([w])[0]


def _simulator(matrix, cfg, population, simulator):
    if simulator is not None:
        return simulator
    return Simulator(matrix, population, cfg.seed, cfg.revenue_divisor)


def _networks(matrix, cfg):
    return tuple(cfg.networks) if cfg.networks else tuple(matrix.networks)


def hill_climb(w0: Waterfall, matrix: ValuationMatrix, zeta: Mapping[str, float] | None, cfg: SearchConfig,
               population: Population | None = None, simulator: Simulator | None = None
               ) -> tuple[Waterfall, SearchTrace]:
    """Greedy search: each iteration adopts the best neighbor if it beats the
    current revenue by a positive margin of at least ``epsilon``."""
    ev = _Evaluator(_simulator(matrix, cfg, population, simulator), zeta, cfg.threads)
    nets = _networks(matrix, cfg)
    current, rev = w0, ev.one(w0)
    trace = SearchTrace("sns", cfg.seed)
    trace.records.append(TraceRecord(0, rev, 1, 1, waterfall=w0))
    total = 1
    for it in range(1, cfg.max_iter + 1):
        moves = neighbors(current, cfg, nets)
        revs = ev.many([m.waterfall for m in moves])
        total += len(moves)
        best_i, best_rev = None, rev
        for i, r in enumerate(revs):
            if r > best_rev:
                best_i, best_rev = i, r
        gain = best_rev - rev
        if best_i is None or gain < cfg.epsilon:
            trace.converged = True
            break
        m = moves[best_i]
        current, rev = m.waterfall, best_rev
        trace.records.append(TraceRecord(it, rev, len(moves), total, m.kind, m.describe(), current))
    trace.final = current
    trace.best_waterfall = current
    trace.total_candidates = total
    return current, trace


def mcts_search(w0: Waterfall, matrix: ValuationMatrix, zeta: Mapping[str, float] | None, cfg: SearchConfig,
                population: Population | None = None, simulator: Simulator | None = None
                ) -> tuple[Waterfall, SearchTrace]:
    """Two-level exhaustive lookahead.

    Every grandchild (neighbor of a neighbor) is simulated; the neighbor whose
    best grandchild has the highest revenue is adopted, provided that revenue
    beats the best revenue so far. The recorded revenue per iteration is that
    grandchild revenue; ``own_revenue`` is the adopted neighbor's own.
    ``trace.best_waterfall`` holds the grandchild behind the final revenue.
    """
    ev = _Evaluator(_simulator(matrix, cfg, population, simulator), zeta, cfg.threads)
    nets = _networks(matrix, cfg)
    current, rev = w0, ev.one(w0)
    best_w = w0
    trace = SearchTrace("mcts", cfg.seed)
    trace.records.append(TraceRecord(0, rev, 1, 1, waterfall=w0, own_revenue=rev))
    total = 1
    for it in range(1, cfg.max_iter + 1):
        moves = neighbors(current, cfg, nets)
        own = ev.many([m.waterfall for m in moves])
        evaluated = len(moves)
        best_i, best_rev, best_gg = None, rev, None
        for i, m in enumerate(moves):
            grand = neighbors(m.waterfall, cfg, nets)
            revs = ev.many([g.waterfall for g in grand])
            evaluated += len(grand)
            for g, r in zip(grand, revs):
                if r > best_rev:
                    best_i, best_rev, best_gg = i, r, g.waterfall
        total += evaluated
        gain = best_rev - rev
        if best_i is None or gain < cfg.epsilon:
            trace.converged = True
            break
        m = moves[best_i]
        current, rev, best_w = m.waterfall, best_rev, best_gg
        trace.records.append(TraceRecord(it, rev, evaluated, total, m.kind, m.describe(), current,
                                         own_revenue=own[best_i]))
    trace.final = current
    trace.best_waterfall = best_w
    trace.total_candidates = total
    return current, trace


# ------------------------------------------------------------------ oracle

@dataclass
class OracleResult:
    waterfall: Waterfall
    revenue: float
    candidates: int
    method: str

    def to_dict(self) -> dict:
        return {
            "waterfall": [[i.network, i.price] for i in self.waterfall],
            "revenue": self.revenue,
            "candidates": self.candidates,
            "method": self.method,
        }


def count_candidates(shape: Sequence[str], grid_size: int) -> int:
    orders = math.factorial(len(shape))
    for n in {s: shape.count(s) for s in shape}.values():
        orders //= math.factorial(n)
    return orders * grid_size ** len(shape)


def _enumerate(shape, grid):
    for order in dict.fromkeys(itertools.permutations(shape)):
        for prices in itertools.product(grid.values, repeat=len(shape)):
            yield Waterfall(tuple(Instance(n, p) for n, p in zip(order, prices)))


def exhaustive_optimum(networks: Sequence[str], cfg: SearchConfig, matrix: ValuationMatrix,
                       zeta: Mapping[str, float] | None = None, shape: Sequence[str] | None = None,
                       population: Population | None = None, simulator: Simulator | None = None,
                       max_candidates: int = 25_000_000, method: str = "auto") -> OracleResult:
    """Best waterfall over every ordering of ``shape`` and every price assignment.

    ``shape`` is a multiset of network ids, one per instance (default: each of
    ``networks`` once). Orderings are not restricted to descending prices.
    ``method="tensor"`` scores all candidates from a histogram of the
    population's discretized draws and needs distinct networks; ``"brute"``
    simulates each candidate. Ties go to the first candidate in enumeration
    order (orderings lexicographic in ``shape`` positions, then prices).
    """
    shape = tuple(shape if shape is not None else networks)
    grid = cfg.grid
    size = count_candidates(list(shape), len(grid))
    if size > max_candidates:
        raise SearchSpaceTooLarge(size, max_candidates)
    sim = _simulator(matrix, cfg, population, simulator)
    distinct = len(set(shape)) == len(shape)
    if method == "auto":
        method = "tensor" if distinct and (len(grid) + 1) ** len(shape) <= 20_000_000 else "brute"
    if method == "tensor":
        if not distinct:
            raise ValueError("tensor oracle needs each network at most once")
        return _tensor_oracle(shape, grid, sim, zeta, size)
    best_w, best_rev = Waterfall(), -math.inf
    for w in _enumerate(shape, grid):
        r = sim.revenue(w, zeta)
        if r > best_rev:
            best_w, best_rev = w, r
    return OracleResult(best_w, best_rev, size, "brute")


def _tensor_oracle(shape, grid, sim: Simulator, zeta, size) -> OracleResult:
    K, M = len(shape), len(grid)
    prices = grid.as_array()
    zv = zeta_vector(sim.matrix, zeta)
    bins = []
    for net in shape:
        k = sim.matrix.network_index(net)
        values = (zv[k] * sim.matrix.price_scale) * sim.unit_draws(k, 0)
        # number of grid prices strictly below the draw: sale at price j iff bin > j
        bins.append(np.searchsorted(prices, values, side="left"))
    flat = np.ravel_multi_index(tuple(bins), (M + 1,) * K)
    counts = np.bincount(flat, minlength=(M + 1) ** K).reshape((M + 1,) * K).astype(np.int64)
    # cum[t_1..t_K] = #users with bin_k <= t_k for every k
    cum = counts
    for ax in range(K):
        cum = np.cumsum(cum, axis=ax)
    combos = np.indices((M,) * K).reshape(K, -1)  # same order as itertools.product
    n_users = cum[(M,) * K]
    best = (-math.inf, None, None)
    for order in dict.fromkeys(itertools.permutations(range(K))):
        idx = [np.full(combos.shape[1], M) for _ in range(K)]
        reached = np.full(combos.shape[1], n_users, dtype=np.int64)
        total = np.zeros(combos.shape[1])
        for pos, axis in enumerate(order):
            j = combos[pos]
            idx[axis] = j
            remaining = cum[tuple(idx)]
            total += (reached - remaining) * prices[j]
            reached = remaining
        i = int(np.argmax(total))
        if total[i] > best[0]:
            best = (float(total[i]), order, combos[:, i])
    rev, order, js = best
    w = Waterfall(tuple(Instance(shape[a], prices[j]) for a, j in zip(order, js)))
    # report the simulator's own revenue so oracle and searches compare like for like
    return OracleResult(w, sim.revenue(w, zeta), size, "tensor")
