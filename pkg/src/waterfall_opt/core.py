"""Waterfalls, price grids, constraints and the revenue score."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, FormatError

DEFAULT_REVENUE_DIVISOR = 1000.0
_PRICE_DECIMALS = 9

WATERFALL_HEADER = ("position", "network", "price")


def _norm_price(p: float) -> float:
    return round(float(p), _PRICE_DECIMALS)


@dataclass(frozen=True)
class PriceGrid:
    """Strictly increasing set of allowed prices (eCPM unless configured otherwise)."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(_norm_price(v) for v in self.values)
        if not vals:
            raise ValueError("price grid is empty")
        if any(v <= 0 or not math.isfinite(v) for v in vals):
            raise ValueError("grid prices must be finite and positive")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid prices must be strictly increasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_range(cls, lo: float, hi: float, step: float) -> "PriceGrid":
        if step <= 0:
            raise ValueError("grid step must be positive")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return cls(tuple(lo + i * step for i in range(n)))

    def __len__(self) -> int:
        return len(self.values)

    def index(self, price: float) -> int | None:
        """Grid position of ``price``, or None when it is off-grid."""
        p = _norm_price(price)
        i = int(np.searchsorted(self.values, p))
        if i < len(self.values) and math.isclose(self.values[i], p, rel_tol=1e-9, abs_tol=1e-12):
            return i
        if i > 0 and math.isclose(self.values[i - 1], p, rel_tol=1e-9, abs_tol=1e-12):
            return i - 1
        return None

    def __contains__(self, price) -> bool:
        return self.index(price) is not None

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class Instance:
    network: str
    price: float

    def __post_init__(self):
        if not self.network:
            raise ValueError("network id must be non-empty")
        object.__setattr__(self, "price", _norm_price(self.price))

    def __str__(self):
        return f"{self.network}@{_fmt_price(self.price)}"


@dataclass(frozen=True)
class Waterfall:
    """Ordered instances; position 0 is offered first."""

    instances: tuple[Instance, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))

    @classmethod
    def of(cls, *pairs) -> "Waterfall":
        """``Waterfall.of(("G", 10), ("F", 5))``"""
        return cls(tuple(Instance(n, p) for n, p in pairs))

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]

    @property
    def prices(self) -> np.ndarray:
        return np.array([inst.price for inst in self.instances], dtype=np.float64)

    @property
    def networks(self) -> tuple[str, ...]:
        return tuple(inst.network for inst in self.instances)

    def key(self) -> tuple[tuple[str, float], ...]:
        return tuple((i.network, i.price) for i in self.instances)

    def __str__(self):
        return "[" + ", ".join(str(i) for i in self.instances) + "]"


@dataclass(frozen=True)
class WaterfallConstraints:
    max_length: int = 20
    max_instances_per_network: int = 5
    canonical_descending: bool = True

    def __post_init__(self):
        if self.max_length < 1 or self.max_instances_per_network < 1:
            raise ValueError("constraint counts must be >= 1")


@dataclass(frozen=True)
class Violation:
    kind: str  # off_grid | over_length | duplicate | network_cap | order
    detail: str
    position: int | None = None


def revenue(w: Waterfall, q: Sequence[float], divisor: float = DEFAULT_REVENUE_DIVISOR) -> float:
    """Sum of impressions times price, scaled by ``divisor`` (1000 for eCPM)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (len(w),):
        raise DimensionError(f"impression vector has length {q.size}, waterfall has {len(w)}")
    if len(w) == 0:
        return 0.0
    return float(np.dot(q, w.prices)) / divisor


def validate(w: Waterfall, constraints: WaterfallConstraints, grid: PriceGrid | None = None) -> list[Violation]:
    """Every violated invariant; an empty list means the waterfall is valid."""
    out: list[Violation] = []
    if len(w) > constraints.max_length:
        out.append(Violation("over_length", f"{len(w)} instances > max_length {constraints.max_length}"))
    seen: set[tuple[str, float]] = set()
    per_network: dict[str, int] = {}
    for pos, inst in enumerate(w):
        if grid is not None and inst.price not in grid:
            out.append(Violation("off_grid", f"{inst} is not a grid price", pos))
        key = (inst.network, inst.price)
        if key in seen:
            out.append(Violation("duplicate", f"{inst} appears more than once", pos))
        seen.add(key)
        per_network[inst.network] = per_network.get(inst.network, 0) + 1
    for net, n in per_network.items():
        if n > constraints.max_instances_per_network:
            out.append(Violation(
                "network_cap", f"{net} has {n} instances > {constraints.max_instances_per_network}"))
    if constraints.canonical_descending:
        for pos in range(1, len(w)):
            if w[pos].price > w[pos - 1].price:
                out.append(Violation("order", f"{w[pos]} priced above {w[pos - 1]}", pos))
    return out


def canonicalize(w: Waterfall, enabled: bool = True) -> Waterfall:
    """Stable sort by price, highest first. Identity when ``enabled`` is False."""
    if not enabled:
        return w
    return Waterfall(tuple(sorted(w.instances, key=lambda inst: -inst.price)))


def _fmt_price(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else repr(float(p))


def format_waterfall(w: Waterfall) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(WATERFALL_HEADER)
    for pos, inst in enumerate(w, start=1):
        writer.writerow([pos, inst.network, _fmt_price(inst.price)])
    return buf.getvalue()


def write_waterfall(w: Waterfall, path) -> None:
    Path(path).write_text(format_waterfall(w), encoding="utf-8")


def parse_waterfall(text: str) -> Waterfall:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != WATERFALL_HEADER:
        raise FormatError(f"waterfall file must start with header {','.join(WATERFALL_HEADER)}")
    instances = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"line {lineno}: expected 3 columns, got {len(row)}")
        try:
            pos, inst = int(row[0]), Instance(row[1].strip(), float(row[2]))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if pos != len(instances) + 1:
            raise FormatError(f"line {lineno}: positions must be 1-based and contiguous")
        instances.append(inst)
    return Waterfall(tuple(instances))


def read_waterfall(path) -> Waterfall:
    return parse_waterfall(Path(path).read_text(encoding="utf-8"))
