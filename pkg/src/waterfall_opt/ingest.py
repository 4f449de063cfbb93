"""Sale-record parsing, per-(user, network) price vectors and day-based splits.

Input CSV header: ``date,hour,ad_network,user_id,impressions,revenue``. Each row
is an hourly aggregate; ``revenue`` covers all of the row's impressions.

Vector store format (line-delimited, UTF-8)::

    #waterfall-vectors v1
    {"user": "4421AB3", "network": "G", "prices": [0.02, 0.019]}
    ...

One JSON object per (user, network) cell, sorted by user then network.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import DEFAULT_REVENUE_DIVISOR, Waterfall
from .errors import FormatError, InsufficientHistoryError

log = logging.getLogger(__name__)

SALES_HEADER = ("date", "hour", "ad_network", "user_id", "impressions", "revenue")
DEFAULT_DATE_FORMAT = "%Y-%m-%d"
VECTOR_MAGIC = "#waterfall-vectors v1"

UserSaleVectors = dict  # (user, network) -> np.ndarray of per-impression prices


@dataclass(frozen=True)
class RawSaleRecord:
    date: dt.date
    hour: int
    network: str
    user: str
    impressions: int
    revenue: float

    @property
    def unit_price(self) -> float:
        return self.revenue / self.impressions


@dataclass(frozen=True)
class RowDiagnostic:
    line: int
    reason: str


@dataclass
class SaleEventDataset:
    records: list[RawSaleRecord] = field(default_factory=list)
    rejected: list[RowDiagnostic] = field(default_factory=list)

    @property
    def days(self) -> list[dt.date]:
        return sorted({r.date for r in self.records})

    @property
    def day_range(self) -> tuple[dt.date, dt.date] | None:
        days = self.days
        return (days[0], days[-1]) if days else None

    @property
    def users(self) -> list[str]:
        return sorted({r.user for r in self.records})

    @property
    def networks(self) -> list[str]:
        return sorted({r.network for r in self.records})

    def totals(self) -> dict:
        return {
            "records": len(self.records),
            "rejected": len(self.rejected),
            "impressions": sum(r.impressions for r in self.records),
            "revenue": math.fsum(r.revenue for r in self.records),
            "users": len(self.users),
            "networks": len(self.networks),
        }


def _parse_row(row, date_format):
    date = dt.datetime.strptime(row[0].strip(), date_format).date()
    hour = int(row[1])
    if not 0 <= hour <= 23:
        raise ValueError(f"hour {hour} outside 0-23")
    network, user = row[2].strip(), row[3].strip()
    if not network or not user:
        raise ValueError("empty ad_network or user_id")
    impressions = int(row[4])
    revenue = float(row[5])
    if impressions < 1:
        raise ValueError(f"impressions must be >= 1, got {impressions}")
    if revenue < 0 or not math.isfinite(revenue):
        raise ValueError(f"revenue must be a finite non-negative number, got {row[5]}")
    return RawSaleRecord(date, hour, network, user, impressions, revenue)


def parse_records(source, date_format: str = DEFAULT_DATE_FORMAT) -> SaleEventDataset:
    """Parse a sales CSV from text, bytes, or a readable text stream.

    Rows with bad values are skipped and listed in ``dataset.rejected``. A
    missing or wrong header, or a row with the wrong number of columns, raises
    :class:`FormatError`.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    stream = io.StringIO(source) if isinstance(source, str) else source
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != SALES_HEADER:
        raise FormatError(f"expected header {','.join(SALES_HEADER)}, got {header!r}")
    ds = SaleEventDataset()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(SALES_HEADER):
            raise FormatError(f"line {lineno}: expected {len(SALES_HEADER)} columns, got {len(row)}")
        try:
            ds.records.append(_parse_row(row, date_format))
        except ValueError as exc:
            ds.rejected.append(RowDiagnostic(lineno, str(exc)))
    for diag in ds.rejected:
        log.warning("rejected line %d: %s", diag.line, diag.reason)
    return ds


def read_records(path, date_format: str = DEFAULT_DATE_FORMAT) -> SaleEventDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_records(fh, date_format)


def format_records(records: Iterable[RawSaleRecord], date_format: str = DEFAULT_DATE_FORMAT) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SALES_HEADER)
    for r in records:
        writer.writerow([r.date.strftime(date_format), r.hour, r.network, r.user, r.impressions, repr(r.revenue)])
    return buf.getvalue()


def write_records(records: Iterable[RawSaleRecord], path, date_format: str = DEFAULT_DATE_FORMAT) -> None:
    Path(path).write_text(format_records(records, date_format), encoding="utf-8")


def vectorize(dataset: SaleEventDataset) -> UserSaleVectors:
    """Expand each record into ``impressions`` copies of its per-impression price.

    Records are taken in (date, hour) order; ties keep file order.
    """
    cells: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in sorted(dataset.records, key=lambda r: (r.date, r.hour)):
        cells[(r.user, r.network)].extend([r.unit_price] * r.impressions)
    return {k: np.asarray(v, dtype=np.float64) for k, v in cells.items()}


def save_vectors(vectors: UserSaleVectors, path) -> None:
    lines = [VECTOR_MAGIC]
    for user, network in sorted(vectors):
        prices = [float(x) for x in vectors[(user, network)]]
        lines.append(json.dumps({"user": user, "network": network, "prices": prices}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vectors(path) -> UserSaleVectors:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != VECTOR_MAGIC:
            raise FormatError(f"{path}: not a vector store (bad magic line {first!r})")
        out = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[(obj["user"], obj["network"])] = np.asarray(obj["prices"], dtype=np.float64)
            except (ValueError, KeyError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


@dataclass
class TrainValidationSplit:
    train: SaleEventDataset
    validation: SaleEventDataset
    anchor: dt.date
    window: int


def split_train_validation(dataset: SaleEventDataset, anchor: dt.date, window: int = 30) -> TrainValidationSplit:
    """Train on the ``window`` days before ``anchor``, validate on ``anchor`` itself."""
    if window < 1:
        raise ValueError("window must be >= 1")
    start = anchor - dt.timedelta(days=window)
    train = [r for r in dataset.records if start <= r.date < anchor]
    if not train:
        raise InsufficientHistoryError(f"no records in the {window} days before {anchor}")
    first = min(r.date for r in dataset.records)
    if first > start:
        log.warning("only %d of %d training days available before %s",
                    (anchor - first).days, window, anchor)
    validation = [r for r in dataset.records if r.date == anchor]
    return TrainValidationSplit(SaleEventDataset(train), SaleEventDataset(validation), anchor, window)


@dataclass
class ObservedImpressions:
    q: np.ndarray
    unmatched: list[RawSaleRecord]


def observed_impressions(
    records: Iterable[RawSaleRecord],
    waterfall: Waterfall,
    divisor: float = DEFAULT_REVENUE_DIVISOR,
    rel_tol: float = 1e-6,
) -> ObservedImpressions:
    """Bin sales into the waterfall's instances by (network, price).

    A row's price in waterfall units is its per-impression revenue times
    ``divisor``. Rows that match no instance are returned, not dropped.
    """
    lookup = {}
    for i, inst in enumerate(waterfall):
        lookup.setdefault(inst.network, []).append((inst.price, i))
    q = np.zeros(len(waterfall), dtype=np.int64)
    unmatched = []
    for r in records:
        price = r.unit_price * divisor
        slot = next((i for p, i in lookup.get(r.network, ())
                     if math.isclose(p, price, rel_tol=rel_tol, abs_tol=1e-9)), None)
        if slot is None:
            unmatched.append(r)
        else:
            q[slot] += r.impressions
    if unmatched:
        log.warning("%d sale rows match no waterfall instance", len(unmatched))
    return ObservedImpressions(q, unmatched)


def impressions_per_user(records: Iterable[RawSaleRecord]) -> dict[str, int]:
    counts: dict[str, int] = defaultdict(int)
    for r in records:
        counts[r.user] += r.impressions
    return dict(sorted(counts.items()))
