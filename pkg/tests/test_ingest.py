import datetime as dt
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waterfall_opt.core import Waterfall
from waterfall_opt.errors import FormatError, InsufficientHistoryError
from waterfall_opt.ingest import (RawSaleRecord, SaleEventDataset, format_records, impressions_per_user,
                                  load_vectors, observed_impressions, parse_records, save_vectors,
                                  split_train_validation, vectorize)

US = "%m/%d/%Y"
HEADER = "date,hour,ad_network,user_id,impressions,revenue\n"


def test_first_raw_row(raw_sales_csv):
    ds = parse_records(raw_sales_csv, US)
    r = ds.records[0]
    assert (r.date, r.hour, r.network, r.user, r.impressions, r.revenue) == \
        (dt.date(2021, 1, 1), 19, "G", "4421AB3", 1, 0.020)
    assert len(ds.records) == 7 and not ds.rejected


def test_accepts_bytes_and_streams(raw_sales_csv):
    a = parse_records(raw_sales_csv.encode(), US)
    b = parse_records(io.StringIO(raw_sales_csv), US)
    assert a.records == b.records


def test_empty_file_with_header():
    ds = parse_records(HEADER)
    assert ds.records == [] and ds.rejected == []
    assert vectorize(ds) == {}


@pytest.mark.parametrize("row,reason", [
    ("2021-01-01,3,G,u1,0,0.0", "impressions"),
    ("2021-01-01,3,G,u1,-2,0.1", "impressions"),
    ("2021-01-01,3,G,u1,1,-0.1", "revenue"),
    ("2021-01-01,25,G,u1,1,0.1", "hour"),
    ("2021-13-01,3,G,u1,1,0.1", "does not match format"),
    ("2021-01-01,3,,u1,1,0.1", "empty"),
])
def test_bad_rows_rejected_with_diagnostic(row, reason, caplog):
    ds = parse_records(HEADER + "2021-01-01,3,G,u1,1,0.1\n" + row + "\n")
    assert len(ds.records) == 1
    assert len(ds.rejected) == 1 and ds.rejected[0].line == 3
    assert reason in ds.rejected[0].reason
    assert "rejected line 3" in caplog.text


@pytest.mark.parametrize("text", ["", "date,hour,network,user_id,impressions,revenue\n",
                                  HEADER + "2021-01-01,3,G,u1,1\n"])
def test_format_errors(text):
    with pytest.raises(FormatError):
        parse_records(text)


def test_vectorize_raw_sample(raw_sales_csv):
    v = vectorize(parse_records(raw_sales_csv, US))
    assert v[("4421AB3", "G")].tolist() == pytest.approx([0.020, 0.019])
    assert v[("345ADB", "F")].tolist() == pytest.approx([0.011, 0.011, 0.009, 0.009])
    assert v[("12345AS", "G")].tolist() == pytest.approx([0.019] * 3)
    assert set(v) == {("4421AB3", "G"), ("4421AB3", "U"), ("345ADB", "F"), ("12345AS", "G"), ("12345AS", "U")}


def test_vectorize_follows_time_order():
    text = HEADER + "2021-01-02,1,G,u,1,0.3\n2021-01-01,5,G,u,1,0.2\n2021-01-01,4,G,u,1,0.1\n"
    assert vectorize(parse_records(text))[("u", "G")].tolist() == [0.1, 0.2, 0.3]


records = st.builds(
    RawSaleRecord,
    st.dates(dt.date(2021, 1, 1), dt.date(2021, 3, 1)),
    st.integers(0, 23),
    st.sampled_from("GFUA"),
    st.sampled_from(["u1", "u2", "u3"]),
    st.integers(1, 20),
    st.floats(0, 5, allow_nan=False),
)


@given(st.lists(records, max_size=40))
def test_vector_conservation(recs):
    v = vectorize(SaleEventDataset(recs))
    assert sum(len(x) for x in v.values()) == sum(r.impressions for r in recs)
    total = math.fsum(r.revenue for r in recs)
    assert math.isclose(math.fsum(float(x) for arr in v.values() for x in arr), total, rel_tol=1e-9, abs_tol=1e-12)


@given(st.lists(records, max_size=30))
@settings(max_examples=50)
def test_csv_round_trip(recs):
    assert parse_records(format_records(recs)).records == recs


def test_vector_store_round_trip(tmp_path, raw_sales_csv):
    v = vectorize(parse_records(raw_sales_csv, US))
    save_vectors(v, tmp_path / "v.wfv")
    back = load_vectors(tmp_path / "v.wfv")
    assert set(back) == set(v)
    assert all(np.array_equal(back[k], v[k]) for k in v)


def test_vector_store_bad_magic(tmp_path):
    (tmp_path / "x").write_text("hello\n")
    with pytest.raises(FormatError):
        load_vectors(tmp_path / "x")


def _daily(days, start=dt.date(2021, 1, 1)):
    return SaleEventDataset([RawSaleRecord(start + dt.timedelta(days=d), 0, "G", f"u{d % 3}", 1, 0.01)
                             for d in range(days)])


def test_split_sixty_days():
    ds = _daily(60)
    s = split_train_validation(ds, dt.date(2021, 1, 31), 30)
    assert s.train.days[0] == dt.date(2021, 1, 1) and s.train.days[-1] == dt.date(2021, 1, 30)
    assert s.validation.days == [dt.date(2021, 1, 31)]
    train, val = set(map(id, s.train.records)), set(map(id, s.validation.records))
    assert not train & val and train | val <= set(map(id, ds.records))


def test_split_anchor_on_first_day():
    with pytest.raises(InsufficientHistoryError):
        split_train_validation(_daily(10), dt.date(2021, 1, 1), 30)


def test_split_truncated_history_warns(caplog):
    s = split_train_validation(_daily(10), dt.date(2021, 1, 6), 30)
    assert len(s.train.days) == 5
    assert "only 5 of 30 training days" in caplog.text


def test_observed_impressions_bins_by_network_and_price(caplog):
    w = Waterfall.of(("G", 20), ("F", 11), ("G", 19))
    recs = [RawSaleRecord(dt.date(2021, 1, 1), 0, "G", "a", 1, 0.020),
            RawSaleRecord(dt.date(2021, 1, 1), 0, "G", "b", 2, 0.038),
            RawSaleRecord(dt.date(2021, 1, 1), 0, "F", "a", 2, 0.022),
            RawSaleRecord(dt.date(2021, 1, 1), 0, "U", "a", 1, 0.015)]
    obs = observed_impressions(recs, w)
    assert obs.q.tolist() == [1, 2, 2]
    assert [r.network for r in obs.unmatched] == ["U"]
    assert "1 sale rows match no waterfall instance" in caplog.text


def test_impressions_per_user(raw_sales_csv):
    counts = impressions_per_user(parse_records(raw_sales_csv, US).records)
    assert counts == {"12345AS": 4, "345ADB": 4, "4421AB3": 3}
