import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ipv4_packet, ipv6_packet, write_pcap
from timefp.errors import EmptyTraceError, TraceFormatError, TraceValidationError
from timefp.trace import (
    Dataset,
    Trace,
    as_trace,
    ingest_capture,
    ingest_csv,
    load_manifest,
    normalize,
    write_csv,
    write_manifest,
)


def test_trace_is_read_only():
    t = as_trace([0, 1, 2])
    with pytest.raises(ValueError):
        t.timestamps[0] = 5


def test_decreasing_timestamp_names_index():
    with pytest.raises(TraceValidationError) as exc:
        as_trace([0, 1, 0.5, 2])
    assert exc.value.index == 3


@pytest.mark.parametrize("bad", [[], [0, np.nan], [-1, 0]])
def test_invalid_traces_rejected(bad):
    with pytest.raises((EmptyTraceError, TraceValidationError)):
        as_trace(bad)


def test_normalize_and_shift():
    t = as_trace([2.0, 2.5, 4.0])
    assert normalize(t).timestamps.tolist() == [0.0, 0.5, 2.0]
    assert t.shifted(1).timestamps.tolist() == [3.0, 3.5, 5.0]


def test_key_distinguishes_content():
    assert as_trace([0, 1], id="a").key != as_trace([0, 2], id="a").key
    assert as_trace([0, 1], id="a").key == as_trace([0, 1], id="a").key


def test_dataset_rejects_duplicate_ids():
    with pytest.raises(TraceValidationError):
        Dataset({"a": [as_trace([0], id="x")], "b": [as_trace([0], id="x")]})


def test_dataset_from_traces_groups_by_site():
    ds = Dataset.from_traces([as_trace([0], "1", "b"), as_trace([0], "2", "a"), as_trace([0], "3", "b")])
    assert ds.labels == ["a", "b"]
    assert len(ds) == 3


def _csv(tmp_path, body, name="t.csv"):
    p = tmp_path / name
    p.write_text(body)
    return p


def test_ingest_csv_filters_direction_and_normalizes(tmp_path):
    p = _csv(tmp_path, "time_s,dir\n10.0,up\n10.1,down\n10.5,up\n")
    t = ingest_csv(p)
    assert t.id == "t"
    assert np.allclose(t.timestamps, [0.0, 0.5])
    assert len(ingest_csv(p, "both")) == 3
    assert len(ingest_csv(p, "down")) == 1


def test_ingest_csv_errors(tmp_path):
    with pytest.raises(TraceFormatError) as exc:
        ingest_csv(_csv(tmp_path, "time_s,dir\n0,up\nabc,up\n"))
    assert exc.value.line == 3
    with pytest.raises(TraceFormatError):
        ingest_csv(_csv(tmp_path, "t,d\n0,up\n"))
    with pytest.raises(TraceFormatError):
        ingest_csv(_csv(tmp_path, "time_s,dir\n0,sideways\n"))
    with pytest.raises(EmptyTraceError):
        ingest_csv(_csv(tmp_path, "time_s,dir\n0,down\n"))
    with pytest.raises(TraceValidationError) as exc:
        ingest_csv(_csv(tmp_path, "time_s,dir\n0,up\n2,up\n1,up\n"))
    assert exc.value.index == 3


@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=50))
def test_csv_round_trip_is_exact(tmp_path_factory, values):
    ts = np.sort(np.asarray(values))
    t = Trace("x", ts - ts[0])
    p = tmp_path_factory.mktemp("rt") / "x.csv"
    write_csv(t, p)
    assert np.array_equal(ingest_csv(p).timestamps, t.timestamps)


def test_manifest_round_trip(tmp_path):
    ds = Dataset({"a": [as_trace([0, 0.1], "a-0", "a")], "b": [as_trace([0, 0.3, 0.4], "b-0", "b")]})
    m = write_manifest(ds, tmp_path)
    doc = json.loads(m.read_text())
    assert doc["sites"] == {"a": ["a/a-0.csv"], "b": ["b/b-0.csv"]}
    back = load_manifest(m)
    assert back.labels == ["a", "b"]
    assert back.sites["b"][0].timestamps.tolist() == [0, 0.3, 0.4]


def test_bad_manifest(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(TraceFormatError):
        load_manifest(p)


@pytest.mark.parametrize("nanos", [False, True])
@pytest.mark.parametrize("big_endian", [False, True])
def test_ingest_pcap_filters_by_source(tmp_path, nanos, big_endian):
    scale = 10**9 if nanos else 10**6
    recs = [
        (1_700_000_000, int(0.25 * scale), ipv4_packet("10.0.0.1")),
        (1_700_000_000, int(0.50 * scale), ipv4_packet("10.0.0.2")),
        (1_700_000_001, int(0.125 * scale), ipv4_packet("10.0.0.1")),
    ]
    p = tmp_path / "c.pcap"
    write_pcap(p, recs, nanos=nanos, big_endian=big_endian)
    t = ingest_capture(p, "10.0.0.1", site="s")
    assert t.timestamps.tolist() == [0.0, 0.875]
    assert t.site == "s"


def test_ingest_pcap_ipv6_and_sll(tmp_path):
    src = bytes(15) + b"\x01"
    p = tmp_path / "v6.pcap"
    write_pcap(p, [(5, 0, ipv6_packet(src)), (5, 1000, ipv6_packet(src))])
    assert len(ingest_capture(p, "::1")) == 2
    p = tmp_path / "sll.pcap"
    write_pcap(p, [(5, 0, ipv4_packet("1.2.3.4"))], linktype=113)
    assert len(ingest_capture(p, "1.2.3.4")) == 1


def test_pcap_errors(tmp_path):
    p = tmp_path / "bad.pcap"
    p.write_bytes(b"\x00" * 30)
    with pytest.raises(TraceFormatError):
        ingest_capture(p, "1.2.3.4")
    write_pcap(p, [(0, 0, ipv4_packet("1.2.3.4"))])
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(TraceFormatError):
        ingest_capture(p, "1.2.3.4")
    write_pcap(p, [(0, 0, ipv4_packet("1.2.3.4"))])
    with pytest.raises(EmptyTraceError):
        ingest_capture(p, "9.9.9.9")
