import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from microtrip.core import MicroTrip, SpeedTrajectory, validate_micro_trip
from microtrip.fixtures import fixture_trace_csv, generate_fixture
from microtrip.ingest import (
    ChecksumError,
    Dataset,
    DatasetFormatError,
    IngestError,
    RawTrace,
    VersionError,
    dataset_summary,
    dumps_dataset,
    ingest_traces,
    load_dataset,
    loads_dataset,
    parse_trace_csv,
    resample_1hz,
    save_dataset,
    segment_micro_trips,
    summary_csv,
)

from oracles import interp_point


def test_parse_single_trip():
    text = "trip_id,t,speed_mps\na,0,0\na,1,2.5\na,2,0\n"
    traces = parse_trace_csv(text.encode())
    assert len(traces) == 1 and len(traces[0]) == 3
    assert traces[0].speeds.tolist() == [0, 2.5, 0]


def test_parse_header_only():
    assert parse_trace_csv(b"trip_id,t,speed_mps\n") == []


def test_parse_duplicate_timestamp_names_line():
    text = "trip_id,t,speed_mps\na,0,0\na,1,2\na,1,3\n"
    with pytest.raises(IngestError) as err:
        parse_trace_csv(io.StringIO(text))
    assert err.value.line == 4


def test_parse_bad_header_and_fields():
    with pytest.raises(IngestError):
        parse_trace_csv(b"a,b,c\n")
    with pytest.raises(IngestError):
        parse_trace_csv(b"trip_id,t,speed_mps\na,0\n")
    with pytest.raises(IngestError):
        parse_trace_csv(b"trip_id,t,speed_mps\na,x,1\n")


def test_parse_groups_and_sorts():
    text = "trip_id,t,speed_mps\nb,1,1\na,0,0\nb,0,2\n"
    tr = parse_trace_csv(text.encode())
    assert [t.trip_id for t in tr] == ["b", "a"]
    assert tr[0].timestamps.tolist() == [0, 1]


def test_resample_linear_example():
    out = resample_1hz(RawTrace("x", np.array([0.0, 2.0]), np.array([0.0, 4.0])))
    assert out.samples.tolist() == [0, 2, 4]


def test_resample_on_grid_is_identity():
    v = np.array([0.0, 3.0, 5.0, 1.0])
    out = resample_1hz(RawTrace("x", np.arange(4.0), v))
    assert np.array_equal(out.samples, v)


def test_resample_irregular_matches_pointwise_oracle():
    rng = np.random.default_rng(7)
    ts = np.cumsum(rng.uniform(3, 7, 30))
    vs = rng.uniform(0, 25, 30)
    out = resample_1hz(RawTrace("x", ts, vs)).samples
    grid = np.arange(np.ceil(ts[0]), np.floor(ts[-1]) + 1)
    want = [interp_point(ts, vs, g) for g in grid]
    np.testing.assert_allclose(out, want, rtol=0, atol=1e-12)


def test_resample_needs_span():
    with pytest.raises(IngestError):
        resample_1hz(RawTrace("x", np.array([0.0, 1.0]), np.array([0.0, 1.0])))


def test_segment_hand_example():
    trips = segment_micro_trips(SpeedTrajectory([0, 5, 5, 0, 0, 7, 0]), stop_speed=0, min_duration=0)
    assert [t.speeds.tolist() for t in trips] == [[0, 5, 5, 0], [0, 7, 0]]


def test_segment_all_zero():
    assert segment_micro_trips(SpeedTrajectory(np.zeros(50)), 0.5, 0) == []


def test_segment_min_duration_drops_short():
    v = np.concatenate([[0], np.full(9, 5.0), [0], np.full(40, 6.0), [0]])
    trips = segment_micro_trips(SpeedTrajectory(v), 0.5, 34)
    assert [t.duration for t in trips] == [41]


@given(st.lists(st.floats(0, 30, allow_nan=False), min_size=2, max_size=200), st.floats(0, 2))
def test_segments_are_valid_micro_trips(vals, stop):
    for t in segment_micro_trips(SpeedTrajectory(vals), stop, 0):
        assert validate_micro_trip(t)
        assert np.all(t.speeds[1:-1] > stop)


def test_summary_single_trip():
    table = dataset_summary(Dataset([MicroTrip.from_speeds([0, 10, 10, 10, 0])]))
    assert table["Duration (s)"] == {"min": 4, "max": 4, "mean": 4, "median": 4}


def test_summary_median_of_two():
    ds = Dataset([MicroTrip.from_speeds([0, 1, 0]), MicroTrip.from_speeds([0, 1, 1, 1, 0])])
    assert dataset_summary(ds)["Duration (s)"]["median"] == 3
    assert summary_csv(dataset_summary(ds)).startswith("attribute,min,max,mean,median\n")


def test_summary_on_fixture_matches_recorded_truth():
    ds, truth = generate_fixture(300, seed=2, max_duration=2000)
    table = dataset_summary(ds)
    durations = [t.duration for t in ds]
    assert table["Duration (s)"]["mean"] == pytest.approx(np.mean(durations))
    assert table["Avg Speed (m/s)"]["min"] >= 5.18 - 1e-9
    assert table["Avg Speed (m/s)"]["max"] <= 31.57 + 1e-9
    np.testing.assert_allclose([t.stats.avg_speed_mps for t in ds], truth.target_avg_speeds, rtol=1e-12)


def test_save_load_round_trip(tmp_path):
    ds, _ = generate_fixture(20, seed=1, max_duration=400)
    path = tmp_path / "d.mtd"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back == ds
    assert all(np.array_equal(a.speeds, b.speeds) for a, b in zip(ds, back))


def test_truncated_file_fails_checksum(tmp_path):
    ds, _ = generate_fixture(5, seed=1, max_duration=200)
    text = dumps_dataset(ds)
    with pytest.raises(ChecksumError):
        loads_dataset(text[: len(text) - 40])


def test_unknown_version_rejected():
    ds = Dataset([MicroTrip.from_speeds([0, 1, 0])])
    text = dumps_dataset(ds).replace('"version": 1', '"version": 7', 1)
    with pytest.raises(VersionError):
        loads_dataset(text)
    with pytest.raises(DatasetFormatError):
        loads_dataset("garbage\n")


def test_ingest_fixture_traces_recovers_trips():
    ds, _ = generate_fixture(12, seed=4, max_duration=300)
    csv_text = fixture_trace_csv(ds, trips_per_trace=3, seed=0)
    back = ingest_traces(csv_text, stop_speed=0.5, min_duration=34)
    assert len(back) == len(ds)
    assert back.provenance["stop_speed"] == 0.5
