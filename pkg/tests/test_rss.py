import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rfsl.errors import EmptyStreamError, MissingReferenceError, ParseError, UnknownNodeError
from rfsl.geometry import SUBJECTS, NetworkGraph, sample_targets, wavelength_of
from rfsl.multibody import NoiseConfig, links_from_features, simulate_rss, snapshot
from rfsl.rss import (
    PowerSeries,
    RssRecord,
    estimate_attenuation,
    ingest_rss,
    read_rss_csv,
    records_from_powers,
    rss_csv_text,
)


@pytest.fixture(scope="module")
def tri():
    pos = np.array([[0, 0, 1.0], [3, 0, 1.0], [0, 3, 1.0]])
    return NetworkGraph(pos, ((0, 1), (1, 0), (0, 2)), (3, 3), 1.0, ("a", "b", "c"))


def test_last_record_in_window_wins(tri):
    recs = [RssRecord(10, "a", "b", -60.0, 11), RssRecord(50, "a", "b", -55.0, 11), RssRecord(30, "a", "b", -70.0, 11)]
    s = ingest_rss(recs, tri)
    assert s.power.shape == (1, 3)
    assert s.power[0, 0] == -55.0
    assert np.isnan(s.power[0, 1]) and np.isnan(s.power[0, 2])


def test_windows_are_consecutive(tri):
    recs = [RssRecord(5, "a", "b", -60.0, 11), RssRecord(200, "b", "a", -61.0, 11)]
    s = ingest_rss(recs, tri, window_ms=60)
    assert s.window_start_ms.tolist() == [0, 60, 120, 180]
    assert np.isnan(s.power[1:3]).all()


def test_unknown_node_and_empty_stream(tri):
    with pytest.raises(UnknownNodeError):
        ingest_rss([RssRecord(0, "a", "zz", -50.0, 11)], tri)
    with pytest.raises(EmptyStreamError):
        ingest_rss([], tri)


def test_non_link_pairs_are_skipped(tri, caplog):
    s = ingest_rss([RssRecord(0, "b", "c", -50.0, 11), RssRecord(1, "a", "c", -52.0, 11)], tri)
    assert s.power[0].tolist()[2] == -52.0
    assert "skipped 1" in caplog.text


def test_csv_roundtrip_and_errors(tri):
    recs = [RssRecord(0, "a", "b", -50.125, 11), RssRecord(7, "a", "c", -49.0, 26)]
    assert read_rss_csv(io.StringIO(rss_csv_text(recs))) == recs
    with pytest.raises(ParseError):
        read_rss_csv(io.StringIO("t,a,b\n1,2,3\n"))
    with pytest.raises(ParseError):
        read_rss_csv(io.StringIO("timestamp_ms,tx_id,rx_id,rssi_dbm,channel\n1,a,b,oops,11\n"))
    with pytest.raises(ParseError):
        read_rss_csv(io.StringIO("timestamp_ms,tx_id,rx_id,rssi_dbm,channel\n1,a,a,-50,11\n"))


def test_estimate_arithmetic(tri):
    power = np.array([[-55.0, -50.0, -49.0]] * 3)
    snaps = estimate_attenuation(PowerSeries(np.arange(3) * 60, power), -50.0, tri, averaging_window=3)
    assert len(snaps) == 1
    assert links_from_features(tri, snaps[0].node_features).tolist() == [5.0, 0.0, 0.0]
    assert links_from_features(tri, snaps[0].raw_features).tolist() == [5.0, 0.0, -1.0]


def test_estimate_missing_reference(tri):
    power = np.array([[-55.0, np.nan, -49.0]])
    with pytest.raises(MissingReferenceError):
        estimate_attenuation(power, [-50.0, -50.0, np.nan], tri, 1)
    # an unobserved link without a reference is fine
    estimate_attenuation(power, [-50.0, np.nan, -50.0], tri, 1)


@given(st.floats(-30, 30), st.lists(st.floats(-80, -30), min_size=3, max_size=3))
def test_estimate_shift_equivariant(tri, c, powers):
    power = np.array([powers, powers])
    a = estimate_attenuation(power, -40.0, tri, 2)[0].raw_features
    b = estimate_attenuation(power + c, -40.0 + c, tri, 2)[0].raw_features
    assert np.allclose(a, b, atol=1e-9)


@given(st.permutations(list(range(6))))
def test_ingest_order_insensitive_within_window(tri, order):
    base = [RssRecord(t, "a", "b", -50.0 - t, 11) for t in range(0, 60, 10)]
    shuffled = [base[i] for i in order]
    assert np.array_equal(ingest_rss(shuffled, tri).power, ingest_rss(base, tri).power, equal_nan=True)


def test_simulated_roundtrip_exact(room20):
    lam = wavelength_of(2.4e9)
    snap = snapshot(room20, sample_targets(5, room20.area, SUBJECTS["A"], 2), "MAM", lam)
    rss = simulate_rss(snap, room20, -45.0)
    recs = records_from_powers(room20, np.tile(rss.link_power, (10, 1)))
    est = estimate_attenuation(ingest_rss(io.StringIO(rss_csv_text(recs)), room20), -45.0, room20, 10)
    assert len(est) == 1
    assert np.max(np.abs(est[0].node_features - snap.node_features)) < 1e-9


def test_empty_room_noise_free_estimate_is_zero(room20):
    recs = records_from_powers(room20, np.full((3, room20.n_links), -50.0))
    est = estimate_attenuation(ingest_rss(recs, room20), -50.0, room20, 3)
    assert not est[0].node_features.any()
