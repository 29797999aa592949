"""Measured RSS streams: CSV records, windowed snapshots and attenuation estimates."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import EmptyStreamError, MissingReferenceError, ParseError, UnknownNodeError
from .geometry import NetworkGraph
from .multibody import AttenuationSnapshot, features_from_links

log = logging.getLogger(__name__)

RSS_COLUMNS = ("timestamp_ms", "tx_id", "rx_id", "rssi_dbm", "channel")


@dataclass(frozen=True)
class RssRecord:
    timestamp_ms: int
    tx_id: str
    rx_id: str
    rssi_dbm: float
    channel: int

    def __post_init__(self):
        if self.tx_id == self.rx_id:
            raise ValueError(f"record links node {self.tx_id!r} to itself")
        if not math.isfinite(self.rssi_dbm):
            raise ValueError("rssi must be finite")


def read_rss_csv(source: str | Path | TextIO) -> list[RssRecord]:
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_rss_csv(fh)
    reader = csv.reader(line for line in source if not line.startswith("#"))
    header = next(reader, None)
    if header is None:
        raise EmptyStreamError("RSS stream has no header")
    if tuple(h.strip() for h in header) != RSS_COLUMNS:
        raise ParseError(f"RSS header must be {','.join(RSS_COLUMNS)}; got {','.join(header)}")
    out = []
    for row in reader:
        if not row:
            continue
        try:
            t, tx, rx, rssi, ch = row
            out.append(RssRecord(int(t), tx.strip(), rx.strip(), float(rssi), int(ch)))
        except ValueError as exc:
            raise ParseError(f"RSS row {reader.line_num}: {exc}") from None
    return out


def write_rss_csv(target: str | Path | TextIO, records: Iterable[RssRecord]) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="") as fh:
            write_rss_csv(fh, records)
        return
    w = csv.writer(target, lineterminator="\n")
    w.writerow(RSS_COLUMNS)
    for r in records:
        w.writerow([r.timestamp_ms, r.tx_id, r.rx_id, repr(float(r.rssi_dbm)), r.channel])


@dataclass(eq=False)
class PowerSeries:
    """Per-window link powers; NaN marks a link with no record in that window."""

    window_start_ms: np.ndarray
    power: np.ndarray


def ingest_rss(records: Sequence[RssRecord] | str | Path | TextIO, graph: NetworkGraph,
               window_ms: int = 60) -> PowerSeries:
    """Bucket records into consecutive windows; the latest record per link wins."""
    if window_ms <= 0:
        raise ValueError("window_ms must be positive")
    if not isinstance(records, (list, tuple)):
        records = read_rss_csv(records)
    if not records:
        raise EmptyStreamError("no RSS records")
    index = {nid: i for i, nid in enumerate(graph.node_ids)}
    for r in records:
        for nid in (r.tx_id, r.rx_id):
            if nid not in index:
                raise UnknownNodeError(f"node {nid!r} is not in the graph")
    # stable sort keeps file order for equal timestamps, so "latest" is well defined
    ordered = sorted(records, key=lambda r: r.timestamp_ms)
    first = ordered[0].timestamp_ms // window_ms
    last = ordered[-1].timestamp_ms // window_ms
    power = np.full((last - first + 1, graph.n_links), np.nan)
    skipped = 0
    for r in ordered:
        link = graph.link_index.get((index[r.tx_id], index[r.rx_id]))
        if link is None:
            skipped += 1
            continue
        power[r.timestamp_ms // window_ms - first, link] = r.rssi_dbm
    if skipped:
        log.warning("skipped %d records for node pairs that are not links", skipped)
    starts = (np.arange(first, last + 1) * window_ms).astype(np.int64)
    return PowerSeries(starts, power)


def estimate_attenuation(series: PowerSeries | np.ndarray, free_space_power, graph: NetworkGraph,
                         averaging_window: int = 10) -> list[AttenuationSnapshot]:
    """Free-space power minus a trailing mean of measured power, per link.

    One estimate is produced per window once ``averaging_window`` windows are
    available. Negative estimates are floored at 0 dB; the unfloored values
    (NaN where a link was never seen in the window) travel in ``raw_features``.
    """
    if averaging_window < 1:
        raise ValueError("averaging_window must be at least 1")
    power = series.power if isinstance(series, PowerSeries) else np.asarray(series, dtype=float)
    power = np.atleast_2d(power)
    p0 = np.broadcast_to(np.asarray(free_space_power, dtype=float), (graph.n_links,))
    observed = ~np.all(np.isnan(power), axis=0)
    missing = observed & ~np.isfinite(p0)
    if missing.any():
        names = [f"{graph.node_ids[graph.links[i][0]]}->{graph.node_ids[graph.links[i][1]]}"
                 for i in np.nonzero(missing)[0][:5]]
        raise MissingReferenceError(f"no free-space power for {int(missing.sum())} observed link(s): {', '.join(names)}")
    out = []
    for t in range(averaging_window - 1, len(power)):
        win = power[t - averaging_window + 1:t + 1]
        seen = ~np.isnan(win)
        count = seen.sum(axis=0)
        total = np.where(seen, win, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
        raw = p0 - mean
        floored = np.where(np.isnan(raw), 0.0, np.maximum(raw, 0.0))
        raw_feat = features_from_links(graph, raw)
        out.append(AttenuationSnapshot(features_from_links(graph, floored), t, "measured", raw_feat))
    return out


def records_from_powers(graph: NetworkGraph, powers: np.ndarray, window_ms: int = 60, start_ms: int = 0,
                        channel: int = 26) -> list[RssRecord]:
    """One record per link per window, as a simulated capture of the given power rows."""
    powers = np.atleast_2d(powers)
    out = []
    for w, row in enumerate(powers):
        t0 = start_ms + w * window_ms
        for link, (u, v) in enumerate(graph.links):
            if np.isnan(row[link]):
                continue
            t = t0 + (link * window_ms) // max(graph.n_links, 1)
            out.append(RssRecord(t, graph.node_ids[u], graph.node_ids[v], float(row[link]), channel))
    return out


def rss_csv_text(records: Iterable[RssRecord]) -> str:
    buf = io.StringIO()
    write_rss_csv(buf, records)
    return buf.getvalue()
