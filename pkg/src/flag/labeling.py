"""Value-based trend labels from closing prices around an earnings call.

The price series itself is the trading calendar: "the previous business
day" is the last date in the series strictly before the call date, and the
following business day the first date strictly after it.

* daily:  1 if close(next day) > close(previous day), else 0
* weekly: 1 if mean close of the next 5 trading days > mean close of the
  previous 5 trading days, else 0
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

log = logging.getLogger(__name__)

DAILY, WEEKLY = "daily", "weekly"
WEEK = 5


class UnlabelableEvent(ValueError):
    """Not enough trading dates on one side of the call date."""


class PriceFormatError(ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    dates: Tuple[dt.date, ...]
    closes: Tuple[float, ...]

    def __post_init__(self):
        if len(self.dates) != len(self.closes):
            raise ValueError("dates and closes differ in length")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise ValueError(f"{self.ticker}: dates not strictly increasing at {b}")
        if any(not c > 0 for c in self.closes):
            raise ValueError(f"{self.ticker}: closing prices must be positive")

    def scaled(self, factor):
        return PriceSeries(self.ticker, self.dates, tuple(c * factor for c in self.closes))


@dataclass(frozen=True)
class CallEvent:
    doc_id: str
    ticker: str
    call_date: dt.date


@dataclass(frozen=True)
class Label:
    value: int
    horizon: str


def _windows(series, event, width):
    d = event.call_date
    before_end = bisect.bisect_left(series.dates, d)  # dates[:before_end] < d
    after_start = bisect.bisect_right(series.dates, d)  # dates[after_start:] > d
    before = series.closes[max(0, before_end - width):before_end]
    after = series.closes[after_start:after_start + width]
    if len(before) < width or len(after) < width:
        raise UnlabelableEvent(
            f"{event.doc_id}: need {width} trading day(s) on each side of {d}, "
            f"have {len(before)} before and {len(after)} after"
        )
    return before, after


def daily_label(series: PriceSeries, event: CallEvent) -> Label:
    before, after = _windows(series, event, 1)
    return Label(int(after[0] > before[0]), DAILY)


def weekly_label(series: PriceSeries, event: CallEvent) -> Label:
    before, after = _windows(series, event, WEEK)
    return Label(int(sum(after) / WEEK > sum(before) / WEEK), WEEKLY)


LABEL_FUNCTIONS = {DAILY: daily_label, WEEKLY: weekly_label}


def load_prices(path) -> Dict[str, PriceSeries]:
    """Read ``ticker,date,close`` CSV rows into one sorted series per ticker."""
    rows: Dict[str, Dict[dt.date, Tuple[float, int]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["ticker", "date", "close"]:
            raise PriceFormatError(f"expected header ticker,date,close, got {header}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise PriceFormatError(f"expected 3 fields, got {len(row)}", lineno)
            ticker, date_s, close_s = (c.strip() for c in row)
            if not ticker:
                raise PriceFormatError("empty ticker", lineno)
            try:
                date = dt.date.fromisoformat(date_s)
            except ValueError:
                raise PriceFormatError(f"bad ISO date {date_s!r}", lineno) from None
            try:
                close = float(close_s)
            except ValueError:
                raise PriceFormatError(f"bad close {close_s!r}", lineno) from None
            if not close > 0 or close == float("inf"):
                raise PriceFormatError(f"close must be a positive finite number, got {close_s}", lineno)
            per = rows.setdefault(ticker, {})
            if date in per:
                raise PriceFormatError(
                    f"duplicate ({ticker}, {date}) also on line {per[date][1]}", lineno
                )
            per[date] = (close, lineno)
    store = {}
    for ticker, per in rows.items():
        dates = sorted(per)
        store[ticker] = PriceSeries(ticker, tuple(dates), tuple(per[d][0] for d in dates))
    return store


def write_prices(store, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "date", "close"])
        for ticker in sorted(store):
            s = store[ticker]
            for d, c in zip(s.dates, s.closes):
                w.writerow([ticker, d.isoformat(), repr(c)])


def label_events(events, store, horizon=DAILY) -> List[Tuple[CallEvent, Label]]:
    """Label every event; unlabelable ones (or unknown tickers) are dropped and counted."""
    fn = LABEL_FUNCTIONS[horizon]
    out, dropped = [], 0
    for ev in events:
        series = store.get(ev.ticker)
        if series is None:
            log.warning("%s: no prices for ticker %s", ev.doc_id, ev.ticker)
            dropped += 1
            continue
        try:
            out.append((ev, fn(series, ev)))
        except UnlabelableEvent as exc:
            log.info("dropping %s", exc)
            dropped += 1
    if dropped:
        log.warning("dropped %d of %d events as unlabelable (%s)", dropped, len(out) + dropped, horizon)
    return out


def write_labels(labeled, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ev, lab in labeled:
            fh.write(json.dumps({"doc_id": ev.doc_id, "horizon": lab.horizon, "label": lab.value}) + "\n")


def read_labels(path) -> Dict[str, int]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                labels[rec["doc_id"]] = int(rec["label"])
    return labels
