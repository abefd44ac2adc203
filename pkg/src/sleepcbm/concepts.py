"""Reference sleep metrics computed from scored events and the raw signal."""

from __future__ import annotations

import statistics
import warnings
from collections import deque
from typing import Sequence

import numpy as np

from .core import (ConceptVector, EventKind, OximetrySignal, RespiratoryEvent)

HYPOPNEA_FLOW_THRESHOLD = 30.0  # strictly greater than


def _counts(events: Sequence[RespiratoryEvent]) -> dict[str, int]:
    counts = dict.fromkeys(("ahi_a0h4", "ahi_a0h4a", "ahi_c0h3", "ahi_c0h4",
                            "rdi0p", "rdi2p", "rdi3p", "rdi4p"), 0)
    for ev in events:
        kind = ev.kind
        if kind.is_apnea:
            central = kind is EventKind.CENTRAL_APNEA
            counts["ahi_a0h4"] += 1
            counts["ahi_a0h4a"] += 1
            counts["rdi0p"] += 1
            if central:
                counts["ahi_c0h3"] += 1
                counts["ahi_c0h4"] += 1
            for x in (2, 3, 4):
                if ev.desat_pct >= x:
                    counts[f"rdi{x}p"] += 1
        elif kind is EventKind.HYPOPNEA and ev.flow_reduction_pct > HYPOPNEA_FLOW_THRESHOLD:
            d = ev.desat_pct
            counts["rdi0p"] += 1
            if d >= 4:
                counts["ahi_a0h4"] += 1
            if d >= 4 or ev.arousal:
                counts["ahi_a0h4a"] += 1
                counts["ahi_c0h4"] += 1
            if d >= 3:
                counts["ahi_c0h3"] += 1
            for x in (2, 3, 4):
                if d >= x:
                    counts[f"rdi{x}p"] += 1
    return counts


def saturation_stats(signal: OximetrySignal) -> tuple[float, float]:
    """Mean and minimum over valid samples."""
    valid = signal.samples[signal.validity]
    if valid.size == 0:
        raise ValueError("no valid samples to compute saturation statistics")
    return float(valid.mean()), float(valid.min())


def compute_concepts(events: Sequence[RespiratoryEvent], signal: OximetrySignal,
                     total_sleep_time_h: float) -> ConceptVector:
    """Event rates per hour of sleep plus mean/min saturation.

    Desaturation and Artifact events never contribute to the rates.
    """
    if not total_sleep_time_h > 0:
        raise ValueError("total_sleep_time_h must be > 0")
    for ev in events:
        if ev.end_s > signal.duration_s + 1e-9:
            raise ValueError(f"event at {ev.start_s}s lies outside the recording")
    rates = {k: v / total_sleep_time_h for k, v in _counts(events).items()}
    avgsat, minsat = saturation_stats(signal)
    return ConceptVector(avgsat=avgsat, minsat=minsat, **rates)


def reference_ahi(events: Sequence[RespiratoryEvent], total_sleep_time_h: float) -> float:
    """The ahi_a0h4 rate alone (no signal needed)."""
    if not total_sleep_time_h > 0:
        raise ValueError("total_sleep_time_h must be > 0")
    return _counts(events)["ahi_a0h4"] / total_sleep_time_h


def trailing_median_baseline(x: np.ndarray, valid: np.ndarray, window: int) -> np.ndarray:
    """Plain median of the preceding ``window`` valid seconds at each sample.

    Samples before the first full window use the median of the first window.
    """
    n = x.size
    xv = np.where(valid, x, np.nan)
    base = np.empty(n)
    view = np.lib.stride_tricks.sliding_window_view(xv, window)[:-1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        median = np.median if valid.all() else np.nanmedian
        base[window:] = median(view, axis=1)
        base[:window] = np.nanmedian(xv[:window])
    # windows with no valid sample inherit the last defined baseline
    bad = ~np.isfinite(base)
    if bad.any():
        idx = np.where(~bad, np.arange(n), 0)
        np.maximum.accumulate(idx, out=idx)
        base = base[idx]
    return base


def desaturation_baseline(x: np.ndarray, valid: np.ndarray, window: int,
                          min_drop_pct: float, max_lookback: int | None = None):
    """Running baseline built only from samples sitting near the baseline.

    The baseline at ``t`` is the median of the last ``window`` valid samples
    before ``t`` that were within ``min_drop_pct / 2`` of their own baseline,
    looking back at most ``max_lookback`` seconds (default ``5 * window``).
    Until ``window // 4`` such samples are available the previous baseline
    is held; if the lookback empties, the plain trailing median takes over
    so that a lasting level shift cannot freeze the baseline.

    Returns the baseline and the boolean "at least ``min_drop_pct`` below"
    flags.
    """
    n = x.size
    max_lookback = 5 * window if max_lookback is None else max_lookback
    plain = trailing_median_baseline(x, valid, window)
    base = np.empty(n)
    below = np.zeros(n, dtype=bool)
    kept_t: deque = deque()
    kept_v: deque = deque()
    min_kept = max(1, window // 4)
    near = 0.5 * min_drop_pct
    xs = x.tolist()
    vs = valid.tolist()
    b = plain[0]
    for t in range(n):
        while kept_t and kept_t[0] < t - max_lookback:
            kept_t.popleft()
            kept_v.popleft()
        if len(kept_v) >= min_kept:
            b = statistics.median(kept_v)
        elif not kept_v and t >= window:
            b = plain[t]
        base[t] = b
        if not vs[t]:
            continue
        drop = b - xs[t]
        below[t] = drop >= min_drop_pct
        if drop < near:
            kept_t.append(t)
            kept_v.append(xs[t])
            if len(kept_v) > window:
                kept_t.popleft()
                kept_v.popleft()
    return base, below


def detect_desaturations(signal: OximetrySignal, min_drop_pct: float = 3.0,
                         min_duration_s: float = 10.0,
                         baseline_window_s: int = 120) -> list[RespiratoryEvent]:
    """Spans lying at least ``min_drop_pct`` below a running baseline.

    The baseline is the median of the preceding ``baseline_window_s`` valid,
    non-desaturated seconds (see :func:`desaturation_baseline`). One event is
    emitted per maximal run of qualifying samples lasting at least
    ``min_duration_s``; ``desat_pct`` is the baseline at the run start minus
    the run minimum.
    """
    n = len(signal)
    if n <= baseline_window_s:
        raise ValueError(f"signal ({n} s) is shorter than the baseline window "
                         f"({baseline_window_s} s)")
    x = signal.samples
    base, below = desaturation_baseline(x, signal.validity, baseline_window_s,
                                        min_drop_pct)
    edges = np.diff(np.concatenate([[0], below.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    events = []
    for s, e in zip(starts, ends):
        if e - s < min_duration_s:
            continue
        depth = float(base[s] - x[s:e].min())
        events.append(RespiratoryEvent(EventKind.DESATURATION, float(s), float(e - s),
                                       desat_pct=max(depth, 0.0)))
    return events
