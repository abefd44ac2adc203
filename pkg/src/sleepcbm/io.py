"""Reading and writing study bundles and result tables.

A study bundle is a directory holding::

    signal.csv     t_s,spo2 (one row per second, empty cell = missing)
    events.json    [{kind, start_s, duration_s, flow_reduction_pct, desat_pct, arousal}]
    clinical.json  flat object keyed by ClinicalFeatures field names
    meta.json      {id, total_sleep_time_h, reference_ahi}
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import (ClinicalFeatures, OximetrySignal, RespiratoryEvent,
                   SleepStudy)

SIGNAL_FILE = "signal.csv"
EVENTS_FILE = "events.json"
CLINICAL_FILE = "clinical.json"
META_FILE = "meta.json"


class BundleError(Exception):
    """A study bundle could not be loaded."""


class MissingFileError(BundleError, FileNotFoundError):
    pass


class ParseError(BundleError, ValueError):
    pass


class MissingClinicalFieldError(ParseError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("clinical record rejected; missing fields: "
                         + ", ".join(self.missing))


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingFileError(f"missing bundle file: {path}")
    return path


def read_signal_csv(path) -> OximetrySignal:
    path = _require(Path(path))
    values = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t_s", "spo2"]:
            raise ParseError(f"{path}: line 1: expected header 't_s,spo2', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError(f"{path}: line {lineno}: expected 2 columns, got {len(row)}")
            cell = row[1].strip()
            try:
                values.append(float(cell) if cell else math.nan)
            except ValueError:
                values.append(math.nan)
    if not values:
        raise ParseError(f"{path}: no samples")
    return OximetrySignal.from_values(values)


def write_signal_csv(signal: OximetrySignal, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t_s,spo2\n")
        for t, v in enumerate(signal.samples):
            fh.write(f"{t},{repr(float(v)) if np.isfinite(v) else ''}\n")


_EVENT_FIELDS = ("kind", "start_s", "duration_s", "flow_reduction_pct",
                 "desat_pct", "arousal")


def read_events_json(path) -> list[RespiratoryEvent]:
    path = _require(Path(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a JSON array of events")
    events = []
    for i, item in enumerate(doc):
        missing = [f for f in _EVENT_FIELDS if f not in item]
        if missing:
            raise ParseError(f"{path}: event {i}: missing field(s) {', '.join(missing)}")
        try:
            events.append(RespiratoryEvent(
                kind=item["kind"], start_s=float(item["start_s"]),
                duration_s=float(item["duration_s"]),
                flow_reduction_pct=float(item["flow_reduction_pct"]),
                desat_pct=float(item["desat_pct"]), arousal=bool(item["arousal"]),
            ))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: event {i}: {exc}") from None
    return events


_NUMERIC_CLINICAL = ("age", "bmi", "sbp", "dbp", "weight_kg", "height_cm")


def parse_clinical(doc: Mapping, source="clinical record") -> ClinicalFeatures:
    """Validate a clinical mapping; incomplete records are rejected."""
    missing = [name for name in ClinicalFeatures.field_names()
               if name not in doc or doc[name] is None or doc[name] == ""]
    if missing:
        raise MissingClinicalFieldError(missing)
    kwargs = dict((k, doc[k]) for k in ClinicalFeatures.field_names())
    try:
        for name in _NUMERIC_CLINICAL:
            kwargs[name] = float(kwargs[name])
        for name in ("smoker", "hypertension"):
            value = kwargs[name]
            if isinstance(value, str):
                value = value.strip().lower() in ("1", "true", "yes")
            kwargs[name] = bool(value)
        return ClinicalFeatures(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{source}: {exc}") from None


def read_clinical_json(path) -> ClinicalFeatures:
    path = _require(Path(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    return parse_clinical(doc, source=str(path))


def load_study_bundle(path) -> SleepStudy:
    """Load one study directory."""
    path = Path(path)
    if not path.is_dir():
        raise MissingFileError(f"study bundle directory not found: {path}")
    signal = read_signal_csv(path / SIGNAL_FILE)
    events = read_events_json(path / EVENTS_FILE)
    clinical = read_clinical_json(path / CLINICAL_FILE)
    meta_path = _require(path / META_FILE)
    try:
        meta = json.loads(meta_path.read_text())
        study_id = str(meta["id"])
        tst = float(meta["total_sleep_time_h"])
        ahi = float(meta["reference_ahi"])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{meta_path}: line {exc.lineno}: {exc.msg}") from None
    except KeyError as exc:
        raise ParseError(f"{meta_path}: missing field {exc.args[0]}") from None
    extra = {k: v for k, v in meta.items()
             if k not in ("id", "total_sleep_time_h", "reference_ahi")}
    try:
        return SleepStudy(study_id, signal, events, clinical, tst, ahi, extra)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_study_bundle(study: SleepStudy, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_signal_csv(study.signal, path / SIGNAL_FILE)
    (path / EVENTS_FILE).write_text(
        json.dumps([e.to_dict() for e in study.events], indent=1))
    (path / CLINICAL_FILE).write_text(json.dumps(study.clinical.to_dict(), indent=1))
    meta = {"id": study.id, "total_sleep_time_h": study.total_sleep_time_h,
            "reference_ahi": study.reference_ahi}
    meta.update(study.meta)
    (path / META_FILE).write_text(json.dumps(meta, indent=1, sort_keys=True))
    return path


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".15g")
    return str(value)


def save_table(rows: Iterable[Mapping], path, columns=None) -> Path:
    """Write records sharing one schema as CSV with a header row.

    Floats use 15 significant digits. An empty ``rows`` writes only the
    header, which then comes from ``columns`` (possibly empty).
    """
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    columns = list(columns)
    for i, row in enumerate(rows):
        if list(row.keys()) != columns:
            raise ValueError(f"row {i} does not match the table schema {columns}")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row[c]) for c in columns) + "\n")
    return path


def read_table(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def iter_bundle_dirs(root) -> list[Path]:
    """Study bundle directories under ``root`` (or ``root`` itself), sorted."""
    root = Path(root)
    if (root / META_FILE).exists():
        return [root]
    dirs = sorted(p.parent for p in root.glob(f"*/{META_FILE}"))
    if not dirs:
        raise MissingFileError(f"no study bundles found under {root}")
    return dirs
