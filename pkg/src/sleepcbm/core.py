"""Domain types shared across the package."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields

import numpy as np

SAMPLE_RATE_HZ = 1
SIGNAL_LENGTH = 25_200
VALID_SPO2_RANGE = (50.0, 100.0)

CONCEPT_NAMES = (
    "ahi_a0h4", "ahi_a0h4a", "ahi_c0h3", "ahi_c0h4",
    "avgsat", "minsat",
    "rdi0p", "rdi2p", "rdi3p", "rdi4p",
)
RATE_CONCEPTS = tuple(n for n in CONCEPT_NAMES if n not in ("avgsat", "minsat"))
SATURATION_CONCEPTS = ("avgsat", "minsat")


class EventKind(str, enum.Enum):
    OBSTRUCTIVE_APNEA = "ObstructiveApnea"
    CENTRAL_APNEA = "CentralApnea"
    HYPOPNEA = "Hypopnea"
    DESATURATION = "Desaturation"
    ARTIFACT = "Artifact"

    @property
    def is_apnea(self) -> bool:
        return self in (EventKind.OBSTRUCTIVE_APNEA, EventKind.CENTRAL_APNEA)


class Ethnicity(str, enum.Enum):
    NON_HISPANIC = "NonHispanic"
    HISPANIC = "Hispanic"


class Race(str, enum.Enum):
    WHITE = "White"
    BLACK = "Black"
    OTHER = "Other"


class Gender(str, enum.Enum):
    MALE = "Male"
    FEMALE = "Female"


class SeverityClass(enum.IntEnum):
    """OSA severity; integer values follow clinical order."""

    NORMAL = 0
    MILD = 1
    MODERATE = 2
    SEVERE = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> "SeverityClass":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown severity class {label!r}") from None


@dataclass(frozen=True, eq=False)
class OximetrySignal:
    """SpO2 samples at 1 Hz with a per-sample validity mask."""

    samples: np.ndarray
    validity: np.ndarray | None = None
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise ValueError("only 1 Hz signals are supported")
        if self.validity is None:
            validity = np.isfinite(samples)
        else:
            validity = np.asarray(self.validity, dtype=bool)
            if validity.shape != samples.shape:
                raise ValueError("validity mask must match samples")
        samples.setflags(write=False)
        validity = validity.copy()
        validity.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "validity", validity)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @classmethod
    def from_values(cls, values, valid_range=VALID_SPO2_RANGE) -> "OximetrySignal":
        """Build a signal marking non-finite or out-of-range values invalid."""
        values = np.asarray(values, dtype=float)
        lo, hi = valid_range
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(values) & (values >= lo) & (values <= hi)
        return cls(values, valid)


@dataclass(frozen=True)
class RespiratoryEvent:
    kind: EventKind
    start_s: float
    duration_s: float
    flow_reduction_pct: float = 0.0
    desat_pct: float = 0.0
    arousal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if self.start_s < 0:
            raise ValueError("start_s must be >= 0")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        if not 0 <= self.flow_reduction_pct <= 100:
            raise ValueError("flow_reduction_pct must be in [0, 100]")
        if self.desat_pct < 0:
            raise ValueError("desat_pct must be >= 0")

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "start_s": self.start_s,
                "duration_s": self.duration_s,
                "flow_reduction_pct": self.flow_reduction_pct,
                "desat_pct": self.desat_pct, "arousal": self.arousal}


@dataclass(frozen=True)
class ConceptVector:
    """The ten sleep metrics, in fixed order (see ``CONCEPT_NAMES``)."""

    ahi_a0h4: float
    ahi_a0h4a: float
    ahi_c0h3: float
    ahi_c0h4: float
    avgsat: float
    minsat: float
    rdi0p: float
    rdi2p: float
    rdi3p: float
    rdi4p: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in CONCEPT_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ConceptVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(CONCEPT_NAMES),):
            raise ValueError(f"expected {len(CONCEPT_NAMES)} values, got {values.shape}")
        return cls(*map(float, values))

    def as_dict(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in CONCEPT_NAMES}


@dataclass(frozen=True)
class ClinicalFeatures:
    age: float
    bmi: float
    sbp: float
    dbp: float
    weight_kg: float
    height_cm: float
    smoker: bool
    hypertension: bool
    ethnicity: Ethnicity
    race: Race
    gender: Gender

    def __post_init__(self):
        object.__setattr__(self, "ethnicity", Ethnicity(self.ethnicity))
        object.__setattr__(self, "race", Race(self.race))
        object.__setattr__(self, "gender", Gender(self.gender))
        for name in ("age", "bmi", "sbp", "dbp", "weight_kg", "height_cm"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"clinical field {name!r} must be finite")
        if self.bmi <= 0:
            raise ValueError("bmi must be > 0")

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def to_dict(self) -> dict:
        out = {}
        for name in self.field_names():
            value = getattr(self, name)
            out[name] = value.value if isinstance(value, enum.Enum) else value
        return out


@dataclass(frozen=True, eq=False)
class SleepStudy:
    id: str
    signal: OximetrySignal
    events: tuple[RespiratoryEvent, ...]
    clinical: ClinicalFeatures
    total_sleep_time_h: float
    reference_ahi: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.total_sleep_time_h > 0:
            raise ValueError("total_sleep_time_h must be > 0")
        if self.total_sleep_time_h > self.signal.duration_s / 3600 + 1e-9:
            raise ValueError("total_sleep_time_h exceeds the recording duration")
        if self.reference_ahi < 0:
            raise ValueError("reference_ahi must be >= 0")
        for ev in self.events:
            if ev.end_s > self.signal.duration_s + 1e-9:
                raise ValueError(f"event at {ev.start_s}s runs past the recording end")

    @property
    def severity(self) -> SeverityClass:
        return severity(self.reference_ahi)


SEVERITY_THRESHOLDS = (5.0, 15.0, 30.0)


def severity(ahi: float) -> SeverityClass:
    """Normal (<5), Mild [5, 15), Moderate [15, 30), Severe (>=30)."""
    ahi = float(ahi)
    if not ahi >= 0:
        raise ValueError(f"AHI must be a non-negative number, got {ahi}")
    return SeverityClass(sum(ahi >= t for t in SEVERITY_THRESHOLDS))
