"""Synthetic sleep studies with known event ground truth.

Each study draws a severity class, a target event rate inside that class,
and a list of non-overlapping respiratory events. Apneas and hypopneas
imprint a desaturation on a slowly drifting SpO2 baseline: a 10 s linear
descent, a plateau lasting the event duration, then exponential recovery.
The reference AHI is always recomputed from the generated events.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .concepts import reference_ahi
from .core import (ClinicalFeatures, EventKind, Ethnicity, Gender,
                   OximetrySignal, Race, RespiratoryEvent, SeverityClass,
                   SleepStudy)
from .io import save_study_bundle, save_table

logger = logging.getLogger(__name__)

DESCENT_S = 10.0
RECOVERY_TAU_S = 15.0
MIN_GAP_S = 15.0
LEAD_IN_S = 180.0  # event-free sleep-onset period at the start of each record

DEFAULT_RATE_RANGES = ((0.5, 5.0), (5.0, 15.0), (15.0, 30.0), (30.0, 55.0))
_CLASS_BOUNDS = ((0.0, 5.0), (5.0, 15.0), (15.0, 30.0), (30.0, np.inf))
# mean BMI per severity class (Normal, Mild, Moderate, Severe)
_BMI_MEANS = (25.5, 28.0, 29.0, 32.0)


class GenerationError(RuntimeError):
    pass


@dataclass
class SynthConfig:
    n_studies: int = 100
    duration_s: int = 25_200
    severity_mix: tuple = (0.25, 0.25, 0.25, 0.25)
    event_rate_ranges: tuple = DEFAULT_RATE_RANGES
    baseline_spo2_range: tuple = (93.0, 98.0)
    noise_sd: float = 0.3
    artifact_prob: float = 0.1
    bmi_coupling: bool = True
    age_mean: float = 63.0
    seed: int = 42

    def __post_init__(self):
        self.severity_mix = tuple(float(p) for p in self.severity_mix)
        self.event_rate_ranges = tuple(tuple(map(float, r)) for r in self.event_rate_ranges)
        self.baseline_spo2_range = tuple(map(float, self.baseline_spo2_range))
        if len(self.severity_mix) != 4 or min(self.severity_mix) < 0:
            raise ValueError("severity_mix needs four non-negative probabilities")
        if abs(sum(self.severity_mix) - 1.0) > 1e-9:
            raise ValueError("severity_mix must sum to 1")
        if len(self.event_rate_ranges) != 4:
            raise ValueError("event_rate_ranges needs one range per severity class")
        for (lo, hi), (blo, bhi) in zip(self.event_rate_ranges, _CLASS_BOUNDS):
            if not (blo <= lo < hi <= bhi):
                raise ValueError(f"rate range ({lo}, {hi}) is outside class bounds ({blo}, {bhi})")
        if self.n_studies < 0 or self.duration_s <= 0:
            raise ValueError("n_studies must be >= 0 and duration_s > 0")
        if not 0 <= self.artifact_prob <= 1:
            raise ValueError("artifact_prob must be in [0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GeneratedStudy:
    """A study plus generator-side truth that is not part of the bundle."""

    study: SleepStudy
    severity: SeverityClass
    clean_signal: np.ndarray
    imprint_spans: list = field(default_factory=list)


def study_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def desaturation_profile(depth: float, duration_s: float, n: int) -> np.ndarray:
    """Dip shape (positive = drop) on ``t = 0..n-1`` seconds after onset."""
    t = np.arange(n, dtype=float)
    plateau_end = DESCENT_S + duration_s
    prof = np.where(t < DESCENT_S, depth * t / DESCENT_S, depth)
    rec = t >= plateau_end
    prof[rec] = depth * np.exp(-(t[rec] - plateau_end) / RECOVERY_TAU_S)
    return prof


def imprint_events(events, baseline: np.ndarray) -> tuple[np.ndarray, list]:
    """Clean signal: baseline minus the deepest overlapping dip at each second.

    Returns the signal and the ``(start, stop)`` sample span of each imprint
    (descent + plateau + two recovery time constants).
    """
    n = baseline.size
    drop = np.zeros(n)
    spans = []
    for ev in events:
        if not (ev.kind.is_apnea or ev.kind is EventKind.HYPOPNEA) or ev.desat_pct <= 0:
            continue
        start = int(round(ev.start_s))
        length = int(DESCENT_S + ev.duration_s + 6 * RECOVERY_TAU_S)
        stop = min(n, start + length)
        prof = desaturation_profile(ev.desat_pct, ev.duration_s, stop - start)
        np.maximum(drop[start:stop], prof, out=drop[start:stop])
        span_end = min(n, int(start + DESCENT_S + ev.duration_s + 2 * RECOVERY_TAU_S))
        spans.append((start, span_end))
    return baseline - drop, spans


def _draw_events(rng, n_scored: int, n_extra: int, duration_s: float):
    """Scored (ahi_a0h4-counting) events plus extra non-counting hypopneas,
    placed without overlap in random order."""
    specs = []
    for _ in range(n_scored):
        if rng.random() < 0.55:
            kind = (EventKind.CENTRAL_APNEA if rng.random() < 0.2
                    else EventKind.OBSTRUCTIVE_APNEA)
            specs.append(dict(kind=kind, duration_s=float(rng.integers(10, 31)),
                              flow_reduction_pct=100.0,
                              desat_pct=round(float(rng.uniform(2.5, 10.0)), 1),
                              arousal=bool(rng.random() < 0.5)))
        else:
            specs.append(dict(kind=EventKind.HYPOPNEA,
                              duration_s=float(rng.integers(10, 31)),
                              flow_reduction_pct=round(float(rng.uniform(31, 90)), 1),
                              desat_pct=round(float(rng.uniform(4.0, 9.0)), 1),
                              arousal=bool(rng.random() < 0.4)))
    for _ in range(n_extra):
        specs.append(dict(kind=EventKind.HYPOPNEA,
                          duration_s=float(rng.integers(10, 26)),
                          flow_reduction_pct=round(float(rng.uniform(31, 80)), 1),
                          desat_pct=round(float(rng.uniform(1.0, 3.9)), 1),
                          arousal=bool(rng.random() < 0.4)))
    order = rng.permutation(len(specs))
    specs = [specs[i] for i in order]
    footprints = np.array([DESCENT_S + s["duration_s"] + MIN_GAP_S for s in specs])
    slack = duration_s - LEAD_IN_S - footprints.sum() - DESCENT_S - 2 * RECOVERY_TAU_S
    if slack < 0:
        raise GenerationError(
            f"{len(specs)} events cannot fit in {duration_s:.0f} s without overlap")
    offsets = np.sort(rng.uniform(0.0, slack, len(specs)))
    events = []
    cursor = LEAD_IN_S
    for spec, fp, off in zip(specs, footprints, offsets):
        start = float(np.floor(cursor + off))
        events.append(RespiratoryEvent(start_s=start, **spec))
        cursor += fp
    return events


def _draw_clinical(rng, severity: SeverityClass, coupled: bool, age_mean: float) -> ClinicalFeatures:
    gender = Gender.MALE if rng.random() < 0.45 + 0.05 * int(severity) else Gender.FEMALE
    age = float(np.clip(rng.normal(age_mean + 2.0 * int(severity), 10.0), 40, 90))
    bmi_mean = _BMI_MEANS[int(severity)] if coupled else float(np.mean(_BMI_MEANS))
    bmi = float(np.clip(rng.normal(bmi_mean, 3.5), 17.0, 50.0))
    height = float(rng.normal(176.0 if gender is Gender.MALE else 162.0, 7.0))
    weight = bmi * (height / 100.0) ** 2
    sbp = float(rng.normal(118.0 + 0.4 * (age - 60) + 0.5 * (bmi - 28), 14.0))
    dbp = float(rng.normal(72.0 + 0.3 * (bmi - 28), 9.0))
    hyp_logit = -1.0 + 0.05 * (age - 63) + 0.08 * (bmi - 28)
    u = rng.random(4)
    return ClinicalFeatures(
        age=round(age, 1), bmi=round(bmi, 2), sbp=round(sbp, 1), dbp=round(dbp, 1),
        weight_kg=round(weight, 1), height_cm=round(height, 1),
        smoker=bool(u[0] < 0.1),
        hypertension=bool(u[1] < 1.0 / (1.0 + np.exp(-hyp_logit))),
        ethnicity=Ethnicity.HISPANIC if u[2] < 0.05 else Ethnicity.NON_HISPANIC,
        race=Race.WHITE if u[3] < 0.8 else (Race.BLACK if u[3] < 0.92 else Race.OTHER),
        gender=gender,
    )


def generate_study(config: SynthConfig, index: int) -> GeneratedStudy:
    """Deterministic study ``index`` of the cohort described by ``config``."""
    if not 0 <= index < config.n_studies:
        raise IndexError(f"index {index} outside [0, {config.n_studies})")
    rng = study_rng(config.seed, index)
    duration = float(config.duration_s)
    severity = SeverityClass(int(rng.choice(4, p=config.severity_mix)))
    lo, hi = config.event_rate_ranges[severity]
    tst_h = duration / 3600.0 * float(rng.uniform(0.9, 1.0))
    target = float(rng.uniform(lo, hi))
    n_scored = int(np.floor(target * tst_h))
    # keep the realised rate inside the sampled range
    while n_scored / tst_h < lo:
        n_scored += 1
    while n_scored > 0 and n_scored / tst_h >= hi:
        n_scored -= 1
    n_extra = int(rng.poisson(0.3 * n_scored + 1.0))
    events = _draw_events(rng, n_scored, n_extra, duration)

    n = int(config.duration_s)
    t = np.arange(n)
    b_lo, b_hi = config.baseline_spo2_range
    level = float(rng.uniform(b_lo, b_hi))
    period = float(rng.uniform(3600, 10800))
    phase = float(rng.uniform(0, 2 * np.pi))
    baseline = level + 0.3 * np.sin(2 * np.pi * t / period + phase)
    clean, spans = imprint_events(events, baseline)
    noisy = clean + rng.normal(0.0, config.noise_sd, n)
    noisy = np.clip(noisy, 0.0, 100.0)

    if rng.random() < config.artifact_prob:
        for _ in range(int(rng.integers(1, 4))):
            length = int(rng.integers(30, 121))
            start = int(rng.integers(0, n - length))
            noisy[start:start + length] = rng.uniform(20.0, 45.0, length)
            events.append(RespiratoryEvent(EventKind.ARTIFACT, float(start), float(length)))
    events.sort(key=lambda e: (e.start_s, e.kind.value))
    noisy = np.round(noisy, 3)

    signal = OximetrySignal.from_values(noisy)
    clinical = _draw_clinical(rng, severity, config.bmi_coupling, config.age_mean)
    ahi = reference_ahi(events, tst_h)
    study = SleepStudy(
        id=f"s{config.seed}_{index:05d}", signal=signal, events=events,
        clinical=clinical, total_sleep_time_h=tst_h, reference_ahi=ahi,
        meta={"severity": severity.label},
    )
    return GeneratedStudy(study, severity, clean, spans)


def generate_cohort(config: SynthConfig, out_dir=None) -> list[SleepStudy]:
    """Generate all studies; with ``out_dir`` also write bundles + manifest.csv."""
    studies = []
    for i in range(config.n_studies):
        studies.append(generate_study(config, i).study)
    if out_dir is not None:
        write_cohort(studies, out_dir)
    return studies


MANIFEST_COLUMNS = ("id", "severity", "reference_ahi", "bmi", "age")


def write_cohort(studies, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for study in studies:
        save_study_bundle(study, out_dir / study.id)
        rows.append({"id": study.id, "severity": study.severity.label,
                     "reference_ahi": study.reference_ahi,
                     "bmi": study.clinical.bmi, "age": study.clinical.age})
    save_table(rows, out_dir / "manifest.csv", columns=MANIFEST_COLUMNS)
    logger.info("wrote %d study bundles to %s", len(studies), out_dir)
    return out_dir / "manifest.csv"
