import numpy as np
import pytest

from sleepcbm import io
from sleepcbm.concepts import compute_concepts, detect_desaturations, reference_ahi
from sleepcbm.core import EventKind, OximetrySignal, RespiratoryEvent
from sleepcbm.metrics import pearson
from sleepcbm.synth import (GenerationError, SynthConfig, desaturation_profile,
                            generate_cohort, generate_study, write_cohort)


def test_all_normal_mix():
    for s in generate_cohort(SynthConfig(n_studies=8, severity_mix=(1, 0, 0, 0), seed=5)):
        assert s.reference_ahi < 5


def test_all_severe_mix(tmp_path):
    cfg = SynthConfig(n_studies=6, severity_mix=(0, 0, 0, 1), seed=6)
    generate_cohort(cfg, tmp_path)
    rows = io.read_table(tmp_path / "manifest.csv")
    assert all(float(r["reference_ahi"]) >= 30 for r in rows)


def test_same_seed_index_bit_identical():
    cfg = SynthConfig(n_studies=3, seed=9, artifact_prob=0.5)
    a, b = generate_study(cfg, 2).study, generate_study(cfg, 2).study
    assert a.signal.samples.tobytes() == b.signal.samples.tobytes()
    assert a.events == b.events and a.clinical == b.clinical
    assert a.reference_ahi == b.reference_ahi


def test_rate_arithmetic():
    events = [RespiratoryEvent(EventKind.OBSTRUCTIVE_APNEA, 100 * i, 15) for i in range(14)]
    assert reference_ahi(events, 7.0) == 2.0


def test_cohort_bundles_and_manifest(tmp_path):
    studies = generate_cohort(SynthConfig(n_studies=10, seed=1), tmp_path)
    assert len(io.iter_bundle_dirs(tmp_path)) == 10
    rows = io.read_table(tmp_path / "manifest.csv")
    assert len(rows) == 10
    assert list(rows[0]) == ["id", "severity", "reference_ahi", "bmi", "age"]
    assert [r["id"] for r in rows] == [s.id for s in studies]


def test_different_seeds_differ(tmp_path):
    write_cohort(generate_cohort(SynthConfig(n_studies=5, seed=1)), tmp_path / "a")
    write_cohort(generate_cohort(SynthConfig(n_studies=5, seed=2)), tmp_path / "b")
    assert (tmp_path / "a/manifest.csv").read_text() != (tmp_path / "b/manifest.csv").read_text()


def test_reference_ahi_matches_oracle_and_concept_invariants():
    for s in generate_cohort(SynthConfig(n_studies=20, seed=3, artifact_prob=0.5)):
        c = compute_concepts(s.events, s.signal, s.total_sleep_time_h)
        assert abs(c.ahi_a0h4 - s.reference_ahi) <= 1e-9
        assert c.minsat <= c.avgsat <= 100
        assert c.rdi0p >= c.rdi2p >= c.rdi3p >= c.rdi4p >= 0
        assert s.total_sleep_time_h <= s.signal.duration_s / 3600


def test_events_non_overlapping_and_in_bounds():
    for i in range(10):
        s = generate_study(SynthConfig(n_studies=10, seed=4), i).study
        scored = sorted((e for e in s.events if e.kind is not EventKind.ARTIFACT),
                        key=lambda e: e.start_s)
        for a, b in zip(scored, scored[1:]):
            assert a.end_s <= b.start_s
        assert all(e.end_s <= s.signal.duration_s for e in s.events)


def test_artifacts_are_invalid():
    cfg = SynthConfig(n_studies=4, seed=8, artifact_prob=1.0)
    for i in range(4):
        s = generate_study(cfg, i).study
        arts = [e for e in s.events if e.kind is EventKind.ARTIFACT]
        assert arts
        for e in arts:
            assert not s.signal.validity[int(e.start_s):int(e.end_s)].any()


def test_profile_shape():
    p = desaturation_profile(5.0, 20.0, 100)
    assert p[0] == 0 and p[10] == 5.0 and p[29] == 5.0
    assert np.all(np.diff(p[30:]) < 0)
    assert p[30 + 15] == pytest.approx(5.0 * np.exp(-1))


def test_detector_recovers_imprinted_events():
    """Clean signals: >= 95% of imprinted dips of depth >= 4 are detected."""
    cfg = SynthConfig(n_studies=30, seed=21)
    hits = total = 0
    for i in range(cfg.n_studies):
        g = generate_study(cfg, i)
        detected = detect_desaturations(OximetrySignal.from_values(g.clean_signal),
                                        min_drop_pct=2.0, min_duration_s=10)
        spans = dict(g.imprint_spans)
        for ev in g.study.events:
            if ev.kind is EventKind.ARTIFACT or ev.desat_pct < 4:
                continue
            start = int(round(ev.start_s))
            stop = spans[start]
            total += 1
            hits += any(d.start_s < stop and d.end_s > start for d in detected)
    assert total > 100
    assert hits / total >= 0.95


def test_bmi_positively_coupled():
    studies = generate_cohort(SynthConfig(n_studies=200, seed=42))
    r = pearson([s.clinical.bmi for s in studies], [s.reference_ahi for s in studies])
    assert r > 0


def test_infeasible_config():
    rates = ((0.5, 5), (5, 15), (15, 30), (100, 120))
    cfg = SynthConfig(n_studies=1, duration_s=3600, severity_mix=(0, 0, 0, 1),
                      event_rate_ranges=rates)
    with pytest.raises(GenerationError):
        generate_study(cfg, 0)


@pytest.mark.parametrize("kwargs", [
    {"severity_mix": (0.5, 0.5, 0.5, 0)},
    {"event_rate_ranges": ((0, 6), (5, 15), (15, 30), (30, 50))},
    {"artifact_prob": 1.5},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SynthConfig(**kwargs)
