"""End-to-end runs and the concept-quality experiments built on them.

Every experiment takes a :class:`PipelineContext` (cohorts split, preprocessed,
oracle concepts computed and concept predictions from a trained network) so
the expensive network training happens once and the regressor-level arms
reuse it. Arms draw their randomness from ``(seed, arm id)`` streams.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .concepts import compute_concepts
from .core import CONCEPT_NAMES, RATE_CONCEPTS, SleepStudy
from .metrics import (BLAND_ALTMAN_Z, agreement_report, classification_report,
                      pearson, permutation_pvalue, spearman)
from .preprocess import OximetryPreprocessor, PreprocessConfig
from .regressor import (CLINICAL_FEATURE_NAMES, ClinicalEncoder, MLPAHIRegressor,
                        RegressorConfig, fuse, fused_feature_names, severity_array)
from .slam import (SlamConfig, SlamRegressor, concept_error_table, minute_features,
                   RidgeConceptRegressor)
from .synth import SynthConfig, generate_cohort

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("f1", "precision", "sensitivity", "specificity", "icc", "r2", "mae", "rmse")
DEFAULT_SWEEP = tuple(range(5, 101, 5))
DEFAULT_TAUS = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 1000.0)


def default_ood_cohorts() -> list[dict]:
    """Two shifted cohorts standing in for external test sets."""
    return [
        {"name": "ood_older", "synth": {"n_studies": 100, "seed": 1001, "age_mean": 72.0,
                                        "severity_mix": [0.15, 0.25, 0.3, 0.3]}},
        {"name": "ood_noisy", "synth": {"n_studies": 100, "seed": 1002, "noise_sd": 0.6,
                                        "artifact_prob": 0.25}},
    ]


@dataclass
class ExperimentConfig:
    """Everything an experiment run depends on.

    ``cohort`` and each entry of ``ood_cohorts`` is ``{"name", "path"}`` (a
    directory of study bundles) or ``{"name", "synth": {...SynthConfig}}``.
    """

    cohort: dict = field(default_factory=lambda: {"name": "in_distribution",
                                                  "synth": {"n_studies": 615, "seed": 42}})
    ood_cohorts: list = field(default_factory=default_ood_cohorts)
    fractions: tuple = (0.65, 0.25, 0.10)
    seed: int = 42
    slam: SlamConfig = field(default_factory=lambda: SlamConfig(epochs=20))
    regressor: RegressorConfig = field(default_factory=RegressorConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    sweep_grid: tuple = DEFAULT_SWEEP
    intervention_taus: tuple = DEFAULT_TAUS
    importance_repeats: int = 10
    bootstrap_n: int = 1000
    n_permutations: int = 10_000
    ridge_alpha: float = 1.0

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3 or min(self.fractions) <= 0:
            raise ValueError("fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        self.sweep_grid = tuple(float(p) for p in self.sweep_grid)
        if any(not 0 < p <= 100 for p in self.sweep_grid):
            raise ValueError("sweep percentages must be in (0, 100]")
        self.intervention_taus = tuple(float(t) for t in self.intervention_taus)
        if any(t < 0 for t in self.intervention_taus):
            raise ValueError("intervention thresholds must be >= 0")
        for spec in [self.cohort, *self.ood_cohorts]:
            _check_cohort_spec(spec)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "slam" in doc:
            doc["slam"] = SlamConfig(**doc["slam"])
        if "regressor" in doc:
            doc["regressor"] = RegressorConfig(**doc["regressor"])
        if "preprocess" in doc:
            doc["preprocess"] = PreprocessConfig(**doc["preprocess"])
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slam"] = self.slam.to_dict()
        for key in ("fractions", "sweep_grid", "intervention_taus"):
            d[key] = list(d[key])
        return d

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same cohorts, new experiment seed (regressor and arm streams)."""
        return replace(self, seed=seed, regressor=replace(self.regressor, seed=seed))


def _check_cohort_spec(spec):
    if not isinstance(spec, dict) or "name" not in spec:
        raise ValueError("cohort spec needs a 'name'")
    if ("path" in spec) == ("synth" in spec):
        raise ValueError(f"cohort {spec['name']!r} needs exactly one of 'path' or 'synth'")
    if "synth" in spec:
        SynthConfig.from_dict(spec["synth"])


def load_cohort(spec: dict) -> list[SleepStudy]:
    if "path" in spec:
        return [io.load_study_bundle(p) for p in io.iter_bundle_dirs(spec["path"])]
    return generate_cohort(SynthConfig.from_dict(spec["synth"]))


# data preparation ---------------------------------------------------------------

@dataclass
class CohortData:
    """A set of studies with everything the models consume."""

    name: str
    ids: list
    X: np.ndarray          # preprocessed signals (n, d)
    C: np.ndarray          # oracle concepts (n, 10)
    clinical: np.ndarray   # encoded clinical features (n, 14)
    ahi: np.ndarray        # reference AHI (n,)
    bmi: np.ndarray

    def __len__(self):
        return len(self.ids)

    def subset(self, idx, name=None) -> "CohortData":
        idx = np.asarray(idx, dtype=int)
        return CohortData(name or self.name, [self.ids[i] for i in idx], self.X[idx],
                          self.C[idx], self.clinical[idx], self.ahi[idx], self.bmi[idx])


def oracle_concept_matrix(studies) -> np.ndarray:
    return np.array([compute_concepts(s.events, s.signal, s.total_sleep_time_h).to_array()
                     for s in studies]).reshape(-1, len(CONCEPT_NAMES))


def prepare_cohort(studies, name: str, preprocess: PreprocessConfig) -> CohortData:
    if not studies:
        raise ValueError(f"cohort {name!r} is empty")
    pre = OximetryPreprocessor(preprocess.target_len, preprocess.savgol_window,
                               preprocess.savgol_order)
    return CohortData(
        name=name, ids=[s.id for s in studies],
        X=pre.fit_transform([s.signal for s in studies]),
        C=oracle_concept_matrix(studies),
        clinical=ClinicalEncoder().fit_transform([s.clinical for s in studies]),
        ahi=np.array([s.reference_ahi for s in studies]),
        bmi=np.array([s.clinical.bmi for s in studies]))


def split_indices(n: int, fractions, seed: int):
    """Seeded permutation cut into contiguous train/val/test index blocks."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(f"split of {n} items by {fractions} leaves an empty part")
    order = np.random.default_rng(seed).permutation(n)
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split_cohort(studies, fractions=(0.65, 0.25, 0.10), seed: int = 42):
    """Split a sequence into (train, val, test) lists."""
    tr, va, te = split_indices(len(studies), fractions, seed)
    return ([studies[i] for i in tr], [studies[i] for i in va], [studies[i] for i in te])


@dataclass
class PipelineContext:
    config: ExperimentConfig
    train: CohortData
    val: CohortData
    test: CohortData
    ood: dict
    slam: SlamRegressor
    predicted: dict = field(default_factory=dict)   # cohort name -> (n, 10)

    def cohorts(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test, **self.ood}


def build_context(config: ExperimentConfig, slam: SlamRegressor | None = None,
                  studies=None) -> PipelineContext:
    """Load/generate cohorts, split, preprocess, and train (or reuse) the network."""
    studies = load_cohort(config.cohort) if studies is None else studies
    data = prepare_cohort(studies, config.cohort["name"], config.preprocess)
    tr, va, te = split_indices(len(data), config.fractions, config.seed)
    train, val, test = (data.subset(tr, "train"), data.subset(va, "val"),
                        data.subset(te, "test"))
    ood = {spec["name"]: prepare_cohort(load_cohort(spec), spec["name"], config.preprocess)
           for spec in config.ood_cohorts}
    if slam is None:
        logger.info("training concept network on %d studies", len(train))
        slam = SlamRegressor.from_config(config.slam).fit(train.X, train.C, val.X, val.C)
    ctx = PipelineContext(config, train, val, test, ood, slam)
    for name, cohort in ctx.cohorts().items():
        ctx.predicted[name] = slam.predict(cohort.X)
    return ctx


# evaluation ---------------------------------------------------------------------

def metric_row(y_ref, y_pred, bootstrap_n: int, seed: int) -> dict:
    agreement = agreement_report(y_ref, y_pred)
    cls = classification_report(severity_array(y_ref), severity_array(y_pred),
                                bootstrap_n=bootstrap_n, seed=seed)
    return {"f1": cls.scores["f1"], "precision": cls.scores["precision"],
            "sensitivity": cls.scores["sensitivity"],
            "specificity": cls.scores["specificity"], "icc": agreement.icc,
            "r2": agreement.r2, "mae": agreement.mae, "rmse": agreement.rmse}


def write_evaluation(y_ref, y_pred, out_dir, ids=None, bootstrap_n=1000, seed=42) -> dict:
    """The standard evaluation CSVs for one cohort; returns the summary row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    y_ref = np.asarray(y_ref, float)
    y_pred = np.asarray(y_pred, float)
    ids = list(ids) if ids is not None else [str(i) for i in range(y_ref.size)]
    agreement = agreement_report(y_ref, y_pred)
    ref_cls, pred_cls = severity_array(y_ref), severity_array(y_pred)
    cls = classification_report(ref_cls, pred_cls, bootstrap_n=bootstrap_n, seed=seed)
    io.save_table([agreement.as_row()], out_dir / "agreement.csv")
    io.save_table(cls.rows(), out_dir / "classification.csv")
    io.save_table(cls.per_class_rows(), out_dir / "classification_per_class.csv")
    labels = ["Normal", "Mild", "Moderate", "Severe"]
    io.save_table([{"reference": labels[i], **{labels[j]: int(cls.confusion[i, j])
                                              for j in range(4)}} for i in range(4)],
                  out_dir / "confusion.csv")
    io.save_table([{"id": i, "mean": (a + b) / 2, "diff": b - a}
                   for i, a, b in zip(ids, y_ref, y_pred)],
                  out_dir / "bland_altman_points.csv", columns=("id", "mean", "diff"))
    io.save_table([{"id": i, "ref": a, "pred": b, "severity": labels[c]}
                   for i, a, b, c in zip(ids, y_ref, y_pred, ref_cls)],
                  out_dir / "parity_points.csv", columns=("id", "ref", "pred", "severity"))
    return metric_row(y_ref, y_pred, bootstrap_n, seed)


def fit_regressor(config: ExperimentConfig, X_train, y_train, X_val, y_val,
                  seed: int | None = None) -> MLPAHIRegressor:
    reg_cfg = config.regressor if seed is None else replace(config.regressor, seed=seed)
    return MLPAHIRegressor.from_config(reg_cfg).fit(X_train, y_train, X_val, y_val)


def concept_arm(ctx: PipelineContext, train_concepts: np.ndarray) -> tuple[MLPAHIRegressor, dict]:
    """Train the regressor on ``train_concepts`` + clinical; evaluate on the
    network-predicted test concepts (deployment setting)."""
    cfg = ctx.config
    model = fit_regressor(cfg, fuse(train_concepts, ctx.train.clinical), ctx.train.ahi,
                          fuse(ctx.predicted["val"], ctx.val.clinical), ctx.val.ahi)
    pred = model.predict(fuse(ctx.predicted["test"], ctx.test.clinical))
    return model, metric_row(ctx.test.ahi, pred, cfg.bootstrap_n, cfg.seed)


@dataclass
class PipelineResult:
    context: PipelineContext
    regressor: MLPAHIRegressor
    predictions: dict        # cohort name -> predicted AHI
    summary: list            # one metric row per evaluated cohort
    concept_errors: list     # per-concept network / mean / ridge errors on test


def run_pipeline(config: ExperimentConfig, out_dir=None,
                 context: PipelineContext | None = None) -> PipelineResult:
    """Network concepts + clinical -> AHI, evaluated on test and OOD cohorts."""
    ctx = context or build_context(config)
    reg, _ = concept_arm(ctx, ctx.predicted["train"])
    predictions, summary = {}, []
    eval_names = ["test", *ctx.ood]
    for name in eval_names:
        cohort = ctx.cohorts()[name]
        pred = reg.predict(fuse(ctx.predicted[name], cohort.clinical))
        predictions[name] = pred
        if out_dir is not None:
            row = write_evaluation(cohort.ahi, pred, Path(out_dir) / name, cohort.ids,
                                   config.bootstrap_n, config.seed)
            io.save_table([{"id": i, "pred_ahi": p, "reference_ahi": a}
                           for i, a, p in zip(cohort.ids, cohort.ahi, pred)],
                          Path(out_dir) / name / "predictions.csv")
        else:
            row = metric_row(cohort.ahi, pred, config.bootstrap_n, config.seed)
        summary.append({"cohort": name, "n": len(cohort), **row})
    errors = concept_errors(ctx)
    if out_dir is not None:
        io.save_table(summary, Path(out_dir) / "summary.csv")
        io.save_table(errors, Path(out_dir) / "concept_errors.csv")
    return PipelineResult(ctx, reg, predictions, summary, errors)


def concept_errors(ctx: PipelineContext) -> list[dict]:
    """Test-set concept MAE for the network, the training-mean predictor and ridge."""
    test = ctx.test
    net = concept_error_table(test.C, ctx.predicted["test"])
    mean = concept_error_table(test.C, np.broadcast_to(ctx.train.C.mean(axis=0), test.C.shape))
    ridge = RidgeConceptRegressor(ctx.config.ridge_alpha).fit(
        minute_features(ctx.train.X), ctx.train.C)
    ridge_rows = concept_error_table(test.C, ridge.predict(minute_features(test.X)))
    rows = []
    for a, b, c in zip(net, mean, ridge_rows):
        rows.append({"concept": a["concept"], "slam_mae": a["mae"], "slam_rmse": a["rmse"],
                     "mean_mae": b["mae"], "ridge_mae": c["mae"], "ridge_rmse": c["rmse"],
                     "reduction_vs_mean": 1.0 - a["mae"] / b["mae"] if b["mae"] > 0 else 0.0})
    return rows


def rdi_order_violations(concepts: np.ndarray) -> float:
    """Fraction of rows breaking rdi0p >= rdi2p >= rdi3p >= rdi4p (diagnostic)."""
    j = [CONCEPT_NAMES.index(n) for n in ("rdi0p", "rdi2p", "rdi3p", "rdi4p")]
    r = np.asarray(concepts)[:, j]
    return float(np.mean(np.any(np.diff(r, axis=1) > 0, axis=1)))


# concept-quality ablations ------------------------------------------------------

def _arm_rng(seed: int, arm: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 7919, int(arm)])


def random_concepts(C_train: np.ndarray, n: int, rng) -> np.ndarray:
    """Uniform draws within each concept's observed training range."""
    lo, hi = C_train.min(axis=0), C_train.max(axis=0)
    return rng.uniform(lo, hi, size=(n, C_train.shape[1]))


def mixed_concepts(C_train: np.ndarray, fraction_correct: float, rng) -> np.ndarray:
    """Oracle concepts for a random ``fraction_correct`` of rows, random elsewhere."""
    n = C_train.shape[0]
    out = random_concepts(C_train, n, rng)
    n_correct = int(round(fraction_correct * n))
    keep = rng.permutation(n)[:n_correct]
    out[keep] = C_train[keep]
    return out


def corruption_ablation(ctx: PipelineContext, out_dir=None) -> list[dict]:
    """Regressor trained on random / 5%-correct / correct / shuffled concepts."""
    cfg = ctx.config
    C = ctx.train.C
    arms = [
        ("incorrect", lambda rng: random_concepts(C, C.shape[0], rng)),
        ("incorrect+5%correct", lambda rng: mixed_concepts(C, 0.05, rng)),
        ("correct", lambda rng: C.copy()),
        ("shuffled", lambda rng: C[rng.permutation(C.shape[0])]),
    ]
    rows = []
    for arm_id, (name, make) in enumerate(arms):
        _, row = concept_arm(ctx, make(_arm_rng(cfg.seed, arm_id)))
        rows.append({"arm": name, **row})
    if out_dir is not None:
        io.save_table(rows, _mk(out_dir) / "corruption_ablation.csv")
    return rows


def proportion_sweep(ctx: PipelineContext, out_dir=None) -> list[dict]:
    cfg = ctx.config
    rows = []
    for p in cfg.sweep_grid:
        rng = _arm_rng(cfg.seed, 1000 + int(round(p * 100)))
        concepts = ctx.train.C.copy() if p == 100 else mixed_concepts(ctx.train.C, p / 100, rng)
        _, row = concept_arm(ctx, concepts)
        rows.append({"p": p, **row})
    if out_dir is not None:
        io.save_table(rows, _mk(out_dir) / "proportion_sweep.csv",
                      columns=("p", *METRIC_COLUMNS))
    return rows


def intervention_study(ctx: PipelineContext, out_dir=None) -> list[dict]:
    """Replace training concept vectors whose ahi_a0h4 error exceeds tau."""
    cfg = ctx.config
    pred, oracle = ctx.predicted["train"], ctx.train.C
    err = np.abs(pred[:, 0] - oracle[:, 0])
    rows = []
    for tau in cfg.intervention_taus:
        hit = err > tau
        concepts = np.where(hit[:, None], oracle, pred)
        _, m = concept_arm(ctx, concepts)
        rows.append({"tau": tau, "fraction_intercepted": float(hit.mean()),
                     "f1": m["f1"], "mae": m["mae"], "rmse": m["rmse"]})
    if out_dir is not None:
        io.save_table(rows, _mk(out_dir) / "intervention.csv")
    return rows


def fusion_baselines(ctx: PipelineContext, out_dir=None) -> list[dict]:
    """Concept-bottleneck pipeline against feature- and decision-level fusion."""
    cfg = ctx.config
    tr, va, te = ctx.train, ctx.val, ctx.test
    _, cbm = concept_arm(ctx, ctx.predicted["train"])

    sig = {name: minute_features(d.X) for name, d in (("tr", tr), ("va", va), ("te", te))}
    feat = fit_regressor(cfg, np.hstack([sig["tr"], tr.clinical]), tr.ahi,
                         np.hstack([sig["va"], va.clinical]), va.ahi)
    feat_pred = feat.predict(np.hstack([sig["te"], te.clinical]))

    sig_model = fit_regressor(cfg, sig["tr"], tr.ahi, sig["va"], va.ahi)
    clin_model = fit_regressor(cfg, tr.clinical, tr.ahi, va.clinical, va.ahi)
    decision_pred = decision_level_average(sig_model.predict(sig["te"]),
                                           clin_model.predict(te.clinical))
    rows = [
        {"method": "concept_bottleneck", **cbm},
        {"method": "feature_level", **metric_row(te.ahi, feat_pred, cfg.bootstrap_n, cfg.seed)},
        {"method": "decision_level",
         **metric_row(te.ahi, decision_pred, cfg.bootstrap_n, cfg.seed)},
    ]
    if out_dir is not None:
        io.save_table(rows, _mk(out_dir) / "fusion_baselines.csv")
    return rows


def decision_level_average(pred_a, pred_b) -> np.ndarray:
    return (np.asarray(pred_a, float) + np.asarray(pred_b, float)) / 2.0


def permutation_importance(model, X, y, feature_names, groups=None, repeats: int = 10,
                           seed: int = 42) -> list[dict]:
    """Mean increase in MAE after permuting each column, sorted descending."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[1] != len(feature_names):
        raise ValueError("feature_names must match the number of columns")
    base = np.mean(np.abs(model.predict(X) - y))
    rng = np.random.default_rng(seed)
    rows = []
    for j, name in enumerate(feature_names):
        deltas = np.empty(repeats)
        Xp = X.copy()
        for r in range(repeats):
            Xp[:, j] = X[rng.permutation(X.shape[0]), j]
            deltas[r] = np.mean(np.abs(model.predict(Xp) - y)) - base
        rows.append({"feature": name, "group": groups[j] if groups else "",
                     "importance": float(deltas.mean()), "std": float(deltas.std())})
    rows.sort(key=lambda r: (-r["importance"], r["feature"]))
    return rows


def pipeline_importance(ctx: PipelineContext, out_dir=None,
                        regressor: MLPAHIRegressor | None = None) -> list[dict]:
    """Permutation importance of the fused features on the test split."""
    cfg = ctx.config
    reg = regressor or concept_arm(ctx, ctx.predicted["train"])[0]
    groups = ["concept"] * len(CONCEPT_NAMES) + ["clinical"] * len(CLINICAL_FEATURE_NAMES)
    rows = permutation_importance(reg, fuse(ctx.predicted["test"], ctx.test.clinical),
                                  ctx.test.ahi, fused_feature_names(), groups,
                                  cfg.importance_repeats, cfg.seed)
    if out_dir is not None:
        io.save_table(rows, _mk(out_dir) / "importance.csv")
    return rows


BMI_CLASSES = (("Normal", 0.0, 25.0), ("Overweight", 25.0, 30.0), ("Obese", 30.0, np.inf))


def bmi_class(bmi: float) -> str:
    for name, lo, hi in BMI_CLASSES:
        if lo <= bmi < hi:
            return name
    raise ValueError(f"invalid BMI {bmi}")


def bmi_stratified_report(ref_ahi, pred_ahi, bmi, bootstrap_n: int = 1000,
                          n_permutations: int = 10_000, seed: int = 42):
    """Per-BMI-class AHI summary plus BMI-AHI correlations.

    Returns ``(class_rows, correlation_rows)``. Classes with fewer than two
    subjects report ``n/a``.
    """
    ref_ahi = np.asarray(ref_ahi, float)
    pred_ahi = np.asarray(pred_ahi, float)
    bmi = np.asarray(bmi, float)
    if not (ref_ahi.shape == pred_ahi.shape == bmi.shape):
        raise ValueError("ref_ahi, pred_ahi and bmi must have equal lengths")
    if np.any(~np.isfinite(bmi)):
        raise ValueError("BMI must be present for every subject")
    labels = np.array([bmi_class(b) for b in bmi])
    class_rows = []
    for name, _, _ in BMI_CLASSES:
        sel = labels == name
        n = int(sel.sum())
        if n < 2:
            class_rows.append({"bmi_class": name, "n": n, "mean_ahi": "n/a", "sd_ahi": "n/a",
                               "f1": "n/a", "f1_ci_low": "n/a", "f1_ci_high": "n/a"})
            continue
        rep = classification_report(severity_array(ref_ahi[sel]), severity_array(pred_ahi[sel]),
                                    bootstrap_n=bootstrap_n, seed=seed)
        lo, hi = rep.ci["f1"]
        class_rows.append({"bmi_class": name, "n": n, "mean_ahi": float(ref_ahi[sel].mean()),
                           "sd_ahi": float(ref_ahi[sel].std(ddof=1)), "f1": rep.scores["f1"],
                           "f1_ci_low": lo, "f1_ci_high": hi})
    corr_rows = []
    for name, stat in (("pearson", pearson), ("spearman", spearman)):
        corr_rows.append({"statistic": name, "value": stat(bmi, ref_ahi),
                          "p_value": permutation_pvalue(bmi, ref_ahi, stat, n_permutations, seed)})
    return class_rows, corr_rows


def pipeline_bmi_report(ctx: PipelineContext, test_pred, out_dir=None):
    cfg = ctx.config
    classes, corr = bmi_stratified_report(ctx.test.ahi, test_pred, ctx.test.bmi,
                                          cfg.bootstrap_n, cfg.n_permutations, cfg.seed)
    if out_dir is not None:
        io.save_table(classes, _mk(out_dir) / "bmi_classes.csv")
        io.save_table(corr, _mk(out_dir) / "bmi_correlation.csv")
    return classes, corr


def _mk(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


__all__ = [
    "BLAND_ALTMAN_Z", "CohortData", "ExperimentConfig", "METRIC_COLUMNS", "PipelineContext",
    "PipelineResult", "RATE_CONCEPTS", "bmi_stratified_report", "build_context",
    "concept_arm", "concept_errors", "corruption_ablation", "decision_level_average",
    "fusion_baselines", "intervention_study", "load_cohort", "metric_row",
    "permutation_importance", "pipeline_bmi_report", "pipeline_importance",
    "prepare_cohort", "proportion_sweep", "random_concepts", "rdi_order_violations",
    "run_pipeline", "split_cohort", "split_indices", "write_evaluation",
]
