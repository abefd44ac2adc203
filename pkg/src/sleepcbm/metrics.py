"""Agreement and classification statistics for AHI estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import SeverityClass

N_CLASSES = len(SeverityClass)
BLAND_ALTMAN_Z = 1.96


def _pair(y, y_hat, min_len):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size < min_len:
        raise ValueError(f"need at least {min_len} pairs, got {y.size}")
    return y, y_hat


def r2(y, y_hat) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    y, y_hat = _pair(y, y_hat, 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("undefined R²: reference values are constant")
    return float(1.0 - np.sum((y - y_hat) ** 2) / ss_tot)


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat, 1)
    return float(np.mean(np.abs(y - y_hat)))


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat, 1)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def anova_mean_squares(ratings: np.ndarray) -> tuple[float, float, float]:
    """Two-way ANOVA mean squares for an ``(n instances, k observers)`` table.

    Returns ``(MS_instances, MS_observers, MS_error)``.
    """
    n, k = ratings.shape
    grand = ratings.mean()
    ss_rows = k * np.sum((ratings.mean(axis=1) - grand) ** 2)
    ss_cols = n * np.sum((ratings.mean(axis=0) - grand) ** 2)
    ss_err = np.sum((ratings - grand) ** 2) - ss_rows - ss_cols
    return (ss_rows / (n - 1), ss_cols / (k - 1),
            max(ss_err, 0.0) / ((n - 1) * (k - 1)))


def icc(y, y_hat) -> float:
    """Intraclass correlation with reference and estimate as two observers.

    ``(MS_1 - MS_w) / (MS_1 + (k-1) MS_w + k/n (MS_i - MS_w))`` with ``k = 2``,
    ``MS_1`` the between-instance, ``MS_i`` the between-observer and ``MS_w``
    the residual mean square.
    """
    y, y_hat = _pair(y, y_hat, 3)
    table = np.column_stack([y, y_hat])
    n, k = table.shape
    ms_1, ms_i, ms_w = anova_mean_squares(table)
    denom = ms_1 + (k - 1) * ms_w + k / n * (ms_i - ms_w)
    if denom == 0:
        raise ValueError("undefined ICC: all ratings are identical")
    return float((ms_1 - ms_w) / denom)


def bland_altman(y, y_hat) -> tuple[float, float, float]:
    """Bias and 95% limits of agreement of ``y_hat - y`` (population sd)."""
    y, y_hat = _pair(y, y_hat, 2)
    d = y_hat - y
    bias = float(d.mean())
    half = BLAND_ALTMAN_Z * float(d.std())
    return bias, bias - half, bias + half


def pearson(x, y) -> float:
    x, y = _pair(x, y, 3)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0:
        raise ValueError("correlation undefined for constant input")
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y, 3)
    return pearson(rankdata(x), rankdata(y))


def permutation_pvalue(x, y, stat=pearson, n_permutations: int = 10_000,
                       seed: int = 42) -> float:
    """Two-sided permutation p-value for a correlation statistic."""
    x, y = _pair(x, y, 3)
    rng = np.random.default_rng(seed)
    observed = abs(stat(x, y))
    hits = 0
    for _ in range(n_permutations):
        if abs(stat(x, rng.permutation(y))) >= observed - 1e-12:
            hits += 1
    return (hits + 1) / (n_permutations + 1)


@dataclass
class AgreementReport:
    r2: float
    icc: float
    mae: float
    rmse: float
    bland_altman: tuple[float, float, float]
    n: int

    def as_row(self) -> dict:
        bias, lo, hi = self.bland_altman
        return {"n": self.n, "r2": self.r2, "icc": self.icc, "mae": self.mae,
                "rmse": self.rmse, "ba_bias": bias, "ba_loa_low": lo,
                "ba_loa_high": hi}


def agreement_report(y, y_hat) -> AgreementReport:
    y, y_hat = _pair(y, y_hat, 3)
    return AgreementReport(r2=r2(y, y_hat), icc=icc(y, y_hat), mae=mae(y, y_hat),
                           rmse=rmse(y, y_hat), bland_altman=bland_altman(y, y_hat),
                           n=int(y.size))


# classification --------------------------------------------------------------

def _codes(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, str):
            lab = SeverityClass.from_label(lab)
        out.append(int(lab))
    codes = np.asarray(out, dtype=int)
    if codes.size and (codes.min() < 0 or codes.max() >= N_CLASSES):
        raise ValueError("severity codes must be in 0..3")
    return codes


def confusion_matrix(ref, pred) -> np.ndarray:
    """4x4 counts, rows = reference class, columns = predicted class."""
    ref, pred = _codes(ref), _codes(pred)
    if ref.shape != pred.shape:
        raise ValueError("length mismatch")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(cm, (ref, pred), 1)
    return cm


def per_class_scores(cm: np.ndarray) -> dict[str, np.ndarray]:
    """One-vs-rest precision, sensitivity, specificity and F1 per class.

    Zero predicted positives give precision 0; a class with no negatives
    (every subject belongs to it) gets specificity 1.
    """
    cm = np.asarray(cm, dtype=float)
    total = cm.sum()
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    fp = predicted - tp
    fn = support - tp
    tn = total - tp - fp - fn
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        sensitivity = np.where(support > 0, tp / support, 0.0)
        specificity = np.where(tn + fp > 0, tn / (tn + fp), 1.0)
        ps = precision + sensitivity
        f1 = np.where(ps > 0, 2 * precision * sensitivity / ps, 0.0)
    return {"precision": precision, "sensitivity": sensitivity,
            "specificity": specificity, "f1": f1, "support": support}


SCORE_NAMES = ("f1", "precision", "sensitivity", "specificity")


def weighted_scores(cm: np.ndarray) -> dict[str, float]:
    """Per-class scores averaged with weights proportional to reference support."""
    per = per_class_scores(cm)
    support = per["support"]
    if support.sum() == 0:
        raise ValueError("empty confusion matrix")
    w = support / support.sum()
    return {name: float(w @ per[name]) for name in SCORE_NAMES}


@dataclass
class ClassificationReport:
    confusion: np.ndarray
    scores: dict[str, float]
    ci: dict[str, tuple[float, float]]
    per_class: dict[str, np.ndarray] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for name in SCORE_NAMES:
            lo, hi = self.ci[name]
            out.append({"metric": name, "value": self.scores[name],
                        "ci_low": lo, "ci_high": hi})
        return out

    def per_class_rows(self) -> list[dict]:
        rows = []
        for c in SeverityClass:
            row = {"class": c.label}
            for name in (*SCORE_NAMES, "support"):
                row[name] = float(self.per_class[name][c])
            rows.append(row)
        return rows


def classification_report(ref, pred, bootstrap_n: int = 1000, seed: int = 42,
                          alpha: float = 0.05) -> ClassificationReport:
    """Weighted severity-classification scores with percentile bootstrap CIs.

    Subjects are resampled with replacement ``bootstrap_n`` times.
    """
    ref, pred = _codes(ref), _codes(pred)
    if ref.size == 0 or ref.shape != pred.shape:
        raise ValueError("need equal-length, non-empty label sequences")
    cm = confusion_matrix(ref, pred)
    scores = weighted_scores(cm)
    rng = np.random.default_rng(seed)
    n = ref.size
    boot = {name: np.empty(bootstrap_n) for name in SCORE_NAMES}
    for b in range(bootstrap_n):
        idx = rng.integers(0, n, n)
        cm_b = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
        np.add.at(cm_b, (ref[idx], pred[idx]), 1)
        for name, value in weighted_scores(cm_b).items():
            boot[name][b] = value
    ci = {}
    for name in SCORE_NAMES:
        if bootstrap_n:
            lo, hi = np.quantile(boot[name], [alpha / 2, 1 - alpha / 2])
            # the percentile interval need not contain the point estimate
            ci[name] = (float(min(lo, scores[name])), float(max(hi, scores[name])))
        else:
            ci[name] = (scores[name], scores[name])
    return ClassificationReport(cm, scores, ci, per_class_scores(cm))
