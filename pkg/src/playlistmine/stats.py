"""Hypothesis-testing battery for the attribute/feature association analyses.

Two-class attributes use the unpaired (pooled-variance) Student t-test,
multi-class attributes one-way ANOVA; p-values come from the regularized
incomplete beta function evaluated by continued fraction, so no statistics
dependency is needed. Welch's correction is available behind a flag.

All tests run at the user level: each user contributes a single vector, the
element-wise mean of their playlist descriptors, so users with many playlists
do not dominate.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AttributeTask
from .features import FeaturizedCorpus

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05

_LANCZOS_G = 7.0
_LANCZOS_COEFFS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


class StatsError(ValueError):
    """Inputs violate a test's preconditions."""


def log_gamma(x: float) -> float:
    """Natural log of the gamma function (Lanczos approximation, x > 0)."""
    if x <= 0:
        raise StatsError(f"log_gamma requires x > 0, got {x}")
    if x < 0.5:
        # reflection formula keeps the approximation accurate near 0
        return math.log(math.pi / math.sin(math.pi * x)) - log_gamma(1.0 - x)
    x -= 1.0
    acc = _LANCZOS_COEFFS[0]
    for i, c in enumerate(_LANCZOS_COEFFS[1:], start=1):
        acc += c / (x + i)
    t = x + _LANCZOS_G + 0.5
    return 0.5 * math.log(2.0 * math.pi) + (x + 0.5) * math.log(t) - t + math.log(acc)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz scheme)."""
    tiny = 1e-300
    eps = 1e-15
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        # even step
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        # odd step
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise StatsError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the CDF of the Beta(a, b) distribution at x."""
    if a <= 0 or b <= 0:
        raise StatsError(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        log_gamma(a + b) - log_gamma(a) - log_gamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_tailed(t: float, df: float) -> float:
    """Two-tailed p-value of a t statistic with df degrees of freedom."""
    if df <= 0:
        raise StatsError(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t))


def f_sf(f: float, df_num: float, df_den: float) -> float:
    """Upper-tail p-value of an F statistic with (df_num, df_den) dof."""
    if df_num <= 0 or df_den <= 0:
        raise StatsError("degrees of freedom must be positive")
    if f < 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return regularized_incomplete_beta(0.5 * df_den, 0.5 * df_num, df_den / (df_den + df_num * f))


@dataclass(frozen=True)
class TestResult:
    """Outcome of one per-feature hypothesis test."""

    feature: str
    attribute: str
    statistic: float
    p_value: float
    kind: str  # "t" or "anova"
    group_sizes: tuple[int, ...]
    degenerate: bool = False

    def significant(self, alpha: float = DEFAULT_ALPHA) -> bool:
        return self.p_value < alpha


def student_t_test(a: list[float], b: list[float], welch: bool = False) -> tuple[float, float]:
    """Unpaired two-sample t-test; pooled variance by default, Welch optionally.

    Returns (t, two-tailed p). With zero pooled variance the result is
    degenerate: equal means give (0, 1), unequal means give (+/-inf, 0).
    """
    x, y = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    n1, n2 = x.size, y.size
    if n1 < 2 or n2 < 2:
        raise StatsError(f"each sample needs at least 2 values, got {n1} and {n2}")
    m1, m2 = x.mean(), y.mean()
    v1, v2 = x.var(ddof=1), y.var(ddof=1)
    if welch:
        se2 = v1 / n1 + v2 / n2
        if se2 == 0.0:
            return (0.0, 1.0) if m1 == m2 else (math.copysign(math.inf, m1 - m2), 0.0)
        t = (m1 - m2) / math.sqrt(se2)
        df = se2 * se2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    else:
        df = n1 + n2 - 2
        pooled = ((n1 - 1) * v1 + (n2 - 1) * v2) / df
        if pooled == 0.0:
            return (0.0, 1.0) if m1 == m2 else (math.copysign(math.inf, m1 - m2), 0.0)
        t = (m1 - m2) / math.sqrt(pooled * (1.0 / n1 + 1.0 / n2))
    return float(t), t_sf_two_tailed(float(t), float(df))


def one_way_anova(groups: list[list[float]]) -> tuple[float, float]:
    """One-way ANOVA over two or more groups; returns (F, p).

    Zero within-group variance is degenerate: equal group means give (0, 1),
    differing means give (inf, 0).
    """
    if len(groups) < 2:
        raise StatsError("ANOVA needs at least 2 groups")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(arr.size < 2 for arr in arrays):
        raise StatsError("every group needs at least 2 values")
    k = len(arrays)
    n_total = sum(arr.size for arr in arrays)
    grand = sum(arr.sum() for arr in arrays) / n_total
    ssb = sum(arr.size * (arr.mean() - grand) ** 2 for arr in arrays)
    ssw = sum(((arr - arr.mean()) ** 2).sum() for arr in arrays)
    df_b, df_w = k - 1, n_total - k
    if ssw == 0.0:
        return (0.0, 1.0) if ssb == 0.0 else (math.inf, 0.0)
    f = (ssb / df_b) / (ssw / df_w)
    return float(f), f_sf(float(f), float(df_b), float(df_w))


def pearson_r(x: list[float], y: list[float]) -> tuple[float, float]:
    """Pearson correlation with two-tailed p via the t transformation."""
    xs, ys = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if xs.size != ys.size:
        raise StatsError("samples must have equal length")
    n = xs.size
    if n < 3:
        raise StatsError(f"need at least 3 pairs, got {n}")
    xd, yd = xs - xs.mean(), ys - ys.mean()
    sx = math.sqrt(float(xd @ xd))
    sy = math.sqrt(float(yd @ yd))
    if sx == 0.0 or sy == 0.0:
        raise StatsError("correlation undefined for a constant input")
    r = float(xd @ yd) / (sx * sy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt(df / (1.0 - r * r))
    return r, t_sf_two_tailed(t, float(df))


def _test_feature(attribute: str, feature: str, groups: list[list[float]]) -> TestResult:
    sizes = tuple(len(g) for g in groups)
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    # zero within-group variance makes the statistic degenerate (0 or infinite)
    degenerate = sum(((arr - arr.mean()) ** 2).sum() for arr in arrays) == 0.0
    if len(groups) == 2:
        stat, p = student_t_test(groups[0], groups[1])
        kind = "t"
    else:
        stat, p = one_way_anova(groups)
        kind = "anova"
    if degenerate and p == 0.0:
        logger.warning(
            "degenerate %s test for %s/%s: zero within-group variance, unequal means",
            kind, attribute, feature,
        )
    return TestResult(feature, attribute, stat, p, kind, sizes, degenerate)


def _user_groups(
    fc: FeaturizedCorpus, task: AttributeTask
) -> tuple[np.ndarray, list[np.ndarray]] | None:
    """User-level matrix split by class; None when some class has < 2 users."""
    rows_by_class: dict[str, list[np.ndarray]] = {c: [] for c in task.classes}
    for user in fc.users:
        label = user.attributes.get(task.name)
        if label is None or label not in rows_by_class:
            continue
        rows_by_class[label].append(user.mean_vector())
    if any(len(rows) < 2 for rows in rows_by_class.values()):
        return None
    matrix = np.stack([r for c in task.classes for r in rows_by_class[c]])
    groups = []
    start = 0
    for c in task.classes:
        n = len(rows_by_class[c])
        groups.append(matrix[start : start + n])
        start += n
    return matrix, groups


@dataclass(frozen=True)
class SignificanceMatrix:
    """Attribute x feature-family grid of significant-feature ratios."""

    alpha: float
    attributes: tuple[str, ...]
    families: tuple[str, ...]
    ratios: np.ndarray  # shape (attributes, families), entries in [0, 1]
    tests: tuple[TestResult, ...] = field(repr=False, default=())
    skipped: tuple[str, ...] = ()

    def ratio(self, attribute: str, family: str) -> float:
        return float(
            self.ratios[self.attributes.index(attribute), self.families.index(family)]
        )


def benjamini_hochberg(p_values: list[float], alpha: float = DEFAULT_ALPHA) -> list[bool]:
    """Step-up FDR procedure: which hypotheses are rejected at level alpha.

    Optional multiple-comparison control; the default analysis keeps the
    per-test threshold (no correction).
    """
    m = len(p_values)
    if m == 0:
        return []
    order = sorted(range(m), key=lambda i: p_values[i])
    threshold_rank = 0
    for rank, i in enumerate(order, start=1):
        if p_values[i] <= rank * alpha / m:
            threshold_rank = rank
    rejected = [False] * m
    for rank, i in enumerate(order, start=1):
        if rank <= threshold_rank:
            rejected[i] = True
    return rejected


def significance_matrix(
    fc: FeaturizedCorpus,
    tasks: list[AttributeTask],
    alpha: float = DEFAULT_ALPHA,
    fdr_correction: bool = False,
) -> SignificanceMatrix:
    """Run the full per-feature test battery and summarize per feature family.

    For each (task, feature): a t-test when the task has two classes, ANOVA
    otherwise; the matrix entry is the fraction of the family's features with
    p < alpha. Tasks where any class has fewer than 2 labeled users are
    skipped with a warning. ``fdr_correction`` switches to Benjamini-Hochberg
    within each task (off by default: one test, one threshold).
    """
    schema = fc.schema
    families = tuple(schema.families)
    kept_tasks: list[str] = []
    skipped: list[str] = []
    all_tests: list[TestResult] = []
    rows: list[np.ndarray] = []
    for task in tasks:
        prepared = _user_groups(fc, task)
        if prepared is None:
            skipped.append(task.name)
            continue
        _, groups = prepared
        kept_tasks.append(task.name)
        task_tests = [
            _test_feature(task.name, name, [g[:, col].tolist() for g in groups])
            for col, name in enumerate(schema.names)
        ]
        all_tests.extend(task_tests)
        if fdr_correction:
            flags = benjamini_hochberg([t.p_value for t in task_tests], alpha)
        else:
            flags = [t.significant(alpha) for t in task_tests]
        row = np.zeros(len(families))
        for fi, family in enumerate(families):
            start, end = schema.families[family]
            row[fi] = sum(flags[start:end]) / (end - start)
        rows.append(row)
    if not rows:
        raise StatsError(f"every task was skipped (too few users per class): {skipped}")
    return SignificanceMatrix(
        alpha=alpha,
        attributes=tuple(kept_tasks),
        families=families,
        ratios=np.stack(rows),
        tests=tuple(all_tests),
        skipped=tuple(skipped),
    )


@dataclass(frozen=True)
class ClassSummary:
    """Distribution summary of one feature within one attribute class."""

    label: str
    n: int
    mean: float
    std: float
    q1: float
    median: float
    q3: float


@dataclass(frozen=True)
class ClassDistributions:
    """Per-class distribution of one feature, with the associated test."""

    attribute: str
    feature: str
    classes: tuple[ClassSummary, ...]
    test: TestResult


def class_distributions(
    fc: FeaturizedCorpus, task: AttributeTask, feature: str
) -> ClassDistributions | None:
    """Summarize one feature's per-class distributions at the user level.

    Returns None when the task must be skipped (a class with < 2 users).
    Classes are reported in the task's canonical label order.
    """
    prepared = _user_groups(fc, task)
    if prepared is None:
        return None
    _, groups = prepared
    col = fc.schema.index(feature)
    summaries = []
    per_class = []
    for label, grp in zip(task.classes, groups):
        values = grp[:, col]
        per_class.append(values.tolist())
        q1, med, q3 = np.percentile(values, [25, 50, 75])
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        summaries.append(
            ClassSummary(label, int(values.size), float(values.mean()), std, float(q1), float(med), float(q3))
        )
    test = _test_feature(task.name, feature, per_class)
    return ClassDistributions(task.name, feature, tuple(summaries), test)


def write_significance_csv(matrix: SignificanceMatrix, path: str | Path) -> None:
    """Matrix CSV: rows = attributes, columns = feature families."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attribute"] + list(matrix.families))
        for i, attr in enumerate(matrix.attributes):
            writer.writerow([attr] + [repr(float(v)) for v in matrix.ratios[i]])


def write_tests_csv(tests: list[TestResult], path: str | Path) -> None:
    """Per-feature test results CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["attribute", "feature", "kind", "statistic", "p_value", "group_sizes", "degenerate"]
        )
        for t in tests:
            writer.writerow(
                [
                    t.attribute,
                    t.feature,
                    t.kind,
                    repr(t.statistic),
                    repr(t.p_value),
                    " ".join(str(s) for s in t.group_sizes),
                    int(t.degenerate),
                ]
            )
