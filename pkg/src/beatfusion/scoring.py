"""Beat-by-beat comparison of test annotations against a reference."""

from __future__ import annotations

from dataclasses import dataclass

from .features import RawAnnotations

DEFAULT_TOL_S = 0.15


@dataclass(frozen=True)
class ScoreReport:
    """Match counts plus sensitivity tp/(tp+fn) and positive predictivity
    tp/(tp+fp); empty denominators score 1.0."""

    tp: int
    fp: int
    fn: int
    sensitivity: float
    positive_predictivity: float


def match_beats(reference: RawAnnotations, test: RawAnnotations,
                tol_s: float = DEFAULT_TOL_S) -> tuple[int, int, int]:
    """Greedy chronological one-to-one matching within ``tol_s`` seconds.

    Each reference beat pairs with at most one test beat; unmatched test
    beats are false positives, unmatched reference beats false negatives.
    Returns (tp, fp, fn).
    """
    if tol_s <= 0.0:
        raise ValueError("tol_s must be > 0")
    if reference.fs != test.fs:
        raise ValueError(
            f"sampling frequencies differ: {reference.fs} vs {test.fs}")
    ref = reference.times()
    tst = test.times()
    i = j = tp = 0
    while i < ref.size and j < tst.size:
        if abs(ref[i] - tst[j]) <= tol_s:
            tp += 1
            i += 1
            j += 1
        elif tst[j] < ref[i]:
            j += 1
        else:
            i += 1
    fp = tst.size - tp
    fn = ref.size - tp
    return tp, int(fp), int(fn)


def score(reference: RawAnnotations, test: RawAnnotations,
          tol_s: float = DEFAULT_TOL_S) -> ScoreReport:
    tp, fp, fn = match_beats(reference, test, tol_s)
    return ScoreReport(
        tp=tp, fp=fp, fn=fn,
        sensitivity=tp / (tp + fn) if tp + fn else 1.0,
        positive_predictivity=tp / (tp + fp) if tp + fp else 1.0,
    )


def aggregate(reports: list[ScoreReport]) -> tuple[float, float]:
    """Unweighted means of sensitivity and positive predictivity."""
    if not reports:
        raise ValueError("no reports to aggregate")
    n = len(reports)
    return (sum(r.sensitivity for r in reports) / n,
            sum(r.positive_predictivity for r in reports) / n)
