"""Word and character error rates and benchmark score aggregation.

Words are maximal runs of non-whitespace characters (``str.split()``); no
punctuation stripping or Unicode normalization is applied.  Characters are
code points, so a combining diacritic counts as one character and a space
counts as one too.  Rates are not clipped and may exceed 1.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

CLUSTERS = ("HWR", "OCR")


class MetricError(ValueError):
    """Precondition failure in a metric computation."""


@dataclass(frozen=True)
class EditCounts:
    S: int
    D: int
    I: int
    C: int
    N: int

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    @property
    def hyp_len(self) -> int:
        return self.S + self.I + self.C


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j - 1] + (r != h), prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[-1]


def levenshtein_align(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Unit-cost minimal alignment counts.

    On backtrace ties a substitution (or match) is preferred over an
    insertion, and an insertion over a deletion.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(
                d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]),
                d[i][j - 1] + 1,
                d[i - 1][j] + 1,
            )
    S = D = I = C = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                C += 1
            else:
                S += 1
            i, j = i - 1, j - 1
        elif j > 0 and d[i][j] == d[i][j - 1] + 1:
            I += 1
            j -= 1
        else:
            D += 1
            i -= 1
    return EditCounts(S, D, I, C, n)


def words(text: str) -> list[str]:
    return text.split()


def wer(ref: str, hyp: str) -> float:
    r = words(ref)
    if not r:
        raise MetricError("reference has no words")
    return levenshtein_align(r, words(hyp)).errors / len(r)


def cer(ref: str, hyp: str) -> float:
    if not ref:
        raise MetricError("reference is empty")
    return levenshtein_align(list(ref), list(hyp)).errors / len(ref)


def corpus_rate(pairs: Iterable[tuple[str, str]], unit: str = "word") -> float:
    """Total edits over total reference length (the concatenated-corpus alternative)."""
    split = words if unit == "word" else list
    errs = total = 0
    for ref, hyp in pairs:
        r = split(ref)
        errs += levenshtein_align(r, split(hyp)).errors
        total += len(r)
    if total == 0:
        raise MetricError("empty reference corpus")
    return errs / total


# ----------------------------------------------------------------- reports
@dataclass
class DatasetResult:
    name: str
    cluster: str
    wer: float
    cer: float
    samples: int


@dataclass
class BenchmarkReport:
    """Percentages; a score is ``None`` when its cluster has no datasets."""

    datasets: list[DatasetResult] = field(default_factory=list)
    hwr_score: float | None = None
    ocr_score: float | None = None
    midad_score: float | None = None

    def to_dict(self) -> dict:
        return {
            "datasets": [asdict(d) for d in self.datasets],
            "hwr_score": self.hwr_score,
            "ocr_score": self.ocr_score,
            "midad_score": self.midad_score,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        return cls(
            [DatasetResult(**x) for x in d["datasets"]],
            d.get("hwr_score"),
            d.get("ocr_score"),
            d.get("midad_score"),
        )

    def to_text(self) -> str:
        rows = [("cluster", "dataset", "samples", "WER%", "CER%")]
        for cl in CLUSTERS:
            for r in self.datasets:
                if r.cluster == cl:
                    rows.append((cl, r.name, str(r.samples), f"{r.wer:.2f}", f"{r.cer:.2f}"))
        for label, val in (("HWR score", self.hwr_score), ("OCR score", self.ocr_score), ("MIDAD score", self.midad_score)):
            rows.append(("Overall", label, "", "-" if val is None else f"{val:.2f}", ""))
        return format_table(rows)


def format_table(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs)


def aggregate(entries: Iterable) -> BenchmarkReport:
    """Unweighted cluster means and the all-dataset MIDAD mean.

    ``entries`` holds :class:`DatasetResult` objects or ``(name, cluster, wer)``
    tuples with WER in percent.  The MIDAD score averages every dataset
    directly; it is not the mean of the two cluster scores.
    """
    results = []
    for e in entries:
        if isinstance(e, DatasetResult):
            results.append(e)
        else:
            name, cluster, w = e[:3]
            results.append(DatasetResult(name, cluster, float(w), float(e[3]) if len(e) > 3 else 0.0, 0))
    if not results:
        raise MetricError("no datasets to aggregate")
    for r in results:
        if r.cluster not in CLUSTERS:
            raise MetricError(f"dataset {r.name!r} has unknown cluster {r.cluster!r}")
    hwr = [r.wer for r in results if r.cluster == "HWR"]
    ocr = [r.wer for r in results if r.cluster == "OCR"]
    return BenchmarkReport(
        datasets=results,
        hwr_score=_mean(hwr) if hwr else None,
        ocr_score=_mean(ocr) if ocr else None,
        midad_score=_mean([r.wer for r in results]),
    )


def cluster_score(report: BenchmarkReport, cluster: str) -> float:
    """Score of a cluster the caller expects to be present."""
    val = report.hwr_score if cluster == "HWR" else report.ocr_score if cluster == "OCR" else None
    if val is None:
        raise MetricError(f"no datasets in cluster {cluster!r}")
    return val
