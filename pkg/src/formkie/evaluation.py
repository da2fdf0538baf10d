"""Precision / recall / F1 scoring and the stage-ablation harness."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from formkie.assignment import KeyValue, KieTemplate
from formkie.errors import FormKieError
from formkie.ocr import OcrDocument
from formkie.pipeline import PipelineConfig, extract
from formkie.synth import GroundTruth

VARIANTS = {
    "full": dict(align=True, scale=True),
    "no_align": dict(align=False, scale=True),
    "no_scale": dict(align=True, scale=False),
}


class TemplateMismatch(FormKieError):
    pass


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class Metrics:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_json(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }


def score_extraction(truth: GroundTruth, output: Sequence[KeyValue]) -> Metrics:
    """Count hits per template entry.

    A filled entry extracted with exactly its true text is a TP. A wrong
    non-null value is both an FP and an FN; a null on a filled entry is an
    FN; any value on an unfilled entry is an FP.
    """
    if len(truth.entries) != len(output):
        raise TemplateMismatch(f"{len(truth.entries)} truth entries vs {len(output)} extracted")
    tp = fp = fn = 0
    for t, kv in zip(truth.entries, output):
        if t.key != kv.key:
            raise TemplateMismatch(f"key {t.key!r} vs {kv.key!r}")
        if t.filled:
            if kv.value == t.value:
                tp += 1
            elif kv.value is None:
                fn += 1
            else:
                fp += 1
                fn += 1
        elif kv.value is not None:
            fp += 1
    return Metrics(tp, fp, fn)


def pooled(metrics: Iterable[Metrics]) -> Metrics:
    total = Metrics()
    for m in metrics:
        total = total + m
    return total


@dataclass(frozen=True)
class Sample:
    template: KieTemplate
    doc: OcrDocument
    truth: GroundTruth


def _score_one(args) -> tuple[str, Metrics]:
    sample, cfg = args
    result = extract(sample.template, sample.doc, cfg)
    return sample.truth.class_label, score_extraction(sample.truth, result.fields)


def evaluate(dataset: Sequence[Sample], cfg: PipelineConfig | None = None, jobs: int = 1) -> dict[str, Metrics]:
    """Per-class pooled counts, keyed in first-seen class order."""
    cfg = cfg or PipelineConfig()
    work = [(s, cfg) for s in dataset]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_score_one, work, chunksize=4))
    else:
        results = [_score_one(w) for w in work]
    per_class: dict[str, Metrics] = {}
    for label, m in results:
        per_class[label] = per_class.get(label, Metrics()) + m
    return per_class


def run_ablation(
    dataset: Sequence[Sample],
    variants: Sequence[str] = tuple(VARIANTS),
    cfg: PipelineConfig | None = None,
    jobs: int = 1,
) -> dict[str, dict[str, Metrics]]:
    """Evaluate the same data with named stages switched off."""
    cfg = cfg or PipelineConfig()
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variant(s): {', '.join(unknown)}")
    return {v: evaluate(dataset, cfg.with_stages(**VARIANTS[v]), jobs) for v in variants}


def format_table(per_class: Mapping[str, Metrics], title: str = "") -> str:
    """Aligned text table: one row per class plus a pooled mean row."""
    lines = []
    if title:
        lines.append(title)
    width = max([len("Document"), len("Mean")] + [len(k) for k in per_class])
    head = f"{'Document':<{width}}  {'Precision':<22}{'Recall':<22}{'F1':<6}"
    lines.append(head)
    lines.append("-" * len(head))
    for label, m in per_class.items():
        p = f"{m.precision:.3f} ({m.tp}/{m.tp + m.fp})"
        r = f"{m.recall:.3f} ({m.tp}/{m.tp + m.fn})"
        lines.append(f"{label:<{width}}  {p:<22}{r:<22}{m.f1:.3f}")
    lines.append("-" * len(head))
    total = pooled(per_class.values())
    lines.append(f"{'Mean':<{width}}  {total.precision:<22.3f}{total.recall:<22.3f}{total.f1:.3f}")
    return "\n".join(lines)
