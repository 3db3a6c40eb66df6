"""Classification metrics and grouped result breakdowns.

Reports accuracy, per-class precision/recall/F1 and macro-F1, overall and
grouped by gold label, language pair, relatedness bucket, genre, or
character-length bucket. F1 is macro-averaged so underrepresented classes
weigh equally.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import LABELS, normalize_label
from .errors import ContractError, DataError, GroupingError

GROUPINGS = ("label", "language_pair", "relatedness", "genre", "length")

# (lower, upper] buckets; the lower edge of the first relatedness bucket is
# closed because scores live in [1, 5].
RELATEDNESS_BUCKETS = ((1.0, 2.0), (2.0, 3.0), (3.0, 4.0), (4.0, 5.0))
LENGTH_BUCKETS = ((0, 125), (125, 250), (250, 375), (375, 500))


@dataclass
class ConfusionMatrix:
    """3x3 counts, rows = gold, columns = predicted."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))

    def add(self, gold, pred):
        self.counts[gold, pred] += 1

    def merge(self, other):
        self.counts += other.counts

    @property
    def total(self):
        return int(self.counts.sum())


def confusion(gold, pred) -> ConfusionMatrix:
    """Build a confusion matrix from parallel lists of labels or indices."""
    if len(gold) != len(pred):
        raise ContractError(f"gold has {len(gold)} entries, pred has {len(pred)}")
    cm = ConfusionMatrix()
    for g, p in zip(gold, pred):
        cm.add(_as_index(g), _as_index(p))
    return cm


def _as_index(value):
    if isinstance(value, str):
        return LABELS.index(normalize_label(value))
    value = int(value)
    if not 0 <= value < len(LABELS):
        raise ContractError(f"class index {value} outside [0, {len(LABELS)})")
    return value


@dataclass
class MetricBlock:
    accuracy: float
    macro_f1: float
    per_class: dict
    count: int
    confusion: list


def metrics(cm: ConfusionMatrix) -> MetricBlock:
    """Accuracy, per-class precision/recall/F1 (0 when undefined), macro-F1."""
    total = cm.total
    if total == 0:
        raise ContractError("metrics undefined for an empty confusion matrix")
    counts = cm.counts
    per_class = {}
    f1s = []
    for i, label in enumerate(LABELS):
        tp = float(counts[i, i])
        col = float(counts[:, i].sum())
        row = float(counts[i, :].sum())
        precision = tp / col if col > 0 else 0.0
        recall = tp / row if row > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class[label] = {"precision": precision, "recall": recall, "f1": f1}
        f1s.append(f1)
    return MetricBlock(
        accuracy=float(np.trace(counts)) / total,
        macro_f1=float(np.mean(f1s)),
        per_class=per_class,
        count=total,
        confusion=counts.tolist(),
    )


# ---------------------------------------------------------------------------
# predictions file


@dataclass
class PredRecord:
    pair_id: str
    language_pair: str
    gold: str
    pred: str
    logits: list


def write_preds(path, preds):
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(asdict(p), ensure_ascii=False) + "\n")


def read_preds(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(PredRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise DataError(f"{path}:{line_no}: bad prediction record: {e}") from e
    return out


# ---------------------------------------------------------------------------
# grouping


def _bucket(value, buckets, closed_bottom):
    lo0 = buckets[0][0]
    for lo, hi in buckets:
        if (value == lo0 and closed_bottom and lo == lo0) or lo < value <= hi:
            return f"({lo:g}, {hi:g}]"
    return None


def _group_key(grouping, ex):
    """Group key for one example, or (None, reason) when metadata is absent."""
    if grouping == "label":
        return ex.label, None
    if grouping == "language_pair":
        return ex.language_pair, None
    if grouping == "relatedness":
        if ex.relatedness is None:
            return None, "no relatedness score"
        return _bucket(ex.relatedness, RELATEDNESS_BUCKETS, closed_bottom=True), None
    if grouping == "genre":
        if not ex.genre:
            return None, "no genre"
        return ex.genre, None
    if grouping == "length":
        if ex.premise_text is None or ex.hypothesis_text is None:
            return None, "no sentence texts"
        n = max(len(ex.premise_text), len(ex.hypothesis_text))
        key = _bucket(n, LENGTH_BUCKETS, closed_bottom=False)
        # sentences beyond the last published bucket keep the partition total
        return key if key is not None else f"({LENGTH_BUCKETS[-1][1]:g}, inf)", None
    raise GroupingError(f"unknown grouping {grouping!r}; valid: {GROUPINGS}")


@dataclass
class EvalReport:
    overall: MetricBlock
    groups: dict
    bucket_definitions: dict

    def to_json(self):
        return json.dumps(
            {
                "overall": asdict(self.overall),
                "groups": {
                    g: {k: asdict(b) for k, b in sub.items()} for g, sub in self.groups.items()
                },
                "bucket_definitions": self.bucket_definitions,
            },
            indent=2,
        )


def grouped_report(examples, preds, groupings) -> EvalReport:
    """Metrics overall and per requested grouping.

    Predictions are matched to examples by (pair_id, language_pair); the
    gold label in each prediction record must agree with the example.
    """
    bad = [g for g in groupings if g not in GROUPINGS]
    if bad:
        raise GroupingError(f"unknown groupings {bad}; valid: {GROUPINGS}")

    by_key = {}
    for p in preds:
        key = (p.pair_id, p.language_pair)
        if key in by_key:
            raise ContractError(f"duplicate prediction for {key}")
        by_key[key] = p

    matched = []
    missing = []
    for ex in examples:
        key = (ex.pair_id, ex.language_pair)
        p = by_key.get(key)
        if p is None:
            missing.append(key)
            continue
        if normalize_label(p.gold) != ex.label:
            raise DataError(
                f"prediction for {key} says gold {p.gold!r}, corpus says {ex.label!r}"
            )
        matched.append((ex, p))
    if missing:
        raise ContractError(f"{len(missing)} examples lack predictions, e.g. {missing[:3]}")

    overall_cm = confusion([ex.label for ex, _ in matched], [p.pred for _, p in matched])
    groups = {}
    for grouping in groupings:
        offenders = []
        partition = {}
        for ex, p in matched:
            key, reason = _group_key(grouping, ex)
            if key is None:
                offenders.append((ex.pair_id, ex.language_pair, reason))
                continue
            partition.setdefault(key, []).append((ex, p))
        if offenders:
            raise GroupingError(
                f"grouping {grouping!r} missing metadata for {len(offenders)} examples, "
                f"e.g. {offenders[:3]}"
            )
        groups[grouping] = {
            key: metrics(confusion([ex.label for ex, _ in items], [p.pred for _, p in items]))
            for key, items in sorted(partition.items(), key=lambda kv: _key_order(grouping, kv[0]))
        }

    return EvalReport(
        overall=metrics(overall_cm),
        groups=groups,
        bucket_definitions={
            "relatedness": [f"({lo:g}, {hi:g}]" for lo, hi in RELATEDNESS_BUCKETS],
            "length": [f"({lo:g}, {hi:g}]" for lo, hi in LENGTH_BUCKETS],
        },
    )


def _key_order(grouping, key):
    if grouping == "label":
        return (LABELS.index(key),)
    if grouping in ("relatedness", "length"):
        return (float(key.split(",")[0][1:]),)
    return (key,)


# ---------------------------------------------------------------------------
# rendering


def render_markdown(report: EvalReport) -> str:
    lines = ["# Evaluation report", ""]
    lines += _block_lines("Overall", report.overall)
    for grouping, sub in report.groups.items():
        lines.append(f"## By {grouping.replace('_', ' ')}")
        lines.append("")
        lines.append("| group | count | accuracy | macro F1 |")
        lines.append("|---|---:|---:|---:|")
        for key, block in sub.items():
            lines.append(
                f"| {key} | {block.count} | {block.accuracy:.4f} | {block.macro_f1:.4f} |"
            )
        lines.append("")
    return "\n".join(lines)


def _block_lines(title, block: MetricBlock):
    lines = [f"## {title}", ""]
    lines.append(f"- examples: {block.count}")
    lines.append(f"- accuracy: {block.accuracy:.4f}")
    lines.append(f"- macro F1: {block.macro_f1:.4f}")
    lines.append("")
    lines.append("| class | precision | recall | F1 |")
    lines.append("|---|---:|---:|---:|")
    for label in LABELS:
        prf = block.per_class[label]
        lines.append(
            f"| {label} | {prf['precision']:.4f} | {prf['recall']:.4f} | {prf['f1']:.4f} |"
        )
    lines.append("")
    return lines


def write_report(report: EvalReport, json_path, md_path):
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(render_markdown(report))
