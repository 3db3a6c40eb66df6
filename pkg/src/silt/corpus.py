"""Ingestion of SICK / MNLI / XNLI sentence-pair files.

Normalizes labels to the three-class set, registers every sentence under
the id ``{pair_id}:{A|B}:{lang}``, expands logical pairs into the four
language combinations, and summarizes counts per (split, language pair,
label) for verification against the published split tables.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, asdict

from .errors import AlignmentError, DataError

LABELS = ("contradiction", "entailment", "neutral")
LANGS = ("en", "es")
SPLITS = ("train", "valid", "test")

# expansion order for the four language combinations of one logical pair
LANG_COMBOS = (("en", "en"), ("en", "es"), ("es", "en"), ("es", "es"))

_SPLIT_ALIASES = {
    "train": "train",
    "trial": "valid",
    "valid": "valid",
    "validation": "valid",
    "dev": "valid",
    "test": "test",
}


def normalize_label(raw, where=""):
    label = str(raw).strip().lower()
    if label not in LABELS:
        raise DataError(f"unknown label {raw!r}{f' at {where}' if where else ''}")
    return label


def label_index(label):
    return LABELS.index(normalize_label(label))


@dataclass
class Sentence:
    sentence_id: str
    lang: str
    text: str


@dataclass
class PairExample:
    pair_id: str
    premise_id: str
    hypothesis_id: str
    premise_lang: str
    hypothesis_lang: str
    label: str
    split: str
    relatedness: float | None = None
    genre: str | None = None
    premise_text: str | None = None
    hypothesis_text: str | None = None

    @property
    def language_pair(self):
        return f"{self.premise_lang.capitalize()}-{self.hypothesis_lang.capitalize()}"


@dataclass
class Corpus:
    examples: list = field(default_factory=list)
    sentences: dict = field(default_factory=dict)
    warnings: dict = field(default_factory=dict)

    def add_sentence(self, sentence_id, lang, text):
        self.sentences[sentence_id] = Sentence(sentence_id, lang, text)

    def warn(self, key, n=1):
        self.warnings[key] = self.warnings.get(key, 0) + n

    def check_split_integrity(self):
        seen = {}
        for ex in self.examples:
            prev = seen.setdefault(ex.pair_id, ex.split)
            if prev != ex.split:
                raise DataError(
                    f"pair {ex.pair_id!r} appears in splits {prev!r} and {ex.split!r}"
                )


@dataclass
class CorpusSummary:
    """Counts per (split, language_pair, label)."""

    counts: dict = field(default_factory=dict)

    def count(self, split, language_pair, label):
        return self.counts.get((split, language_pair, label), 0)

    def total(self):
        return sum(self.counts.values())

    def language_pairs(self):
        return sorted({k[1] for k in self.counts})

    def table(self, split):
        """{label: {language_pair: count}} for one split."""
        out = {}
        for (s, lp, label), n in self.counts.items():
            if s == split:
                out.setdefault(label, {})[lp] = n
        return out


def summarize(examples) -> CorpusSummary:
    summary = CorpusSummary()
    for ex in examples:
        key = (ex.split, ex.language_pair, ex.label)
        summary.counts[key] = summary.counts.get(key, 0) + 1
    return summary


# ---------------------------------------------------------------------------
# TSV plumbing


def _read_tsv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        for i, row in enumerate(reader, start=2):
            yield i, row


def _pick(row, names, path, line, required=True):
    for name in names:
        if name in row and row[name] is not None:
            return row[name]
    if required:
        raise DataError(f"{path}:{line}: none of columns {names} present")
    return None


# ---------------------------------------------------------------------------
# SICK


def load_sick(path_en, path_es=None) -> Corpus:
    """Load SICK (and its row-aligned Spanish counterpart) into canonical
    En-En pairs plus a sentence registry covering both languages."""
    corpus = Corpus()

    es_rows = {}
    if path_es is not None:
        for line, row in _read_tsv(path_es):
            pid = _pick(row, ("pair_ID", "pair_id"), path_es, line).strip()
            es_rows[pid] = (line, row)

    for line, row in _read_tsv(path_en):
        pid = _pick(row, ("pair_ID", "pair_id"), path_en, line).strip()
        label = normalize_label(
            _pick(row, ("entailment_label", "entailment_judgment"), path_en, line),
            where=f"{path_en}:{line} (pair {pid})",
        )
        split_raw = _pick(row, ("SemEval_set", "split"), path_en, line).strip().lower()
        if split_raw not in _SPLIT_ALIASES:
            raise DataError(f"{path_en}:{line}: unknown split {split_raw!r}")
        split = _SPLIT_ALIASES[split_raw]
        relatedness = None
        rel_raw = _pick(row, ("relatedness_score",), path_en, line, required=False)
        if rel_raw not in (None, ""):
            relatedness = float(rel_raw)
            if not 1.0 <= relatedness <= 5.0:
                raise DataError(f"{path_en}:{line}: relatedness {relatedness} outside [1,5]")

        text_a = _pick(row, ("sentence_A",), path_en, line)
        text_b = _pick(row, ("sentence_B",), path_en, line)
        corpus.add_sentence(f"{pid}:A:en", "en", text_a)
        corpus.add_sentence(f"{pid}:B:en", "en", text_b)

        if path_es is not None:
            if pid not in es_rows:
                raise AlignmentError(f"pair {pid!r} has no row in {path_es}")
            es_line, es_row = es_rows[pid]
            corpus.add_sentence(
                f"{pid}:A:es", "es", _pick(es_row, ("sentence_A",), path_es, es_line)
            )
            corpus.add_sentence(
                f"{pid}:B:es", "es", _pick(es_row, ("sentence_B",), path_es, es_line)
            )

        corpus.examples.append(
            PairExample(
                pair_id=pid,
                premise_id=f"{pid}:A:en",
                hypothesis_id=f"{pid}:B:en",
                premise_lang="en",
                hypothesis_lang="en",
                label=label,
                split=split,
                relatedness=relatedness,
                premise_text=text_a,
                hypothesis_text=text_b,
            )
        )
    corpus.check_split_integrity()
    return corpus


# ---------------------------------------------------------------------------
# MNLI + XNLI


def _sentence_cols(row, path, line):
    s1 = _pick(row, ("sentence1", "premise"), path, line)
    s2 = _pick(row, ("sentence2", "hypo", "hypothesis"), path, line)
    return s1, s2


def load_mnli_xnli(mnli_path, mnli_mt_path, xnli_paths) -> Corpus:
    """English train from MNLI, Spanish train from its machine translation
    (row-aligned), valid/test from XNLI filtered to en/es.

    ``xnli_paths`` is one path or a sequence; each file's split is inferred
    from its name (dev -> valid, test -> test). Rows labeled "-" are dropped
    and counted under warnings["dropped_unlabeled"].
    """
    corpus = Corpus()

    mt_rows = []
    if mnli_mt_path is not None:
        mt_rows = [row for _, row in _read_tsv(mnli_mt_path)]

    row_no = -1
    for line, row in _read_tsv(mnli_path):
        row_no += 1
        gold = _pick(row, ("gold_label", "label"), mnli_path, line).strip()
        if gold == "-":
            corpus.warn("dropped_unlabeled")
            continue
        label = normalize_label(gold, where=f"{mnli_path}:{line}")
        pid = (
            _pick(row, ("pairID", "pair_id", "index"), mnli_path, line, required=False) or ""
        ).strip()
        if not pid:
            pid = f"mnli-{row_no}"
        s1, s2 = _sentence_cols(row, mnli_path, line)
        corpus.add_sentence(f"{pid}:A:en", "en", s1)
        corpus.add_sentence(f"{pid}:B:en", "en", s2)
        if row_no < len(mt_rows):
            mt1, mt2 = _sentence_cols(mt_rows[row_no], mnli_mt_path, row_no + 2)
            corpus.add_sentence(f"{pid}:A:es", "es", mt1)
            corpus.add_sentence(f"{pid}:B:es", "es", mt2)
        elif mnli_mt_path is not None:
            corpus.warn("missing_mt_row")
        corpus.examples.append(
            PairExample(
                pair_id=pid,
                premise_id=f"{pid}:A:en",
                hypothesis_id=f"{pid}:B:en",
                premise_lang="en",
                hypothesis_lang="en",
                label=label,
                split="train",
                genre=(row.get("genre") or None),
                premise_text=s1,
                hypothesis_text=s2,
            )
        )

    if isinstance(xnli_paths, (str, bytes)):
        xnli_paths = [xnli_paths]
    for path in xnli_paths or []:
        name = os.path.basename(str(path)).lower()
        if "dev" in name or "valid" in name:
            split = "valid"
        elif "test" in name:
            split = "test"
        else:
            raise DataError(f"cannot infer split (dev/test) from XNLI filename {path!r}")
        groups = {}
        order = []
        for line, row in _read_tsv(path):
            lang = _pick(row, ("language",), path, line).strip().lower()
            if lang not in LANGS:
                continue
            pid = _pick(row, ("pairID", "pair_id", "promptID"), path, line).strip()
            if pid not in groups:
                groups[pid] = {}
                order.append(pid)
            groups[pid][lang] = (line, row)
        for pid in order:
            by_lang = groups[pid]
            if "en" not in by_lang:
                corpus.warn("xnli_missing_en")
                continue
            line, row = by_lang["en"]
            gold = _pick(row, ("gold_label", "label"), path, line).strip()
            if gold == "-":
                corpus.warn("dropped_unlabeled")
                continue
            label = normalize_label(gold, where=f"{path}:{line}")
            s1, s2 = _sentence_cols(row, path, line)
            corpus.add_sentence(f"{pid}:A:en", "en", s1)
            corpus.add_sentence(f"{pid}:B:en", "en", s2)
            if "es" in by_lang:
                es_line, es_row = by_lang["es"]
                e1, e2 = _sentence_cols(es_row, path, es_line)
                corpus.add_sentence(f"{pid}:A:es", "es", e1)
                corpus.add_sentence(f"{pid}:B:es", "es", e2)
            else:
                corpus.warn("xnli_missing_es")
            corpus.examples.append(
                PairExample(
                    pair_id=pid,
                    premise_id=f"{pid}:A:en",
                    hypothesis_id=f"{pid}:B:en",
                    premise_lang="en",
                    hypothesis_lang="en",
                    label=label,
                    split=split,
                    genre=(row.get("genre") or None),
                    premise_text=s1,
                    hypothesis_text=s2,
                )
            )
    corpus.check_split_integrity()
    return corpus


# ---------------------------------------------------------------------------
# expansion


def expand_language_pairs(corpus: Corpus) -> Corpus:
    """Emit each logical pair in every language combination whose sentences
    exist; pairs lacking a translation emit fewer combinations and bump the
    ``incomplete_translation`` warning."""
    out = Corpus(sentences=dict(corpus.sentences), warnings=dict(corpus.warnings))
    for ex in corpus.examples:
        emitted = 0
        for pl, hl in LANG_COMBOS:
            pid_var = f"{ex.pair_id}:A:{pl}"
            hid_var = f"{ex.pair_id}:B:{hl}"
            if pid_var not in corpus.sentences or hid_var not in corpus.sentences:
                continue
            out.examples.append(
                PairExample(
                    pair_id=ex.pair_id,
                    premise_id=pid_var,
                    hypothesis_id=hid_var,
                    premise_lang=pl,
                    hypothesis_lang=hl,
                    label=ex.label,
                    split=ex.split,
                    relatedness=ex.relatedness,
                    genre=ex.genre,
                    premise_text=corpus.sentences[pid_var].text,
                    hypothesis_text=corpus.sentences[hid_var].text,
                )
            )
            emitted += 1
        if emitted < len(LANG_COMBOS):
            out.warn("incomplete_translation")
    out.check_split_integrity()
    return out


# ---------------------------------------------------------------------------
# jsonl persistence


def save_jsonl(corpus: Corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus.examples:
            fh.write(json.dumps(asdict(ex), ensure_ascii=False) + "\n")


def load_jsonl(path) -> Corpus:
    corpus = Corpus()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                ex = PairExample(**json.loads(line))
            except (json.JSONDecodeError, TypeError) as e:
                raise DataError(f"{path}:{line_no}: bad pair record: {e}") from e
            corpus.examples.append(ex)
            if ex.premise_text is not None:
                corpus.add_sentence(ex.premise_id, ex.premise_lang, ex.premise_text)
            if ex.hypothesis_text is not None:
                corpus.add_sentence(ex.hypothesis_id, ex.hypothesis_lang, ex.hypothesis_text)
    return corpus
