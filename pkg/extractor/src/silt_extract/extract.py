"""Dump every hidden state of a frozen multilingual transformer.

For each unique sentence in a corpus.jsonl the extractor tokenizes, runs
the encoder in eval mode with hidden-state output enabled, and stores the
full [H, L, D] stack, where H counts the embedding-layer output plus one
state per transformer layer. Sentences with identical (text, language) are
extracted once; additional ids become manifest aliases of that record.

``init="pretrained"`` loads published weights through the transformers hub
or local cache. ``init="random"`` builds the same architecture with random
weights and a byte-level tokenizer, for offline pipeline and format work.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .storefmt import StoreWriter, read_manifest, scan_store

MODEL_FAMILIES = {
    "mbert": {"hub_id": "bert-base-multilingual-cased", "layers": 12, "width": 768},
    "distilbert": {
        "hub_id": "distilbert-base-multilingual-cased",
        "layers": 6,
        "width": 768,
    },
    "xlmr": {"hub_id": "xlm-roberta-base", "layers": 12, "width": 768},
}


class ExtractError(Exception):
    pass


@dataclass
class ExtractJob:
    model: str
    corpus_path: str
    out_path: str
    max_len: int = 125
    batch_size: int = 16
    init: str = "pretrained"  # or "random"
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self):
        if self.model not in MODEL_FAMILIES:
            raise ExtractError(f"model must be one of {sorted(MODEL_FAMILIES)}")
        if self.max_len < 2:
            raise ExtractError("max_len must be >= 2 (cls plus at least one token)")
        if self.init not in ("pretrained", "random"):
            raise ExtractError(f"init must be 'pretrained' or 'random', got {self.init!r}")


@dataclass
class Sentence:
    sentence_id: str
    lang: str
    text: str


def read_corpus_sentences(path):
    """Unique sentences from corpus.jsonl pair records, in first-seen order."""
    seen = {}
    order = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ExtractError(f"{path}:{line_no}: bad json: {e}") from e
            for id_key, lang_key, text_key in (
                ("premise_id", "premise_lang", "premise_text"),
                ("hypothesis_id", "hypothesis_lang", "hypothesis_text"),
            ):
                sid = row.get(id_key)
                text = row.get(text_key)
                if sid is None or text is None:
                    raise ExtractError(
                        f"{path}:{line_no}: pair record lacks {id_key}/{text_key}"
                    )
                if sid not in seen:
                    seen[sid] = Sentence(sid, row[lang_key], text)
                    order.append(sid)
    return [seen[sid] for sid in order]


class ByteTokenizer:
    """Deterministic byte-level tokenizer for offline (random-init) runs.

    ids: 0=pad, 1=unk, 2=cls, 3=sep, 4..259 = byte values.
    """

    PAD, UNK, CLS, SEP = 0, 1, 2, 3
    vocab_size = 260

    def encode(self, text, max_len):
        body = list(text.encode("utf-8"))[: max_len - 2]
        truncated = len(text.encode("utf-8")) > max_len - 2
        return [self.CLS] + [4 + b for b in body] + [self.SEP], truncated


def _load_pretrained(family):
    from transformers import AutoModel, AutoTokenizer

    hub_id = MODEL_FAMILIES[family]["hub_id"]
    try:
        tokenizer = AutoTokenizer.from_pretrained(hub_id)
        model = AutoModel.from_pretrained(hub_id, output_hidden_states=True)
    except Exception as e:
        raise ExtractError(
            f"cannot load pretrained {hub_id!r} (offline? try --init random): {e}"
        ) from e
    return tokenizer, model, hub_id


def _build_random(family, seed):
    """Family-correct geometry, random weights, byte tokenizer."""
    geom = MODEL_FAMILIES[family]
    torch.manual_seed(seed)
    if family == "distilbert":
        from transformers import DistilBertConfig, DistilBertModel

        config = DistilBertConfig(
            vocab_size=ByteTokenizer.vocab_size,
            n_layers=geom["layers"],
            dim=geom["width"],
            hidden_dim=4 * geom["width"],
            n_heads=12,
            output_hidden_states=True,
        )
        model = DistilBertModel(config)
    elif family == "mbert":
        from transformers import BertConfig, BertModel

        config = BertConfig(
            vocab_size=ByteTokenizer.vocab_size,
            num_hidden_layers=geom["layers"],
            hidden_size=geom["width"],
            intermediate_size=4 * geom["width"],
            num_attention_heads=12,
            output_hidden_states=True,
        )
        model = BertModel(config)
    else:  # xlmr
        from transformers import XLMRobertaConfig, XLMRobertaModel

        config = XLMRobertaConfig(
            vocab_size=ByteTokenizer.vocab_size,
            num_hidden_layers=geom["layers"],
            hidden_size=geom["width"],
            intermediate_size=4 * geom["width"],
            num_attention_heads=12,
            output_hidden_states=True,
        )
        model = XLMRobertaModel(config)
    return ByteTokenizer(), model, f"{family}-random-init"


@dataclass
class ExtractReport:
    model_name: str
    hidden_states: int
    width: int
    sentences: int = 0
    records_written: int = 0
    aliases: int = 0
    truncated: list = field(default_factory=list)


def extract(job: ExtractJob) -> ExtractReport:
    """Populate the output store with one record per unique sentence id."""
    sentences = read_corpus_sentences(job.corpus_path)
    if job.init == "random":
        tokenizer, model, model_name = _build_random(job.model, job.seed)
    else:
        tokenizer, model, model_name = _load_pretrained(job.model)
    geom = MODEL_FAMILIES[job.model]
    h_expected = geom["layers"] + 1
    model.eval()
    model.to(job.device)
    for p in model.parameters():
        p.requires_grad_(False)

    report = ExtractReport(model_name, h_expected, geom["width"], sentences=len(sentences))

    # dedup identical (text, lang); later ids alias the first record
    canonical = {}
    groups = []
    for s in sentences:
        key = (s.text, s.lang)
        if key in canonical:
            canonical[key].append(s.sentence_id)
        else:
            canonical[key] = [s.sentence_id]
            groups.append(s)

    with StoreWriter(job.out_path, model_name, h_expected, geom["width"]) as writer:
        for start in range(0, len(groups), job.batch_size):
            chunk = groups[start : start + job.batch_size]
            stacks = _encode_batch(chunk, tokenizer, model, job, report)
            for sent, stack in zip(chunk, stacks):
                if stack.shape[0] != h_expected or stack.shape[2] != geom["width"]:
                    raise ExtractError(
                        f"model produced H={stack.shape[0]}, D={stack.shape[2]}; "
                        f"expected H={h_expected}, D={geom['width']} for {job.model}"
                    )
                offset = writer.write_record(sent.sentence_id, sent.lang, stack)
                report.records_written += 1
                for alias in canonical[(sent.text, sent.lang)][1:]:
                    writer.add_alias(alias, offset)
                    report.aliases += 1
    return report


def _encode_batch(chunk, tokenizer, model, job, report):
    if isinstance(tokenizer, ByteTokenizer):
        encoded = []
        for s in chunk:
            ids, truncated = tokenizer.encode(s.text, job.max_len)
            if truncated:
                report.truncated.append(s.sentence_id)
            encoded.append(ids)
        lmax = max(len(ids) for ids in encoded)
        input_ids = torch.zeros((len(chunk), lmax), dtype=torch.long)
        attention = torch.zeros((len(chunk), lmax), dtype=torch.long)
        for i, ids in enumerate(encoded):
            input_ids[i, : len(ids)] = torch.tensor(ids)
            attention[i, : len(ids)] = 1
    else:
        batch = tokenizer(
            [s.text for s in chunk],
            padding=True,
            truncation=True,
            max_length=job.max_len,
            return_tensors="pt",
        )
        input_ids = batch["input_ids"]
        attention = batch["attention_mask"]
        for i, s in enumerate(chunk):
            plain = tokenizer([s.text], truncation=False, return_tensors="pt")
            if plain["input_ids"].shape[1] > job.max_len:
                report.truncated.append(s.sentence_id)
    input_ids = input_ids.to(job.device)
    attention = attention.to(job.device)
    with torch.no_grad():
        out = model(input_ids=input_ids, attention_mask=attention, output_hidden_states=True)
    hidden = torch.stack(out.hidden_states, dim=0)  # [H, B, Lmax, D]
    stacks = []
    lengths = attention.sum(dim=1).tolist()
    for i, n in enumerate(lengths):
        stacks.append(hidden[:, i, : int(n), :].cpu().numpy().astype(np.float32))
    return stacks


def verify_store(store_path, corpus_path):
    """Coverage, H/D uniformity and CRC validity; findings, not exceptions."""
    manifest = read_manifest(store_path)
    index = manifest["index"]
    sentences = read_corpus_sentences(corpus_path)
    missing = [s.sentence_id for s in sentences if s.sentence_id not in index]
    h_values = set()
    d_values = set()
    crc_failures = []
    offsets_seen = set()
    for offset, sid, h, l, d, crc_ok in scan_store(store_path):
        offsets_seen.add(offset)
        h_values.add(h)
        d_values.add(d)
        if not crc_ok:
            crc_failures.append(sid)
    dangling = sorted(sid for sid, off in index.items() if off not in offsets_seen)
    return {
        "record_count": len(offsets_seen),
        "index_entries": len(index),
        "missing_ids": missing,
        "dangling_index_entries": dangling,
        "h_values": sorted(h_values),
        "d_values": sorted(d_values),
        "uniform": len(h_values) <= 1 and len(d_values) <= 1,
        "crc_failures": crc_failures,
    }
