import numpy as np
import pytest

from silt.corpus import LABELS, PairExample
from silt.model import HeadConfig
from silt.store import EmbeddingRecord, EmbedStore, StoreWriter

# Published SICK label counts per split (one language pair).
SICK_COUNTS = {
    "TRAIN": {"CONTRADICTION": 641, "ENTAILMENT": 1274, "NEUTRAL": 2524},
    "TRIAL": {"CONTRADICTION": 71, "ENTAILMENT": 143, "NEUTRAL": 281},
    "TEST": {"CONTRADICTION": 712, "ENTAILMENT": 1404, "NEUTRAL": 2790},
}

_SICK_HEADER = "pair_ID\tsentence_A\tsentence_B\trelatedness_score\tentailment_label\tSemEval_set\n"


def write_sick_pair_files(dirpath, counts=SICK_COUNTS):
    """Synthetic SICK-format EN/ES files with the given label multisets."""
    en_path = dirpath / "sick_en.txt"
    es_path = dirpath / "sick_es.txt"
    rows_en = [_SICK_HEADER]
    rows_es = [_SICK_HEADER]
    pid = 0
    for split, by_label in counts.items():
        for label, n in by_label.items():
            for _ in range(n):
                pid += 1
                rel = 1.0 + (pid % 9) / 2.0
                rows_en.append(
                    f"{pid}\tan animal {pid} is moving\tthe animal {pid} moves"
                    f"\t{rel}\t{label}\t{split}\n"
                )
                rows_es.append(
                    f"{pid}\tun animal {pid} se mueve\tel animal {pid} se mueve ahora"
                    f"\t{rel}\t{label}\t{split}\n"
                )
    en_path.write_text("".join(rows_en), encoding="utf-8")
    es_path.write_text("".join(rows_es), encoding="utf-8")
    return en_path, es_path


@pytest.fixture(scope="session")
def sick_table1_files(tmp_path_factory):
    return write_sick_pair_files(tmp_path_factory.mktemp("sick_full"))


@pytest.fixture
def tiny_sick_files(tmp_path):
    counts = {
        "TRAIN": {"CONTRADICTION": 2, "ENTAILMENT": 3, "NEUTRAL": 1},
        "TRIAL": {"ENTAILMENT": 1, "NEUTRAL": 1},
        "TEST": {"CONTRADICTION": 1, "NEUTRAL": 2},
    }
    return write_sick_pair_files(tmp_path, counts)


def make_random_record(rng, sentence_id, language="en", h=2, l=None, d=4):
    if l is None:
        l = int(rng.integers(1, 6))
    data = rng.normal(size=(h, l, d)).astype(np.float32)
    return EmbeddingRecord(sentence_id, language, data)


def build_store(path, records, transformer_name="test", h=2, d=4):
    with StoreWriter(str(path), transformer_name, h, d) as w:
        for rec in records:
            w.write_record(rec)
    return str(path)


TINY_HEAD = HeadConfig(dim=8, heads=2, ff_dim=8, dropout=0.0, in_states=2, in_dim=4)

TINY_CONFIG_TEXT = """\
# tiny head over 2x4 fake embeddings
dim = 8
heads = 2
ff_dim = 8
dropout = 0.0
alpha0 = 1e-4
alpha_max = 5e-3
step_size = 25
gamma = 1.0
epochs = 2
batch_size = 8
seed = 3
lcap = 6
"""


def make_cli_project(tmp_path, epochs=None):
    """Corpus.jsonl + matching store + config file for CLI runs."""
    from silt.corpus import expand_language_pairs, load_sick, save_jsonl

    en, es = write_sick_pair_files(
        tmp_path,
        {
            "TRAIN": {"CONTRADICTION": 2, "ENTAILMENT": 2, "NEUTRAL": 2},
            "TRIAL": {"ENTAILMENT": 1, "NEUTRAL": 1},
            "TEST": {"CONTRADICTION": 1, "ENTAILMENT": 1, "NEUTRAL": 1},
        },
    )
    expanded = expand_language_pairs(load_sick(str(en), str(es)))
    corpus_path = tmp_path / "corpus.jsonl"
    save_jsonl(expanded, str(corpus_path))

    rng = np.random.default_rng(99)
    records = []
    seen = set()
    for ex in expanded.examples:
        for sid, lang in ((ex.premise_id, ex.premise_lang), (ex.hypothesis_id, ex.hypothesis_lang)):
            if sid in seen:
                continue
            seen.add(sid)
            l = int(rng.integers(2, 5))
            records.append(
                EmbeddingRecord(
                    sid, lang, rng.normal(size=(2, l, 4)).astype(np.float32)
                )
            )
    store_path = build_store(tmp_path / "store", records, h=2, d=4)

    config_text = TINY_CONFIG_TEXT
    if epochs is not None:
        config_text = config_text.replace("epochs = 2", f"epochs = {epochs}")
    config_path = tmp_path / "silt.cfg"
    config_path.write_text(config_text, encoding="utf-8")
    return {
        "corpus": str(corpus_path),
        "store": store_path,
        "config": str(config_path),
        "sick_en": str(en),
        "sick_es": str(es),
    }


def make_training_setup(tmp_path, n_pairs=8, cfg=TINY_HEAD, seed=0, label_seed=1):
    """Random-embedding pairs with random labels plus a populated store."""
    rng = np.random.default_rng(seed)
    label_rng = np.random.default_rng(label_seed)
    records = []
    examples = []
    for i in range(n_pairs):
        pid = f"p{i}"
        for side in ("A", "B"):
            l = int(rng.integers(2, 5))
            records.append(
                EmbeddingRecord(
                    f"{pid}:{side}:en",
                    "en",
                    rng.normal(size=(cfg.in_states, l, cfg.in_dim)).astype(np.float32),
                )
            )
        label = LABELS[int(label_rng.integers(0, 3))]
        examples.append(
            PairExample(pid, f"{pid}:A:en", f"{pid}:B:en", "en", "en", label, "train")
        )
    store_path = build_store(tmp_path / "trainstore", records, h=cfg.in_states, d=cfg.in_dim)
    return examples, EmbedStore(store_path), cfg
