import numpy as np
import pytest

from silt import evalreport as er
from silt.corpus import LABELS, PairExample
from silt.errors import ContractError, DataError, GroupingError


def test_confusion_perfect_is_diagonal():
    cm = er.confusion(["contradiction", "entailment", "neutral"], [0, 1, 2])
    assert np.array_equal(cm.counts, np.eye(3, dtype=np.int64))


def test_confusion_all_one_class_is_one_column():
    cm = er.confusion([0, 1, 2], [0, 0, 0])
    assert np.array_equal(cm.counts, [[1, 0, 0], [1, 0, 0], [1, 0, 0]])


def test_confusion_empty_is_zero():
    cm = er.confusion([], [])
    assert cm.total == 0
    assert np.array_equal(cm.counts, np.zeros((3, 3)))


def test_confusion_length_mismatch():
    with pytest.raises(ContractError):
        er.confusion([0, 1], [0])


def test_metrics_diagonal_is_perfect():
    block = er.metrics(er.confusion([0, 1, 2, 1], [0, 1, 2, 1]))
    assert block.accuracy == 1.0
    assert block.macro_f1 == 1.0


def test_metrics_degenerate_single_class_prediction():
    block = er.metrics(er.confusion([0, 1, 2], [0, 0, 0]))
    assert block.accuracy == pytest.approx(1 / 3)
    assert block.macro_f1 == pytest.approx(0.16667, abs=1e-5)


def test_metrics_trace_over_total():
    cm = er.ConfusionMatrix(np.array([[2, 0, 0], [1, 1, 0], [0, 1, 1]], dtype=np.int64))
    block = er.metrics(cm)
    assert block.accuracy == pytest.approx(4 / 6)


def test_metrics_empty_is_error():
    with pytest.raises(ContractError):
        er.metrics(er.ConfusionMatrix())


def test_metrics_class_permutation_equivariance():
    rng = np.random.default_rng(0)
    gold = rng.integers(0, 3, size=60)
    pred = rng.integers(0, 3, size=60)
    base = er.metrics(er.confusion(gold, pred))
    perm = [2, 0, 1]
    permuted = er.metrics(er.confusion([perm[g] for g in gold], [perm[p] for p in pred]))
    assert permuted.accuracy == pytest.approx(base.accuracy)
    assert permuted.macro_f1 == pytest.approx(base.macro_f1)
    for i, label in enumerate(LABELS):
        assert permuted.per_class[LABELS[perm[i]]] == pytest.approx(base.per_class[label])


def test_accuracy_never_decreases_with_correct_example():
    rng = np.random.default_rng(1)
    gold = list(rng.integers(0, 3, size=20))
    pred = list(rng.integers(0, 3, size=20))
    before = er.metrics(er.confusion(gold, pred)).accuracy
    after = er.metrics(er.confusion(gold + [1], pred + [1])).accuracy
    assert after >= before


# ---------------------------------------------------------------------------
# the 12-example hand-computed fixture
#
# idx lp     gold pred rel  genre       max-len
#  1  En-En  C    C    1.5  fiction      50
#  2  En-En  E    C    1.8  fiction     100
#  3  En-En  N    C    2.0  travel      120
#  4  En-En  E    E    2.5  fiction     200
#  5  En-En  N    N    3.0  travel      250
#  6  En-En  C    E    3.0  government  130
#  7  Es-Es  C    C    3.5  fiction     300
#  8  Es-Es  E    E    3.7  travel      310
#  9  Es-Es  N    E    4.0  government  375
# 10  Es-Es  N    N    4.5  fiction     400
# 11  Es-Es  E    N    5.0  travel      450
# 12  Es-Es  C    C    4.2  government  500

_ROWS = [
    ("1", "en", "contradiction", "contradiction", 1.5, "fiction", 50),
    ("2", "en", "entailment", "contradiction", 1.8, "fiction", 100),
    ("3", "en", "neutral", "contradiction", 2.0, "travel", 120),
    ("4", "en", "entailment", "entailment", 2.5, "fiction", 200),
    ("5", "en", "neutral", "neutral", 3.0, "travel", 250),
    ("6", "en", "contradiction", "entailment", 3.0, "government", 130),
    ("7", "es", "contradiction", "contradiction", 3.5, "fiction", 300),
    ("8", "es", "entailment", "entailment", 3.7, "travel", 310),
    ("9", "es", "neutral", "entailment", 4.0, "government", 375),
    ("10", "es", "neutral", "neutral", 4.5, "fiction", 400),
    ("11", "es", "entailment", "neutral", 5.0, "travel", 450),
    ("12", "es", "contradiction", "contradiction", 4.2, "government", 500),
]


def twelve_example_fixture():
    examples = []
    preds = []
    for pid, lang, gold, pred, rel, genre, maxlen in _ROWS:
        examples.append(
            PairExample(
                pair_id=pid,
                premise_id=f"{pid}:A:{lang}",
                hypothesis_id=f"{pid}:B:{lang}",
                premise_lang=lang,
                hypothesis_lang=lang,
                label=gold,
                split="test",
                relatedness=rel,
                genre=genre,
                premise_text="x" * maxlen,
                hypothesis_text="y" * (maxlen // 2),
            )
        )
        lp = examples[-1].language_pair
        preds.append(er.PredRecord(pid, lp, gold, pred, [0.0, 0.0, 0.0]))
    return examples, preds


def test_twelve_example_table():
    examples, preds = twelve_example_fixture()
    report = er.grouped_report(
        examples, preds, ["label", "language_pair", "relatedness", "genre", "length"]
    )

    assert report.overall.count == 12
    assert report.overall.accuracy == pytest.approx(7 / 12)
    assert report.overall.macro_f1 == pytest.approx(0.5793651, abs=1e-6)
    assert report.overall.per_class["contradiction"]["f1"] == pytest.approx(2 / 3)
    assert report.overall.per_class["entailment"]["f1"] == pytest.approx(0.5)
    assert report.overall.per_class["neutral"]["f1"] == pytest.approx(4 / 7)

    by_label = report.groups["label"]
    assert by_label["contradiction"].accuracy == pytest.approx(0.75)
    assert by_label["entailment"].accuracy == pytest.approx(0.5)
    assert by_label["neutral"].accuracy == pytest.approx(0.5)
    assert list(by_label) == list(LABELS)

    by_lang = report.groups["language_pair"]
    assert by_lang["En-En"].accuracy == pytest.approx(0.5)
    assert by_lang["En-En"].macro_f1 == pytest.approx(0.5222222, abs=1e-6)
    assert by_lang["Es-Es"].accuracy == pytest.approx(2 / 3)
    assert by_lang["Es-Es"].macro_f1 == pytest.approx(2 / 3)

    by_rel = report.groups["relatedness"]
    assert list(by_rel) == ["(1, 2]", "(2, 3]", "(3, 4]", "(4, 5]"]
    assert by_rel["(1, 2]"].accuracy == pytest.approx(1 / 3)
    assert by_rel["(1, 2]"].macro_f1 == pytest.approx(0.16667, abs=1e-5)
    for key in ("(2, 3]", "(3, 4]", "(4, 5]"):
        assert by_rel[key].accuracy == pytest.approx(2 / 3)
        assert by_rel[key].macro_f1 == pytest.approx(0.5555556, abs=1e-6)

    by_genre = report.groups["genre"]
    assert by_genre["fiction"].accuracy == pytest.approx(0.8)
    assert by_genre["fiction"].macro_f1 == pytest.approx(0.8222222, abs=1e-6)
    assert by_genre["travel"].accuracy == pytest.approx(0.5)
    assert by_genre["travel"].macro_f1 == pytest.approx(0.3888889, abs=1e-6)
    assert by_genre["government"].accuracy == pytest.approx(1 / 3)
    assert by_genre["government"].macro_f1 == pytest.approx(0.2222222, abs=1e-6)

    by_len = report.groups["length"]
    assert list(by_len) == ["(0, 125]", "(125, 250]", "(250, 375]", "(375, 500]"]
    assert by_len["(0, 125]"].accuracy == pytest.approx(1 / 3)
    assert by_len["(0, 125]"].macro_f1 == pytest.approx(0.16667, abs=1e-5)


def test_grouped_counts_partition_total():
    examples, preds = twelve_example_fixture()
    report = er.grouped_report(examples, preds, ["relatedness", "length", "genre"])
    for grouping, sub in report.groups.items():
        assert sum(b.count for b in sub.values()) == report.overall.count
        weighted = sum(b.count * b.accuracy for b in sub.values()) / report.overall.count
        assert weighted == pytest.approx(report.overall.accuracy, abs=1e-9)


def test_single_example_single_group():
    examples, preds = twelve_example_fixture()
    report = er.grouped_report(examples[:1], preds[:1], ["label"])
    assert report.groups["label"]["contradiction"].count == 1


def test_grouping_error_lists_offenders():
    examples, preds = twelve_example_fixture()
    examples[3].relatedness = None
    with pytest.raises(GroupingError) as e:
        er.grouped_report(examples, preds, ["relatedness"])
    assert "4" in str(e.value)


def test_gold_mismatch_between_preds_and_corpus():
    examples, preds = twelve_example_fixture()
    preds[0].gold = "entailment"
    with pytest.raises(DataError):
        er.grouped_report(examples, preds, ["label"])


def test_missing_prediction_is_contract_error():
    examples, preds = twelve_example_fixture()
    with pytest.raises(ContractError):
        er.grouped_report(examples, preds[:-1], ["label"])


def test_unknown_grouping_rejected():
    examples, preds = twelve_example_fixture()
    with pytest.raises(GroupingError):
        er.grouped_report(examples, preds, ["sentiment"])


def test_preds_jsonl_roundtrip(tmp_path):
    _, preds = twelve_example_fixture()
    path = tmp_path / "preds.jsonl"
    er.write_preds(str(path), preds)
    assert er.read_preds(str(path)) == preds


def test_report_files_written(tmp_path):
    examples, preds = twelve_example_fixture()
    report = er.grouped_report(examples, preds, ["label", "language_pair"])
    er.write_report(report, str(tmp_path / "report.json"), str(tmp_path / "report.md"))
    import json

    data = json.loads((tmp_path / "report.json").read_text())
    assert set(data["groups"]) == {"label", "language_pair"}
    md = (tmp_path / "report.md").read_text()
    assert "## By label" in md and "En-En" in md


def test_relatedness_lower_edge_included():
    examples, preds = twelve_example_fixture()
    examples[0].relatedness = 1.0  # exact lower edge of the score range
    report = er.grouped_report(examples, preds, ["relatedness"])
    assert sum(b.count for b in report.groups["relatedness"].values()) == 12


def test_length_overflow_bucket():
    examples, preds = twelve_example_fixture()
    examples[0].premise_text = "x" * 600
    report = er.grouped_report(examples, preds, ["length"])
    assert "(500, inf)" in report.groups["length"]
    assert sum(b.count for b in report.groups["length"].values()) == 12
