import datetime as dt
import json

import numpy as np
import pytest

from flag.corpus import ManifestRecord
from flag.model import ModelConfig
from flag.trainer import (SplitError, SplitSpec, TrainConfig, TrainingError, dataset_loss, emit_report,
                          evaluate, format_report_table, make_split, report_from_confusion,
                          report_from_predictions, train)

from conftest import featured_graph


def manifest(years):
    return [ManifestRecord(f"d{i}", f"d{i}.amr", "T", dt.date(y, 6, 1)) for i, y in enumerate(years)]


def test_split_sizes_and_membership():
    recs = manifest([2015, 2016, 2017, 2018, 2018, 2016, 2017, 2015, 2019, 2020])
    labels = {r.doc_id: i % 2 for i, r in enumerate(recs)}
    split = make_split(recs, labels, SplitSpec(2019, 0.2, seed=3))
    assert (len(split.train), len(split.validation), len(split.test)) == (6, 2, 2)
    assert {d for d, _ in split.test} == {"d8", "d9"}
    assert make_split(recs, labels, SplitSpec(2019, 0.2, seed=3)) == split


def test_split_fuzz_partitions_labelled_docs():
    rng = np.random.default_rng(0)
    for seed in range(50):
        n = int(rng.integers(6, 40))
        recs = manifest(rng.integers(2014, 2021, n).tolist())
        labels = {r.doc_id: int(rng.integers(2)) for r in recs if rng.random() < 0.9}
        try:
            split = make_split(recs, labels, SplitSpec(2019, 0.2, seed))
        except SplitError:
            continue
        parts = [{d for d, _ in getattr(split, k)} for k in ("train", "validation", "test")]
        assert set.union(*parts) == set(labels)
        assert sum(map(len, parts)) == len(labels)
        year = {r.doc_id: r.call_date.year for r in recs}
        assert all(year[d] >= 2019 for d in parts[2])
        assert all(year[d] < 2019 for d in parts[0] | parts[1])


def test_split_errors():
    with pytest.raises(SplitError, match="test"):
        make_split(manifest([2015] * 5), {f"d{i}": 0 for i in range(5)}, SplitSpec(2019, 0.2))
    with pytest.raises(ValueError):
        SplitSpec(2019, 1.0)


def test_confusion_example():
    # rows are true class, columns predicted; class 1 is "up"
    r = report_from_confusion([[4, 2], [1, 3]])
    assert r.accuracy == pytest.approx(0.7, abs=1e-12)
    assert r.precision == pytest.approx([0.8, 0.6])
    assert r.recall == pytest.approx([4 / 6, 0.75])
    assert r.macro_precision == pytest.approx(0.7, abs=1e-5)
    assert r.macro_recall == pytest.approx(0.70833, abs=1e-5)
    assert r.f1 == pytest.approx(0.69697, abs=1e-5)


def test_boundary_reports():
    perfect = report_from_predictions([0, 1, 1, 0], [0, 1, 1, 0])
    assert (perfect.accuracy, perfect.macro_precision, perfect.macro_recall, perfect.f1) == (1.0, 1.0, 1.0, 1.0)
    wrong = report_from_predictions([0, 1, 1, 0], [1, 0, 0, 1])
    assert (wrong.accuracy, wrong.macro_precision, wrong.macro_recall, wrong.f1) == (0.0, 0.0, 0.0, 0.0)
    one_class = report_from_predictions([0, 1, 0, 1], [1, 1, 1, 1])
    assert (one_class.accuracy, one_class.macro_recall) == (0.5, 0.5)
    assert one_class.precision[0] == 0.0


def test_metric_identities_under_class_swap():
    rng = np.random.default_rng(1)
    for _ in range(50):
        t = rng.integers(0, 2, 30)
        p = rng.integers(0, 2, 30)
        a, b = report_from_predictions(t, p), report_from_predictions(1 - t, 1 - p)
        cm = np.array(a.confusion)
        assert a.accuracy == pytest.approx(np.trace(cm) / cm.sum())
        assert (a.macro_precision, a.macro_recall, a.f1) == pytest.approx((b.macro_precision, b.macro_recall, b.f1))
        assert a.n == 30


def tiny_config(**kw):
    model = ModelConfig(n_layers=2, n_heads=2, hidden_dim=16, input_dim=8, seed=0)
    return TrainConfig(**{"epochs_max": 5, "lr": 1e-3, "model": model, **kw})


def dataset(seeds, labels):
    return [(featured_graph(s), y) for s, y in zip(seeds, labels)]


def test_single_document_is_memorized():
    data = dataset([0], [1])
    result = train(data, data, tiny_config(epochs_max=200))
    assert result.log[-1].train_loss < 1e-2
    assert dataset_loss(result.model, data)[0] < 1e-2


def test_zero_learning_rate_keeps_validation_loss_constant():
    result = train(dataset([1, 2], [0, 1]), dataset([3, 4], [1, 0]), tiny_config(lr=0.0, epochs_max=4))
    assert len({r.val_loss for r in result.log}) == 1
    assert result.best_epoch == 1


def test_selected_model_has_lowest_validation_loss():
    val = dataset([7, 8, 9], [0, 1, 1])
    result = train(dataset([1, 2, 3, 4], [0, 1, 0, 1]), val, tiny_config(epochs_max=8, lr=3e-3))
    best = min(r.val_loss for r in result.log)
    assert result.log[result.best_epoch - 1].val_loss == best
    assert dataset_loss(result.model, val)[0] == pytest.approx(best, rel=1e-6)


def test_error_based_selection_breaks_ties_with_loss():
    val = dataset([7, 8], [0, 1])
    result = train(dataset([1, 2], [0, 1]), val, tiny_config(epochs_max=6, selection="error"))
    keys = [(r.val_error, r.val_loss) for r in result.log]
    assert keys[result.best_epoch - 1] == min(keys)


def test_training_is_deterministic():
    args = dataset([1, 2, 3], [0, 1, 1]), dataset([4], [0]), tiny_config(epochs_max=3)
    assert train(*args).log_lines() == train(*args).log_lines()


def test_non_finite_loss_names_the_document():
    graph = featured_graph(5)
    bad = graph.with_features(np.full_like(graph.features, np.nan))
    with pytest.raises(TrainingError, match="doc5"):
        train([(bad, 1)], dataset([1], [0]), tiny_config(epochs_max=1))


def test_evaluate_and_emit(tmp_path):
    data = dataset([1, 2, 3], [0, 1, 1])
    result = train(data, data, tiny_config(epochs_max=2))
    report = evaluate(result.model, data)
    assert report.n == 3
    json_path, txt_path = emit_report(report, tmp_path / "rep")
    with open(json_path) as fh:
        assert json.load(fh) == report.to_dict()
    text = open(txt_path).read()
    assert text.splitlines()[1].startswith("FLAG")
    assert f"{report.accuracy:.3f}" in text


def test_report_table_uses_three_decimals():
    r = report_from_confusion([[4, 2], [1, 3]])
    line = format_report_table([("FLAG", r)]).splitlines()[1]
    assert line.split() == ["FLAG", "0.700", "0.700", "0.708", "0.697"]
