import json

import pytest

import rac


def test_default_config_round_trips():
    cfg = rac.default_config()
    assert cfg["augment"]["target_count"] == 1596
    assert rac.validate_config(cfg) == cfg
    with pytest.raises(rac.RacError, match="ConfigError"):
        rac.validate_config({"retrieval": {"shots": 4}})


def test_metrics_worked_example():
    m = rac.metrics(["Unclassified", "Confidential", "Secret", "Secret"],
                    ["Unclassified", "Confidential", "Secret", "Confidential"])
    assert m["macro_f1"] == pytest.approx(7 / 9, abs=1e-12)
    assert m["accuracy"] == pytest.approx(0.75)


def test_error_predictions_and_statistics():
    gold = ["Unclassified", "Confidential", "Secret"] * 4
    pred = list(gold)
    pred[0] = None
    assert rac.metrics(gold, pred)["errors"] == 1
    ci = rac.bootstrap_ci(gold, gold, resamples=200, seed=3)
    assert ci["lower"] == ci["upper"] == 1.0
    assert rac.permutation_test(gold, gold, gold)["p_value"] == 1.0
    assert rac.format_p_value(9.83e-08) == "9.83E-08"


def test_classifier_freshness():
    clf = rac.Classifier({"providers": {"embed": {"dim": 256}}})
    with pytest.raises(rac.ServiceError) as info:
        clf.classify("nothing indexed yet")
    assert info.value.status == 503
    for doc in rac.fixture_corpus(train_per_class=2, test_per_class=0):
        clf.add_document(doc)
    assert clf.health()["index_size"] == 6
    new = {"id": "fresh", "body": "quartz meadow lantern harbor", "label": "Secret"}
    clf.add_document(new)
    with pytest.raises(rac.ServiceError) as info:
        clf.add_document(new)
    assert info.value.status == 409
    reply = clf.classify(new["body"], shots=3)
    assert reply["top_exemplar"]["doc_id"] == "fresh"
    assert reply["top_exemplar"]["similarity"] >= 0.999
    assert clf.trace(reply["trace_id"])["trace_id"] == reply["trace_id"]


def test_cli_in_process(tmp_path):
    corpus = tmp_path / "c.jsonl"
    code, out, _ = rac.cli("fixture", "--out", corpus)
    assert code == 0
    code, out, _ = rac.cli("evaluate", corpus, "--shots", "0,3", "--no-llm", "--baselines", "rac(0)")
    assert code == 0
    assert out.splitlines()[0] == "Model\tMacro F1\t95% CI\tp (vs rac(0))"
    code, _, err = rac.cli("nope")
    assert code == 2
    assert json.loads(err)["error"]["code"] == "UsageError"
