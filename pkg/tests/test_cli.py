"""Command-line workflows: prepare, gen-synth, train, eval, predict."""

import json
from pathlib import Path

import numpy as np
import pytest

from accoref.cli import main

CONLL_SAMPLE = """#begin document (bc/demo/00/demo_01); part 000
bc/demo/00/demo_01 0 0 John POS * - - - speaker1 * (0)
bc/demo/00/demo_01 0 1 saw POS * - - - speaker1 * -
bc/demo/00/demo_01 0 2 Mary POS * - - - speaker1 * (1)

bc/demo/00/demo_01 0 0 He POS * - - - speaker1 * (0)
bc/demo/00/demo_01 0 1 waved POS * - - - speaker1 * -
#end document
"""


def run_config(tmp_path, corpus, **overrides):
    cfg = {
        "corpus": str(corpus),
        "out_dir": str(tmp_path / "run"),
        "embedding_dim": 4,
        "epochs": 1,
        "feat_dim": 4,
        "ff_hidden": 8,
        "lstm_hidden": 8,
        "dropout": 0.0,
        "seed": 0,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture()
def synth_corpus(tmp_path):
    out = tmp_path / "corpus.jsonl"
    assert main(["gen-synth", str(out), "--docs", "6", "--seed", "3"]) == 0
    return out


class TestPrepare:
    def test_valid_file(self, tmp_path, capsys):
        conll = tmp_path / "sample.conll"
        conll.write_text(CONLL_SAMPLE)
        out = tmp_path / "docs.jsonl"
        assert main(["prepare", str(conll), str(out)]) == 0
        assert "1 documents" in capsys.readouterr().out
        assert out.exists()

    def test_malformed_brackets_exit_2_with_location(self, tmp_path, capsys):
        conll = tmp_path / "bad.conll"
        conll.write_text(CONLL_SAMPLE.replace("(1)", "(1"))
        out = tmp_path / "docs.jsonl"
        assert main(["prepare", str(conll), str(out)]) == 2
        assert "bad.conll:" in capsys.readouterr().err

    def test_idempotent(self, tmp_path):
        conll = tmp_path / "sample.conll"
        conll.write_text(CONLL_SAMPLE)
        out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        main(["prepare", str(conll), str(out1)])
        main(["prepare", str(conll), str(out2)])
        assert out1.read_bytes() == out2.read_bytes()


class TestGenSynth:
    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["gen-synth", str(a), "--docs", "4", "--seed", "9"]) == 0
        assert main(["gen-synth", str(b), "--docs", "4", "--seed", "9"]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestTrain:
    def test_quick_run_writes_artifacts(self, tmp_path, synth_corpus, capsys):
        cfg = run_config(tmp_path, synth_corpus)
        assert main(["train", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "final dev avg F1" in out
        run = tmp_path / "run"
        assert (run / "model.acnc").exists()
        assert (run / "model.acnc.json").exists()
        assert (run / "metrics_history.jsonl").exists()

    def test_seed_repeat_identical_history(self, tmp_path, synth_corpus):
        cfg = run_config(tmp_path, synth_corpus)
        main(["train", str(cfg)])
        hist1 = (tmp_path / "run" / "metrics_history.jsonl").read_bytes()
        main(["train", str(cfg)])
        hist2 = (tmp_path / "run" / "metrics_history.jsonl").read_bytes()
        assert hist1 == hist2

    def test_detection_toggle_recorded_in_sidecar(self, tmp_path, synth_corpus):
        cfg = run_config(tmp_path, synth_corpus)
        assert main(["train", str(cfg), "--no-detection-loss"]) == 0
        sidecar = json.loads((tmp_path / "run" / "model.acnc.json").read_text())
        assert sidecar["train_config"]["detection_loss"] is False

    def test_unknown_config_key_rejected_before_writing(self, tmp_path, synth_corpus, capsys):
        cfg = run_config(tmp_path, synth_corpus, bogus_key=1)
        assert main(["train", str(cfg)]) == 2
        assert "unknown config keys" in capsys.readouterr().err
        assert not (tmp_path / "run").exists()

    def test_missing_corpus_exit_2(self, tmp_path):
        cfg = run_config(tmp_path, tmp_path / "nope.jsonl")
        assert main(["train", str(cfg)]) == 2


class TestEvalAndPredict:
    @pytest.fixture()
    def trained(self, tmp_path, synth_corpus):
        cfg = run_config(tmp_path, synth_corpus)
        main(["train", str(cfg)])
        return synth_corpus, tmp_path / "run" / "model.acnc"

    def test_oracle_gold_scores_one(self, tmp_path, synth_corpus, capsys):
        assert main(["eval", "--corpus", str(synth_corpus), "--oracle-gold"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["avg_f1"] == 1.0
        assert report["muc"]["f1"] == 1.0

    def test_report_schema_complete(self, tmp_path, trained, capsys):
        corpus, ckpt = trained
        out = tmp_path / "report.json"
        assert main(["eval", "--corpus", str(corpus), "--checkpoint", str(ckpt),
                     "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        for metric in ("muc", "b_cubed", "ceaf_phi4"):
            for field in ("precision", "recall", "f1"):
                assert 0.0 <= report[metric][field] <= 1.0
        assert "avg_f1" in report

    def test_empty_corpus_exit_2(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        assert main(["eval", "--corpus", str(empty), "--oracle-gold"]) == 2

    def test_predict_deterministic_and_within_bounds(self, tmp_path, trained):
        corpus, ckpt = trained
        p1, p2 = tmp_path / "p1.jsonl", tmp_path / "p2.jsonl"
        assert main(["predict", "--corpus", str(corpus), "--checkpoint", str(ckpt),
                     "--out", str(p1)]) == 0
        main(["predict", "--corpus", str(corpus), "--checkpoint", str(ckpt), "--out", str(p2)])
        assert p1.read_bytes() == p2.read_bytes()
        from accoref.corpus import read_jsonl

        docs = {d.doc_key: d for d in read_jsonl(corpus)}
        for line in p1.read_text().splitlines():
            rec = json.loads(line)
            n = docs[rec["doc_key"]].n_tokens
            for cluster in rec["clusters"]:
                for s, e in cluster:
                    assert 0 <= s <= e < n

    def test_predict_then_eval_on_file_matches_in_process(self, tmp_path, trained, capsys):
        corpus, ckpt = trained
        preds = tmp_path / "preds.jsonl"
        main(["predict", "--corpus", str(corpus), "--checkpoint", str(ckpt), "--out", str(preds)])
        capsys.readouterr()
        assert main(["eval", "--corpus", str(corpus), "--checkpoint", str(ckpt)]) == 0
        in_process = json.loads(capsys.readouterr().out)
        assert main(["eval", "--corpus", str(corpus), "--predictions", str(preds)]) == 0
        on_file = json.loads(capsys.readouterr().out)
        assert in_process == on_file

    def test_conll_response_round_trips_through_parser(self, tmp_path, synth_corpus, capsys):
        # gold clusters are properly nested, so the bracket encoding is
        # lossless for them
        response = tmp_path / "resp.conll"
        assert main(["eval", "--corpus", str(synth_corpus), "--oracle-gold",
                     "--conll-response", str(response)]) == 0
        from accoref.corpus import parse_conll, read_jsonl

        parsed = parse_conll(response)
        docs = read_jsonl(synth_corpus)
        assert len(parsed) == len(docs)
        for a, b in zip(parsed, docs):
            assert a.sentences == b.sentences
            assert sorted(map(sorted, a.gold_clusters)) == sorted(map(sorted, b.gold_clusters))


class TestAblateCommand:
    def test_report_structure(self, tmp_path, synth_corpus, capsys):
        cfg = run_config(tmp_path, synth_corpus)
        assert main(["ablate", str(cfg), "--seeds", "0"]) == 0
        report = json.loads((tmp_path / "run" / "ablation.json").read_text())
        assert len(report["runs"]) == 1
        run = report["runs"][0]
        assert {"seed", "joint", "no_detection", "difference"} <= run.keys()
