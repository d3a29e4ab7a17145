import json
import os

import numpy as np
import pytest

from handprior.cli import main


def run(tmp_path, *argv):
    return main([str(a) for a in argv])


class TestExtract:
    def test_writes_manifest_and_summary(self, tmp_path):
        out = tmp_path / "ds"
        assert main(["extract", "--num-sequences", "6", "--timeout-every", "5",
                     "-o", str(out)]) == 0
        lines = (out / "manifest.jsonl").read_text().splitlines()
        summary = json.loads((out / "summary.json").read_text())
        assert sum(summary["status_counts"].values()) == 6
        assert len(lines) == summary["status_counts"].get("ok", 0)
        assert (out / "extract_config.json").exists()

    def test_deterministic_manifest(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["--seed", "3", "extract", "--num-sequences", "4",
                         "-o", str(out)]) == 0
        assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()


class TestTrainTokenizer:
    def test_synthetic_corpus_checkpoint_and_report(self, tmp_path):
        out = tmp_path / "tok"
        assert main(["train-tokenizer", "--prototypes", "8", "--corpus-size",
                     "200", "--epochs", "3", "--num-codebooks", "4",
                     "--codebook-size", "32", "--code-dim", "8",
                     "-o", str(out)]) == 0
        assert (out / "tokenizer.pt").exists()
        report = json.loads((out / "tokenizer_report.json").read_text())
        assert len(report["loss_history"]) == 3
        assert len(report["utilization"]) == 4
        assert all(0 < u <= 1 for u in report["utilization"])

    def test_manifest_source(self, tmp_path):
        ds = tmp_path / "ds"
        assert main(["extract", "--num-sequences", "4", "-o", str(ds)]) == 0
        out = tmp_path / "tok"
        with pytest.warns(UserWarning):  # tiny manifest underfills the codebook
            assert main(["train-tokenizer", "--manifest",
                         str(ds / "manifest.jsonl"),
                         "--epochs", "2", "--num-codebooks", "4",
                         "--codebook-size", "16", "--code-dim", "4",
                         "-o", str(out)]) == 0
        assert (out / "tokenizer.pt").exists()


@pytest.fixture(scope="module")
def prior_inputs(tmp_path_factory):
    """Small manifest + tokenizer shared by the train-prior/eval-contact tests."""
    root = tmp_path_factory.mktemp("prior_inputs")
    ds = root / "ds"
    assert main(["extract", "--num-sequences", "5", "-o", str(ds)]) == 0
    tok = root / "tok"
    assert main(["train-tokenizer", "--prototypes", "8", "--corpus-size", "200",
                 "--epochs", "3", "--num-codebooks", "8", "--codebook-size", "32",
                 "--code-dim", "8", "-o", str(tok)]) == 0
    return ds / "manifest.jsonl", tok / "tokenizer.pt"


class TestTrainPrior:
    def test_tokens_mode_requires_tokenizer(self, prior_inputs, tmp_path):
        manifest, _ = prior_inputs
        assert main(["train-prior", "--manifest", str(manifest),
                     "--iterations", "2", "-o", str(tmp_path / "p")]) == 1

    def test_trains_and_fills_manifest_tokens(self, prior_inputs, tmp_path):
        manifest, tok = prior_inputs
        out = tmp_path / "p"
        assert main(["train-prior", "--manifest", str(manifest),
                     "--tokenizer", str(tok), "--iterations", "4",
                     "--embedding-dim", "32", "--lr", "1e-4",
                     "-o", str(out)]) == 0
        assert (out / "prior.pt").exists()
        log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert [e["step"] for e in log] == [1, 2, 3, 4]
        assert all(set(e) == {"step", "L_ct", "L_hand", "L_total"} for e in log)
        for line in manifest.read_text().splitlines():
            rec = json.loads(line)
            assert rec["tokens"] is not None and len(rec["tokens"]) == 8

    @pytest.mark.parametrize("flags", [
        ["--no-hand-loss"],                          # contact only
        ["--hand-regression"],                       # tokenizer-free hand head
        ["--no-contact-loss", "--hand-regression"],  # hand only
    ])
    def test_ablation_flags(self, prior_inputs, tmp_path, flags):
        manifest, _ = prior_inputs
        out = tmp_path / "p"
        assert main(["train-prior", "--manifest", str(manifest),
                     "--iterations", "2", "--embedding-dim", "32",
                     *flags, "-o", str(out)]) == 0
        log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert len(log) == 2
        if "--no-contact-loss" in flags:
            assert log[-1]["L_ct"] == 0.0
        if "--no-hand-loss" in flags:
            assert log[-1]["L_hand"] == 0.0

    def test_resume_appends_log(self, prior_inputs, tmp_path):
        manifest, tok = prior_inputs
        out = tmp_path / "p"
        assert main(["train-prior", "--manifest", str(manifest),
                     "--tokenizer", str(tok), "--iterations", "3",
                     "--embedding-dim", "32", "-o", str(out)]) == 0
        assert main(["train-prior", "--manifest", str(manifest),
                     "--tokenizer", str(tok), "--iterations", "5",
                     "--embedding-dim", "32",
                     "--resume", str(out / "prior.pt"),
                     "-o", str(out)]) == 0
        log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert [e["step"] for e in log] == [1, 2, 3, 4, 5]


class TestEvalContact:
    def test_writes_per_sample_and_summary_rows(self, prior_inputs, tmp_path):
        manifest, tok = prior_inputs
        prior_dir = tmp_path / "p"
        assert main(["train-prior", "--manifest", str(manifest),
                     "--tokenizer", str(tok), "--iterations", "2",
                     "--embedding-dim", "32", "-o", str(prior_dir)]) == 0
        out = tmp_path / "ev"
        assert main(["eval-contact", "--prior", str(prior_dir / "prior.pt"),
                     "--manifest", str(manifest), "--iterations", "40",
                     "-o", str(out)]) == 0
        rows = [json.loads(l) for l in (out / "contact_eval.jsonl").read_text().splitlines()]
        summary = rows[-1]
        assert {"encoder_name", "mean_SIM", "mean_NSS", "n_samples"} <= set(summary)
        assert summary["n_samples"] == len(rows) - 1
        for r in rows[:-1]:
            assert 0.0 <= r["SIM"] <= 1.0


class TestTrainPolicyAndReport:
    def test_protocol_report_and_curves(self, tmp_path):
        out = tmp_path / "pol"
        assert main(["train-policy", "--views", "1", "--policy-seeds", "1",
                     "--train-steps", "60", "--eval-every", "30",
                     "--rollouts", "2", "--demos", "2",
                     "-o", str(out)]) == 0
        report = json.loads((out / "protocol_report.json").read_text())
        assert len(report["runs"]) == 1
        assert len(report["runs"][0]["rates"]) == 2

        rep_out = tmp_path / "rep"
        assert main(["report", "--protocol-report",
                     str(out / "protocol_report.json"), "-o", str(rep_out)]) == 0
        csv = (rep_out / "success_curves.csv").read_text()
        assert csv.splitlines()[0] == "run,eval_index,success_rate"
        assert len(csv.splitlines()) == 3
        assert (rep_out / "success_curves.png").exists()

    def test_report_deterministic_csv(self, tmp_path):
        report = {"final_score": 12.0,
                  "runs": [{"view": 0, "seed": 0, "best": 12.0,
                            "rates": [4.0, 12.0]}]}
        src = tmp_path / "r.json"
        src.write_text(json.dumps(report))
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["report", "--protocol-report", str(src),
                         "-o", str(out)]) == 0
            outs.append((out / "success_curves.csv").read_bytes())
        assert outs[0] == outs[1]


class TestErrors:
    def test_missing_input_path_exits_2(self, tmp_path):
        assert main(["train-prior", "--manifest", str(tmp_path / "nope.jsonl"),
                     "-o", str(tmp_path / "o")]) == 2
        assert main(["report", "--protocol-report", str(tmp_path / "nope.json"),
                     "-o", str(tmp_path / "o")]) == 2

    def test_invalid_input_exits_1(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["report", "--protocol-report", str(bad),
                     "-o", str(tmp_path / "o")]) == 1

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HANDPRIOR_OUTPUT_ROOT", str(tmp_path))
        assert main(["extract", "--num-sequences", "2", "-o", "rel_out"]) == 0
        assert (tmp_path / "rel_out" / "summary.json").exists()
