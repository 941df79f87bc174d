import json
import os

import numpy as np
import pytest

from smoothcert.cli import main
from smoothcert.data import Dataset, load_dataset, save_dataset
from smoothcert.metrics import load_records


def run_cli(args):
    try:
        return main([str(a) for a in args])
    except SystemExit as exc:  # argparse usage failures
        return exc.code


@pytest.fixture
def tabular_csv(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for _ in range(120):
        label = int(rng.integers(0, 2))
        center = -1.5 if label == 0 else 1.5
        vals = rng.normal(center, 1.0, size=6)
        rows.append(",".join(f"{v:.6f}" for v in vals) + f",{label}")
    path = tmp_path / "toy.csv"
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def containers(tmp_path, tabular_csv):
    base = tmp_path / "base.bin"
    train = tmp_path / "train.bin"
    test = tmp_path / "test.bin"
    assert run_cli(["ingest", "--csv", tabular_csv, "--out", base]) == 0
    assert run_cli([
        "split", "--dataset", base, "--train-fraction", 0.8, "--seed", 7,
        "--standardize", "--train-out", train, "--test-out", test,
    ]) == 0
    return base, train, test


class TestIngestAndSplit:
    def test_ingest_csv(self, tmp_path, tabular_csv):
        out = tmp_path / "ds.bin"
        assert run_cli(["ingest", "--csv", tabular_csv, "--out", out]) == 0
        ds = load_dataset(out)
        assert (ds.n, ds.d, ds.class_count) == (120, 6, 2)
        manifest = json.loads((tmp_path / "ds.bin.manifest.json").read_text())
        assert manifest["command"] == "ingest"
        assert str(tabular_csv) in manifest["inputs"]

    def test_split_rows(self, containers):
        _, train, test = containers
        assert load_dataset(train).n == 96
        assert load_dataset(test).n == 24

    def test_missing_file_exits_2(self, tmp_path):
        assert run_cli(["ingest", "--csv", tmp_path / "nope.csv", "--out", tmp_path / "o"]) == 2

    def test_idx_requires_labels(self, tmp_path):
        code = run_cli(["ingest", "--idx-images", tmp_path / "img", "--out", tmp_path / "o"])
        assert code == 2

    def test_sample_per_class(self, containers, tmp_path):
        base, _, _ = containers
        out = tmp_path / "small.bin"
        assert run_cli(["sample", "--dataset", base, "--per-class", 10, "--seed", 1, "--out", out]) == 0
        small = load_dataset(out)
        assert small.n == 20


class TestAttackCommand:
    def test_poisons_expected_rows(self, containers, tmp_path):
        _, train, _ = containers
        out = tmp_path / "poisoned.bin"
        code = run_cli([
            "attack", "--dataset", train, "--pattern", "one-dimension", "--l2-norm", 0.1,
            "--poison-ratio", 0.05, "--source", 0, "--target", 1, "--seed", 3, "--out", out,
        ])
        assert code == 0
        poisoned = load_dataset(out)
        assert poisoned.poisoned_count == round(0.05 * 96)
        assert poisoned.spec.kind == "one-dimension"

    def test_zero_ratio_clean_copy(self, containers, tmp_path):
        _, train, _ = containers
        out = tmp_path / "clean-copy.bin"
        code = run_cli([
            "attack", "--dataset", train, "--pattern", "one-dimension", "--l2-norm", 0.1,
            "--poison-ratio", 0.0, "--source", 0, "--target", 1, "--out", out,
        ])
        assert code == 0
        poisoned = load_dataset(out)
        assert poisoned.poisoned_count == 0
        assert poisoned.dataset.features.tobytes() == load_dataset(train).features.tobytes()

    def test_bad_label_pair_exits_2(self, containers, tmp_path):
        _, train, _ = containers
        code = run_cli([
            "attack", "--dataset", train, "--pattern", "one-dimension", "--l2-norm", 0.1,
            "--poison-ratio", 0.05, "--source", 1, "--target", 1, "--out", tmp_path / "x",
        ])
        assert code == 2


class TestCertifyKnn:
    @pytest.fixture
    def poisoned_train(self, containers, tmp_path):
        _, train, _ = containers
        out = tmp_path / "ptrain.bin"
        assert run_cli([
            "attack", "--dataset", train, "--pattern", "one-dimension", "--l2-norm", 0.1,
            "--poison-ratio", 0.02, "--source", 0, "--target", 1, "--seed", 5, "--out", out,
        ]) == 0
        return out

    def test_produces_records_and_reports(self, containers, poisoned_train, tmp_path):
        _, _, test = containers
        out = tmp_path / "knnrun"
        code = run_cli([
            "certify-knn", "--train", poisoned_train, "--test", test, "--k", 3,
            "--sigma", 1.0, "--buckets", 40, "--limit", 8, "--workers", 1, "--out", out,
        ])
        assert code == 0
        records = load_records(out / "records.jsonl")
        assert len(records) == 8
        assert (out / "report.csv").exists() and (out / "report.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "certify-knn"

    def test_rerun_is_byte_identical(self, containers, poisoned_train, tmp_path):
        _, _, test = containers
        args = lambda out: [
            "certify-knn", "--train", poisoned_train, "--test", test, "--k", 3,
            "--sigma", 1.0, "--buckets", 30, "--limit", 5, "--workers", 1, "--out", out,
        ]
        assert run_cli(args(tmp_path / "run1")) == 0
        assert run_cli(args(tmp_path / "run2")) == 0
        a = (tmp_path / "run1" / "records.jsonl").read_bytes()
        b = (tmp_path / "run2" / "records.jsonl").read_bytes()
        assert a == b

    def test_k_exceeding_n_exits_2(self, containers, poisoned_train, tmp_path):
        _, _, test = containers
        code = run_cli([
            "certify-knn", "--train", poisoned_train, "--test", test, "--k", 100000,
            "--sigma", 1.0, "--out", tmp_path / "x",
        ])
        assert code == 2

    def test_no_trigger_evaluates_clean_inputs(self, containers, poisoned_train, tmp_path):
        _, _, test = containers
        base = [
            "certify-knn", "--train", poisoned_train, "--test", test, "--k", 3,
            "--sigma", 1.0, "--buckets", 20, "--limit", 4, "--workers", 1,
        ]
        assert run_cli(base + ["--out", tmp_path / "trig"]) == 0
        assert run_cli(base + ["--no-trigger", "--out", tmp_path / "clean"]) == 0
        trig = json.loads((tmp_path / "trig" / "manifest.json").read_text())
        clean = json.loads((tmp_path / "clean" / "manifest.json").read_text())
        assert trig["trigger_applied"] and not clean["trigger_applied"]
        a = (tmp_path / "trig" / "records.jsonl").read_bytes()
        b = (tmp_path / "clean" / "records.jsonl").read_bytes()
        assert a != b  # the trigger must actually reach the inputs

    def test_clean_train_reports_no_attack(self, containers, tmp_path):
        _, train, test = containers
        out = tmp_path / "cleanrun"
        assert run_cli([
            "certify-knn", "--train", train, "--test", test, "--k", 3,
            "--sigma", 1.0, "--buckets", 20, "--limit", 3, "--workers", 1, "--out", out,
        ]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["rows"][0]["attack_kind"] == "none"

    def test_double_poisoning_refused(self, containers, poisoned_train, tmp_path):
        code = run_cli([
            "attack", "--dataset", poisoned_train, "--pattern", "one-dimension",
            "--l2-norm", 0.1, "--poison-ratio", 0.01, "--source", 0, "--target", 1,
            "--out", tmp_path / "x",
        ])
        assert code == 2


class TestCertifyMc:
    def mc_args(self, train, test, out, extra=()):
        return [
            "certify-mc", "--train", train, "--test", test, "--learner", "logistic",
            "--ensemble-size", 10, "--sigma", 0.5, "--alpha", 0.01, "--epochs", 3,
            "--limit", 5, "--workers", 1, "--seed", 11, "--out", out, *extra,
        ]

    def test_smoke_run_completes(self, containers, tmp_path, capsys):
        _, train, test = containers
        out = tmp_path / "mcrun"
        assert run_cli(self.mc_args(train, test, out)) == 0
        printed = capsys.readouterr().out
        assert "abstain rate" in printed
        assert (out / "ensemble" / "manifest.json").exists()
        records = load_records(out / "records.jsonl")
        assert len(records) == 5

    def test_resume_reproduces_identical_radii(self, containers, tmp_path):
        _, train, test = containers
        out = tmp_path / "mcrun2"
        assert run_cli(self.mc_args(train, test, out)) == 0
        first = (out / "records.jsonl").read_bytes()
        assert run_cli(self.mc_args(train, test, out, extra=["--resume"])) == 0
        assert (out / "records.jsonl").read_bytes() == first

    def test_alpha_out_of_range_exits_2(self, containers, tmp_path):
        _, train, test = containers
        args = self.mc_args(train, test, tmp_path / "x")
        args[args.index("--alpha") + 1] = 1.5
        assert run_cli(args) == 2


class TestReportAndReplay:
    def test_merge_two_record_files(self, tmp_path):
        from smoothcert.metrics import EvaluationRecord, save_records

        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_records([EvaluationRecord(0, 0, 1.0)], p1)
        save_records([EvaluationRecord(1, 0, 0.5)], p2)
        out = tmp_path / "merged.csv"
        code = run_cli([
            "report", "--records", p1, p2, "--radii", "0.2,0.7", "--format", "csv", "--out", out,
        ])
        assert code == 0
        body = out.read_text().splitlines()[1].split(",")
        assert float(body[4]) == 0.5  # one of two correct

    def test_missing_records_exits_2(self, tmp_path):
        assert run_cli(["report", "--records", tmp_path / "missing.jsonl"]) == 2

    def test_replay_reproduces_outputs(self, containers, tmp_path):
        _, train, _ = containers
        out = tmp_path / "replayed.bin"
        args = [
            "attack", "--dataset", train, "--pattern", "four-dimension", "--l2-norm", 0.2,
            "--poison-ratio", 0.1, "--source", 0, "--target", 1, "--seed", 9, "--out", out,
        ]
        assert run_cli(args) == 0
        original = out.read_bytes()
        out.unlink()
        assert run_cli(["replay", "--manifest", str(out) + ".manifest.json"]) == 0
        assert out.read_bytes() == original

    def test_unknown_subcommand_exits_2(self):
        assert run_cli(["frobnicate"]) == 2
