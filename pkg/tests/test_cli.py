"""End-to-end command tests, all in-process through main(argv)."""

import json
import os

import numpy as np
import pytest

from cgsorec import pipeline
from cgsorec.cli import main
from cgsorec.config import load_config
from cgsorec.synth import community_dataset, write_dataset
from cgsorec.trainer import save_checkpoint

from conftest import untrained_checkpoint


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def stdout_table(out):
    rows = {}
    for line in out.strip().splitlines():
        key, _, value = line.partition("\t")
        rows[key] = value
    return rows


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace with a small dataset, config, and both trained checkpoints."""
    root = tmp_path_factory.mktemp("cliws")
    ds = community_dataset(
        seed=5, n_users=40, n_items=60, n_interactions=480,
        n_social_edges=240, n_communities=4, n_hot=6, niche_size=12,
    )
    write_dataset(ds, root / "interactions.tsv", root / "social.tsv")
    model = {
        "T": 3, "hidden_dims": [16], "time_embed_dim": 8,
        "learning_rate": 1e-3, "epochs": 2, "batch_size": 32,
        "patience": 3, "valid_every": 1,
    }
    cfg = {
        "seed": 7,
        "output_dir": str(root / "run"),
        "dataset": {
            "interactions": str(root / "interactions.tsv"),
            "social": str(root / "social.tsv"),
        },
        "cgd": model,
        "csd": dict(model),
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["prepare", str(cfg_path)]) == 0
    assert main(["train", str(cfg_path), "--model", "cgd"]) == 0
    assert main(["train", str(cfg_path), "--model", "csd"]) == 0
    return {"root": root, "cfg": str(cfg_path), "out": root / "run"}


class TestPrepare:
    def test_stats_and_manifest(self, ws, capsys):
        manifest = ws["out"] / "splits.json"
        before = manifest.read_bytes()
        code, out, _ = run(capsys, "prepare", ws["cfg"])
        assert code == 0
        rows = stdout_table(out)
        assert rows["users"] == "40"
        assert rows["items"] == "60"
        assert rows["interactions"] == "480"
        assert rows["connections"] == "240"
        parts = int(rows["train"]) + int(rows["valid"]) + int(rows["test"])
        assert parts == 480
        assert int(rows["debiased_test"]) <= int(rows["test"])
        assert int(rows["debiased_cap"]) >= 1
        # rerun rewrote the identical manifest
        assert manifest.read_bytes() == before

    def test_missing_social_named(self, ws, tmp_path, capsys):
        cfg = json.loads((ws["root"] / "config.json").read_text())
        cfg["dataset"]["social"] = str(tmp_path / "nope.tsv")
        bad = tmp_path / "cfg.json"
        bad.write_text(json.dumps(cfg))
        code, _, err = run(capsys, "prepare", str(bad))
        assert code == 2
        assert "dataset.social" in err

    def test_invalid_json_config(self, tmp_path, capsys):
        bad = tmp_path / "broken.json"
        bad.write_text("{oops")
        code, _, err = run(capsys, "prepare", str(bad))
        assert code == 2
        assert "config error" in err

    def test_unknown_override_key(self, ws, capsys):
        code, _, err = run(capsys, "prepare", ws["cfg"], "--set", "train.epochs=3")
        assert code == 2
        assert "unknown config key" in err


class TestTrain:
    def test_checkpoints_written(self, ws):
        for kind in ("cgd", "csd"):
            d = ws["out"] / f"ckpt-{kind}"
            assert (d / "manifest.json").exists()
            assert any(p.suffix == ".bin" for p in d.iterdir())

    def test_train_stdout_contract(self, ws, capsys):
        code, out, _ = run(
            capsys, "train", ws["cfg"], "--model", "cgd",
            "--ckpt-dir", str(ws["root"] / "ckpt-extra"),
        )
        assert code == 0
        rows = stdout_table(out)
        assert rows["model"] == "cgd"
        assert int(rows["best_epoch"]) >= 1
        assert 0.0 <= float(rows["valid_recall@10"]) <= 1.0

    def test_resume_continues_epochs(self, ws, capsys):
        code, out, _ = run(
            capsys, "train", ws["cfg"], "--model", "cgd", "--resume",
            "--set", "cgd.epochs=3",
        )
        assert code == 0
        assert "resuming from epoch" in out

    def test_csd_needs_social(self, ws, tmp_path, capsys):
        cfg = json.loads((ws["root"] / "config.json").read_text())
        cfg["dataset"]["social"] = None
        cfg["output_dir"] = str(tmp_path / "run")
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        code, _, err = run(capsys, "train", str(path), "--model", "csd")
        assert code == 3
        assert "social" in err

    def test_lr_zero_is_config_error(self, ws, capsys):
        code, _, err = run(
            capsys, "train", ws["cfg"], "--model", "cgd",
            "--set", "cgd.learning_rate=0",
        )
        assert code == 2


class TestInfer:
    def test_lists_format(self, ws, capsys):
        out_path = ws["root"] / "lists5.tsv"
        code, out, _ = run(
            capsys, "infer", ws["cfg"], "--top", "5", "--out", str(out_path)
        )
        assert code == 0
        rows = stdout_table(out)
        assert rows["users"] == "40"
        assert rows["top_k"] == "5"
        lines = out_path.read_text().strip().splitlines()
        assert len(lines) == 40 * 5
        seen_users = []
        for line in lines:
            u, item, score = line.split("\t")
            int(u), int(item), float(score)
            if not seen_users or seen_users[-1] != int(u):
                seen_users.append(int(u))
        # one contiguous block per user, ascending
        assert seen_users == list(range(40))
        # rank order within each block: scores never increase
        by_user = {}
        for line in lines:
            u, _, score = line.split("\t")
            by_user.setdefault(int(u), []).append(float(score))
        for scores in by_user.values():
            assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_rerun_byte_identical(self, ws, capsys):
        a = ws["root"] / "lists_a.tsv"
        b = ws["root"] / "lists_b.tsv"
        assert run(capsys, "infer", ws["cfg"], "--out", str(a))[0] == 0
        assert run(capsys, "infer", ws["cfg"], "--out", str(b))[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_zero_guidance_ignores_social_checkpoint(self, ws, capsys):
        # all mixing coefficients are zero, so dropping the social model
        # entirely must not change a single byte
        with_social = ws["root"] / "with_social.tsv"
        without = ws["root"] / "without_social.tsv"
        assert run(capsys, "infer", ws["cfg"], "--out", str(with_social))[0] == 0
        code, _, _ = run(
            capsys, "infer", ws["cfg"], "--out", str(without),
            "--ckpt-csd", str(ws["root"] / "no-such-dir"),
        )
        assert code == 0
        assert with_social.read_bytes() == without.read_bytes()


class TestGoldenFixtureThroughCli:
    def test_five_user_run_matches_library_path(self, tmp_path, capsys):
        R_rows = [
            [0, 2, 5], [0, 1, 4], [1, 2, 6], [0, 3, 7], [1, 4, 5],
        ]
        edges = [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2),
                 (3, 4), (4, 3), (4, 0), (0, 4)]
        with open(tmp_path / "r.tsv", "w") as fh:
            for u, items in enumerate(R_rows):
                for i in items:
                    fh.write(f"{u}\t{i}\n")
        with open(tmp_path / "s.tsv", "w") as fh:
            for a, b in edges:
                fh.write(f"{a}\t{b}\n")
        cfg = {
            "seed": 3,
            "output_dir": str(tmp_path / "run"),
            "dataset": {
                "interactions": str(tmp_path / "r.tsv"),
                "social": str(tmp_path / "s.tsv"),
                "n_users": 5,
                "n_items": 8,
            },
            "guidance": {
                "eta": 0.3, "gamma": 0.4, "w_s": 0.25, "w_r": 0.5,
                "delta": 0.5, "lambda": 1.0, "T_inf": 2,
            },
            "eval": {"ks": [2, 3]},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        d_item = tmp_path / "ck-item"
        d_social = tmp_path / "ck-social"
        save_checkpoint(untrained_checkpoint(8, T=3, seed=21), d_item)
        save_checkpoint(untrained_checkpoint(5, T=3, seed=22, tag="CSD"), d_social)

        assert main(["prepare", str(cfg_path)]) == 0
        out = tmp_path / "lists.tsv"
        code, _, _ = run(
            capsys, "infer", str(cfg_path), "--ckpt-cgd", str(d_item),
            "--ckpt-csd", str(d_social), "--out", str(out), "--top", "3",
        )
        assert code == 0

        # identical run through the library API
        cfg_obj = load_config(cfg_path)
        R, S = pipeline.load_dataset(cfg_obj)
        bundle = pipeline.ensure_bundle(cfg_obj, R)
        ckpt_social = untrained_checkpoint(5, T=3, seed=22, tag="CSD")
        ckpt_item = untrained_checkpoint(8, T=3, seed=21)
        scores = pipeline.joint_scores(cfg_obj, ckpt_social, ckpt_item, S, bundle)
        lists = pipeline.score_lists(cfg_obj, scores, bundle, 3)
        expected = tmp_path / "expected.tsv"
        pipeline.write_lists(lists, expected)
        assert out.read_bytes() == expected.read_bytes()


class TestEval:
    @pytest.fixture()
    def lists_path(self, ws, capsys):
        path = ws["root"] / "eval_lists.tsv"
        if not path.exists():
            assert run(capsys, "infer", ws["cfg"], "--out", str(path))[0] == 0
        return path

    def test_eval_writes_reports(self, ws, lists_path, capsys):
        out = ws["root"] / "report.json"
        code, stdout, _ = run(
            capsys, "eval", ws["cfg"], "--lists", str(lists_path),
            "--out", str(out),
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert set(payload["recall"]) == {"5", "10"}
        assert set(payload["ndcg"]) == {"5", "10"}
        assert "freq_hist" in payload
        assert "recall@5" in stdout and "ndcg@10" in stdout
        tsv = (str(out) + ".freq.tsv")
        lines = open(tsv).read().splitlines()
        assert lines[0] == "bucket\tmean_freq"
        assert len(lines) == 1 + 10 + 3  # header, deciles, hot/tail/total

    def test_eval_rerun_identical(self, ws, lists_path, capsys):
        a = ws["root"] / "rep_a.json"
        b = ws["root"] / "rep_b.json"
        for p in (a, b):
            assert run(
                capsys, "eval", ws["cfg"], "--lists", str(lists_path),
                "--out", str(p),
            )[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_lists_is_data_error(self, ws, capsys):
        code, _, err = run(
            capsys, "eval", ws["cfg"], "--lists", str(ws["root"] / "ghost.tsv")
        )
        assert code == 3
        assert "data error" in err

    def test_malformed_lists_is_data_error(self, ws, tmp_path, capsys):
        bad = tmp_path / "bad.tsv"
        bad.write_text("0\tnotanumber\t1.0\n")
        code, _, err = run(capsys, "eval", ws["cfg"], "--lists", str(bad))
        assert code == 3


class TestSweep:
    def test_wr_sweep_files(self, ws, capsys):
        out_dir = ws["root"] / "sweep-wr"
        code, out, _ = run(
            capsys, "sweep", ws["cfg"], "--param", "w_r",
            "--values", "0,0.3,0.6", "--out-dir", str(out_dir),
        )
        assert code == 0
        reports = {p.name for p in out_dir.glob("report_*.json")}
        assert reports == {
            "report_guidance-w_r=0.json",
            "report_guidance-w_r=0.3.json",
            "report_guidance-w_r=0.6.json",
        }
        lines = (out_dir / "summary.tsv").read_text().strip().splitlines()
        assert lines[0] == "value\trecall@5\trecall@10\tndcg@10"
        assert len(lines) == 4
        for line in lines[1:]:
            value, r5, r10, n10 = line.split("\t")
            assert 0.0 <= float(r10) <= 1.0
            assert 0.0 <= float(n10) <= 1.0

    def test_single_value_matches_eval(self, ws, capsys):
        # gamma=0 with everything else zero is exactly the default run
        out_dir = ws["root"] / "sweep-gamma"
        code, _, _ = run(
            capsys, "sweep", ws["cfg"], "--param", "gamma",
            "--values", "0", "--out-dir", str(out_dir),
        )
        assert code == 0
        lists = ws["root"] / "single.tsv"
        assert run(capsys, "infer", ws["cfg"], "--out", str(lists))[0] == 0
        report = ws["root"] / "single.json"
        assert run(
            capsys, "eval", ws["cfg"], "--lists", str(lists), "--out", str(report)
        )[0] == 0
        swept = json.loads((out_dir / "report_guidance-gamma=0.json").read_text())
        direct = json.loads(report.read_text())
        for section in ("recall", "ndcg", "per_group", "freq_hist"):
            assert swept[section] == direct[section]

    def test_bad_values_config_error(self, ws, capsys):
        code, _, err = run(
            capsys, "sweep", ws["cfg"], "--param", "w_r", "--values", "0,huh",
        )
        assert code == 2


class TestBiasReport:
    def test_bias_report_files(self, ws, capsys):
        lists = ws["root"] / "bias_lists.tsv"
        assert run(capsys, "infer", ws["cfg"], "--out", str(lists))[0] == 0
        out = ws["root"] / "bias.json"
        code, stdout, _ = run(
            capsys, "bias-report", ws["cfg"], "--lists", str(lists),
            "--out", str(out),
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert set(payload) == {"freq_hist", "per_group", "notices"}
        assert payload["freq_hist"]["total_count"] == 40 * 10
        assert "hot_mean_freq" in stdout
        assert os.path.exists(str(out) + ".freq.tsv")
