import json
import subprocess
import sys

import numpy as np
import pytest

from sstrl.cli import main
from sstrl.plotting import aggregate, smooth
from sstrl.tablesim import read_demos
from sstrl.trainer import RunConfig, read_metrics


def tiny_config(path, **kw):
    cfg = dict(episodes=10, demos_per_task=3, warmup=30, batch_size=8, ssl_batch_size=8,
               update_every=10, replay_capacity=5000, ssl_capacity=100, log_every=5)
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = tiny_config(d / "cfg.json")
    assert main(["train", "--config", cfg, "--out", str(d / "run")]) == 0
    return d


class TestGenDemos:
    def test_counts_and_bytes(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["gen-demos", "--tasks", "1,2,3,4", "--per-task", "1", "--seed", "3", "--out", str(a)]) == 0
        assert main(["gen-demos", "--tasks", "1,2,3,4", "--per-task", "1", "--seed", "3", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert [d.task_id for d in read_demos(a)] == [1, 2, 3, 4]
        manifest = json.loads((tmp_path / "a.jsonl.manifest.json").read_text())
        assert manifest["args"]["seed"] == 3 and "package_version" in manifest
        assert "length mean" in capsys.readouterr().out

    def test_full_size(self, tmp_path):
        out = tmp_path / "d.jsonl"
        assert main(["gen-demos", "--per-task", "1000", "--out", str(out)]) == 0
        ids = [d.task_id for d in read_demos(out)]
        assert len(ids) == 4000

    def test_existing_without_force(self, tmp_path):
        out = tmp_path / "d.jsonl"
        out.write_text("keep")
        assert main(["gen-demos", "--per-task", "1", "--out", str(out)]) == 1
        assert out.read_text() == "keep"
        assert main(["gen-demos", "--per-task", "1", "--out", str(out), "--force"]) == 0

    def test_bad_task(self, tmp_path):
        assert main(["gen-demos", "--tasks", "1,9", "--out", str(tmp_path / "x")]) == 1

    def test_default_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SSTRL_OUTPUT_ROOT", str(tmp_path / "root"))
        assert main(["gen-demos", "--per-task", "1", "--tasks", "1"]) == 0
        assert (tmp_path / "root" / "demos.jsonl").exists()


class TestUsage:
    def test_unknown_flag(self):
        assert main(["train", "--bogus"]) == 1

    def test_unknown_verb(self):
        assert main(["fly"]) == 1

    def test_invalid_config_before_compute(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"setting": "continual", "milestones": [0, 9, 3, 12]}))
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "r")]) == 1
        assert not (tmp_path / "r").exists()

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "none.bin")]) == 2

    def test_help(self):
        assert main(["--help"]) == 0

    def test_entry_point_subprocess(self):
        r = subprocess.run([sys.executable, "-m", "sstrl.cli", "train", "--nope"], capture_output=True, text=True)
        assert r.returncode == 1 and "unrecognized" in r.stderr


class TestTrainEval:
    def test_outputs(self, trained):
        run = trained / "run"
        header, rows = read_metrics(run / "metrics.jsonl")
        assert len(rows) == 10
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["config"]["episodes"] == 10 and manifest["seed"] == 0

    def test_continual_flag(self, tmp_path):
        cfg = tiny_config(tmp_path / "c.json", milestones=[0, 3, 6, 8])
        out = tmp_path / "r"
        assert main(["train", "--config", cfg, "--setting", "continual", "--out", str(out)]) == 0
        _, rows = read_metrics(out / "metrics.jsonl")
        cfgd = RunConfig.load(cfg)
        cfgd.setting = "continual"
        assert all(r["task"] in cfgd.active_tasks(r["episode"]) for r in rows)

    def test_no_tinet_flag(self, tmp_path):
        from sstrl.container import read_container
        cfg = tiny_config(tmp_path / "c.json", episodes=2)
        out = tmp_path / "r"
        assert main(["train", "--config", cfg, "--ablation", "no-tinet", "--out", str(out)]) == 0
        _, blocks = read_container(out / "checkpoint.bin")
        assert not any(k.startswith("f_inf.") for k in blocks)

    def test_eval_incomplete_rows_and_determinism(self, trained):
        ck = str(trained / "run" / "checkpoint.bin")
        a, b = trained / "e1.jsonl", trained / "e2.jsonl"
        assert main(["eval", "--checkpoint", ck, "--mode", "incomplete", "--trials", "100", "--seed", "4", "--out", str(a)]) == 0
        assert main(["eval", "--checkpoint", ck, "--mode", "incomplete", "--trials", "100", "--seed", "4", "--out", str(b)]) == 0
        assert len(a.read_text().splitlines()) == 100
        assert a.read_bytes() == b.read_bytes()
        assert (trained / "e1.jsonl.manifest.json").exists()

    def test_eval_standard(self, trained):
        ck = str(trained / "run" / "checkpoint.bin")
        out = trained / "std.jsonl"
        assert main(["eval", "--checkpoint", ck, "--trials", "3", "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 4

    def test_oneshot_three_rows(self, trained):
        ck = str(trained / "run" / "checkpoint.bin")
        out = trained / "os.jsonl"
        assert main(["oneshot", "--checkpoint", ck, "--trials", "2", "--out", str(out)]) == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert [r["task"] for r in rows] == [5, 6, 7]

    def test_checkpoint_config_mismatch(self, trained, tmp_path):
        from sstrl.container import read_container, write_container
        meta, blocks = read_container(trained / "run" / "checkpoint.bin")
        meta["config"]["latent_dim"] = 16
        p = tmp_path / "mm.bin"
        write_container(p, blocks, meta)
        assert main(["eval", "--checkpoint", str(p), "--trials", "1"]) == 2

    def test_inspect_gwr(self, trained, capsys):
        ck = str(trained / "run" / "checkpoint.bin")
        out = trained / "gwr"
        assert main(["inspect-gwr", "--checkpoint", ck, "--out", str(out)]) == 0
        for n in ("act", "int", "b"):
            doc = json.loads((out / f"gwr_{n}.json").read_text())
            assert doc["format"] == "sstrl-gwr"
            assert (out / f"gwr_{n}.dot").read_text().startswith("graph")
        assert "nodes" in capsys.readouterr().out


class TestPlot:
    def _fake_metrics(self, tmp_path, seeds, extra_col=False):
        files = []
        for s in seeds:
            p = tmp_path / f"m{s}.jsonl"
            cols = ["episode", "setting", "ablation", "seed", "task", "reward", "length"]
            if extra_col:
                cols.append("l_c")
            rng = np.random.default_rng(s)
            with open(p, "w") as fh:
                fh.write(json.dumps({"format": "sstrl-metrics", "version": 1, "columns": cols, "units": {}}) + "\n")
                for e in range(50):
                    fh.write(json.dumps({"episode": e, "setting": "fixed", "ablation": "full", "seed": s,
                                         "task": 1, "reward": float(rng.random() < e / 50), "length": 10}) + "\n")
            files.append(str(p))
        return files

    def test_smooth_identity(self):
        x = np.random.default_rng(0).random(30)
        assert np.array_equal(smooth(x, 1), x)
        assert smooth([0, 2, 4], 2).tolist() == [0.0, 1.0, 3.0]

    def test_single_seed_no_band(self, tmp_path):
        files = self._fake_metrics(tmp_path, [0])
        assert main(["plot", "--metrics", *files, "--out", str(tmp_path / "p")]) == 0
        svg = (tmp_path / "p" / "reward_fixed.svg").read_text()
        assert "PolyCollection" not in svg
        assert (tmp_path / "p" / "aggregated.csv").exists()

    def test_three_seeds_band(self, tmp_path):
        files = self._fake_metrics(tmp_path, [0, 1, 2])
        assert main(["plot", "--metrics", *files, "--out", str(tmp_path / "p"), "--window", "5"]) == 0
        assert "PolyCollection" in (tmp_path / "p" / "reward_fixed.svg").read_text()
        agg = aggregate(files, 5)[("fixed", "full")]
        assert agg["n_seeds"] == 3 and agg["std"].max() > 0

    def test_mismatched_columns(self, tmp_path):
        (tmp_path / "a").mkdir()
        files = self._fake_metrics(tmp_path / "a", [0])
        files += self._fake_metrics(tmp_path, [1], extra_col=True)
        assert main(["plot", "--metrics", *files, "--out", str(tmp_path / "p")]) == 2
