import json

import numpy as np
import pytest

from chip.accounting import load_builtin_arch
from chip.cli import main
from chip.scoring import read_mask_json
from chip.tensor_io import DumpManifest, FeatureMapSet, LayerEntry, write_feature_maps


def make_dump(root, *, layers=(("l0", 5, 3, 3),), num_samples=6, seed=0,
              mutate=None):
    """Write a small activation dump; ``mutate(layer_id, sid, arr)`` can edit
    each tensor before writing."""
    rng = np.random.default_rng(seed)
    entries = []
    for layer_id, c, h, w in layers:
        entries.append(LayerEntry(layer_id, c, h, w, "{layer}_s{sample}.npy"))
        for sid in range(num_samples):
            arr = rng.standard_normal((c, h, w))
            if mutate:
                arr = mutate(layer_id, sid, arr)
            write_feature_maps(FeatureMapSet(layer_id, sid, arr),
                               root / f"{layer_id}_s{sid}.npy", dtype="f64")
    manifest = DumpManifest("clitest", tuple(entries), num_samples, "f64")
    path = root / "manifest.json"
    manifest.save(path)
    return path


def fabricate_scores(root, arch_name, seed=0):
    rng = np.random.default_rng(seed)
    arch = load_builtin_arch(arch_name)
    root.mkdir(parents=True, exist_ok=True)
    for conv in arch.prunable_convs():
        scores = [[i, float(v)] for i, v in enumerate(rng.random(conv.out_channels))]
        (root / f"{conv.layer_id}.scores.json").write_text(json.dumps(
            {"layer_id": conv.layer_id, "scores": scores,
             "num_samples": 4, "seed": seed}))
    return arch


def read_csv_body(path):
    lines = path.read_text().splitlines()
    return [l for l in lines if not l.startswith("#")]


class TestScoreCommand:
    def test_writes_one_json_per_layer(self, tmp_path):
        manifest = make_dump(tmp_path, layers=(("a", 4, 2, 2), ("b", 3, 2, 2)))
        out = tmp_path / "scores"
        rc = main(["score", "--manifest", str(manifest), "--samples", "4",
                   "--batch-size", "2", "--out-dir", str(out), "--no-timestamp"])
        assert rc == 0
        assert sorted(p.name for p in out.glob("*.scores.json")) == \
            ["a.scores.json", "b.scores.json"]
        obj = json.loads((out / "a.scores.json").read_text())
        assert len(obj["scores"]) == 4 and obj["num_samples"] == 4

    def test_rerun_is_byte_identical(self, tmp_path):
        manifest = make_dump(tmp_path)
        outs = []
        for name in ("o1", "o2"):
            out = tmp_path / name
            assert main(["score", "--manifest", str(manifest), "--samples", "4",
                         "--seed", "5", "--out-dir", str(out),
                         "--no-timestamp"]) == 0
            outs.append((out / "l0.scores.json").read_bytes())
        assert outs[0] == outs[1]

    def test_too_many_samples_exits_2(self, tmp_path, capsys):
        manifest = make_dump(tmp_path, num_samples=3)
        rc = main(["score", "--manifest", str(manifest), "--samples", "10",
                   "--out-dir", str(tmp_path / "x")])
        assert rc == 2
        assert "exceeds" in capsys.readouterr().err

    def test_corrupt_npy_exits_1(self, tmp_path, capsys):
        manifest = make_dump(tmp_path, num_samples=2)
        (tmp_path / "l0_s0.npy").write_bytes(b"garbage")
        rc = main(["score", "--manifest", str(manifest),
                   "--out-dir", str(tmp_path / "x")])
        assert rc == 1

    def test_out_dir_env_fallback(self, tmp_path, monkeypatch):
        manifest = make_dump(tmp_path)
        envdir = tmp_path / "envout"
        monkeypatch.setenv("CHIP_OUT_DIR", str(envdir))
        assert main(["score", "--manifest", str(manifest), "--samples", "2",
                     "--no-timestamp"]) == 0
        assert (envdir / "l0.scores.json").exists()


class TestPruneCommand:
    def test_published_schedule_reductions(self, tmp_path):
        fabricate_scores(tmp_path / "scores", "resnet56")
        out = tmp_path / "masks"
        rc = main(["prune", "--scores-dir", str(tmp_path / "scores"),
                   "--schedule", "resnet56_42.8_kappa", "--arch", "resnet56",
                   "--out-dir", str(out), "--no-timestamp"])
        assert rc == 0
        mask = read_mask_json(out / "s0b0c1.mask.json")
        assert mask.kappa == 9 and len(mask.keep) == 16
        header = (out / "stats.csv").read_text().splitlines()
        red_line = next(l for l in header if "reduction" in l)
        vals = dict(part.split("=") for part in red_line[2:].split())
        assert float(vals["params_reduction_pct"]) == pytest.approx(42.8, abs=1.5)
        assert float(vals["flops_reduction_pct"]) == pytest.approx(47.4, abs=1.5)
        body = read_csv_body(out / "stats.csv")
        assert body[0] == "layer_id,params_base,params_pruned,flops_base,flops_pruned"
        assert body[-1].startswith("TOTAL,")

    def test_keep_all_schedule_gives_zero_reduction(self, tmp_path):
        arch = fabricate_scores(tmp_path / "scores", "resnet56")
        sched_path = tmp_path / "full.json"
        sched_path.write_text(json.dumps({
            "arch": "resnet56", "mode": "kappa",
            "values": [c.out_channels for c in arch.prunable_convs()],
        }))
        out = tmp_path / "masks"
        rc = main(["prune", "--scores-dir", str(tmp_path / "scores"),
                   "--schedule", str(sched_path), "--arch", "resnet56",
                   "--out-dir", str(out), "--no-timestamp"])
        assert rc == 0
        mask = read_mask_json(out / "stem.mask.json")
        assert all(mask.keep)
        red_line = next(l for l in (out / "stats.csv").read_text().splitlines()
                        if "reduction" in l)
        assert "params_reduction_pct=0.00" in red_line

    def test_schedule_length_mismatch_exits_2(self, tmp_path, capsys):
        fabricate_scores(tmp_path / "scores", "resnet56")
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"arch": "resnet56", "mode": "kappa",
                                   "values": [16] * 54}))
        rc = main(["prune", "--scores-dir", str(tmp_path / "scores"),
                   "--schedule", str(bad), "--arch", "resnet56",
                   "--out-dir", str(tmp_path / "x")])
        assert rc == 2
        assert "54 entries" in capsys.readouterr().err


class TestOracleCommand:
    def test_gap_csv_columns(self, tmp_path):
        manifest = make_dump(tmp_path, layers=(("l0", 6, 3, 3),), num_samples=3)
        out = tmp_path / "o"
        rc = main(["oracle", "--manifest", str(manifest), "--layer", "l0",
                   "--prune-count", "2", "--out-dir", str(out), "--no-timestamp"])
        assert rc == 0
        body = read_csv_body(out / "l0.oracle.csv")
        assert body[0] == ("sample_id,prune_count,greedy_subset,oracle_subset,"
                           "greedy_exact_ci,oracle_ci,gap,agree")
        assert len(body) == 4
        first = body[1].split(",")
        assert float(first[6]) >= 0.0  # gap column

    def test_prune_count_zero(self, tmp_path):
        manifest = make_dump(tmp_path, num_samples=2)
        out = tmp_path / "o"
        rc = main(["oracle", "--manifest", str(manifest), "--layer", "l0",
                   "--prune-count", "0", "--out-dir", str(out), "--no-timestamp"])
        assert rc == 0
        body = read_csv_body(out / "l0.oracle.csv")
        assert body[1].endswith(",0,0,0,1")

    def test_wide_layer_guard_exits_2(self, tmp_path, capsys):
        manifest = make_dump(tmp_path, layers=(("wide", 24, 2, 2),), num_samples=1)
        rc = main(["oracle", "--manifest", str(manifest), "--layer", "wide",
                   "--prune-count", "2", "--out-dir", str(tmp_path / "x")])
        assert rc == 2
        assert "24 channels" in capsys.readouterr().err


class TestStabilityCommand:
    def test_pearson_and_heatmap_files(self, tmp_path):
        manifest = make_dump(tmp_path, layers=(("l0", 6, 3, 3),), num_samples=20)
        out = tmp_path / "s"
        rc = main(["stability", "--manifest", str(manifest), "--batches", "5",
                   "--batch-size", "4", "--out-dir", str(out), "--no-timestamp"])
        assert rc == 0
        pearson = read_csv_body(out / "l0.pearson.csv")
        assert pearson[0] == "batch,batch_0,batch_1,batch_2,batch_3,batch_4"
        assert len(pearson) == 6
        assert float(pearson[1].split(",")[1]) == 1.0  # diagonal
        heat = read_csv_body(out / "l0.batch_ci.csv")
        assert heat[0] == "batch," + ",".join(f"ch_{i}" for i in range(6))
        assert len(heat) == 6

    def test_duplicate_batches_correlate_perfectly(self, tmp_path):
        base = np.random.default_rng(3).standard_normal((4, 2, 2))
        manifest = make_dump(tmp_path, layers=(("l0", 4, 2, 2),), num_samples=8,
                             mutate=lambda lid, sid, arr: base)
        out = tmp_path / "s"
        rc = main(["stability", "--manifest", str(manifest), "--batches", "2",
                   "--batch-size", "4", "--out-dir", str(out), "--no-timestamp"])
        assert rc == 0
        body = read_csv_body(out / "l0.pearson.csv")
        assert float(body[1].split(",")[2]) == pytest.approx(1.0, abs=1e-12)

    def test_batches_exceeding_manifest_exit_2(self, tmp_path):
        manifest = make_dump(tmp_path, num_samples=4)
        rc = main(["stability", "--manifest", str(manifest), "--batches", "5",
                   "--batch-size", "128", "--out-dir", str(tmp_path / "x")])
        assert rc == 2


class TestMetricCompareCommand:
    def test_distinct_value_counts(self, tmp_path):
        manifest = make_dump(tmp_path, layers=(("l0", 8, 3, 3),), num_samples=1)
        out = tmp_path / "m"
        rc = main(["metric-compare", "--manifest", str(manifest), "--layer", "l0",
                   "--out-dir", str(out), "--no-timestamp"])
        assert rc == 0
        body = read_csv_body(out / "l0.metric_compare.csv")
        assert body[0] == "channel,rank_change,ci_change"
        assert len(body) == 9
        ranks = {row.split(",")[1] for row in body[1:]}
        cis = {row.split(",")[2] for row in body[1:]}
        assert len(cis) >= len(ranks)

    def test_duplicated_channel_has_zero_rank_change(self, tmp_path):
        def dup(layer_id, sid, arr):
            arr[3] = arr[1]
            return arr
        manifest = make_dump(tmp_path, layers=(("l0", 6, 3, 3),), num_samples=1,
                             mutate=dup)
        out = tmp_path / "m"
        assert main(["metric-compare", "--manifest", str(manifest), "--layer",
                     "l0", "--out-dir", str(out), "--no-timestamp"]) == 0
        body = read_csv_body(out / "l0.metric_compare.csv")
        row3 = body[4].split(",")
        assert row3[0] == "3" and row3[1] == "0"


class TestDemoCommand:
    def test_tiny_demo_produces_comparison_csv(self, tmp_path):
        out = tmp_path / "demo"
        rc = main(["demo", "--ratio", "0.5", "--criteria", "chip,random",
                   "--seeds", "0", "--epochs", "2", "--finetune-epochs", "1",
                   "--out-dir", str(out), "--no-timestamp"])
        assert rc == 0
        body = read_csv_body(out / "comparison.csv")
        assert body[0] == "criterion,seed,ratio,acc_pre,acc_post,params,flops"
        assert len(body) == 3
        assert (out / "dumps" / "manifest.json").exists()
        params = {row.split(",")[5] for row in body[1:]}
        assert len(params) == 1

    def test_unknown_criterion_exits_2(self, tmp_path, capsys):
        rc = main(["demo", "--criteria", "chip,entropy",
                   "--out-dir", str(tmp_path / "x")])
        assert rc == 2
        assert "entropy" in capsys.readouterr().err

    def test_bad_ratio_exits_2(self, tmp_path):
        rc = main(["demo", "--ratio", "1.5", "--out-dir", str(tmp_path / "x")])
        assert rc == 2


class TestUsageErrors:
    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["score", "--bogus"])
        assert exc.value.code == 2
