"""Command-line behavior: exit codes, files produced, determinism."""

import json
import os

import numpy as np
import pytest

from transition_nas.cli import default_config, main, retrain_genotype
from transition_nas.data import SyntheticSpec, gen_synthetic
from transition_nas.genio import parse_genotype, validate_genotype
from transition_nas.pruning import Genotype
from transition_nas.supernet import SuperNetConfig
from transition_nas.topology import op_set_from_names

MICRO_OPS = '["sep_conv_3x3","avg_pool_3x3","identity"]'


def micro_args(seed=11):
    return [
        "--toy",
        "--set", f"seed={seed}",
        "--set", "search.epochs=2",
        "--set", "search.batch_size=6",
        "--set", "supernet.num_cells=1",
        "--set", "supernet.reduction_cells=[]",
        "--set", "supernet.init_channels=4",
        "--set", "supernet.num_classes=3",
        "--set", "supernet.input_spatial=[8,8]",
        "--set", "supernet.input_channels=2",
        "--set", f"supernet.ops={MICRO_OPS}",
        "--set", "data.synthetic.class_count=3",
        "--set", "data.synthetic.samples_per_class=12",
        "--set", "data.synthetic.height=8",
        "--set", "data.synthetic.width=8",
        "--set", "data.synthetic.channels=2",
    ]


def run_micro_search(out_dir, seed=11):
    return main(["search", *micro_args(seed), "--out", str(out_dir)])


class TestSearchCommand:
    def test_writes_expected_files(self, tmp_path):
        out = tmp_path / "run"
        assert run_micro_search(out) == 0
        for name in ("arch.ckpt", "history.txt", "config.echo.json", "history.png"):
            assert (out / name).exists(), name
        lines = (out / "history.txt").read_text().strip().split("\n")
        assert lines[0] == "epoch,tau,train_loss,val_loss"
        assert len(lines) == 3

    def test_existing_out_dir_needs_force(self, tmp_path, capsys):
        out = tmp_path / "run"
        out.mkdir()
        assert run_micro_search(out) == 1
        assert "--force" in capsys.readouterr().err
        assert main(["search", *micro_args(), "--out", str(out), "--force"]) == 0

    def test_missing_seed_is_config_error(self, tmp_path, capsys):
        rc = main(["search", "--toy", "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "seed" in capsys.readouterr().err

    def test_missing_dataset_path_names_field(self, tmp_path, capsys):
        rc = main(
            [
                "search",
                "--toy",
                "--set", "seed=1",
                "--set", "data.kind=cifar10",
                "--set", 'data.paths=["/nonexistent/batch.bin"]',
                "--out", str(tmp_path / "x"),
            ]
        )
        assert rc == 1
        assert "data.paths[0]" in capsys.readouterr().err

    def test_same_seed_gives_identical_checkpoint_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_micro_search(a, seed=21) == 0
        assert run_micro_search(b, seed=21) == 0
        assert (a / "arch.ckpt").read_bytes() == (b / "arch.ckpt").read_bytes()
        assert (a / "history.txt").read_text() == (b / "history.txt").read_text()

    def test_config_echo_reflects_overrides(self, tmp_path):
        out = tmp_path / "run"
        assert run_micro_search(out, seed=33) == 0
        echoed = json.loads((out / "config.echo.json").read_text())
        assert echoed["seed"] == 33
        assert echoed["supernet"]["num_cells"] == 1

    def test_config_file_loaded(self, tmp_path, capsys):
        cfg = default_config()
        cfg["seed"] = 5
        path = tmp_path / "conf.json"
        path.write_text(json.dumps(cfg))
        rc = main(
            ["search", "--config", str(path), "--toy", "--set", "search.epochs=1",
             "--set", "supernet.num_cells=1", "--set", "supernet.reduction_cells=[]",
             "--set", "supernet.init_channels=4", "--set", "supernet.input_spatial=[8,8]",
             "--set", f"supernet.ops={MICRO_OPS}", "--set", "supernet.num_classes=3",
             "--set", "supernet.input_channels=2",
             "--set", "data.synthetic.class_count=3",
             "--set", "data.synthetic.samples_per_class=8",
             "--set", "data.synthetic.height=8",
             "--set", "data.synthetic.width=8",
             "--set", "data.synthetic.channels=2",
             "--out", str(tmp_path / "out")]
        )
        assert rc == 0


class TestPruneCommand:
    @pytest.fixture()
    def checkpoint(self, tmp_path):
        out = tmp_path / "run"
        assert run_micro_search(out) == 0
        return out / "arch.ckpt"

    def test_tiep_strategy_produces_valid_genotype(self, checkpoint, tmp_path):
        dest = tmp_path / "g.genotype.json"
        assert main(["prune", "--arch", str(checkpoint), "--strategy", "tiep",
                     "--out", str(dest)]) == 0
        genotype = parse_genotype(dest.read_bytes())
        assert validate_genotype(genotype) == []
        assert genotype.provenance_dict["strategy"] == "tiep"

    def test_hard_strategy_produces_valid_genotype(self, checkpoint, tmp_path):
        dest = tmp_path / "h.genotype.json"
        assert main(["prune", "--arch", str(checkpoint), "--strategy", "hard",
                     "--out", str(dest)]) == 0
        assert validate_genotype(parse_genotype(dest.read_bytes())) == []

    def test_default_output_next_to_checkpoint(self, checkpoint):
        assert main(["prune", "--arch", str(checkpoint)]) == 0
        assert (checkpoint.parent / "tiep.genotype.json").exists()

    def test_unknown_strategy_is_usage_error(self, checkpoint, capsys):
        rc = main(["prune", "--arch", str(checkpoint), "--strategy", "best"])
        assert rc == 1
        err = capsys.readouterr().err
        assert "usage" in err

    def test_malformed_checkpoint_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint")
        assert main(["prune", "--arch", str(bad)]) == 1

    def test_deterministic_genotype_bytes(self, checkpoint, tmp_path):
        d1, d2 = tmp_path / "g1.json", tmp_path / "g2.json"
        main(["prune", "--arch", str(checkpoint), "--out", str(d1)])
        main(["prune", "--arch", str(checkpoint), "--out", str(d2)])
        assert d1.read_bytes() == d2.read_bytes()


class TestEvalCommand:
    def test_micro_eval_produces_report(self, tmp_path):
        out = tmp_path / "run"
        assert run_micro_search(out) == 0
        assert main(["prune", "--arch", str(out / "arch.ckpt")]) == 0
        rc = main(
            [
                "eval",
                "--genotype", str(out / "tiep.genotype.json"),
                *micro_args(),
                "--set", "eval.epochs=4",
                "--set", "eval.batch_size=6",
                "--out", str(out / "eval"),
            ]
        )
        assert rc == 0
        report = json.loads((out / "eval" / "eval_report.json").read_text())
        assert set(report) == {"genotype_digest", "seed", "train_acc", "val_acc"}
        assert (out / "eval" / "eval_history.txt").exists()
        assert (out / "eval" / "eval_history.png").exists()

    def test_identity_genotype_on_random_labels_is_chance(self):
        ops = op_set_from_names(("avg_pool_3x3", "identity"))
        half = tuple(
            ((0, "identity"), (1, "identity")) for _ in range(4)
        )
        genotype = Genotype.make(half, half, ops)
        net_cfg = SuperNetConfig(
            num_cells=1,
            reduction_positions=frozenset(),
            init_channels=4,
            num_classes=4,
            input_spatial=(8, 8),
            input_channels=2,
            op_set=ops,
        )
        data = gen_synthetic(
            SyntheticSpec(
                class_count=4, samples_per_class=32, height=8, width=8, channels=2,
                contrast=1.0, noise_std=0.1, seed=1,
            )
        )
        # sever the image-label relationship: accuracy has nothing to learn from
        data.labels = np.random.default_rng(999).integers(0, 4, len(data))
        eval_cfg = {"epochs": 6, "batch_size": 8, "lr_start": 0.05, "lr_end": 0.0,
                    "momentum": 0.9}
        record, _ = retrain_genotype(genotype, net_cfg, data, eval_cfg, seed=1)
        assert abs(record["val_acc"] - 0.25) <= 0.1


class TestExportDotCommand:
    @pytest.fixture()
    def genotype_file(self, tmp_path):
        out = tmp_path / "run"
        assert run_micro_search(out) == 0
        assert main(["prune", "--arch", str(out / "arch.ckpt")]) == 0
        return out / "tiep.genotype.json"

    def test_writes_both_cell_kinds(self, genotype_file, tmp_path):
        dest = tmp_path / "dots"
        assert main(["export-dot", "--genotype", str(genotype_file),
                     "--out-dir", str(dest)]) == 0
        assert (dest / "normal.dot").exists()
        assert (dest / "reduction.dot").exists()

    def test_rerun_is_byte_identical(self, genotype_file, tmp_path):
        d1, d2 = tmp_path / "d1", tmp_path / "d2"
        main(["export-dot", "--genotype", str(genotype_file), "--out-dir", str(d1)])
        main(["export-dot", "--genotype", str(genotype_file), "--out-dir", str(d2)])
        assert (d1 / "normal.dot").read_bytes() == (d2 / "normal.dot").read_bytes()

    def test_malformed_genotype_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.genotype.json"
        bad.write_text('{"schema_version": 1}')
        assert main(["export-dot", "--genotype", str(bad)]) == 1


class TestGradcheckCommand:
    def test_passes_and_reports_items(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "derived-weights-path" in out  # perturbs transition + attention logits
        assert "toy-validation-loss" in out
        assert "sampling-path" in out
        assert "FAIL" not in out


class TestUsage:
    def test_no_command_prints_help(self, capsys):
        assert main([]) == 1

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["optimize"]) == 1
        assert "usage" in capsys.readouterr().err
