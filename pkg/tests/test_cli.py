import pandas as pd
import pytest

from src.cli.main import build_parser, main, resolve_config
from src.config.model_config import StrategyKind
from src.model import build_model, save_checkpoint

from tests.conftest import TINY_WIDTHS

TINY_INI = """
[experiment]
split = s1
strategy = st
seeds = 0
convergence_floor = 0

[train]
epochs = 1
batch_size = 8

[attack]
iters = 1

[model]
widths = 2,2,4,4

[data]
image_size = 16
samples_per_container = 8
source_classes = 2
"""


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI, encoding="utf-8")
    return path


def test_flags_override_the_file(ini):
    args = build_parser().parse_args(
        ["train", "--config", str(ini), "--strategy", "at-aft", "--eps-s", "0.2", "--seeds", "3..4", "--data", "d"]
    )
    config = resolve_config(args)
    assert config.strategy is StrategyKind.AT_AFT
    assert config.eps_s == 0.2
    assert config.seeds == (3, 4)
    assert config.data.root == "d"
    assert config.train.epochs == 1


def test_single_seed_flag_wins(ini):
    args = build_parser().parse_args(["train", "--config", str(ini), "--seeds", "0..4", "--seed", "7"])
    assert resolve_config(args).seeds == (7,)


def test_unknown_strategy_is_a_usage_error(ini):
    with pytest.raises(SystemExit) as info:
        main(["train", "--config", str(ini), "--strategy", "nope"])
    assert info.value.code == 2


def test_adversarial_strategy_without_radius_exits_2(ini):
    assert main(["train", "--config", str(ini), "--strategy", "at-ft"]) == 2


def test_missing_dataset_directory_exits_3(ini, tmp_path):
    assert main(["train", "--config", str(ini), "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 3


def test_missing_checkpoint_exits_5(ini, tmp_path):
    code = main(["eval", "--config", str(ini), "--checkpoint", str(tmp_path / "absent.mrv"), "--out", str(tmp_path / "o")])
    assert code == 5


def test_gen_data_then_train_and_eval(ini, tmp_path, capsys):
    root = tmp_path / "data"
    assert main(["gen-data", "--config", str(ini), "--data", str(root)]) == 0
    assert (root / "manifest.csv").exists()
    counts = pd.read_csv(root / "container_counts.csv", index_col="container_id")
    assert list(counts.columns) == ["target-train", "target-test"]
    assert counts["target-train"].sum() == 6 * 8
    assert counts["target-test"].sum() == 3 * 8
    assert "Datasets written to" in capsys.readouterr().out

    out = tmp_path / "run"
    assert main(["train", "--config", str(ini), "--data", str(root), "--out", str(out)]) == 0
    assert (out / "metrics_summary.csv").exists()
    assert (out / "st_seed0" / "trace.tsv").exists()

    ckpt = save_checkpoint(build_model(TINY_WIDTHS, num_classes=4, seed=0), tmp_path / "m.mrv")
    assert main(["eval", "--config", str(ini), "--data", str(root), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    frame = pd.read_csv(out / "eval.csv")
    assert "overall" in set(frame["scope"])
    assert (out / "eval_confusion.csv").exists()


@pytest.fixture
def blocked_out(tmp_path):
    """An output path whose parent is a regular file, so directory creation fails."""
    blocker = tmp_path / "blocker"
    blocker.write_text("", encoding="utf-8")
    return blocker / "out"


def test_unwritable_train_output_exits_5(ini, blocked_out):
    assert main(["train", "--config", str(ini), "--out", str(blocked_out)]) == 5


def test_unwritable_eval_output_exits_5(ini, tmp_path, blocked_out):
    ckpt = save_checkpoint(build_model(TINY_WIDTHS, num_classes=4, seed=0), tmp_path / "m.mrv")
    assert main(["eval", "--config", str(ini), "--checkpoint", str(ckpt), "--out", str(blocked_out)]) == 5
