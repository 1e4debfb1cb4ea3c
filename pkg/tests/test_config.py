import pytest

from evit_unet.config import EViTUNetConfig, RunConfig, tiny_config, toy_config
from evit_unet.errors import ConfigError


def test_model_config_text_round_trip():
    cfg = toy_config(attn_scale=False, seed=7)
    assert EViTUNetConfig.from_text(cfg.to_text()) == cfg


def test_run_config_round_trip_and_defaults():
    run = RunConfig(model=tiny_config(), epochs=3, lr=0.01)
    assert RunConfig.from_text(run.to_text()) == run
    # missing keys take documented defaults, and the snapshot records them
    partial = RunConfig.from_text("epochs=2\nnum_classes=4\n")
    assert partial.epochs == 2 and partial.model.num_classes == 4 and partial.lr == RunConfig().lr
    assert "lr=0.05" in partial.to_text() and "stage_depths=" in partial.to_text()


def test_comments_and_blank_lines():
    assert RunConfig.from_text("# note\n\nepochs = 4\n").epochs == 4


@pytest.mark.parametrize("text,line,fragment", [
    ("epochs=3\nbogus=1\n", 2, "unknown key"),
    ("epochs=3\nepochs=4\n", 2, "duplicate"),
    ("lr=fast\n", 1, "lr"),
    ("epochs=2\n\ninput_hw=100x100\n", 3, "divisible"),
    ("no equals sign\n", 1, "key=value"),
    ("batch_size=0\n", 1, "batch_size"),
])
def test_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_text(text)
    assert info.value.line == line and fragment in str(info.value)
    assert f"line {line}" in str(info.value)


def test_model_config_rejects_run_keys():
    with pytest.raises(ConfigError, match="unknown key"):
        EViTUNetConfig.from_text("epochs=3\n")


def test_shipped_toy_config_parses():
    from pathlib import Path

    run = RunConfig.from_file(Path(__file__).resolve().parents[1] / "configs" / "toy.cfg")
    assert run.model == toy_config() and run.epochs <= 20 and run.dataset_size == 256
