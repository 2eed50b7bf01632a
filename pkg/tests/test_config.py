import pytest

from lidar4d.config import (
    PUBLISHED, ConfigError, PipelineConfig, apply_overrides, default_sources, dump_config, load_config,
    parse_config_text,
)


def test_defaults_validate():
    cfg = load_config()
    assert cfg == PipelineConfig()
    assert cfg.loss.lambda_dice == 2 and cfg.loss.lambda_bce == 5 and cfg.loss.lambda_cons == 1


def test_published_sources():
    src = default_sources()
    for key in ("synth.n_s", "sampling.max_gap", "loss.alpha", "loss.epsilon", "loss.beta"):
        assert src[key] == PUBLISHED
    assert src["loss.lambda_dice"] != PUBLISHED


def test_file_then_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nsynth.n_s = 10\nloss.alpha = 0.3  # trailing\n")
    cfg = load_config(p, ["synth.n_s=20", "sampling.enable_rto=false"])
    assert cfg.synth.n_s == 20 and cfg.loss.alpha == 0.3 and cfg.sampling.enable_rto is False


@pytest.mark.parametrize(
    "item, match",
    [
        ("loss.alpha=1.5", "loss.alpha"),
        ("loss.epsilon=0", "loss.epsilon"),
        ("loss.beta=-1", "loss.beta"),
        ("nosuch.key=1", "unknown config key"),
        ("synth.n_s=abc", "synth.n_s"),
        ("loss.tk_mask=sometimes", "loss.tk_mask"),
        ("metrics.filter_mode=x", "metrics.filter_mode"),
    ],
)
def test_invalid_values(item, match):
    with pytest.raises(ConfigError, match=match):
        load_config(overrides=[item])


def test_bad_lines():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("synth.n_s 5")
    with pytest.raises(ConfigError):
        load_config(overrides=["synth.n_s"])


def test_dump_round_trip(tmp_path):
    cfg = apply_overrides(PipelineConfig(), [("cluster.eps", "0.7"), ("synth.collide_existing", "false")])
    p = tmp_path / "dump.cfg"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg
    assert "# published" in dump_config(cfg)
