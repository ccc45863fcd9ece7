import io

import pytest

from diarkit.config import DEFAULT_CONFIG_TEXT, ConfigError, PipelineConfig, load_config, parse_overrides


def test_default_text_matches_dataclass():
    assert load_config(io.StringIO(DEFAULT_CONFIG_TEXT)) == PipelineConfig()


def test_overrides_win_and_coerce():
    cfg = load_config(io.StringIO("fa = 0.5\nrecluster = true\n"), ["fa=0.7", "max-iters=3", "recluster=no"])
    assert cfg.fa == 0.7 and cfg.max_iters == 3 and cfg.recluster is False


@pytest.mark.parametrize(
    "items",
    [["bogus=1"], ["fa=abc"], ["fa"], ["recluster=maybe"], ["clustering=kmeans"], ["pca_var=0"], ["loop_p=2"]],
)
def test_bad_values(items):
    with pytest.raises(ConfigError):
        load_config(None, items)


def test_vbx_overlap_needs_vbx_clustering():
    with pytest.raises(ConfigError):
        PipelineConfig(clustering="ahc", overlap_mode="vbx")


def test_component_configs():
    cfg = PipelineConfig(ahc_threshold=0.1, ahc_threshold_vbx_init=0.9)
    assert cfg.ahc().threshold == 0.1 and cfg.ahc(underclustered=True).threshold == 0.9
    assert cfg.vbx().fb == 16 and cfg.fusion().fill_gap == 0.6
    assert parse_overrides(["window = 2"]) == {"window": 2.0}
