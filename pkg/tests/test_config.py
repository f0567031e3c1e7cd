from pathlib import Path

import pytest
import tomli

from gbmstrat.config import PipelineConfig, from_dict, load_config
from gbmstrat.errors import ConfigError, NotFound


def test_defaults_match_reference_hyperparameters():
    cfg = load_config()
    g = cfg.gbdt
    assert (g.eta, g.gamma, g.max_depth, g.subsample, g.min_child_weight, g.reg_lambda) == (0.1, 0.5, 6, 0.6, 2, 1.0)
    m = cfg.mil
    assert (m.bag_loss_weight, m.instance_loss_weight, m.top_k, m.learning_rate, m.weight_decay) == \
        (0.7, 0.3, 8, 2e-4, 1e-5)
    assert (m.hidden, m.attn_hidden) == (512, 256)


def test_file_then_flags(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text('[paths]\nmanifest = "m.csv"\nout_dir = "/abs/out"\n[experiment]\nseed = 3\nthreads = 2\n'
                 '[gbdt]\nlambda = 2.0\n[mil]\nepochs = 5\n[shap]\npair = ["age_years", "grade"]\n')
    cfg = load_config(f)
    assert cfg.manifest == tmp_path / "m.csv" and cfg.out_dir == Path("/abs/out")
    assert cfg.seed == 3 and cfg.gbdt.reg_lambda == 2.0 and cfg.mil.epochs == 5
    assert cfg.shap_pair == ("age_years", "grade")
    cfg = load_config(f, seed=9, threads=4, out_dir=tmp_path / "o")
    assert (cfg.seed, cfg.threads, cfg.out_dir) == (9, 4, tmp_path / "o")


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[gbdt]\nlearning_rate = 0.1\n", "[gbdt]\neta = 0.0\n",
                                  "[experiment]\nthreads = 0\n", "[mil]\nbag_loss_weight = 0.9\n", "not toml ==="])
def test_bad_configs(tmp_path, text):
    f = tmp_path / "c.toml"
    f.write_text(text)
    with pytest.raises(ConfigError):
        load_config(f)


def test_missing_file_and_manifest(tmp_path):
    with pytest.raises(NotFound):
        load_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigError):
        PipelineConfig().validate(need_manifest=True)
    with pytest.raises(NotFound):
        PipelineConfig(manifest=tmp_path / "m.csv").validate(need_manifest=True)


def test_resolved_config_round_trips(tmp_path):
    cfg = from_dict({"experiment": {"seed": 7}, "heatmap": {"overlay_alpha": 0.25}}, tmp_path)
    path = cfg.write_resolved(tmp_path)
    doc = tomli.loads(path.read_text())
    again = from_dict(doc, tmp_path)
    a, b = again.to_dict(), cfg.to_dict()
    # paths re-resolve against the directory of the resolved file
    assert Path(a.pop("paths")["out_dir"]) == tmp_path / b.pop("paths")["out_dir"]
    assert a == b
    assert doc["gbdt"]["lambda"] == 1.0 and doc["experiment"]["seed"] == 7
