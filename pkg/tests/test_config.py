import math

import pytest

from cathtrack.config import ConfigError, RunConfig, dump_config, env_overrides, load_config, parse_config


def test_defaults():
    cfg = parse_config("")
    assert cfg.design.n == 19 and cfg.design.length == 25.0
    assert cfg.noise.front == 0.5 and cfg.seed == 0
    assert cfg.pose.random


def test_roundtrip_is_identity():
    text = """
seed: 7
design: {length: 30, radius: 1.2, n: 11, turns: 1.5}
noise: {front: 0.3, side: 0.4}
pose: {cx: [0.01, 0.0], cy: [0.0, 0.02], roll: 0.5}
estimator: {order: 2, tip_weight: 5}
segmentation: {thresh: 50, area_range: [10, 900]}
study: {kind: spacing, designs: [5, 9], configurations: 3}
"""
    cfg = parse_config(text)
    again = parse_config(dump_config(cfg))
    assert again.to_dict() == cfg.to_dict()
    assert again.hash() == cfg.hash()
    assert cfg.design.n == 11 and cfg.estimator.order == 2 and cfg.study.designs == (5, 9)


def test_hash_changes_with_content():
    assert parse_config("seed: 1").hash() != parse_config("seed: 2").hash()
    assert RunConfig().with_seed(3).study.seed == 3


@pytest.mark.parametrize("text,field", [
    ("nonsense: 1", "nonsense"),
    ("seed: -1", "seed"),
    ("noise: 3", "noise"),
    ("estimator: {order: 0}", "estimator"),
    ("estimator: {colour: red}", "estimator"),
    ("design: {turns: 2}", "design.n"),
    ("pose: {cx: [1], cy: []}", "pose"),
    ("- a\n- b", "<document>"),
    ("a: [", "<document>"),
])
def test_invalid_configs_name_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field


def test_env_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("noise: {front: 0.2, side: 0.3}\nseed: 4\n")
    env = {"CATHTRACK_NOISE__FRONT": "0.9", "CATHTRACK_SEED": "11", "OTHER": "x",
           "CATHTRACK_ESTIMATOR__ORDER": "4"}
    assert env_overrides(env) == {"noise": {"front": 0.9}, "seed": 11, "estimator": {"order": 4}}
    cfg = load_config(path, env)
    assert cfg.noise.front == 0.9 and cfg.noise.side == 0.3
    assert cfg.seed == 11 and cfg.estimator.order == 4
    assert load_config(path, {}).noise.front == 0.2


def test_pose_bounds():
    cfg = parse_config("pose: {max_bend: 1.0}")
    assert cfg.pose.random and math.isclose(cfg.pose.max_bend, 1.0)
    with pytest.raises(ConfigError):
        parse_config("pose: {max_bend: -1}")
