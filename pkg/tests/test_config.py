import json

import pytest

from app import celery, create_app
from app.config import ModelConfig, SynthSpec, TestingConfig, TrainConfig, load_profile
from app.errors import ConfigError


def test_defaults():
    model, train = ModelConfig(), TrainConfig()
    assert (model.hidden, model.grid_size, model.image_size) == (100, 4, 128)
    assert (train.batch_size, train.lr, train.margin, train.negatives) == (32, 1e-4, 0.3, 9)
    assert (train.max_utterances, train.max_tokens) == (20, 30)


def test_named_profiles_load():
    for name in ('full', 'desk', 'micro'):
        profile = load_profile(name)
        assert profile.name == name
    micro = load_profile('micro')
    assert micro.model.conv_channels == (2, 4, 4, 4)
    assert micro.train.negatives == micro.synth.negatives


def test_no_profile_gives_defaults():
    profile = load_profile(None)
    assert profile.model == ModelConfig()
    assert profile.train == TrainConfig()


def test_unknown_profile():
    with pytest.raises(ConfigError, match='not found'):
        load_profile('no-such-profile')


def test_profile_from_path(tmp_path):
    path = tmp_path / 'small.json'
    path.write_text(json.dumps({'model': {'hidden': 12}, 'train': {'epochs': 3}}))
    profile = load_profile(str(path))
    assert profile.name == 'small'
    assert profile.model.hidden == 12
    assert profile.train.epochs == 3
    assert profile.synth == SynthSpec()


@pytest.mark.parametrize('payload', [
    {'optimizer': {}},
    {'train': {'learning_rate': 0.1}},
    {'model': {'hidden': 0}},
])
def test_bad_profiles(tmp_path, payload):
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps(payload))
    with pytest.raises(ConfigError):
        load_profile(str(path))


def test_invalid_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"model": ')
    with pytest.raises(ConfigError, match='Invalid JSON'):
        load_profile(str(path))


def test_flags_override_file_values():
    train = load_profile('micro').train
    updated = train.updated(lr=0.5, epochs=None)
    assert updated.lr == 0.5
    assert updated.epochs == train.epochs
    assert train.lr == 1e-3


@pytest.mark.parametrize('section, changes', [
    (TrainConfig(), {'margin': 0.0}),
    (TrainConfig(), {'batch_size': 0}),
    (TrainConfig(), {'lambda_cls': -1.0}),
    (ModelConfig(), {'image_size': 100}),
    (ModelConfig(), {'grid_size': 3}),
    (ModelConfig(), {'dropout': 1.0}),
    (SynthSpec(), {'vocab_size': 20}),
    (SynthSpec(), {'min_utterances': 5, 'max_utterances': 2}),
])
def test_validation(section, changes):
    with pytest.raises(ConfigError):
        section.updated(**changes)


def test_ablation_switches_shape_the_model():
    model = TrainConfig(no_classify=True, no_din=True).apply_ablations(ModelConfig())
    assert (model.classify, model.interaction, model.fusion_rnn) == (False, False, True)
    untouched = TrainConfig().apply_ablations(ModelConfig())
    assert untouched == ModelConfig()


def test_effective_pretrain_epochs():
    assert TrainConfig(pretrain_epochs=3).effective_pretrain_epochs == 3
    assert TrainConfig(pretrain_epochs=3, no_pretrain=True).effective_pretrain_epochs == 0
    assert TrainConfig(pretrain_epochs=3, no_classify=True).effective_pretrain_epochs == 0


def test_round_trip_keeps_tuples():
    model = ModelConfig(conv_channels=(1, 2, 3, 4))
    assert ModelConfig.from_dict(json.loads(json.dumps(model.to_dict()))) == model


def test_testing_app_runs_tasks_eagerly():
    app_config = create_app('testing')
    assert app_config is TestingConfig
    assert celery.conf.task_always_eager
