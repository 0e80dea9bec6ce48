import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, ROOT)

from app import create_app  # noqa: E402
from app.config import load_profile  # noqa: E402
from app.corpus.synth import synth_corpus, write_synthetic  # noqa: E402
from app.experiments import build_model  # noqa: E402


@pytest.fixture(scope='session', autouse=True)
def app_config():
    return create_app('testing')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def micro_profile():
    return load_profile('micro')


@pytest.fixture(scope='session')
def micro_corpus(micro_profile):
    return synth_corpus(micro_profile.synth, max_tokens=micro_profile.train.max_tokens,
                        max_utterances=micro_profile.train.max_utterances)


@pytest.fixture
def micro_model(micro_profile, micro_corpus):
    return build_model(micro_profile.model, micro_profile.train, micro_corpus.vocab, micro_corpus.train)


@pytest.fixture
def micro_contexts(micro_corpus):
    return micro_corpus.train[:4]


@pytest.fixture(scope='session')
def corpus_dir(tmp_path_factory, micro_corpus):
    out = tmp_path_factory.mktemp('corpus')
    write_synthetic(micro_corpus, str(out))
    return out
