import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from app.errors import ConfigError


class Config:
    """Base configuration class"""

    # Paths
    DATA_DIR = os.environ.get('SRS_DATA_DIR') or 'data'
    CHECKPOINT_DIR = os.environ.get('SRS_CHECKPOINT_DIR') or 'checkpoints'
    EXPERIMENTS_CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'experiments_config')

    # Numerics
    DTYPE = os.environ.get('SRS_DTYPE') or 'float64'

    # Redis settings
    REDIS_HOST = os.environ.get('REDIS_HOST') or 'localhost'
    REDIS_PORT = os.environ.get('REDIS_PORT') or '6379'
    REDIS_DB = os.environ.get('REDIS_DB') or '0'
    REDIS_URL = f"redis://{REDIS_HOST}:{REDIS_PORT}/{REDIS_DB}"

    # Celery settings
    CELERY_BROKER_URL = os.environ.get('CELERY_BROKER_URL') or REDIS_URL
    CELERY_RESULT_BACKEND = os.environ.get('CELERY_RESULT_BACKEND') or REDIS_URL
    CELERY_TASK_ALWAYS_EAGER = (os.environ.get('CELERY_TASK_ALWAYS_EAGER') or 'false').lower() == 'true'

    # Logging
    LOG_LEVEL = os.environ.get('LOG_LEVEL') or 'INFO'
    LOG_FILE = os.environ.get('LOG_FILE') or None


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False


class TestingConfig(Config):
    """Configuration used by the test suite"""
    DEBUG = True
    CELERY_TASK_ALWAYS_EAGER = True
    LOG_FILE = None


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


class _Section:
    """Mixin giving the hyperparameter dataclasses dict conversion."""

    def to_dict(self):
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @classmethod
    def from_dict(cls, data):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"{cls.__name__}: unknown keys {unknown}")
        values = {}
        for key, value in data.items():
            if isinstance(value, list):
                value = tuple(value)
            values[key] = value
        section = cls(**values)
        section.validate()
        return section

    def updated(self, **overrides):
        """Copy with the non-None overrides applied (flags beat file values)."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        section = replace(self, **changes)
        section.validate()
        return section

    def validate(self):
        pass


@dataclass
class ModelConfig(_Section):
    vocab_size: int = 2
    hidden: int = 100
    grid_size: int = 4
    image_size: int = 128
    channels: int = 1
    conv_channels: tuple = (8, 16, 16, 32)
    emoji_classes: int = 10
    dropout: float = 0.1
    scale_attention: bool = False
    normalize_pooling: bool = False
    classify: bool = True
    interaction: bool = True
    fusion_rnn: bool = True
    dtype: str = 'float64'
    seed: int = 0

    def validate(self):
        if self.hidden < 1 or self.grid_size < 1 or self.vocab_size < 2:
            raise ConfigError('hidden and grid_size must be >= 1 and vocab_size >= 2')
        if len(self.conv_channels) != 4:
            raise ConfigError('conv_channels needs one width per convolutional stage (4)')
        if self.image_size % 16:
            raise ConfigError(f'image_size {self.image_size} is not divisible by 16')
        if (self.image_size // 16) % self.grid_size:
            raise ConfigError(f'grid_size {self.grid_size} does not divide the '
                              f'{self.image_size // 16}x{self.image_size // 16} feature map')
        if self.channels not in (1, 3):
            raise ConfigError('channels must be 1 or 3')
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError('dropout must lie in [0, 1)')
        if self.dtype not in ('float32', 'float64'):
            raise ConfigError(f'unsupported dtype {self.dtype}')


@dataclass
class TrainConfig(_Section):
    batch_size: int = 32
    lr: float = 1e-4
    margin: float = 0.3
    lambda_cls: float = 1.0
    max_utterances: int = 20
    max_tokens: int = 30
    negatives: int = 9
    epochs: int = 200
    seed: int = 0
    no_classify: bool = False
    no_din: bool = False
    no_fusion_rnn: bool = False
    no_pretrain: bool = False
    pretrain_epochs: int = 0
    pretrain_lr: float = 1e-3
    converge_threshold: float = 0.9
    checkpoint_every: int = 0

    def validate(self):
        counts = ('batch_size', 'max_utterances', 'max_tokens', 'negatives', 'epochs')
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f'{name} must be >= 1')
        if self.margin <= 0:
            raise ConfigError('margin must be > 0')
        if self.lambda_cls < 0:
            raise ConfigError('lambda_cls must be >= 0')
        if self.lr <= 0:
            raise ConfigError('lr must be > 0')

    def apply_ablations(self, model_config):
        """Model structure implied by the ablation switches."""
        return model_config.updated(
            classify=False if self.no_classify else None,
            interaction=False if self.no_din else None,
            fusion_rnn=False if self.no_fusion_rnn else None,
        )

    @property
    def effective_pretrain_epochs(self):
        if self.no_pretrain or self.no_classify:
            return 0
        return self.pretrain_epochs


@dataclass
class SynthSpec(_Section):
    pairs: int = 200
    test_pairs: int = 100
    classes: int = 10
    sets: int = 4
    stickers_per_class: int = 1
    vocab_size: int = 300
    topic_words: int = 8
    signal: float = 0.4
    min_utterances: int = 2
    max_utterances: int = 8
    min_words: int = 3
    max_words: int = 10
    negatives: int = 9
    image_size: int = 128
    seed: int = 7

    def validate(self):
        if self.classes < 1 or self.sets < 1 or self.stickers_per_class < 1:
            raise ConfigError('classes, sets and stickers_per_class must be >= 1')
        if self.pairs < 1 or self.test_pairs < 0:
            raise ConfigError('pairs must be >= 1 and test_pairs >= 0')
        if self.vocab_size <= self.classes * self.topic_words:
            raise ConfigError(f'vocab_size {self.vocab_size} leaves no filler words for '
                              f'{self.classes} classes x {self.topic_words} topic words')
        if not 0.0 <= self.signal <= 1.0:
            raise ConfigError('signal must lie in [0, 1]')
        if not 1 <= self.min_utterances <= self.max_utterances:
            raise ConfigError('need 1 <= min_utterances <= max_utterances')
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError('need 1 <= min_words <= max_words')
        if self.image_size < 16:
            raise ConfigError('image_size must be >= 16')


@dataclass
class ExperimentProfile:
    """Sections read from one experiments_config/*.json file."""
    name: str
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def to_dict(self):
        return {
            'name': self.name,
            'model': self.model.to_dict(),
            'train': self.train.to_dict(),
            'synth': self.synth.to_dict()
        }


def load_profile(path_or_name=None):
    """Load an experiment profile by path or by name under experiments_config/."""
    if path_or_name is None:
        return ExperimentProfile(name='default')

    path = path_or_name
    if not os.path.exists(path):
        path = os.path.join(Config.EXPERIMENTS_CONFIG_DIR, f'{path_or_name}.json')
    if not os.path.exists(path):
        raise ConfigError(f'Config file not found: {path_or_name}')

    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f'Invalid JSON in config file {path}: {e}') from e

    unknown = sorted(set(data) - {'name', 'model', 'train', 'synth'})
    if unknown:
        raise ConfigError(f'{path}: unknown sections {unknown}')

    return ExperimentProfile(
        name=data.get('name', os.path.splitext(os.path.basename(path))[0]),
        model=ModelConfig.from_dict(data.get('model', {})),
        train=TrainConfig.from_dict(data.get('train', {})),
        synth=SynthSpec.from_dict(data.get('synth', {}))
    )
