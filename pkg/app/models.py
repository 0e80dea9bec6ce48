from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
import pytz

from app.errors import CorpusError

PAD_INDEX = 0
OOV_INDEX = 1


@dataclass
class Utterance:
    """One turn of a dialog context, padded or truncated to a fixed length"""
    token_ids: np.ndarray
    mask: np.ndarray
    words: tuple = ()

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.validate()

    def validate(self):
        if self.token_ids.ndim != 1 or self.token_ids.shape != self.mask.shape:
            raise CorpusError(f'utterance token ids {self.token_ids.shape} and mask {self.mask.shape} disagree')
        length = self.length
        if not self.mask[:length].all() or self.mask[length:].any():
            raise CorpusError('utterance mask must mark a prefix of real tokens')
        if np.any(self.token_ids[length:] != PAD_INDEX):
            raise CorpusError('padded utterance slots must hold the pad index')

    @property
    def length(self):
        return int(self.mask.sum())

    @property
    def max_tokens(self):
        return int(self.token_ids.shape[0])

    def __repr__(self):
        return f'<Utterance {" ".join(self.words[:6])}>'

    def to_dict(self):
        return {
            'words': list(self.words),
            'token_ids': self.token_ids.tolist(),
            'mask': self.mask.astype(int).tolist()
        }


@dataclass
class Sticker:
    """A sticker image with values in [0, 1] and its emoji tag"""
    sticker_id: str
    image: np.ndarray
    emoji_tag: int
    set_id: str = ''
    path: str = ''

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float64)
        if image.ndim == 2:
            image = image[:, :, None]
        self.image = image
        self.validate()

    def validate(self):
        if self.image.ndim != 3 or self.image.shape[2] not in (1, 3):
            raise CorpusError(f'sticker {self.sticker_id}: image shape {self.image.shape} is not HxWx1 or HxWx3')
        if self.image.size and (self.image.min() < 0.0 or self.image.max() > 1.0):
            raise CorpusError(f'sticker {self.sticker_id}: pixel values outside [0, 1]')
        if self.emoji_tag < 0:
            raise CorpusError(f'sticker {self.sticker_id}: negative emoji tag')

    @property
    def size(self):
        return self.image.shape[0]

    def __eq__(self, other):
        return isinstance(other, Sticker) and self.sticker_id == other.sticker_id

    def __hash__(self):
        return hash(self.sticker_id)

    def __repr__(self):
        return f'<Sticker {self.sticker_id} tag={self.emoji_tag}>'

    def to_dict(self):
        return {
            'id': self.sticker_id,
            'path': self.path,
            'emoji_tag': int(self.emoji_tag),
            'set_id': self.set_id
        }


@dataclass
class DialogContext:
    """Chronological utterances plus a candidate sticker set with one positive"""
    context_id: str
    utterances: list
    candidates: list
    positive_index: int
    max_utterances: int = 20

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 1 <= len(self.utterances) <= self.max_utterances:
            raise CorpusError(f'context {self.context_id}: {len(self.utterances)} utterances, '
                              f'expected 1..{self.max_utterances}')
        if not self.candidates:
            raise CorpusError(f'context {self.context_id}: no candidates')
        if not 0 <= self.positive_index < len(self.candidates):
            raise CorpusError(f'context {self.context_id}: positive index {self.positive_index} '
                              f'outside {len(self.candidates)} candidates')
        ids = [c.sticker_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise CorpusError(f'context {self.context_id}: duplicate candidates')
        widths = {u.max_tokens for u in self.utterances}
        if len(widths) != 1:
            raise CorpusError(f'context {self.context_id}: utterances padded to different lengths {widths}')

    @property
    def positive(self):
        return self.candidates[self.positive_index]

    @property
    def negatives(self):
        return [c for i, c in enumerate(self.candidates) if i != self.positive_index]

    def truncated(self, n):
        """Copy keeping only the most recent ``n`` utterances."""
        return DialogContext(
            context_id=self.context_id,
            utterances=self.utterances[-n:],
            candidates=self.candidates,
            positive_index=self.positive_index,
            max_utterances=self.max_utterances
        )

    def __repr__(self):
        return f'<DialogContext {self.context_id} utterances={len(self.utterances)}>'

    def to_dict(self):
        return {
            'id': self.context_id,
            'utterances': [list(u.words) for u in self.utterances],
            'candidates': [c.to_dict() for c in self.candidates],
            'positive_index': self.positive_index
        }


@dataclass
class RankingResult:
    """Scores of one context's candidates and the rank of its positive"""
    context_id: str
    scores: np.ndarray
    positive_index: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)

    @property
    def rank(self):
        # ties go against the positive
        positive = self.scores[self.positive_index]
        others = np.delete(self.scores, self.positive_index)
        return int(np.sum(others >= positive)) + 1

    def to_dict(self):
        return {
            'context_id': self.context_id,
            'scores': self.scores.tolist(),
            'positive_index': self.positive_index,
            'rank': self.rank
        }


@dataclass
class SimilarityBucket:
    """Contexts whose mean candidate similarity falls in [low, high)"""
    low: float
    high: float
    context_ids: list = field(default_factory=list)
    recall_at_1: float = None

    @property
    def count(self):
        return len(self.context_ids)

    def to_dict(self):
        return {
            'low': self.low,
            'high': self.high,
            'count': self.count,
            'context_ids': list(self.context_ids),
            'recall_at_1': self.recall_at_1
        }


@dataclass
class RunManifest:
    """Resolved configuration and outputs of one command invocation"""
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    started_at: datetime = field(default_factory=lambda: datetime.now(pytz.UTC))
    finished_at: datetime = None

    def finish(self, **outputs):
        self.outputs.update(outputs)
        self.finished_at = datetime.now(pytz.UTC)
        return self

    def to_dict(self):
        return {
            'command': self.command,
            'config': self.config,
            'inputs': self.inputs,
            'outputs': self.outputs,
            'started_at': self.started_at.isoformat() if self.started_at else None,
            'finished_at': self.finished_at.isoformat() if self.finished_at else None
        }
