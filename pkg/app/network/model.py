import logging
from dataclasses import dataclass

import numpy as np

from app.config import ModelConfig
from app.corpus.vocabulary import Vocabulary
from app.errors import CheckpointError, DimensionError
from app.models import PAD_INDEX
from app.network.fusion import FusionNetwork
from app.network.interaction import InteractionBypass, InteractionNetwork
from app.network.sticker_encoder import StickerEncoder
from app.network.utterance_encoder import UtteranceEncoder
from app.numerics.params import ParamStore, load_checkpoint, save_checkpoint
from app.numerics.tensor import no_grad

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """Contexts packed into arrays; utterances are left-padded to a common count"""
    context_ids: list
    images: np.ndarray          # (S, H, W, C) unique stickers
    tags: np.ndarray            # (S,)
    candidates: np.ndarray      # (B, C) indices into images
    token_ids: np.ndarray       # (B, U, T)
    token_mask: np.ndarray      # (B, U, T)
    present: np.ndarray         # (B, U)
    positive: np.ndarray        # (B,)

    @property
    def size(self):
        return len(self.context_ids)


def make_batch(contexts):
    if not contexts:
        raise DimensionError('cannot batch an empty list of contexts')
    widths = {len(c.candidates) for c in contexts}
    lengths = {c.utterances[0].max_tokens for c in contexts}
    if len(widths) != 1 or len(lengths) != 1:
        raise DimensionError(f'contexts in one batch need equal candidate counts and token lengths, '
                             f'got {sorted(widths)} / {sorted(lengths)}')
    n_tokens = lengths.pop()
    n_utts = max(len(c.utterances) for c in contexts)

    slots, images, tags = {}, [], []
    candidates = np.zeros((len(contexts), widths.pop()), dtype=np.intp)
    token_ids = np.full((len(contexts), n_utts, n_tokens), PAD_INDEX, dtype=np.int64)
    token_mask = np.zeros((len(contexts), n_utts, n_tokens), dtype=bool)
    present = np.zeros((len(contexts), n_utts), dtype=bool)
    for b, context in enumerate(contexts):
        for c, sticker in enumerate(context.candidates):
            if sticker.sticker_id not in slots:
                slots[sticker.sticker_id] = len(images)
                images.append(sticker.image)
                tags.append(sticker.emoji_tag)
            candidates[b, c] = slots[sticker.sticker_id]
        offset = n_utts - len(context.utterances)
        for u, utterance in enumerate(context.utterances):
            token_ids[b, offset + u] = utterance.token_ids
            token_mask[b, offset + u] = utterance.mask
            present[b, offset + u] = True
    return Batch(
        context_ids=[c.context_id for c in contexts],
        images=np.stack(images),
        tags=np.asarray(tags, dtype=np.intp),
        candidates=candidates,
        token_ids=token_ids,
        token_mask=token_mask,
        present=present,
        positive=np.asarray([c.positive_index for c in contexts], dtype=np.intp)
    )


@dataclass
class ForwardResult:
    scores: object
    emoji_logits: object
    stickers: object
    utterances: object
    interaction: object
    fusion: object


class StickerResponseSelector:
    """Sticker encoder, utterance encoder, interaction and fusion over one ParamStore"""

    def __init__(self, config=None, store=None):
        self.config = config or ModelConfig()
        self.config.validate()
        rng = np.random.default_rng(self.config.seed)
        fresh = store is None
        self.store = ParamStore(self.config.dtype)
        self.sticker_encoder = StickerEncoder(self.store, self.config, rng, classify=self.config.classify)
        self.utterance_encoder = UtteranceEncoder(self.store, self.config, rng)
        if self.config.interaction:
            self.interaction = InteractionNetwork(self.store, self.config, rng)
        else:
            self.interaction = InteractionBypass(self.store, self.config, rng)
        self.fusion = FusionNetwork(self.store, self.config, rng)
        if not fresh:
            self.load_arrays(store)
        logger.debug(f"Model with {len(self.store)} tensors / {self.store.size()} parameters")

    def load_arrays(self, store):
        expected, given = self.store.shapes(), store.shapes()
        if set(expected) != set(given):
            missing = sorted(set(expected) - set(given))
            extra = sorted(set(given) - set(expected))
            raise CheckpointError(f'checkpoint parameters do not match the model (missing {missing[:5]}, '
                                  f'unexpected {extra[:5]})')
        for name, shape in expected.items():
            if given[name] != shape:
                raise CheckpointError(f'parameter {name!r}: checkpoint shape {given[name]} != model {shape}')
            self.store[name].data = store[name].data.astype(self.store.dtype)
            self.store.m[name] = store.m[name].astype(self.store.dtype)
            self.store.v[name] = store.v[name].astype(self.store.dtype)
        self.store.step = store.step

    def forward(self, batch, training=False, rng=None):
        stickers = self.sticker_encoder.encode(batch.images)
        cells = stickers.cells[batch.candidates]                     # (B, C, P, d)
        flat = stickers.flat[batch.candidates]                       # (B, C, d)
        utterances = self.utterance_encoder.encode(batch.token_ids, batch.token_mask,
                                                   training=training, rng=rng)

        b, u = batch.present.shape
        state = self.interaction(
            cells.reshape(b, cells.shape[1], 1, *cells.shape[2:]),
            flat.reshape(b, flat.shape[1], 1, flat.shape[2]),
            utterances.h.reshape(b, 1, *utterances.h.shape[1:]),
            batch.token_mask[:, None]
        )                                                            # q2: (B, C, U, d)
        trace = self.fusion(state.q2, present=batch.present[:, None, :], training=training, rng=rng)
        logits = self.sticker_encoder.classify_emoji(stickers.flat) if self.config.classify else None
        return ForwardResult(scores=trace.score, emoji_logits=logits, stickers=stickers,
                             utterances=utterances, interaction=state, fusion=trace)

    def score_batch(self, contexts):
        """Eval-mode candidate scores, shape (B, C)."""
        with no_grad():
            return self.forward(make_batch(contexts)).scores.data.copy()

    def save(self, path, vocab=None, extra=None):
        meta = {'model': self.config.to_dict(), 'vocab': vocab.words[2:] if vocab else None}
        meta.update(extra or {})
        return save_checkpoint(path, self.store, meta)

    @classmethod
    def load(cls, path):
        """Model and vocabulary stored in a checkpoint."""
        store, meta = load_checkpoint(path)
        if 'model' not in meta:
            raise CheckpointError(f'{path}: checkpoint carries no model configuration')
        model = cls(ModelConfig.from_dict(meta['model']), store=store)
        vocab = Vocabulary(meta['vocab']) if meta.get('vocab') is not None else None
        return model, vocab, meta

    def check_vocabulary(self, vocab):
        if vocab is not None and len(vocab) != self.config.vocab_size:
            raise CheckpointError(f'corpus vocabulary of {len(vocab)} entries does not match the '
                                  f'checkpoint ({self.config.vocab_size})')
