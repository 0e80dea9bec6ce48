import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from app.errors import ConfigError, CorpusError, TrainingFault
from app.network.model import make_batch
from app.network.sticker_encoder import classification_loss
from app.numerics.params import adam_step
from app.numerics.tensor import as_tensor, no_grad

logger = logging.getLogger(__name__)


def hinge_loss(pos_score, neg_scores, margin=0.3):
    """Sum over negatives of max(0, neg - pos + margin); batches average over contexts."""
    pos, neg = as_tensor(pos_score), as_tensor(neg_scores)
    if neg.ndim == pos.ndim + 1:
        pos = pos.reshape(*pos.shape, 1)
    per_context = (neg - pos + margin).relu().sum(axis=-1)
    return per_context.mean() if per_context.ndim else per_context


def total_loss(rank_loss, cls_loss, lambda_cls=1.0):
    if cls_loss is None or lambda_cls == 0:
        return rank_loss
    return rank_loss + cls_loss * lambda_cls


def split_scores(scores, positive):
    """Positive scores (B,) and negative scores (B, C-1) of a (B, C) score tensor."""
    b, c = scores.shape
    rows = np.arange(b)
    negatives = np.array([[j for j in range(c) if j != p] for p in positive], dtype=np.intp)
    return scores[rows, positive], scores[rows[:, None], negatives]


@dataclass
class EpochRecord:
    epoch: int
    loss_rank: float
    loss_cls: float
    train_r10_1: float
    wall_time: float
    steps: int

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingResult:
    model: object
    history: list = field(default_factory=list)
    converged_epoch: int = None
    pretrain_accuracy: list = field(default_factory=list)
    checkpoint: str = None

    def summary(self):
        last = self.history[-1] if self.history else None
        return {
            'epochs': len(self.history),
            'steps': self.model.store.step,
            'final': last.to_dict() if last else None,
            'converged_epoch': self.converged_epoch,
            'pretrain_accuracy': self.pretrain_accuracy,
            'checkpoint': self.checkpoint
        }


def pretrain_sticker_encoder(model, stickers, epochs, lr=1e-3, batch_size=32, seed=0):
    """Train the convolutional encoder and emoji head alone on L_s.

    Returns the per-epoch classification accuracy. Optimizer state is reset
    afterwards so joint training starts from fresh moments.
    """
    if not model.config.classify:
        raise ConfigError('pre-training needs the emoji classification head')
    if not stickers:
        raise CorpusError('no stickers to pre-train on')
    encoder = model.sticker_encoder
    names = encoder.parameter_names()
    images = np.stack([s.image for s in stickers])
    tags = np.asarray([s.emoji_tag for s in stickers], dtype=np.intp)
    rng = np.random.default_rng([seed, 2])
    store = model.store
    accuracy = []

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(stickers))
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            store.zero_grad()
            loss = classification_loss(encoder.classify_emoji(encoder.encode(images[chunk]).flat), tags[chunk])
            if not loss.is_finite():
                raise TrainingFault(f'non-finite classification loss in pre-training epoch {epoch}')
            loss.backward()
            grads = store.grads()
            adam_step(store, {name: grads[name] for name in names}, lr)
        with no_grad():
            predicted = np.argmax(encoder.classify_emoji(encoder.encode(images).flat).data, axis=-1)
        accuracy.append(float(np.mean(predicted == tags)))
        logger.info(f"Pre-training epoch {epoch}: emoji accuracy {accuracy[-1]:.3f}")

    for name in store:
        store.m[name] = np.zeros_like(store.m[name])
        store.v[name] = np.zeros_like(store.v[name])
    store.step = 0
    store.zero_grad()
    return accuracy


class Trainer:
    """Mini-batch Adam training on hinge loss plus the weighted emoji loss"""

    def __init__(self, model, config, vocab=None, metrics_log=None, checkpoint_path=None):
        self.model = model
        self.config = config
        self.vocab = vocab
        self.metrics_log = metrics_log
        self.checkpoint_path = checkpoint_path
        self.shuffle_rng = np.random.default_rng(config.seed)
        self.dropout_rng = np.random.default_rng([config.seed, 1])

    def batch_loss(self, contexts, training=True):
        batch = make_batch(contexts)
        result = self.model.forward(batch, training=training, rng=self.dropout_rng)
        pos, neg = split_scores(result.scores, batch.positive)
        rank_loss = hinge_loss(pos, neg, self.config.margin)
        cls_loss = None
        if result.emoji_logits is not None:
            cls_loss = classification_loss(result.emoji_logits, batch.tags)
        return rank_loss, cls_loss, total_loss(rank_loss, cls_loss, self.config.lambda_cls)

    def step(self, contexts, where=''):
        store = self.model.store
        store.zero_grad()
        rank_loss, cls_loss, loss = self.batch_loss(contexts)
        if not loss.is_finite():
            ids = ', '.join(c.context_id for c in contexts[:5])
            raise TrainingFault(f'non-finite loss at {where} (contexts {ids} ...)')
        loss.backward()
        adam_step(store, store.grads(), self.config.lr)
        return rank_loss.item(), cls_loss.item() if cls_loss is not None else 0.0

    def prepare(self, contexts):
        if not contexts:
            raise CorpusError('cannot train on an empty corpus')
        limit = self.config.max_utterances
        return [c.truncated(limit) if len(c.utterances) > limit else c for c in contexts]

    def train_recall(self, contexts):
        from app.evaluator import recall_at_k, score_contexts
        return recall_at_k(score_contexts(self.model, contexts, self.config.batch_size), 1)

    def fit(self, contexts, stickers=None):
        contexts = self.prepare(contexts)
        result = TrainingResult(model=self.model)

        pretrain_epochs = self.config.effective_pretrain_epochs
        if pretrain_epochs:
            if stickers is None:
                stickers = list({s.sticker_id: s for c in contexts for s in c.candidates}.values())
            result.pretrain_accuracy = pretrain_sticker_encoder(
                self.model, stickers, pretrain_epochs, lr=self.config.pretrain_lr,
                batch_size=self.config.batch_size, seed=self.config.seed
            )

        if self.metrics_log:
            os.makedirs(os.path.dirname(os.path.abspath(self.metrics_log)), exist_ok=True)
            open(self.metrics_log, 'w', encoding='utf-8').close()

        for epoch in range(1, self.config.epochs + 1):
            started = time.perf_counter()
            order = self.shuffle_rng.permutation(len(contexts))
            rank_losses, cls_losses = [], []
            for number, start in enumerate(range(0, len(order), self.config.batch_size), start=1):
                chunk = [contexts[i] for i in order[start:start + self.config.batch_size]]
                rank_loss, cls_loss = self.step(chunk, where=f'epoch {epoch} batch {number}')
                rank_losses.append(rank_loss)
                cls_losses.append(cls_loss)

            record = EpochRecord(
                epoch=epoch,
                loss_rank=float(np.mean(rank_losses)),
                loss_cls=float(np.mean(cls_losses)),
                train_r10_1=self.train_recall(contexts),
                wall_time=time.perf_counter() - started,
                steps=self.model.store.step
            )
            result.history.append(record)
            self._log(record)
            if result.converged_epoch is None and record.train_r10_1 >= self.config.converge_threshold:
                result.converged_epoch = epoch
                logger.info(f"Train R@1 reached {self.config.converge_threshold} at epoch {epoch}")
            if self.checkpoint_path and self.config.checkpoint_every and epoch % self.config.checkpoint_every == 0:
                self.save(epoch)

        if self.checkpoint_path:
            result.checkpoint = self.save(self.config.epochs)
        return result

    def _log(self, record):
        logger.info(f"Epoch {record.epoch}: L_r={record.loss_rank:.4f} L_s={record.loss_cls:.4f} "
                    f"train R@1={record.train_r10_1:.3f} ({record.wall_time:.1f}s)")
        if self.metrics_log:
            with open(self.metrics_log, 'a', encoding='utf-8') as f:
                f.write(json.dumps(record.to_dict(), sort_keys=True) + '\n')

    def save(self, epoch):
        return self.model.save(self.checkpoint_path, self.vocab,
                               extra={'train': self.config.to_dict(), 'epoch': epoch})


def train(config, contexts, model, vocab=None, metrics_log=None, checkpoint_path=None):
    """Train ``model`` on ``contexts``; returns a :class:`TrainingResult`."""
    trainer = Trainer(model, config, vocab=vocab, metrics_log=metrics_log, checkpoint_path=checkpoint_path)
    return trainer.fit(contexts)
