"""Synthetic sticker corpus for desk-scale experiments.

Every emoji class owns a glyph (a regular polygon with a class-specific side
count, fill and rotation) and a handful of topic words. Sticker sets share a
drawing style. A context's utterances mix the positive class's topic words
with filler words, so the text-to-sticker mapping is learnable.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from app.corpus.loader import VOCAB_FILE, save_image, write_corpus
from app.corpus.sampling import build_candidates
from app.corpus.vocabulary import Vocabulary, tokenize_and_pad
from app.errors import ConfigError
from app.models import DialogContext, Sticker

logger = logging.getLogger(__name__)

TRAIN_FILE = 'train.jsonl'
TEST_FILE = 'test.jsonl'
MANIFEST_FILE = 'manifest.json'


@dataclass
class SyntheticCorpus:
    spec: object
    train: list
    test: list
    stickers: dict
    vocab: Vocabulary
    glyphs: dict = field(default_factory=dict)

    def manifest(self):
        return {
            'spec': self.spec.to_dict(),
            'glyphs': self.glyphs,
            'sets': {name: [s.sticker_id for s in members] for name, members in self.stickers.items()}
        }


def glyph_for_class(emoji_class):
    return {
        'sides': 3 + emoji_class % 5,
        'filled': (emoji_class // 5) % 2 == 0,
        'rotation': 17.0 * (emoji_class // 10)
    }


def style_for_set(set_index, size):
    return {
        'background': (23 * set_index) % 64,
        'foreground': 255 - (31 * set_index) % 96,
        'line_width': max(1, size // 32) * (1 + set_index % 2),
        'scale': 0.55 + 0.1 * (set_index % 3)
    }


def draw_glyph(glyph, style, size, offset=(0.0, 0.0), spin=0.0):
    """Render one glyph as a single-channel [0, 1] image of ``size`` x ``size``."""
    canvas = Image.new('L', (size, size), color=style['background'])
    draw = ImageDraw.Draw(canvas)
    cx = size / 2.0 + offset[0]
    cy = size / 2.0 + offset[1]
    radius = style['scale'] * size / 2.0
    start = math.radians(glyph['rotation'] + spin) - math.pi / 2.0
    points = [
        (cx + radius * math.cos(start + 2.0 * math.pi * k / glyph['sides']),
         cy + radius * math.sin(start + 2.0 * math.pi * k / glyph['sides']))
        for k in range(glyph['sides'])
    ]
    if glyph['filled']:
        draw.polygon(points, fill=style['foreground'])
    else:
        draw.line(points + points[:1], fill=style['foreground'], width=style['line_width'])
    pixels = np.asarray(canvas, dtype=np.uint8)
    return (pixels.astype(np.float64) / 255.0)[:, :, None]


def make_sticker_sets(spec, rng):
    sets = {}
    for s in range(spec.sets):
        set_id = f'set{s}'
        style = style_for_set(s, spec.image_size)
        members = []
        for c in range(spec.classes):
            for v in range(spec.stickers_per_class):
                jitter = spec.image_size / 16.0
                offset = tuple(rng.uniform(-jitter, jitter, size=2)) if v else (0.0, 0.0)
                spin = float(rng.uniform(-5.0, 5.0)) if v else 0.0
                members.append(Sticker(
                    sticker_id=f'{set_id}-c{c}-{v}',
                    image=draw_glyph(glyph_for_class(c), style, spec.image_size, offset, spin),
                    emoji_tag=c,
                    set_id=set_id,
                    path=f'stickers/{set_id}/c{c}-{v}.png'
                ))
        sets[set_id] = members
    return sets


def topic_words(emoji_class, count):
    return [f'c{emoji_class}w{k}' for k in range(count)]


def filler_words(spec):
    return [f'w{k}' for k in range(spec.vocab_size - spec.classes * spec.topic_words)]


def make_dialog(spec, rng, emoji_class, fillers):
    topics = topic_words(emoji_class, spec.topic_words)
    turns = []
    for _ in range(int(rng.integers(spec.min_utterances, spec.max_utterances + 1))):
        length = int(rng.integers(spec.min_words, spec.max_words + 1))
        from_topic = rng.random(length) < spec.signal
        words = [
            topics[int(rng.integers(len(topics)))] if hit else fillers[int(rng.integers(len(fillers)))]
            for hit in from_topic
        ]
        turns.append(words)
    return turns


def _draw_pairs(spec, rng, sets, count, prefix, fillers):
    drafts = []
    set_ids = sorted(sets)
    for i in range(count):
        members = sets[set_ids[int(rng.integers(len(set_ids)))]]
        positive = members[int(rng.integers(len(members)))]
        candidates, positive_index = build_candidates(
            members, positive, spec.negatives, int(rng.integers(2 ** 31))
        )
        turns = make_dialog(spec, rng, positive.emoji_tag, fillers)
        drafts.append((f'{prefix}-{i:05d}', turns, candidates, positive_index))
    return drafts


def synth_corpus(spec, max_tokens=30, max_utterances=20):
    """Deterministic corpus for ``spec`` (a :class:`SynthSpec`)."""
    spec.validate()
    if spec.classes * spec.stickers_per_class < spec.negatives + 1:
        raise ConfigError(f'{spec.classes} classes x {spec.stickers_per_class} stickers per set '
                          f'cannot supply {spec.negatives} negatives')
    if spec.max_utterances > max_utterances:
        raise ConfigError(f'synthetic dialogs of {spec.max_utterances} turns exceed the '
                          f'{max_utterances}-utterance context limit')

    rng = np.random.default_rng(spec.seed)
    sets = make_sticker_sets(spec, rng)
    fillers = filler_words(spec)
    train_drafts = _draw_pairs(spec, rng, sets, spec.pairs, 'train', fillers)
    test_drafts = _draw_pairs(spec, rng, sets, spec.test_pairs, 'test', fillers)

    vocab = Vocabulary.build(turn for _, turns, _, _ in train_drafts for turn in turns)

    def realise(drafts):
        return [
            DialogContext(
                context_id=context_id,
                utterances=[tokenize_and_pad(words, max_tokens, vocab) for words in turns],
                candidates=candidates,
                positive_index=positive_index,
                max_utterances=max_utterances
            )
            for context_id, turns, candidates, positive_index in drafts
        ]

    corpus = SyntheticCorpus(
        spec=spec,
        train=realise(train_drafts),
        test=realise(test_drafts),
        stickers=sets,
        vocab=vocab,
        glyphs={str(c): glyph_for_class(c) for c in range(spec.classes)}
    )
    logger.info(f"Synthesized {len(corpus.train)} train / {len(corpus.test)} test contexts "
                f"over {spec.sets} sticker sets (seed {spec.seed})")
    return corpus


def write_synthetic(corpus, out_dir):
    """Write corpus files, sticker images, vocabulary and the glyph manifest."""
    os.makedirs(out_dir, exist_ok=True)
    all_stickers = [s for members in corpus.stickers.values() for s in members]
    train_path = write_corpus(os.path.join(out_dir, TRAIN_FILE), corpus.train, write_images=False)
    test_path = write_corpus(os.path.join(out_dir, TEST_FILE), corpus.test, write_images=False)
    for sticker in all_stickers:
        save_image(os.path.join(out_dir, sticker.path), sticker.image)
    corpus.vocab.save(os.path.join(out_dir, VOCAB_FILE))
    with open(os.path.join(out_dir, MANIFEST_FILE), 'w', encoding='utf-8') as f:
        json.dump(corpus.manifest(), f, sort_keys=True, indent=2)
    return {'train': train_path, 'test': test_path, 'stickers': len(all_stickers)}
