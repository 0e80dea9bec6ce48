"""Line-delimited corpus records.

Each line of a corpus file is one JSON object::

    {"id": "train-00000",
     "utterances": ["first turn words", "second turn", ...],
     "candidates": [{"id": "set0-c3-0", "path": "stickers/set0/c3-0.png",
                     "emoji_tag": 3, "set_id": "set0"}, ...],
     "positive_index": 4}

Utterances are chronological; image paths are relative to the corpus file.
A ``vocab.json`` next to the corpus file fixes the vocabulary.
"""

import json
import logging
import os

import numpy as np
from PIL import Image

from app.corpus.vocabulary import Vocabulary, split_words, tokenize_and_pad
from app.errors import CorpusError
from app.models import DialogContext, Sticker

logger = logging.getLogger(__name__)

MAX_CONTEXT_UTTERANCES = 20
VOCAB_FILE = 'vocab.json'


class StickerImages:
    """Loads sticker images once per path, as float arrays in [0, 1]"""

    def __init__(self, base_dir, channels=1):
        self.base_dir = base_dir
        self.mode = 'L' if channels == 1 else 'RGB'
        self._cache = {}

    def load(self, relative_path):
        if relative_path in self._cache:
            return self._cache[relative_path]
        path = os.path.join(self.base_dir, relative_path)
        if not os.path.exists(path):
            raise CorpusError(f'Sticker image not found: {path}')
        try:
            with Image.open(path) as img:
                pixels = np.asarray(img.convert(self.mode), dtype=np.float64) / 255.0
        except OSError as e:
            raise CorpusError(f'Unreadable sticker image {path}: {e}') from e
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        self._cache[relative_path] = pixels
        return pixels


def save_image(path, image):
    """Write a [0, 1] image as an 8-bit PNG."""
    os.makedirs(os.path.dirname(path), exist_ok=True)
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    Image.fromarray(pixels).save(path, format='PNG')


def read_records(path):
    """Yield ``(line_number, record)`` for every non-blank line."""
    if not os.path.exists(path):
        raise CorpusError(f'Corpus file not found: {path}')
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f'{path}:{line_no}: malformed record: {e}') from e
            if not isinstance(record, dict):
                raise CorpusError(f'{path}:{line_no}: record is not an object')
            yield line_no, record


def parse_record(record, vocab, images, max_tokens=30, max_utterances=MAX_CONTEXT_UTTERANCES, where=''):
    """Build a :class:`DialogContext` from one decoded record."""
    for key in ('utterances', 'candidates', 'positive_index'):
        if key not in record:
            raise CorpusError(f'{where}: missing field {key!r}')
    utterances = record['utterances']
    candidates = record['candidates']
    if not isinstance(utterances, list) or not utterances:
        raise CorpusError(f'{where}: record has no utterances')
    if not isinstance(candidates, list) or not candidates:
        raise CorpusError(f'{where}: record has no candidates')

    for position, text in enumerate(utterances):
        if not isinstance(text, (str, list)) or (isinstance(text, list)
                                                 and not all(isinstance(w, str) for w in text)):
            raise CorpusError(f'{where}: utterance {position} must be a string or a list of words, '
                              f'got {text!r}')
    positive_index = _as_int(record['positive_index'], f'{where}: positive_index')

    stickers = []
    for position, item in enumerate(candidates):
        if not isinstance(item, dict) or 'path' not in item or 'emoji_tag' not in item:
            raise CorpusError(f'{where}: candidate {position} needs "path" and "emoji_tag"')
        if not isinstance(item['path'], str):
            raise CorpusError(f'{where}: candidate {position} path must be a string, got {item["path"]!r}')
        emoji_tag = _as_int(item['emoji_tag'], f'{where}: candidate {position} emoji_tag')
        try:
            sticker = Sticker(
                sticker_id=str(item.get('id', item['path'])),
                image=images.load(item['path']),
                emoji_tag=emoji_tag,
                set_id=str(item.get('set_id', '')),
                path=item['path']
            )
        except CorpusError as e:
            raise CorpusError(f'{where}: {e}') from e
        stickers.append(sticker)

    kept = utterances[-max_utterances:]
    try:
        return DialogContext(
            context_id=str(record.get('id', where)),
            utterances=[tokenize_and_pad(text, max_tokens, vocab) for text in kept],
            candidates=stickers,
            positive_index=positive_index,
            max_utterances=max_utterances
        )
    except (CorpusError, TypeError, ValueError) as e:
        raise CorpusError(f'{where}: {e}') from e


def _as_int(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise CorpusError(f'{what} must be an integer, got {value!r}')
    try:
        number = float(value)
    except ValueError as e:
        raise CorpusError(f'{what} must be an integer, got {value!r}') from e
    if not number.is_integer():
        raise CorpusError(f'{what} must be an integer, got {value!r}')
    return int(number)


def resolve_vocabulary(path):
    """The vocabulary next to ``path``, or one built from the file's own words."""
    vocab_path = os.path.join(os.path.dirname(os.path.abspath(path)), VOCAB_FILE)
    if os.path.exists(vocab_path):
        return Vocabulary.load(vocab_path)
    logger.warning(f"No {VOCAB_FILE} next to {path}; building vocabulary from the file")
    return Vocabulary.build(
        split_words(text) for _, record in read_records(path) for text in record.get('utterances', [])
    )


def load_corpus(path, vocab=None, max_tokens=30, max_utterances=MAX_CONTEXT_UTTERANCES, channels=1):
    """Stream the contexts of a corpus file, validating each record eagerly."""
    vocab = vocab or resolve_vocabulary(path)
    images = StickerImages(os.path.dirname(os.path.abspath(path)), channels=channels)
    for line_no, record in read_records(path):
        yield parse_record(record, vocab, images, max_tokens, max_utterances, where=f'{path}:{line_no}')


def load_contexts(path, **kwargs):
    contexts = list(load_corpus(path, **kwargs))
    if not contexts:
        raise CorpusError(f'Corpus file {path} holds no records')
    logger.info(f"Loaded {len(contexts)} contexts from {path}")
    return contexts


def validate_corpus(path, max_tokens=30, max_utterances=MAX_CONTEXT_UTTERANCES, channels=1):
    """Load every record; returns the record count or raises on the first bad one."""
    count = 0
    for _ in load_corpus(path, max_tokens=max_tokens, max_utterances=max_utterances, channels=channels):
        count += 1
    return count


def context_record(context):
    return {
        'id': context.context_id,
        'utterances': [' '.join(u.words) for u in context.utterances],
        'candidates': [c.to_dict() for c in context.candidates],
        'positive_index': context.positive_index
    }


def write_corpus(path, contexts, write_images=True):
    """Write contexts as records; sticker images go to their paths relative to ``path``."""
    base_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(base_dir, exist_ok=True)
    written = set()
    with open(path, 'w', encoding='utf-8') as f:
        for context in contexts:
            f.write(json.dumps(context_record(context), sort_keys=True, ensure_ascii=False) + '\n')
            if not write_images:
                continue
            for sticker in context.candidates:
                if not sticker.path:
                    raise CorpusError(f'sticker {sticker.sticker_id} has no image path to write to')
                if sticker.path not in written:
                    save_image(os.path.join(base_dir, sticker.path), sticker.image)
                    written.add(sticker.path)
    logger.info(f"Wrote {len(contexts)} records to {path}")
    return path


def corpus_statistics(contexts):
    """Pair count, words per utterance, utterances per context and sticker-set sizes."""
    utterances = [u for c in contexts for u in c.utterances]
    sets = {}
    for context in contexts:
        for sticker in context.candidates:
            sets.setdefault(sticker.set_id, set()).add(sticker.sticker_id)
    return {
        'pairs': len(contexts),
        'avg_words_per_utterance': float(np.mean([u.length for u in utterances])) if utterances else 0.0,
        'avg_utterances_per_context': float(np.mean([len(c.utterances) for c in contexts])) if contexts else 0.0,
        'sticker_sets': len(sets),
        'avg_stickers_per_set': float(np.mean([len(s) for s in sets.values()])) if sets else 0.0,
        'unique_stickers': len({s.sticker_id for c in contexts for s in c.candidates})
    }
