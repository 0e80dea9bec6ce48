import json
import logging
import os
from collections import Counter

import numpy as np

from app.errors import CorpusError
from app.models import OOV_INDEX, PAD_INDEX, Utterance

logger = logging.getLogger(__name__)

PAD_TOKEN = '<pad>'
OOV_TOKEN = '<unk>'


class Vocabulary:
    """Word-level vocabulary; index 0 pads, index 1 stands for unknown words"""

    def __init__(self, words=()):
        self.words = [PAD_TOKEN, OOV_TOKEN]
        self.index = {PAD_TOKEN: PAD_INDEX, OOV_TOKEN: OOV_INDEX}
        for word in words:
            self.add(word)

    def add(self, word):
        if word not in self.index:
            self.index[word] = len(self.words)
            self.words.append(word)
        return self.index[word]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.words == other.words

    def encode(self, words):
        return [self.index.get(w, OOV_INDEX) for w in words]

    def decode(self, ids):
        return [self.words[i] for i in ids]

    @classmethod
    def build(cls, sentences, max_size=None):
        """Vocabulary over word lists, most frequent first (ties alphabetical)."""
        counts = Counter(word for sentence in sentences for word in sentence)
        ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        if max_size is not None:
            ranked = ranked[:max(0, max_size - 2)]
        vocab = cls(word for word, _ in ranked)
        logger.info(f"Built vocabulary of {len(vocab)} entries from {sum(counts.values())} tokens")
        return vocab

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({'words': self.words[2:]}, f, ensure_ascii=False, indent=1)
        return path

    @classmethod
    def load(cls, path):
        if not os.path.exists(path):
            raise CorpusError(f'Vocabulary file not found: {path}')
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise CorpusError(f'Invalid JSON in vocabulary file {path}: {e}') from e
        return cls(data.get('words', []))


def split_words(text):
    """Whitespace tokenization; word lists pass through unchanged."""
    if text is None:
        return []
    if isinstance(text, str):
        return text.split()
    return [str(w) for w in text]


def tokenize_and_pad(text, max_tokens, vocab):
    """Map words to ids, keep the first ``max_tokens`` and pad the rest with zeros."""
    if max_tokens < 1:
        raise CorpusError(f'max_tokens must be >= 1, got {max_tokens}')
    words = split_words(text)[:max_tokens]
    ids = np.full(max_tokens, PAD_INDEX, dtype=np.int64)
    mask = np.zeros(max_tokens, dtype=bool)
    ids[:len(words)] = vocab.encode(words)
    mask[:len(words)] = True
    return Utterance(token_ids=ids, mask=mask, words=tuple(words))
