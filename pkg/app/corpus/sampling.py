import numpy as np

from app.errors import CorpusError


def sample_negatives(sticker_set, positive, n, rng_seed):
    """Draw ``n`` distinct stickers other than ``positive`` from its sticker set.

    The result order is determined by the seed alone.
    """
    pool = []
    seen = {positive.sticker_id}
    for sticker in sticker_set:
        if sticker.sticker_id not in seen:
            seen.add(sticker.sticker_id)
            pool.append(sticker)
    if len(pool) < n:
        raise CorpusError(f'sticker set of {len(pool)} others cannot supply {n} negatives '
                          f'for {positive.sticker_id}')
    rng = np.random.default_rng(rng_seed)
    picked = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in picked]


def build_candidates(sticker_set, positive, n, rng_seed):
    """Positive plus ``n`` negatives in shuffled order; returns (candidates, positive_index)."""
    negatives = sample_negatives(sticker_set, positive, n, rng_seed)
    rng = np.random.default_rng([rng_seed, n])
    positive_index = int(rng.integers(0, n + 1))
    candidates = negatives[:positive_index] + [positive] + negatives[positive_index:]
    return candidates, positive_index
