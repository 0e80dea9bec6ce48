from app.corpus.loader import (  # noqa: F401
    corpus_statistics, load_contexts, load_corpus, validate_corpus, write_corpus
)
from app.corpus.sampling import build_candidates, sample_negatives  # noqa: F401
from app.corpus.synth import SyntheticCorpus, synth_corpus, write_synthetic  # noqa: F401
from app.corpus.vocabulary import Vocabulary, tokenize_and_pad  # noqa: F401
