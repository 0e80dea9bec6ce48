import logging

from celery import current_app as celery_app

from app.config import SynthSpec, load_profile
from app.errors import SRSError
from app.experiments import run_eval, run_synth, run_train

logger = logging.getLogger(__name__)


@celery_app.task(bind=True, max_retries=0)
def synthesize_corpus(self, spec, out_dir, max_tokens=30):
    """Generate a synthetic corpus from a SynthSpec dictionary"""
    try:
        outputs = run_synth(SynthSpec.from_dict(spec), out_dir, max_tokens=max_tokens)
        logger.info(f"Synthetic corpus written to {out_dir}")
        return {'status': 'success', **outputs}
    except SRSError as e:
        logger.error(f"Corpus synthesis failed: {e}")
        return {'status': 'error', 'message': str(e), 'exit_code': e.exit_code}


@celery_app.task(bind=True, max_retries=0)
def train_model(self, profile, corpus_path, out_dir, overrides=None, model_overrides=None):
    """Train a model from a profile name or path, with optional section overrides"""
    try:
        resolved = load_profile(profile)
        if overrides:
            resolved.train = resolved.train.updated(**overrides)
        if model_overrides:
            resolved.model = resolved.model.updated(**model_overrides)
        summary = run_train(resolved, corpus_path, out_dir)
        logger.info(f"Training finished after {summary['epochs']} epochs: {summary['checkpoint']}")
        return {'status': 'success', **summary}
    except SRSError as e:
        logger.error(f"Training failed: {e}")
        return {'status': 'error', 'message': str(e), 'exit_code': e.exit_code}


@celery_app.task(bind=True, max_retries=0)
def evaluate_model(self, checkpoint, corpus_path, sweep=None, similarity=False, out=None):
    """Evaluate a checkpoint on a corpus file"""
    try:
        report = run_eval(checkpoint, corpus_path, sweep=sweep, similarity=similarity, out=out)
        return {'status': 'success', **report}
    except SRSError as e:
        logger.error(f"Evaluation failed: {e}")
        return {'status': 'error', 'message': str(e), 'exit_code': e.exit_code}
