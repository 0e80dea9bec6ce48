from app.network.fusion import FusionNetwork, FusionTrace, run_gru, submulti  # noqa: F401
from app.network.interaction import (  # noqa: F401
    InteractionBypass, InteractionNetwork, InteractionState, attend, combine, integrate,
    pooled_attention, relation_matrix
)
from app.network.model import Batch, StickerResponseSelector, make_batch  # noqa: F401
from app.network.sticker_encoder import StickerEncoder, StickerRepr, classification_loss  # noqa: F401
from app.network.utterance_encoder import AttentionBlock, UtteranceEncoder, UtteranceRepr  # noqa: F401
