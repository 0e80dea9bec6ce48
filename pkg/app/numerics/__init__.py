from app.numerics.tensor import Tensor, as_tensor, concat, no_grad, stack  # noqa: F401
from app.numerics.functional import (  # noqa: F401
    GRUParams, conv2d, cross_entropy, dropout, embedding, gru_cell, layer_norm,
    linear, masked_max, sigmoid_score, softmax, softmax_row
)
from app.numerics.params import (  # noqa: F401
    ParamStore, adam_step, grad_check, load_checkpoint, save_checkpoint
)
