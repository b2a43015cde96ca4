"""Click-guided ViT interactive segmentation (C++ core)."""

from ._vitclick import (
    Click,
    Model,
    Polarity,
    decode_rle,
    encode_rle,
    forward_flops,
    next_eval_click,
    nfl_loss,
    sample_random_clicks,
    synth_benchmark,
    train,
)

__all__ = [
    "Click",
    "Model",
    "Polarity",
    "decode_rle",
    "encode_rle",
    "forward_flops",
    "next_eval_click",
    "nfl_loss",
    "sample_random_clicks",
    "synth_benchmark",
    "train",
]
