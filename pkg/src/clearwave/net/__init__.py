from clearwave.net.model import (
    EmbeddingConfig,
    NetConfig,
    UNet,
    frequency_positional_embeddings,
    init_params,
    unet_forward,
    unet_backward,
    pooling_lookahead_frames,
)
from clearwave.net.checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "EmbeddingConfig",
    "NetConfig",
    "UNet",
    "frequency_positional_embeddings",
    "init_params",
    "unet_forward",
    "unet_backward",
    "pooling_lookahead_frames",
    "save_checkpoint",
    "load_checkpoint",
]
