from .assembly import (
    NAMED_CONFIGS,
    Model,
    ModelSpec,
    build,
    forward,
    forward_arrays,
    forward_batch,
    load_model,
    named_model_spec,
    save_model,
    spec_sidecar_path,
    stack_windows,
)
from .embeddings import TubeletConfig, feature_tokenize, positional_encoding, tubelet_embed
from .encoder import (
    EncoderConfig,
    causal_mask,
    encode,
    encoder_layer,
    init_encoder_params,
    multi_head_attention,
)
from .fusion import FusionConfig, ensemble_predict, fuse, head, init_fusion_params
from .vivit import (
    ViViTConfig,
    init_vivit_params,
    pool_tokens,
    vivit_factorised,
    vivit_forward,
    vivit_spatiotemporal,
)

__all__ = [
    "NAMED_CONFIGS",
    "Model",
    "ModelSpec",
    "build",
    "forward",
    "forward_arrays",
    "forward_batch",
    "load_model",
    "named_model_spec",
    "save_model",
    "spec_sidecar_path",
    "stack_windows",
    "TubeletConfig",
    "feature_tokenize",
    "positional_encoding",
    "tubelet_embed",
    "EncoderConfig",
    "causal_mask",
    "encode",
    "encoder_layer",
    "init_encoder_params",
    "multi_head_attention",
    "FusionConfig",
    "ensemble_predict",
    "fuse",
    "head",
    "init_fusion_params",
    "ViViTConfig",
    "init_vivit_params",
    "pool_tokens",
    "vivit_factorised",
    "vivit_forward",
    "vivit_spatiotemporal",
]
