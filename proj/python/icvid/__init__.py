"""In-context conditional video generation: numpy surface over the C++ core.

Configs travel as flat JSON strings (the same snapshot format the CLI
writes); videos are [frames, h, w, 3] float32 arrays in [0, 1].
"""

from icvid._core import (
    DataError,
    Model,
    NumericError,
    ShapeError,
    UsageError,
    build_id,
    config_hash,
    corpus_sample,
    decode_video,
    default_config,
    encode_video,
    oracle_score,
    sample_path,
    train_run,
)

__all__ = [
    "DataError",
    "Model",
    "NumericError",
    "ShapeError",
    "UsageError",
    "build_id",
    "config_hash",
    "corpus_sample",
    "decode_video",
    "default_config",
    "encode_video",
    "oracle_score",
    "sample_path",
    "train_run",
]
