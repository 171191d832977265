"""Few-shot sound recognition: DSP front end, similarity functions and the
embedding model, backed by the C++ core."""

from ._core import (
    ConfigError,
    DataError,
    Model,
    NumericError,
    ShapeError,
    __version__,
    episode_loss,
    logmel,
    mix_noise,
    resample,
    sim_attentional,
    sim_attentional_trace,
    sim_pooled,
    sim_second_order,
    toy_clip,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Model",
    "NumericError",
    "ShapeError",
    "__version__",
    "episode_loss",
    "logmel",
    "mix_noise",
    "resample",
    "sim_attentional",
    "sim_attentional_trace",
    "sim_pooled",
    "sim_second_order",
    "toy_clip",
]
