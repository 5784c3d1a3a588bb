"""dualdiff: toy latent diffusion trained jointly for text-conditional image
generation and diffusion-based image-text alignment."""

from . import _malloc  # noqa: F401  (allocator tuning; see module docstring)
from .autodiff import (Parameter, Tape, Tensor, backward, conv2d,
                       finite_diff_check, l2_normalize, layer_norm, matmul,
                       group_norm, softmax)
from .config import RunConfig, load_config, make_config
from .errors import (CheckpointChecksumError, CheckpointError,
                     CheckpointTruncatedError, CheckpointVersionError,
                     ConfigError, ShapeError)
from .model import ModelBundle, build_model, bundle_from_checkpoint
from .sampling import GuidanceConfig, guided_combine, sample_image, sample_text_embedding
from .schedule import (NoiseSchedule, data_to_noise, ddim_step, make_cosine,
                       make_linear, q_sample_image, q_sample_text,
                       select_timesteps)

__version__ = "0.1.0"
