"""EViT-UNet: a U-shaped hybrid conv/attention segmentation network on a small numpy autodiff core."""

from .config import EViTUNetConfig, RunConfig, tiny_config, toy_config
from .model import EViTUNet, build, forward

__version__ = "0.1.0"

__all__ = ["EViTUNet", "EViTUNetConfig", "RunConfig", "build", "forward", "tiny_config", "toy_config"]
