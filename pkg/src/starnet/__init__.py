"""Star-Net: single image desnowing with star-type skip connections,
multi-stage interactive transformer blocks, and degenerate filter modules."""

from .attention import (
    CBAM,
    ChannelAttention,
    CrissCrossAttention,
    MultiScaleAttention,
    WindowAttention,
    channel_shuffle,
    from_patch_tokens,
    scaled_dot_attention,
    to_patch_tokens,
)
from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .data import (
    DatasetManifest,
    SnowSynthesisSpec,
    from_tensor,
    load_image,
    load_manifest,
    random_crop_pair,
    save_image,
    synthesize_pair,
    to_tensor,
)
from .dfm import ChannelGating, DegenerateFilter, SpatialSelfAttention
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    ParamError,
    ShapeError,
    StarNetError,
    TrainingError,
)
from .losses import FeatureExtractor, LossBundle, perceptual_loss, smooth_l1, total_loss
from .metrics import psnr, ssim
from .mit import (
    ConvGatingNetwork,
    MITBlock,
    MultiScaleDeepConv,
    MultiStageAttention,
    PlainTransformerBlock,
)
from .model import (
    ABLATION_FLAGS,
    StarNet,
    StarNetConfig,
    ablate,
    build,
    full_config,
    preset_config,
    tiny_config,
)
from .ssc import DfmChain, SameLevelAggregator, StarAggregator
from .train import (
    TrainConfig,
    TrainState,
    evaluate,
    fixed_precision,
    load_train_setup,
    lr_at_epoch,
    make_optimizer,
    train,
)
from .visualize import (
    dump_features,
    feature_grid,
    save_loss_curve,
    save_metric_figure,
    write_loss_log,
    write_metric_report,
)

__version__ = "0.1.0"
