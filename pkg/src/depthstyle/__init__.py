"""Depth-aware fast neural style transfer: per-style feed-forward
generators trained under a content + style + depth objective, one-pass
stylization, and a structure-preservation metric suite."""

from .depth import (BlurDepthEstimator, DepthEstimator, DepthMap, MidasDepthEstimator,
                    depth_backend, depth_loss, estimate_depth, export_depth_png)
from .errors import (ArchiveError, ArchiveVersionError, ConfigurationError,
                     NumericalError, SetupError)
from .evaluation import (HashDigest, MethodTable, PairMetrics, ahash, compare_methods,
                         decolorize, depth_map_ssim, dhash, evaluate_pair,
                         hash_similarity, hist_similarity, saliency, ssim)
from .images import ImageTensor, from_array, load_image, save_image
from .inference import BatchReport, StylizeRequest, stylize, stylize_batch
from .model import (TransformNet, TransformNetConfig, init_transform_net,
                    instance_normalize, load_net, parameter_checksum, save_net)
from .perceptual import (FeatureExtractor, StyleTarget, content_loss, extract_features,
                         gram_matrix, style_loss_layer, style_loss_total, style_target,
                         stub_extractor, vgg16_extractor)
from .training import (ImageFolderSource, SweepPoint, TrainConfig, TrainingLog,
                       load_batch, load_checkpoint, save_checkpoint, sweep_depth_weight,
                       total_loss, train)

__version__ = "0.1.0"
