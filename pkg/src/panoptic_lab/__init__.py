"""Position-sensitive embeddings, mean-shift instance clustering and panoptic evaluation."""

from .clustering import (BandwidthTable, ClusterResult, bandwidth_search, bin_seeds,
                         classwise_cluster, default_grid, mean_shift, merge_modes)
from .core import (IGNORE, ClassInfo, ClassTable, ConfigurationError, CoordinateGrid,
                   DimensionError, LossHyperParams, append_coordinates, canonicalize_instances,
                   downsample_labels, make_coordinate_grid)
from .datagen import (GenerationError, Scene, SceneSpec, ThingRecipe, generate_scene,
                      generate_scenes, mirror_scene, toy_spec)
from .fusion import ConsistencyError, PanopticSegmentation, Segment, fuse
from .loss import (ClusterStats, EmptyLossError, LossBreakdown, discriminative_loss,
                   discriminative_loss_grad, finite_diff_check, multi_scale_loss, semantic_loss)
from .metrics import (Matches, PQStats, evaluate, match_segments, miou, panoptic_quality,
                      segment_f1)
from .network import (AdadeltaState, ConvLayer, Network, TrainConfig, TrainingError,
                      adadelta_step, backward, extend_input_channels, forward, init_network,
                      load_model, predict, save_model, train)
from .pipeline import BenchReport, run_benchmark, run_pipeline

__version__ = "0.1.0"
