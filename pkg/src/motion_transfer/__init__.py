"""Three-stage human motion transfer.

Stage 1 generates the target's parsing sequence from the source poses,
stage 2 synthesizes the foreground guided by appearance flow, and stage 3
fuses foreground and background with temporal feedback. An FVD evaluator
scores generated videos against real ones.
"""

from .pose import (N_JOINTS, POSE_MAP_CHANNELS, PoseSequence, load_keypoints,
                   rasterize_pose, save_keypoints, select_appearance_frame,
                   smooth_sequence)
from .regions import (CropRecord, NoForegroundError, ParsingMap, composite,
                      crop_foreground, restore_to_frame)
from .flow_stage import (CorrespondenceScene, FlowRegressor, FlowStageConfig,
                         Triangle, flow_losses, oracle_flow, rescale_flow,
                         warp_by_flow)
from .parsing_stage import (ParsingGenerator, ParsingStageConfig,
                            generate_parsing, parsing_losses,
                            train_parsing_stage)
from .foreground_stage import (DualPathGenerator, ForegroundStageConfig,
                               PatchDiscriminator, WarpBlock,
                               adversarial_losses, generate_foreground,
                               train_foreground_stage)
from .fusion_stage import (FusionNetwork, FusionStageConfig, fuse_sequence,
                           fuse_step, train_fusion_stage)
from .perceptual import (IdentityExtractor, RandomFeatureExtractor,
                         perceptual_loss)
from .fvd import (GaussianStats, RandomProjectionEmbedder, compute_fvd,
                  extract_clips, frechet_distance)
from .pipeline import (DatasetManifest, PipelineConfig, PipelineModels,
                       build_models, prepare, transfer)

__version__ = "0.1.0"
