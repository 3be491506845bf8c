"""Grasp rectangle detection from RGB-D images with multimodal deep networks."""

from .detection import (DetectionResult, Gripper, NoCandidates, SearchSpace, detect_exhaustive,
                        detect_two_stage, enumerate_rects, score_all, score_heatmap)
from .evaluation import (EvalReport, MetricConfig, cross_validate, evaluate, jaccard, point_metric,
                         rect_metric, split_folds)
from .network import (CascadeParams, ForwardActivations, NetworkParams, forward, init_params, load_model,
                      reconstruct, save_model, sigmoid)
from .patch import (Featurizer, ModalityMask, NormStats, PatchInput, extract_patch, extract_patches,
                    mask_scale)
from .rects import GraspRect
from .regularization import RegConfig
from .rgbd import AnnotatedScene, RgbdImage, estimate_normals, load_cornell, rgb_to_yuv, save_cornell
from .synth import SynthSpec, synth_scene
from .training import (LabeledDataset, TrainConfig, build_dataset, finetune, full_objective,
                       pretrain_layer, train_cascade, train_network)

__version__ = "0.1.0"
