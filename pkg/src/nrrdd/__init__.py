"""nrrdd: dataset distillation via critical-patch discovery, non-critical region
refinement, and distance-based relabeling."""

from .cam import CamMap, MaskMap, compute_cam, finalize_cam, non_critical_mask
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .data import ImageDataset, generate_shapes_dataset, load_dataset, subset_dataset
from .discovery import (CiddConfig, Patch, PatchPool, SyntheticManifest, SyntheticRecord,
                        assemble, crop_candidates, discover, load_manifest,
                        save_manifest, select_hardest, select_top_cam)
from .labels import (DbrRecord, LabelStore, dbr_distances, read_store, relabel,
                     soft_label, write_store)
from .mixing import AugmentSpec, apply, sample_spec
from .models import ForwardTrace, build_model, confidence, forward, input_gradient
from .refine import RefineConfig, bn_loss, lr_loss, masked_step, org_loss, refine_dataset
from .snapshot import ModelSnapshot
from .teacher import TeacherConfig, train_teacher
from .transfer import (TransferConfig, baseline_objective, dbr_objective, evaluate,
                       student_distances, train_student)

__version__ = "0.1.0"
