"""Find cognition gaps in small CNN classifiers with constrained worst-case image search."""

from .adversarial_search import IterationRecord, SearchTrace, fgsm_step, select_worst, worst_case_search
from .cnn_model import ModelWeights, TrainConfig, build_model, load_weights, predict, save_weights, train
from .dataset_forge import LabeledImageSet, generate_dataset, glyph_mask
from .invariance_spec import ChangeSpec, apply_constraints, load_mask, parse_change_spec
from .report import GapReport, gap_verdict, render_report, run_attack, top_k

__version__ = "0.1.0"
