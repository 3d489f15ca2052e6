"""Query-guided set prediction for grounded multimodal named entity recognition."""

from .assignment import Assignment, brute_force_assignment, solve_hungarian
from .config import QFNetConfig, RunConfig
from .core import (BoundingBox, CandidateRegion, CapacityError, ConfigError, Example, InvalidInputError,
                   Quadruple, TypeSchema, UnmatchableRegionError, iou, region_target)
from .data import SyntheticSpec, generate_synthetic, load_jsonl, save_jsonl
from .encoders import Vocabulary
from .heads import DecodedEntity, decode
from .matching import cost_matrix, fixed_order_loss, match, pad_gold, set_loss
from .metrics import ScoredPrediction, full_report, score
from .model import GMNERModel
from .train import CheckpointError, benchmark, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
