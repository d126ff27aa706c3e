"""Point-cloud GNN engine with geometry-constrained attention.

Two message-passing variants over learned embedding spaces: the original
size-weighted KNN rule and the normalized, distance-only rule that lets a
radius graph carry all the attention.  Includes a tape-based float64
autodiff engine, grid neighbor search, a desk-scale trainer and a
benchmark harness.
"""

from .conv import (GravLayerParams, NodeBlock, attention_norm, attention_orig,
                   gravnet_conv, gravnetnorm_conv, l1_normalize)
from .data import (DatasetSplit, Jet, compute_features, load_jets, save_jets,
                   synth_generate)
from .engine import Tape, Value, backward, finite_diff_check
from .errors import (ContractError, EngineError, EvaluationError, IngestionError,
                     InputError, ParameterError, ShapeError)
from .metrics import accuracy, metrics_report, rejection_at_efficiency, roc_auc
from .mlp import MlpLayer, MlpParams, init_mlp, mlp_forward
from .model import (BlockConfig, TaggerConfig, TaggerParams, build_tagger,
                    load_checkpoint, param_count, predict_scores,
                    save_checkpoint, tagger_forward)
from .spatial import (EdgeList, GridIndex, build_grid, knn_neighbors,
                      neighborhood_stats, radius_neighbors)
from .train import TrainConfig, adam_step, bce_loss, train

__version__ = "0.1.0"
