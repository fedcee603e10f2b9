"""dropforge: uncertainty profiling of classifiers under MC dropout, plus a
genetic search that forges inputs with uncommon uncertainty patterns."""

from .attacks import AdversarialResult, AttackConfig, bim, fgsm, run_attack
from .defenses import (DefenseReport, DetectorVerdict, LogitDetector, MutationDetector,
                       SqueezeDetector, calibrate_threshold, evaluate_defense)
from .errors import (ConfigError, DatasetError, DropforgeError, ModelFormatError,
                     NonFiniteError, ShapeError)
from .evaluation import (ReportRow, ScoredSample, SummaryRow, auc_roc, emit_report,
                         metric_auc_scores, read_report, summarize)
from .ga import (GaConfig, GenerationReport, Individual, Population, evolve,
                 load_ga_config, objective_met)
from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, Softmax
from .modelio import (LabeledDataset, build_toy_convnet, fixture_models, load_csv_dataset,
                      load_idx, load_model, load_toy_digits, save_csv_dataset, save_model)
from .network import Network, with_mc_dropout
from .rng import RngStream
from .train import TrainHistory, accuracy, sgd_train
from .uncertainty import (McRecord, PatternLabel, PatternThresholds, UncertaintyProfile,
                          categorize, categorize_values, mc_execute, mi, pcs, pe, profile,
                          vr, vro)

__version__ = "0.1.0"
