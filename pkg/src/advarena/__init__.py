"""Desk-scale arena for evaluating adversarial robustness: decision-based
attacks run against reference classifiers through a query-budgeted label
oracle, scored by median minimal L2 perturbation, with successive-halving
tournament rounds and byte-replayable record logs.
"""

from .attacks import (Attack, AttackContext, AttackResult, DeadlineExceeded,
                      OutOfBudget, additive_gaussian_attack,
                      binary_search_refine, boundary_attack, builtin_attacks,
                      interpolation_attack, pointwise_attack,
                      salt_and_pepper_attack, transfer_attack_iterative,
                      transfer_attack_single_step)
from .config import ArenaConfig, load_config, save_config
from .evaluation import EvalSettings, evaluate_pair, run_single
from .httpserve import HttpOracle, OracleServer, serve_meter, serve_model
from .images import Dataset, Image, Sample, grey_image, make_image
from .models import (FrozenNoiseModel, LinearSoftmaxModel, accuracy,
                     adversarial_train, load_model,
                     min_adversarial_distance_linear, save_model, train)
from .oracle import (ComplianceReport, DecisionOracle, QueryMeter, Verdict,
                     check_determinism, check_statelessness, is_adversarial,
                     metered_predict, raw_verdict, verdict_is_adversarial)
from .rng import RngKey
from .scoring import (RecordSet, RunRecord, attack_score, d_max,
                      failed_record, format_record_line, l2_distance,
                      min_distance_per_sample, model_score, parse_record_line,
                      quantize_distance, score_table, valid_record)
from .synthdata import generate_synthetic_dataset
from .tensorio import (TensorFormatError, load_dataset, load_image,
                       read_tensor, save_dataset, save_image, write_tensor)
from .tournament import (Arena, ArenaError, Leaderboard, LogicalClock,
                         Registry, RegistrationResult, ReplayReport,
                         RoundState, StagePlan, Submission, assign_targets,
                         replay_records, stage_schedule)

__version__ = "0.1.0"
