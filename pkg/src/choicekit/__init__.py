"""choicekit: discrete choice models with directional domain-knowledge
penalties enforced through pseudo sample pairs, plus the standard
post-estimation analyses (market shares, probability sweeps, values of time).
"""

from .autodiff import ParameterStore, Tape, Tensor, backward, finite_difference_check
from .constraints import (
    ConstraintSet,
    MonotonicityConstraint,
    PseudoPairs,
    audit_constraints,
    build_constraint_set,
    generate_pseudo_pairs,
    violation_loss,
)
from .data import (
    Dataset,
    FeatureSchema,
    Observation,
    SyntheticMnl,
    build_dataset,
    generate_survey_file,
    generate_synthetic_mnl,
    load_raw,
    prepare_survey_dataset,
    swissmetro_schema,
)
from .errors import (
    ChoicekitError,
    ConfigError,
    DomainError,
    IngestionError,
    StructuralError,
    TrainingError,
    UsageError,
)
from .evaluation import (
    curve_monotonicity_report,
    expected_sweep_directions,
    market_shares,
    probability_sweep,
    vot_per_observation,
    vot_stats,
)
from .models import (
    AsuDnnModel,
    ChoiceModel,
    DnnModel,
    MnlModel,
    build_model,
    extract_mnl_vot,
    load_model,
    save_model,
)
from .training import TrainConfig, TrainHistory, evaluate_split, nll_loss, total_loss, train

__version__ = "0.1.0"
