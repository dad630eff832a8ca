"""Boosted text classifiers from black-box masked-language-model queries.

The workflow: render prompts around inputs, cache the mask-position token
distributions once per (prompt, example), learn one-token-per-class
verbalizers in closed form with token screening, and ensemble the resulting
weak learners with multi-class adaptive boosting. After caching, training
and evaluation never touch the model again.
"""

from .booster import (
    BoostConfig,
    BoostRun,
    Ensemble,
    boost,
    ensemble_from_json_dict,
    majority_vote_ensemble,
    predict,
)
from .cache import PromptMatrix, ensure_cached, read_matrix, write_matrix
from .core import (
    Dataset,
    LabeledExample,
    MaskDistribution,
    PromptTemplate,
    builtin_prompts,
    load_dataset,
    load_prompts,
    render,
    save_dataset,
    save_prompts,
)
from .lm import HttpLmClient, LmClient, SyntheticMaskedLm, synthetic_oracle, verify_client_contract
from .pipeline import (
    EvalReport,
    FewShotSpec,
    RunConfig,
    evaluate,
    load_run_config,
    prepare_run,
    refine_prompts,
    sample_few_shot,
)
from .verbalizer import Verbalizer, WeakLearner, l1_assignment, learn_weak_learner, score_matrix, screen

__version__ = "0.1.0"

__all__ = [
    "BoostConfig",
    "BoostRun",
    "Dataset",
    "Ensemble",
    "EvalReport",
    "FewShotSpec",
    "HttpLmClient",
    "LabeledExample",
    "LmClient",
    "MaskDistribution",
    "PromptMatrix",
    "PromptTemplate",
    "RunConfig",
    "SyntheticMaskedLm",
    "Verbalizer",
    "WeakLearner",
    "boost",
    "builtin_prompts",
    "ensemble_from_json_dict",
    "ensure_cached",
    "evaluate",
    "l1_assignment",
    "learn_weak_learner",
    "load_dataset",
    "load_prompts",
    "load_run_config",
    "majority_vote_ensemble",
    "predict",
    "prepare_run",
    "read_matrix",
    "refine_prompts",
    "render",
    "sample_few_shot",
    "save_dataset",
    "save_prompts",
    "score_matrix",
    "screen",
    "synthetic_oracle",
    "verify_client_contract",
    "write_matrix",
]
