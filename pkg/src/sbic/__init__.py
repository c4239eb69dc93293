"""Similarity-based classification for imbalanced binary data.

Joint optimization of similarity weights and absent minority points through a
penalized likelihood, with cluster-based undersampling ensembles and a
ROC/AUC evaluation stack.
"""

from .core import (LinkFunction, link_apply, loo_score, loo_scores, similarity,
                   similarity_gradients, similarity_matrix, test_score,
                   test_scores, weighted_distance, weighted_distance_matrix)
from .data import (GaussianSpec, LabeledDataset, generate_toy, load_csv,
                   normalize, save_csv, stratified_folds)
from .ensemble import (ClusterAssignment, SbicEnsemble, build_undersampled,
                       derive_seeds, ensemble_predict, ensemble_predict_batch,
                       kmeans, load_ensemble, save_ensemble, train_ensemble)
from .evaluation import (CrossValidationResult, RankMatrix, RocCurve, auc,
                         average_roc, cross_validate, fa_md,
                         friedman_statistic, rank_matrix, roc_curve)
from .lambda_search import (LambdaGrid, compute_thresholds, grid_select)
from .model import (FittedModel, PenaltyConfig, SolverConfig, fit_esf,
                    gradient_absent, gradient_weights, load_model,
                    log_likelihood, penalized_objective, predict_proba,
                    predict_proba_batch, residual_system, save_model,
                    solve_stationary)

__version__ = "0.1.0"
