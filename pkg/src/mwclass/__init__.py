"""Low-rank multi-way linear classification (DWD and SVM) for
samples x dim1 x dim2 arrays."""
from ._accel import USING_NUMBA
from .classifiers import (DwdConfig, LinearModel, SvmConfig, dwd_fit, dwd_objective,
                          dwd_penalty_from_distance, median_pairwise_distance, svm_fit,
                          svm_objective)
from .evaluation import (BootstrapReport, EvalReport, bootstrap_weights, cross_validate, loocv,
                         rank_selection, t_statistic)
from .io import FormatError, ingest, load_model, save_model
from .multiway import FULL, FitOptions, FitTrace, MultiwayModel, fit, fit_full, fit_rank1, fit_rankr
from .simulation import (Scenario, bayes_classify, bayes_error, calibrate_signal, generate,
                         run_experiment)
from .tensor import DimensionError, LabeledDataset, Tensor3, kron, thin_svd, unvectorize, vectorize

__version__ = "0.1.0"
