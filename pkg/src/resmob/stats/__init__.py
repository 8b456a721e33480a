from .linfit import LineFit, LinFitError, linear_fit
from .pca import PcaError, PcaResult, pca
from .permutation import (NpcAnovaResult, PermutationError, TestResult, npc_anova,
                          partial_perm_test, permutation_stream, robust_stats)
from .spearman import smooth_integrals, spearman_perm_test
