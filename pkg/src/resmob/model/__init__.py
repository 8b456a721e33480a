from .ftest import perm_f_test
from .gam import (GamDesign, GamError, GamFit, Linear, RandomIntercept, Smooth, fit_pgam,
                  linear_operator, r_squared, wald_forms)
from .gravity import (DyadFrame, MobilityFrame, build_dyad_frame, build_mobility_frame,
                      fit_edu_imputer, fit_mobility_model, fit_network_model,
                      geodesic_distance, load_language_families, mobility_design,
                      network_design, write_smooth_table)
from .splines import SplineBasis, SplineError, cubic_spline_basis
