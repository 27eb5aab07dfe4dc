"""Bayesian generalized additive regression for compositional data.

A composition (vector of strictly positive shares) lives on the simplex;
the isometric log-ratio transform carries it to ordinary Euclidean space,
where each coordinate gets its own additive predictor under a joint
multivariate Gaussian likelihood fitted by gradient-based MCMC.  Explained
variability is summarized by compositional R-squared measures alongside
WAIC for model comparison.
"""

from .errors import CodagamError
from .evaluation import (
    ComparisonResult,
    R2Draws,
    bm_coda_r2,
    br_coda_r2,
    compare_r2,
    univariate_bayes_r2,
    waic,
)
from .fitting import FitResult, fit, predict
from .hmc import PosteriorDraws, SamplerConfig, diagnostics, sample
from .ilr import (
    IlrBasis,
    IlrCoordinates,
    build_basis,
    ilr,
    ilr_inverse,
    ilr_inverse_sample,
    ilr_sample,
)
from .model import (
    Dataset,
    DesignBundle,
    Intercept,
    Linear,
    ModelSpec,
    PriorSpec,
    RandomIntercept,
    Smooth,
    Tensor,
    build_design,
    log_likelihood,
    log_posterior_and_gradient,
    make_target,
)
from .simplex import (
    Composition,
    CompositionSample,
    aitchison_dist,
    aitchison_inner,
    aitchison_norm,
    center,
    closure,
    closure_matrix,
    perturb,
    power,
    total_variance,
    uniform,
)
from .simulate import (
    GamSimConfig,
    LinearSimConfig,
    bivariate_f1,
    bivariate_f2,
    gu_wahba,
    simulate_gam,
    simulate_linear,
    simulate_soil_like,
    sine_f,
)
from .smooth import (
    SmoothBlock,
    SmoothSpec,
    bspline_design,
    build_smooth_block,
    difference_penalty,
    reparameterize,
    reparameterize_tensor,
    tensor_design,
)
from .usda import classify_usda, classify_usda_many

__version__ = "0.1.0"
