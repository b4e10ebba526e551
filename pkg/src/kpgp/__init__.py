"""Kernel-packet factorization for one-dimensional Gaussian process regression."""

from .gp import TrainedModel, fit, grid_search, load_model, log_likelihood, log_likelihood_grad, optimize
from .kernels import IBM, Matern, Product, Sum, parse_kernel
from .kp import KPFactorization, build_kp
from .multidim import additive_kp, product_kp
from .oracle import DenseModel, dense_fit_predict, dense_loglik

__all__ = [
    "IBM", "Matern", "Product", "Sum", "parse_kernel",
    "KPFactorization", "build_kp",
    "TrainedModel", "fit", "load_model", "log_likelihood", "log_likelihood_grad", "grid_search", "optimize",
    "additive_kp", "product_kp",
    "DenseModel", "dense_fit_predict", "dense_loglik",
]
