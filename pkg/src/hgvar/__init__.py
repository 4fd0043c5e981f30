"""
Hierarchical global VAR with factor stochastic volatility.

Modules
-------
model_core     dimensions, data containers, design matrices, global stacking
priors_mcmc    priors, conditional samplers and the Gibbs driver
sv_factors     factor and stochastic-volatility samplers
structural     Cholesky identification, impulse responses, FEVD, classification
data_pipeline  CSV I/O, transforms, Gini, spline disaggregation, spatial weights
analysis       synthetic data and the response-on-covariates regression
cli            command-line entry point
"""
__version__ = "0.1.0"
