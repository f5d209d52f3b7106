"""Evaluation toolkit for Bayesian causal discovery posteriors on small linear Gaussian SCMs."""

__version__ = "0.1.0"

from .graphs import Dag, GraphFamily, GraphFamilySpec, cpdag_of, enumerate_dags, random_graph, shd  # noqa: E402
from .scm import LinearGaussianScm, Scenario, ScmPriorSpec, draw_scm, sample  # noqa: E402
from .exact_posterior import NigPrior, exact_graph_posterior, sample_exact, scenario_prior  # noqa: E402
from .approx_models import ModelKind, ModelSpec, realize_model  # noqa: E402
from .metrics import evaluate_all  # noqa: E402
from .entropy import kl_entropy, posterior_entropy  # noqa: E402

__all__ = [
    "Dag", "GraphFamily", "GraphFamilySpec", "cpdag_of", "enumerate_dags", "random_graph", "shd",
    "LinearGaussianScm", "Scenario", "ScmPriorSpec", "draw_scm", "sample",
    "NigPrior", "exact_graph_posterior", "sample_exact", "scenario_prior",
    "ModelKind", "ModelSpec", "realize_model", "evaluate_all", "kl_entropy", "posterior_entropy",
]
