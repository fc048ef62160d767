"""Noisy causal-reasoning benchmark toolkit: seeded instance generation from discrete
structural causal models, exact inference, structured noise, and evaluation."""

from __future__ import annotations

from .dag import Dag, Motif, PerturbKind, edge_metrics, perturb_graph, sample_dag, topo_order, validate
from .inference import (
    Event, Query, QueryKind, answer_query, counterfactual_probability, format_answer,
    interventional_probability, probability_of_necessity, query_probability,
)
from .scm import Cpt, Scm, VarDomain, VariableMeta, compile_canonical, sample_mechanisms, sample_world, validate_scm

__version__ = "0.1.0"

__all__ = [
    "Cpt", "Dag", "Event", "Motif", "PerturbKind", "Query", "QueryKind", "Scm", "VarDomain",
    "VariableMeta", "answer_query", "compile_canonical", "counterfactual_probability",
    "edge_metrics", "format_answer", "interventional_probability", "perturb_graph",
    "probability_of_necessity", "query_probability", "sample_dag", "sample_mechanisms",
    "sample_world", "topo_order", "validate", "validate_scm",
]
