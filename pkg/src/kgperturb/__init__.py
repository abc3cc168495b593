"""Knowledge-graph perturbation and faithfulness auditing toolkit."""

from .kg import KnowledgeGraph, apply_edits, load_triples, n_hop_neighbors, relation_histogram, relation_subgraph, save_triples
from .metrics import MetricReport, ats, local_clustering, sc2d, sd2
from .perturb import HeuristicKind, PerturbationRecord, perturb_scale
from .scorer import ScorerParams, ScorerTrainConfig, train_scorer

__version__ = "0.1.0"
