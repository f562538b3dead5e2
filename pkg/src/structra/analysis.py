"""Structure-transfer diagnostics: transition graphs, matrix distances and
before/after state-probability traces."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .structal import StructuralPrior, memm_decode, transition_only

EDGE_THRESHOLD = 0.05
PROVENANCE = ("shared", "time-only", "text-only")


class AnalysisInputError(ValueError):
    pass


@dataclass
class Edge:
    source: int
    target: int
    weight_text: float
    weight_time: float
    provenance: str


@dataclass
class TransitionGraph:
    n_nodes: int
    threshold: float
    edges: list[Edge] = field(default_factory=list)

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        text = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        time = np.zeros_like(text)
        for e in self.edges:
            text[e.source, e.target] = e.provenance in ("shared", "text-only")
            time[e.source, e.target] = e.provenance in ("shared", "time-only")
        return text, time

    def count(self, provenance: str) -> int:
        return sum(e.provenance == provenance for e in self.edges)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph(threshold=float(self.threshold))
        g.add_nodes_from(range(self.n_nodes))
        for e in self.edges:
            g.add_edge(e.source, e.target, weight_text=e.weight_text, weight_time=e.weight_time,
                       provenance=e.provenance)
        return g


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise AnalysisInputError(f"matrix shapes differ: {a.shape} vs {b.shape}")
    return a, b


def export_transition_graph(a_text, a_time, threshold: float = EDGE_THRESHOLD, path=None) -> TransitionGraph:
    """Edges ``i -> j`` wherever either matrix has ``A[i, j] >= threshold``.

    With ``path`` the graph is also written as GraphML (typed edge attributes
    ``weight_text``, ``weight_time``, ``provenance``; nodes in index order).
    """
    a_text, a_time = _check_pair(a_text, a_time)
    if a_text.ndim != 2 or a_text.shape[0] != a_text.shape[1]:
        raise AnalysisInputError("transition matrices must be square")
    in_text, in_time = a_text >= threshold, a_time >= threshold
    graph = TransitionGraph(a_text.shape[0], float(threshold))
    for i, j in zip(*np.nonzero(in_text | in_time)):
        kind = "shared" if in_text[i, j] and in_time[i, j] else ("text-only" if in_text[i, j] else "time-only")
        graph.edges.append(Edge(int(i), int(j), float(a_text[i, j]), float(a_time[i, j]), kind))
    if path is not None:
        nx.write_graphml(graph.to_networkx(), path)
    return graph


def read_transition_graph(path) -> TransitionGraph:
    g = nx.read_graphml(path, node_type=int)
    graph = TransitionGraph(g.number_of_nodes(), float(g.graph.get("threshold", EDGE_THRESHOLD)))
    for i, j, attrs in g.edges(data=True):
        graph.edges.append(Edge(int(i), int(j), float(attrs["weight_text"]), float(attrs["weight_time"]),
                                str(attrs["provenance"])))
    return graph


def l1_distance(a, b, reduction: str = "mean") -> float:
    """Elementwise L1 distance; ``"mean"`` divides the absolute sum by the element count."""
    a, b = _check_pair(a, b)
    total = float(np.abs(a - b).sum())
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / a.size if a.size else 0.0
    raise ValueError(f"unknown reduction {reduction!r}")


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def paired_state_probs(gamma, prior: StructuralPrior, mode: str = "softmax") -> tuple[np.ndarray, np.ndarray]:
    """Transition-only and adjusted distributions for one patch sequence ``gamma[P, N]``.

    The transition-only row at ``p`` runs the decoding step from the adjusted
    row ``p - 1`` with a uniform patch posterior.
    """
    gamma = np.asarray(gamma, dtype=float)
    adjusted = memm_decode(gamma, prior, mode).data
    before = np.empty_like(adjusted)
    before[0] = transition_only(None, prior, mode).data
    if gamma.shape[0] > 1:
        before[1:] = transition_only(adjusted[:-1], prior, mode).data
    return before, adjusted


def state_prob_trace(model, window) -> list[dict]:
    """Per-patch records for a single normalized univariate window ``[T]``."""
    if getattr(model, "epochs_trained", 1) == 0:
        warnings.warn("tracing states of an untrained model", stacklevel=2)
    window = np.asarray(window, dtype=float).reshape(1, -1)
    fwd = model.run(window)
    gamma = fwd.gamma.data[0]
    before, after = paired_state_probs(gamma, model.prior, model.config.memm_mode)
    return [{"patch": p, "transition_only": before[p].tolist(), "adjusted": after[p].tolist(),
             "cluster": gamma[p].tolist(), "total_variation": total_variation(before[p], after[p])}
            for p in range(gamma.shape[0])]


def write_trace(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def structure_report(a_text, a_time, threshold: float = EDGE_THRESHOLD) -> dict:
    graph = export_transition_graph(a_text, a_time, threshold)
    return {"l1_mean": l1_distance(a_text, a_time), "l1_sum": l1_distance(a_text, a_time, "sum"),
            **{f"edges_{kind}": graph.count(kind) for kind in PROVENANCE}}
