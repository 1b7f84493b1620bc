"""Fine-grained retrieval over the coarse candidates.

The candidate tables become a pairwise weighted graph: nodes in ascending
table-id order, an edge wherever the semantic cosine of two tables clears the
threshold tau (negative cosines clamp to 0 first, so weights stay in
[tau, 1]). Personalized PageRank biased toward the query then ranks the
nodes:

    v <- (1 - alpha) * h + alpha * P^T v,   v0 = h

where P is the row-normalized similarity matrix. Rows with no outgoing
weight teleport to h (not to uniform), so the walk keeps its query bias; this
also keeps the effective transition matrix row-stochastic and v a probability
vector at every step. Iteration stops when the L1 step difference drops
below epsilon, or at max_iter with the result flagged truncated.

Only semantic features participate here; the other families already did
their work during coarse filtering.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .coarse import CoarseResult, coarse_retrieve
from .corpus import Query
from .features import EmbedderHandle, NodeFeatures
from .index import HypergraphIndex

DEFAULT_ALPHA = 0.85
DEFAULT_EPSILON = 1e-8
DEFAULT_MAX_ITER = 100
DEFAULT_TOP_N = 10

STAGE_COARSE = "Coarse-grained"
STAGE_FINE = "Fine-grained"


@dataclass(frozen=True)
class PPRConfig:
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    max_iter: int = DEFAULT_MAX_ITER
    top_n: int = DEFAULT_TOP_N

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly between 0 and 1")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.top_n < 1:
            raise ValueError("top_n must be at least 1")


@dataclass
class LocalSubgraph:
    """Candidate nodes plus thresholded pairwise semantic weights.

    ``weights`` is the dense symmetric matrix with a zero diagonal;
    ``adjacency`` records edge presence separately so a weight-0 edge
    (clamped negative cosine at tau = 0) is still an edge.
    """

    node_ids: list[str]
    weights: np.ndarray
    adjacency: np.ndarray
    tau: float

    def __len__(self) -> int:
        return len(self.node_ids)

    def edge_list(self) -> list[tuple[int, int, float]]:
        """Undirected edges as (i, j, weight) with i < j. O(n^2); intended
        for small graphs (tests, prompt assembly)."""
        ii, jj = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j), float(self.weights[i, j])) for i, j in zip(ii, jj)]


@dataclass
class PPRResult:
    scores: np.ndarray
    iterations: int
    converged: bool
    residuals: list[float] = field(default_factory=list)

    @property
    def truncated(self) -> bool:
        return not self.converged


@dataclass
class RetrievalResult:
    ranked: list[tuple[str, float]]
    subgraph: LocalSubgraph
    timings: dict[str, float]
    all_scores: np.ndarray
    iterations: int
    converged: bool
    zero_scores_in_ranked: bool


def _subgraph_from_rows(node_ids: list[str], sem: np.ndarray, tau: float) -> LocalSubgraph:
    norms = np.linalg.norm(sem, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = sem / safe[:, None]
    cos = unit @ unit.T
    np.clip(cos, 0.0, None, out=cos)
    upper = np.triu(cos, 1)
    weights = upper + upper.T  # bitwise-symmetric by construction
    adjacency = np.triu(cos >= tau, 1)
    adjacency = adjacency | adjacency.T
    weights[~adjacency] = 0.0
    return LocalSubgraph(node_ids=node_ids, weights=weights, adjacency=adjacency, tau=tau)


def build_local_subgraph(
    candidates: set[str] | list[str],
    features: Mapping[str, NodeFeatures],
    tau: float,
) -> LocalSubgraph:
    """Pairwise semantic graph over the candidates, thresholded at tau.

    Node order is ascending table id. Edge (i, j) exists iff the clamped
    cosine of their sem vectors is >= tau; isolated nodes are fine.
    """
    if not candidates:
        raise ValueError("cannot build a subgraph from zero candidates")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    node_ids = sorted(candidates)
    sem = np.vstack([np.asarray(features[tid].sem, dtype=np.float64) for tid in node_ids])
    return _subgraph_from_rows(node_ids, sem, tau)


def similarity_matrix(g: LocalSubgraph) -> np.ndarray:
    """Dense symmetric S with S_ij = edge weight, zero diagonal."""
    return g.weights.copy()


def transition_matrix(S: np.ndarray) -> np.ndarray:
    """Row-normalize S. All-zero rows are left as zeros here; the PPR
    iteration substitutes the personalization vector for them, which makes
    the effective matrix row-stochastic."""
    S = np.asarray(S, dtype=np.float64)
    row_sums = S.sum(axis=1)
    safe = np.where(row_sums > 0, row_sums, 1.0)
    return S / safe[:, None]


def _personalization_from_rows(q_sem: np.ndarray, sem: np.ndarray) -> np.ndarray:
    q = np.asarray(q_sem, dtype=np.float64)
    qn = np.linalg.norm(q)
    norms = np.linalg.norm(sem, axis=1)
    scores = np.zeros(sem.shape[0])
    if qn > 0:
        nz = norms > 0
        scores[nz] = (sem[nz] @ q) / (norms[nz] * qn)
    np.clip(scores, 0.0, None, out=scores)
    total = scores.sum()
    if total <= 0.0:
        return np.full(sem.shape[0], 1.0 / sem.shape[0])
    return scores / total


def personalization(
    qf: NodeFeatures, g: LocalSubgraph, features: Mapping[str, NodeFeatures]
) -> np.ndarray:
    """Query-biased start distribution: normalized non-negative semantic
    scores against each node; uniform if every score clamps to zero."""
    sem = np.vstack([np.asarray(features[tid].sem, dtype=np.float64) for tid in g.node_ids])
    return _personalization_from_rows(qf.sem, sem)


def ppr(P: np.ndarray, h: np.ndarray, cfg: PPRConfig) -> PPRResult:
    """Iterate personalized PageRank to the L1 tolerance.

    P may contain all-zero (dangling) rows; their mass teleports to h. The
    returned scores always sum to 1 up to floating error.
    """
    P = np.asarray(P, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    dangling = P.sum(axis=1) == 0.0
    PT = np.ascontiguousarray(P.T)
    v = h.copy()
    residuals: list[float] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        dangling_mass = float(v[dangling].sum()) if dangling.any() else 0.0
        v_next = (1.0 - cfg.alpha) * h + cfg.alpha * (PT @ v + dangling_mass * h)
        residual = float(np.abs(v_next - v).sum())
        residuals.append(residual)
        v = v_next
        if residual < cfg.epsilon:
            converged = True
            break
    return PPRResult(scores=v, iterations=it, converged=converged, residuals=residuals)


def _rank(node_ids: list[str], scores: np.ndarray, top_n: int) -> list[tuple[str, float]]:
    order = sorted(range(len(node_ids)), key=lambda i: (-scores[i], node_ids[i]))
    return [(node_ids[i], float(scores[i])) for i in order[: min(top_n, len(node_ids))]]


def fine_retrieve(
    q: Query,
    coarse: CoarseResult,
    ix: HypergraphIndex,
    cfg: PPRConfig,
    tau: float = 0.5,
) -> RetrievalResult:
    """Subgraph + PPR over the coarse union; deterministic given index and config."""
    if not coarse.union_ids:
        raise ValueError("coarse result has no candidate tables")
    if coarse.query_features is None:
        raise ValueError("coarse result does not carry query features")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    t0 = time.perf_counter()
    node_ids = sorted(coarse.union_ids)
    pos = np.array([ix.position(tid) for tid in node_ids], dtype=np.int64)
    sem_rows = np.asarray(ix.sem[pos], dtype=np.float64)
    g = _subgraph_from_rows(node_ids, sem_rows, tau)
    S = similarity_matrix(g)
    P = transition_matrix(S)
    h = _personalization_from_rows(coarse.query_features.sem, sem_rows)
    result = ppr(P, h, cfg)
    elapsed = time.perf_counter() - t0
    ranked = _rank(g.node_ids, result.scores, cfg.top_n)
    return RetrievalResult(
        ranked=ranked,
        subgraph=g,
        timings={STAGE_FINE: elapsed},
        all_scores=result.scores,
        iterations=result.iterations,
        converged=result.converged,
        zero_scores_in_ranked=any(s == 0.0 for _, s in ranked),
    )


def retrieve(
    q: Query,
    ix: HypergraphIndex,
    h: EmbedderHandle,
    cfg: PPRConfig | None = None,
    tau: float = 0.5,
) -> tuple[CoarseResult, RetrievalResult]:
    """Full coarse-to-fine pipeline for one query, with per-stage timings."""
    cfg = cfg or PPRConfig()
    t0 = time.perf_counter()
    coarse = coarse_retrieve(q, ix, h)
    coarse_dt = time.perf_counter() - t0
    result = fine_retrieve(q, coarse, ix, cfg, tau)
    result.timings[STAGE_COARSE] = coarse_dt
    return coarse, result
