"""Minimum-weight perfect matching decoder with per-shot loss overlays."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from ..analysis import wilson_interval
from ..circuit import Circuit
from ..sim.noise import NoiseModel
from .detectors import DetectorLayout
from .graph import MatchingGraph, apply_loss_edits, build_matching_graph, edge_weight

BOUNDARY = -1
DP_LIMIT = 12  # exact bitmask search up to this many flagged detectors
# csgraph drops explicit zeros, so p = 0.5 edges get a negligible positive weight
MIN_WEIGHT = 1e-9


@dataclass
class DecodeResult:
    flip: bool
    weight: float
    pairs: list  # (i, j) detector pairs; j == BOUNDARY for boundary matches


@dataclass
class FailureRate:
    failures: int
    shots: int
    rate: float
    ci_low: float
    ci_high: float
    discarded: int = 0


def _doubled(n_nodes: int, edges) -> csr_matrix:
    """Graph on (node, parity) pairs so one Dijkstra gives shortest even and odd paths."""
    rows, cols, vals = [], [], []
    for (u, v), (p, obs) in edges.items():
        w = edge_weight(p)
        if not math.isfinite(w):
            continue
        w = max(w, MIN_WEIGHT)
        o = int(obs)
        for s in (0, 1):
            rows += [2 * u + s, 2 * v + s]
            cols += [2 * v + (s ^ o), 2 * u + (s ^ o)]
            vals += [w, w]
    m = 2 * n_nodes
    mat = csr_matrix((vals, (rows, cols)), shape=(m, m))
    mat.sum_duplicates()
    return mat


def match_dp(W: np.ndarray, B: np.ndarray) -> tuple[float, list]:
    """Exact minimum-weight matching by memoized search; B[i] is the boundary cost."""
    k = len(B)

    @lru_cache(maxsize=None)
    def best(mask: int):
        if mask == 0:
            return 0.0, ()
        i = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << i)
        out = (math.inf, ())
        if math.isfinite(B[i]):
            w, pairs = best(rest)
            out = (B[i] + w, ((i, BOUNDARY),) + pairs)
        for j in range(i + 1, k):
            if rest >> j & 1 and math.isfinite(W[i, j]):
                w, pairs = best(rest & ~(1 << j))
                if W[i, j] + w < out[0] - 1e-12:
                    out = (W[i, j] + w, ((i, j),) + pairs)
        return out

    w, pairs = best((1 << k) - 1)
    return w, list(pairs)


def match_blossom(W: np.ndarray, B: np.ndarray) -> tuple[float, list]:
    """Blossom matching with one virtual boundary copy per detector."""
    k = len(B)
    finite = np.concatenate([W[np.isfinite(W)], B[np.isfinite(B)]])
    big = 1.0 + 2 * (float(finite.max()) if finite.size else 0.0)
    g = nx.Graph()
    for i in range(k):
        for j in range(i + 1, k):
            if math.isfinite(W[i, j]):
                g.add_edge(("d", i), ("d", j), weight=big - W[i, j])
            g.add_edge(("b", i), ("b", j), weight=big)
        if math.isfinite(B[i]):
            g.add_edge(("d", i), ("b", i), weight=big - B[i])
    mate = nx.max_weight_matching(g, maxcardinality=True)
    pairs, total = [], 0.0
    matched = set()
    for a, b in mate:
        if a[0] == "b" and b[0] == "b":
            continue
        if a[0] == "b":
            a, b = b, a
        if b[0] == "b":
            pairs.append((a[1], BOUNDARY))
            total += B[a[1]]
        else:
            i, j = sorted((a[1], b[1]))
            pairs.append((i, j))
            total += W[i, j]
        matched.update(x[1] for x in (a, b) if x[0] == "d")
    if len(matched) != k:
        raise ValueError("no perfect matching: syndrome cannot be explained by the graph")
    return total, sorted(pairs)


class Decoder:
    """Exact matching decoder.

    Distances on the base graph are computed once (all pairs, with the
    observable parity of each shortest path).  Loss overlays only lower edge
    weights, so per-shot distances follow from a Floyd closure over the
    flagged detectors and the endpoints of the edited edges.
    """

    def __init__(self, graph: MatchingGraph, method: str = "auto"):
        if method not in ("auto", "dp", "blossom"):
            raise ValueError(f"unknown matching method {method!r}")
        self.graph = graph
        self.method = method
        self.n_nodes = graph.num_detectors + 1
        self._base_edges = graph.effective()
        d = dijkstra(_doubled(self.n_nodes, self._base_edges), directed=True, indices=np.arange(0, 2 * self.n_nodes, 2))
        self._even, self._odd = d[:, 0::2], d[:, 1::2]
        self._cache: dict = {}

    def _match(self, W, B):
        if self.method == "dp" or (self.method == "auto" and len(B) <= DP_LIMIT):
            return match_dp(W, B)
        return match_blossom(W, B)

    def distances(self, nodes, overlay: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Shortest distance and path parity between ``nodes`` with an overlay applied."""
        nodes = list(nodes)
        extra = []
        if overlay:
            seen = set(nodes)
            for u, v in overlay:
                for x in (u, v):
                    if x not in seen:
                        seen.add(x)
                        extra.append(x)
        allnodes = np.array(nodes + extra, dtype=int)
        m = len(allnodes)
        even = self._even[np.ix_(allnodes, allnodes)]
        odd = self._odd[np.ix_(allnodes, allnodes)]
        if overlay:
            pos = {int(x): i for i, x in enumerate(allnodes)}
            M = np.block([[even, odd], [odd, even]])
            for (u, v), (p, obs) in overlay.items():
                w = max(edge_weight(p), MIN_WEIGHT)
                a, b = pos[u], pos[v]
                o = int(obs)
                for s in (0, 1):
                    for x, y in ((a, b), (b, a)):
                        i, j = x + s * m, y + (s ^ o) * m
                        M[i, j] = min(M[i, j], w)
            for k in range(2 * m):
                M = np.minimum(M, M[:, k, None] + M[None, k, :])
            even, odd = M[:m, :m], M[:m, m:]
        n = len(nodes)
        even, odd = even[:n, :n], odd[:n, :n]
        return np.minimum(even, odd), odd < even

    def decode(self, syndrome, overlay: dict | None = None) -> DecodeResult:
        flagged = sorted(int(i) for i in syndrome)
        if not flagged:
            return DecodeResult(False, 0.0, [])
        key = tuple(flagged)
        if not overlay and key in self._cache:
            return self._cache[key]
        bnd = self.graph.boundary
        dist, par = self.distances(flagged + [bnd], overlay)
        k = len(flagged)
        W, B = dist[:k, :k], dist[:k, k]
        if not np.isfinite(B).any() and k % 2:
            raise ValueError("odd syndrome with no boundary in the graph")
        weight, pairs = self._match(W, B)
        if not math.isfinite(weight):
            raise ValueError("no finite-weight matching for this syndrome")
        flip = False
        out = []
        for i, j in pairs:
            if j == BOUNDARY:
                flip ^= bool(par[i, k])
                out.append((flagged[i], BOUNDARY))
            else:
                flip ^= bool(par[i, j])
                out.append((flagged[i], flagged[j]))
        res = DecodeResult(flip, float(weight), out)
        if not overlay:
            self._cache[key] = res
        return res


def reference_distances(graph: MatchingGraph, nodes, overlay: dict | None = None):
    """Dijkstra on the fully edited graph; cross-check for Decoder.distances."""
    mat = _doubled(graph.num_detectors + 1, graph.effective(overlay))
    nodes = list(nodes)
    d = dijkstra(mat, directed=True, indices=[2 * x for x in nodes])
    even, odd = d[:, 0::2][:, nodes], d[:, 1::2][:, nodes]
    return np.minimum(even, odd), odd < even


def decode_values(
    circuit: Circuit,
    values: np.ndarray,
    rng: np.random.Generator,
    noise: NoiseModel | None = None,
    graph: MatchingGraph | None = None,
    use_loss: bool = True,
    method: str = "auto",
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted and actual observable flips for a (shots, keys) value array."""
    layout = DetectorLayout(circuit)
    if graph is None:
        graph = build_matching_graph(circuit, noise or NoiseModel.default())
    dec = Decoder(graph, method)
    parities, _, obs, lost = layout.evaluate(values, rng)
    predicted = np.zeros(len(obs), dtype=bool)
    for s in range(len(obs)):
        flagged = np.flatnonzero(parities[s])
        lost_cols = np.flatnonzero(lost[s])
        overlay = None
        if use_loss and lost_cols.size:
            overlay = apply_loss_edits(graph, [layout.keys[j] for j in lost_cols])
        if flagged.size:
            predicted[s] = dec.decode(flagged, overlay).flip
    return predicted, obs.astype(bool)


def logical_failure_rate(
    circuit: Circuit,
    values: np.ndarray,
    rng: np.random.Generator,
    noise: NoiseModel | None = None,
    graph: MatchingGraph | None = None,
    use_loss: bool = True,
) -> FailureRate:
    predicted, actual = decode_values(circuit, values, rng, noise, graph, use_loss)
    fails = int(np.count_nonzero(predicted != actual))
    n = len(actual)
    lo, hi = wilson_interval(fails, n) if n else (0.0, 1.0)
    return FailureRate(fails, n, fails / n if n else 0.0, lo, hi)
