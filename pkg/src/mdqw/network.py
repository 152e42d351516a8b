"""Weighted networks with oriented edges, edge labels and per-edge lengths.

Also holds flows (antisymmetric edge functions), their energy, the total
weight functional, an electrical min-energy flow solver and a classical
random-walk hitting-time baseline.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Any, Hashable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

Vertex = Hashable
Label = Hashable

OUT = "+"
IN = "-"


class NetworkError(ValueError):
    pass


class DuplicateEdge(NetworkError):
    pass


class NonPositiveWeight(NetworkError):
    pass


class OddLength(NetworkError):
    pass


class LabelMismatch(NetworkError):
    pass


class UnknownVertex(NetworkError):
    pass


class Disconnected(NetworkError):
    pass


@dataclass(frozen=True)
class Dangling:
    """Synthetic endpoint for an edge that has no head vertex."""

    tag: Hashable

    def __repr__(self) -> str:
        return f"Dangling({self.tag!r})"


@dataclass(frozen=True)
class Edge:
    u: Vertex
    v: Vertex
    w: Any
    T: int = 2
    out_label: Label = None  # label of the edge at u (in L+(u))
    in_label: Label = None  # label of the edge at v (in L-(v))


@dataclass
class Network:
    """Materialized network. Build with :func:`build_network`."""

    vertices: list
    edges: dict  # (u, v) -> Edge
    out_labels: dict = field(default_factory=dict)  # u -> {label: v}
    in_labels: dict = field(default_factory=dict)  # v -> {label: u}

    def __post_init__(self):
        self._vset = set(self.vertices)

    # basic queries
    def has_vertex(self, u) -> bool:
        return u in self._vset

    def edge(self, u, v) -> Edge:
        return self.edges[(u, v)]

    def oriented(self, u, v) -> tuple | None:
        """Return the stored orientation of the edge {u, v}, or None."""
        if (u, v) in self.edges:
            return (u, v)
        if (v, u) in self.edges:
            return (v, u)
        return None

    def neighbours(self, u) -> list:
        return list(self.out_labels.get(u, {}).values()) + list(self.in_labels.get(u, {}).values())

    def incident(self, u) -> Iterable[Edge]:
        for v in self.out_labels.get(u, {}).values():
            yield self.edges[(u, v)]
        for v in self.in_labels.get(u, {}).values():
            yield self.edges[(v, u)]

    def weight_at(self, u):
        return sum(e.w for e in self.incident(u))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def with_lengths(self, lengths: Mapping | int) -> "Network":
        """Copy with new edge lengths (a constant or a per-edge map)."""
        es = []
        for key, e in self.edges.items():
            T = lengths if isinstance(lengths, int) else lengths.get(key, e.T)
            es.append(Edge(e.u, e.v, e.w, T, e.out_label, e.in_label))
        return build_network(self.vertices, es, _allow_unit_length=True)


def _default_out(v):
    return (OUT, v)


def _default_in(u):
    return (IN, u)


def build_network(vertices: Iterable, edges: Iterable, _allow_unit_length: bool = False) -> Network:
    """Validate and assemble a :class:`Network`.

    ``edges`` holds :class:`Edge` objects or tuples ``(u, v, w[, T[, i, j]])``.
    Labels default to direction-tagged neighbour ids so that L+ and L- are
    always disjoint. Edges whose head is a :class:`Dangling` are allowed.
    """
    verts = list(dict.fromkeys(vertices))
    vset = set(verts)
    store: dict = {}
    outl: dict = defaultdict(dict)
    inl: dict = defaultdict(dict)
    min_len = 1 if _allow_unit_length else 2
    for item in edges:
        e = item if isinstance(item, Edge) else Edge(*item)
        u, v = e.u, e.v
        if u not in vset:
            raise UnknownVertex(f"edge tail {u!r} is not a vertex")
        if v not in vset and not isinstance(v, Dangling):
            raise UnknownVertex(f"edge head {v!r} is not a vertex")
        if u == v:
            raise NetworkError(f"self loop at {u!r}")
        if (u, v) in store or (v, u) in store:
            raise DuplicateEdge(f"edge {{{u!r}, {v!r}}} given twice")
        if not e.w > 0:
            raise NonPositiveWeight(f"weight {e.w!r} on ({u!r}, {v!r})")
        T = int(e.T)
        if T != e.T or T < min_len or (T % 2 and not (_allow_unit_length and T == 1)):
            raise OddLength(f"length {e.T!r} on ({u!r}, {v!r})")
        i = _default_out(v) if e.out_label is None else e.out_label
        j = _default_in(u) if e.in_label is None else e.in_label
        if i in outl[u] or i in inl[u]:
            raise LabelMismatch(f"label {i!r} reused at {u!r}")
        if not isinstance(v, Dangling) and (j in inl[v] or j in outl[v]):
            raise LabelMismatch(f"label {j!r} reused at {v!r}")
        outl[u][i] = v
        if not isinstance(v, Dangling):
            inl[v][j] = u
        store[(u, v)] = Edge(u, v, e.w, T, i, j)
    return Network(verts, store, dict(outl), dict(inl))


def total_weight(G: Network, use_lengths: bool = False):
    """Sum of edge weights, each multiplied by its length if requested."""
    if use_lengths:
        return sum(e.w * e.T for e in G.edges.values())
    return sum(e.w for e in G.edges.values())


# --------------------------------------------------------------------- flows


class Flow:
    """Antisymmetric function on the edges of a network.

    Values are stored on the given orientation; reading the reverse
    orientation returns the negated value.
    """

    def __init__(self, values: Mapping | None = None):
        self._v: dict = {}
        for (u, v), x in (values or {}).items():
            self[u, v] = x

    def __getitem__(self, key):
        u, v = key
        if (u, v) in self._v:
            return self._v[(u, v)]
        if (v, u) in self._v:
            return -self._v[(v, u)]
        return 0

    def __setitem__(self, key, value):
        u, v = key
        if (v, u) in self._v:
            self._v[(v, u)] = -value
        else:
            self._v[(u, v)] = value

    def items(self):
        return self._v.items()

    def support(self):
        return [k for k, x in self._v.items() if x != 0]

    def scaled(self, c) -> "Flow":
        return Flow({k: c * x for k, x in self._v.items()})

    def __len__(self):
        return len(self._v)


def _check_support(theta: Flow, G: Network):
    for (u, v), x in theta.items():
        if x != 0 and G.oriented(u, v) is None:
            raise NetworkError(f"flow on non-edge ({u!r}, {v!r})")


def flow_divergence(theta: Flow, G: Network, u) -> Any:
    """theta(u): net flow out of u."""
    if not G.has_vertex(u):
        raise UnknownVertex(repr(u))
    total = 0
    for e in G.incident(u):
        other = e.v if e.u == u else e.u
        total += theta[u, other]
    return total


def _is_exact(x) -> bool:
    return isinstance(x, (int, Rational))


def is_circulation(theta: Flow, G: Network, tol: float = 1e-12) -> bool:
    _check_support(theta, G)
    div: dict = defaultdict(int)
    for (u, v), x in theta.items():
        div[u] += x
        if not isinstance(v, Dangling):
            div[v] -= x
    for val in div.values():
        if _is_exact(val):
            if val != 0:
                return False
        elif abs(val) > tol:
            return False
    return True


def flow_energy(theta: Flow, G: Network, use_lengths: bool = False):
    """Energy sum_e theta(e)^2 / w_e, times T_e per edge if requested."""
    _check_support(theta, G)
    total = 0
    for (u, v), x in theta.items():
        if x == 0:
            continue
        e = G.edges[G.oriented(u, v)]
        term = x * x / e.w if _is_exact(x) and _is_exact(e.w) else float(x) ** 2 / float(e.w)
        total += term * e.T if use_lengths else term
    return total


# ---------------------------------------------------------- electrical solver


def _laplacian(G: Network):
    idx = {u: k for k, u in enumerate(G.vertices)}
    rows, cols, vals = [], [], []
    for e in G.edges.values():
        if isinstance(e.v, Dangling):
            continue
        a, b, w = idx[e.u], idx[e.v], float(e.w)
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [w, w, -w, -w]
    N = len(idx)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N)), idx


def _components(G: Network):
    parent = {u: u for u in G.vertices}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in G.edges.values():
        if not isinstance(e.v, Dangling):
            ra, rb = find(e.u), find(e.v)
            if ra != rb:
                parent[ra] = rb
    return find


def min_energy_flow(G: Network, s, t) -> tuple[Flow, float]:
    """Unit s-t flow of minimum energy via a grounded Laplacian solve.

    Returns the flow and its energy, which equals the effective resistance.
    """
    if s == t:
        raise NetworkError("source equals sink")
    for x in (s, t):
        if not G.has_vertex(x):
            raise UnknownVertex(repr(x))
    find = _components(G)
    if find(s) != find(t):
        raise Disconnected(f"{s!r} and {t!r} are not connected")
    comp = [u for u in G.vertices if find(u) == find(s)]
    sub = build_network(
        comp,
        [e for e in G.edges.values() if not isinstance(e.v, Dangling) and find(e.u) == find(s)],
        _allow_unit_length=True,
    )
    L, idx = _laplacian(sub)
    # ground t
    keep = [k for u, k in idx.items() if u != t]
    Lr = L[keep][:, keep].tocsc()
    b = np.zeros(len(keep))
    pos = {k: r for r, k in enumerate(keep)}
    b[pos[idx[s]]] = 1.0
    phi_r = spla.spsolve(Lr, b) if len(keep) > 1 else b / Lr.toarray()[0, 0]
    phi = np.zeros(len(idx))
    phi[keep] = phi_r
    theta = Flow()
    for (u, v), e in sub.edges.items():
        theta[u, v] = float(e.w) * (phi[idx[u]] - phi[idx[v]])
    energy = float(phi[idx[s]] - phi[idx[t]])
    return theta, energy


# ------------------------------------------------------ random-walk baseline


@dataclass
class HittingStats:
    mean: float
    median: float
    fraction_capped: float
    steps: np.ndarray


def random_walk_hitting_time(
    G: Network,
    s,
    targets: Iterable,
    trials: int,
    step_cap: int = 10**7,
    seed: int = 0,
) -> HittingStats:
    """Monte Carlo hitting time of the weight-proportional random walk.

    Trial k draws from its own substream spawned from ``seed``, so results
    are reproducible and independent of trial scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    verts = list(G.vertices)
    idx = {u: k for k, u in enumerate(verts)}
    nbrs: list[list[int]] = [[] for _ in verts]
    wts: list[list[float]] = [[] for _ in verts]
    for e in G.edges.values():
        if isinstance(e.v, Dangling):
            continue
        a, b = idx[e.u], idx[e.v]
        nbrs[a].append(b)
        wts[a].append(float(e.w))
        nbrs[b].append(a)
        wts[b].append(float(e.w))
    nb = [np.array(x, dtype=np.int64) for x in nbrs]
    cum = [np.cumsum(w) / np.sum(w) if w else np.array([]) for w in wts]
    target = np.zeros(len(verts), dtype=bool)
    for x in targets:
        target[idx[x]] = True
    ss = np.random.SeedSequence(seed)
    out = np.empty(trials, dtype=np.int64)
    capped = 0
    for k, child in enumerate(ss.spawn(trials)):
        rng = np.random.default_rng(child)
        cur = idx[s]
        steps = 0
        chunk = rng.random(4096)
        p = 0
        while not target[cur] and steps < step_cap:
            if p == chunk.size:
                chunk = rng.random(4096)
                p = 0
            c = cum[cur]
            if c.size == 0:
                steps = step_cap
                break
            cur = int(nb[cur][min(np.searchsorted(c, chunk[p], side="right"), c.size - 1)])
            p += 1
            steps += 1
        if not target[cur]:
            capped += 1
        out[k] = steps
    return HittingStats(float(out.mean()), float(np.median(out)), capped / trials, out)


def exact_hitting_time(G: Network, s, targets: Iterable) -> float:
    """Expected hitting time from s by solving the absorbing-chain system."""
    tset = set(targets)
    verts = [u for u in G.vertices if u not in tset]
    idx = {u: k for k, u in enumerate(verts)}
    N = len(verts)
    A = np.eye(N)
    for u in verts:
        wu = float(G.weight_at(u))
        for e in G.incident(u):
            other = e.v if e.u == u else e.u
            if other in idx:
                A[idx[u], idx[other]] -= float(e.w) / wu
    h = np.linalg.solve(A, np.ones(N))
    return float(h[idx[s]])


# -------------------------------------------------------------- serialization


def _enc(x):
    if isinstance(x, Fraction):
        return str(x)
    return x


def network_to_json(G: Network) -> str:
    edges = [{"u": str(e.u), "v": str(e.v), "w": _enc(e.w), "T": e.T} for e in G.edges.values()]
    labels = []
    for u, m in G.out_labels.items():
        labels += [{"u": str(u), "label": str(i), "dir": OUT, "target": str(v)} for i, v in m.items()]
    for u, m in G.in_labels.items():
        labels += [{"u": str(u), "label": str(j), "dir": IN, "target": str(v)} for j, v in m.items()]
    return json.dumps({"vertices": [str(u) for u in G.vertices], "edges": edges, "labels": labels}, indent=1)


def network_from_json(text: str) -> Network:
    """Inverse of :func:`network_to_json` for string-labelled networks."""
    d = json.loads(text)

    def dec(w):
        return Fraction(w) if isinstance(w, str) else w

    byedge: dict = {}
    for lab in d.get("labels", []):
        key = (lab["u"], lab["target"]) if lab["dir"] == OUT else (lab["target"], lab["u"])
        byedge.setdefault(key, {})[lab["dir"]] = lab["label"]
    es = []
    for e in d["edges"]:
        labs = byedge.get((e["u"], e["v"]), {})
        es.append(Edge(e["u"], e["v"], dec(e["w"]), e["T"], labs.get(OUT), labs.get(IN)))
    return build_network(d["vertices"], es)


def flow_to_json(theta: Flow) -> str:
    return json.dumps([{"u": str(u), "v": str(v), "value": _enc(x)} for (u, v), x in theta.items()])
