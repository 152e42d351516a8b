"""Welded trees: instances, the weighted network and the alternative-neighbourhood walk.

Two complete binary trees of depth n (roots s and t) are glued at their
leaves by two disjoint random perfect matchings. Vertices carry random
2n-bit labels with s = 0^{2n}. Layers V_0..V_{2n+1} are the distance classes
from s; E_k joins V_{k-1} and V_k.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .network import IN, OUT, Flow, Network, build_network, flow_energy, total_weight
from .spectral import (
    Basis,
    DeciderParams,
    ReflectionProduct,
    StateFamily,
    StateVector,
    Subspace,
    Undecided,
    decide,
)

V0 = "v0"


class WeldedError(ValueError):
    pass


class OddDepth(WeldedError):
    pass


class WrongCase(WeldedError):
    pass


class Mismatch(WeldedError):
    pass


# ------------------------------------------------------------------ instance


def _layer_sizes(n: int) -> list[int]:
    return [2**k for k in range(n + 1)] + [2 ** (2 * n + 1 - k) for k in range(n + 1, 2 * n + 2)]


def edge_count(n: int, k: int) -> int:
    """|E_k|."""
    return 2**k if k <= n + 1 else 2 ** (2 * n + 2 - k)


def layer_weight(n: int, k: int) -> Fraction:
    """w_k: 2^{-2 ceil(k/2)} on the left half, mirrored on the right."""
    h = -(-k // 2)
    return Fraction(1, 4**h) if k <= n else Fraction(1, 4 ** (n + 2 - h))


def forward(k: int) -> bool:
    """E_k edges point away from s iff k mod 4 in {0, 1}."""
    return k % 4 in (0, 1)


def _derangement(m: int, rng) -> np.ndarray:
    while True:
        p = rng.permutation(m)
        if m == 1 or not np.any(p == np.arange(m)):
            return p


def _welded_abstract(n: int, rng) -> tuple[list, list]:
    """Abstract vertices (layer, index) and layered edges (k, a, b) with a in V_{k-1}."""
    sizes = _layer_sizes(n)
    verts = [(k, i) for k, m in enumerate(sizes) for i in range(m)]
    edges = []
    for k in range(1, n + 1):  # left tree
        for i in range(sizes[k]):
            edges.append((k, (k - 1, i // 2), (k, i)))
    leaves = 2**n
    p1 = rng.permutation(leaves)
    p2 = p1[_derangement(leaves, rng)]
    for i in range(leaves):  # welding, two matchings
        edges.append((n + 1, (n, i), (n + 1, int(p1[i]))))
        edges.append((n + 1, (n, i), (n + 1, int(p2[i]))))
    for k in range(n + 2, 2 * n + 2):  # right tree, children on the left
        for i in range(sizes[k - 1]):
            edges.append((k, (k - 1, i), (k, i // 2)))
    return verts, edges


@dataclass
class WeldedInstance:
    n: int
    seed: int
    label_bits: int
    labels: dict  # abstract (layer, index) -> int label
    adjacency: dict  # int label -> sorted neighbour labels
    layered_edges: list  # (k, label in V_{k-1}, label in V_k)
    t: int
    parity: dict = field(default_factory=dict)  # label -> bit from the doubling
    s: int = 0

    def oracle(self, label):
        """Neighbours of a label, or None for a non-vertex."""
        nb = self.adjacency.get(label)
        return None if nb is None else list(nb)

    def fmt(self, label: int) -> str:
        return format(label, f"0{self.label_bits}b")

    def bit(self, label: int, i: int) -> int:
        """i-th bit of a label, 1-indexed from the most significant end."""
        return int(self.fmt(label)[i - 1])

    def vertex(self, label):
        """Working vertex (label, parity)."""
        return (label, self.parity[label])

    @property
    def layer(self) -> dict:
        return {lab: k for (k, _), lab in self.labels.items()}

    def to_json(self) -> str:
        lay = self.layer
        return json.dumps(
            {
                "n": self.n,
                "seed": self.seed,
                "vertices": [
                    {"label": self.fmt(l), "layer": lay[l], "neighbours": [self.fmt(x) for x in nb]}
                    for l, nb in sorted(self.adjacency.items())
                ],
                "t": self.fmt(self.t),
            },
            indent=1,
        )


def double_parity(oracle: Callable, s) -> dict:
    """Parity bit per label from the component of (s, 0) in the doubled graph.

    The doubled graph joins (u, b) to (v, 1-b); only oracle queries are used.
    """
    par = {s: 0}
    frontier = [s]
    while frontier:
        nxt = []
        for u in frontier:
            for v in oracle(u) or []:
                if v not in par:
                    par[v] = 1 - par[u]
                    nxt.append(v)
                elif par[v] == par[u]:
                    raise WeldedError("graph is not bipartite")
        frontier = nxt
    return par


def _assemble(n: int, seed: int, bits: int, rng) -> WeldedInstance:
    verts, edges = _welded_abstract(n, rng)
    if len(verts) > 2**bits:
        raise WeldedError("label space too small")
    others = rng.choice(np.arange(1, 2**bits, dtype=np.int64), size=len(verts) - 1, replace=False)
    labels = {verts[0]: 0}
    for v, lab in zip(verts[1:], others):
        labels[v] = int(lab)
    adj: dict = {lab: [] for lab in labels.values()}
    ledges = []
    for k, a, b in edges:
        la, lb = labels[a], labels[b]
        adj[la].append(lb)
        adj[lb].append(la)
        ledges.append((k, la, lb))
    adjacency = {u: sorted(nb) for u, nb in adj.items()}
    t = labels[(2 * n + 1, 0)]
    inst = WeldedInstance(n, seed, bits, labels, adjacency, ledges, t)
    inst.parity = double_parity(inst.oracle, 0)
    return inst


def generate_instance(n: int, seed: int) -> WeldedInstance:
    if n < 2 or n % 2:
        raise OddDepth(f"n = {n}; the walk needs an even depth n >= 2")
    return _assemble(n, seed, 2 * n, np.random.default_rng(seed))


def generate_graph(n: int, seed: int) -> WeldedInstance:
    """Graph-only generator for any n >= 1, used by the classical baseline."""
    if n < 1:
        raise WeldedError("n must be positive")
    bits = max(2 * n, n + 3)
    return _assemble(n, seed, bits, np.random.default_rng(seed))


# ------------------------------------------------------------------ network


def build_weighted_network(inst: WeldedInstance) -> Network:
    n = inst.n
    V = [inst.vertex(l) for l in sorted(inst.adjacency)]
    es = []
    for k, a, b in inst.layered_edges:
        u, v = inst.vertex(a), inst.vertex(b)
        if not forward(k):
            u, v = v, u
        es.append((u, v, layer_weight(n, k), 2))
    return build_network(V, es)


def unit_network(inst: WeldedInstance) -> Network:
    V = [inst.vertex(l) for l in sorted(inst.adjacency)]
    return build_network(V, [(inst.vertex(a), inst.vertex(b), 1, 2) for _, a, b in inst.layered_edges])


def canonical_flow(inst: WeldedInstance) -> Flow:
    """Unit s-t flow splitting evenly at every branching: 1/|E_k| on E_k."""
    th = Flow()
    for k, a, b in inst.layered_edges:
        th[inst.vertex(a), inst.vertex(b)] = Fraction(1, edge_count(inst.n, k))
    return th


def canonical_energy(inst: WeldedInstance) -> Fraction:
    return flow_energy(canonical_flow(inst), build_weighted_network(inst))


def calibrated_w0(inst: WeldedInstance) -> Fraction:
    """w0 = 1/(2 E) with E the canonical flow's energy."""
    return 1 / (2 * canonical_energy(inst))


# ---------------------------------------------------- alternative neighbourhoods


def _sign(G: Network, u, v) -> int:
    """(-1)^Delta_{u,v}: +1 if (u, v) is a stored orientation."""
    return 1 if (u, v) in G.edges else -1


@dataclass
class WeldedWalk:
    inst: WeldedInstance
    G: Network
    w0: Fraction
    wM: Fraction
    marked: bool
    basis: Basis
    psi0: StateVector
    stars: dict  # vertex -> list of local maps {neighbour vertex or V0: amp}
    A: StateFamily
    B: StateFamily
    _sub: tuple | None = None

    @property
    def s(self):
        return self.inst.vertex(self.inst.s)

    @property
    def t(self):
        return self.inst.vertex(self.inst.t)

    def subspaces(self):
        if self._sub is None:
            self._sub = (Subspace(self.A, self.basis), Subspace(self.B, self.basis))
        return self._sub

    def operator(self) -> ReflectionProduct:
        return ReflectionProduct(*self.subspaces())

    def true_star(self, u) -> dict:
        """psi_star^{G'}(u) as a local map, including the v0 edges of G'."""
        out = {v: _sign(self.G, u, v) * math.sqrt(self.G.edges[self.G.oriented(u, v)].w) for v in self.G.neighbours(u)}
        if u == self.s:
            out[V0] = math.sqrt(self.w0)
        if u == self.t and self.marked:
            out[V0] = math.sqrt(self.wM)
        return out


def alternative_states(nbrs: list) -> list[dict]:
    """sqrt(2/3)(|v_j> - |v_{j+1}>/2 - |v_{j+2}>/2), indices mod 3."""
    r = math.sqrt(2 / 3)
    return [{nbrs[j]: r, nbrs[(j + 1) % 3]: -r / 2, nbrs[(j + 2) % 3]: -r / 2} for j in range(3)]


def build_alt_neighbourhoods(inst: WeldedInstance, w0, wM, g: Callable[[int], int], G: Network | None = None) -> WeldedWalk:
    if not (w0 > 0 and wM > 0):
        raise WeldedError("w0 and wM must be positive")
    G = G or build_weighted_network(inst)
    marked = bool(g(inst.t))
    walk = WeldedWalk(inst, G, w0, wM, marked, None, None, {}, StateFamily(), StateFamily())
    s, t = walk.s, walk.t
    for lab in sorted(inst.adjacency):
        u = inst.vertex(lab)
        nbrs = sorted(G.neighbours(u))  # numeric label order
        if u == s:
            walk.stars[u] = [walk.true_star(u)]
        elif u == t:
            st = {v: -0.5 for v in nbrs}
            if marked:
                st[V0] = math.sqrt(wM)
            walk.stars[u] = [st]
        elif u[1] == 1:  # odd layer: uniform direction
            walk.stars[u] = [{v: 1 / math.sqrt(3) for v in nbrs}]
        else:
            walk.stars[u] = alternative_states(nbrs)
    for u, alts in walk.stars.items():
        walk.A.add(("star", u), [StateVector({(u, v): a for v, a in m.items()}) for m in alts])
    for (u, v) in G.edges:
        walk.B.add(("edge", u, v), [StateVector({(u, v): 1.0, (v, u): -1.0})])
    labels = [(u, v) for (a, b) in G.edges for (u, v) in ((a, b), (b, a))]
    walk.basis = Basis(sorted(labels) + [(s, V0), (t, V0)])
    walk.psi0 = StateVector({(s, V0): 1.0})
    return walk


# ------------------------------------------------------------------ witnesses


def positive_witness(walk: WeldedWalk, theta: Flow | None = None) -> StateVector:
    if not walk.marked:
        raise WrongCase("positive witness needs g(t) = 1")
    theta = theta or canonical_flow(walk.inst)
    amps = {(walk.s, V0): -1 / math.sqrt(walk.w0), (walk.t, V0): 1 / math.sqrt(walk.wM)}
    for (u, v), e in walk.G.edges.items():
        f = float(theta[u, v]) / math.sqrt(e.w)
        amps[(u, v)] = amps.get((u, v), 0.0) + f
        amps[(v, u)] = amps.get((v, u), 0.0) + f
    return StateVector(amps)


def positive_witness_norm2(walk: WeldedWalk, theta: Flow | None = None) -> Fraction:
    """Exact ||w||^2 = 1/w0 + 2 sum theta^2/w + 1/wM."""
    theta = theta or canonical_flow(walk.inst)
    return 1 / walk.w0 + 2 * flow_energy(theta, walk.G) + 1 / walk.wM


def negative_witness(walk: WeldedWalk) -> tuple[StateVector, StateVector]:
    if walk.marked:
        raise WrongCase("negative witness needs g(t) = 0")
    r = 1 / math.sqrt(walk.w0)
    a: dict = {}
    for lab in walk.inst.adjacency:
        u = walk.inst.vertex(lab)
        for v, x in walk.true_star(u).items():
            a[(u, v)] = a.get((u, v), 0.0) + r * x
    b: dict = {}
    for (u, v), e in walk.G.edges.items():
        f = -r * math.sqrt(e.w)  # stored orientation: Delta = 0
        b[(u, v)] = b.get((u, v), 0.0) + f
        b[(v, u)] = b.get((v, u), 0.0) - f
    return StateVector(a), StateVector(b)


def negative_witness_norm2(walk: WeldedWalk) -> Fraction:
    """Exact ||w_A||^2 = (1/w0) sum_u ||psi_star^{G'}(u)||^2."""
    total = sum((e.w for e in walk.G.edges.values()), Fraction(0))
    return (2 * total + walk.w0) / walk.w0


def welded_witnesses(inst: WeldedInstance, w0, g: Callable[[int], int] | None = None) -> dict:
    g = g or (lambda t: 1)
    walk = build_alt_neighbourhoods(inst, w0, w0, g)
    if walk.marked:
        return {"positive": positive_witness(walk), "walk": walk}
    return {"negative": negative_witness(walk), "walk": walk}


# ------------------------------------------------------------------ decision


def decider_params(inst: WeldedInstance, w0) -> DeciderParams:
    W = total_weight(build_weighted_network(inst))
    return DeciderParams(c_plus=50.0, C_minus=float(2 * W / w0))


def decide_g(inst: WeldedInstance, g: Callable[[int], int], w0=None, mode: str | None = None, return_decision: bool = False):
    w0 = calibrated_w0(inst) if w0 is None else w0
    walk = build_alt_neighbourhoods(inst, w0, w0, g)
    d = decide(walk.operator(), walk.psi0, decider_params(inst, w0), mode=mode, basis=walk.basis)
    if d.outcome == "undecided":
        raise Undecided(f"p0 = {d.p0} lies in the dead zone")
    bit = int(d.outcome == "positive")
    return (bit, d) if return_decision else bit


def recover_t(inst: WeldedInstance, w0=None) -> int:
    """Learn t bit by bit with g(t) = t_i."""
    w0 = calibrated_w0(inst) if w0 is None else w0
    bits = []
    for i in range(1, inst.label_bits + 1):
        try:
            bits.append(decide_g(inst, lambda lab, i=i: inst.bit(lab, i), w0))
        except Undecided as exc:
            raise Mismatch(f"bit {i} undecided") from exc
    label = int("".join(map(str, bits)), 2)
    nb = inst.oracle(label)
    if label == inst.s or nb is None or len(nb) != 2 or label != inst.t:
        raise Mismatch(f"recovered {inst.fmt(label)} is not the exit {inst.fmt(inst.t)}")
    return label


# ------------------------------------------------------------- framework view


def framework_inputs(inst: WeldedInstance, g: Callable[[int], int]):
    """(G, sigma, M, stars, R_T, theta) for the generic framework with T_e = 2."""
    from .framework import AlternativeNeighbourhoods

    G = build_weighted_network(inst)
    walk = build_alt_neighbourhoods(inst, 1, 1, g, G)
    s, t = walk.s, walk.t

    def local(u, m):
        return {(OUT, v) if (u, v) in G.edges else (IN, v): a for v, a in m.items() if v != V0}

    alts = {u: [local(u, m) for m in ms] for u, ms in walk.stars.items() if u not in (s, t)}
    theta = canonical_flow(inst)
    R_T = float(flow_energy(theta, G, use_lengths=True))
    M = {t} if walk.marked else set()
    return G, {s: 1.0}, M, AlternativeNeighbourhoods(alts), R_T, theta


# ------------------------------------------------------------------ baseline


def hitting_baseline(n: int, trials: int = 200, seed: int = 0, step_cap: int = 10**7):
    from .network import random_walk_hitting_time

    inst = generate_graph(n, seed)
    G = unit_network(inst)
    return random_walk_hitting_time(G, inst.vertex(inst.s), [inst.vertex(inst.t)], trials, step_cap, seed)
