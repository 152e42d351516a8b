"""k-distinctness walk: worlds, tuple-of-sets data, fault sets, graph and flow.

Indices are 0-based positions in x. A_1..A_k partition the positions via a
random permutation tau; A_l for 2 <= l <= k-1 is further cut into m_l
blocks. A vertex of the walk is labelled by an RTuple: R_1 holds disjoint
subsets of A_1 indexed by nonempty S_1 of [c_1]; R_l (l >= 2) holds disjoint
sets of block ids indexed by (s_1, .., s_{l-1}, S_l).

The data model (D, forward degrees, fault sets, collision sets) is written
for general k. Graph enumeration and the canonical flow cover k = 3.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .network import Edge, Flow, Network, build_network, flow_divergence, total_weight
from .framework import AlternativeNeighbourhoods, TransitionModel

BACK = "<-"


class KDistError(ValueError):
    pass


class InfeasibleParams(KDistError):
    pass


class TooLarge(KDistError):
    pass


class EmptyM0(KDistError):
    pass


# ------------------------------------------------------------------ params


def subsets(c: int) -> list[tuple]:
    """Nonempty subsets of [c] as sorted tuples, by size then lexicographic."""
    out = []
    for r in range(1, c + 1):
        out.extend(itertools.combinations(range(1, c + 1), r))
    return out


def mu(S: Sequence[int]) -> int:
    return min(S)


@dataclass
class KDistParams:
    """Desk-scale set sizes. t[l-1], m[l-1], c[l-1], p[l-1] refer to stage l."""

    t: tuple = (1, 1)
    m: tuple = (1, 3)  # m_1 is unused (A_1 is not cut into blocks)
    c: tuple = (2, 1)
    p: tuple | None = None  # collision caps p_l; None gives max(4, ceil(log^2 n))
    pad_per_block: int = 1

    def cap(self, ell: int, n: int) -> int:
        if self.p is not None:
            return self.p[ell - 1]
        return max(4, math.ceil(math.log(n) ** 2))

    @staticmethod
    def default_c(k: int, middle: int = 3) -> tuple:
        """c_1 = k-1, c_{k-1} = 1, middle stages configurable."""
        if k == 2:
            return (1,)
        return tuple([k - 1] + [middle] * (k - 3) + [1])


def optimal_exponents(k: int) -> dict:
    """Asymptotic set-size exponents reported for reference (k = 3: t1 = n^{5/7}, t2 = n^{4/7})."""
    if k == 3:
        return {"t1": Fraction(5, 7), "t2": Fraction(4, 7), "m2": Fraction(5, 7)}
    raise NotImplementedError("exponents are tabulated for k = 3 only")


# ------------------------------------------------------------------ world


@dataclass
class KDistWorld:
    n: int
    k: int
    q: int
    x: tuple
    tau: tuple
    params: KDistParams
    seed: int
    planted: tuple | None  # (a_1, .., a_k) or None

    @cached_property
    def A(self) -> list[tuple]:
        """A_1..A_k as sorted tuples (index 0 holds A_1)."""
        size = self.n // self.k
        return [tuple(sorted(self.tau[l * size : (l + 1) * size])) for l in range(self.k)]

    @cached_property
    def blocks(self) -> dict:
        """ell -> {j: A_ell^{(j)}} for 2 <= ell <= k-1, j 1-indexed."""
        size = self.n // self.k
        out = {}
        for ell in range(2, self.k):
            m = self.params.m[ell - 1]
            b = size // m
            base = (ell - 1) * size
            out[ell] = {j: tuple(sorted(self.tau[base + (j - 1) * b : base + j * b])) for j in range(1, m + 1)}
        return out

    @cached_property
    def block_of(self) -> dict:
        return {i: j for ell, bs in self.blocks.items() for j, blk in bs.items() for i in blk}

    @cached_property
    def by_value(self) -> dict:
        d = defaultdict(list)
        for i, v in enumerate(self.x):
            d[v].append(i)
        return d

    def jstar(self, ell: int) -> int | None:
        if self.planted is None:
            return None
        return self.block_of[self.planted[ell - 1]]

    def c(self, ell: int) -> int:
        return self.params.c[ell - 1]

    def to_json(self, inline_x: bool = True) -> str:
        d = {
            "n": self.n,
            "k": self.k,
            "q": self.q,
            "seed": self.seed,
            "params": asdict(self.params),
            "planted": self.planted is not None,
        }
        if inline_x:
            d["x"] = list(self.x)
        return json.dumps(d)


def _check_params(n: int, k: int, q: int, P: KDistParams):
    if k < 2:
        raise InfeasibleParams("k must be at least 2")
    if len(P.t) != k - 1 or len(P.m) != k - 1 or len(P.c) != k - 1:
        raise InfeasibleParams("t, m, c need one entry per stage 1..k-1")
    if n % k:
        raise InfeasibleParams("k must divide n")
    if q < n:
        raise InfeasibleParams("alphabet must hold n distinct values")
    if P.c[0] != k - 1 or P.c[-1] != 1:
        raise InfeasibleParams("need c_1 = k-1 and c_{k-1} = 1")
    size = n // k
    parts1 = 2 ** P.c[0] - 1
    if parts1 * P.t[0] + 1 > size:
        raise InfeasibleParams("A_1 too small for the R_1 slots")
    prod = 1
    for ell in range(2, k):
        m = P.m[ell - 1]
        if size % m:
            raise InfeasibleParams(f"block size n/(k m_{ell}) is not an integer")
        prod *= P.c[ell - 2]
        parts = prod * (2 ** P.c[ell - 1] - 1)
        if parts * P.t[ell - 1] + 1 > m:
            raise InfeasibleParams(f"m_{ell} too small for the R_{ell} slots")
    if k > 2 and P.pad_per_block * sum(P.m[1:]) > size - 1:
        raise InfeasibleParams("not enough A_1 positions for padding")


def make_world(n: int = 18, k: int = 3, q: int | None = None, params: KDistParams | None = None, plant: bool = True, seed: int = 0) -> KDistWorld:
    """Random input with an optional unique k-collision placed in A_1 x .. x A_k.

    All values start distinct. A planted collision copies one value to k
    random positions; tau is resampled until a_l lands in A_l. Padding adds
    (k-1)-collisions (one position in A_1, one in each later stage's block)
    that avoid the planted positions.
    """
    P = params or KDistParams()
    q = q or n
    _check_params(n, k, q, P)
    rng = np.random.default_rng(seed)
    x = [int(v) for v in rng.permutation(q)[:n]]
    size = n // k
    planted = None
    pos = None
    if plant:
        pos = [int(v) for v in rng.choice(n, size=k, replace=False)]
        for p in pos[1:]:
            x[p] = x[pos[0]]
    for _ in range(100000):
        tau = [int(v) for v in rng.permutation(n)]
        if pos is None:
            break
        inv = {v: i for i, v in enumerate(tau)}
        if all((ell) * size <= inv[p] < (ell + 1) * size for ell, p in enumerate(pos)):
            break
    else:  # pragma: no cover
        raise InfeasibleParams("could not position the planted collision")
    if pos is not None:
        planted = tuple(pos)
    world = KDistWorld(n, k, q, tuple(x), tuple(tau), P, seed, planted)
    if k > 2 and P.pad_per_block:
        used = set(planted or ())
        A1 = [i for i in world.A[0] if i not in used]
        rng.shuffle(A1)
        xs = list(world.x)
        for ell in range(2, k):
            for j, blk in world.blocks[ell].items():
                cands = [i for i in blk if i not in used]
                for _ in range(P.pad_per_block):
                    if not cands or not A1:
                        raise InfeasibleParams("padding ran out of positions")
                    i2 = cands.pop(int(rng.integers(len(cands))))
                    i1 = A1.pop()
                    # chain: the padded value is shared by positions in stages 1..ell
                    xs[i2] = xs[i1]
                    used |= {i1, i2}
        world = KDistWorld(n, k, q, tuple(xs), world.tau, P, seed, planted)
    if max(len(v) for v in world.by_value.values()) > (k if plant else k - 1):
        raise InfeasibleParams("padding created a k-collision")  # pragma: no cover
    return world


def has_k_collision(world: KDistWorld) -> bool:
    return any(len(v) >= world.k for v in world.by_value.values())


def collision_set(world: KDistWorld, *sets: Iterable[int]) -> set:
    """K(S_1, .., S_l): index tuples with equal values, one index per set."""
    sets = [set(s) for s in sets]
    out = set()
    x = world.x
    groups = [defaultdict(list) for _ in sets]
    for g, s in zip(groups, sets):
        for i in s:
            g[x[i]].append(i)
    common = set(groups[0])
    for g in groups[1:]:
        common &= set(g)
    for v in common:
        out.update(itertools.product(*(g[v] for g in groups)))
    return out


# ------------------------------------------------------------------ R tuples


def slot_keys(world: KDistWorld, ell: int) -> list[tuple]:
    """Canonical slot order for R_ell."""
    if ell == 1:
        return subsets(world.c(1))
    pref = itertools.product(*(range(1, world.c(l) + 1) for l in range(1, ell)))
    return [tuple(p) + (S,) for p in pref for S in subsets(world.c(ell))]


@dataclass(frozen=True)
class RTuple:
    """parts[ell-1] is a tuple of sorted member tuples, one per slot of R_ell."""

    parts: tuple

    def get(self, world: KDistWorld, ell: int, slot) -> tuple:
        return self.parts[ell - 1][slot_keys(world, ell).index(slot)]

    def members(self, ell: int) -> set:
        return {a for part in self.parts[ell - 1] for a in part}

    def replace(self, world: KDistWorld, ell: int, slot, new: Iterable) -> "RTuple":
        idx = slot_keys(world, ell).index(slot)
        stage = list(self.parts[ell - 1])
        stage[idx] = tuple(sorted(new))
        parts = list(self.parts)
        parts[ell - 1] = tuple(stage)
        return RTuple(tuple(parts))

    def insert(self, world, ell, slot, a) -> "RTuple":
        cur = self.get(world, ell, slot)
        if a in self.members(ell):
            raise KDistError(f"{a} already present in R_{ell}")
        return self.replace(world, ell, slot, cur + (a,))

    def remove(self, world, ell, slot, a) -> "RTuple":
        cur = self.get(world, ell, slot)
        if a not in cur:
            raise KDistError(f"{a} not in the slot")
        return self.replace(world, ell, slot, [b for b in cur if b != a])

    def bar(self, world: KDistWorld, ell: int, slot) -> set:
        """Positions covered by a slot (blocks expanded for ell >= 2)."""
        items = self.get(world, ell, slot)
        if ell == 1:
            return set(items)
        return {i for j in items for i in world.blocks[ell][j]}

    def bar_all(self, world: KDistWorld, ell: int) -> set:
        return set().union(*(self.bar(world, ell, s) for s in slot_keys(world, ell)))

    def sizes(self, ell: int) -> tuple:
        return tuple(len(p) for p in self.parts[ell - 1])


# ------------------------------------------------------------------ data


@dataclass(frozen=True)
class VertexData:
    D: tuple  # D[ell-1]: {slot: frozenset of entries (i_1, .., i_ell, value)}
    dbar: tuple  # dbar[ell-1]: {i_ell: count} for ell = 1..k-2
    dfwd: tuple  # dfwd[ell-1]: {member of R_ell: d->} for ell = 1..k-1
    C: tuple  # C[ell-1]: frozenset of (member, degree > 0) for ell = 1..k-2


def build_data(world: KDistWorld, R: RTuple) -> VertexData:
    """Evaluate D_1..D_{k-1}, forward degrees and the forward-degree databases."""
    k, x = world.k, world.x
    D = []
    D1 = {S: frozenset((i, x[i]) for i in R.get(world, 1, S)) for S in slot_keys(world, 1)}
    D.append(D1)
    for ell in range(2, k):
        prev = D[-1]
        cur = {}
        for slot in slot_keys(world, ell):
            *pre, S_ell = slot
            s_last = pre[-1]
            head = tuple(pre[:-1])
            bar = R.bar(world, ell, slot)
            bar_by_val = defaultdict(list)
            for i in bar:
                bar_by_val[x[i]].append(i)
            entries = set()
            for S_prev in subsets(world.c(ell - 1)):
                if s_last not in S_prev:
                    continue
                key = S_prev if ell == 2 else head + (S_prev,)
                for e in prev[key]:
                    for i in bar_by_val.get(e[-1], ()):
                        entries.add(e[:-1] + (i, e[-1]))
            cur[slot] = frozenset(entries)
        D.append(cur)
    dbar, dfwd, C = [], [], []
    for ell in range(1, k):
        if ell <= k - 2:
            cnt: dict = defaultdict(set)
            for entries in D[ell].values():  # D_{ell+1}
                for e in entries:
                    cnt[e[ell - 1]].add(e[: ell - 1] + e[ell : ell + 1])
            db = {i: len(v) for i, v in cnt.items()}
        else:
            db = {}
        dbar.append(db)
        if ell == 1:
            df = {i: db.get(i, 0) for i in R.members(1)}
        elif ell <= k - 2:
            df = {j: sum(db.get(i, 0) for i in world.blocks[ell][j]) for j in R.members(ell)}
        else:
            df = {j: 0 for j in R.members(ell)}
        dfwd.append(df)
        if ell <= k - 2:
            C.append(frozenset((a, d) for a, d in df.items() if d > 0))
    return VertexData(tuple(D), tuple(dbar), tuple(dfwd), tuple(C))


def brute_force_data(world: KDistWorld, R: RTuple) -> tuple:
    """Independent evaluation of D_ell by enumerating index tuples directly (k = 3)."""
    if world.k != 3:
        raise NotImplementedError
    x = world.x
    D1 = {S: frozenset((i, x[i]) for i in R.get(world, 1, S)) for S in slot_keys(world, 1)}
    D2 = {}
    for slot in slot_keys(world, 2):
        s = slot[0]
        ent = set()
        for S in slot_keys(world, 1):
            if s not in S:
                continue
            for i1 in R.get(world, 1, S):
                for i2 in R.bar(world, 2, slot):
                    if x[i1] == x[i2]:
                        ent.add((i1, i2, x[i1]))
        D2[slot] = frozenset(ent)
    d = {i1: sum(1 for e in set().union(*D2.values()) if e[0] == i1) for i1 in R.members(1)}
    return (D1, D2), d


# ------------------------------------------------------------------ faults


def fault_set_index(world: KDistWorld, R: RTuple, ell: int, i_ell: int, prefix: tuple = ()) -> frozenset:
    """I(v^{ell-1}_R, i_ell): s_ell whose choice would create a forward collision.

    ``prefix`` holds (mu(S_1*), .., mu(S_{ell-1}*)) for the current vertex class.
    """
    if ell == world.k - 1:
        return frozenset()
    out = set()
    xv = world.x[i_ell]
    for s in range(1, world.c(ell) + 1):
        for S_next in subsets(world.c(ell + 1)):
            slot = tuple(prefix) + (s, S_next)
            if any(world.x[i] == xv for i in R.bar(world, ell + 1, slot)):
                out.add(s)
                break
    return frozenset(out)


def back_collision(world: KDistWorld, R: RTuple, data: VertexData, ell: int, i_ell: int, prefix: tuple) -> bool:
    """C<-(i_ell, R): i_ell would extend an entry of D_{ell-1} on the active branch."""
    xv = world.x[i_ell]
    for S_prev in subsets(world.c(ell - 1)):
        if prefix[-1] not in S_prev:
            continue
        key = S_prev if ell == 2 else tuple(prefix[:-1]) + (S_prev,)
        if any(e[-1] == xv for e in data.D[ell - 2][key]):
            return True
    return False


def fault_set(world: KDistWorld, R: RTuple, ell: int, candidate: int, prefix: tuple = ()) -> frozenset:
    """Fault set of v^0_{R,i_1} (ell = 1) or of v^{ell-1}_{R,j_ell} (ell >= 2, candidate a block id)."""
    if ell == 1:
        if candidate in R.members(1):
            raise KDistError("candidate already in R_1")
        return fault_set_index(world, R, 1, candidate)
    if candidate in R.members(ell):
        raise KDistError("candidate block already in R_ell")
    if ell == world.k - 1:
        return frozenset()
    data = build_data(world, R)
    out = set()
    for i in world.blocks[ell][candidate]:
        if back_collision(world, R, data, ell, i, prefix):
            out |= fault_set_index(world, R, ell, i, prefix)
    return frozenset(out)


def faults_equiv_check(world: KDistWorld) -> dict:
    """Compare S & I == {} against d->_{R'}(i_1) == 0 for every V_0 vertex, i_1 and S_1."""
    checked = disagreements = 0
    for R in v0_tuples(world):
        for i1 in sorted(set(world.A[0]) - R.members(1)):
            I = fault_set(world, R, 1, i1)
            for S in slot_keys(world, 1):
                R2 = R.insert(world, 1, S, i1)
                recomputed = build_data(world, R2).dfwd[0][i1] == 0
                predicted = not (set(S) & I)
                checked += 1
                disagreements += recomputed != predicted
    return {"checked": checked, "disagreements": disagreements}


# ------------------------------------------------------------------ enumeration


def disjoint_tuples(universe: Sequence, sizes: Sequence[int]):
    """Ordered tuples of disjoint sorted subsets with the given sizes."""
    universe = sorted(universe)
    if not sizes:
        yield ()
        return
    for first in itertools.combinations(universe, sizes[0]):
        rest = [u for u in universe if u not in first]
        for tail in disjoint_tuples(rest, sizes[1:]):
            yield (first,) + tail


def _stage_tuples(world, ell, sizes):
    universe = world.A[0] if ell == 1 else range(1, world.params.m[ell - 1] + 1)
    return list(disjoint_tuples(universe, sizes))


def v0_tuples(world: KDistWorld) -> list[RTuple]:
    if world.k != 3:
        raise NotImplementedError("graph enumeration covers k = 3")
    t1, t2 = world.params.t
    n1, n2 = len(slot_keys(world, 1)), len(slot_keys(world, 2))
    R1s = _stage_tuples(world, 1, [t1] * n1)
    R2s = _stage_tuples(world, 2, [t2] * n2)
    return [RTuple((a, b)) for a in R1s for b in R2s]


def _vkey(cls: str, R: RTuple, extra=None):
    return (cls, R.parts) if extra is None else (cls, R.parts, extra)


@dataclass
class KDistGraph:
    world: KDistWorld
    G: Network
    M: set
    stars: AlternativeNeighbourhoods
    TM: TransitionModel
    classes: dict  # class name -> list of vertex keys
    stage_edges: dict  # stage name -> list of stored edges
    sigma: dict
    fault: dict  # V0+ vertex -> fault set

    def stage_weights(self, use_lengths: bool = False) -> dict:
        out = {}
        for name, es in self.stage_edges.items():
            out[name] = float(sum(self.G.edges[e].w * (self.G.edges[e].T if use_lengths else 1) for e in es))
        return out

    def rtuple(self, v) -> RTuple:
        return RTuple(v[1])


def projected_basis_size(world: KDistWorld) -> int:
    """Rough upper bound on the walk space, for the size guard."""
    if world.k != 3:
        raise NotImplementedError
    size = world.n // 3
    t1, t2 = world.params.t
    m2 = world.params.m[1]
    nv0 = math.perm(size, 3 * t1) // math.factorial(t1) ** 3 * (math.perm(m2, 2 * t2) // math.factorial(t2) ** 2)
    per = size - 3 * t1
    e_est = nv0 * per * (1 + 3 + 3 * (m2 - 2 * t2) * (1 + size))
    T2 = 2 * math.ceil(math.sqrt(world.n / m2) / 2)
    return e_est * (T2 + 3)


def enumerate_graph(world: KDistWorld, max_basis: int = 2_000_000) -> KDistGraph:
    if world.k != 3:
        raise NotImplementedError("graph enumeration covers k = 3")
    if projected_basis_size(world) > max_basis:
        raise TooLarge(f"projected basis {projected_basis_size(world)} exceeds {max_basis}")
    P = world.params
    t1, t2 = P.t
    m2 = P.m[1]
    A1, A3 = world.A[0], world.A[2]
    S_keys = slot_keys(world, 1)
    s_keys = slot_keys(world, 2)
    w2 = math.sqrt(world.n / m2)
    T2 = 2 * math.ceil(w2 / 2)
    cap = P.cap(2, world.n)

    classes = {c: [] for c in ("V0", "V0+", "V1", "V2", "V3")}
    stage = {c: [] for c in ("E0+", "E1", "E2", "E3")}
    edges: list[Edge] = []
    fault = {}
    data_cache: dict = {}

    def data(R):
        d = data_cache.get(R)
        if d is None:
            d = data_cache[R] = build_data(world, R)
        return d

    # V0, V0+, E0+
    for R in v0_tuples(world):
        v = _vkey("0", R)
        classes["V0"].append(v)
        for i1 in sorted(set(A1) - R.members(1)):
            u = _vkey("0+", R, i1)
            classes["V0+"].append(u)
            fault[u] = fault_set(world, R, 1, i1)
            edges.append(Edge(v, u, 1, 2, ("+", i1), ("-", BACK)))
            stage["E0+"].append((v, u))
    # V1 and E1 (from the V1 side), E2 and V2, E3 and V3
    R1_by_S = {}
    for a, S in enumerate(S_keys):
        sizes = [t1 + (b == a) for b in range(len(S_keys))]
        R1_by_S[S] = _stage_tuples(world, 1, sizes)
    R2_base = _stage_tuples(world, 2, [t2] * len(s_keys))
    R2_plus = {}
    for a, slot in enumerate(s_keys):
        R2_plus[slot] = _stage_tuples(world, 2, [t2 + (b == a) for b in range(len(s_keys))])
    failed = set()
    v2_seen = set()
    for S in S_keys:
        slot2 = (mu(S), (1,))
        for r1 in R1_by_S[S]:
            for r2 in R2_base:
                R = RTuple((r1, r2))
                v1 = _vkey("1", R)
                classes["V1"].append(v1)
                dR = data(R)
                for i1 in R.get(world, 1, S):
                    if dR.dfwd[0][i1] == 0:
                        src = _vkey("0+", R.remove(world, 1, S, i1), i1)
                        edges.append(Edge(src, v1, 1, 2, ("+", S), ("-", i1)))
                        stage["E1"].append((src, v1))
                bar1 = R.bar_all(world, 1)
                for j2 in range(1, m2 + 1):
                    if j2 in R.members(2):
                        continue
                    R2 = R.insert(world, 2, slot2, j2)
                    v2 = _vkey("2", R2)
                    edges.append(Edge(v1, v2, w2, T2, ("+", j2), ("-", j2)))
                    stage["E2"].append((v1, v2))
                    if len(collision_set(world, bar1, world.blocks[2][j2])) >= cap:
                        failed.add((v1, v2))
        for r1 in R1_by_S[S]:
            for r2 in R2_plus[slot2]:
                R = RTuple((r1, r2))
                v2 = _vkey("2", R)
                classes["V2"].append(v2)
                for i3 in A3:
                    v3 = _vkey("3", R, i3)
                    classes["V3"].append(v3)
                    edges.append(Edge(v2, v3, 1, 2, ("+", i3), ("-", BACK)))
                    stage["E3"].append((v2, v3))
    vertices = [v for c in ("V0", "V0+", "V1", "V2", "V3") for v in classes[c]]
    G = build_network(vertices, edges)

    # alternative neighbourhoods at V0+
    alts, zero = {}, {}
    for u in classes["V0+"]:
        zero[u] = {("+", S) for S in S_keys} - set(G.out_labels.get(u, {}))
        states = []
        c1 = world.c(1)
        for I in (I for r in range(c1) for I in itertools.combinations(range(1, c1 + 1), r)):
            st = {("-", BACK): -1.0}
            for S in S_keys:
                if not set(S) & set(I):
                    st[("+", S)] = 1.0
            states.append(st)
        alts[u] = states
    M = marked_set(world, classes["V3"], data)
    TM = TransitionModel(eps={e: 4.0 for e in failed}, failed=failed, eps_bound=0.0)
    sigma = {v: 1.0 / len(classes["V0"]) for v in classes["V0"]}
    return KDistGraph(world, G, M, AlternativeNeighbourhoods(alts, zero), TM, classes, stage, sigma, fault)


def marked_set(world: KDistWorld, V3: Iterable, data=None) -> set:
    """V3 vertices whose i_3 value is found in D_2 (a single lookup)."""
    if world.planted is None:
        return set()
    data = data or (lambda R: build_data(world, R))
    out = set()
    for v in V3:
        R, i3 = RTuple(v[1]), v[2]
        xv = world.x[i3]
        if any(e[-1] == xv for entries in data(R).D[1].values() for e in entries):
            out.add(v)
    return out


# ------------------------------------------------------------------ flow


def start_set(world: KDistWorld, g: KDistGraph) -> list:
    """M_0: V0 vertices that can carry flow towards the collision."""
    a1 = world.planted[0]
    js = world.jstar(2)
    cap = world.params.cap(2, world.n)
    out = []
    for v in g.classes["V0"]:
        R = RTuple(v[1])
        if a1 in R.members(1) or js in R.members(2):
            continue
        if len(collision_set(world, R.bar_all(world, 1) | {a1}, world.blocks[2][js])) >= cap:
            continue
        out.append(v)
    return out


def canonical_flow_kdist(world: KDistWorld, g: KDistGraph) -> Flow:
    if world.planted is None or not g.M:
        raise KDistError("the canonical flow needs a planted collision")
    if world.k != 3:
        raise NotImplementedError
    a1, _, a3 = world.planted
    js = world.jstar(2)
    M0 = start_set(world, g)
    if not M0:
        raise EmptyM0("no V0 vertex can start the flow")
    f = Fraction(1, len(M0))
    th = Flow()
    for v in M0:
        R = RTuple(v[1])
        u = _vkey("0+", R, a1)
        th[v, u] = f
        for S in slot_keys(world, 1):
            sign = (-1) ** (len(S) + 1)
            R1 = R.insert(world, 1, S, a1)
            v1 = _vkey("1", R1)
            th[u, v1] = sign * f
            R2 = R1.insert(world, 2, (mu(S), (1,)), js)
            v2 = _vkey("2", R2)
            th[v1, v2] = sign * f
            th[v2, _vkey("3", R2, a3)] = sign * f
    return th


def flow_conditions_exact(g: KDistGraph, theta: Flow) -> dict:
    """P1..P5 with rational flow values; irrational weights enter only P5."""
    G = g.G
    world = g.world
    n0 = len(g.classes["V0"])
    sigma = Fraction(1, n0)
    p1 = all(theta[e] == 0 for e in g.TM.failed)
    # P2: alternatives at V0+ (unit weights), conservation elsewhere
    p2_bad = 0
    for u, alts in g.stars.alternatives.items():
        loc = {}
        for i, v in G.out_labels.get(u, {}).items():
            loc[i] = theta[u, v]
        for j, v in G.in_labels.get(u, {}).items():
            loc[j] = -theta[u, v]
        for a in alts:
            if sum(int(x) * loc.get(k, 0) for k, x in a.items()) != 0:
                p2_bad += 1
    for cls in ("V0+", "V1", "V2"):
        for u in g.classes[cls]:
            if flow_divergence(theta, G, u) != 0:
                p2_bad += 1
    div = {u: flow_divergence(theta, G, u) for u in g.classes["V0"]}
    p3 = sum(div.values(), Fraction(0))
    p4 = sum(((d - sigma) ** 2 / sigma for d in div.values()), Fraction(0))
    # P5: energy = rational part + (rational part) / w_2 with w_2 = sqrt(n/m_2)
    rat, irr = Fraction(0), Fraction(0)
    stage_of = {e: s for s, es in g.stage_edges.items() for e in es}
    for (u, v), x in theta.items():
        if x == 0:
            continue
        key = G.oriented(u, v)
        e = G.edges[key]
        if stage_of[key] == "E2":
            irr += x * x * e.T
        else:
            rat += x * x * e.T / Fraction(e.w)
    w2 = math.sqrt(world.n / world.params.m[1])
    energy = float(rat) + float(irr) / w2
    return {
        "P1": p1,
        "P2": p2_bad == 0,
        "P2_violations": p2_bad,
        "P3": p3 == 1,
        "P3_total": p3,
        "P4": p4 <= 1,
        "P4_value": p4,
        "P5": True,
        "P5_energy": energy,
        "P5_exact": (rat, irr),
        "M0": sum(1 for d in div.values() if d != 0),
        "V0": n0,
    }


def lengthened_energy(g: KDistGraph, theta: Flow) -> float:
    rep = flow_conditions_exact(g, theta)
    return rep["P5_energy"]


# ------------------------------------------------------------------ analysis


def analyze(world: KDistWorld, run_detect: bool = True, mode: str | None = None, strict: bool = False) -> dict:
    """Weights, flow conditions, witnesses and (optionally) the detect outcome.

    With ``strict`` a detect outcome that disagrees with the plant flag raises
    framework.Inconsistent carrying the report.
    """
    from . import framework as fw

    g = enumerate_graph(world)
    W_T = float(total_weight(g.G, use_lengths=True))
    rep: dict = {
        "n": world.n,
        "k": world.k,
        "seed": world.seed,
        "planted": world.planted is not None,
        "counts": {c: len(v) for c, v in g.classes.items()},
        "edge_counts": {c: len(v) for c, v in g.stage_edges.items()},
        "stage_weights": g.stage_weights(False),
        "stage_weights_T": g.stage_weights(True),
        "W": float(total_weight(g.G)),
        "W_T": W_T,
        "W_tilde": g.TM.W_tilde(g.G),
        "|E_tilde|": len(g.TM.failed),
        "|M|": len(g.M),
    }
    theta = None
    if world.planted is not None:
        theta = canonical_flow_kdist(world, g)
        cond = flow_conditions_exact(g, theta)
        R_T = cond["P5_energy"]
        rep["flow_conditions"] = {k: (str(v) if isinstance(v, Fraction) else v) for k, v in cond.items() if k != "P5_exact"}
    else:
        R_T = reference_R_T(world)
    rep["R_T"] = R_T
    inst = fw.build_walk_instance(g.G, g.sigma, g.M, g.stars, g.TM, R_T=R_T, W_T=W_T)
    rep["instance"] = inst.summary()
    if run_detect:
        res = fw.detect(g.G, g.sigma, g.M, flow=theta, mode=mode, inst=inst)
        for key in ("positive_witness", "negative_witness", "decision", "outcome", "p0"):
            if key in res:
                rep[key] = res[key]
        rep["correct"] = (res["outcome"] == "positive") == (world.planted is not None)
        if strict and not rep["correct"]:
            err = fw.Inconsistent(f"outcome {res['outcome']} (p0 = {res['p0']:.4g}) for planted={world.planted is not None}")
            err.report = rep
            raise err
    elif theta is not None:
        rep["positive_witness"] = fw.positive_witness_report(inst, theta)
    else:
        rep["negative_witness"] = fw.negative_witness_report(inst)
    return rep


def reference_R_T(world: KDistWorld) -> float:
    """R^T for an unplanted world: the canonical flow energy of the planted twin.

    The negative case has no flow, but the decider needs the same R^T the
    positive case would use. We plant a collision with the same seed and
    parameters and take its flow energy.
    """
    twin = make_world(world.n, world.k, world.q, world.params, plant=True, seed=world.seed)
    g = enumerate_graph(twin)
    return flow_conditions_exact(g, canonical_flow_kdist(twin, g))["P5_energy"]


# ------------------------------------------------------------------ sampling


def sample_rtuple(world: KDistWorld, rng: np.random.Generator, big1: int | None = None, big2: int | None = None) -> RTuple:
    """Random R for k = 3; ``big1``/``big2`` pick the slot holding t+1 items."""
    if world.k != 3:
        raise NotImplementedError
    t1, t2 = world.params.t
    S_keys, s_keys = slot_keys(world, 1), slot_keys(world, 2)
    sz1 = [t1 + (a == big1) for a in range(len(S_keys))]
    sz2 = [t2 + (a == big2) for a in range(len(s_keys))]
    pool1 = list(rng.permutation(world.A[0]))
    pool2 = list(rng.permutation(np.arange(1, world.params.m[1] + 1)))
    r1, r2 = [], []
    for z in sz1:
        r1.append(tuple(sorted(int(pool1.pop()) for _ in range(z))))
    for z in sz2:
        r2.append(tuple(sorted(int(pool2.pop()) for _ in range(z))))
    return RTuple((tuple(r1), tuple(r2)))


def tail_fraction(world: KDistWorld, samples: int = 500, seed: int = 0) -> float:
    """Fraction of sampled (R, j) with |K(R1bar, A_2^{(j)})| >= p_2 (k = 3)."""
    rng = np.random.default_rng(seed)
    cap = world.params.cap(2, world.n)
    hits = 0
    for _ in range(samples):
        R = sample_rtuple(world, rng)
        j = int(rng.integers(1, world.params.m[1] + 1))
        hits += len(collision_set(world, R.bar_all(world, 1), world.blocks[2][j])) >= cap
    return hits / samples
