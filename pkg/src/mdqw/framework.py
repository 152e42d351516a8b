"""Multidimensional quantum walk on an extended space with edge gadgets.

Every edge (u, v) of the network is traversed by a length-T_e subroutine
that walks a private chain z^1..z^{T_e-1} and lands on |v,j>, optionally
missing it by a controlled amount eps_e. The walk space H' is

    |u,i>|0>            star labels at time 0 (i in L(u) or the v0 label)
    |z^t>|t>            gadget chain, 1 <= t < T_e
    |v,j>|T_e>          gadget exit
    |p>|T_e-1>, |z_perp>|T_e>   error partner and sink (only if eps_e > 0)

Labels in H' are tuples tagged by their first entry: ('x', u, i),
('z', e, t), ('end', e), ('perp', e), ('p', e).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

from .network import IN, OUT, Dangling, Flow, Network, flow_divergence, flow_energy, total_weight
from .spectral import (
    Basis,
    DeciderParams,
    StateFamily,
    StateVector,
    Subspace,
    SpectralError,
    check_negative_witness,
    check_positive_witness,
    decide,
    orthonormalize_family,
)

V0 = "v0"  # local label of the extra edge to the vertex v0
SPAN_TOL = 1e-10


TS_CALIBRATION = 0.01


class FrameworkError(ValueError):
    pass


class StarStateSpanViolation(FrameworkError):
    pass


class OverlapViolation(FrameworkError):
    pass


class FlowOnFailedEdge(FrameworkError):
    pass


class MarkedSetNonEmpty(FrameworkError):
    pass


class Inconsistent(AssertionError):
    pass


# ---------------------------------------------------------------- gadget


@dataclass
class GadgetSubroutine:
    """Unitaries U_0..U_{T-1} on the gadget space of one edge."""

    labels: list
    unitaries: list  # dense matrices over ``labels``
    eps: float

    def run(self) -> np.ndarray:
        x = np.zeros(len(self.labels))
        x[0] = 1.0
        for U in self.unitaries:
            x = U @ x
        return x

    def deviation(self) -> float:
        x = self.run()
        target = np.zeros(len(self.labels))
        target[self.labels.index("vj")] = 1.0
        return float(np.sum((target - x) ** 2))


def exit_amplitudes(eps: float) -> tuple[float, float]:
    """(c, s) with c|v,j> + s|z_perp> at distance^2 eps from |v,j>."""
    if not 0 <= eps <= 4:
        raise FrameworkError("eps must lie in [0, 4]")
    c = 1.0 - eps / 2.0
    return c, math.sqrt(max(0.0, 1.0 - c * c))


def path_gadget_subroutine(edge: tuple, T_e: int, eps_e: float = 0.0) -> GadgetSubroutine:
    """Chain of swaps ending in a rotation onto |v,j> and a private sink."""
    if T_e < 2 or T_e % 2:
        raise FrameworkError("T_e must be a positive even integer")
    c, s = exit_amplitudes(eps_e)
    labels = ["ui"] + [("z", t) for t in range(1, T_e)] + ["vj", "perp", "p"]
    n = len(labels)
    idx = {k: i for i, k in enumerate(labels)}
    chain = ["ui"] + [("z", t) for t in range(1, T_e)]
    Us = []
    for t in range(T_e - 1):
        U = np.eye(n)
        a, b = idx[chain[t]], idx[chain[t + 1]]
        U[[a, b]] = U[[b, a]]
        Us.append(U)
    U = np.eye(n)
    z, p, vj, pp = idx[chain[-1]], idx["p"], idx["vj"], idx["perp"]
    R = np.array([[c, -s], [s, c]])  # columns: images of z and p
    for r in (z, p, vj, pp):
        U[r, r] = 0.0
    U[np.ix_([vj, pp], [z, p])] = R
    U[np.ix_([z, p], [vj, pp])] = R.T
    Us.append(U)
    return GadgetSubroutine(labels, Us, eps_e)


# ---------------------------------------------------------------- inputs


@dataclass
class TransitionModel:
    """Per-edge subroutine errors and the set of failing edges."""

    eps: dict = field(default_factory=dict)  # stored edge -> eps_e
    failed: set = field(default_factory=set)  # E-tilde
    eps_bound: float = 0.0

    def error(self, e) -> float:
        return float(self.eps.get(e, 0.0))

    def validate(self, G: Network):
        for e in self.eps:
            if e not in G.edges:
                raise FrameworkError(f"error on unknown edge {e!r}")
        for e in self.failed:
            if e not in G.edges:
                raise FrameworkError(f"failed edge {e!r} unknown")
        for e, x in self.eps.items():
            if not 0 <= x <= 4:
                raise FrameworkError("eps_e must lie in [0, 4]")
            if e not in self.failed and x > self.eps_bound + 1e-15:
                raise FrameworkError(f"eps_e on {e!r} exceeds the global bound")

    def W_tilde(self, G: Network) -> float:
        return float(sum(G.edges[e].w for e in self.failed))

    def T_max(self, G: Network) -> int:
        return max((e.T for e in G.edges.values()), default=0)


def true_star(G: Network, u) -> dict:
    """Local amplitudes of the star state: +sqrt(w) on out labels, -sqrt(w) on in labels."""
    out = {}
    for i, v in G.out_labels.get(u, {}).items():
        out[i] = math.sqrt(G.edges[(u, v)].w)
    for j, v in G.in_labels.get(u, {}).items():
        out[j] = -math.sqrt(G.edges[(v, u)].w)
    return out


@dataclass
class AlternativeNeighbourhoods:
    """Per-vertex alternatives for the star state, as maps local label -> amplitude.

    Vertices without an entry use the true star state.
    """

    alternatives: dict = field(default_factory=dict)
    zero_labels: dict = field(default_factory=dict)  # u -> labels of zero-weight edges

    def states(self, G: Network, u) -> list[dict]:
        return self.alternatives.get(u) or [true_star(G, u)]

    def validate(self, G: Network, singleton: Iterable = ()):
        single = set(singleton)
        for u, alts in self.alternatives.items():
            if u in single and len(alts) != 1:
                raise FrameworkError(f"vertex {u!r} must have a single star state")
            star = true_star(G, u)
            labels = list(dict.fromkeys([*star, *(k for a in alts for k in a)]))
            M = np.array([[a.get(k, 0.0) for a in alts] for k in labels], dtype=float)
            y = np.array([star.get(k, 0.0) for k in labels])
            coef, *_ = np.linalg.lstsq(M, y, rcond=None)
            res = np.linalg.norm(M @ coef - y)
            if res > SPAN_TOL * max(1.0, np.linalg.norm(y)):
                raise StarStateSpanViolation(f"true star state of {u!r} not in the span (residual {res:.3g})")
            local = set(G.out_labels.get(u, {})) | set(G.in_labels.get(u, {})) | set(self.zero_labels.get(u, ()))
            for a in alts:
                if set(a) - local:
                    raise StarStateSpanViolation(f"alternative at {u!r} uses a foreign label")


# ---------------------------------------------------------------- instance


def lab_star(u, i):
    return ("x", u, i)


@dataclass
class WalkInstance:
    G: Network
    sigma: dict
    M: set
    stars: AlternativeNeighbourhoods
    TM: TransitionModel
    R_T: float
    W_T: float
    w0: float
    wM: float
    basis: Basis
    psi0: StateVector
    A: StateFamily
    B: StateFamily
    params: DeciderParams
    edge_ids: dict  # stored edge -> integer id used in gadget labels
    _subspaces: tuple | None = None

    @property
    def dim(self) -> int:
        return len(self.basis)

    def subspaces(self) -> tuple[Subspace, Subspace]:
        if self._subspaces is None:
            self._subspaces = (Subspace(self.A, self.basis), Subspace(self.B, self.basis))
        return self._subspaces

    def operator(self):
        from .spectral import ReflectionProduct

        return ReflectionProduct(*self.subspaces())

    def summary(self) -> dict:
        return {
            "dim": self.dim,
            "n_vertices": len(self.G.vertices),
            "n_edges": self.G.n_edges,
            "|Psi_A|": len(self.A),
            "|Psi_B|": len(self.B),
            "w0": self.w0,
            "wM": self.wM,
            "R_T": self.R_T,
            "W_T": self.W_T,
            "c_plus": self.params.c_plus,
            "C_minus": self.params.C_minus,
            "T": self.params.T,
        }


def _edge_states(e_id: int, e, eps: float) -> dict:
    """Algorithm states of one edge grouped by time step."""
    u, v, i, j, T = e.u, e.v, e.out_label, e.in_label, e.T
    c, s = exit_amplitudes(eps)
    z = lambda t: ("z", e_id, t)
    end, perp, p = ("end", e_id), ("perp", e_id), ("p", e_id)
    exit_ = {end: c, perp: s} if s else {end: c}
    steps = {0: [StateVector({lab_star(u, i): 1.0, z(1): -1.0})]}
    for t in range(1, T - 1):
        steps[t] = [StateVector({z(t): 1.0, z(t + 1): -1.0})]
    last = [StateVector({z(T - 1): 1.0, **{k: -a for k, a in exit_.items()}})]
    if s:
        last.append(StateVector({p: 1.0, end: s, perp: -c}))
    steps[T - 1] = last
    back = StateVector({end: 1.0, lab_star(v, j): -1.0})
    return {"steps": steps, "back": back, "exit": exit_}


def build_walk_instance(
    G: Network,
    sigma: Mapping,
    M: Iterable,
    stars: AlternativeNeighbourhoods | None = None,
    TM: TransitionModel | None = None,
    R_T: float | None = None,
    W_T: float | None = None,
    c_plus: float = 7.0,
    validate: bool = True,
) -> WalkInstance:
    stars = stars or AlternativeNeighbourhoods()
    TM = TM or TransitionModel()
    M = set(M)
    sigma = dict(sigma)
    if set(sigma) & M:
        raise FrameworkError("V0 and M must be disjoint")
    if any(not x > 0 for x in sigma.values()):
        raise FrameworkError("sigma must be positive on V0")
    if abs(sum(sigma.values()) - 1.0) > 1e-12:
        raise FrameworkError("sigma must sum to 1")
    for u in [*sigma, *M]:
        if not G.has_vertex(u):
            raise FrameworkError(f"unknown vertex {u!r}")
    if validate:
        stars.validate(G, singleton=[*sigma, *M])
        TM.validate(G)
    if W_T is None:
        W_T = float(total_weight(G, use_lengths=True))
    if R_T is None:
        raise FrameworkError("R_T is required")
    w0 = 1.0 / R_T
    wM = float(len(G.vertices))

    A, B = StateFamily(), StateFamily()
    for u in G.vertices:
        extra = {}
        if u in sigma:
            extra[V0] = math.sqrt(w0 * sigma[u])
        elif u in M:
            extra[V0] = math.sqrt(wM)
        alts = []
        for a in stars.states(G, u):
            amps = {lab_star(u, k): x for k, x in {**a, **extra}.items()}
            if amps:
                alts.append(StateVector(amps))
        if alts:
            A.add(("star", u), alts)
    edge_ids = {}
    for k, (key, e) in enumerate(G.edges.items()):
        edge_ids[key] = k
        st = _edge_states(k, e, TM.error(key))
        for t, states in st["steps"].items():
            (B if t % 2 == 0 else A).add(("t", k, t), states)
        B.add(("back", k), [st["back"]])
    psi0 = StateVector({lab_star(u, V0): math.sqrt(x) for u, x in sigma.items()})

    labels = []
    for F in (A, B):
        for v in F.states():
            labels.extend(v.amps)
    labels.extend(psi0.amps)
    basis = Basis(labels)
    params = DeciderParams(c_plus=c_plus, C_minus=2 * R_T * W_T + 1)
    inst = WalkInstance(G, sigma, M, stars, TM, R_T, W_T, w0, wM, basis, psi0, A, B, params, edge_ids)
    if validate:
        for v in B.states():
            if abs(v.inner(psi0)) > 1e-10:
                raise OverlapViolation("psi0 overlaps a state of Psi_B")
    return inst


# ---------------------------------------------------------------- witnesses


def history_state(inst: WalkInstance, key) -> StateVector:
    """|u,i>|0> + sum_t |z^t>|t> + (c|v,j> + s|z_perp>)|T> + |v,j>|0>."""
    e = inst.G.edges[key]
    k = inst.edge_ids[key]
    c, s = exit_amplitudes(inst.TM.error(key))
    amps = {lab_star(e.u, e.out_label): 1.0, lab_star(e.v, e.in_label): 1.0, ("end", k): c}
    for t in range(1, e.T):
        amps[("z", k, t)] = 1.0
    if s:
        amps[("perp", k)] = s
    return StateVector(amps)


def positive_witness_from_flow(inst: WalkInstance, theta: Flow) -> StateVector:
    amps: dict = {}
    for (u, v), x in theta.items():
        if x == 0:
            continue
        key = inst.G.oriented(u, v)
        if key is None:
            raise FrameworkError(f"flow on non-edge ({u!r}, {v!r})")
        if key in inst.TM.failed:
            raise FlowOnFailedEdge(repr(key))
        f = float(theta[key]) / math.sqrt(inst.G.edges[key].w)
        for lab, a in history_state(inst, key).amps.items():
            amps[lab] = amps.get(lab, 0.0) + f * a
    for u, sg in inst.sigma.items():
        d = float(flow_divergence(theta, inst.G, u))
        if d:
            amps[lab_star(u, V0)] = amps.get(lab_star(u, V0), 0.0) - d / math.sqrt(inst.w0 * sg)
    for u in inst.M:
        d = float(flow_divergence(theta, inst.G, u))
        if d:
            amps[lab_star(u, V0)] = amps.get(lab_star(u, V0), 0.0) - d / math.sqrt(inst.wM)
    return StateVector(amps)


def edge_AB_parts(inst: WalkInstance, key) -> tuple[StateVector, StateVector, StateVector]:
    """(w^A, w^B, tilde psi_back) for one edge."""
    e = inst.G.edges[key]
    k = inst.edge_ids[key]
    st = _edge_states(k, e, inst.TM.error(key))
    wA, wB = StateVector(), StateVector()
    for t, states in st["steps"].items():
        if t % 2:
            wA = wA + states[0]
        else:
            wB = wB + states[0]
    tilde = StateVector({**st["exit"], lab_star(e.v, e.in_label): -1.0})
    return wA, wB, tilde


def negative_witness_construct(inst: WalkInstance) -> tuple[StateVector, StateVector]:
    if inst.M:
        raise MarkedSetNonEmpty("negative witness needs M empty")
    G = inst.G
    a: dict = {}
    b: dict = {}

    def add(store, vec, f):
        for lab, x in vec.amps.items():
            store[lab] = store.get(lab, 0.0) + f * x

    r = 1.0 / math.sqrt(inst.w0)
    for u in G.vertices:
        amps = {lab_star(u, k): x for k, x in true_star(G, u).items()}
        if u in inst.sigma:
            amps[lab_star(u, V0)] = math.sqrt(inst.w0 * inst.sigma[u])
        add(a, StateVector(amps), r)
    for key, e in G.edges.items():
        wA, wB, tilde = edge_AB_parts(inst, key)
        sw = math.sqrt(e.w)
        add(a, wA, -r * sw)
        add(b, wB + tilde, -r * sw)
    return StateVector(a), StateVector(b)


def negative_witness_report(inst: WalkInstance, wA=None, wB=None) -> dict:
    if wA is None:
        wA, wB = negative_witness_construct(inst)
    A, B = inst.subspaces()
    rep = check_negative_witness(wA, wB, inst.psi0, A, B, delta_prime=math.inf, basis=inst.basis)
    bound = 2 * inst.R_T * inst.W_T + 1
    rep["normA2_bound"] = bound
    rep["normA2_within_bound"] = rep["normA2"] <= bound * (1 + 1e-12)
    rep["residual_bound"] = inst.R_T * (inst.TM.eps_bound * total_weight(inst.G) + 4 * inst.TM.W_tilde(inst.G))
    # fixed-size stand-ins for the asymptotic TS1/TS2 hypotheses
    rep["ts1_ok"] = inst.TM.eps_bound * inst.R_T * float(total_weight(inst.G)) <= TS_CALIBRATION
    rep["ts2_ok"] = 4 * inst.R_T * inst.TM.W_tilde(inst.G) <= TS_CALIBRATION
    rep["pass"] = rep["reconstruction"] <= 1e-10 and rep["normA2_within_bound"]
    return rep


def positive_witness_report(inst: WalkInstance, theta: Flow, w: StateVector | None = None) -> dict:
    if w is None:
        w = positive_witness_from_flow(inst, theta)
    A, B = inst.subspaces()
    rep = check_positive_witness(w, inst.psi0, A, B, delta=math.inf, basis=inst.basis)
    rep["inner_psi0"] = float(np.real(inst.psi0.inner(w)))
    rep["expected_inner"] = -1.0 / math.sqrt(inst.w0)
    rep["pass"] = rep["ratio"] <= inst.params.c_plus and rep["errA"] <= 1e-10
    return rep


def verify_flow_conditions(inst: WalkInstance, theta: Flow, tol: float = 1e-10) -> dict:
    G = inst.G
    # P1
    p1 = max((abs(float(theta[e])) for e in inst.TM.failed), default=0.0)
    # P2
    p2 = 0.0
    for u in G.vertices:
        if u in inst.sigma or u in inst.M:
            continue
        loc = {}
        for i, v in G.out_labels.get(u, {}).items():
            if not isinstance(v, Dangling):
                loc[i] = float(theta[u, v]) / math.sqrt(G.edges[(u, v)].w)
        for j, v in G.in_labels.get(u, {}).items():
            loc[j] = -float(theta[u, v]) / math.sqrt(G.edges[(v, u)].w)
        if not any(loc.values()):
            continue
        for a in inst.stars.states(G, u):
            p2 = max(p2, abs(sum(x * loc.get(k, 0.0) for k, x in a.items())))
    # P3, P4
    divs = {u: float(flow_divergence(theta, G, u)) for u in inst.sigma}
    p3 = sum(divs.values())
    p4 = sum((divs[u] - s) ** 2 / s for u, s in inst.sigma.items())
    # P5
    p5 = float(flow_energy(theta, G, use_lengths=True))
    return {
        "P1": p1 <= tol,
        "P1_max_failed_flow": p1,
        "P2": p2 <= tol,
        "P2_max_violation": p2,
        "P3": abs(p3 - 1) <= tol,
        "P3_total": p3,
        "P4": p4 <= 1 + tol,
        "P4_value": p4,
        "P5": p5 <= inst.R_T * (1 + tol),
        "P5_energy": p5,
        "R_T": inst.R_T,
    }


# ---------------------------------------------------------------- detection


def detect(
    G: Network,
    sigma: Mapping,
    M: Iterable,
    stars: AlternativeNeighbourhoods | None = None,
    TM: TransitionModel | None = None,
    R_T: float | None = None,
    W_T: float | None = None,
    flow: Flow | None = None,
    mode: str | None = None,
    inst: WalkInstance | None = None,
) -> dict:
    """Build the walk, run the decider and cross-check against witnesses."""
    if inst is None:
        inst = build_walk_instance(G, sigma, M, stars, TM, R_T, W_T)
    decision = decide(inst.operator(), inst.psi0, inst.params, mode=mode, basis=inst.basis)
    out: dict = {"decision": decision.to_dict(), "instance": inst.summary()}
    if inst.M and flow is not None:
        out["flow_conditions"] = verify_flow_conditions(inst, flow)
        out["positive_witness"] = positive_witness_report(inst, flow)
        if out["positive_witness"]["pass"] and decision.outcome != "positive":
            raise Inconsistent(f"verified positive witness but outcome {decision.outcome}")
    if not inst.M:
        out["negative_witness"] = negative_witness_report(inst)
        nw = out["negative_witness"]
        dp = DeciderParams.delta_prime_max(inst.params.c_plus)
        if nw["pass"] and max(nw["residualA"], nw["residualB"]) <= dp and decision.outcome != "negative":
            raise Inconsistent(f"verified negative witness but outcome {decision.outcome}")
    out["outcome"] = decision.outcome
    out["p0"] = decision.p0
    return out
