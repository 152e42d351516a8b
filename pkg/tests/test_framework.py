import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdqw import welded as wd
from mdqw.framework import (
    V0,
    AlternativeNeighbourhoods,
    FlowOnFailedEdge,
    FrameworkError,
    MarkedSetNonEmpty,
    StarStateSpanViolation,
    TransitionModel,
    build_walk_instance,
    detect,
    edge_AB_parts,
    exit_amplitudes,
    history_state,
    lab_star,
    negative_witness_construct,
    negative_witness_report,
    path_gadget_subroutine,
    positive_witness_from_flow,
    positive_witness_report,
    verify_flow_conditions,
)
from mdqw.network import Flow, build_network, flow_energy, total_weight
from mdqw.spectral import StateVector


def single_edge(T=2, marked=True):
    G = build_network("st", [("s", "t", 1.0, T)])
    return build_walk_instance(G, {"s": 1.0}, {"t"} if marked else set(), R_T=float(T), W_T=float(T))


def welded_instance(seed, g, eps=0.0):
    inst = wd.generate_instance(2, seed)
    G, sigma, M, stars, R_T, theta = wd.framework_inputs(inst, g)
    TM = TransitionModel(eps={k: eps for k in G.edges}, eps_bound=eps) if eps else None
    return build_walk_instance(G, sigma, M, stars, TM, R_T=R_T), theta, inst


# ------------------------------------------------------------ gadgets


def test_gadget_exact():
    g = path_gadget_subroutine(("u", "v"), 2, 0.0)
    x = g.run()
    assert x[g.labels.index("vj")] == pytest.approx(1.0, abs=1e-15)


def test_gadget_full_error():
    g = path_gadget_subroutine(("u", "v"), 4, 4.0)
    assert g.run()[g.labels.index("vj")] == pytest.approx(-1.0)


@given(st.integers(1, 5), st.floats(0, 4))
@settings(max_examples=40)
def test_gadget_deviation(half, eps):
    g = path_gadget_subroutine(("u", "v"), 2 * half, eps)
    assert abs(g.deviation() - eps) <= 1e-12
    for U in g.unitaries:
        assert np.allclose(U.T @ U, np.eye(U.shape[0]))


def test_gadget_rejects_odd_length():
    with pytest.raises(FrameworkError):
        path_gadget_subroutine(("u", "v"), 3)


def test_exit_amplitudes_distance():
    for eps in (0.0, 1e-6, 0.5, 2.0, 4.0):
        c, s = exit_amplitudes(eps)
        assert (1 - c) ** 2 + s**2 == pytest.approx(eps, abs=1e-15)


# ------------------------------------------------------------ instance


def test_single_edge_basis():
    inst = single_edge()
    # oracle: (s,0),(s,i),z^1,end,(t,j),(t,0) enumerated by hand
    expected = {
        lab_star("s", V0),
        lab_star("s", ("+", "t")),
        ("z", 0, 1),
        ("end", 0),
        lab_star("t", ("-", "s")),
        lab_star("t", V0),
    }
    assert set(inst.basis.labels) == expected
    assert inst.w0 == 0.5 and inst.wM == 2.0
    assert inst.params.c_plus == 7 and inst.params.C_minus == 2 * 2 * 2 + 1


def test_psi0_orthogonal_to_B():
    inst, _, _ = welded_instance(0, lambda t: 1)
    for v in inst.B.states():
        assert abs(v.inner(inst.psi0)) <= 1e-12


def test_parity_families_pairwise_orthogonal():
    inst, _, _ = welded_instance(1, lambda t: 1)
    assert inst.dim <= 2000
    for F in (inst.A, inst.B):
        blocks = F.blocks
        for a in range(len(blocks)):
            for b in range(a + 1, len(blocks)):
                for x in blocks[a][1]:
                    for y in blocks[b][1]:
                        assert abs(x.inner(y)) <= 1e-12


def test_sigma_validation():
    G = build_network("st", [("s", "t", 1.0)])
    with pytest.raises(FrameworkError):
        build_walk_instance(G, {"s": 0.5}, set(), R_T=1.0)
    with pytest.raises(FrameworkError):
        build_walk_instance(G, {"s": 1.0}, {"s"}, R_T=1.0)


def test_star_span_violation():
    G = build_network("abc", [("a", "b", 1.0), ("b", "c", 1.0)])
    stars = AlternativeNeighbourhoods({"b": [{("-", "a"): 1.0}]})
    with pytest.raises(StarStateSpanViolation):
        build_walk_instance(G, {"a": 1.0}, {"c"}, stars, R_T=4.0)


# ------------------------------------------------------------ witnesses


@pytest.mark.parametrize("T", [2, 4, 6])
def test_history_state_norm(T):
    inst = single_edge(T)
    assert history_state(inst, ("s", "t")).norm2() == pytest.approx(T + 2)


@pytest.mark.parametrize("T", [2, 4, 8])
def test_alg_states_collapse(T):
    inst = single_edge(T, marked=False)
    wA, wB, _ = edge_AB_parts(inst, ("s", "t"))
    assert wA.norm2() == pytest.approx(2 * (T // 2))
    want = StateVector({lab_star("s", ("+", "t")): 1.0, ("end", 0): -1.0})
    diff = wA + wB - want
    assert diff.norm() <= 1e-15


def test_zero_flow_zero_witness():
    inst = single_edge()
    w = positive_witness_from_flow(inst, Flow())
    assert w.norm() == 0


def test_single_edge_positive_witness():
    inst = single_edge()
    th = Flow({("s", "t"): 1})
    w = positive_witness_from_flow(inst, th)
    assert inst.psi0.inner(w).real == pytest.approx(-1 / math.sqrt(inst.w0))
    rep = positive_witness_report(inst, th)
    assert rep["errA"] <= 1e-12 and rep["errB"] <= 1e-12


def test_welded_positive_witness_orthogonality():
    inst, theta, _ = welded_instance(2, lambda t: 1)
    w = positive_witness_from_flow(inst, theta)
    # Claim ortho1: zero overlap with psi-> and every gadget state
    for bid, vs in inst.B.blocks:
        for v in vs:
            assert abs(v.inner(w)) <= 1e-12
    # Claim ortho2: zero overlap with every (extended) star state
    for bid, vs in inst.A.blocks:
        for v in vs:
            assert abs(v.inner(w)) <= 1e-10
    rep = positive_witness_report(inst, theta)
    assert rep["inner_psi0"] == pytest.approx(rep["expected_inner"], rel=1e-12)
    assert rep["ratio"] <= 7 and rep["pass"]


def test_injected_error_positive():
    eps = 1e-6
    inst, theta, _ = welded_instance(3, lambda t: 1, eps)
    rep = positive_witness_report(inst, theta)
    assert rep["errA"] <= 1e-12
    assert rep["errB"] <= eps / 2
    # Claim ortho1 item 3: the back state overlaps one edge history by at most eps
    key = next(iter(inst.G.edges))
    h = history_state(inst, key)
    k = inst.edge_ids[key]
    (back,) = dict(inst.B.blocks)[("back", k)]
    nb = back * (1 / back.norm())
    assert abs(nb.inner(h)) ** 2 <= eps + 1e-15


def test_failed_edge_flow_rejected():
    G = build_network("st", [("s", "t", 1.0)])
    TM = TransitionModel(eps={("s", "t"): 4.0}, failed={("s", "t")})
    inst = build_walk_instance(G, {"s": 1.0}, {"t"}, TM=TM, R_T=2.0)
    with pytest.raises(FlowOnFailedEdge):
        positive_witness_from_flow(inst, Flow({("s", "t"): 1}))


def test_negative_witness_welded():
    inst, _, _ = welded_instance(4, lambda t: 0)
    rep = negative_witness_report(inst)
    assert rep["reconstruction"] <= 1e-10
    assert rep["residualA"] <= 1e-20 and rep["residualB"] <= 1e-20
    assert rep["normA2"] <= 2 * inst.R_T * inst.W_T + 1 + 1e-9


def test_negative_requires_empty_M():
    with pytest.raises(MarkedSetNonEmpty):
        negative_witness_construct(single_edge())


def test_negative_with_error_residual_bound():
    eps = 1e-4
    inst, _, _ = welded_instance(5, lambda t: 0, eps)
    rep = negative_witness_report(inst)
    assert rep["reconstruction"] <= 1e-10
    bound = inst.R_T * eps * float(total_weight(inst.G))
    assert rep["residualB"] <= bound * (1 + 1e-9)


def test_negative_with_failed_edges():
    G = build_network("abc", [("a", "b", 1.0), ("b", "c", 0.5)])
    TM = TransitionModel(eps={("b", "c"): 4.0}, failed={("b", "c")})
    inst = build_walk_instance(G, {"a": 1.0}, set(), TM=TM, R_T=1.0)
    rep = negative_witness_report(inst)
    assert rep["reconstruction"] <= 1e-10
    assert rep["residualB"] <= rep["residual_bound"] * (1 + 1e-9)
    assert not rep["ts2_ok"]


# ------------------------------------------------------------ flow conditions


def test_p2_reduces_to_conservation():
    G = build_network("abcd", [("a", "b", 1.0), ("b", "c", 2.0), ("c", "d", 1.0), ("a", "c", 1.0)])
    inst = build_walk_instance(G, {"a": 1.0}, {"d"}, R_T=10.0)
    th = Flow({("a", "b"): 0.5, ("b", "c"): 0.5, ("a", "c"): 0.5, ("c", "d"): 1.0})
    rep = verify_flow_conditions(inst, th)
    assert rep["P2"] and rep["P3"] and rep["P1"]
    assert rep["P4_value"] == pytest.approx(0.0)
    assert rep["P5"] == (float(flow_energy(th, G, use_lengths=True)) <= 10.0)


def test_p3_fails_without_source():
    G = build_network("abc", [("a", "b", 1.0), ("b", "c", 1.0), ("a", "c", 1.0)])
    inst = build_walk_instance(G, {"a": 1.0}, {"c"}, R_T=1.0)
    th = Flow({("a", "b"): 1, ("b", "c"): 1, ("c", "a"): 1})
    assert not verify_flow_conditions(inst, th)["P3"]


# ------------------------------------------------------------ detection


@pytest.mark.parametrize("seed", range(5))
def test_framework_matches_welded(seed):
    inst = wd.generate_instance(2, seed)
    for g in (lambda t: 1, lambda t: 0):
        G, sigma, M, stars, R_T, theta = wd.framework_inputs(inst, g)
        out = detect(G, sigma, M, stars, R_T=R_T, flow=theta if M else None)
        bit = wd.decide_g(inst, g)
        assert out["outcome"] == ("positive" if bit else "negative")
