from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from mdqw import welded as wd
from mdqw.network import (
    Dangling,
    Disconnected,
    DuplicateEdge,
    Edge,
    Flow,
    LabelMismatch,
    NonPositiveWeight,
    OddLength,
    UnknownVertex,
    build_network,
    exact_hitting_time,
    flow_divergence,
    flow_energy,
    flow_to_json,
    is_circulation,
    min_energy_flow,
    network_from_json,
    network_to_json,
    random_walk_hitting_time,
    total_weight,
)


def triangle(w=(1, 1, 1)):
    return build_network("abc", [("a", "b", w[0]), ("b", "c", w[1]), ("a", "c", w[2])])


def test_triangle_builds():
    G = triangle()
    assert len(G.vertices) == 3 and G.n_edges == 3
    assert all(e.T == 2 for e in G.edges.values())


def test_welded_n2_counts():
    G = wd.build_weighted_network(wd.generate_instance(2, 0))
    assert len(G.vertices) == 14 and G.n_edges == 2 + 4 + 8 + 4 + 2


@pytest.mark.parametrize(
    "edges,err",
    [
        ([("a", "b", 1), ("b", "a", 1)], DuplicateEdge),
        ([("a", "b", 0)], NonPositiveWeight),
        ([("a", "b", -1)], NonPositiveWeight),
        ([("a", "b", 1, 3)], OddLength),
        ([("a", "z", 1)], UnknownVertex),
        ([("a", "b", 1, 2, "x", "y"), ("a", "c", 1, 2, "x", "y")], LabelMismatch),
    ],
)
def test_invalid_networks(edges, err):
    with pytest.raises(err):
        build_network("abc", edges)


def test_label_bijection_round_trip():
    G = triangle()
    for (u, v), e in G.edges.items():
        assert G.out_labels[u][e.out_label] == v
        assert G.in_labels[v][e.in_label] == u
    # L+ and L- are disjoint at every vertex
    for u in G.vertices:
        assert not set(G.out_labels.get(u, {})) & set(G.in_labels.get(u, {}))


def test_total_weight():
    G = build_network("ab", [("a", "b", 3)])
    assert total_weight(G) == 3
    G4 = build_network("ab", [("a", "b", 3, 4)])
    assert total_weight(G4, use_lengths=True) == 12


def test_welded_total_weight_oracle():
    # oracle: |E_k| = 2,4,8,4,2 and w_k = 1/4,1/4,1/16,1/16,1/4 for n = 2
    n = 2
    sizes = [2**k if k <= n + 1 else 2 ** (2 * n + 2 - k) for k in range(1, 2 * n + 2)]
    ws = [Fraction(1, 4 ** (-(-k // 2))) if k <= n else Fraction(1, 4 ** (n + 2 - (-(-k // 2)))) for k in range(1, 2 * n + 2)]
    assert sizes == [2, 4, 8, 4, 2] and ws == [Fraction(1, 4), Fraction(1, 4), Fraction(1, 16), Fraction(1, 16), Fraction(1, 4)]
    oracle = sum(a * b for a, b in zip(sizes, ws))
    assert oracle == Fraction(11, 4)
    G = wd.build_weighted_network(wd.generate_instance(2, 3))
    assert total_weight(G) == oracle


def test_divergence_and_circulation():
    G = triangle()
    th = Flow({("a", "b"): 1, ("b", "c"): 1, ("c", "a"): 1})
    assert all(flow_divergence(th, G, u) == 0 for u in "abc")
    assert is_circulation(th, G)
    th2 = Flow({("a", "b"): 1})
    assert not is_circulation(th2, G)
    with pytest.raises(UnknownVertex):
        flow_divergence(th, G, "z")


def test_welded_canonical_flow_divergence():
    inst = wd.generate_instance(2, 1)
    G = wd.build_weighted_network(inst)
    th = wd.canonical_flow(inst)
    s, t = inst.vertex(inst.s), inst.vertex(inst.t)
    # oracle: s has two child edges each carrying 1/2
    assert flow_divergence(th, G, s) == 2 * Fraction(1, 2) == 1
    assert flow_divergence(th, G, t) == -1
    for u in G.vertices:
        if u not in (s, t):
            assert flow_divergence(th, G, u) == 0


def test_energy():
    G = build_network("ab", [("a", "b", Fraction(1, 3))])
    assert flow_energy(Flow({("a", "b"): 1}), G) == 3
    inst = wd.generate_instance(2, 0)
    Gw = wd.build_weighted_network(inst)
    th = wd.canonical_flow(inst)
    # oracle: sum_k 1 / (|E_k| w_k) = 2 + 1 + 2 + 4 + 2
    assert flow_energy(th, Gw) == 11
    G2 = Gw.with_lengths(4)
    assert flow_energy(th, G2, use_lengths=True) == 2 * flow_energy(th, Gw, use_lengths=True)


def test_unit_lengths_match_unlengthened():
    inst = wd.generate_instance(2, 0)
    G = wd.build_weighted_network(inst).with_lengths(1)
    th = wd.canonical_flow(inst)
    assert total_weight(G, use_lengths=True) == total_weight(G)
    assert flow_energy(th, G, use_lengths=True) == flow_energy(th, G)


def test_series_parallel():
    series = build_network("abc", [("a", "b", 1), ("b", "c", 1)])
    assert min_energy_flow(series, "a", "c")[1] == pytest.approx(2, rel=1e-9)
    par = build_network(["a", "b", "m"], [("a", "b", 1), ("a", "m", 2), ("m", "b", 2)])
    # unit edge in parallel with two weight-2 edges in series (resistance 1)
    assert min_energy_flow(par, "a", "b")[1] == pytest.approx(0.5, rel=1e-9)


def test_disconnected():
    G = build_network("abcd", [("a", "b", 1), ("c", "d", 1)])
    with pytest.raises(Disconnected):
        min_energy_flow(G, "a", "d")


def _brute_force_resistance(G, s, t):
    """Minimize sum theta^2/w over unit s-t flows via the null space of the incidence matrix."""
    verts = list(G.vertices)
    keys = list(G.edges)
    B = np.zeros((len(verts), len(keys)))
    for c, (u, v) in enumerate(keys):
        B[verts.index(u), c] = 1
        B[verts.index(v), c] = -1
    b = np.zeros(len(verts))
    b[verts.index(s)], b[verts.index(t)] = 1, -1
    x0 = np.linalg.lstsq(B, b, rcond=None)[0]
    N = sla.null_space(B)
    W = np.diag([1 / float(G.edges[k].w) for k in keys])
    y = np.linalg.solve(N.T @ W @ N, -N.T @ W @ x0)
    x = x0 + N @ y
    return float(x @ W @ x)


def test_welded_resistance_vs_brute_force():
    inst = wd.generate_instance(2, 4)
    G = wd.build_weighted_network(inst)
    s, t = inst.vertex(inst.s), inst.vertex(inst.t)
    th, R = min_energy_flow(G, s, t)
    assert R <= 11 + 1e-9
    assert R == pytest.approx(_brute_force_resistance(G, s, t), rel=1e-9)
    assert flow_energy(th, G) == pytest.approx(R, rel=1e-9)


def test_hitting_single_edge():
    G = build_network("st", [("s", "t", 1)])
    st_ = random_walk_hitting_time(G, "s", ["t"], trials=20, seed=1)
    assert np.all(st_.steps == 1) and st_.fraction_capped == 0


def test_hitting_triangle_vs_exact():
    G = triangle()
    exact = exact_hitting_time(G, "a", ["c"])
    assert exact == pytest.approx(2.0)
    r = random_walk_hitting_time(G, "a", ["c"], trials=4000, seed=3)
    sd = np.std(r.steps) / np.sqrt(4000)
    assert abs(r.mean - exact) <= 3 * sd


def test_hitting_deterministic():
    G = triangle()
    a = random_walk_hitting_time(G, "a", ["c"], trials=50, seed=9)
    b = random_walk_hitting_time(G, "a", ["c"], trials=50, seed=9)
    assert np.array_equal(a.steps, b.steps)


def test_hitting_cap():
    G = build_network("abc", [("a", "b", 1), ("b", "c", 1e-9)])
    r = random_walk_hitting_time(G, "a", ["c"], trials=5, step_cap=10, seed=0)
    assert r.fraction_capped == 1.0


def test_dangling_edge():
    d = Dangling("x")
    G = build_network("ab", [("a", "b", 1), Edge("a", d, 1)])
    assert G.n_edges == 2
    assert d not in G.vertices
    assert flow_divergence(Flow({("a", d): 1}), G, "a") == 1


def test_json_round_trip():
    G = build_network(["a", "b", "c"], [("a", "b", Fraction(1, 4)), ("b", "c", 2, 4)])
    H = network_from_json(network_to_json(G))
    assert H.vertices == G.vertices
    assert {k: (e.w, e.T) for k, e in H.edges.items()} == {k: (e.w, e.T) for k, e in G.edges.items()}
    assert '"a"' in flow_to_json(Flow({("a", "b"): Fraction(1, 2)}))


weights = st.lists(st.fractions(min_value=Fraction(1, 16), max_value=16), min_size=3, max_size=3)


@given(weights, st.fractions(min_value=-5, max_value=5))
def test_antisymmetry(w, x):
    G = triangle(w)
    th = Flow({("a", "b"): x})
    assert th["b", "a"] == -th["a", "b"]
    th["b", "a"] = x
    assert th["a", "b"] == -x


@given(weights)
@settings(max_examples=30)
def test_energy_matches_potential(w):
    G = triangle(w)
    th, R = min_energy_flow(G, "a", "c")
    assert float(flow_energy(th, G)) == pytest.approx(R, rel=1e-9)
    assert abs(float(flow_divergence(th, G, "a")) - 1) < 1e-9


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10))
@settings(max_examples=30)
def test_series_parallel_rules(r1, r2, r3):
    # resistances r: weights 1/r
    G = build_network(["s", "m", "t"], [("s", "m", 1 / r1), ("m", "t", 1 / r2), ("s", "t", 1 / r3)])
    series = r1 + r2
    expected = 1 / (1 / series + 1 / r3)
    assert min_energy_flow(G, "s", "t")[1] == pytest.approx(expected, rel=1e-9)
