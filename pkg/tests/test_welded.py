import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdqw import welded as wd
from mdqw.network import flow_divergence, flow_energy, total_weight
from mdqw.spectral import StateVector, check_negative_witness, check_positive_witness, orthonormalize_family, StateFamily
from mdqw.framework import V0


def layer_sizes_oracle(n):
    return [2**k if k <= n + 1 else 2 ** (2 * n + 2 - k) for k in range(1, 2 * n + 2)]


def weight_oracle(n, k):
    # 2^{-2 ceil(k/2)} for k <= n, mirrored above
    c = -(-k // 2)
    return Fraction(1, 4**c) if k <= n else Fraction(1, 4 ** (n + 2 - c))


# ------------------------------------------------------------ generation


def test_n2_shape():
    inst = wd.generate_instance(2, 0)
    assert len(inst.adjacency) == 14
    assert inst.s == 0
    assert len(inst.oracle(inst.s)) == 2 and len(inst.oracle(inst.t)) == 2
    assert all(len(nb) == 3 for lab, nb in inst.adjacency.items() if lab not in (inst.s, inst.t))


def test_oracle_non_vertex():
    inst = wd.generate_instance(2, 1)
    missing = next(l for l in range(2**inst.label_bits) if l not in inst.adjacency)
    assert inst.oracle(missing) is None


def test_odd_depth_rejected():
    with pytest.raises(wd.OddDepth):
        wd.generate_instance(3, 0)


def test_deterministic():
    a, b = wd.generate_instance(4, 5), wd.generate_instance(4, 5)
    assert a.adjacency == b.adjacency and a.t == b.t


@pytest.mark.parametrize("n", [2, 4, 6])
def test_layer_counts(n):
    inst = wd.generate_instance(n, n)
    counts = [0] * (2 * n + 1)
    for k, _, _ in inst.layered_edges:
        counts[k - 1] += 1
    assert counts == layer_sizes_oracle(n)
    assert [wd.edge_count(n, k) for k in range(1, 2 * n + 2)] == layer_sizes_oracle(n)


def test_parity_is_bipartition():
    inst = wd.generate_instance(4, 2)
    for lab, nb in inst.adjacency.items():
        for v in nb:
            assert inst.parity[lab] != inst.parity[v]
    assert inst.parity[inst.s] == 0


def test_graph_generator_odd_n():
    inst = wd.generate_graph(3, 0)
    assert len(inst.adjacency) == 2 ** (3 + 2) - 2


# ------------------------------------------------------------ weights


def test_weights_n4():
    assert [wd.layer_weight(4, k) for k in (1, 2, 3)] == [Fraction(1, 4), Fraction(1, 4), Fraction(1, 16)]


@pytest.mark.parametrize("n", [2, 4, 6, 8])
def test_last_weight(n):
    assert wd.layer_weight(n, 2 * n + 1) == Fraction(1, 4) == weight_oracle(n, 2 * n + 1)
    assert all(wd.layer_weight(n, k) == weight_oracle(n, k) for k in range(1, 2 * n + 2))


def test_orientation():
    inst = wd.generate_instance(2, 3)
    G = wd.build_weighted_network(inst)
    lay = inst.layer
    for (u, v) in G.edges:
        k = max(lay[u[0]], lay[v[0]])
        forward = lay[u[0]] < lay[v[0]]
        assert forward == (k % 4 in (0, 1))
    assert all(e.T == 2 for e in G.edges.values())


def test_n2_constants():
    inst = wd.generate_instance(2, 0)
    G = wd.build_weighted_network(inst)
    # oracle: direct summation over layers
    W = sum(a * weight_oracle(2, k) for k, a in enumerate(layer_sizes_oracle(2), start=1))
    E = sum(1 / (a * weight_oracle(2, k)) for k, a in enumerate(layer_sizes_oracle(2), start=1))
    assert W == Fraction(11, 4) == total_weight(G)
    assert E == 11 == wd.canonical_energy(inst)


# ------------------------------------------------------------ flow


@pytest.mark.parametrize("n", [2, 4])
def test_canonical_flow(n):
    inst = wd.generate_instance(n, 1)
    G = wd.build_weighted_network(inst)
    th = wd.canonical_flow(inst)
    s, t = inst.vertex(inst.s), inst.vertex(inst.t)
    for u in G.vertices:
        want = 1 if u == s else -1 if u == t else 0
        assert flow_divergence(th, G, u) == want


# ------------------------------------------------------------ alternatives


def test_alternatives_span_true_star():
    inst = wd.generate_instance(2, 4)
    walk = wd.build_alt_neighbourhoods(inst, Fraction(1), Fraction(1), lambda t: 1)
    for u, alts in walk.stars.items():
        if len(alts) == 1:
            continue
        keys = list(alts[0])
        M = np.array([[a[k] for a in alts] for k in keys])
        y = np.array([walk.true_star(u)[k] for k in keys])
        coef = np.linalg.lstsq(M, y, rcond=None)[0]
        assert np.linalg.norm(M @ coef - y) <= 1e-10
        # Fourier basis: span is the sum-zero plane
        F = StateFamily()
        F.add(u, [StateVector(a) for a in alts])
        basis = list(orthonormalize_family(F).states())
        assert len(basis) == 2
        for b in basis:
            assert abs(sum(b[k] for k in keys)) <= 1e-12


def test_unmarked_t_has_no_v0():
    inst = wd.generate_instance(2, 0)
    walk = wd.build_alt_neighbourhoods(inst, 1, 1, lambda t: 0)
    assert V0 not in walk.stars[walk.t][0]
    walk = wd.build_alt_neighbourhoods(inst, 1, 1, lambda t: 1)
    assert walk.stars[walk.t][0][V0] == 1.0


def test_basis_dimension():
    inst = wd.generate_instance(2, 0)
    walk = wd.build_alt_neighbourhoods(inst, 1, 1, lambda t: 1)
    assert len(walk.basis) == 2 * 20 + 2


# ------------------------------------------------------------ witnesses


@pytest.mark.parametrize("seed", range(3))
def test_positive_witness(seed):
    inst = wd.generate_instance(2, seed)
    w0 = Fraction(1)
    walk = wd.build_alt_neighbourhoods(inst, w0, w0, lambda t: 1)
    w = wd.positive_witness(walk)
    assert abs(abs(w.inner(walk.psi0)) ** 2 - 1 / float(w0)) <= 1e-10
    assert wd.positive_witness_norm2(walk) == 2 / w0 + 22
    assert w.norm2() == pytest.approx(24, rel=1e-12)
    A, B = walk.subspaces()
    rep = check_positive_witness(w, walk.psi0, A, B)
    assert rep["errA"] <= 1e-10 and rep["errB"] <= 1e-10 and rep["pass"]
    for v in B.family.states():
        assert abs(v.inner(w)) <= 1e-12
    for u in walk.stars:
        ts = StateVector({(u, k): x for k, x in walk.true_star(u).items()})
        assert abs(ts.inner(w)) <= 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_negative_witness(seed):
    inst = wd.generate_instance(2, seed)
    w0 = Fraction(1)
    walk = wd.build_alt_neighbourhoods(inst, w0, w0, lambda t: 0)
    wA, wB = wd.negative_witness(walk)
    A, B = walk.subspaces()
    rep = check_negative_witness(wA, wB, walk.psi0, A, B)
    assert rep["reconstruction"] <= 1e-10 and rep["residualA"] <= 1e-10 and rep["residualB"] <= 1e-10
    # the star state at s carries sqrt(w0)|s,v0>, adding 1 to (2/w0) W
    assert wd.negative_witness_norm2(walk) == Fraction(11, 2) + 1
    assert wA.norm2() == pytest.approx(6.5, rel=1e-12)


def test_wrong_case():
    inst = wd.generate_instance(2, 0)
    with pytest.raises(wd.WrongCase):
        wd.positive_witness(wd.build_alt_neighbourhoods(inst, 1, 1, lambda t: 0))
    with pytest.raises(wd.WrongCase):
        wd.negative_witness(wd.build_alt_neighbourhoods(inst, 1, 1, lambda t: 1))


# ------------------------------------------------------------ decisions


@pytest.mark.parametrize("seed", range(3))
def test_decide_constant(seed):
    inst = wd.generate_instance(2, seed)
    assert wd.decide_g(inst, lambda t: 1) == 1
    assert wd.decide_g(inst, lambda t: 0) == 0


def test_decide_bit_zero_case():
    inst = wd.generate_instance(2, 0)
    i = next(i for i in range(1, 5) if inst.bit(inst.t, i) == 0)
    assert wd.decide_g(inst, lambda lab: inst.bit(lab, i)) == 0


def test_decider_params():
    inst = wd.generate_instance(2, 0)
    w0 = wd.calibrated_w0(inst)
    assert w0 == Fraction(1, 22)
    p = wd.decider_params(inst, w0)
    assert p.c_plus == 50 and p.C_minus == pytest.approx(121)


@pytest.mark.parametrize("seed", range(5))
def test_recover_n2(seed):
    inst = wd.generate_instance(2, seed)
    assert wd.recover_t(inst) == inst.t


def test_recover_tampered():
    inst = wd.generate_instance(2, 0)
    leaf = next(l for l, nb in inst.adjacency.items() if len(nb) == 3)
    bad = dataclasses.replace(inst, t=leaf)
    with pytest.raises(wd.Mismatch):
        wd.recover_t(bad)


@given(st.integers(0, 10**6))
@settings(max_examples=10, deadline=None)
def test_positive_witness_property(seed):
    inst = wd.generate_instance(2, seed)
    walk = wd.build_alt_neighbourhoods(inst, Fraction(1, 3), Fraction(1, 3), lambda t: 1)
    w = wd.positive_witness(walk)
    A, B = walk.subspaces()
    rep = check_positive_witness(w, walk.psi0, A, B)
    assert rep["pass"]
    assert rep["overlap"] == pytest.approx(3.0, rel=1e-10)


def test_instance_json():
    import json

    d = json.loads(wd.generate_instance(2, 0).to_json())
    assert set(d) == {"n", "seed", "vertices", "t"} and len(d["vertices"]) == 14
