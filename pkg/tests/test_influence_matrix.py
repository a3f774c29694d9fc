"""Exact, top-down, and truncated influence-matrix builds against each other
and against dense brute-force evolution, plus the temporal-entropy profile."""

import numpy as np
import pytest

from imlab.channels import causal_break_channel, identity_channel, mixed_channel
from imlab.errors import DimensionMismatch, ValidationError
from imlab.gates import (
    ImpurityObservable,
    ProductInitialState,
    model_a,
    model_b,
    model_c,
    plus_state,
    sigma,
)
from imlab.group_walk import _LazyProductTable, reachable_set
from imlab.influence_matrix import (
    TwoSiteCellState,
    brute_force_observable,
    build_exact_im,
    build_im_topdown,
    check_solvable_state,
    compress,
    contract_with_process,
    grow_im_truncated,
    temporal_entanglement,
)

LN2 = float(np.log(2.0))
PI3 = float(np.pi / 3.0)

PLUS = plus_state(2)
PROD = ProductInitialState(psi_e=PLUS, psi_o=PLUS)
RHO_PLUS = np.outer(PLUS, PLUS.conj())
SX = ImpurityObservable(sigma("x"), label="sx")
BELL = TwoSiteCellState(q=2, amplitudes=np.eye(2) / np.sqrt(2))


def models():
    return [("a", model_a(LN2)), ("b", model_b(LN2)), ("c", model_c(PI3))]


def generic_cell(seed=7):
    rng = np.random.default_rng(seed)
    amp = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    return TwoSiteCellState(q=2, amplitudes=amp / np.linalg.norm(amp))


# --- frozen one-point functions, |+> products, sigma_x readout -------------

FROZEN = {
    # (model, channel, T): value
    ("a", "id", 1): +0.1222677690,
    ("a", "id", 2): +0.0149494073,
    ("a", "id", 3): +0.0018278307,
    ("b", "id", 1): -0.1137001575,
    ("b", "id", 2): -0.0139018646,
    ("b", "id", 3): -0.0016997500,
    ("c", "id", 1): -0.1250000000,
    ("c", "id", 2): +0.1093750000,
    ("c", "id", 3): -0.0912170410,
    ("c", "break", 2): +0.0390625000,
    ("c", "break", 3): -0.0063476562,
    ("c", "mix", 2): +0.0882812500,
    ("c", "mix", 3): -0.0624685669,
}

CHANNELS = {
    "id": identity_channel(2),
    "break": causal_break_channel(RHO_PLUS),
    "mix": mixed_channel(0.3, RHO_PLUS),
}


def test_contract_reproduces_frozen_values():
    gate_sets = dict(models())
    for (name, cname, T), expect in FROZEN.items():
        mps = build_exact_im(gate_sets[name], PROD, T)
        chans = [CHANNELS[cname]] * (T - 1)
        val = contract_with_process(mps, RHO_PLUS, chans, SX)
        assert abs(val - expect) < 1e-9, (name, cname, T, val)


def test_contract_matches_brute_force_product_state():
    for name, gs in models():
        for cname in ("id", "break"):
            for T in (1, 2, 3, 4):
                mps = build_exact_im(gs, PROD, T)
                chans = [CHANNELS[cname]] * (T - 1)
                v1 = contract_with_process(mps, RHO_PLUS, chans, SX)
                v2 = brute_force_observable(gs, PROD, RHO_PLUS, chans, SX, T)
                assert abs(v1 - v2) < 1e-10, (name, cname, T)


def test_contract_matches_brute_force_entangled_cell():
    gen = generic_cell()
    for name, gs in models():
        for T in (1, 2, 3):
            mps = build_exact_im(gs, gen, T)
            chans = [CHANNELS["mix"]] * (T - 1)
            v1 = contract_with_process(mps, RHO_PLUS, chans, SX)
            v2 = brute_force_observable(gs, gen, RHO_PLUS, chans, SX, T)
            assert abs(v1 - v2) < 1e-10, (name, T)


def test_rank_one_cell_equals_product_state():
    cell = TwoSiteCellState(q=2, amplitudes=np.outer(PLUS, PLUS))
    for name, gs in models():
        v_cell = build_exact_im(gs, cell, 3).dense_vector()
        v_prod = build_exact_im(gs, PROD, 3).dense_vector()
        assert np.max(np.abs(v_cell - v_prod)) < 1e-12, name


def test_identity_observable_gives_unit_trace():
    ident = ImpurityObservable(np.eye(2), label="id")
    gen = generic_cell()
    for name, gs in models():
        mps = build_exact_im(gs, gen, 3)
        v = contract_with_process(mps, RHO_PLUS, [CHANNELS["id"]] * 2, ident)
        assert abs(v - 1.0) < 1e-10, name


def test_topdown_build_matches_exact():
    gen = generic_cell(11)
    for name, gs in models():
        for state in (PROD, BELL, gen):
            for T in (1, 2, 3, 4):
                v1 = build_exact_im(gs, state, T).dense_vector()
                v2 = build_im_topdown(gs, state, T).dense_vector()
                assert np.max(np.abs(v1 - v2)) < 1e-9, (name, T)


def test_entropy_profile_frozen_dense_model():
    gs = model_c(PI3)
    prof2 = temporal_entanglement(build_exact_im(gs, PROD, 2))
    assert abs(prof2.max_entropy - 0.540304313927) < 1e-9
    prof5 = temporal_entanglement(build_exact_im(gs, PROD, 5))
    expect = (0.8206623616343425, 0.9639597180100219,
              0.7904945221204861, 0.442155647973897)
    assert prof5.T == 5
    assert len(prof5.per_cut_entropy) == len(expect)
    for got, want in zip(prof5.per_cut_entropy, expect):
        assert abs(got - want) < 1e-9
    assert abs(prof5.max_entropy - max(expect)) < 1e-12


def test_entropy_bounded_by_bond_dimension():
    gs = model_b(LN2)
    mps = build_exact_im(gs, PROD, 6)
    prof = temporal_entanglement(mps)
    dims = mps.bond_dims()
    for t, s in enumerate(prof.per_cut_entropy, start=1):
        assert s <= np.log(dims[t]) + 1e-9


def test_truncated_growth_with_big_chi_is_exact():
    gen = generic_cell()
    for name, gs in models():
        v_ex = build_exact_im(gs, gen, 3).dense_vector()
        v_gr = grow_im_truncated(gs, gen, 3, chi_max=4096,
                                 support_cap=100000).dense_vector()
        assert np.max(np.abs(v_ex - v_gr)) < 1e-10, name


def test_truncated_growth_chi128_matches_exact_profile():
    gs = model_c(PI3)
    rs = reachable_set(gs, 5)
    pe = temporal_entanglement(build_exact_im(gs, PROD, 5, rs=rs))
    pg = temporal_entanglement(grow_im_truncated(gs, PROD, 5, chi_max=128, rs=rs))
    for a, b in zip(pe.per_cut_entropy, pg.per_cut_entropy):
        assert abs(a - b) < 1e-12


def test_truncated_growth_lazy_fallback_matches_enumerated():
    """Without a reachable set the grower resolves products on demand;
    at non-binding truncation both paths give the same state."""
    gs = model_c(PI3)
    rs = reachable_set(gs, 4)
    v_rs = grow_im_truncated(gs, PROD, 4, chi_max=4096,
                             support_cap=100000, rs=rs).dense_vector()
    lazy = _LazyProductTable(gs)
    v_lz = grow_im_truncated(gs, PROD, 4, chi_max=4096,
                             support_cap=100000, rs=lazy).dense_vector()
    assert np.max(np.abs(v_rs - v_lz)) < 1e-10


def test_compress_at_full_rank_is_lossless():
    gs = model_c(PI3)
    mps = build_exact_im(gs, PROD, 4)
    big = compress(mps, chi_max=4096)
    assert np.max(np.abs(big.dense_vector() - mps.dense_vector())) < 1e-10
    small = compress(mps, chi_max=8)
    assert max(small.bond_dims()) <= 8
    assert small.chi_used == 8
    with pytest.raises(ValidationError):
        compress(mps, chi_max=0)


def test_solvable_residual_classifier():
    gs = model_c(PI3)
    bell_vec = np.eye(2).reshape(-1) / np.sqrt(2)
    assert check_solvable_state(bell_vec, gs) <= 1e-10
    assert check_solvable_state(np.kron(PLUS, PLUS), gs) > 0.01
    rng = np.random.default_rng(7)
    for _ in range(5):
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        w, _ = np.linalg.qr(h)
        assert check_solvable_state((w / np.sqrt(2)).reshape(-1), gs) <= 1e-10
    for _ in range(5):
        v = rng.normal(size=4) + 1j * rng.normal(size=4)
        v /= np.linalg.norm(v)
        assert check_solvable_state(v, gs) > 1e-4


def test_solvable_cells_have_product_influence_matrix():
    rng = np.random.default_rng(7)
    gate_sets = models()
    for _ in range(3):
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        w, _ = np.linalg.qr(h)
        st = TwoSiteCellState(q=2, amplitudes=w / np.sqrt(2))
        for name, gs in gate_sets:
            prof = temporal_entanglement(build_exact_im(gs, st, 3))
            assert prof.max_entropy <= 1e-8, name


def test_two_site_cell_validation():
    with pytest.raises(DimensionMismatch):
        TwoSiteCellState(q=2, amplitudes=np.ones((2, 3)) / np.sqrt(6))
    with pytest.raises(ValidationError):
        TwoSiteCellState(q=2, amplitudes=np.ones((2, 2)))
    cell = BELL
    assert np.allclose(cell.measured_marginal(), [0.5, 0.5])
    assert not cell.amplitudes.flags.writeable


def test_exact_build_exposes_group_bond_labels():
    gs = model_b(LN2)
    rs = reachable_set(gs, 4)
    mps = build_exact_im(gs, PROD, 4, rs=rs)
    dims = mps.bond_dims()
    assert dims[0] == 1 and dims[-1] == 1
    # internal bonds carry one slot per reachable element at that depth
    for t in range(1, 4):
        assert dims[t] == rs.counts[t]
        labels = mps.bond_labels[t]
        assert labels is not None and len(labels) == dims[t]
