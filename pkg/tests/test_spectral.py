import numpy as np
import pytest
from scipy.integrate import quad

from imlab.errors import OddL, TooFewLevels, TooLarge, ValidationError
from imlab.gates import conjugate_deform, make_gate_set, model_b, model_c
from imlab.spectral import (
    build_floquet_obc,
    lss_report,
    reference_distribution,
    spacing_ratios,
)

LN2 = float(np.log(2.0))
PI3 = float(np.pi / 3.0)
POISSON_MEAN = 2 * np.log(2.0) - 1.0  # 0.3863
COE_MEAN = 0.5359

GS_C = model_c(PI3)
GS_ID = make_gate_set(2, [np.eye(2), np.eye(2)])


def test_floquet_two_sites_is_the_gate():
    u2 = build_floquet_obc(GS_C, 2)
    assert np.allclose(u2, GS_C.two_qudit, atol=1e-14)


def test_floquet_identity_gates_give_permutation():
    u4 = build_floquet_obc(GS_ID, 4)
    hits = np.abs(u4) > 0.5
    assert np.all(hits.sum(axis=0) == 1)
    assert np.all(hits.sum(axis=1) == 1)
    assert np.allclose(np.abs(u4[hits]), 1.0, atol=1e-12)


def test_floquet_is_unitary():
    u6 = build_floquet_obc(GS_C, 6)
    assert np.max(np.abs(u6.conj().T @ u6 - np.eye(64))) <= 1e-10
    ev = np.linalg.eigvals(u6)
    assert np.max(np.abs(np.abs(ev) - 1.0)) <= 1e-9


def test_floquet_guards():
    with pytest.raises(OddL):
        build_floquet_obc(GS_C, 5)
    with pytest.raises(TooLarge):
        build_floquet_obc(GS_C, 16)
    with pytest.raises(ValidationError):
        build_floquet_obc(GS_C, 0)


def test_spacing_ratios_small_cases():
    r = spacing_ratios(np.array([0.0, 0.1, 0.3]))
    assert r.shape == (1,)
    assert abs(r[0] - 0.5) < 1e-12
    r_eq = spacing_ratios(np.linspace(-3.0, 3.0, 11))
    assert np.allclose(r_eq, 1.0)
    with pytest.raises(TooFewLevels):
        spacing_ratios([0.0, 1.0])


def test_spacing_ratios_poisson_oracle():
    rng = np.random.default_rng(5)
    phases = rng.uniform(-np.pi, np.pi, 100_000)
    mean = spacing_ratios(phases).mean()
    assert abs(mean - POISSON_MEAN) < 0.005


def test_reference_distributions_normalized_with_known_means():
    pois = reference_distribution("Poisson")
    coe = reference_distribution("COE")
    ip, _ = quad(pois, 0, 1)
    ic, _ = quad(coe, 0, 1)
    assert abs(ip - 1.0) < 1e-10
    assert abs(ic - 1.0) < 1e-8
    mp, _ = quad(lambda r: r * pois(r), 0, 1)
    mc, _ = quad(lambda r: r * coe(r), 0, 1)
    assert abs(mp - POISSON_MEAN) < 1e-9
    assert abs(mc - COE_MEAN) < 1e-3
    with pytest.raises(ValidationError):
        reference_distribution("GUE")


def test_identity_gates_flagged_as_degenerate():
    rep = lss_report(GS_ID, 8)
    assert rep.degenerate_fraction > 0.9
    edges, dens = rep.histogram
    width = edges[1] - edges[0]
    assert abs(dens.sum() * width - 1.0) < 1e-8


def test_report_dense_model_level_repulsion():
    rep = lss_report(GS_C, 10)
    assert rep.L == 10
    assert len(rep.phases) == 2 ** 10
    assert len(rep.ratios) == 2 ** 10 - 2
    assert abs(rep.mean_ratio - 0.5382381255275616) < 1e-6
    assert rep.degenerate_count == 0


def test_report_integrable_model_degeneracies():
    rep = lss_report(model_b(LN2), 10)
    assert abs(rep.mean_ratio - 0.021794559894908336) < 1e-6
    assert rep.degenerate_count == 891


def test_weak_deformation_moves_toward_midway_statistics():
    v = np.array([[np.cos(0.01), -np.sin(0.01)],
                  [np.sin(0.01), np.cos(0.01)]], dtype=complex)
    rep = lss_report(conjugate_deform(model_b(LN2), v), 10)
    assert POISSON_MEAN - 0.05 < rep.mean_ratio < COE_MEAN


def test_mean_ratio_invariant_under_branch_rotation():
    u8 = build_floquet_obc(GS_C, 8)
    ev = np.linalg.eigvals(u8)
    base = spacing_ratios(np.angle(ev)).mean()
    for phi in (0.5, 1.7, 3.0):
        rot = spacing_ratios(np.angle(ev * np.exp(1j * phi))).mean()
        # at most a couple of ratios change when the branch cut moves
        assert abs(rot - base) <= 3 / 256
