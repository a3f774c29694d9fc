import json

import numpy as np
import pytest
from scipy.linalg import expm

from imlab.errors import DimensionMismatch, NonUnitary, ValidationError
from imlab.gates import (
    ControlledGateSet,
    ImpurityObservable,
    ProductInitialState,
    conjugate_deform,
    make_gate_set,
    model_a,
    model_b,
    model_c,
    plus_state,
    sigma,
    unitarity_residual,
)

LN2 = float(np.log(2.0))
PI3 = float(np.pi / 3.0)


def basis(q, i):
    v = np.zeros(q, dtype=complex)
    v[i] = 1.0
    return v


def test_two_qudit_controls_on_right_site():
    """U (|a> x |b>) = |b> x u_b|a>, with the left site the slow kron index."""
    rng = np.random.default_rng(3)
    us = []
    for _ in range(2):
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        q_, _ = np.linalg.qr(h)
        us.append(q_)
    gs = make_gate_set(2, us)
    for a in range(2):
        for b in range(2):
            vin = np.kron(basis(2, a), basis(2, b))
            expect = np.kron(basis(2, b), us[b] @ basis(2, a))
            assert np.allclose(gs.two_qudit @ vin, expect, atol=1e-12)


def test_two_qudit_is_unitary():
    for gs in (model_a(LN2), model_b(LN2), model_c(PI3)):
        assert unitarity_residual(gs.two_qudit) <= 1e-12


def test_model_a_controlled_pair():
    K = LN2
    gs = model_a(K)
    sz = sigma("z")
    assert np.allclose(gs.controlled[0], expm(-1j * K * np.pi * sz), atol=1e-12)
    assert np.allclose(gs.controlled[1], expm(+1j * K * np.pi * sz), atol=1e-12)


def test_model_b_second_branch_is_bit_flip():
    gs = model_b(0.37)
    assert np.allclose(gs.controlled[0], expm(-1j * 0.37 * np.pi * sigma("z")), atol=1e-12)
    assert np.allclose(gs.controlled[1], sigma("x"), atol=1e-15)


def test_model_c_axes():
    th = PI3
    gs = model_c(th)
    assert np.allclose(gs.controlled[0], expm(-1j * th * sigma("z")), atol=1e-12)
    assert np.allclose(gs.controlled[1], expm(-1j * th * sigma("x")), atol=1e-12)


def test_make_gate_set_validation():
    with pytest.raises(DimensionMismatch):
        make_gate_set(1, [np.eye(1)])
    with pytest.raises(DimensionMismatch):
        make_gate_set(2, [np.eye(2)])
    with pytest.raises(DimensionMismatch):
        make_gate_set(2, [np.eye(2), np.eye(3)])
    with pytest.raises(NonUnitary):
        make_gate_set(2, [np.eye(2), 2.0 * np.eye(2)])


def test_gate_arrays_are_locked():
    gs = model_c(PI3)
    assert not gs.two_qudit.flags.writeable
    assert not gs.controlled[0].flags.writeable
    with pytest.raises(ValueError):
        gs.two_qudit[0, 0] = 1.0


def test_json_round_trip_is_bit_exact():
    gs = model_c(0.1234567890123456)
    gs2 = ControlledGateSet.from_json(gs.to_json())
    assert gs2.q == gs.q
    for u1, u2 in zip(gs.controlled, gs2.controlled):
        assert np.array_equal(u1, u2)
    assert np.array_equal(gs.two_qudit, gs2.two_qudit)
    bad = json.loads(gs.to_json())
    bad["controlled"] = bad["controlled"][:1]
    with pytest.raises(DimensionMismatch):
        ControlledGateSet.from_json(json.dumps(bad))


def test_conjugate_deform_rotates_each_branch():
    gs = model_b(LN2)
    th = 0.01
    v = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]], dtype=complex)
    gsv = conjugate_deform(gs, v)
    for a in range(2):
        assert np.allclose(gsv.controlled[a], v @ gs.controlled[a] @ v.conj().T, atol=1e-12)
    with pytest.raises(NonUnitary):
        conjugate_deform(gs, 2.0 * np.eye(2))


def test_product_initial_state_checks_norm():
    plus = plus_state(2)
    st = ProductInitialState(psi_e=plus, psi_o=plus)
    assert st.q == 2
    with pytest.raises(ValidationError):
        ProductInitialState(psi_e=np.array([1.0, 1.0]), psi_o=plus)


def test_impurity_observable_requires_hermitian():
    obs = ImpurityObservable(sigma("x"), label="sx")
    assert obs.label == "sx"
    with pytest.raises(ValidationError):
        ImpurityObservable(np.array([[0.0, 1.0], [0.0, 0.0]]), label="raising")


def test_plus_state_and_sigma_values():
    assert np.allclose(plus_state(2), np.array([1.0, 1.0]) / np.sqrt(2.0))
    assert np.allclose(plus_state(3), np.full(3, 1.0 / np.sqrt(3.0)))
    assert np.array_equal(sigma("x"), np.array([[0, 1], [1, 0]], dtype=complex))
    assert np.array_equal(sigma("y"), np.array([[0, -1j], [1j, 0]]))
    assert np.array_equal(sigma("z"), np.array([[1, 0], [0, -1]], dtype=complex))
    assert np.array_equal(sigma("i"), np.eye(2, dtype=complex))
    with pytest.raises(KeyError):
        sigma("w")
