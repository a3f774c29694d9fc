import numpy as np
import pytest

from imlab.channels import causal_break_channel, identity_channel, mixed_channel
from imlab.errors import ValidationError
from imlab.gates import (
    ImpurityObservable,
    ProductInitialState,
    model_a,
    model_b,
    model_c,
    plus_state,
    sigma,
)
from imlab.group_walk import CoveringGrid, build_covering, reachable_set, sample_haar
from imlab.influence_matrix import brute_force_observable
from imlab.stochastic import (
    WalkConfig,
    conditional_prob,
    estimate_observable,
    estimate_two_point,
    exact_observable_via_transfer,
    initial_prob,
    snapped_walk_observable,
)

LN2 = float(np.log(2.0))
PI3 = float(np.pi / 3.0)

PLUS = plus_state(2)
E0 = np.array([1.0, 0.0])
STATE = ProductInitialState(psi_o=PLUS, psi_e=PLUS)
RHO_PLUS = np.outer(PLUS, PLUS.conj())
RHO_E0 = np.outer(E0, E0.conj())
SX = ImpurityObservable(sigma("x"), label="sx")
IDENT = ImpurityObservable(np.eye(2), label="id")

GS_C = model_c(PI3)
CHAN_ID = identity_channel(2)
CHAN_BREAK = causal_break_channel(RHO_PLUS)


def test_initial_prob_uniform_and_concentrated():
    p = initial_prob(GS_C, RHO_PLUS, PLUS)
    assert np.allclose(p, 0.25)
    p0 = initial_prob(GS_C, RHO_E0, E0)
    assert p0[0, 0] == 1.0
    assert abs(p0.sum() - 1.0) < 1e-15


def test_conditional_prob_normalized_and_break_is_walk_independent():
    rng = np.random.default_rng(11)
    ref = None
    for _ in range(25):
        g = sample_haar(2, rng)
        p = conditional_prob(GS_C, g, CHAN_ID, PLUS, PLUS)
        assert abs(p.sum() - 1.0) < 1e-12
        assert p.min() >= -1e-15
        pb = conditional_prob(GS_C, g, CHAN_BREAK, PLUS, PLUS)
        if ref is None:
            ref = pb
        assert np.max(np.abs(pb - ref)) < 1e-12


def test_transfer_matches_brute_force():
    combos = [("a", model_a(LN2)), ("b", model_b(LN2)), ("c", GS_C)]
    chans = [CHAN_ID, CHAN_BREAK, mixed_channel(0.3, RHO_PLUS)]
    worst = 0.0
    for _, gs in combos:
        for chan in chans:
            for T in (1, 2, 3, 4):
                ex = exact_observable_via_transfer(gs, STATE, RHO_PLUS, chan, SX, T)
                bf = brute_force_observable(gs, STATE, RHO_PLUS,
                                            [chan] * (T - 1), SX, T)
                worst = max(worst, abs(ex - bf))
    assert worst <= 1e-8


def test_transfer_frozen_value_dense_model():
    val = exact_observable_via_transfer(GS_C, STATE, RHO_PLUS, CHAN_ID, SX, 5)
    assert abs(val - 0.016188753798) < 1e-9


def test_erase_prepare_fast_path_matches_brute_and_decays():
    for T in (2, 3, 4, 5):
        fast = exact_observable_via_transfer(GS_C, STATE, RHO_PLUS, CHAN_BREAK, SX, T)
        bf = brute_force_observable(GS_C, STATE, RHO_PLUS,
                                    [CHAN_BREAK] * (T - 1), SX, T)
        assert abs(fast - bf) <= 1e-8, T
    # long-time value from the repeated-channel power, far beyond brute reach
    val200 = exact_observable_via_transfer(GS_C, STATE, RHO_PLUS, CHAN_BREAK, SX, 200)
    assert abs(val200) <= 1e-6


def test_identity_observable_estimate_is_exact():
    cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                     T=4, n_samples=50_000, seed=3)
    est = estimate_observable(cfg, IDENT)
    assert est.mean == 1.0
    assert est.stderr == 0.0


def test_estimates_are_bit_identical_across_reruns():
    cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                     T=4, n_samples=50_000, seed=3)
    e1 = estimate_observable(cfg, SX)
    e2 = estimate_observable(cfg, SX)
    assert e1 == e2
    # sample count not divisible by the sampling chunk
    cfg_odd = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                         T=4, n_samples=200_001, seed=3)
    assert estimate_observable(cfg_odd, SX) == estimate_observable(cfg_odd, SX)


def test_estimate_frozen_sample_mean():
    cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                     T=4, n_samples=50_000, seed=3)
    est = estimate_observable(cfg, SX)
    assert est.n == 50_000
    assert abs(est.mean - 0.053155) < 1e-5
    assert abs(est.stderr - 0.002581) < 1e-5


def test_estimates_track_exact_within_five_sigma():
    for chan in (CHAN_ID, CHAN_BREAK):
        for T in (1, 4, 8):
            ex = exact_observable_via_transfer(GS_C, STATE, RHO_PLUS, chan, SX, T)
            cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=chan,
                             T=T, n_samples=100_000, seed=17)
            est = estimate_observable(cfg, SX)
            pull = abs(est.mean - ex) / max(est.stderr, 1e-300)
            assert pull <= 5.0, (T, est.mean, ex, pull)


def test_two_point_reduces_to_one_point():
    cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                     T=4, n_samples=50_000, seed=3)
    tp = estimate_two_point(cfg, IDENT, SX)
    base = estimate_observable(cfg, SX)
    assert abs(tp.mean - base.mean) <= 1e-12
    assert abs(tp.stderr - base.stderr) <= 1e-12
    assert tp.mean_imag == 0.0 and tp.stderr_imag == 0.0
    # single contributing branch: identical to the plain estimator
    cfg_z = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_E0, channel=CHAN_ID,
                       T=4, n_samples=50_000, seed=3)
    tp_z = estimate_two_point(cfg_z, sigma("z"), SX)
    base_z = estimate_observable(cfg_z, SX)
    assert tp_z.mean == base_z.mean
    assert tp_z.stderr == base_z.stderr


def exact_two_point(op, T):
    w_b = np.diag(op @ RHO_PLUS)
    total = 0.0 + 0.0j
    for b in range(2):
        if abs(w_b[b]) < 1e-300:
            continue
        rho_b = np.zeros((2, 2), dtype=complex)
        rho_b[b, b] = 1.0
        total += w_b[b] * exact_observable_via_transfer(
            GS_C, STATE, rho_b, CHAN_ID, SX, T)
    return total


def test_two_point_matches_exact_branch_sum():
    for op in (sigma("z"), sigma("x") + 0.2 * sigma("z")):
        expect = exact_two_point(op, 3)
        cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                         T=3, n_samples=400_000, seed=23)
        tp = estimate_two_point(cfg, op, SX)
        pull_re = abs(tp.mean - expect.real) / max(tp.stderr, 1e-300)
        assert pull_re <= 5.0
        assert abs(tp.mean_imag - expect.imag) <= 5 * max(tp.stderr_imag, 1e-12)


def test_two_point_imaginary_weights():
    # diag(sigma_y rho_plus) is purely imaginary, so the imaginary
    # accumulator classes carry all of the signal
    expect = exact_two_point(sigma("y"), 3)
    cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                     T=3, n_samples=200_000, seed=29)
    tp = estimate_two_point(cfg, sigma("y"), SX)
    assert abs(tp.mean) <= 5 * max(tp.stderr, 1e-12)
    assert abs(tp.mean_imag - expect.imag) <= 5 * max(tp.stderr_imag, 1e-12)


def test_snapped_walk_obeys_covering_bound():
    grid = build_covering(0.2)
    for T in (1, 2, 3, 4):
        cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                         T=T, n_samples=1, seed=0)
        sn = snapped_walk_observable(cfg, SX, grid)
        ex = exact_observable_via_transfer(GS_C, STATE, RHO_PLUS, CHAN_ID, SX, T)
        bound = (1 + 0.2 * T * T) ** T - 1
        assert abs(sn - ex) <= bound, (T, sn, ex)


def test_snapped_walk_on_reachable_grid_is_exact():
    T = 4
    rs = reachable_set(GS_C, T)
    quats = rs.store.all_quats()[: rs.counts[T]]
    grid = CoveringGrid(delta=np.pi / 2, quats=quats, grid_dims=(0, 0, 0))
    cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                     T=T, n_samples=1, seed=0)
    sn = snapped_walk_observable(cfg, SX, grid)
    ex = exact_observable_via_transfer(GS_C, STATE, RHO_PLUS, CHAN_ID, SX, T)
    assert abs(sn - ex) <= 1e-12


def test_snapped_walk_coarse_grid_stays_bounded():
    grid = build_covering(np.pi / 2)
    for T in (1, 3, 6):
        cfg = WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                         T=T, n_samples=1, seed=0)
        val = snapped_walk_observable(cfg, SX, grid)
        assert -1.0 - 1e-12 <= val <= 1.0 + 1e-12


def test_mixed_channel_values_interpolate():
    T = 6
    rs = reachable_set(GS_C, T)
    vals = [exact_observable_via_transfer(
        GS_C, STATE, RHO_PLUS, mixed_channel(p, RHO_PLUS), SX, T, rs=rs)
        for p in (0.0, 0.25, 0.5, 0.75, 1.0)]
    lo = min(vals[0], vals[-1]) - 1e-6
    hi = max(vals[0], vals[-1]) + 1e-6
    for v in vals[1:-1]:
        assert lo <= v <= hi


def test_walk_config_validation():
    with pytest.raises(ValidationError):
        WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                   T=0, n_samples=10, seed=1)
    with pytest.raises(ValidationError):
        WalkConfig(gs=GS_C, state=STATE, rho_imp=RHO_PLUS, channel=CHAN_ID,
                   T=2, n_samples=0, seed=1)
