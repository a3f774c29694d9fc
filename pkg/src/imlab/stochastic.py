"""Classical sampling of the group walk behind the influence matrix.

When the impurity is read out at every step, the circuit's action on the
bath reduces to a Markov chain on group elements: each step draws a letter
b from the impurity readout and a letter a from the freshly swapped-in
bath site, and updates g -> g_b g g_a.  Observables become averages of
Tr[u(g_T) |psi_e><psi_e| u(g_T)^dag O] over trajectories.  This module
provides the Monte Carlo estimator, an exact transfer-operator reference
on the reachable set, a two-point variant with signed quasi-probability
weights, and a covering-grid walk with every update snapped to the net.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ._su2 import hamilton, quat_to_matrix_batch
from .channels import (
    QuantumChannel,
    is_erase_prepare,
    mixed_channel,
    validate_density_matrix,
)
from .errors import (
    AllZeroWeights,
    DimensionMismatch,
    NonTracePreserving,
    UnsupportedDimension,
    ValidationError,
)
from .gates import ControlledGateSet, ImpurityObservable, ProductInitialState
from .group_walk import (
    CoveringGrid,
    GroupElement,
    project_to_group,
    reachable_set,
)

__all__ = [
    "WalkConfig",
    "MCEstimate",
    "initial_prob",
    "conditional_prob",
    "estimate_observable",
    "exact_observable_via_transfer",
    "estimate_two_point",
    "snapped_walk_observable",
    "mixed_channel",
]

_CHUNK = 1 << 17
_PROB_TOL = 1e-12


@dataclass(frozen=True)
class WalkConfig:
    """Inputs of one Monte Carlo walk run."""

    gs: ControlledGateSet
    state: ProductInitialState
    rho_imp: np.ndarray
    channel: QuantumChannel
    T: int
    n_samples: int
    seed: int

    def __post_init__(self):
        rho = validate_density_matrix(self.rho_imp, self.gs.q)
        object.__setattr__(self, "rho_imp", rho)
        if not isinstance(self.state, ProductInitialState):
            raise ValidationError(
                "the classical walk is defined for product initial states"
            )
        if self.state.q != self.gs.q:
            raise DimensionMismatch(
                f"state q={self.state.q} != gate q={self.gs.q}"
            )
        if self.channel.dim != self.gs.q:
            raise DimensionMismatch(
                f"channel dim {self.channel.dim} != q={self.gs.q}"
            )
        if self.T < 1:
            raise ValidationError(f"T must be >= 1, got {self.T}")
        if self.n_samples < 1:
            raise ValidationError(
                f"n_samples must be >= 1, got {self.n_samples}"
            )
        if int(self.seed) < 0:
            raise ValidationError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo mean with the plain 1/sqrt(n) standard error.

    Signed estimators (two-point functions) can carry an imaginary
    component; it is kept separate so `mean` stays a plain real number.
    """

    mean: float
    stderr: float
    n: int
    mean_imag: float = 0.0
    stderr_imag: float = 0.0


def _obs_matrix(obs, q: int) -> np.ndarray:
    m = np.asarray(obs.matrix if isinstance(obs, ImpurityObservable)
                   else obs, dtype=complex)
    if m.shape != (q, q):
        raise DimensionMismatch(f"observable must be {q}x{q}, got {m.shape}")
    return m


def _check_channel(channel: QuantumChannel) -> None:
    res = channel.trace_residual()
    if res > 1e-8:
        raise NonTracePreserving(res)


def initial_prob(gs: ControlledGateSet, rho_imp,
                 psi_o: np.ndarray) -> np.ndarray:
    """P[a, b] for the first update g = g_b e g_a.

    b is the impurity letter (Born weights of rho_imp in the computational
    basis) and a the letter read from the first bath site.
    """
    q = gs.q
    rho = validate_density_matrix(rho_imp, q)
    psi_o = np.asarray(psi_o, dtype=complex)
    if psi_o.shape != (q,):
        raise DimensionMismatch(f"psi_o must have length {q}")
    p_a = np.abs(psi_o) ** 2
    p_b = np.diag(rho).real
    p = np.outer(p_a, p_b)
    assert abs(p.sum() - 1.0) < _PROB_TOL and p.min() > -_PROB_TOL
    return p


def conditional_prob(gs: ControlledGateSet, g: GroupElement,
                     channel: QuantumChannel, psi_e: np.ndarray,
                     psi_o: np.ndarray) -> np.ndarray:
    """P[a, b] for the update g -> g_b g g_a at a generic step.

    b is read from the channel image of the state the impurity carries,
    u(g)|psi_e>; a comes from the next bath site.
    """
    q = gs.q
    _check_channel(channel)
    psi_e = np.asarray(psi_e, dtype=complex)
    psi_o = np.asarray(psi_o, dtype=complex)
    v = g.rep @ psi_e
    rho_out = channel.apply(np.outer(v, v.conj()))
    p_b = np.clip(np.diag(rho_out).real, 0.0, None)
    p_a = np.abs(psi_o) ** 2
    p = np.outer(p_a, p_b)
    assert abs(p.sum() - 1.0) < _PROB_TOL
    return p


def _sample_letters(u: np.ndarray, cdf: np.ndarray) -> np.ndarray:
    """Inverse-CDF letters from uniforms; cdf is (q,) or (n, q)."""
    if cdf.ndim == 1:
        out = np.searchsorted(cdf, u, side="right")
    else:
        out = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(out, cdf.shape[-1] - 1)


def _run_walk(gs: ControlledGateSet, psi_e: np.ndarray, psi_o: np.ndarray,
              channel: QuantumChannel, obs_mat: np.ndarray, T: int,
              n_samples: int, seed: int,
              p_b_init: np.ndarray) -> Tuple[float, float, int]:
    """Mean/stderr of f(g_T) over trajectories with a given initial b-law.

    Trajectory randomness is keyed by (seed, chunk index) through a
    counter-based generator, with a fixed chunk size, so results are
    independent of scheduling and bit-reproducible.
    """
    if gs.q != 2:
        raise UnsupportedDimension(
            "the vectorized walk runs on quaternions (q=2)"
        )
    gen_quats = np.stack([project_to_group(u).quat for u in gs.controlled])
    p_a = np.abs(psi_o) ** 2
    cdf_a = np.cumsum(p_a)
    cdf_b0 = np.cumsum(p_b_init)
    sup_t = channel.superoperator().T
    diag_idx = np.arange(2) * 2 + np.arange(2)

    total = 0.0
    total_sq = 0.0
    for chunk_index, lo in enumerate(range(0, n_samples, _CHUNK)):
        n_c = min(_CHUNK, n_samples - lo)
        rng = np.random.Generator(
            np.random.Philox(key=np.array([seed, chunk_index],
                                          dtype=np.uint64))
        )
        u = rng.random((T, 2, n_c))
        a = _sample_letters(u[0, 0], cdf_a)
        b = _sample_letters(u[0, 1], cdf_b0)
        quats = hamilton(gen_quats[b], gen_quats[a])
        for t in range(1, T):
            mats = quat_to_matrix_batch(quats)
            v = mats @ psi_e
            rho_vec = (v[:, :, None] * v.conj()[:, None, :]).reshape(n_c, 4)
            p_b = np.clip((rho_vec @ sup_t)[:, diag_idx].real, 0.0, None)
            assert np.max(np.abs(p_b.sum(axis=1) - 1.0)) < 1e-9
            cdf_b = np.cumsum(p_b, axis=1)
            cdf_b /= cdf_b[:, -1:]
            a = _sample_letters(u[t, 0], cdf_a)
            b = _sample_letters(u[t, 1], cdf_b)
            quats = hamilton(gen_quats[b], hamilton(quats, gen_quats[a]))
        mats = quat_to_matrix_batch(quats)
        v = mats @ psi_e
        vals = np.einsum("ni,ij,nj->n", v.conj(), obs_mat, v).real
        total += float(vals.sum())
        total_sq += float((vals ** 2).sum())
    mean = total / n_samples
    if n_samples > 1:
        var = max(total_sq - n_samples * mean * mean, 0.0) / (n_samples - 1)
        stderr = float(np.sqrt(var / n_samples))
    else:
        stderr = 0.0
    return mean, stderr, n_samples


def estimate_observable(cfg: WalkConfig, obs) -> MCEstimate:
    """Monte Carlo estimate of <O(T)> over classical walk trajectories."""
    q = cfg.gs.q
    obs_mat = _obs_matrix(obs, q)
    _check_channel(cfg.channel)
    p_b0 = np.diag(cfg.rho_imp).real
    mean, stderr, n = _run_walk(
        cfg.gs, np.asarray(cfg.state.psi_e, dtype=complex),
        np.asarray(cfg.state.psi_o, dtype=complex),
        cfg.channel, obs_mat, cfg.T, cfg.n_samples, int(cfg.seed), p_b0,
    )
    return MCEstimate(mean=mean, stderr=stderr, n=n)


def estimate_two_point(cfg: WalkConfig, o_prime, obs) -> MCEstimate:
    """<O(T) O'(0)> by sign-split quasi-probability sampling.

    The initial impurity letter is weighted by <b|O' rho_imp|b>, which can
    be negative or complex; each sign class (and, when present, each
    imaginary sign class) is renormalized, estimated separately with the
    shared seed, and recombined with its signed mass.
    """
    q = cfg.gs.q
    obs_mat = _obs_matrix(obs, q)
    o_p = np.asarray(o_prime.matrix if isinstance(o_prime, ImpurityObservable)
                     else o_prime, dtype=complex)
    if o_p.shape != (q, q):
        raise DimensionMismatch(f"O' must be {q}x{q}, got {o_p.shape}")
    _check_channel(cfg.channel)
    w_b = np.diag(o_p @ cfg.rho_imp) / np.trace(cfg.rho_imp).real
    if np.max(np.abs(w_b)) < 1e-300:
        raise AllZeroWeights("every branch weight of O' rho_imp vanishes")
    psi_e = np.asarray(cfg.state.psi_e, dtype=complex)
    psi_o = np.asarray(cfg.state.psi_o, dtype=complex)

    runs = {"re": [], "im": []}  # (sign, mass, mean, stderr) per class
    for comp, comp_w in (("re", w_b.real), ("im", w_b.imag)):
        for sign in (1.0, -1.0):
            weights = np.clip(sign * comp_w, 0.0, None)
            mass = float(weights.sum())
            if mass <= 0.0:
                continue
            mean, stderr, _ = _run_walk(
                cfg.gs, psi_e, psi_o, cfg.channel, obs_mat, cfg.T,
                cfg.n_samples, int(cfg.seed), weights / mass,
            )
            runs[comp].append((sign, mass, mean, stderr))

    def _combine(items):
        if len(items) == 1:
            sign, mass, mean, stderr = items[0]
            return sign * mass * mean, mass * stderr
        mean = sum(sign * mass * m for sign, mass, m, _ in items)
        err = float(np.sqrt(sum((mass * s) ** 2 for _, mass, _, s in items)))
        return mean, err

    mean_re, err_re = _combine(runs["re"]) if runs["re"] else (0.0, 0.0)
    mean_im, err_im = _combine(runs["im"]) if runs["im"] else (0.0, 0.0)
    return MCEstimate(mean=mean_re, stderr=err_re, n=cfg.n_samples,
                      mean_imag=mean_im, stderr_imag=err_im)


def _fold(u: np.ndarray) -> np.ndarray:
    return np.kron(u, u.conj())


def exact_observable_via_transfer(gs: ControlledGateSet,
                                  state: ProductInitialState, rho_imp,
                                  channel: QuantumChannel, obs, T: int,
                                  rs=None) -> float:
    """Deterministic N -> infinity limit of the walk estimator.

    The branch distribution is propagated over the reachable set.  When
    the channel is erase-prepare, the letters decouple from the walk and
    the expected folded rotation obeys a closed q^2 x q^2 recursion, so
    the value is computed in O(T) for any horizon.
    """
    q = gs.q
    rho = validate_density_matrix(rho_imp, q)
    obs_mat = _obs_matrix(obs, q)
    _check_channel(channel)
    if not isinstance(state, ProductInitialState):
        raise ValidationError(
            "the classical walk is defined for product initial states"
        )
    if T == 0:
        return float(np.trace(rho @ obs_mat).real)
    psi_e = np.asarray(state.psi_e, dtype=complex)
    psi_o = np.asarray(state.psi_o, dtype=complex)
    p_a = np.abs(psi_o) ** 2
    p_b_imp = np.diag(rho).real

    rho_re = is_erase_prepare(channel)
    if rho_re is not None and T >= 2:
        folded = [_fold(u) for u in gs.controlled]
        a_op = sum(p_a[a] * folded[a] for a in range(q))
        b_imp = sum(p_b_imp[b] * folded[b] for b in range(q))
        p_b_re = np.clip(np.diag(rho_re).real, 0.0, None)
        b_re = sum(p_b_re[b] * folded[b] for b in range(q))
        e_ad = np.linalg.matrix_power(b_re @ a_op, T - 1) @ b_imp @ a_op
        rho_fin = (e_ad @ np.outer(psi_e, psi_e.conj()).reshape(-1))
        return float(np.trace(
            rho_fin.reshape(q, q) @ obs_mat).real)

    if rs is None or rs.T_max < T:
        rs = reachable_set(gs, T)
    quats = rs.store.all_quats()
    dist = np.zeros(rs.counts[1])
    zero = np.array([0], dtype=np.int64)
    for a in range(q):
        for b in range(q):
            idx = rs.product_index(zero, b, a)
            assert idx[0] >= 0
            dist[idx[0]] += p_a[a] * p_b_imp[b]
    sup_t = channel.superoperator().T
    diag_idx = np.arange(q) * q + np.arange(q)
    for t in range(1, T):
        n_t = rs.counts[t]
        mats = quat_to_matrix_batch(quats[:n_t])
        v = mats @ psi_e
        rho_vec = (v[:, :, None] * v.conj()[:, None, :]).reshape(n_t, q * q)
        p_b = np.clip((rho_vec @ sup_t)[:, diag_idx].real, 0.0, None)
        nxt = np.zeros(rs.counts[t + 1])
        idx_all = np.arange(n_t, dtype=np.int64)
        for b in range(q):
            for a in range(q):
                tgt = rs.product_index(idx_all, b, a)
                assert tgt.min() >= 0
                np.add.at(nxt, tgt, dist * p_b[:, b] * p_a[a])
        dist = nxt
        assert abs(dist.sum() - 1.0) < 1e-9
    n_t = rs.counts[T]
    mats = quat_to_matrix_batch(quats[:n_t])
    v = mats @ psi_e
    f = np.einsum("ni,ij,nj->n", v.conj(), obs_mat, v).real
    return float(np.dot(dist, f))


def snapped_walk_observable(cfg: WalkConfig, obs,
                            grid: CoveringGrid) -> float:
    """Exact walk expectation with every group update snapped to `grid`."""
    q = cfg.gs.q
    if q != 2:
        raise UnsupportedDimension("covering grids are built on PU(2)")
    obs_mat = _obs_matrix(obs, q)
    _check_channel(cfg.channel)
    psi_e = np.asarray(cfg.state.psi_e, dtype=complex)
    psi_o = np.asarray(cfg.state.psi_o, dtype=complex)
    p_a = np.abs(psi_o) ** 2
    p_b_imp = np.diag(cfg.rho_imp).real
    gen_quats = np.stack([
        project_to_group(u).quat for u in cfg.gs.controlled
    ])

    n = len(grid)
    mats = quat_to_matrix_batch(grid.quats)
    v = mats @ psi_e
    rho_vec = (v[:, :, None] * v.conj()[:, None, :]).reshape(n, q * q)
    sup_t = cfg.channel.superoperator().T
    diag_idx = np.arange(q) * q + np.arange(q)
    p_b = np.clip((rho_vec @ sup_t)[:, diag_idx].real, 0.0, None)
    p_b /= p_b.sum(axis=1, keepdims=True)

    targets = np.empty((q, q, n), dtype=np.int64)
    for b in range(q):
        for a in range(q):
            prod = hamilton(gen_quats[b][None, :],
                            hamilton(grid.quats, gen_quats[a][None, :]))
            targets[b, a] = grid.nearest_index_batch(prod)

    dist = np.zeros(n)
    for a in range(q):
        for b in range(q):
            first = hamilton(gen_quats[b], gen_quats[a])
            dist[grid.nearest_index(first)] += p_a[a] * p_b_imp[b]
    for _ in range(1, cfg.T):
        nxt = np.zeros(n)
        for b in range(q):
            for a in range(q):
                np.add.at(nxt, targets[b, a], dist * p_b[:, b] * p_a[a])
        dist = nxt
    f = np.einsum("ni,ij,nj->n", v.conj(), obs_mat, v).real
    return float(np.dot(dist, f))
