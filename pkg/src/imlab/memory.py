"""Teleportable entanglement carried by the influence matrix.

For controlled phase-permutation gates and a matrix-product initial state
whose tensors are controlled unitaries w^a on an auxiliary bond, repeated
measure-and-reinitialize operations on the impurity teleport the bond
entanglement forward in time: every outcome string applies a unitary to
the bond, so the post-measurement entanglement never decays.  This module
builds the effective two-qudit state, computes negativities, samples Haar
histograms, and brute-force-simulates the full protocol on small chains.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as _iter_product
from typing import List, Sequence, Tuple

import numpy as np

from .errors import (
    BadDims,
    NonUniformAlpha,
    NonUnitary,
    TooLarge,
    ValidationError,
)
from .gates import make_gate_set

__all__ = [
    "TeleportFamily",
    "BipartiteState",
    "NegativityHistogram",
    "effective_state",
    "negativity",
    "negativity_histogram",
    "teleport_oracle",
]

_UNITARY_TOL = 1e-10
_PSD_FLOOR = -1e-10
HISTOGRAM_BINS = 50


def _unitarity_residual(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


@dataclass(frozen=True)
class TeleportFamily:
    """A phase-permutation circuit plus the controlled-unitary bond state.

    The gates u_a must each factor as a diagonal phase matrix times a
    permutation, so computational-basis letters stay computational-basis
    letters and the measurement record determines the bond unitary.
    """

    q: int
    D: int
    w: Tuple[np.ndarray, ...]
    alpha: np.ndarray
    permutation_phases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.q < 2 or self.D < 1:
            raise ValidationError(
                f"need q >= 2 and D >= 1, got q={self.q}, D={self.D}"
            )
        w = tuple(np.asarray(m, dtype=complex) for m in self.w)
        if len(w) != self.q:
            raise BadDims(f"need {self.q} bond unitaries, got {len(w)}")
        for a, m in enumerate(w):
            if m.shape != (self.D, self.D):
                raise BadDims(
                    f"bond unitary {a} has shape {m.shape}, "
                    f"expected {(self.D, self.D)}"
                )
            res = _unitarity_residual(m)
            if res > _UNITARY_TOL:
                raise NonUnitary(f"w[{a}]", res)
        object.__setattr__(self, "w", w)
        alpha = np.asarray(self.alpha, dtype=complex)
        if alpha.shape != (self.q,):
            raise BadDims(f"alpha must have length {self.q}")
        if abs(float(np.sum(np.abs(alpha) ** 2)) - 1.0) > _UNITARY_TOL:
            raise ValidationError("alpha must be normalized")
        object.__setattr__(self, "alpha", alpha)
        us = tuple(np.asarray(m, dtype=complex) for m in self.permutation_phases)
        if len(us) != self.q:
            raise BadDims(f"need {self.q} controlled gates, got {len(us)}")
        for a, m in enumerate(us):
            if m.shape != (self.q, self.q):
                raise BadDims(f"gate {a} must be {self.q}x{self.q}")
            mask = np.abs(m) > _UNITARY_TOL
            if (np.any(mask.sum(axis=0) != 1) or np.any(mask.sum(axis=1) != 1)
                    or np.max(np.abs(np.abs(m[mask]) - 1.0)) > _UNITARY_TOL):
                raise ValidationError(
                    f"gate {a} is not a phase-permutation matrix"
                )
        object.__setattr__(self, "permutation_phases", us)


@dataclass(frozen=True)
class BipartiteState:
    """Validated density matrix with a fixed A x B tensor split."""

    rho: np.ndarray
    dims: Tuple[int, int]

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        d = self.dims[0] * self.dims[1]
        if rho.shape != (d, d):
            raise BadDims(
                f"state of dims {self.dims} needs a {d}x{d} matrix, "
                f"got {rho.shape}"
            )
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
            raise ValidationError("density matrix is not Hermitian")
        if abs(float(np.trace(rho).real) - 1.0) > 1e-10:
            raise ValidationError("density matrix trace differs from 1")
        if float(np.linalg.eigvalsh(rho)[0]) < _PSD_FLOOR:
            raise ValidationError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True)
class NegativityHistogram:
    """Haar-ensemble negativity samples binned for plotting."""

    q: int
    n_samples: int
    seed: int
    samples: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float
    median: float


def effective_state(fam: TeleportFamily,
                    allow_nonuniform: bool = False) -> BipartiteState:
    """The outcome-independent post-measurement state of the benchmark.

    rho_AB = (1/D) sum_{a,a'} alpha_a alpha_a'^* |a><a'| (x) w^a (w^a')^dag.
    Every measurement record differs from this by local unitaries only.
    """
    target = np.full(fam.q, 1.0 / np.sqrt(fam.q), dtype=complex)
    if not np.allclose(fam.alpha, target, atol=1e-10) and not allow_nonuniform:
        raise NonUniformAlpha(
            "effective state is benchmarked for alpha_a = 1/sqrt(q); "
            "pass allow_nonuniform=True to proceed untested"
        )
    w = np.stack(fam.w)
    rho4 = np.einsum("a,b,aij,bkj->aibk", fam.alpha, fam.alpha.conj(),
                     w, w.conj()) / fam.D
    d = fam.q * fam.D
    return BipartiteState(rho=rho4.reshape(d, d), dims=(fam.q, fam.D))


def negativity(state: BipartiteState) -> float:
    """(||rho^T_A||_1 - 1) / 2 from the partial-transpose spectrum."""
    d_a, d_b = state.dims
    rho4 = state.rho.reshape(d_a, d_b, d_a, d_b)
    pt = rho4.transpose(2, 1, 0, 3).reshape(d_a * d_b, d_a * d_b)
    ev = np.linalg.eigvalsh(pt)
    return float((np.abs(ev).sum() - 1.0) / 2.0)


def _haar_unitary(q: int, rng) -> np.ndarray:
    z = (rng.standard_normal((q, q)) + 1j * rng.standard_normal((q, q)))
    z /= np.sqrt(2.0)
    qmat, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return qmat * (d / np.abs(d))[None, :]


def negativity_histogram(q: int, n_samples: int,
                         seed: int) -> NegativityHistogram:
    """Negativity of the effective state over Haar-random bond unitaries."""
    if q not in (2, 3, 4):
        raise ValidationError(f"histogram is defined for q in 2..4, got {q}")
    if n_samples < 1:
        raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
    alpha = np.full(q, 1.0 / np.sqrt(q))
    vals = np.empty(n_samples)
    for i in range(n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        w = np.stack([_haar_unitary(q, rng) for _ in range(q)])
        rho4 = np.einsum("a,b,aij,bkj->aibk", alpha, alpha,
                         w, w.conj()) / q
        d = q * q
        rho4 = rho4.reshape(d, d).reshape(q, q, q, q)
        pt = rho4.transpose(2, 1, 0, 3).reshape(d, d)
        ev = np.linalg.eigvalsh(pt)
        vals[i] = (np.abs(ev).sum() - 1.0) / 2.0
    counts, edges = np.histogram(vals, bins=HISTOGRAM_BINS)
    return NegativityHistogram(
        q=q, n_samples=n_samples, seed=int(seed), samples=vals,
        bin_edges=edges, counts=counts,
        mean=float(vals.mean()), median=float(np.median(vals)),
    )


def _apply_pair(vec: np.ndarray, gate: np.ndarray, left: int, right: int,
                q: int) -> np.ndarray:
    v = vec.reshape(left, q * q, right)
    return np.einsum("ij,ajb->aib", gate, v).reshape(-1)


def teleport_oracle(fam: TeleportFamily,
                    T: int) -> List[Tuple[float, float]]:
    """Brute-force protocol run enumerating every measurement record.

    The light-cone chain of 2T+1 sites is initialized with the controlled-
    unitary MPS on the sites the impurity will read out and |0> elsewhere;
    both open bond ends are purified, and the qudit B is the purifier
    behind the last-read site.  The impurity starts in |0>, is measured
    and reset to |0> after each of the first T-1 periods, and the final
    period's unmeasured output is the qudit A.  Returns one (probability,
    negativity) pair per outcome string, in lexicographic order.
    """
    if fam.q not in (2, 3) or T > 3:
        raise TooLarge(
            f"oracle is sized for q in {{2,3}} and T <= 3, "
            f"got q={fam.q}, T={T}"
        )
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if fam.D != fam.q:
        raise ValidationError("the protocol oracle runs the D = q benchmark")
    q, D = fam.q, fam.D
    gs = make_gate_set(q, list(fam.permutation_phases))
    gate = gs.two_qudit
    n_bath = 2 * T + 1

    # Bond-tensor product over the T readable sites, left to right; the
    # letter axes come first, then the two open bond indices (k, j).
    chain = np.eye(D, dtype=complex)
    site_mats = np.stack([fam.alpha[a] * fam.w[a] for a in range(q)])
    for _ in range(T):
        chain = np.einsum("...km,amj->...akj", chain, site_mats)
    chain = np.moveaxis(chain, -2, 0) / np.sqrt(D)  # (k, letters..., j)

    # Registers: E_L bond, bath sites 0..2T, impurity, E_R bond.  The MPS
    # letters live on odd bath sites; everything else starts in |0>.
    shape = (D,) + (q,) * n_bath + (q, D)
    vec = np.zeros(shape, dtype=complex)
    idx = [slice(None)]
    for s in range(n_bath):
        idx.append(slice(None) if s % 2 == 1 else 0)
    idx.extend([0, slice(None)])
    vec[tuple(idx)] = chain
    vec = vec.reshape(-1)

    def evolve_period(v):
        for s in range(n_bath - 2, 0, -2):
            v = _apply_pair(v, gate, D * q ** s, q ** (n_bath - s - 1) * D, q)
        v = _apply_pair(v, gate, D * q ** (n_bath - 1), D, q)
        for s in range(n_bath - 3, -1, -2):
            v = _apply_pair(v, gate, D * q ** s, q ** (n_bath - s - 1) * D, q)
        return v

    def measure_reset(v, m):
        v3 = v.reshape(-1, q, D)
        out = np.zeros_like(v3)
        out[:, 0, :] = v3[:, m, :]
        return out.reshape(-1)

    results = []
    for outcome in _iter_product(range(q), repeat=T - 1):
        v = vec
        for t in range(1, T + 1):
            v = evolve_period(v)
            if t < T:
                v = measure_reset(v, outcome[t - 1])
        v4 = v.reshape(D, q ** n_bath, q, D)
        rho4 = np.einsum("krai,srbi->akbs", v4, v4.conj())
        d = q * D
        rho = rho4.reshape(d, d)
        p = float(np.trace(rho).real)
        state = BipartiteState(rho=rho / p, dims=(q, D))
        results.append((p, negativity(state)))
    return results
