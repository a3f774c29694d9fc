"""Exact and truncated influence matrices over the group-algebra bond.

The bath's effect on the impurity is a vector over folded time legs.  For
the controlled-swap gate family each time step reads the impurity
diagonally (folded pair (a,a')), advances a group label g -> g_a g g_c, and
writes a fresh impurity state u(g')|psi_e> (folded pair (b,b')).  Step
tensors therefore carry four indices (left_bond, q^2 read, q^2 write,
right_bond); the bottom bond is pinned to the identity label and the top
boundary sums uniformly over the final labels.

Product initial states give a bond labeled by the reachable sets H(t)
alone.  Two-site cell states pair the emitted site of one period with the
measured site of the next, so their bond additionally carries the pending
measured letter: labels (g, c) with dimension #H(t) * q.  Rank-1 cells
reproduce the product-state influence matrix exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ._su2 import QuatStore, quat_to_matrix_batch
from .channels import QuantumChannel, validate_density_matrix
from .errors import (
    DegenerateNorm,
    DimensionMismatch,
    ExplosionGuard,
    InconsistentReachableSets,
    NonConvergentSteadyState,
    NonTracePreserving,
    TooLarge,
    ValidationError,
)
from .gates import ControlledGateSet, ImpurityObservable, ProductInitialState
from .group_walk import (
    DEFAULT_DEDUP_TOL,
    GroupElement,
    ReachableSet,
    _LazyProductTable,
    multiply,
    project_to_group,
    reachable_set,
)

STEADY_TOL = 1e-12
STEADY_MAX_ITER = 100_000
_BRUTE_FORCE_AMPLITUDE_CAP = 2 ** 26


# --------------------------------------------------------------------------
# Initial states: product cells and entangled two-site cells
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoSiteCellState:
    """A pure state on one (measured, emitted) site pair, tiled periodically.

    amplitudes[c, x] is the amplitude for value c on the measured site and
    x on the emitted site.  The emitted half of each pair enters the
    impurity one period before its measured partner steers the group walk.
    Product initial states are the rank-1 special case
    amplitudes = psi_o (outer) psi_e.
    """

    q: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.q, self.q):
            raise DimensionMismatch(
                f"cell amplitudes must be ({self.q},{self.q}), got {amps.shape}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-12:
            raise ValidationError(f"cell state norm {norm} != 1")
        amps = amps.copy()
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    def measured_marginal(self) -> np.ndarray:
        """Probabilities of the measured-site letters."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)


InitialState = Union[ProductInitialState, TwoSiteCellState]


def _cell_amplitudes(state: InitialState, q: int) -> np.ndarray:
    """The (measured, emitted) amplitude matrix of the per-period cell."""
    if isinstance(state, TwoSiteCellState):
        if state.q != q:
            raise DimensionMismatch(
                f"cell state is q={state.q}, gate set is q={q}"
            )
        return np.asarray(state.amplitudes)
    if state.q != q:
        raise DimensionMismatch(
            f"initial state is q={state.q}, gate set is q={q}"
        )
    return np.outer(np.asarray(state.psi_o), np.asarray(state.psi_e))


# --------------------------------------------------------------------------
# Temporal MPS container
# --------------------------------------------------------------------------

@dataclass
class TemporalMPS:
    """The influence matrix as a chain of step tensors.

    tensors[t] has shape (chi_t, q^2, q^2, chi_{t+1}) with the read pair
    first and the write pair second.  bond_labels holds, per cut, the
    group elements (product states) or (group element, letter) pairs
    (two-site cell states) labeling the bond; None marks cuts rotated by
    compression and the closed top cut.
    """

    q: int
    tensors: List[np.ndarray]
    bond_labels: List[Optional[Tuple[object, ...]]]
    chi_used: Optional[int] = None
    discarded: Optional[Tuple[float, ...]] = None

    @property
    def T(self) -> int:
        return len(self.tensors)

    def bond_dims(self) -> Tuple[int, ...]:
        dims = [self.tensors[0].shape[0]]
        dims.extend(t.shape[3] for t in self.tensors)
        return tuple(dims)

    def dense_vector(self) -> np.ndarray:
        """Contract everything into one vector over the 2T folded legs."""
        vec = np.ones((1, 1), dtype=complex)
        for w in self.tensors:
            chi_l, d1, d2, chi_r = w.shape
            vec = vec.reshape(-1, chi_l) @ w.reshape(chi_l, d1 * d2 * chi_r)
            vec = vec.reshape(-1, chi_r)
        return vec.sum(axis=1)

    def norm(self) -> float:
        """Vector 2-norm computed through the chain of Gram matrices."""
        gram = np.ones((1, 1), dtype=complex)
        for w in self.tensors:
            gram = np.einsum("ix,iabj,xaby->jy", gram, w.conj(), w,
                             optimize=True)
        return float(np.sqrt(abs(np.trace(gram).real)))


@dataclass(frozen=True)
class TEEProfile:
    """Per-cut temporal entanglement entropies in nats."""

    per_cut_entropy: Tuple[float, ...]
    max_entropy: float
    T: int
    chi_used: Union[int, str]


# --------------------------------------------------------------------------
# Local tensors
# --------------------------------------------------------------------------

def im_local_tensor(gs: ControlledGateSet, state: ProductInitialState,
                    H_in: Sequence[GroupElement],
                    H_out: Sequence[GroupElement],
                    strict: bool = False) -> np.ndarray:
    """One time-step tensor on explicit input/output label sets.

    W[g, (a,a'), (b,b'), g'] =
        delta_{a,a'} sum_c |<c|psi_o>|^2 [g' = g_a g g_c]
                     <b|u(g')|psi_e><psi_e|u(g')|b'>

    Transitions leaving H_out are dropped -- they can only carry weight
    when H_out is smaller than the full reachable step -- unless
    strict=True, which raises instead.
    """
    q = gs.q
    cell = _cell_amplitudes(state, q)
    p_c = np.sum(np.abs(cell) ** 2, axis=1)
    chi = cell / np.where(np.sqrt(p_c)[:, None] > 0, np.sqrt(p_c)[:, None], 1)
    gen_elems = [project_to_group(u) for u in gs.controlled]
    n_in, n_out = len(H_in), len(H_out)
    w = np.zeros((n_in, q * q, q * q, n_out), dtype=complex)
    if n_in == 0 or n_out == 0:
        return w

    use_store = all(h.quat is not None for h in H_out)
    if use_store:
        store = QuatStore(tol=DEFAULT_DEDUP_TOL)
        for h in H_out:
            store.insert(h.quat)

        def locate(g: GroupElement) -> int:
            return store.find(g.quat)
    else:
        table = {h.key(): j for j, h in enumerate(H_out)}

        def locate(g: GroupElement) -> int:
            return table.get(g.key(), -1)

    reps = np.stack([h.rep for h in H_out])
    emitted = np.einsum("kbx,cx->kcb", reps, chi)
    for i, g in enumerate(H_in):
        for a in range(q):
            left = multiply(gen_elems[a], g)
            for c in range(q):
                target = multiply(left, gen_elems[c])
                j = locate(target)
                if j < 0:
                    if strict:
                        raise InconsistentReachableSets(
                            "a bond transition leaves the output label set"
                        )
                    continue
                v = emitted[j, c]
                w[i, a * q + a, :, j] += p_c[c] * np.outer(
                    v, v.conj()).reshape(-1)
    return w


def _product_step_tensor(rs: ReachableSet, cell: np.ndarray,
                         t: int) -> np.ndarray:
    """Exact step-t tensor for a rank-1 cell via the transition table."""
    q = rs.q
    table = rs.transition_table(t, strict=True)
    n_in, n_out = rs.counts[t - 1], rs.counts[t]
    reps = quat_to_matrix_batch(rs.store.all_quats()[:n_out])
    emitted = np.einsum("kbx,cx->kcb", reps, cell)
    w = np.zeros((n_in, q * q, q * q, n_out), dtype=complex)
    rows = np.arange(n_in)
    for a in range(q):
        for c in range(q):
            targets = table[:, a, c]
            vs = emitted[targets, c]
            write = np.einsum("ib,ik->ibk", vs, vs.conj()).reshape(n_in, -1)
            w[rows, a * q + a, :, targets] += write
    return w


def _cell_step_tensor(rs: ReachableSet, cell: np.ndarray, t: int,
                      marginal: np.ndarray) -> np.ndarray:
    """Exact step-t tensor for an entangled cell; bond labels are (g, c).

    The incoming letter c steers the group update g' = g_a g g_c; the
    outgoing letter c' weights the written state u(g')|cell_c'> that is
    entangled with the next period's measurement.  At t=1 the incoming
    letter is summed against the measured marginal of the boundary pair.
    """
    q = rs.q
    table = rs.transition_table(t, strict=True)
    n_in_g, n_out_g = rs.counts[t - 1], rs.counts[t]
    reps = quat_to_matrix_batch(rs.store.all_quats()[:n_out_g])
    emitted = np.einsum("kbx,cx->kcb", reps, cell)
    # write[k, c', (b,b')] for group label k and outgoing letter c'
    write = np.einsum("kcb,kcd->kcbd", emitted, emitted.conj())
    write = write.reshape(n_out_g, q, q * q)
    if t == 1:
        w = np.zeros((1, q * q, q * q, n_out_g * q), dtype=complex)
        for a in range(q):
            for c in range(q):
                gp = int(table[0, a, c])
                for cp in range(q):
                    w[0, a * q + a, :, gp * q + cp] += (
                        marginal[c] * write[gp, cp]
                    )
        return w
    w = np.zeros((n_in_g * q, q * q, q * q, n_out_g * q), dtype=complex)
    for a in range(q):
        for c in range(q):
            targets = table[:, a, c]
            rows = np.arange(n_in_g) * q + c
            for cp in range(q):
                w[rows, a * q + a, :, targets * q + cp] += write[targets, cp]
    return w


def _step_tensor_from_rs(rs: ReachableSet, state: InitialState,
                         t: int) -> np.ndarray:
    cell = _cell_amplitudes(state, rs.q)
    if isinstance(state, TwoSiteCellState):
        return _cell_step_tensor(rs, cell, t, state.measured_marginal())
    return _product_step_tensor(rs, cell, t)


# --------------------------------------------------------------------------
# Exact build
# --------------------------------------------------------------------------

def _bond_label_tuple(rs: ReachableSet, t: int,
                      entangled: bool) -> Tuple[object, ...]:
    elems = rs.elements(t)
    if not entangled:
        return elems
    q = rs.q
    return tuple((g, c) for g in elems for c in range(q))


def build_exact_im(gs: ControlledGateSet, state: InitialState, T: int,
                   rs: Optional[ReachableSet] = None) -> TemporalMPS:
    """Exact IM with bond t labeled by the full reachable set H(t)."""
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if rs is None or rs.T_max < T:
        rs = reachable_set(gs, T)
    entangled = isinstance(state, TwoSiteCellState)
    tensors = []
    labels: List[Optional[Tuple[object, ...]]] = [rs.elements(0)]
    for t in range(1, T + 1):
        tensors.append(_step_tensor_from_rs(rs, state, t))
        labels.append(_bond_label_tuple(rs, t, entangled) if t < T else None)
    # Absorb the uniform top boundary over the final labels.
    tensors[-1] = tensors[-1].sum(axis=3, keepdims=True)
    return TemporalMPS(q=gs.q, tensors=tensors, bond_labels=labels)


# --------------------------------------------------------------------------
# Canonicalization, entropy, compression
# --------------------------------------------------------------------------

def _right_canon_list(tensors: List[np.ndarray]) -> List[np.ndarray]:
    """Right-to-left sweep making every tensor but the first right-isometric."""
    out = [t.copy() for t in tensors]
    for t in range(len(out) - 1, 0, -1):
        chi_l, d1, d2, chi_r = out[t].shape
        mat = out[t].reshape(chi_l, d1 * d2 * chi_r)
        q_fac, r_fac = np.linalg.qr(mat.conj().T)
        rank = q_fac.shape[1]
        out[t] = q_fac.conj().T.reshape(rank, d1, d2, chi_r)
        out[t - 1] = np.einsum("iabj,jk->iabk", out[t - 1], r_fac.conj().T)
    return out


def _schmidt_sweep(tensors: List[np.ndarray],
                   chi_max: Optional[int] = None,
                   cutoff: float = 0.0):
    """Left-to-right SVD sweep on a right-canonical chain.

    Returns (new_tensors, singular_values_per_cut, discarded_per_cut);
    the singular values at each internal cut are those of the full chain.
    """
    n = len(tensors)
    work = list(tensors)
    svals: List[np.ndarray] = []
    discarded: List[float] = []
    carry = None
    for t in range(n - 1):
        w = work[t]
        if carry is not None:
            w = np.einsum("ki,iabj->kabj", carry, w)
        chi_l, d1, d2, chi_r = w.shape
        u, s, vh = np.linalg.svd(w.reshape(chi_l * d1 * d2, chi_r),
                                 full_matrices=False)
        keep = len(s)
        if cutoff > 0.0:
            keep = int(np.sum(s > cutoff))
        if chi_max is not None:
            keep = min(keep, chi_max)
        keep = max(keep, 1)
        svals.append(s.copy())
        discarded.append(float(np.sum(s[keep:] ** 2)))
        work[t] = u[:, :keep].reshape(chi_l, d1, d2, keep)
        carry = s[:keep, None] * vh[:keep]
    if carry is not None:
        work[-1] = np.einsum("ki,iabj->kabj", carry, work[-1])
    return work, svals, discarded


def temporal_entanglement(mps: TemporalMPS) -> TEEProfile:
    """Von Neumann entropy (nats) of the IM at every internal time cut."""
    if mps.T < 2:
        raise ValidationError("temporal entanglement needs T >= 2")
    nrm = mps.norm()
    if nrm < 1e-14:
        raise DegenerateNorm(f"influence-matrix norm {nrm} is below 1e-14")
    tensors = [t.copy() for t in mps.tensors]
    tensors[0] = tensors[0] / nrm
    _, svals, _ = _schmidt_sweep(_right_canon_list(tensors))
    entropies = []
    for s in svals:
        p = s ** 2
        total = p.sum()
        if total <= 0.0:
            entropies.append(0.0)
            continue
        p = p / total
        p = p[p > 1e-300]
        entropies.append(float(-(p * np.log(p)).sum()))
    chi_used = mps.chi_used if mps.chi_used is not None else "exact"
    return TEEProfile(
        per_cut_entropy=tuple(entropies),
        max_entropy=float(max(entropies)),
        T=mps.T,
        chi_used=chi_used,
    )


def compress(mps: TemporalMPS, chi_max: int,
             cutoff: float = 0.0) -> TemporalMPS:
    """SVD-truncate every internal cut to at most chi_max values > cutoff."""
    if chi_max < 1:
        raise ValidationError(f"chi_max must be >= 1, got {chi_max}")
    work, _, discarded = _schmidt_sweep(
        _right_canon_list(mps.tensors), chi_max=chi_max, cutoff=cutoff
    )
    labels: List[Optional[Tuple[object, ...]]] = [mps.bond_labels[0]]
    labels.extend([None] * (mps.T - 1))
    labels.append(mps.bond_labels[-1])
    return TemporalMPS(
        q=mps.q,
        tensors=work,
        bond_labels=labels,
        chi_used=chi_max,
        discarded=tuple(discarded),
    )


# --------------------------------------------------------------------------
# Truncated growth
# --------------------------------------------------------------------------

def _restricted_step(rs: ReachableSet, state: InitialState, t: int,
                     support: np.ndarray):
    """Step tensor restricted to an incoming bond support.

    Product states use group-element indices as support codes; entangled
    cells use g_index * q + c.  Returns (tensor, outgoing support codes).
    """
    q = rs.q
    cell = _cell_amplitudes(state, q)
    entangled = isinstance(state, TwoSiteCellState)

    if not entangled:
        n_in = len(support)
        targets = np.empty((n_in, q, q), dtype=np.int64)
        for a in range(q):
            for c in range(q):
                targets[:, a, c] = rs.product_index(support, a, c)
        # Snapshot after product resolution: a lazy table may have grown.
        quats = rs.store.all_quats()
        out_codes = np.unique(targets[targets >= 0])
        local = {int(g): k for k, g in enumerate(out_codes)}
        reps = quat_to_matrix_batch(quats[out_codes])
        emitted = np.einsum("kbx,cx->kcb", reps, cell)
        w = np.zeros((n_in, q * q, q * q, len(out_codes)), dtype=complex)
        for a in range(q):
            for c in range(q):
                for i in range(n_in):
                    gidx = targets[i, a, c]
                    if gidx < 0:
                        continue
                    k = local[int(gidx)]
                    v = emitted[k, c]
                    w[i, a * q + a, :, k] += np.outer(v, v.conj()).reshape(-1)
        return w, out_codes

    marginal = state.measured_marginal()
    if t == 1:
        g_in = np.array([0], dtype=np.int64)
        pairs_in = [(0, c) for c in range(q)]
    else:
        g_in = support // q
        pairs_in = [(int(code // q), int(code % q)) for code in support]
    uniq_g = np.unique(g_in)
    g_targets = {}
    for a in range(q):
        for c in range(q):
            g_targets[(a, c)] = dict(
                zip(uniq_g.tolist(),
                    rs.product_index(uniq_g, a, c).tolist())
            )
    out_g = sorted({
        gt for (a, c), m in g_targets.items() for gt in m.values() if gt >= 0
    })
    out_g_arr = np.array(out_g, dtype=np.int64)
    g_local = {g: k for k, g in enumerate(out_g)}
    reps = quat_to_matrix_batch(rs.store.all_quats()[out_g_arr])
    emitted = np.einsum("kbx,cx->kcb", reps, cell)
    write = np.einsum("kcb,kcd->kcbd", emitted, emitted.conj())
    write = write.reshape(len(out_g), q, q * q)
    out_codes = np.array(
        [g * q + cp for g in out_g for cp in range(q)], dtype=np.int64
    )
    n_in = 1 if t == 1 else len(support)
    w = np.zeros((n_in, q * q, q * q, len(out_codes)), dtype=complex)
    for row, (gi, c) in enumerate(pairs_in):
        weight = marginal[c] if t == 1 else 1.0
        dest_row = 0 if t == 1 else row
        for a in range(q):
            gt = g_targets[(a, c)].get(gi, -1)
            if gt < 0:
                continue
            k = g_local[gt]
            for cp in range(q):
                w[dest_row, a * q + a, :, k * q + cp] += (
                    weight * write[k, cp]
                )
    return w, out_codes


def grow_im_truncated(gs: ControlledGateSet, state: InitialState, T: int,
                      chi_max: int,
                      support_cap: Optional[int] = None,
                      rs: Optional[ReachableSet] = None) -> TemporalMPS:
    """Grow the IM one step at a time, truncating as it grows.

    Internal cuts are SVD-truncated to chi_max after each step.  The open
    top bond keeps explicit labels; when more than support_cap labels
    would be needed, the lightest ones (by amplitude norm of their tensor
    slice in left-canonical form) are dropped.  With chi_max and
    support_cap at or above the exact bond dimensions nothing is truncated
    and the result matches the exact build.
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if chi_max < 1:
        raise ValidationError(f"chi_max must be >= 1, got {chi_max}")
    if support_cap is None:
        support_cap = chi_max
    if rs is None:
        # Truncated growth only resolves products of the labels it keeps,
        # so when the full ball is too large to enumerate we fall back to
        # lazy on-demand resolution instead of giving up.
        try:
            rs = reachable_set(gs, T)
        except ExplosionGuard:
            rs = _LazyProductTable(gs)
    elif rs.T_max < T:
        rs = reachable_set(gs, T)
    q = gs.q
    entangled = isinstance(state, TwoSiteCellState)

    support = np.array([0], dtype=np.int64)
    tensors: List[np.ndarray] = []
    labels: List[Optional[Tuple[object, ...]]] = [rs.elements(0)]
    for t in range(1, T + 1):
        w, out_codes = _restricted_step(rs, state, t, support)
        tensors.append(w)
        tensors, _, _ = _schmidt_sweep(_right_canon_list(tensors), chi_max)
        if len(out_codes) > support_cap and t < T:
            top = tensors[-1]
            weights = np.linalg.norm(top.reshape(-1, top.shape[3]), axis=0)
            keep = np.sort(np.argsort(weights)[::-1][:support_cap])
            tensors[-1] = top[:, :, :, keep]
            out_codes = out_codes[keep]
        support = out_codes
        if t < T:
            quats = rs.store.all_quats()
            if entangled:
                labels.append(tuple(
                    (GroupElement(q=q, quat=quats[int(code // q)]),
                     int(code % q))
                    for code in support
                ))
            else:
                labels.append(tuple(
                    GroupElement(q=q, quat=quats[int(code)])
                    for code in support
                ))
    tensors[-1] = tensors[-1].sum(axis=3, keepdims=True)
    labels.append(None)
    return TemporalMPS(q=q, tensors=tensors, bond_labels=labels,
                       chi_used=chi_max)


_TOPDOWN_ROW_CAP = 2 ** 25


def build_im_topdown(gs: ControlledGateSet, state: InitialState, T: int,
                     chi_max: Optional[int] = None,
                     cutoff: float = 1e-12,
                     rs: Optional[ReachableSet] = None) -> TemporalMPS:
    """Contract the IM from the closed top boundary downward.

    The all-ones top boundary is absorbed first and the chain is factored
    one step at a time with rank-revealing SVDs (relative cutoff), so the
    bond dimension tracks the Schmidt rank of the closed influence matrix
    rather than the reachable-set size.  States whose IM is (close to) a
    product contract in O(#H) time and memory even when the label bond is
    far too large to build exactly; high-entanglement states should use
    grow_im_truncated instead, which caps cost by construction.
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if chi_max is not None and chi_max < 1:
        raise ValidationError(f"chi_max must be >= 1, got {chi_max}")
    if rs is None or rs.T_max < T:
        rs = reachable_set(gs, T)
    q = gs.q
    cell = _cell_amplitudes(state, q)
    entangled = isinstance(state, TwoSiteCellState)
    marginal = state.measured_marginal() if entangled else None
    psi_e = None if entangled else np.asarray(state.psi_e, dtype=complex)
    p_c = None if entangled else np.abs(np.asarray(state.psi_o)) ** 2
    quats = rs.store.all_quats()
    legs = q * q * q * q
    chunk = 65536

    def d_block(t: int, u_fac: Optional[np.ndarray], lo: int, hi: int):
        """D[g', (b,b'), r] = write block at g' contracted with u_fac."""
        reps = quat_to_matrix_batch(quats[lo:hi])
        if entangled:
            em = np.einsum("kbx,cx->kcb", reps, cell)
            if u_fac is None:
                d = np.einsum("kcb,kcd->kbd", em, em.conj())
                return d.reshape(hi - lo, q * q, 1)
            u3 = u_fac.reshape(-1, q, u_fac.shape[1])
            return np.einsum("kcb,kcd,kcr->kbdr", em, em.conj(),
                             u3[lo:hi]).reshape(hi - lo, q * q, -1)
        em = reps @ psi_e
        y = np.einsum("kb,kd->kbd", em, em.conj())
        if u_fac is None:
            return y.reshape(hi - lo, q * q, 1)
        return np.einsum("kbd,kr->kbdr", y,
                         u_fac[lo:hi]).reshape(hi - lo, q * q, -1)

    u_fac: Optional[np.ndarray] = None
    r_above = 1
    chain: List[np.ndarray] = []
    for t in range(T, 0, -1):
        n_out, n_in = rs.counts[t], rs.counts[t - 1]
        table = rs.transition_table(t, strict=True)
        d_full = np.concatenate([
            d_block(t, u_fac, lo, min(lo + chunk, n_out))
            for lo in range(0, n_out, chunk)
        ])
        k_dim = legs * r_above

        def rows_block(lo: int, hi: int) -> np.ndarray:
            m = np.zeros((hi - lo, q * q, q * q, r_above), dtype=complex)
            if entangled:
                g_idx = np.arange(lo, hi) // q
                c_idx = np.arange(lo, hi) % q
                for a in range(q):
                    m[np.arange(hi - lo), a * q + a] = (
                        d_full[table[g_idx, a, c_idx]]
                    )
            else:
                for a in range(q):
                    acc = np.zeros((hi - lo, q * q, r_above), dtype=complex)
                    for c in range(q):
                        acc += p_c[c] * d_full[table[lo:hi, a, c]]
                    m[:, a * q + a] = acc
            return m.reshape(hi - lo, k_dim)

        if t == 1:
            if entangled:
                first = np.zeros((q * q, q * q, r_above), dtype=complex)
                for a in range(q):
                    for c in range(q):
                        first[a * q + a] += (
                            marginal[c] * d_full[table[0, a, c]]
                        )
                m1 = first.reshape(1, k_dim)
            else:
                m1 = rows_block(0, 1)
            chain.insert(0, m1.reshape(1, q * q, q * q, r_above))
            break

        n_rows = n_in * q if entangled else n_in
        if n_rows * r_above > _TOPDOWN_ROW_CAP:
            raise TooLarge(
                f"top-down bond factor needs {n_rows * r_above} entries"
            )
        # Tall-skinny QR keeps the noise floor at eps*s_max (a Gram matrix
        # would square the conditioning and bury small singular values).
        r_mat = np.zeros((0, k_dim), dtype=complex)
        for lo in range(0, n_rows, chunk):
            blk = rows_block(lo, min(lo + chunk, n_rows))
            r_mat = np.linalg.qr(np.vstack([r_mat, blk]), mode="r")
        _, s, vh = np.linalg.svd(r_mat)
        if s[0] < 1e-300:
            raise DegenerateNorm("top-down partial chain has zero norm")
        keep = max(1, int(np.sum(s > cutoff * s[0])))
        if chi_max is not None:
            keep = min(keep, chi_max)
        v_k = vh[:keep].conj().T
        s_k = s[:keep]
        u_new = np.empty((n_rows, keep), dtype=complex)
        for lo in range(0, n_rows, chunk):
            hi = min(lo + chunk, n_rows)
            u_new[lo:hi] = rows_block(lo, hi) @ v_k / s_k
        chain.insert(0, (s_k[:, None] * vh[:keep]).reshape(
            keep, q * q, q * q, r_above))
        u_fac = u_new
        r_above = keep
    labels: List[Optional[Tuple[object, ...]]] = [rs.elements(0)]
    labels.extend([None] * T)
    return TemporalMPS(q=q, tensors=chain, bond_labels=labels,
                       chi_used=chi_max)


# --------------------------------------------------------------------------
# Contraction with an impurity process
# --------------------------------------------------------------------------

def contract_with_process(mps: TemporalMPS, rho_imp,
                          channels: Sequence[QuantumChannel],
                          obs: ImpurityObservable) -> float:
    """Expectation of obs after threading rho_imp through the IM.

    The impurity starts in rho_imp, is read and rewritten by each time-step
    tensor, and passes through channels[t] between steps t and t+1 (so
    exactly T-1 channels).  The carried object M[bond, (beta,beta')] keeps
    the joint bond/impurity correlations.
    """
    q = mps.q
    rho = validate_density_matrix(rho_imp, q)
    if len(channels) != mps.T - 1:
        raise ValidationError(
            f"need {mps.T - 1} channels for T={mps.T}, got {len(channels)}"
        )
    for ch in channels:
        if ch.dim != q:
            raise DimensionMismatch(f"channel dim {ch.dim} != q={q}")
        res = ch.trace_residual()
        if res > 1e-8:
            raise NonTracePreserving(res)
    o_mat = np.asarray(obs.matrix if isinstance(obs, ImpurityObservable)
                       else obs, dtype=complex)
    if o_mat.shape != (q, q):
        raise DimensionMismatch(f"observable must be {q}x{q}")

    m = rho.reshape(1, q * q).astype(complex)
    for t, w in enumerate(mps.tensors):
        m = np.einsum("ip,ipbj->jb", m, w, optimize=True)
        if t < mps.T - 1:
            m = m @ channels[t].superoperator().T
    m = m.sum(axis=0).reshape(q, q)
    val = complex(np.einsum("bc,cb->", m, o_mat))
    return float(val.real)


# --------------------------------------------------------------------------
# Solvable initial states
# --------------------------------------------------------------------------

def check_solvable_state(two_site_state, gs: ControlledGateSet,
                         tol: float = STEADY_TOL,
                         max_iter: int = STEADY_MAX_ITER) -> float:
    """Max-norm residual of the product-IM condition for a two-site cell.

    The cell (measured letter c, emitted letter x) is split by SVD into an
    emitted tensor A and a measured tensor B sharing the entangled bond.
    S_D is the steady state of S -> sum_{c,x} (B^c A^x)^dag S (B^c A^x),
    found by power iteration seeded from the identity, and the returned
    residual is

        max_{c,c'} | sum_x (B^c A^x)^dag S_D (B^c' A^x)
                     - (1/q) delta_{c,c'} S_D |.

    Mixed inputs are handled branch-by-branch through their eigenvectors.
    """
    q = gs.q
    arr = np.asarray(two_site_state, dtype=complex)
    if arr.ndim == 1:
        if arr.shape != (q * q,):
            raise DimensionMismatch(
                f"two-site vector must have length {q * q}, got {arr.shape}"
            )
        nrm = np.linalg.norm(arr)
        if abs(nrm - 1.0) > 1e-10:
            raise ValidationError(f"two-site state norm {nrm} != 1")
        branches = [(1.0, arr.reshape(q, q))]
    elif arr.ndim == 2 and arr.shape == (q * q, q * q):
        rho = validate_density_matrix(arr)
        evals, evecs = np.linalg.eigh(rho)
        branches = [
            (float(lam), vec.reshape(q, q))
            for lam, vec in zip(evals, evecs.T) if lam > 1e-14
        ]
    else:
        raise DimensionMismatch(
            f"expected a length-{q * q} vector or {q * q}x{q * q} matrix, "
            f"got shape {arr.shape}"
        )

    # Cell operators M_{c,x} = sqrt(weight) B^c A^x on the entangled bond.
    ops: List[List[List[np.ndarray]]] = [
        [[] for _ in range(q)] for _ in range(q)
    ]
    for weight, psi in branches:
        phi = psi.T  # [x, c]: emitted on the A side, measured on the B side
        u_mat, s_vec, vh = np.linalg.svd(phi)
        a_fac = u_mat * np.sqrt(s_vec)[None, :]   # A^x row over the bond
        b_fac = np.sqrt(s_vec)[:, None] * vh      # B^c column over the bond
        for c in range(q):
            for x in range(q):
                ops[c][x].append(
                    np.sqrt(weight) * np.outer(b_fac[:, c], a_fac[x])
                )

    s_mat = np.eye(q, dtype=complex) / q
    for _ in range(max_iter):
        nxt = np.zeros_like(s_mat)
        for c in range(q):
            for x in range(q):
                for m_cx in ops[c][x]:
                    nxt += m_cx.conj().T @ s_mat @ m_cx
        tr = np.trace(nxt).real
        if abs(tr) < 1e-300:
            raise NonConvergentSteadyState(
                "the steady map annihilated the identity seed"
            )
        nxt = nxt / tr
        if np.max(np.abs(nxt - s_mat)) < tol:
            s_mat = nxt
            break
        s_mat = nxt
    else:
        raise NonConvergentSteadyState(
            f"no steady state within {max_iter} iterations"
        )

    residual = 0.0
    for c in range(q):
        for cp in range(q):
            acc = np.zeros((q, q), dtype=complex)
            for x in range(q):
                for m1 in ops[c][x]:
                    for m2 in ops[cp][x]:
                        acc += m1.conj().T @ s_mat @ m2
            if c == cp:
                acc -= s_mat / q
            residual = max(residual, float(np.max(np.abs(acc))))
    return residual


# --------------------------------------------------------------------------
# Brute-force finite-chain oracle
# --------------------------------------------------------------------------

def _apply_two_site(vec: np.ndarray, gate: np.ndarray, site: int,
                    n_sites: int, q: int) -> np.ndarray:
    """Apply a two-site gate on (site, site+1); site 0 is slowest-varying."""
    left = q ** site
    right = q ** (n_sites - site - 2)
    v = vec.reshape(left, q * q, right)
    v = np.einsum("ij,ajb->aib", gate, v)
    return v.reshape(-1)


def _bath_branches(state: InitialState, q: int, T: int):
    """Weighted pure bath states over sites 0..2T (site 2T+1 is impurity).

    The rightmost bath site is measured-type and parity alternates
    leftward.  Entangled cells pair each measured site with the emitted
    site of the preceding period (one site to its right is the impurity
    for the last measured site, so that site's pair is cut: it enters as
    the measured-half marginal, branch by branch).
    """
    n_bath = 2 * T + 1
    if isinstance(state, ProductInitialState):
        vec = np.array([1.0 + 0j])
        for s in range(n_bath):
            part = state.psi_o if (n_bath - 1 - s) % 2 == 0 else state.psi_e
            vec = np.kron(vec, part)
        return [(1.0, vec)]
    cell = _cell_amplitudes(state, q)
    # Pairs (measured left, emitted right) at sites (n-2t-1, n-2t) for
    # t = 1..T; the pair for t = T sits at (0, 1) with site 0 playing the
    # never-measured partner, and site n-1 carries the cut pair's
    # measured-half reduced state.
    pair = cell.reshape(-1)  # [(c, x)] with the measured site slower
    body = np.array([1.0 + 0j])
    for _ in range(T):
        body = np.kron(body, pair)
    rho_m = np.einsum("cx,dx->cd", cell, cell.conj())
    evals, evecs = np.linalg.eigh(rho_m)
    branches = []
    for lam, v in zip(evals, evecs.T):
        if lam > 1e-14:
            branches.append((float(lam), np.kron(body, v)))
    return branches


def _brute_force_linear(gs: ControlledGateSet, state: InitialState,
                        imp_init: np.ndarray,
                        channels: Sequence[QuantumChannel],
                        obs_mat: np.ndarray, T: int) -> complex:
    """Exact Tr[O rho(T)] for a general (possibly non-Hermitian) imp_init."""
    q = gs.q
    n_bath = 2 * T + 1
    n_sites = n_bath + 1
    dim = q ** n_sites
    n_branches = 1
    for ch in channels:
        n_branches *= len(ch.kraus)
    if dim * max(n_branches, 1) > _BRUTE_FORCE_AMPLITUDE_CAP:
        raise TooLarge(
            f"brute force would need {dim * n_branches} amplitudes"
        )
    gate = gs.two_qudit

    def evolve_period(vec):
        for s in range(n_bath - 2, 0, -2):
            vec = _apply_two_site(vec, gate, s, n_sites, q)
        vec = _apply_two_site(vec, gate, n_bath - 1, n_sites, q)
        for s in range(n_bath - 3, -1, -2):
            vec = _apply_two_site(vec, gate, s, n_sites, q)
        return vec

    def apply_imp(vec, op):
        return (vec.reshape(-1, q) @ op.T).reshape(-1)

    # Rank decompositions: bath mixture branches (outer) and ket/bra pairs
    # of the impurity matrix (inner).
    u_mat, s_vec, vh = np.linalg.svd(np.asarray(imp_init, dtype=complex))
    total = 0.0 + 0.0j
    for bath_w, bath in _bath_branches(state, q, T):
        for k, s_val in enumerate(s_vec):
            if s_val <= 1e-16:
                continue
            ket0 = np.kron(bath, u_mat[:, k])
            bra0 = np.kron(bath, vh[k].conj())
            pairs = [(ket0, bra0)]
            for t in range(T):
                pairs = [(evolve_period(kv), evolve_period(bv))
                         for kv, bv in pairs]
                if t < T - 1:
                    pairs = [
                        (apply_imp(kv, k_op), apply_imp(bv, k_op))
                        for kv, bv in pairs
                        for k_op in channels[t].kraus
                    ]
            for kv, bv in pairs:
                total += bath_w * s_val * np.vdot(bv, apply_imp(kv, obs_mat))
    return total


def brute_force_observable(gs: ControlledGateSet, state: InitialState,
                           rho_imp, channels: Sequence[QuantumChannel],
                           obs: ImpurityObservable, T: int) -> float:
    """Exact <O(T)> on the finite chain of 2T+1 bath sites plus impurity."""
    q = gs.q
    rho = validate_density_matrix(rho_imp, q)
    o_mat = np.asarray(obs.matrix if isinstance(obs, ImpurityObservable)
                       else obs, dtype=complex)
    if T == 0:
        return float(np.trace(rho @ o_mat).real)
    if len(channels) != T - 1:
        raise ValidationError(
            f"need {T - 1} channels for T={T}, got {len(channels)}"
        )
    val = _brute_force_linear(gs, state, rho, channels, o_mat, T)
    return float(val.real)
