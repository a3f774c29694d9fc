"""Projective-unitary group elements, reachable sets, and coverings.

The bond space of the influence matrix is spanned by the set H(T) of group
elements reachable by the two-sided update g -> g_a g g_c after T steps:
the ball of radius T over the generator pairs g_a g_c and their inverses
(the empty product e included).  Elements are stored as canonicalized
projective representatives: for q = 2, sign-fixed unit quaternions; for
general q, determinant-normalized matrices with a fixed root-of-unity
phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import _su2
from ._su2 import (
    QuatStore,
    canonical_sign,
    geodesic_angle,
    hamilton,
    matrix_to_quat,
    quat_conj,
    quat_to_matrix,
)
from .errors import (
    DeltaOutOfRange,
    DimensionMismatch,
    ExplosionGuard,
    InconsistentReachableSets,
    InsufficientData,
    NonUnitary,
    UnsupportedDimension,
    ValidationError,
)
from .gates import ControlledGateSet, unitarity_residual

DEFAULT_DEDUP_TOL = 1e-8
DEFAULT_ELEMENT_CAP = 5_000_000
CLASSIFY_MIN_POINTS = 6
_INSERT_CHUNK = 500_000

SATURATION = "Saturation"
POLYNOMIAL = "Polynomial"
EXPONENTIAL = "Exponential"


# --------------------------------------------------------------------------
# Canonical group elements
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupElement:
    """A phase-canonicalized projective unitary.

    For q = 2 the element is held as a sign-fixed unit quaternion; `rep`
    rebuilds the special-unitary matrix on demand.  Equality and hashing
    quantize the representative to the dedup grid, so elements closer than
    the grid resolution compare equal; `isclose` gives the metric check.
    """

    q: int
    quat: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.quat is not None:
            qv = np.asarray(self.quat, dtype=float)
            qv.flags.writeable = False
            object.__setattr__(self, "quat", qv)
        if self.matrix is not None:
            m = np.asarray(self.matrix, dtype=complex)
            m.flags.writeable = False
            object.__setattr__(self, "matrix", m)

    @property
    def rep(self) -> np.ndarray:
        """The canonical special-unitary matrix representative."""
        if self.matrix is not None:
            return self.matrix
        m = quat_to_matrix(self.quat)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        return m

    def key(self, tol: float = DEFAULT_DEDUP_TOL) -> tuple:
        if self.quat is not None:
            return tuple(np.round(self.quat / tol).astype(np.int64))
        flat = self.rep.ravel()
        parts = np.concatenate([flat.real, flat.imag])
        return tuple(np.round(parts / tol).astype(np.int64))

    def __eq__(self, other):
        if not isinstance(other, GroupElement) or other.q != self.q:
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash((self.q,) + self.key())

    def isclose(self, other: "GroupElement", tol: float = DEFAULT_DEDUP_TOL) -> bool:
        return distance(self, other) <= tol


def _canonical_quat_from_matrix(u: np.ndarray) -> np.ndarray:
    """Sign-fixed unit quaternion of a 2x2 unitary, phase removed.

    Normalization steps are skipped when the input already satisfies them,
    which makes repeated canonicalization bit-exact.
    """
    det = u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0]
    if abs(det - 1.0) > 1e-12:
        u = u * np.exp(-0.5j * np.angle(det))
    qv = matrix_to_quat(u)
    nrm = np.linalg.norm(qv)
    if abs(nrm - 1.0) > 1e-12:
        qv = qv / nrm
    return canonical_sign(qv)


def _canonical_matrix(u: np.ndarray, q: int) -> np.ndarray:
    """Canonical representative for q > 2: det = 1 and a fixed phase root.

    Among the q admissible root-of-unity phases, pick the one maximizing
    the real part of the first entry with magnitude above the sign floor;
    ties break toward the smallest root index, so the map is idempotent.
    """
    det = np.linalg.det(u)
    if abs(det - 1.0) > 1e-12:
        u = u * np.exp(-1j * np.angle(det) / q)
    flat = u.ravel()
    sig = np.nonzero(np.abs(flat) > _su2.SIGN_EPS)[0]
    pivot = flat[sig[0]]
    roots = np.exp(2j * np.pi * np.arange(q) / q)
    scores = (roots * pivot).real
    best = int(np.argmax(scores > np.max(scores) - 1e-12))
    if best == 0:
        return u
    return u * roots[best]


def project_to_group(u: np.ndarray) -> GroupElement:
    """Canonical projective element of a unitary matrix."""
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {u.shape}")
    res = unitarity_residual(u)
    if res > 1e-8:
        raise NonUnitary("input", res)
    q = u.shape[0]
    if q == 2:
        return GroupElement(q=2, quat=_canonical_quat_from_matrix(u))
    return GroupElement(q=q, matrix=_canonical_matrix(u, q))


def identity_element(q: int = 2) -> GroupElement:
    if q == 2:
        return GroupElement(q=2, quat=np.array([1.0, 0.0, 0.0, 0.0]))
    return GroupElement(q=q, matrix=np.eye(q, dtype=complex))


def multiply(g1: GroupElement, g2: GroupElement) -> GroupElement:
    """Canonicalized projective product g1 * g2."""
    if g1.q != g2.q:
        raise DimensionMismatch(f"mixed dimensions {g1.q} and {g2.q}")
    if g1.q == 2:
        return GroupElement(q=2, quat=canonical_sign(hamilton(g1.quat, g2.quat)))
    return GroupElement(q=g1.q, matrix=_canonical_matrix(g1.rep @ g2.rep, g1.q))


def inverse(g: GroupElement) -> GroupElement:
    if g.q == 2:
        return GroupElement(q=2, quat=canonical_sign(quat_conj(g.quat)))
    return GroupElement(q=g.q, matrix=_canonical_matrix(g.rep.conj().T, g.q))


def distance(g1: GroupElement, g2: GroupElement) -> float:
    """Geodesic rotation angle of g1^{-1} g2 on SO(3), in [0, pi]."""
    if g1.q != 2 or g2.q != 2:
        raise UnsupportedDimension("the geodesic metric is implemented for q=2")
    return float(geodesic_angle(g1.quat, g2.quat))


# --------------------------------------------------------------------------
# Reachable sets
# --------------------------------------------------------------------------

class ReachableSet:
    """The time-indexed family H(T) of reachable projective elements.

    Elements live in one append-only store in breadth-first order, so H(t)
    is exactly the index range [0, counts[t]).  `product_index` resolves
    g_a * g * g_c lookups lazily and memoizes them; the influence-matrix
    builder threads its bond updates through that table.
    """

    def __init__(self, gs, T_max, tol, store, counts, gen_quats):
        self.gs = gs
        self.T_max = T_max
        self.dedup_tol = tol
        self.store = store
        self.counts = tuple(int(c) for c in counts)
        self.gen_quats = gen_quats
        self._memo = {}
        self._element_cache = {}

    @property
    def q(self) -> int:
        return self.gs.q

    @property
    def generators(self) -> Tuple[GroupElement, ...]:
        return tuple(GroupElement(q=2, quat=qv) for qv in self.gen_quats)

    def elements(self, t: int) -> Tuple[GroupElement, ...]:
        """H(t) as canonical elements, in enumeration order."""
        if t not in self._element_cache:
            quats = self.store.all_quats()
            self._element_cache[t] = tuple(
                GroupElement(q=2, quat=quats[i]) for i in range(self.counts[t])
            )
        return self._element_cache[t]

    @property
    def per_time(self) -> Tuple[frozenset, ...]:
        return tuple(frozenset(self.elements(t)) for t in range(self.T_max + 1))

    def element_quat(self, i: int) -> np.ndarray:
        return self.store.all_quats()[i]

    def product_index(self, indices, a: int, c: int) -> np.ndarray:
        """Store indices of g_a * g_i * g_c for each element index i.

        Entries are -1 where the product is not in the enumerated set.
        That can only happen for bond labels that carry no weight (labels
        reached by actual update sequences always stay inside the ball).
        """
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        out = np.empty(len(indices), dtype=np.int64)
        missing = []
        for pos, i in enumerate(indices):
            hit = self._memo.get((int(i), a, c))
            if hit is None:
                missing.append(pos)
            else:
                out[pos] = hit
        if missing:
            quats = self.store.all_quats()
            ga = self.gen_quats[a]
            gc = self.gen_quats[c]
            mids = quats[indices[missing]]
            prods = canonical_sign(hamilton(ga, hamilton(mids, gc)))
            for pos, qv in zip(missing, prods):
                idx = self.store.find(qv)
                self._memo[(int(indices[pos]), a, c)] = idx
                out[pos] = idx
        return out

    def transition_table(self, t: int, strict: bool = False) -> np.ndarray:
        """(counts[t-1], q, q) table of g_a * g * g_c store indices.

        Unresolvable products are marked -1 (see product_index); with
        strict=True they raise instead.  Resolved entries must land inside
        H(t); anything else means the enumeration and the step disagree.
        """
        n_in = self.counts[t - 1]
        q = self.q
        table = np.empty((n_in, q, q), dtype=np.int64)
        base = np.arange(n_in, dtype=np.int64)
        for a in range(q):
            for c in range(q):
                table[:, a, c] = self.product_index(base, a, c)
        if strict and np.any(table < 0):
            raise InconsistentReachableSets(
                f"two-sided products at step {t} leave the enumerated set"
            )
        if n_in and table.max() >= self.counts[t]:
            raise InconsistentReachableSets(
                f"transition at step {t} points outside H({t})"
            )
        return table


def reachable_set(gs: ControlledGateSet, T_max: int,
                  tol: float = DEFAULT_DEDUP_TOL,
                  cap: int = DEFAULT_ELEMENT_CAP) -> ReachableSet:
    """Enumerate H(0..T_max) by breadth-first two-sided products."""
    if gs.q != 2:
        raise UnsupportedDimension(
            "reachable-set enumeration is implemented for q=2"
        )
    if T_max < 0:
        raise ValidationError(f"T_max must be non-negative, got {T_max}")
    if not (1e-12 <= tol <= 1e-6):
        raise ValidationError(f"dedup tolerance {tol} outside [1e-12, 1e-6]")

    q = gs.q
    gen_quats = np.stack([
        _canonical_quat_from_matrix(np.asarray(u, dtype=complex))
        for u in gs.controlled
    ])

    # H(t) is the smallest inverse-closed set containing H(t-1) and all of
    # its one-step two-sided updates g_a h g_c.  Inverse closure keeps the
    # label sets symmetric, and closure under the update itself means bond
    # transitions can never leave the enumerated range.  A breadth-first
    # frontier suffices: anything first reached from an older element was
    # already reachable one step earlier.
    identity = np.array([1.0, 0.0, 0.0, 0.0])
    store = QuatStore(tol=tol)
    store.insert(identity)
    counts = [1]
    frontier = identity[None, :]

    for _ in range(T_max):
        if len(frontier) == 0:
            counts.append(counts[-1])
            continue
        blocks = []
        for a in range(q):
            left = hamilton(gen_quats[a], frontier)
            for c in range(q):
                prods = hamilton(left, gen_quats[c])
                blocks.append(canonical_sign(prods))
                blocks.append(canonical_sign(quat_conj(prods)))
        batch = np.concatenate(blocks, axis=0)
        fresh_blocks = []
        for lo in range(0, len(batch), _INSERT_CHUNK):
            chunk = batch[lo : lo + _INSERT_CHUNK]
            _, fresh = store.insert_batch(chunk)
            fresh_blocks.append(chunk[fresh])
            if len(store) > cap:
                raise ExplosionGuard(len(store), cap)
        frontier = (np.concatenate(fresh_blocks, axis=0)
                    if fresh_blocks else np.empty((0, 4)))
        counts.append(len(store))

    return ReachableSet(gs, T_max, tol, store, counts, gen_quats)


class _LazyProductTable:
    """On-demand two-sided product resolution without ball enumeration.

    Quacks like ReachableSet for consumers that only ever resolve products
    of elements they already hold (the truncated IM grower): a new
    canonical quaternion is inserted the first time it appears instead of
    enumerating all of H(T) up front, so growth with a capped label set
    stays cheap even where the full enumeration would trip the explosion
    guard.  Indices are meaningful only within one instance.
    """

    T_max = 10 ** 9

    def __init__(self, gs: ControlledGateSet, tol: float = DEFAULT_DEDUP_TOL):
        if gs.q != 2:
            raise UnsupportedDimension(
                "lazy product resolution is implemented for q=2"
            )
        self.gs = gs
        self.dedup_tol = tol
        self.gen_quats = np.stack([
            _canonical_quat_from_matrix(np.asarray(u, dtype=complex))
            for u in gs.controlled
        ])
        self.store = QuatStore(tol=tol)
        self.store.insert(np.array([1.0, 0.0, 0.0, 0.0]))
        self._memo = {}

    @property
    def q(self) -> int:
        return self.gs.q

    def elements(self, t: int) -> Tuple[GroupElement, ...]:
        if t != 0:
            raise ValidationError(
                "a lazy product table only exposes H(0); enumerate a "
                "ReachableSet for later times"
            )
        return (GroupElement(q=2, quat=self.store.all_quats()[0]),)

    def product_index(self, indices, a: int, c: int) -> np.ndarray:
        """Store indices of g_a * g_i * g_c, inserting new elements."""
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        out = np.empty(len(indices), dtype=np.int64)
        missing = []
        for pos, i in enumerate(indices):
            hit = self._memo.get((int(i), a, c))
            if hit is None:
                missing.append(pos)
            else:
                out[pos] = hit
        if missing:
            quats = self.store.all_quats()
            ga = self.gen_quats[a]
            gc = self.gen_quats[c]
            mids = quats[indices[missing]]
            prods = canonical_sign(hamilton(ga, hamilton(mids, gc)))
            for pos, qv in zip(missing, prods):
                idx, _ = self.store.insert(qv)
                self._memo[(int(indices[pos]), a, c)] = idx
                out[pos] = idx
        return out


# --------------------------------------------------------------------------
# Growth classification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthVerdict:
    """Empirical growth class of a reachable-set count sequence."""

    class_label: str
    fit_exponent: Optional[float]
    evidence_window: Tuple[int, int]
    residual: float
    residual_other: float = float("nan")

    def __str__(self):
        if self.fit_exponent is None:
            return self.class_label
        return f"{self.class_label}(exponent={self.fit_exponent:.3f})"


def classify_growth(rs: ReachableSet,
                    min_points: int = CLASSIFY_MIN_POINTS) -> GrowthVerdict:
    """Decide Saturation / Polynomial / Exponential from counts.

    Saturation means the trailing third of the window is constant.
    Otherwise log(count) is fitted against log(T) and against T over the
    trailing half; the smaller RMS residual wins and its slope is the
    reported exponent (degree or rate).
    """
    counts = np.asarray(rs.counts, dtype=float)
    n = len(counts)
    if n < min_points:
        raise InsufficientData(
            f"need at least {min_points} time points, got {n}"
        )

    tail = max(3, n // 3)
    if np.all(counts[-tail:] == counts[-1]):
        return GrowthVerdict(
            class_label=SATURATION,
            fit_exponent=None,
            evidence_window=(n - tail, n - 1),
            residual=0.0,
        )

    t0 = max(1, n // 2)
    ts = np.arange(t0, n, dtype=float)
    ys = np.log(counts[t0:])

    def rms_fit(xs):
        coef, res = np.polynomial.polynomial.polyfit(xs, ys, 1, full=True)
        ss = float(res[0][0]) if len(res[0]) else 0.0
        return float(coef[1]), np.sqrt(ss / len(xs))

    slope_poly, rms_poly = rms_fit(np.log(ts))
    slope_exp, rms_exp = rms_fit(ts)
    if rms_poly <= rms_exp:
        return GrowthVerdict(POLYNOMIAL, slope_poly, (t0, n - 1),
                             rms_poly, rms_exp)
    return GrowthVerdict(EXPONENTIAL, slope_exp, (t0, n - 1),
                         rms_exp, rms_poly)


# --------------------------------------------------------------------------
# Covering grid
# --------------------------------------------------------------------------

# Coordinate spacing divisor: each of the three torus coordinates is
# sampled at spacing delta/SPACING_DIVISOR so that the worst-case cell
# half-diagonal, measured in the rotation-angle metric (twice the arc
# metric of the parametrization), stays below delta.
SPACING_DIVISOR = float(np.sqrt(2.0))


@dataclass(frozen=True)
class CoveringGrid:
    """A finite net on PU(2) built on torus coordinates (theta, phi, psi).

    g = [[cos(theta) e^{i phi}, sin(theta) e^{i psi}],
         [-sin(theta) e^{-i psi}, cos(theta) e^{-i phi}]]

    theta is placed at cell centers of [0, pi/2]; phi and psi are periodic.
    """

    delta: float
    quats: np.ndarray = field(repr=False)
    grid_dims: Tuple[int, int, int]

    def __len__(self):
        return len(self.quats)

    @property
    def points(self) -> Tuple[GroupElement, ...]:
        if not hasattr(self, "_points"):
            object.__setattr__(
                self,
                "_points",
                tuple(GroupElement(q=2, quat=qv) for qv in self.quats),
            )
        return self._points

    def _tree(self):
        if not hasattr(self, "_kdtree"):
            from scipy.spatial import cKDTree

            data = np.concatenate([self.quats, -self.quats], axis=0)
            object.__setattr__(self, "_kdtree", cKDTree(data))
        return self._kdtree

    def nearest_index(self, quat: np.ndarray) -> int:
        """Index of the closest grid point; ties break to the lowest index."""
        tree = self._tree()
        k = min(4, 2 * len(self.quats))
        dists, idxs = tree.query(quat, k=k)
        dists = np.atleast_1d(dists)
        idxs = np.atleast_1d(idxs)
        best = dists[0]
        hits = idxs[dists <= best + 1e-12] % len(self.quats)
        return int(hits.min())

    def nearest_index_batch(self, quats: np.ndarray) -> np.ndarray:
        tree = self._tree()
        _, idxs = tree.query(quats, k=1)
        return np.atleast_1d(idxs) % len(self.quats)


def build_covering(delta: float) -> CoveringGrid:
    """Grid whose every PU(2) element lies within `delta` of a grid point."""
    if not (0.0 < delta <= np.pi / 2):
        raise DeltaOutOfRange(f"delta must lie in (0, pi/2], got {delta}")
    h = delta / SPACING_DIVISOR
    n_theta = int(np.ceil((np.pi / 2) / h))
    n_phi = int(np.ceil(2 * np.pi / h))
    n_psi = n_phi

    thetas = (np.arange(n_theta) + 0.5) * (np.pi / 2) / n_theta
    phis = np.arange(n_phi) * (2 * np.pi / n_phi)
    psis = np.arange(n_psi) * (2 * np.pi / n_psi)

    th, ph, ps = np.meshgrid(thetas, phis, psis, indexing="ij")
    th, ph, ps = th.ravel(), ph.ravel(), ps.ravel()
    quats = np.stack(
        [
            np.cos(th) * np.cos(ph),
            -np.sin(th) * np.sin(ps),
            -np.sin(th) * np.cos(ps),
            -np.cos(th) * np.sin(ph),
        ],
        axis=-1,
    )
    quats = canonical_sign(quats)

    store = QuatStore(tol=1e-10)
    _, fresh = store.insert_batch(quats)
    unique = quats[fresh]
    return CoveringGrid(
        delta=float(delta), quats=unique, grid_dims=(n_theta, n_phi, n_psi)
    )


def snap(grid: CoveringGrid, g: GroupElement) -> GroupElement:
    """Nearest grid element to g; idempotent and deterministic."""
    if len(grid.quats) == 0:
        raise ValidationError("covering grid is empty")
    return grid.points[grid.nearest_index(g.quat)]


# --------------------------------------------------------------------------
# Haar sampling
# --------------------------------------------------------------------------

def sample_haar(q: int, rng_seed) -> GroupElement:
    """Haar-distributed projective element from a seeded Gaussian QR draw."""
    if q < 2:
        raise ValidationError(f"dimension must be >= 2, got {q}")
    rng = np.random.default_rng(rng_seed)
    z = (rng.standard_normal((q, q)) + 1j * rng.standard_normal((q, q)))
    z /= np.sqrt(2.0)
    qmat, r = np.linalg.qr(z)
    d = np.diagonal(r)
    u = qmat * (d / np.abs(d))[None, :]
    return project_to_group(u)
