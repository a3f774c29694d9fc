"""Vectorized SU(2)/unit-quaternion helpers.

A unit quaternion (w, x, y, z) corresponds to the SU(2) matrix

    U = w*I - i*(x*sx + y*sy + z*sz)
      = [[w - i z, -i x - y],
         [-i x + y, w + i z]]

so matrix multiplication maps to the Hamilton product in the same order.
Projective (PU(2) = SO(3)) elements are represented by quaternions with the
sign fixed so that the first component of magnitude > SIGN_EPS is positive.

All batch routines operate on float arrays of shape (N, 4).
"""

from __future__ import annotations

import numpy as np

SIGN_EPS = 1e-12

_I2 = np.eye(2, dtype=complex)
_SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
_SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

PAULI = {"i": _I2, "x": _SX, "y": _SY, "z": _SZ}


def quat_to_matrix(q):
    """SU(2) matrix for a single quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [[w - 1j * z, -1j * x - y], [-1j * x + y, w + 1j * z]], dtype=complex
    )


def quat_to_matrix_batch(q):
    """(N, 4) quaternions -> (N, 2, 2) SU(2) matrices."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty(q.shape[:1] + (2, 2), dtype=complex)
    m[:, 0, 0] = w - 1j * z
    m[:, 0, 1] = -1j * x - y
    m[:, 1, 0] = -1j * x + y
    m[:, 1, 1] = w + 1j * z
    return m


def matrix_to_quat(m):
    """Quaternion components of an SU(2) matrix (real parts taken)."""
    w = 0.5 * (m[0, 0] + m[1, 1]).real
    z = 0.5 * (m[1, 1] - m[0, 0]).imag
    x = -0.5 * (m[0, 1] + m[1, 0]).imag
    y = 0.5 * (m[1, 0] - m[0, 1]).real
    return np.array([w, x, y, z])


def canonical_sign(q):
    """Fix the projective sign: first component with |.| > SIGN_EPS positive.

    Accepts (4,) or (N, 4); returns the same shape.  Idempotent bit-for-bit.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    qb = q[None, :] if single else q
    sig = np.abs(qb) > SIGN_EPS
    first = np.argmax(sig, axis=1)
    vals = qb[np.arange(len(qb)), first]
    flip = vals < 0.0
    out = np.where(flip[:, None], -qb, qb)
    return out[0] if single else out


def hamilton(q1, q2):
    """Hamilton product, broadcasting over leading axes; shapes (..., 4)."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    w1, x1, y1, z1 = (q1[..., k] for k in range(4))
    w2, x2, y2, z2 = (q2[..., k] for k in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_conj(q):
    """Quaternion inverse (conjugate) for unit quaternions."""
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def geodesic_angle(q1, q2):
    """SO(3) geodesic rotation angle between projective quaternions.

    angle = 2*arccos(min(1, |<q1, q2>|)), in [0, pi].
    """
    dot = np.abs(np.sum(np.asarray(q1) * np.asarray(q2), axis=-1))
    return 2.0 * np.arccos(np.minimum(1.0, dot))


class QuatStore:
    """Append-only store of projective quaternions with tolerant dedup.

    Elements are hashed by rounding each component to a grid of `tol`;
    membership is confirmed with the exact geodesic angle.  Keys adjacent
    to a rounding boundary are probed on both sides so that two numerical
    representations of the same element never land in different buckets.
    """

    def __init__(self, tol=1e-8):
        self.tol = tol
        self._rows = []
        self._buckets = {}
        self._cache = None
        # Confirmation: same element iff rotation angle <= tol.  Compare via
        # the quaternion chord (2*sin(tol/4) for rotation angle tol), which
        # stays well-conditioned where 1 - cos would round to zero.
        self._chord2_max = (2.0 * np.sin(tol / 4.0)) ** 2

    def __len__(self):
        return len(self._rows)

    def all_quats(self):
        """All stored quaternions as an (N, 4) array (cached)."""
        if self._cache is None or len(self._cache) != len(self._rows):
            self._cache = (
                np.array(self._rows, dtype=float)
                if self._rows
                else np.empty((0, 4), dtype=float)
            )
        return self._cache

    def get(self, idx):
        return self._rows[idx]

    @staticmethod
    def _neighbor_keys(base_key, offs):
        """Extra bucket keys when any component sits near a rounding edge."""
        keys = [base_key]
        near = np.nonzero(np.abs(np.abs(offs) - 0.5) < 1e-4)[0]
        for axis in near:
            step = 1 if offs[axis] > 0 else -1
            extra = []
            for k in keys:
                kk = list(k)
                kk[axis] += step
                extra.append(tuple(kk))
            keys.extend(extra)
        return keys

    def _lookup(self, q, keys):
        for key in keys:
            for idx in self._buckets.get(key, ()):
                r = self._rows[idx]
                d_minus = r - q
                d_plus = r + q
                chord2 = min(float(np.dot(d_minus, d_minus)),
                             float(np.dot(d_plus, d_plus)))
                if chord2 <= self._chord2_max:
                    return idx
        return -1

    def find(self, q):
        """Index of the stored element equal to q (within tol), else -1."""
        scaled = np.asarray(q, dtype=float) / self.tol
        base = np.round(scaled)
        keys = self._neighbor_keys(tuple(base.astype(np.int64)), scaled - base)
        return self._lookup(q, keys)

    def insert(self, q):
        """Return (index, inserted_flag) for canonical quaternion q."""
        idx, flag = self.insert_batch(np.asarray(q, dtype=float)[None, :])
        return int(idx[0]), bool(flag[0])

    def insert_batch(self, Q):
        """Insert (N, 4) canonical quaternions; return (indices, new_flags).

        Rounded keys for the whole batch are computed vectorized; the Python
        loop only performs dictionary operations.
        """
        Q = np.asarray(Q, dtype=float)
        n = len(Q)
        scaled = Q / self.tol
        base = np.round(scaled)
        offs = scaled - base
        ikeys = base.astype(np.int64)
        on_edge = np.any(np.abs(np.abs(offs) - 0.5) < 1e-4, axis=1)
        indices = np.empty(n, dtype=np.int64)
        new = np.zeros(n, dtype=bool)
        for i in range(n):
            q = Q[i]
            key = tuple(ikeys[i])
            keys = self._neighbor_keys(key, offs[i]) if on_edge[i] else [key]
            idx = self._lookup(q, keys)
            if idx < 0:
                idx = len(self._rows)
                self._rows.append(q)
                self._buckets.setdefault(key, []).append(idx)
                new[i] = True
            indices[i] = idx
        return indices, new
