"""Controlled-SWAP gate family, named two-parameter models, and state data.

The basic two-qudit gate composes a SWAP with a block-diagonal control:

    U (|a> ⊗ |b>) = |b> ⊗ (u_b |a>),

i.e. the right qudit hops to the left while steering a unitary u_b applied
to the incoming left qudit.  Composite indices are row-major with the left
site slower-varying, so the matrix elements are

    <c, d| U |a, b> = delta_{c,b} * (u_b)_{d,a}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from ._su2 import PAULI
from .errors import DimensionMismatch, NonUnitary

UNITARITY_TOL = 1e-8


def _as_locked(a):
    out = np.array(a, dtype=complex)
    out.flags.writeable = False
    return out


def unitarity_residual(u):
    """Max-norm of u†u − I."""
    u = np.asarray(u, dtype=complex)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def _check_unitary(u, index):
    res = unitarity_residual(u)
    if res > UNITARITY_TOL:
        raise NonUnitary(index, res)


@dataclass(frozen=True)
class ControlledGateSet:
    """The q controlled unitaries u_a plus the derived two-qudit gate.

    Immutable after construction; all arrays are write-locked so gate sets
    can be shared freely across workers.
    """

    q: int
    controlled: Tuple[np.ndarray, ...]
    two_qudit: np.ndarray = field(repr=False)

    def to_json(self) -> str:
        """Serialize to a JSON document; round-trips binary64 bit-exactly.

        Each matrix is stored as a flat row-major list of [re, im] pairs.
        """
        payload = {
            "q": self.q,
            "controlled": [
                [[float(z.real), float(z.imag)] for z in u.ravel()]
                for u in self.controlled
            ],
        }
        return json.dumps(payload)

    @staticmethod
    def from_json(doc: str) -> "ControlledGateSet":
        data = json.loads(doc)
        q = int(data["q"])
        entries = data["controlled"]
        if len(entries) != q:
            raise DimensionMismatch(
                f"expected {q} controlled matrices, found {len(entries)}"
            )
        mats = []
        for flat in entries:
            if len(flat) != q * q:
                raise DimensionMismatch(
                    f"expected {q * q} row-major entries, found {len(flat)}"
                )
            m = np.array([complex(re, im) for re, im in flat]).reshape(q, q)
            mats.append(m)
        return make_gate_set(q, mats)


def _two_qudit_matrix(q, unitaries):
    """Assemble U[(c,d),(a,b)] = delta_{c,b} (u_b)_{d,a}."""
    U = np.zeros((q * q, q * q), dtype=complex)
    for b in range(q):
        ub = unitaries[b]
        for a in range(q):
            col = a * q + b
            # Output |c=b, d>, amplitude (u_b)_{d,a}.
            U[b * q : (b + 1) * q, col] = ub[:, a]
    return U


def make_gate_set(q: int, unitaries: Sequence[np.ndarray]) -> ControlledGateSet:
    """Validate the q controlled unitaries and build the two-qudit gate."""
    if q < 2:
        raise DimensionMismatch(f"local dimension must be >= 2, got {q}")
    if len(unitaries) != q:
        raise DimensionMismatch(
            f"need exactly {q} controlled unitaries, got {len(unitaries)}"
        )
    mats = []
    for a, u in enumerate(unitaries):
        u = np.asarray(u, dtype=complex)
        if u.shape != (q, q):
            raise DimensionMismatch(
                f"controlled unitary {a} has shape {u.shape}, expected {(q, q)}"
            )
        _check_unitary(u, a)
        mats.append(_as_locked(u))
    return ControlledGateSet(
        q=q, controlled=tuple(mats), two_qudit=_as_locked(_two_qudit_matrix(q, mats))
    )


def _exp_pauli(angle: float, axis: str) -> np.ndarray:
    """exp(-i*angle*sigma_axis) in closed form."""
    return np.cos(angle) * PAULI["i"] - 1j * np.sin(angle) * PAULI[axis]


def model_a(K: float) -> ControlledGateSet:
    """Commuting z-rotations: u_0 = exp(-iK*pi*sz), u_1 = exp(+iK*pi*sz)."""
    return make_gate_set(2, [_exp_pauli(K * np.pi, "z"), _exp_pauli(-K * np.pi, "z")])


def model_b(K: float) -> ControlledGateSet:
    """Rotation plus flip: u_0 = exp(-iK*pi*sz), u_1 = sx."""
    return make_gate_set(2, [_exp_pauli(K * np.pi, "z"), PAULI["x"]])


def model_c(theta: float) -> ControlledGateSet:
    """Two skew rotations: u_0 = exp(-i*theta*sz), u_1 = exp(-i*theta*sx)."""
    return make_gate_set(2, [_exp_pauli(theta, "z"), _exp_pauli(theta, "x")])


def conjugate_deform(gs: ControlledGateSet, v: np.ndarray) -> ControlledGateSet:
    """Replace each u_a by v u_a v†; preserves the projective group structure."""
    v = np.asarray(v, dtype=complex)
    if v.shape != (gs.q, gs.q):
        raise DimensionMismatch(
            f"deformation matrix has shape {v.shape}, expected {(gs.q, gs.q)}"
        )
    _check_unitary(v, "v")
    vd = v.conj().T
    return make_gate_set(gs.q, [v @ u @ vd for u in gs.controlled])


@dataclass(frozen=True)
class ProductInitialState:
    """Normalized single-site vectors for even and odd sites."""

    psi_e: np.ndarray
    psi_o: np.ndarray

    def __post_init__(self):
        for name in ("psi_e", "psi_o"):
            v = _as_locked(np.asarray(getattr(self, name), dtype=complex).ravel())
            if abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise DimensionMismatch(
                    f"{name} must have unit norm (got {np.linalg.norm(v):.12f})"
                )
            object.__setattr__(self, name, v)
        if self.psi_e.shape != self.psi_o.shape:
            raise DimensionMismatch("psi_e and psi_o must share a dimension")

    @property
    def q(self) -> int:
        return len(self.psi_e)


@dataclass(frozen=True)
class ImpurityObservable:
    """A labeled Hermitian single-site operator."""

    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = _as_locked(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch("observable must be a square matrix")
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise DimensionMismatch(
                f"observable {self.label!r} is not Hermitian"
            )
        object.__setattr__(self, "matrix", m)


def plus_state(q: int = 2) -> np.ndarray:
    """Uniform superposition |+> in dimension q."""
    return np.full(q, 1.0 / np.sqrt(q), dtype=complex)


def sigma(axis: str) -> np.ndarray:
    """Pauli matrix by letter (i, x, y, z)."""
    return PAULI[axis].copy()
