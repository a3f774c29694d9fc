"""CPTP channels on the impurity qudit and their folded superoperators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import (
    BadDims,
    NotADensityMatrix,
    NonTracePreserving,
    POutOfRange,
)

TRACE_PRESERVING_TOL = 1e-8


def validate_density_matrix(rho, q: int | None = None, tol: float = 1e-10):
    """Return rho as a complex array after Hermiticity/PSD/trace checks."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise BadDims(f"density matrix must be square, got shape {rho.shape}")
    if q is not None and rho.shape[0] != q:
        raise BadDims(f"density matrix is {rho.shape[0]}-dim, expected {q}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise NotADensityMatrix("not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise NotADensityMatrix(f"trace {np.trace(rho)} != 1")
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -tol:
        raise NotADensityMatrix(f"negative eigenvalue {evals.min()}")
    return rho


@dataclass(frozen=True)
class QuantumChannel:
    """A CPTP map given by its Kraus operators."""

    kraus: Tuple[np.ndarray, ...]
    label: str = ""

    def __post_init__(self):
        kraus = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not kraus:
            raise BadDims("channel needs at least one Kraus operator")
        d = kraus[0].shape[0]
        for k in kraus:
            if k.shape != (d, d):
                raise BadDims(f"Kraus shapes disagree: {k.shape} vs ({d},{d})")
        object.__setattr__(self, "kraus", kraus)
        res = self.trace_residual()
        if res > TRACE_PRESERVING_TOL:
            raise NonTracePreserving(res)

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[0]

    def trace_residual(self) -> float:
        d = self.dim
        s = sum(k.conj().T @ k for k in self.kraus)
        return float(np.max(np.abs(s - np.eye(d))))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.kraus)

    def superoperator(self) -> np.ndarray:
        """Folded matrix S[(a,a'),(b,b')] = <a|K[|b><b'|]|a'>."""
        d = self.dim
        s = np.zeros((d * d, d * d), dtype=complex)
        for k in self.kraus:
            s += np.kron(k, k.conj())
        return s

    def is_unital_identity(self) -> bool:
        """True iff the channel is exactly the identity map."""
        d = self.dim
        return (
            len(self.kraus) == 1
            and np.allclose(self.kraus[0], np.eye(d), atol=1e-14)
        )


def identity_channel(q: int) -> QuantumChannel:
    return QuantumChannel((np.eye(q, dtype=complex),), label="identity")


def causal_break_channel(rho_re, q: int | None = None) -> QuantumChannel:
    """Erase the impurity and prepare rho_re, independent of the input."""
    rho_re = validate_density_matrix(rho_re, q)
    d = rho_re.shape[0]
    evals, evecs = np.linalg.eigh(rho_re)
    kraus = []
    for lam, vec in zip(evals, evecs.T):
        if lam < 1e-15:
            continue
        for b in range(d):
            k = np.sqrt(lam) * np.outer(vec, np.eye(d)[b].conj())
            kraus.append(k)
    return QuantumChannel(tuple(kraus), label="break")


def mixed_channel(p: float, rho_re) -> QuantumChannel:
    """Identity with probability 1-p, erase-and-prepare rho_re with p."""
    if not (0.0 <= p <= 1.0):
        raise POutOfRange(f"mixing rate {p} outside [0, 1]")
    rho_re = validate_density_matrix(rho_re)
    d = rho_re.shape[0]
    if p == 0.0:
        return identity_channel(d)
    if p == 1.0:
        return causal_break_channel(rho_re)
    kraus = [np.sqrt(1.0 - p) * np.eye(d, dtype=complex)]
    kraus.extend(np.sqrt(p) * k for k in causal_break_channel(rho_re).kraus)
    return QuantumChannel(tuple(kraus), label=f"mix:p={p}")


def is_erase_prepare(channel: QuantumChannel, tol: float = 1e-12):
    """If the channel maps every input to a fixed state, return that state.

    Checked by applying the superoperator to a basis of inputs; returns the
    prepared density matrix, or None when the channel keeps input dependence.
    """
    d = channel.dim
    sup = channel.superoperator()
    out0 = None
    for b in range(d):
        for c in range(d):
            rho = np.zeros((d, d), dtype=complex)
            rho[b, c] = 1.0
            out = (sup @ rho.reshape(-1)).reshape(d, d)
            if b != c:
                if np.max(np.abs(out)) > tol:
                    return None
            elif out0 is None:
                out0 = out
            elif np.max(np.abs(out - out0)) > tol:
                return None
    return out0
