"""Explicit circuit constructions behind the sampling step and the filter.

The sampling step (I - eta P) is realized on hardware as one ancilla
qubit, one controlled SU(2) rotation, and a post-selection on the ancilla
staying in |0>.  The filter step is realized by a controlled-swap between
the system and an ancilla register prepared in the filter target, with a
post-selected control qubit.  This module builds both as dense matrices
and checks them against the closed-form channel expressions; nothing here
is on the production evolution path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ProductProjector, projector_vector
from .excited import DenseProjector

CIRCUIT_MAX_QUBITS = 6
PROTOCOL_MAX_QUBITS = 5


def rotation_angle(eta: float) -> float:
    """Ancilla rotation angle theta = -2 arctan(sqrt(2 eta - eta^2)/(1 - eta))."""
    return -2 * np.arctan(np.sqrt(2 * eta - eta * eta) / (1 - eta))


def _dense_projector_matrix(p, n: int) -> np.ndarray:
    if isinstance(p, ProductProjector):
        if p.n != n:
            raise ValueError(f"projector acts on {p.n} qubits, expected {n}")
        v = projector_vector(p)
        return np.outer(v, v.conj())
    if isinstance(p, DenseProjector):
        if p.dim != 2**n:
            raise ValueError(f"projector dimension {p.dim} does not match n={n}")
        return p.matrix
    raise TypeError(f"unsupported projector type {type(p).__name__}")


@dataclass
class ControlledUnitary:
    """U = (I-P) x I + P x R_y(theta) on system x ancilla, with <0|U|0> = I - eta P."""

    matrix: np.ndarray
    projector: np.ndarray
    eta: float
    theta: float = field(init=False)

    def __post_init__(self):
        self.theta = rotation_angle(self.eta)
        gram = self.matrix.conj().T @ self.matrix
        defect = np.max(np.abs(gram - np.eye(len(gram))))
        if defect > 1e-10:
            raise ValueError(f"matrix not unitary: defect {defect:.3e}")

    @property
    def n(self):
        return self.projector.shape[0].bit_length() - 1


def build_controlled_ry(p, eta: float, n: int) -> ControlledUnitary:
    """Dense system-ancilla unitary realizing (I - eta P) on ancilla outcome |0>."""
    if n > CIRCUIT_MAX_QUBITS:
        raise ValueError(f"dense circuit build capped at n={CIRCUIT_MAX_QUBITS}, got {n}")
    if not 0 <= eta < 1:
        raise ValueError(f"eta must be in [0, 1), got {eta}")
    pm = _dense_projector_matrix(p, n)
    s = np.sqrt(2 * eta - eta * eta)
    ry = np.array([[1 - eta, s], [-s, 1 - eta]])
    dim = 2**n
    u = np.kron(np.eye(dim) - pm, np.eye(2)) + np.kron(pm, ry)
    return ControlledUnitary(matrix=u, projector=pm, eta=eta)


def postselect_block(u: ControlledUnitary) -> np.ndarray:
    """Ancilla <0|U|0> block; equals I - eta P."""
    return u.matrix[0::2, 0::2]


def discard_block(u: ControlledUnitary) -> np.ndarray:
    """Ancilla <1|U|0> block; equals -sqrt(2 eta - eta^2) P (the discarded branch)."""
    return u.matrix[1::2, 0::2]


def _check_density(name: str, m: np.ndarray):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if np.max(np.abs(m - m.conj().T)) > 1e-10:
        raise ValueError(f"{name} not Hermitian")
    if abs(np.trace(m).real - 1) > 1e-10:
        raise ValueError(f"{name} trace not 1")
    low = np.linalg.eigvalsh(m)[0]
    if low < -1e-8:
        raise ValueError(f"{name} not PSD: eigenvalue {low:.3e}")


@dataclass
class TripartiteSetup:
    """System, ancilla-target, and control states for the filter protocol.

    The control qubit starts in (|0> - eta|1>)/sqrt(1 + eta^2); the matching
    density matrix is built here so outcome probabilities are genuine.
    """

    system: np.ndarray
    ancilla: np.ndarray
    eta: float
    control: np.ndarray = field(init=False)

    def __post_init__(self):
        self.system = np.asarray(self.system)
        self.ancilla = np.asarray(self.ancilla)
        _check_density("system state", self.system)
        _check_density("ancilla state", self.ancilla)
        if self.system.shape != self.ancilla.shape:
            raise ValueError(
                f"system and ancilla dimensions differ: "
                f"{self.system.shape} vs {self.ancilla.shape}"
            )
        if not 0 <= self.eta < 1:
            raise ValueError(f"eta must be in [0, 1), got {self.eta}")
        n = self.system.shape[0].bit_length() - 1
        if 2**n != self.system.shape[0]:
            raise ValueError(f"dimension {self.system.shape[0]} is not a power of 2")
        if n > PROTOCOL_MAX_QUBITS:
            raise ValueError(
                f"protocol simulation capped at n={PROTOCOL_MAX_QUBITS}, got {n}"
            )
        c = np.array([1.0, -self.eta])
        self.control = np.outer(c, c) / (1 + self.eta**2)

    @property
    def n(self):
        return self.system.shape[0].bit_length() - 1


def _swap_matrix(dim: int) -> np.ndarray:
    return (
        np.eye(dim * dim)
        .reshape(dim, dim, dim, dim)
        .swapaxes(0, 1)
        .reshape(dim * dim, dim * dim)
    )


def simulate_sbs_protocol(setup: TripartiteSetup):
    """Run the controlled-swap filter protocol densely.

    Builds system x ancilla x control, applies the control-conditioned swap
    of system and ancilla, measures the control in the |+> basis, keeps the
    |+> outcome, and traces out the ancilla.  Returns (normalized system
    state, outcome probability).  The result equals
    (rho - eta{rho, P} + eta^2 P)/Tr[.] exactly.
    """
    dim = setup.system.shape[0]
    swap = _swap_matrix(dim)
    eye2 = np.eye(dim * dim)
    # control-conditioned swap, control as least-significant qubit
    u = np.kron(eye2, np.diag([1.0, 0.0])) + np.kron(swap, np.diag([0.0, 1.0]))
    total = np.kron(np.kron(setup.system, setup.ancilla), setup.control)
    total = u @ total @ u.conj().T
    plus = np.full((2, 2), 0.5)
    # <+|rho'|+> on the control: contract the control indices with |+><+|
    t = total.reshape(dim * dim, 2, dim * dim, 2)
    conditioned = np.einsum("ikjl,kl->ij", t, plus)
    # trace out the ancilla register
    c4 = conditioned.reshape(dim, dim, dim, dim)
    system = np.trace(c4, axis1=1, axis2=3)
    prob = float(np.trace(system).real)
    if prob <= 0:
        raise RuntimeError(f"protocol outcome probability {prob:.3e} not positive")
    return system / prob, prob
