"""Excited-state solver: distribution lifting and filter-step interleaving.

Once a set of lower eigenstates is known, the sampling distribution is
lifted by one extra entry — a dense projector onto (a uniform blend of) the
found states.  This shifts every found eigenvalue of the effective
generator upward so the next level becomes its new minimum, and the same
sampling evolution converges there.

The extra entry can be scheduled stochastically (an actual lifted
distribution, drawn with probability p_lift/(1+p_lift)) or
deterministically (a filter step replacing every period-th sampling step).
The filter itself is applied either through the two-copy state-based
protocol (one step of rho - eta{rho,P} + eta^2 P, a genuine post-selected
branch with probability near 1/2), or as the dense map e^{-eta P}, which
the protocol realizes on average and which is cheap to apply numerically.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .model import HamiltonianTerm, SamplingDistribution, build_distribution, hamiltonian_matrix
from .engine import (
    ANNIHILATION_EPS,
    Forced,
    QuantumState,
    RunConfig,
    TrajectoryRecord,
    _run_trajectory,
    energy_expectation,
    plus_state,
    run_ite,
)

PROJECTOR_RANK_TOL = 1e-12


@dataclass
class DenseProjector:
    """Target of a filter step: a projector or convex blend of projectors.

    Must be Hermitian, PSD, and unit trace.  A thin eigenbasis (eigenvalues
    above PROJECTOR_RANK_TOL) is precomputed so filters apply in
    O(rank * dim) for vectors instead of O(dim^2).
    """

    matrix: np.ndarray
    rank_hint: Optional[int] = None
    _basis: np.ndarray = field(init=False, repr=False)
    _weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"projector matrix must be square, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > 1e-10:
            raise ValueError("projector matrix not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1) > 1e-10:
            raise ValueError(f"projector trace {tr!r} not 1")
        vals, vecs = np.linalg.eigh(m)
        if vals[0] < -1e-8:
            raise ValueError(f"projector not PSD: eigenvalue {vals[0]:.3e}")
        keep = vals > PROJECTOR_RANK_TOL
        self.matrix = m
        self._weights = vals[keep]
        self._basis = np.ascontiguousarray(vecs[:, keep])

    @classmethod
    def from_state(cls, state: QuantumState) -> "DenseProjector":
        if state.is_pure:
            v = state.vector
            proj = cls.__new__(cls)
            proj.matrix = np.outer(v, v.conj())
            proj.rank_hint = 1
            proj._weights = np.array([1.0])
            proj._basis = np.ascontiguousarray(v.reshape(-1, 1))
            return proj
        return cls(state.matrix, rank_hint=None)

    @property
    def rank(self):
        return len(self._weights)

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Stochastic:
    """Lift the distribution; each step filters with probability p_lift/(1+p_lift)."""

    p_lift: float

    def __post_init__(self):
        if self.p_lift <= 0:
            raise ValueError(f"p_lift must be positive, got {self.p_lift}")

    def filter_fraction(self):
        return self.p_lift / (1 + self.p_lift)


@dataclass(frozen=True)
class Deterministic:
    """Replace every period-th sampling step with a filter step."""

    period: int

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")

    def filter_fraction(self):
        return 1 / self.period


class FilterMethod(Enum):
    STATE_BASED = "state-based"
    EXACT_EXPONENTIAL = "exact-exponential"


def validate_schedule(schedule, n: int):
    """Warn when the filter fraction falls below the lifting threshold 1/2^n."""
    threshold = 1 / (2**n - 1)
    if isinstance(schedule, Stochastic) and schedule.p_lift < threshold:
        warnings.warn(
            f"p_lift {schedule.p_lift:.4g} below lifting threshold "
            f"1/(2^{n}-1) = {threshold:.4g}; convergence to the next level "
            "is not guaranteed",
            stacklevel=3,
        )
    if isinstance(schedule, Deterministic) and schedule.filter_fraction() < threshold / (1 + threshold):
        warnings.warn(
            f"filter fraction 1/{schedule.period} below lifting threshold "
            f"2^-{n}; convergence to the next level is not guaranteed",
            stacklevel=3,
        )


@dataclass
class LiftedDistribution:
    """Sampling distribution extended by one dense-projector entry.

    Entry i < len(base) keeps the base projector with probability
    p_i/(1+p_lift); the last entry is the found-state projector with
    probability p_lift/(1+p_lift).
    """

    base: SamplingDistribution
    found: DenseProjector
    p_lift: float

    @property
    def n(self):
        return self.base.n

    @property
    def probabilities(self):
        return np.concatenate(
            [self.base.probabilities / (1 + self.p_lift), [self.filter_probability]]
        )

    @property
    def filter_probability(self):
        return self.p_lift / (1 + self.p_lift)

    def density_matrix(self) -> np.ndarray:
        return (self.base.density_matrix() + self.p_lift * self.found.matrix) / (1 + self.p_lift)


def lift_distribution(
    dist: SamplingDistribution, found: DenseProjector, p_lift: float
) -> LiftedDistribution:
    """Extend the distribution with a found-state projector entry."""
    if p_lift <= 0:
        raise ValueError(f"p_lift must be positive, got {p_lift}")
    if found.dim != 2**dist.n:
        raise ValueError(
            f"projector dimension {found.dim} does not match n={dist.n} qubits"
        )
    validate_schedule(Stochastic(p_lift), dist.n)
    lifted = LiftedDistribution(base=dist, found=found, p_lift=p_lift)
    total = lifted.probabilities.sum()
    if abs(total - 1) > 1e-12:
        raise ValueError(f"lifted probabilities sum to {total!r}")
    return lifted


def blend_projectors(found: Sequence[DenseProjector]) -> DenseProjector:
    """Uniform convex combination of found-state projectors."""
    if len(found) == 0:
        raise ValueError("cannot blend an empty projector list")
    if len(found) == 1:
        return found[0]
    return DenseProjector(
        sum(p.matrix for p in found) / len(found),
        rank_hint=sum(p.rank for p in found),
    )


def sbs_step(state: QuantumState, p: DenseProjector, eta: float):
    """One state-based filter step: rho <- (rho - eta{rho,P} + eta^2 P)/Tr.

    Returns (new state, success probability); the success probability is
    (1 - eta Tr{rho,P} + eta^2)/2, the chance of the control-register
    outcome that realizes the filter.  Density-matrix states only — the
    eta^2 injection does not preserve purity.
    """
    if state.is_pure:
        raise ValueError("state-based filter requires a density-matrix state")
    if not 0 <= eta < 1:
        raise ValueError(f"eta must be in [0, 1), got {eta}")
    rho = state.matrix
    anti = rho @ p.matrix
    anti = anti + anti.conj().T
    out = rho - eta * anti + (eta * eta) * p.matrix
    tr = np.trace(out).real
    success = 0.5 * tr
    if success <= ANNIHILATION_EPS:
        raise RuntimeError(f"state annihilated: success probability {success:.3e}")
    return (
        QuantumState(
            matrix=out / tr,
            log2_success=state.log2_success + np.log2(success),
            steps_taken=state.steps_taken + 1,
        ),
        float(success),
    )


def exact_filter_step(state: QuantumState, p: DenseProjector, eta: float):
    """Apply e^{-eta P} exactly and renormalize; returns (state, weight).

    The weight is the squared-norm (trace) ratio — the total suppression
    this filter application inflicts on the unnormalized state.
    """
    if eta < 0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    factors = np.exp(-eta * p._weights)
    if state.is_pure:
        psi = state.vector.copy()
        y = p._basis.conj().T @ psi
        psi += p._basis @ ((factors - 1) * y)
        weight = float(np.real(np.vdot(psi, psi)))
        if weight <= ANNIHILATION_EPS:
            raise RuntimeError(f"state annihilated: filter weight {weight:.3e}")
        return (
            QuantumState(
                vector=psi / np.sqrt(weight),
                log2_success=state.log2_success + np.log2(weight),
                steps_taken=state.steps_taken + 1,
            ),
            weight,
        )
    g = factors - 1
    u = p._basis
    rho = state.matrix.copy()
    b = rho @ u
    core = u.conj().T @ b
    rho += (b * g) @ u.conj().T
    rho += u @ (g[:, None] * b.conj().T)
    rho += u @ (g[:, None] * core * g[None, :]) @ u.conj().T
    weight = float(np.trace(rho).real)
    if weight <= ANNIHILATION_EPS:
        raise RuntimeError(f"state annihilated: filter weight {weight:.3e}")
    return (
        QuantumState(
            matrix=rho / weight,
            log2_success=state.log2_success + np.log2(weight),
            steps_taken=state.steps_taken + 1,
        ),
        weight,
    )


class _FilterSchedule:
    """Adapter handing filter actions to the trajectory driver."""

    def __init__(self, target: DenseProjector, schedule, method: FilterMethod, eta: float):
        self.period = schedule.period if isinstance(schedule, Deterministic) else 0
        self.p_g = schedule.filter_fraction() if isinstance(schedule, Stochastic) else 0.0
        self.target = target
        self.method = method
        self.factors = np.exp(-eta * target._weights)

    def apply(self, traj, rng):
        if self.method is FilterMethod.EXACT_EXPONENTIAL:
            weight = traj.filter_step(self.target._basis, self.factors)
            return weight, False
        success = traj.sbs_filter(self.target._basis, self.target._weights)
        return success, True


def solve_level(
    config: RunConfig,
    dist: SamplingDistribution,
    found: Sequence[DenseProjector],
    schedule,
    method: FilterMethod,
    init: QuantumState,
    h,
):
    """Run one level: sampling steps interleaved with found-state filters.

    With an empty `found` list this is exactly run_ite.  Otherwise the
    filter target is the uniform blend of the found projectors, applied per
    the schedule.  The state-based method needs the density-matrix
    representation; the exact exponential works with either.
    """
    if len(found) == 0:
        return run_ite(config, dist, init, h)
    if method is FilterMethod.STATE_BASED and config.representation != "mixed":
        raise ValueError("state-based filtering requires the mixed representation")
    validate_schedule(schedule, dist.n)
    target = blend_projectors(found)
    return _run_trajectory(
        config, dist, init, h,
        schedule=_FilterSchedule(target, schedule, method, config.eta),
    )


@dataclass(frozen=True)
class LevelSpec:
    """Per-level overrides; None fields inherit the spectrum-wide setting."""

    init: object = None
    eta: Optional[float] = None
    steps: Optional[int] = None
    period: Optional[int] = None


@dataclass(frozen=True)
class SpectrumConfig:
    levels: int
    eta: float
    steps: int
    schedule: object = Deterministic(period=2)
    method: FilterMethod = FilterMethod.EXACT_EXPONENTIAL
    policy: object = Forced()
    representation: str = "pure"
    seed: object = 0
    record_every: int = 10
    per_level: tuple = ()

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if len(self.per_level) > self.levels:
            raise ValueError(
                f"{len(self.per_level)} per-level entries for {self.levels} levels"
            )

    def level_spec(self, k: int) -> LevelSpec:
        if k < len(self.per_level):
            return self.per_level[k]
        return LevelSpec()


@dataclass
class LevelResult:
    level: int
    energy: float
    fidelity: float
    state: QuantumState
    record: TrajectoryRecord
    wall_time_s: float = 0.0


@dataclass
class SpectrumResult:
    levels: list
    oracle_energies: np.ndarray

    @property
    def energies(self):
        return np.array([r.energy for r in self.levels])

    @property
    def fidelities(self):
        return np.array([r.fidelity for r in self.levels])

    def gap(self, i: int = 1, j: int = 2) -> float:
        """Computed energy difference e_j - e_i."""
        return self.levels[j].energy - self.levels[i].energy


def _seed_tuple(seed):
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def _resolve_init(init, n: int) -> QuantumState:
    if init is None:
        return plus_state(n)
    if isinstance(init, QuantumState):
        return init
    if isinstance(init, str):
        from .config import parse_initial_state

        return parse_initial_state(init, n)
    arr = np.asarray(init)
    if arr.ndim == 1:
        return QuantumState(vector=arr / np.linalg.norm(arr))
    return QuantumState(matrix=arr / np.trace(arr).real)


def solve_spectrum(config: SpectrumConfig, terms: Sequence[HamiltonianTerm]) -> SpectrumResult:
    """Solve levels 0..levels-1 sequentially, feeding each computed state forward.

    Level k filters against the uniform blend of all previously computed
    states, runs with its own overrides (initial state, eta, steps, filter
    period), and derives its RNG stream from (seed..., k).  Energies come
    from the computed states; fidelities are measured against the oracle
    eigenspaces (degenerate levels count as one subspace).
    """
    from .analysis import exact_diagonalize, level_fidelity

    dist = build_distribution(terms)
    h = hamiltonian_matrix(terms)
    oracle = exact_diagonalize(h)
    base_seed = _seed_tuple(config.seed)

    found: list[DenseProjector] = []
    results: list[LevelResult] = []
    for level in range(config.levels):
        spec = config.level_spec(level)
        schedule = config.schedule
        if spec.period is not None:
            schedule = Deterministic(period=spec.period)
        run = RunConfig(
            eta=config.eta if spec.eta is None else spec.eta,
            steps=config.steps if spec.steps is None else spec.steps,
            policy=config.policy,
            representation=config.representation,
            seed=list(base_seed + (level,)),
            record_every=config.record_every,
        )
        init = _resolve_init(spec.init, dist.n)
        started = time.perf_counter()
        state, record = solve_level(run, dist, found, schedule, config.method, init, h)
        results.append(
            LevelResult(
                level=level,
                energy=energy_expectation(state, h),
                fidelity=level_fidelity(state, oracle, level),
                state=state,
                record=record,
                wall_time_s=time.perf_counter() - started,
            )
        )
        found.append(DenseProjector.from_state(state))
    return SpectrumResult(
        levels=results, oracle_energies=oracle.eigenvalues[: config.levels]
    )
