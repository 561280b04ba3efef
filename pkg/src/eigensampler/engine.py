"""Stochastic projector-sampling imaginary-time evolution.

One evolution step samples a rank-1 product projector P from the model
distribution and applies (I - eta P), renormalizing.  Averaged over the
distribution this realizes e^{-eta rho} per step up to O(eta^2), so a long
run drains every eigencomponent of rho except the lowest.  On hardware each
step succeeds only with probability Tr[(I-eta P) rho (I-eta P)]; the two
policies here either force the success branch while accounting for its
probability (Forced) or draw the branch outcome and restart on failure
(MonteCarlo).

States can be propagated as pure vectors or as density matrices.  A forced
run from a pure initial state follows the identical stochastic trajectory in
either representation; the density-matrix form exists for mixed initial
states and for filter channels that do not preserve purity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import SamplingDistribution, ProductProjector, projector_vector

ANNIHILATION_EPS = 1e-14
RENORM_INTERVAL = 100
DEFAULT_RECORD_EVERY = 10


class TrajectoryRejected(RuntimeError):
    """A MonteCarlo run failed a branch draw with no restarts left."""


@dataclass
class QuantumState:
    """Pure vector or density matrix plus post-selection bookkeeping.

    log2_success accumulates log2 of every branch probability (and filter
    weight) applied so far; 2**log2_success is the probability that a
    hardware run would have survived all post-selections up to this point.
    """

    vector: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    log2_success: float = 0.0
    steps_taken: int = 0

    def __post_init__(self):
        if (self.vector is None) == (self.matrix is None):
            raise ValueError("exactly one of vector/matrix must be set")
        if self.vector is not None:
            nrm = np.linalg.norm(self.vector)
            if abs(nrm - 1) > 1e-10:
                raise ValueError(f"pure state norm {nrm!r} not 1")
        else:
            tr = np.trace(self.matrix)
            if abs(tr - 1) > 1e-10:
                raise ValueError(f"density matrix trace {tr!r} not 1")
            if np.max(np.abs(self.matrix - self.matrix.conj().T)) > 1e-10:
                raise ValueError("density matrix not Hermitian")
            low = np.linalg.eigvalsh(self.matrix)[0]
            if low < -1e-8:
                raise ValueError(f"density matrix not PSD: eigenvalue {low:.3e}")

    @property
    def is_pure(self):
        return self.vector is not None

    @property
    def dim(self):
        return len(self.vector) if self.is_pure else self.matrix.shape[0]

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.vector, self.vector.conj())
        return self.matrix

    def copy(self) -> "QuantumState":
        return QuantumState(
            vector=None if self.vector is None else self.vector.copy(),
            matrix=None if self.matrix is None else self.matrix.copy(),
            log2_success=self.log2_success,
            steps_taken=self.steps_taken,
        )


def pure_state(vector) -> QuantumState:
    v = np.asarray(vector)
    return QuantumState(vector=v / np.linalg.norm(v))

def mixed_state(matrix) -> QuantumState:
    m = np.asarray(matrix)
    return QuantumState(matrix=m / np.trace(m).real)

def plus_state(n) -> QuantumState:
    return QuantumState(vector=np.full(2**n, 2 ** (-n / 2)))


@dataclass(frozen=True)
class Forced:
    """Always apply the success branch, multiplying out its probability."""

@dataclass(frozen=True)
class MonteCarlo:
    """Draw each branch outcome; discard the state and restart on failure."""

    max_restarts: int = 0


@dataclass(frozen=True)
class RunConfig:
    eta: float
    steps: int
    policy: object = Forced()
    representation: str = "pure"
    seed: object = 0
    record_every: int = DEFAULT_RECORD_EVERY

    def __post_init__(self):
        if not 0 <= self.eta < 1:
            raise ValueError(f"eta must be in [0, 1), got {self.eta}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.representation not in ("pure", "mixed"):
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def total_time(self):
        return self.eta * self.steps

    @property
    def gamma(self):
        return self.steps * self.eta**2


@dataclass
class TrajectoryRecord:
    """Per-stride snapshots of one trajectory.

    projector id is the distribution entry index, or -1 for filter steps.
    The final step is always recorded.  status is "completed" or
    "discarded at step k" (the last failed attempt of a MonteCarlo run).
    """

    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    projector_ids: list = field(default_factory=list)
    success_probs: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    status: str = "completed"
    restarts: int = 0


def sample_projector(dist: SamplingDistribution, rng) -> ProductProjector:
    """Draw one projector from the distribution via its alias table."""
    return dist.projectors[sample_index(dist, rng)]


def sample_index(dist: SamplingDistribution, rng) -> int:
    """Alias-table draw consuming exactly one uniform variate."""
    if len(dist) == 0:
        raise ValueError("empty distribution")
    scaled = rng.random() * len(dist)
    k = int(scaled)
    if scaled - k < dist._alias_prob[k]:
        return k
    return int(dist._alias_index[k])


def apply_projector_step(state: QuantumState, p: ProductProjector, eta):
    """One normalized step of (I - eta P) applied in the success branch.

    Returns (new state, success probability).  Raises on annihilation.
    """
    if not 0 <= eta < 1:
        raise ValueError(f"eta must be in [0, 1), got {eta}")
    damp = 2 * eta - eta * eta
    if state.is_pure:
        psi = state.vector.copy()
        if p.basis == "Z":
            a = psi[p.bits]
            psi[p.bits] -= eta * a
        else:
            v = projector_vector(p)
            a = v @ psi
            psi -= (eta * a) * v
        success = 1 - damp * abs(a) ** 2
        if success <= ANNIHILATION_EPS:
            raise RuntimeError(f"state annihilated: success probability {success:.3e}")
        psi /= np.sqrt(success)
        return (
            QuantumState(
                vector=psi,
                log2_success=state.log2_success + np.log2(success),
                steps_taken=state.steps_taken + 1,
            ),
            float(success),
        )
    rho = state.matrix.copy()
    if p.basis == "Z":
        z = p.bits
        overlap = rho[z, z].real
        rho[z, :] *= 1 - eta
        rho[:, z] *= 1 - eta
    else:
        v = projector_vector(p)
        w = rho @ v
        overlap = np.real(v.conj() @ w)
        rho -= eta * (np.outer(w, v.conj()) + np.outer(v, w.conj()))
        rho += (eta * eta * overlap) * np.outer(v, v.conj())
    success = 1 - damp * overlap
    if success <= ANNIHILATION_EPS:
        raise RuntimeError(f"state annihilated: success probability {success:.3e}")
    rho /= success
    return (
        QuantumState(
            matrix=rho,
            log2_success=state.log2_success + np.log2(success),
            steps_taken=state.steps_taken + 1,
        ),
        float(success),
    )


def energy_expectation(state: QuantumState, h) -> float:
    h = np.asarray(h)
    if state.is_pure:
        val = np.vdot(state.vector, h @ state.vector)
    else:
        val = np.trace(h @ state.matrix)
    if abs(val.imag) > 1e-9:
        raise ValueError(f"energy has imaginary residue {val.imag:.3e}")
    return float(val.real)


def estimate_success_rate(dist: SamplingDistribution, init: QuantumState, T, eta) -> float:
    """Leading-order success-rate prediction Tr(e^{-T rho} rho_0 e^{-T rho}).

    The eta argument fixes the step discretization the prediction is for;
    the deviation of an actual run from this value is O(N eta^2).
    """
    if dist.n > 10:
        raise ValueError(f"success-rate estimate capped at n=10, got n={dist.n}")
    if T < 0:
        raise ValueError("negative evolution time")
    rho = dist.density_matrix()
    vals, vecs = np.linalg.eigh(rho)
    filt = (vecs * np.exp(-T * vals)) @ vecs.conj().T
    rho0 = init.density()
    return float(np.trace(filt @ rho0 @ filt).real)


class _PureTrajectory:
    """Unnormalized pure-state propagation with running norm tracking.

    The step direction never depends on normalization, so the vector is
    only rescaled every RENORM_INTERVAL steps; per-step success
    probabilities come from the tracked squared norm.
    """

    def __init__(self, vector, eta):
        self.psi = np.array(vector, copy=True)
        self.nrm2 = float(np.real(np.vdot(self.psi, self.psi)))
        self.eta = eta
        self.damp = 2 * eta - eta * eta

    def sample_step(self, p: ProductProjector):
        if p.basis == "Z":
            a = self.psi[p.bits]
            self.psi[p.bits] -= self.eta * a
        else:
            v = projector_vector(p)
            a = v @ self.psi
            self.psi -= (self.eta * a) * v
        success = 1 - self.damp * abs(a) ** 2 / self.nrm2
        self.nrm2 *= success
        return success

    def filter_step(self, basis, factors):
        """Apply I + U diag(factors - 1) U^dagger; returns the weight (norm ratio)."""
        y = basis.conj().T @ self.psi
        delta = (factors - 1.0) * y
        self.psi += basis @ delta
        new_nrm2 = self.nrm2 + float(2 * np.real(np.vdot(y, delta)) + np.vdot(delta, delta).real)
        weight = new_nrm2 / self.nrm2
        self.nrm2 = new_nrm2
        return weight

    def renormalize(self):
        self.nrm2 = float(np.real(np.vdot(self.psi, self.psi)))
        self.psi /= np.sqrt(self.nrm2)
        self.nrm2 = 1.0

    def energy(self, h):
        return float(np.real(np.vdot(self.psi, h @ self.psi)) / self.nrm2)

    def finish(self):
        self.renormalize()
        return self.psi


class _MixedTrajectory:
    """Density-matrix propagation with running trace tracking.

    Every update (rank-1 sampling step, rank-r filter) is a symmetric
    low-rank correction, so corrections are deferred in a pair of
    accumulator panels: the working state is rho + L @ R with L, R
    holding up to _LR_CAPACITY columns/rows.  Reads (overlaps, filter
    cores) add the panel contribution explicitly; the dim^2 matrix is
    touched only when the panels fill or a dense view is needed.
    """

    _LR_CAPACITY = 32

    def __init__(self, matrix, eta):
        self.rho = np.array(matrix, copy=True)
        self.tr = float(np.trace(self.rho).real)
        self.eta = eta
        self.damp = 2 * eta - eta * eta
        dim = self.rho.shape[0]
        self._scratch = np.empty_like(self.rho)
        self._lr_left = np.empty((dim, self._LR_CAPACITY), dtype=self.rho.dtype)
        self._lr_right = np.empty((self._LR_CAPACITY, dim), dtype=self.rho.dtype)
        self._lr_k = 0

    def _flush(self):
        k = self._lr_k
        if k:
            np.matmul(self._lr_left[:, :k], self._lr_right[:k, :], out=self._scratch)
            self.rho += self._scratch
            self._lr_k = 0

    def _defer(self, left, right):
        width = left.shape[1]
        if self._lr_k + width > self._LR_CAPACITY:
            self._flush()
        j = self._lr_k
        self._lr_left[:, j:j + width] = left
        self._lr_right[j:j + width, :] = right
        self._lr_k = j + width

    def _apply_to(self, v):
        """(rho + L R) @ v without materializing the panels."""
        w = self.rho @ v
        k = self._lr_k
        if k:
            w += self._lr_left[:, :k] @ (self._lr_right[:k, :] @ v)
        return w

    def _match_dtype(self, operand):
        """Promote the state to complex when a complex operand arrives."""
        if np.iscomplexobj(operand) and not np.iscomplexobj(self.rho):
            self._flush()
            self.rho = self.rho.astype(complex)
            self._scratch = np.empty_like(self.rho)
            self._lr_left = self._lr_left.astype(complex)
            self._lr_right = self._lr_right.astype(complex)

    def sample_step(self, p: ProductProjector):
        eta = self.eta
        if p.basis == "Z":
            z = p.bits
            k = self._lr_k
            overlap = self.rho[z, z].real
            if k:
                overlap += float(np.real(self._lr_left[z, :k] @ self._lr_right[:k, z]))
                self._lr_left[z, :k] *= 1 - eta
                self._lr_right[:k, z] *= 1 - eta
            self.rho[z, :] *= 1 - eta
            self.rho[:, z] *= 1 - eta
        else:
            v = projector_vector(p)
            w = self._apply_to(v)
            overlap = float(np.real(v.conj() @ w))
            # -eta(w v* + v w*) + eta^2 o v v* == -(w' v* + v w'*) with
            # w' = eta w - (eta^2 o / 2) v
            wp = eta * w
            wp -= (0.5 * eta * eta * overlap) * v
            self._defer(np.stack([wp, v], axis=1),
                        np.stack([-v.conj(), -wp.conj()], axis=0))
        success = 1 - self.damp * overlap / self.tr
        self.tr *= success
        return success

    def filter_step(self, basis, factors):
        """Conjugate by F = I + U diag(factors - 1) U^dagger; returns the weight.

        F rho F = rho + M rho + rho M + M rho M with M = U diag(g) U^dagger,
        g = factors - 1.  Writing B = rho U and G = U^dagger B, the whole
        correction is [U, B] @ [[gGg U* + g B*], [g U*]], a rank-2r panel.
        """
        self._match_dtype(basis)
        g = factors - 1.0
        b = self._apply_to(basis)  # dim x r
        core = basis.conj().T @ b  # r x r  (= U^dagger rho U)
        left = np.concatenate([basis, b], axis=1)  # dim x 2r
        top = (g[:, None] * core * g[None, :]) @ basis.conj().T + g[:, None] * b.conj().T
        bottom = g[:, None] * basis.conj().T
        self._defer(left, np.concatenate([top, bottom], axis=0))
        core_diag = np.diag(core).real
        new_tr = self.tr + float(2 * np.sum(g * core_diag) + np.sum(g * core_diag * g))
        weight = new_tr / self.tr
        self.tr = new_tr
        return weight

    def sbs_filter(self, basis, weights):
        """State-based filter rho <- rho - eta{rho,P} + eta^2 tr(rho) P.

        P = basis diag(weights) basis^dagger.  Returns the branch success
        probability (1 - eta Tr{rho,P}/tr + eta^2)/2.
        """
        self._match_dtype(basis)
        eta = self.eta
        b = self._apply_to(basis)  # dim x r
        diag = np.real(np.einsum("ki,ki->i", basis.conj(), b))
        tr_anti = 2 * float(weights @ diag)
        bw = b * weights[None, :]
        left = np.concatenate([bw, basis], axis=1)  # dim x 2r
        top = -eta * basis.conj().T
        bottom = (eta * eta * self.tr) * (weights[:, None] * basis.conj().T) - eta * bw.conj().T
        self._defer(left, np.concatenate([top, bottom], axis=0))
        new_tr = self.tr - eta * tr_anti + eta * eta * self.tr
        success = 0.5 * new_tr / self.tr
        self.tr = new_tr
        return success

    def renormalize(self):
        self._flush()
        self.rho = (self.rho + self.rho.conj().T) / 2
        self.tr = float(np.trace(self.rho).real)
        self.rho /= self.tr
        self.tr = 1.0

    def energy(self, h):
        self._flush()
        # Tr(h rho) for Hermitian h, elementwise instead of a matrix product
        return float(np.vdot(self.rho, h).real / self.tr)

    def finish(self):
        self.renormalize()
        return self.rho


def _make_trajectory(config: RunConfig, init: QuantumState):
    if config.representation == "pure":
        if not init.is_pure:
            raise ValueError("pure representation requires a pure initial state")
        return _PureTrajectory(init.vector, config.eta)
    return _MixedTrajectory(init.density(), config.eta)


def run_ite(config: RunConfig, dist: SamplingDistribution, init: QuantumState, h):
    """Run one trajectory of the sampling evolution.

    Returns (final QuantumState, TrajectoryRecord).  The Forced policy
    applies every success branch and accumulates log2 of its probability;
    MonteCarlo draws each branch and restarts from the initial state on
    failure (reusing the same random stream) up to max_restarts times.
    """
    return _run_trajectory(config, dist, init, h, schedule=None)


def _run_trajectory(config, dist, init, h, schedule=None):
    """Shared driver: sampling steps, optionally interleaved with filter steps.

    `schedule`, when given, is an object with attributes
      period: int (0 = stochastic mode), p_g: float (stochastic filter prob),
      apply(traj, rng) -> (success_or_weight, is_probability)
    provided by the excited-state module.
    """
    h = np.asarray(h)
    rng = np.random.default_rng(config.seed)
    monte_carlo = isinstance(config.policy, MonteCarlo)
    restarts_left = config.policy.max_restarts if monte_carlo else 0
    record = TrajectoryRecord()
    eta = config.eta

    while True:
        traj = _make_trajectory(config, init)
        log2_success = init.log2_success
        discarded_at = None
        for step in range(1, config.steps + 1):
            is_filter = False
            if schedule is not None:
                if schedule.period:
                    is_filter = step % schedule.period == 0
                else:
                    is_filter = rng.random() < schedule.p_g
            if is_filter:
                success, is_probability = schedule.apply(traj, rng)
                proj_id = -1
            else:
                idx = sample_index(dist, rng)
                success = traj.sample_step(dist.projectors[idx])
                is_probability = True
                proj_id = idx
            if success <= ANNIHILATION_EPS:
                if monte_carlo:
                    discarded_at = step
                    break
                raise RuntimeError(f"state annihilated at step {step}")
            log2_success += np.log2(success)
            if monte_carlo and is_probability and rng.random() >= success:
                discarded_at = step
                break
            if step % RENORM_INTERVAL == 0:
                traj.renormalize()
            if step % config.record_every == 0 or step == config.steps:
                record.steps.append(step)
                record.times.append(step * eta)
                record.projector_ids.append(proj_id)
                record.success_probs.append(float(success))
                record.energies.append(traj.energy(h))
        if discarded_at is None:
            record.status = "completed"
            final = traj.finish()
            state = QuantumState(
                vector=final if config.representation == "pure" else None,
                matrix=final if config.representation == "mixed" else None,
                log2_success=float(log2_success),
                steps_taken=init.steps_taken + config.steps,
            )
            return state, record
        record.status = f"discarded at step {discarded_at}"
        record.steps.clear(); record.times.clear(); record.projector_ids.clear()
        record.success_probs.clear(); record.energies.clear()
        if restarts_left == 0:
            raise TrajectoryRejected(
                f"MonteCarlo run failed at step {discarded_at} with no restarts left"
            )
        restarts_left -= 1
        record.restarts += 1
