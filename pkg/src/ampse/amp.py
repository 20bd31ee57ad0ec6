"""The AMP iteration, its threshold policies, and the IST baseline.

One step maps (x, z) to

    x_new = eta(x + A* z; theta)
    z_new = y - A x_new + (z / delta) * mean(eta'(x + A* z; theta))

The trailing correction term is what distinguishes AMP from plain
iterative soft thresholding; ``onsager=False`` drops it and yields the
classical IST baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import DivergenceError
from .signal_model import ProblemInstance

SIGMA_BLOWUP_FACTOR = 1e3


# ---------------------------------------------------------------------------
# Threshold policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedRatioPolicy:
    """theta_t = tau * sigma_hat_t for a fixed ratio tau."""

    tau: float

    def __post_init__(self):
        if not (self.tau > 0):
            raise ValueError("tau must be positive")

    def resolve(self, sigma0: float) -> "FixedRatioPolicy":
        return self

    def initial_theta(self, sigma0: float) -> float:
        return self.tau * sigma0

    def next_theta(self, theta, sigma_hat, mean_deriv, delta, t) -> float:
        return self.tau * sigma_hat


@dataclass(frozen=True)
class MinimaxPolicy(FixedRatioPolicy):
    """Fixed-ratio policy whose tau was chosen minimax for the problem's delta.

    The ratio itself comes from ``state_evolution.minimax_tau``; this class
    only records the intent.
    """


@dataclass(frozen=True)
class LassoPolicy:
    """Floating threshold targeting the l1-penalized least-squares solution.

    theta_{t+1} = lam + (theta_t / delta) * mean(eta'(u_t; theta_t)).
    The initial threshold is lam + sigma_hat_0; it only affects the
    transient, not the fixed point.
    """

    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    def resolve(self, sigma0: float) -> "LassoPolicy":
        return self

    def initial_theta(self, sigma0: float) -> float:
        return self.lam + sigma0

    def next_theta(self, theta, sigma_hat, mean_deriv, delta, t) -> float:
        return self.lam + (theta / delta) * mean_deriv


@dataclass(frozen=True)
class BasisPursuitPolicy:
    """Penalty-decaying variant: lam_t decreases to 0, targeting min-l1.

    By default lam_t = lambda0 * decay^t with lambda0 = 0.1 * sigma_hat_0,
    resolved when a run starts.  A custom nonincreasing ``schedule`` maps
    t to lam_t.
    """

    lambda0: Optional[float] = None
    decay: float = 0.9
    schedule: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.schedule is None and not (0 < self.decay < 1):
            raise ValueError("decay must lie in (0, 1)")

    def lambda_at(self, t: int) -> float:
        if self.schedule is not None:
            return float(self.schedule(t))
        if self.lambda0 is None:
            raise ValueError("policy not resolved: lambda0 unknown")
        return self.lambda0 * self.decay**t

    def resolve(self, sigma0: float) -> "BasisPursuitPolicy":
        if self.schedule is not None or self.lambda0 is not None:
            return self
        return replace(self, lambda0=0.1 * sigma0)

    def initial_theta(self, sigma0: float) -> float:
        return self.lambda_at(0) + sigma0

    def next_theta(self, theta, sigma_hat, mean_deriv, delta, t) -> float:
        return self.lambda_at(t) + (theta / delta) * mean_deriv


# ---------------------------------------------------------------------------
# State, observables, trace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AmpState:
    """Algorithm state after t iterations: estimate, residual, threshold."""

    x: np.ndarray
    z: np.ndarray
    theta: float
    sigma_hat: float
    t: int


@dataclass(frozen=True)
class ObservableRecord:
    """Per-iteration empirical observables measured against the truth.

    far and dr are fractions of the true zero set and the true support
    respectively (mdr = 1 - dr), so they line up with the
    state-conditional definitions used on the prediction side.
    """

    t: int
    mse: float
    mse_nz: float
    far: float
    mdr: float
    dr: float
    sigma_hat: float
    sigma_true: float
    theta: float


@dataclass
class AmpTrace:
    """Records for t = 0 .. T plus the final algorithm state."""

    records: list
    final_state: AmpState

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def estimate_sigma(z: np.ndarray, n: int) -> float:
    """Residual-energy estimate sqrt(||z||^2 / n) of the effective noise std."""
    if n < 1:
        raise ValueError("need n >= 1")
    return float(np.linalg.norm(z) / np.sqrt(n))


def effective_variance(x: np.ndarray, s0: np.ndarray, v: float, delta: float) -> float:
    """Noise-plus-interference level v + ||x - s0||^2 / (N delta).

    Uses the ground truth; only for validation and prediction comparison.
    """
    x = np.asarray(x, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    if x.shape != s0.shape:
        raise ValueError("x and s0 must have the same length")
    return float(v + np.sum((x - s0) ** 2) / (len(s0) * delta))


def observe(state: AmpState, inst: ProblemInstance) -> ObservableRecord:
    """Measure the current estimate against the instance's ground truth."""
    diff2 = (state.x - inst.s0) ** 2
    support = inst.s0 != 0
    n_nz = int(support.sum())
    mse = float(diff2.mean())
    mse_nz = float(diff2[support].mean()) if n_nz else 0.0
    est_nonzero = state.x != 0
    dr = float((est_nonzero & support).sum() / n_nz) if n_nz else 0.0
    n_zero = len(inst.s0) - n_nz
    far = float((est_nonzero & ~support).sum() / n_zero) if n_zero else 0.0
    sigma_true = np.sqrt(effective_variance(state.x, inst.s0, inst.v, inst.delta))
    return ObservableRecord(t=state.t, mse=mse, mse_nz=mse_nz, far=far,
                            mdr=1.0 - dr, dr=dr, sigma_hat=state.sigma_hat,
                            sigma_true=float(sigma_true), theta=state.theta)


# ---------------------------------------------------------------------------
# Iteration
# ---------------------------------------------------------------------------


def initial_state(inst: ProblemInstance, policy) -> AmpState:
    """State at t = 0: x = 0, z = y, threshold from the resolved policy."""
    sigma0 = estimate_sigma(inst.y, inst.n)
    return AmpState(x=np.zeros(inst.N), z=inst.y.copy(),
                    theta=float(policy.initial_theta(sigma0)),
                    sigma_hat=sigma0, t=0)


def amp_step(state: AmpState, inst: ProblemInstance, nl, policy,
             onsager: bool = True) -> AmpState:
    """Advance one iteration; the policy must already be resolved."""
    if state.x.shape[0] != inst.N or state.z.shape[0] != inst.n:
        raise ValueError("state dimensions do not match the instance")
    op = inst.operator
    u = state.x + op.apply_adjoint(state.z)
    x_new = nl.evaluate(u, state.theta)
    mean_deriv = float(np.mean(nl.derivative(u, state.theta)))
    z_new = inst.y - op.apply(x_new)
    if onsager:
        z_new = z_new + (mean_deriv / inst.delta) * state.z
    sigma_new = estimate_sigma(z_new, inst.n)
    theta_new = policy.next_theta(state.theta, sigma_new, mean_deriv,
                                  inst.delta, state.t + 1)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z_new))
            and np.isfinite(theta_new)):
        raise DivergenceError(f"non-finite values at iteration {state.t + 1}",
                              iteration=state.t + 1)
    return AmpState(x=x_new, z=z_new, theta=float(theta_new),
                    sigma_hat=sigma_new, t=state.t + 1)


def run_amp(inst: ProblemInstance, nl, policy, onsager: bool = True,
            max_iters: int = 200, rel_tol: float = 1e-8) -> AmpTrace:
    """Iterate from x = 0, recording observables at every step.

    Stops after ``max_iters`` steps or once the relative change of the
    estimate drops below ``rel_tol`` (pass 0 to always run the full
    budget).  Divergence raises DivergenceError with the trace so far
    attached.
    """
    if max_iters < 1:
        raise ValueError("need max_iters >= 1")
    sigma0 = estimate_sigma(inst.y, inst.n)
    policy = policy.resolve(sigma0)
    state = initial_state(inst, policy)
    records = [observe(state, inst)]
    for _ in range(max_iters):
        try:
            new = amp_step(state, inst, nl, policy, onsager=onsager)
        except DivergenceError as err:
            err.trace = AmpTrace(records=records, final_state=state)
            raise
        if sigma0 > 0 and new.sigma_hat > SIGMA_BLOWUP_FACTOR * sigma0:
            raise DivergenceError(
                f"residual energy blew up at iteration {new.t}",
                iteration=new.t,
                trace=AmpTrace(records=records, final_state=state))
        records.append(observe(new, inst))
        rel = np.linalg.norm(new.x - state.x) / max(np.linalg.norm(state.x), 1e-12)
        state = new
        if rel < rel_tol:
            break
    return AmpTrace(records=records, final_state=state)
