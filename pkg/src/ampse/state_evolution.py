"""Scalar dynamics predicting AMP behavior in the large-system limit.

The central object is the MSE map

    Psi(m) = v + E[(eta(X + sqrt(m) Z; theta) - X)^2] / delta

with X drawn from the signal prior and Z standard normal.  Iterating
Psi (with the threshold updated by the active policy) evolves the
effective-variance state; its fixed points and their stability explain
recovery, phase transitions, and the penalty/threshold calibration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .amp import BasisPursuitPolicy, FixedRatioPolicy, LassoPolicy
from .exceptions import CalibrationRangeError, CapabilityError, ConvergenceError
from .nonlinearity import PosteriorMean, SoftThreshold
from .signal_model import GeneralizedGaussian, PointMassMixture, three_point_prior

_SQRT_PI = np.sqrt(np.pi)
_SQRT2 = np.sqrt(2.0)


def _phi(z):
    return np.exp(-0.5 * np.asarray(z) ** 2) / np.sqrt(2.0 * np.pi)


_Phi = special.ndtr


# ---------------------------------------------------------------------------
# Closed-form soft-threshold kernels (exact Gaussian integrals)
# ---------------------------------------------------------------------------


def soft_sq_error(a, sigma, theta):
    """E[(soft(a + sigma Z; theta) - a)^2] for Z standard normal.

    Exact in terms of the normal CDF and density; broadcasts over all
    arguments.  sigma = 0 is handled as the deterministic limit.
    """
    a, sigma, theta = np.broadcast_arrays(
        np.asarray(a, float), np.asarray(sigma, float), np.asarray(theta, float))
    out = np.empty(a.shape)
    zero = sigma == 0
    if np.any(zero):
        az, tz = a[zero], theta[zero]
        eta = np.sign(az) * np.maximum(np.abs(az) - tz, 0.0)
        out[zero] = (eta - az) ** 2
    live = ~zero
    if np.any(live):
        al, sl, tl = a[live], sigma[live], theta[live]
        c1 = (tl - al) / sl
        c2 = (tl + al) / sl

        def tail(c):
            return (sl**2 + tl**2) * _Phi(-c) + (sl * c - 2.0 * tl) * sl * _phi(c)

        mid = al**2 * (_Phi(c1) + _Phi(c2) - 1.0)
        out[live] = tail(c1) + tail(c2) + mid
    return out if out.shape else float(out)


def soft_exceed_prob(a, sigma, theta):
    """P(|a + sigma Z| > theta): the chance the soft threshold passes a value."""
    a, sigma, theta = np.broadcast_arrays(
        np.asarray(a, float), np.asarray(sigma, float), np.asarray(theta, float))
    out = np.empty(a.shape)
    zero = sigma == 0
    if np.any(zero):
        out[zero] = (np.abs(a[zero]) > theta[zero]).astype(float)
    live = ~zero
    if np.any(live):
        al, sl, tl = a[live], sigma[live], theta[live]
        out[live] = _Phi((al - tl) / sl) + _Phi(-(al + tl) / sl)
    return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# Expectation engines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosedForm:
    """Exact evaluation; only point-mass priors with soft thresholding."""


@dataclass(frozen=True)
class GaussQuadrature:
    """Fixed-node quadrature.

    The Gaussian dimension uses Gauss-Hermite nodes for squared-error
    integrands and exact normal tails for indicator integrands (where
    node quadrature would converge poorly).  A generalized-Gaussian
    prior dimension uses generalized Gauss-Laguerre nodes, which are
    exact for its gamma-transformed magnitude.
    """

    nodes: int = 61

    def __post_init__(self):
        if self.nodes < 31:
            raise ValueError("need at least 31 quadrature nodes")


@dataclass(frozen=True)
class MonteCarlo:
    """Sampling estimate; re-seeded per call so results are reproducible."""

    samples: int = 10**6
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("need at least one sample")


@lru_cache(maxsize=32)
def _hermite_nodes(n):
    z, w = np.polynomial.hermite.hermgauss(n)
    return _SQRT2 * z, w / _SQRT_PI  # nodes/weights for E over N(0, 1)


@lru_cache(maxsize=32)
def _laguerre_nodes(alpha, scale, n):
    # |X| = scale * G^(1/alpha) with G ~ Gamma(1/alpha); generalized
    # Gauss-Laguerre with exponent 1/alpha - 1 integrates that exactly.
    k = 1.0 / alpha
    g, w = special.roots_genlaguerre(n, k - 1.0)
    return scale * g**k, w / special.gamma(k)


def prior_expectation(fn, prior, engine) -> float:
    """E[fn(X)] over the signal prior; fn must be vectorized.

    Point-mass mixtures are summed exactly under any engine; the
    generalized Gaussian integrates by Laguerre nodes or Monte Carlo.
    """
    if isinstance(prior, PointMassMixture):
        return float(np.dot(prior.probs, fn(prior.values)))
    if isinstance(prior, GeneralizedGaussian):
        if isinstance(engine, MonteCarlo):
            x = prior.sample(engine.samples, np.random.default_rng(engine.seed))
            return float(np.mean(fn(x)))
        nodes = engine.nodes if isinstance(engine, GaussQuadrature) else 61
        xs, ws = _laguerre_nodes(prior.alpha, prior.scale, nodes)
        return float(np.dot(ws, 0.5 * (fn(xs) + fn(-xs))))
    raise CapabilityError(f"unsupported prior type {type(prior).__name__}")


def _gh_expect_sq_error(a, sigma, theta, nl, nodes):
    """Gauss-Hermite estimate of E[(eta(a + sigma Z) - a)^2], vectorized in a."""
    z, w = _hermite_nodes(nodes)
    a = np.atleast_1d(np.asarray(a, float))
    u = a[:, None] + sigma * z[None, :]
    vals = (nl.evaluate(u, theta) - a[:, None]) ** 2
    return vals @ w


def _require_soft(nl, what):
    if not isinstance(nl, SoftThreshold):
        raise CapabilityError(f"{what} needs the soft-threshold nonlinearity")


def mse_map(sigma2, v, delta, theta, prior, nl=SoftThreshold(),
            engine=ClosedForm()):
    """One-step MSE map Psi(sigma2) = v + E[(eta(X + sigma Z) - X)^2] / delta.

    With the ClosedForm engine, ``sigma2`` may be an array (vectorized
    over probe points); other engines take scalars.
    """
    if np.any(np.asarray(sigma2) < 0):
        raise ValueError("sigma2 must be nonnegative")
    if theta is not None and np.any(np.asarray(theta) < 0):
        raise ValueError("theta must be nonnegative")
    sigma = np.sqrt(sigma2)
    if isinstance(engine, ClosedForm):
        if not (isinstance(prior, PointMassMixture) and isinstance(nl, SoftThreshold)):
            raise CapabilityError(
                "closed form needs a point-mass prior and soft thresholding")
        a = prior.values[:, None]
        p = prior.probs
        per_atom = soft_sq_error(a, np.atleast_1d(sigma)[None, :],
                                 np.atleast_1d(theta)[None, :])
        err = p @ per_atom
        err = err if np.ndim(sigma2) else float(err[0])
        return v + err / delta
    if isinstance(engine, GaussQuadrature):
        err = prior_expectation(
            lambda x: _gh_expect_sq_error(x, float(sigma), float(theta), nl,
                                          engine.nodes),
            prior, engine)
        return v + err / delta
    if isinstance(engine, MonteCarlo):
        val, _ = monte_carlo_mse(float(sigma2), v, delta, float(theta), prior, nl,
                                 engine.samples, engine.seed)
        return val
    raise TypeError(f"unknown engine {engine!r}")


def monte_carlo_mse(sigma2, v, delta, theta, prior, nl, samples, seed):
    """Monte Carlo Psi estimate with its standard error."""
    rng = np.random.default_rng(seed)
    x = prior.sample(samples, rng)
    u = x + np.sqrt(sigma2) * rng.standard_normal(samples)
    sq = (nl.evaluate(u, theta) - x) ** 2
    mean = float(sq.mean())
    stderr = float(sq.std(ddof=1) / np.sqrt(samples))
    return v + mean / delta, stderr / delta


def mean_derivative(sigma2, theta, prior, nl=SoftThreshold(),
                    engine=ClosedForm()) -> float:
    """E[eta'(X + sigma Z; theta)], the average slope entering the
    residual correction and the floating-threshold recursion."""
    sigma = float(np.sqrt(sigma2))
    if isinstance(nl, SoftThreshold):
        # eta' is the pass indicator, so the expectation is an exact tail sum.
        if isinstance(engine, MonteCarlo):
            rng = np.random.default_rng(engine.seed)
            x = prior.sample(engine.samples, rng)
            u = x + sigma * rng.standard_normal(engine.samples)
            return float(np.mean(nl.derivative(u, theta)))
        return prior_expectation(lambda x: soft_exceed_prob(x, sigma, theta),
                                 prior, engine)
    if isinstance(engine, MonteCarlo):
        rng = np.random.default_rng(engine.seed)
        x = prior.sample(engine.samples, rng)
        u = x + sigma * rng.standard_normal(engine.samples)
        return float(np.mean(nl.derivative(u, theta)))
    if isinstance(engine, GaussQuadrature):
        z, w = _hermite_nodes(engine.nodes)

        def smooth_slope(x):
            u = np.atleast_1d(np.asarray(x, float))[:, None] + sigma * z[None, :]
            return nl.derivative(u, theta) @ w

        return prior_expectation(smooth_slope, prior, engine)
    raise CapabilityError("closed form supports the soft threshold only")


# ---------------------------------------------------------------------------
# State evolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SEState:
    """Analytical state: effective variance plus the fixed problem data."""

    sigma2: float
    v: float
    delta: float
    theta: float
    prior: object

    def __post_init__(self):
        if self.sigma2 < self.v - 1e-15:
            raise ValueError("sigma2 cannot be below the noise variance")
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")


def initial_se_state(prior, v: float, delta: float, policy) -> SEState:
    """State at t = 0: sigma0^2 = v + mu2(prior) / delta."""
    sigma2 = v + prior.second_moment() / delta
    theta0 = policy.initial_theta(np.sqrt(sigma2))
    return SEState(sigma2=float(sigma2), v=v, delta=delta, theta=float(theta0),
                   prior=prior)


def evolve(initial: SEState, policy, T: int, nl=SoftThreshold(),
           engine=ClosedForm()) -> list:
    """Iterate the MSE map for T steps, updating theta per the policy.

    Fixed-ratio policies keep theta = tau * sigma_t; the floating
    (lasso-targeting) policy follows its own recursion with the average
    slope evaluated at the current state.  The decaying-penalty policy
    has no one-dimensional evolution and is rejected.
    """
    if T < 1:
        raise ValueError("need T >= 1")
    if isinstance(initial.prior, PointMassMixture) and isinstance(nl, SoftThreshold) \
            and not isinstance(engine, ClosedForm):
        pass  # explicit engine choices are honored
    if isinstance(policy, BasisPursuitPolicy):
        raise ValueError("the decaying-penalty policy has no scalar evolution")
    states = [initial]
    s = initial
    for _ in range(T):
        sigma2_next = float(mse_map(s.sigma2, s.v, s.delta, s.theta, s.prior,
                                    nl, engine))
        if isinstance(policy, FixedRatioPolicy):
            theta_next = policy.tau * np.sqrt(sigma2_next)
        elif isinstance(policy, LassoPolicy):
            slope = mean_derivative(s.sigma2, s.theta, s.prior, nl, engine)
            theta_next = policy.next_theta(s.theta, None, slope, s.delta, s.t if False else 0)
        else:
            raise ValueError(f"unsupported policy {type(policy).__name__}")
        s = SEState(sigma2=sigma2_next, v=s.v, delta=s.delta,
                    theta=float(theta_next), prior=s.prior)
        states.append(s)
    return states


def fixed_ratio_map(tau, v, delta, prior, nl=SoftThreshold(),
                    engine=ClosedForm()):
    """The one-dimensional map m -> Psi(m) with theta = tau * sqrt(m)."""

    def psi(m):
        m = np.asarray(m, dtype=float)
        theta = tau * np.sqrt(m)
        if m.ndim and not isinstance(engine, ClosedForm):
            return np.array([mse_map(float(mi), v, delta, float(ti), prior, nl,
                                     engine) for mi, ti in zip(m, theta)])
        return mse_map(m, v, delta, theta, prior, nl, engine)

    return psi


def highest_fixed_point(psi_fn, search_upper: float, grid_points: int = 400,
                        abs_tol: float = 1e-10) -> float:
    """Largest m with Psi(m) >= m, located by grid scan plus bisection.

    Returns 0 when Psi sits strictly below the diagonal on the whole
    positive grid; a map glued to the diagonal at the top of the range
    is reported as degenerate with a warning.
    """
    if search_upper <= 0:
        raise ValueError("search_upper must be positive")
    grid = search_upper * np.logspace(0.0, -14.0, grid_points)
    grid = np.append(grid, 0.0)
    try:
        vals = np.asarray(psi_fn(grid), dtype=float)
    except (TypeError, ValueError):
        vals = np.array([psi_fn(float(m)) for m in grid])
    above = vals >= grid
    if above[0]:
        warnings.warn("map does not fall below the diagonal by the search "
                      "upper bound; fixed point reported at the bound")
        return float(search_upper)
    idx = np.argmax(above)  # first grid point (descending) on/above diagonal
    if not above[idx]:
        return 0.0
    lo = float(grid[idx])       # Psi(lo) >= lo
    hi = float(grid[idx - 1])   # Psi(hi) < hi
    while hi - lo > abs_tol:
        mid = 0.5 * (lo + hi)
        if float(psi_fn(mid)) >= mid:
            lo = mid
        else:
            hi = mid
    return lo


def stability_coefficient(psi_fn, hfp_value: float) -> float:
    """Numerical slope of the map at its highest fixed point.

    Central difference, falling back to a one-sided difference from
    above when the fixed point sits at zero.
    """
    h = max(1e-6, 1e-6 * hfp_value)
    if hfp_value < h:
        return float((psi_fn(hfp_value + h) - psi_fn(hfp_value)) / h)
    return float((psi_fn(hfp_value + h) - psi_fn(hfp_value - h)) / (2.0 * h))


# ---------------------------------------------------------------------------
# State-conditional expectations of observables
# ---------------------------------------------------------------------------

_KINDS = ("mse", "mse_nz", "far", "mdr", "dr")


def state_expectation(kind, state: SEState, nl=SoftThreshold(),
                      engine=ClosedForm()):
    """Expected observable in a given state.

    ``kind`` is one of 'mse', 'mse_nz', 'far', 'mdr', 'dr', or a callable
    zeta(u, v_noise, w, x_hat) evaluated under U ~ prior, V ~ N(0, v),
    W ~ N(0, sigma2 - v), x_hat = eta(U + V + W; theta).  'dr' is the
    unconditional pass probability; 'mdr' conditions on a true nonzero;
    'far' is the pass probability of a pure-noise coordinate.
    """
    sigma2, v, theta, prior = state.sigma2, state.v, state.theta, state.prior
    sigma = float(np.sqrt(sigma2))
    if callable(kind):
        return _custom_expectation(kind, state, nl, engine)
    if kind not in _KINDS:
        raise ValueError(f"unknown observable kind {kind!r}")

    if isinstance(engine, MonteCarlo):
        rng = np.random.default_rng(engine.seed)
        u = prior.sample(engine.samples, rng)
        noise = sigma * rng.standard_normal(engine.samples)
        est = nl.evaluate(u + noise, theta)
        nz = u != 0
        if kind == "mse":
            return float(np.mean((est - u) ** 2))
        if kind == "mse_nz":
            return float(np.mean((est[nz] - u[nz]) ** 2)) if nz.any() else 0.0
        if kind == "far":
            pure = nl.evaluate(sigma * rng.standard_normal(engine.samples), theta)
            return float(np.mean(pure != 0))
        if kind == "dr":
            return float(np.mean(est != 0))
        return 1.0 - (float(np.mean(est[nz] != 0)) if nz.any() else 0.0)

    # Deterministic engines
    if kind in ("far", "dr", "mdr"):
        _require_soft(nl, "tail-probability observables under deterministic engines")
    if kind == "far":
        if sigma == 0:
            return 0.0 if theta > 0 else 1.0
        return float(2.0 * _Phi(-theta / sigma))
    if kind == "dr":
        return prior_expectation(lambda x: soft_exceed_prob(x, sigma, theta),
                                 prior, engine)
    if kind == "mdr":
        eps = 1.0 - prior.mass_at_zero()
        if eps <= 0:
            return 1.0
        hit = _expect_on_support(lambda x: soft_exceed_prob(x, sigma, theta),
                                 prior, engine) / eps
        return 1.0 - hit

    if isinstance(engine, ClosedForm):
        if not (isinstance(prior, PointMassMixture) and isinstance(nl, SoftThreshold)):
            raise CapabilityError(
                "closed form needs a point-mass prior and soft thresholding")
        err = lambda x: soft_sq_error(x, sigma, theta)
    else:
        err = lambda x: _gh_expect_sq_error(x, sigma, theta, nl, engine.nodes)
    if kind == "mse":
        return prior_expectation(err, prior, engine)
    eps = 1.0 - prior.mass_at_zero()
    if eps <= 0:
        return 0.0
    return _expect_on_support(err, prior, engine) / eps


def _expect_on_support(fn, prior, engine) -> float:
    """E[fn(X) 1{X != 0}] over the prior."""
    if isinstance(prior, PointMassMixture):
        a, p = prior.values, prior.probs
        nz = a != 0
        return float(np.dot(p[nz], np.atleast_1d(fn(a[nz])))) if nz.any() else 0.0
    return prior_expectation(fn, prior, engine)  # continuous: X != 0 a.s.


def _custom_expectation(zeta, state: SEState, nl, engine) -> float:
    """E[zeta(U, V, W, eta(U+V+W))] keeping the two Gaussian parts distinct."""
    v = state.v
    w_var = max(state.sigma2 - v, 0.0)
    if isinstance(engine, MonteCarlo):
        rng = np.random.default_rng(engine.seed)
        u = state.prior.sample(engine.samples, rng)
        vn = np.sqrt(v) * rng.standard_normal(engine.samples) if v > 0 else np.zeros(engine.samples)
        wn = np.sqrt(w_var) * rng.standard_normal(engine.samples) if w_var > 0 else np.zeros(engine.samples)
        est = nl.evaluate(u + vn + wn, state.theta)
        return float(np.mean(zeta(u, vn, wn, est)))
    nodes = engine.nodes if isinstance(engine, GaussQuadrature) else 61
    zv, wv = (_hermite_nodes(nodes) if v > 0 else (np.zeros(1), np.ones(1)))
    zw, ww = (_hermite_nodes(nodes) if w_var > 0 else (np.zeros(1), np.ones(1)))
    vn = np.sqrt(v) * zv
    wn = np.sqrt(w_var) * zw

    def over_gaussians(x):
        x = np.atleast_1d(np.asarray(x, float))
        u = x[:, None, None]
        vv = vn[None, :, None]
        wwn = wn[None, None, :]
        est = nl.evaluate(u + vv + wwn, state.theta)
        vals = zeta(np.broadcast_to(u, est.shape), np.broadcast_to(vv, est.shape),
                    np.broadcast_to(wwn, est.shape), est)
        return np.einsum("xvw,v,w->x", vals, wv, ww)

    return prior_expectation(over_gaussians, state.prior, engine)


# ---------------------------------------------------------------------------
# Minimax tuning and the recovery phase boundary
# ---------------------------------------------------------------------------

LEAST_FAVORABLE_AMPLITUDE = 1e3
_minimax_cache: dict = {}


def _zero_hfp(tau: float, rho: float, delta: float, amplitude: float) -> bool:
    """Does the noiseless least-favorable map have its only fixed point at 0?"""
    eps = rho * delta
    prior = three_point_prior(eps, amplitude)
    psi = fixed_ratio_map(tau, 0.0, delta, prior)
    upper = 4.0 * prior.second_moment() / delta
    return highest_fixed_point(psi, upper) <= 1e-9


def _rho_max(tau: float, delta: float, amplitude: float, tol: float) -> float:
    """Largest sparsity ratio rho still recovered exactly at this tau."""
    lo, hi = 0.0, 1.0 - 1e-9
    if not _zero_hfp(tau, tol, delta, amplitude):
        return 0.0
    if _zero_hfp(tau, hi, delta, amplitude):
        return 1.0
    lo = tol
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _zero_hfp(tau, mid, delta, amplitude):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _minimax_solve(delta: float, amplitude: float = LEAST_FAVORABLE_AMPLITUDE):
    """Jointly compute the minimax threshold ratio and the phase boundary.

    The worst-case sparse prior is realized as a symmetric three-point
    law with large amplitude; the ratio is chosen to maximize the
    recoverable sparsity, whose maximum is the predicted boundary.
    """
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    key = (round(delta, 12), amplitude)
    if key in _minimax_cache:
        return _minimax_cache[key]
    taus = np.linspace(0.2, 4.0, 39)
    coarse = np.array([_rho_max(t, delta, amplitude, 1e-4) for t in taus])
    i = int(np.argmax(coarse))
    lo = taus[max(i - 1, 0)]
    hi = taus[min(i + 1, len(taus) - 1)]
    res = optimize.minimize_scalar(
        lambda t: -_rho_max(float(t), delta, amplitude, 1e-5),
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-4})
    tau_star = float(res.x)
    rho_star = _rho_max(tau_star, delta, amplitude, 1e-5)
    _minimax_cache[key] = (tau_star, rho_star)
    return tau_star, rho_star


def minimax_tau(delta: float) -> float:
    """Threshold-to-noise ratio maximizing the recoverable sparsity at
    undersampling delta (worst case over sparse priors)."""
    return _minimax_solve(delta)[0]


def phase_transition(delta: float) -> float:
    """Critical sparsity ratio rho below which the noiseless map has its
    highest fixed point at zero (exact recovery regime)."""
    return _minimax_solve(delta)[1]


# ---------------------------------------------------------------------------
# Equilibrium and penalty calibration
# ---------------------------------------------------------------------------


def equilibrium(tau: float, v: float, delta: float, prior, engine=None,
                nl=SoftThreshold(), tol: float = 1e-12,
                max_iters: int = 10**5):
    """Iterate the fixed-ratio evolution to its limit.

    Returns (sigma_inf, theta_inf) where theta_inf = tau * sigma_inf.
    """
    if not (tau > 0):
        raise ValueError("tau must be positive")
    engine = _default_engine(prior, nl) if engine is None else engine
    sigma2 = v + prior.second_moment() / delta
    for _ in range(max_iters):
        theta = tau * np.sqrt(sigma2)
        nxt = float(mse_map(sigma2, v, delta, theta, prior, nl, engine))
        if abs(nxt - sigma2) < tol * max(sigma2, 1.0):
            sigma_inf = float(np.sqrt(nxt))
            return sigma_inf, tau * sigma_inf
        sigma2 = nxt
    raise ConvergenceError("equilibrium iteration did not converge",
                           last=sigma2)


def _default_engine(prior, nl):
    if isinstance(prior, PointMassMixture) and isinstance(nl, SoftThreshold):
        return ClosedForm()
    return GaussQuadrature()


def eq_detection_rate(tau: float, v: float, delta: float, prior,
                      engine=None, nl=SoftThreshold()) -> float:
    """Fraction of coordinates estimated nonzero at the equilibrium state."""
    engine = _default_engine(prior, nl) if engine is None else engine
    sigma_inf, theta_inf = equilibrium(tau, v, delta, prior, engine, nl)
    state = SEState(sigma2=max(sigma_inf**2, v), v=v, delta=delta,
                    theta=theta_inf, prior=prior)
    return float(state_expectation("dr", state, nl, engine))


def _raw_lambda(tau: float, v: float, delta: float, prior, engine, nl) -> float:
    sigma_inf, theta_inf = equilibrium(tau, v, delta, prior, engine, nl)
    state = SEState(sigma2=max(sigma_inf**2, v), v=v, delta=delta,
                    theta=theta_inf, prior=prior)
    eqdr = float(state_expectation("dr", state, nl, engine))
    return (1.0 - eqdr / delta) * theta_inf


def calibrate_lambda(tau: float, v: float, delta: float, prior,
                     engine=None, nl=SoftThreshold()) -> float:
    """Penalty level whose l1-penalized solution the fixed-ratio run matches.

    lambda = (1 - EqDR(tau)/delta) * theta_inf(tau).  Raises when tau is
    below the validity region (negative penalty).
    """
    engine = _default_engine(prior, nl) if engine is None else engine
    lam = _raw_lambda(tau, v, delta, prior, engine, nl)
    if lam < -1e-12:
        raise CalibrationRangeError(
            f"tau={tau} is below the calibration validity region (lambda={lam:.3e})")
    return max(lam, 0.0)


def calibrate_tau(lam: float, v: float, delta: float, prior,
                  engine=None, nl=SoftThreshold(), tau_max: float = 40.0) -> float:
    """Invert the penalty calibration by monotone bisection.

    Returns the threshold ratio whose equilibrium matches the given
    penalty; lam = 0 returns the smallest valid ratio.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    engine = _default_engine(prior, nl) if engine is None else engine

    def raw(t):
        return _raw_lambda(t, v, delta, prior, engine, nl)

    # Locate the validity boundary: smallest tau with a nonnegative penalty.
    tau_lo, tau_hi = 1e-2, 1.0
    while raw(tau_hi) < 0 and tau_hi < tau_max:
        tau_lo = tau_hi
        tau_hi *= 2.0
    if raw(tau_hi) < 0:
        raise CalibrationRangeError("no valid threshold ratio below tau_max",
                                    achievable=None)
    if raw(tau_lo) >= 0:
        tau0 = tau_lo
    else:
        lo, hi = tau_lo, tau_hi
        while hi - lo > 1e-9 * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if raw(mid) < 0:
                lo = mid
            else:
                hi = mid
        tau0 = hi
    if lam == 0:
        return float(tau0)
    # Bracket from above, then bisect on the increasing branch.
    hi = max(2.0 * tau0, 1.0)
    while raw(hi) < lam:
        hi *= 2.0
        if hi > tau_max:
            top = raw(tau_max)
            raise CalibrationRangeError(
                f"lambda={lam} exceeds the achievable range",
                achievable=(0.0, top))
    lo = tau0
    while hi - lo > 1e-9 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if raw(mid) < lam:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))
