"""Stochastic validation engine.

Euler-Maruyama simulation of the model SDE, the epsilon-family whose
epsilon-squared mean derivative the location parameter approximates, Monte
Carlo summaries with standard errors, and the Gaussian variation process
whose covariance must reproduce the deterministic transported covariance.

Reproducibility: every trajectory draws from its own counter-derived
substream keyed by ``(master_seed, trajectory_index)``, and reductions
combine fixed-size chunks in index order, so results are bit-identical
regardless of execution order or thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._numutil import require_finite
from .errors import DimensionMismatch, IlpkitError, NonFiniteState
from .flow import FlowGrid, VectorFieldSpec, xi_from_model
from .geometry import ModelSpec, alpha, connector, connector_apply

__all__ = [
    "MCSummary",
    "RngPolicy",
    "VariationResult",
    "SlopeEstimate",
    "euler_maruyama",
    "intrinsic_family_path",
    "mc_mean",
    "variation_samples",
    "epsilon_squared_slope",
    "default_zeta",
]

_CHUNK = 64  # fixed reduction granularity; must not depend on thread count


@dataclass(frozen=True)
class MCSummary:
    """Componentwise mean and standard error per grid time."""

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    count: int
    seed: int


@dataclass(frozen=True)
class RngPolicy:
    """Deterministic substream derivation from a master seed.

    ``stream_for(i)`` yields a generator whose draws depend only on
    ``(master_seed, i)``, never on execution order; ``named_stream(tag)``
    provides auxiliary streams (initial-state sampling and the like) that
    cannot collide with trajectory streams.
    """

    master_seed: int

    def stream_for(self, trajectory_index: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(0, trajectory_index))
        return np.random.Generator(np.random.Philox(seq))

    def named_stream(self, tag: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(1, tag))
        return np.random.Generator(np.random.Philox(seq))


def _worker_count() -> int:
    raw = os.environ.get("ILP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def euler_maruyama(
    model: ModelSpec,
    x0: np.ndarray,
    delta: float,
    n: int,
    rng: np.random.Generator,
    constraint_projector: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Simulate one trajectory of ``dX = b dt + sigma dW`` on a uniform grid.

    Applies the optional constraint projector after every step.  Returns the
    ``(n+1, p)`` path; raises :class:`NonFiniteState` if it leaves float range.
    """
    if n < 1:
        raise DimensionMismatch("n must be a positive integer")
    x = np.asarray(x0, dtype=float).copy()
    p = x.size
    dt = delta / n
    increments = rng.normal(0.0, np.sqrt(dt), size=(n, p))
    path = np.empty((n + 1, p))
    path[0] = x
    for i in range(n):
        try:
            drift = np.asarray(model.drift_b(x), dtype=float)
            sig = np.asarray(model.diffusion_sigma(x), dtype=float)
            x = x + drift * dt + sig @ increments[i]
            if constraint_projector is not None:
                x = np.asarray(constraint_projector(x), dtype=float)
        except IlpkitError:
            # blown-up states make model callables fail in model-specific
            # ways; report those uniformly as a non-finite path
            if not np.all(np.isfinite(x)):
                raise NonFiniteState("Euler-Maruyama path left float range") from None
            raise
        path[i + 1] = x
    if not np.all(np.isfinite(path)):
        raise NonFiniteState("Euler-Maruyama path left float range")
    return path


def default_zeta(model: ModelSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Drift correction ``zeta = (1/2) Gamma(alpha)`` of the epsilon-family."""

    def zeta(x):
        return 0.5 * connector_apply(connector(model, x), alpha(model, x))

    return zeta


def intrinsic_family_path(
    model: ModelSpec,
    vf: VectorFieldSpec,
    x0: np.ndarray,
    delta: float,
    n: int,
    epsilon: float,
    rng: np.random.Generator | None,
    zeta: Callable[[np.ndarray], np.ndarray] | None = None,
    constraint_projector: Callable[[np.ndarray], np.ndarray] | None = None,
    increments: np.ndarray | None = None,
) -> np.ndarray:
    """Euler path of the intrinsic epsilon-family ``dX = xi dt - eps^2 zeta dt + eps sigma dW``.

    At ``epsilon = 0`` the path is the deterministic Euler recursion of the
    intrinsic vector field.  ``increments`` may inject externally drawn
    standard-scale Wiener increments (shape ``(n, p)``) for common-random-
    number experiments; otherwise they come from ``rng``.
    """
    if epsilon < 0.0:
        raise DimensionMismatch("epsilon must be nonnegative")
    if n < 1:
        raise DimensionMismatch("n must be a positive integer")
    x = np.asarray(x0, dtype=float).copy()
    p = x.size
    dt = delta / n
    if zeta is None:
        zeta = default_zeta(model)
    if increments is None:
        if rng is None:
            raise DimensionMismatch("either rng or increments must be provided")
        increments = rng.normal(0.0, np.sqrt(dt), size=(n, p))
    eps2 = epsilon * epsilon
    path = np.empty((n + 1, p))
    path[0] = x
    for i in range(n):
        try:
            drift = np.asarray(vf.xi(x), dtype=float) - eps2 * np.asarray(zeta(x), dtype=float)
            if epsilon > 0.0:
                sig = np.asarray(model.diffusion_sigma(x), dtype=float)
                x = x + drift * dt + epsilon * (sig @ increments[i])
            else:
                x = x + drift * dt
            if constraint_projector is not None:
                x = np.asarray(constraint_projector(x), dtype=float)
        except IlpkitError:
            if not np.all(np.isfinite(x)):
                raise NonFiniteState("epsilon-family path left float range") from None
            raise
        path[i + 1] = x
    if not np.all(np.isfinite(path)):
        raise NonFiniteState("epsilon-family path left float range")
    return path


def _welford_chunk(paths) -> tuple[int, np.ndarray, np.ndarray]:
    count = 0
    mean = None
    m2 = None
    for path in paths:
        count += 1
        if mean is None:
            mean = path.copy()
            m2 = np.zeros_like(path)
        else:
            delta = path - mean
            mean = mean + delta / count
            m2 = m2 + delta * (path - mean)
    return count, mean, m2


def _combine_stats(a, b):
    (na, ma, sa), (nb, mb, sb) = a, b
    if na == 0:
        return b
    if nb == 0:
        return a
    n = na + nb
    delta = mb - ma
    mean = ma + delta * (nb / n)
    m2 = sa + sb + delta * delta * (na * nb / n)
    return n, mean, m2


def mc_mean(
    model: ModelSpec,
    x0: np.ndarray | None,
    delta: float,
    n: int,
    reps: int,
    policy: RngPolicy,
    constraint_projector: Callable[[np.ndarray], np.ndarray] | None = None,
    initial_sampler: Callable[[np.random.Generator], np.ndarray] | None = None,
) -> MCSummary:
    """Monte Carlo mean and standard error of the model SDE on a uniform grid.

    Each trajectory uses its own substream: the initial state (when sampled)
    is drawn first, then the Wiener increments.  The reduction runs Welford
    accumulation inside fixed 64-trajectory chunks combined in chunk order,
    so the summary is bit-identical for any ``ILP_THREADS`` setting.
    """
    if reps < 2:
        raise DimensionMismatch("reps must be at least 2")
    if x0 is None and initial_sampler is None:
        raise DimensionMismatch("either x0 or initial_sampler is required")

    def run_one(index: int) -> np.ndarray:
        rng = policy.stream_for(index)
        if initial_sampler is not None:
            start = np.asarray(initial_sampler(rng), dtype=float)
        else:
            start = np.asarray(x0, dtype=float)
        return euler_maruyama(model, start, delta, n, rng, constraint_projector)

    chunks = [range(lo, min(lo + _CHUNK, reps)) for lo in range(0, reps, _CHUNK)]

    def run_chunk(indices) -> tuple[int, np.ndarray, np.ndarray]:
        return _welford_chunk(run_one(i) for i in indices)

    workers = min(_worker_count(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(run_chunk, chunks))
    else:
        partials = [run_chunk(c) for c in chunks]

    total = (0, None, None)
    for part in partials:
        total = _combine_stats(total, part)
    count, mean, m2 = total
    var = m2 / (count - 1)
    stderr = np.sqrt(var / count)
    times = np.linspace(0.0, delta, n + 1)
    return MCSummary(times=times, mean=mean, stderr=stderr, count=count, seed=policy.master_seed)


@dataclass(frozen=True)
class VariationResult:
    """End-time samples of the variation process and their empirical covariance."""

    samples: np.ndarray
    covariance: np.ndarray


def variation_samples(
    model: ModelSpec,
    grid: FlowGrid,
    sigma0: np.ndarray,
    reps: int,
    policy: RngPolicy,
    vf: VectorFieldSpec | None = None,
) -> VariationResult:
    """Simulate the Gaussian variation process along a flow grid.

    Euler steps of the linear SDE ``dL = Dxi(x_t) L dt + sigma(x_t) dW`` from
    ``L_0 ~ N(0, sigma0)``; the empirical covariance of ``L_delta`` converges
    to the transported covariance ``Xi_delta``.
    """
    if reps < 2:
        raise DimensionMismatch("reps must be at least 2")
    if vf is None:
        vf = xi_from_model(model)
    p = grid.dim
    n = grid.n_steps
    sigma0 = np.asarray(sigma0, dtype=float)
    w, q = np.linalg.eigh(0.5 * (sigma0 + sigma0.T))
    root = q * np.sqrt(np.maximum(w, 0.0))

    jacs = np.empty((n, p, p))
    sigs = np.empty((n, p, p))
    for i in range(n):
        jacs[i] = np.asarray(vf.d_xi(grid.points[i]), dtype=float)
        sigs[i] = np.asarray(model.diffusion_sigma(grid.points[i]), dtype=float)

    # per-trajectory draws in index order keep the result schedule-independent
    u0 = np.empty((reps, p))
    dw = np.empty((reps, n, p))
    for i in range(reps):
        rng = policy.stream_for(i)
        u0[i] = root @ rng.normal(size=p)
        dw[i] = rng.normal(size=(n, p))

    lam = u0
    for i in range(n):
        dt = grid.times[i + 1] - grid.times[i]
        lam = lam + (lam @ jacs[i].T) * dt + np.sqrt(dt) * (dw[:, i, :] @ sigs[i].T)
    require_finite(lam, "variation process simulation")
    cov = np.cov(lam, rowvar=False, ddof=1).reshape(p, p)
    return VariationResult(samples=lam, covariance=cov)


@dataclass(frozen=True)
class SlopeEstimate:
    """Richardson-extrapolated epsilon-squared slope of the family mean."""

    slope: np.ndarray
    stderr: np.ndarray
    epsilons: tuple[float, float]
    pairs: int


def epsilon_squared_slope(
    xi_batch: Callable[[np.ndarray], np.ndarray],
    sigma_batch: Callable[[np.ndarray], np.ndarray],
    zeta_batch: Callable[[np.ndarray], np.ndarray] | None,
    x0: np.ndarray,
    delta: float,
    n: int,
    epsilons: Sequence[float],
    reps: int,
    policy: RngPolicy,
) -> SlopeEstimate:
    """Estimate the epsilon-squared derivative of the family mean at epsilon zero.

    This is the stochastic oracle for the location parameter: with the mean
    of the epsilon-family expanding as ``x_delta + eps^2 I + o(eps^2)``, the
    estimated slope converges to the tangent location parameter.

    Uses antithetic increment pairs shared across both epsilon values (common
    random numbers), with two-point Richardson extrapolation in
    ``eps^2`` per pair; the standard error is taken over pair values.  The
    batch callables act on ``(m, p)`` state arrays (``sigma_batch`` returning
    ``(m, p, p)``), which keeps the oracle tractable at large rep counts.
    """
    eps1, eps2 = (float(e) for e in epsilons)
    if not (0.0 < eps1 < eps2):
        raise DimensionMismatch("epsilons must be two increasing positive values")
    npairs = reps // 2
    if npairs < 2:
        raise DimensionMismatch("reps must allow at least two antithetic pairs")
    x0 = np.asarray(x0, dtype=float)
    p = x0.size
    dt = delta / n

    # deterministic reference on the same Euler grid so discretization bias
    # cancels in the slope; zeta does not act at epsilon zero
    ref = x0.copy()[None, :]
    for _ in range(n):
        ref = ref + xi_batch(ref) * dt
    ref = ref[0]

    def advance(states: np.ndarray, eps: float, shocks: np.ndarray) -> np.ndarray:
        eps2_ = eps * eps
        drift = xi_batch(states)
        if zeta_batch is not None:
            drift = drift - eps2_ * zeta_batch(states)
        sig = sigma_batch(states)
        return states + drift * dt + eps * np.einsum("mij,mj->mi", sig, shocks)

    chunk = 4096
    pair_values = np.empty((npairs, p))
    e1sq, e2sq = eps1 * eps1, eps2 * eps2
    for lo in range(0, npairs, chunk):
        hi = min(lo + chunk, npairs)
        m = hi - lo
        dw = np.empty((m, n, p))
        for k in range(m):
            dw[k] = policy.stream_for(lo + k).normal(0.0, np.sqrt(dt), size=(n, p))
        ends = {}
        for eps in (eps1, eps2):
            plus = np.repeat(x0[None, :], m, axis=0)
            minus = plus.copy()
            for i in range(n):
                plus = advance(plus, eps, dw[:, i, :])
                minus = advance(minus, eps, -dw[:, i, :])
            ends[eps] = 0.5 * (plus + minus)
        s1 = (ends[eps1] - ref) / e1sq
        s2 = (ends[eps2] - ref) / e2sq
        pair_values[lo:hi] = (s1 * e2sq - s2 * e1sq) / (e2sq - e1sq)
    require_finite(pair_values, "epsilon-slope estimation")
    slope = pair_values.mean(axis=0)
    stderr = pair_values.std(axis=0, ddof=1) / np.sqrt(npairs)
    return SlopeEstimate(slope=slope, stderr=stderr, epsilons=(eps1, eps2), pairs=npairs)
