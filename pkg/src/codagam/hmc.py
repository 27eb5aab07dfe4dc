"""Gradient-based MCMC: dynamic-trajectory HMC with warmup adaptation.

Trajectories grow by repeated doubling (up to ``max_tree_depth``) and the
next state is drawn multinomially along the trajectory, weighted by the
Hamiltonian error; doubling stops at a u-turn or a divergence.  Warmup
splits into a fast initial buffer (step size only), a slow middle phase of
doubling memoryless windows (diagonal mass matrix), and a fast terminal
buffer, with the step size tuned throughout by dual averaging toward the
target acceptance statistic.

Chains run sequentially with private RNG streams spawned from the seed,
so results are bit-reproducible for a given configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import pandas as pd
from scipy.special import ndtri

from .errors import AllDivergent, InitializationFailure, InsufficientDraws, InvalidSpec


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup_iterations: int = 1000
    sampling_iterations: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    divergence_threshold: float = 1000.0

    def __post_init__(self):
        if self.chains < 1:
            raise InvalidSpec("need at least one chain")
        if self.warmup_iterations < 100:
            raise InvalidSpec("warmup must be >= 100 iterations when adapting")
        if self.sampling_iterations < 1:
            raise InvalidSpec("need at least one sampling iteration")
        if not 0.0 < self.target_accept < 1.0:
            raise InvalidSpec("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise InvalidSpec("max_tree_depth must be >= 1")


@dataclass
class PosteriorDraws:
    """Posterior draws on the constrained scale, with provenance columns."""

    draws: np.ndarray  # S x P
    names: tuple[str, ...]
    logp: np.ndarray  # S, joint log-density of the unconstrained target
    divergent: np.ndarray  # S bool
    chain: np.ndarray  # S int, 0-based
    unconstrained: np.ndarray  # S x dim
    layout: object | None = None
    accept_stats: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_chains(self) -> int:
        return int(self.chain.max()) + 1 if self.chain.size else 0

    @property
    def draws_per_chain(self) -> int:
        return self.n_draws // max(self.n_chains, 1)

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def by_chain(self) -> np.ndarray:
        """Draws reshaped to (chains, draws_per_chain, P)."""
        order = np.argsort(self.chain, kind="stable")
        return self.draws[order].reshape(self.n_chains, self.draws_per_chain, -1)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.draws, columns=list(self.names))
        frame.insert(0, "chain__", self.chain + 1)
        frame["lp__"] = self.logp
        frame["divergent__"] = self.divergent.astype(int)
        return frame


class _State(NamedTuple):
    theta: np.ndarray
    momentum: np.ndarray
    grad: np.ndarray
    logp: float


class _Tree(NamedTuple):
    inner: _State
    outer: _State
    proposal: _State
    log_weight: float
    sum_alpha: float
    n_alpha: int
    stop: bool
    divergent: bool


def _kinetic(momentum: np.ndarray, inv_mass: np.ndarray) -> float:
    return 0.5 * float(momentum @ (inv_mass * momentum))


class _Hamiltonian:
    def __init__(self, target: Callable, inv_mass: np.ndarray, step: float,
                 divergence_threshold: float):
        self.target = target
        self.inv_mass = inv_mass
        self.step = step
        self.divergence_threshold = divergence_threshold

    def leapfrog(self, state: _State, direction: int) -> _State:
        eps = direction * self.step
        momentum = state.momentum + 0.5 * eps * state.grad
        theta = state.theta + eps * self.inv_mass * momentum
        logp, grad = self.target(theta)
        momentum = momentum + 0.5 * eps * grad
        return _State(theta, momentum, grad, logp)

    def energy(self, state: _State) -> float:
        return -state.logp + _kinetic(state.momentum, self.inv_mass)


def _uturn(inner: _State, outer: _State, direction: int, inv_mass: np.ndarray) -> bool:
    delta = direction * (outer.theta - inner.theta)
    return (
        delta @ (inv_mass * inner.momentum) < 0.0
        or delta @ (inv_mass * outer.momentum) < 0.0
    )


def _build_tree(
    ham: _Hamiltonian,
    state: _State,
    direction: int,
    depth: int,
    energy_0: float,
    rng: np.random.Generator,
) -> _Tree:
    if depth == 0:
        new = ham.leapfrog(state, direction)
        energy = ham.energy(new)
        delta = energy - energy_0
        if not math.isfinite(delta):
            delta = math.inf
        divergent = delta > ham.divergence_threshold
        log_weight = -delta if math.isfinite(delta) else -math.inf
        alpha = min(1.0, math.exp(min(-delta, 0.0)))
        return _Tree(new, new, new, log_weight, alpha, 1, divergent, divergent)
    first = _build_tree(ham, state, direction, depth - 1, energy_0, rng)
    if first.stop:
        return first
    second = _build_tree(ham, first.outer, direction, depth - 1, energy_0, rng)
    log_weight = np.logaddexp(first.log_weight, second.log_weight)
    proposal = first.proposal
    if math.log(rng.random()) < second.log_weight - log_weight:
        proposal = second.proposal
    stop = (
        second.stop
        or _uturn(first.inner, second.outer, direction, ham.inv_mass)
    )
    return _Tree(
        first.inner,
        second.outer,
        proposal,
        float(log_weight),
        first.sum_alpha + second.sum_alpha,
        first.n_alpha + second.n_alpha,
        stop,
        first.divergent or second.divergent,
    )


def _nuts_transition(
    ham: _Hamiltonian,
    theta: np.ndarray,
    logp: float,
    grad: np.ndarray,
    max_depth: int,
    rng: np.random.Generator,
):
    momentum = rng.standard_normal(theta.size) / np.sqrt(ham.inv_mass)
    current = _State(theta, momentum, grad, logp)
    energy_0 = ham.energy(current)
    minus = plus = current
    proposal = current
    log_sum_w = 0.0
    sum_alpha = 0.0
    n_alpha = 0
    divergent = False
    depth = 0
    for depth in range(max_depth):
        direction = 1 if rng.random() < 0.5 else -1
        start = plus if direction == 1 else minus
        tree = _build_tree(ham, start, direction, depth, energy_0, rng)
        sum_alpha += tree.sum_alpha
        n_alpha += tree.n_alpha
        divergent = divergent or tree.divergent
        if tree.divergent:
            break
        if not tree.stop:
            # biased progressive sampling favors the new subtree
            if math.log(rng.random()) < tree.log_weight - log_sum_w:
                proposal = tree.proposal
            log_sum_w = float(np.logaddexp(log_sum_w, tree.log_weight))
        if direction == 1:
            plus = tree.outer
        else:
            minus = tree.outer
        if tree.stop or _uturn(minus, plus, 1, ham.inv_mass):
            break
    accept_stat = sum_alpha / max(n_alpha, 1)
    return proposal, divergent, accept_stat, depth + 1


def _find_initial_step(
    target, theta, logp, grad, inv_mass, rng: np.random.Generator
) -> float:
    step = 1.0
    momentum = rng.standard_normal(theta.size) / np.sqrt(inv_mass)
    state = _State(theta, momentum, grad, logp)
    ham = _Hamiltonian(target, inv_mass, step, math.inf)
    energy_0 = ham.energy(state)

    def log_ratio(step_size: float) -> float:
        ham.step = step_size
        new = ham.leapfrog(state, 1)
        value = energy_0 - ham.energy(new)
        return value if math.isfinite(value) else -math.inf

    ratio = log_ratio(step)
    sign = 1.0 if ratio > math.log(0.5) else -1.0
    for _ in range(50):
        if sign * ratio <= sign * math.log(0.5):
            break
        step *= 2.0**sign
        if not 1e-10 < step < 1e7:
            break
        ratio = log_ratio(step)
    return step


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, initial_step: float, target_accept: float,
                 gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * initial_step)
        self.target = target_accept
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.count = 0
        self.h_bar = 0.0
        self.log_step_bar = 0.0
        self.log_step = math.log(initial_step)

    def update(self, accept_stat: float) -> float:
        self.count += 1
        frac = 1.0 / (self.count + self.t0)
        self.h_bar = (1 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_step = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        weight = self.count**-self.kappa
        self.log_step_bar = (1 - weight) * self.log_step_bar + weight * self.log_step
        return math.exp(self.log_step)

    @property
    def adapted_step(self) -> float:
        return math.exp(self.log_step_bar)


class _Welford:
    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, value: np.ndarray) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.count - 1)
        # regularize toward unit scale, as in Stan's windowed adaptation
        shrink = self.count / (self.count + 5.0)
        return shrink * var + 1e-3 * (1.0 - shrink)


def _slow_window_ends(warmup: int) -> tuple[int, int, list[int]]:
    """(init_buffer_end, term_buffer_start, mass-update iterations)."""
    init_end = max(int(0.15 * warmup), 1)
    term_start = warmup - max(int(0.10 * warmup), 1)
    ends = []
    size = max(25, (term_start - init_end) // 30)
    pos = init_end
    while pos < term_start:
        nxt = pos + size
        if nxt + 2 * size > term_start:
            nxt = term_start
        ends.append(nxt)
        pos = nxt
        size *= 2
    return init_end, term_start, ends


def _run_chain(
    target: Callable,
    dim: int,
    config: SamplerConfig,
    rng: np.random.Generator,
    initial: np.ndarray | None,
):
    # find a finite, differentiable starting point
    theta = logp = grad = None
    for attempt in range(100):
        candidate = (
            initial
            if initial is not None and attempt == 0
            else rng.uniform(-config.init_radius, config.init_radius, size=dim)
        )
        value, gradient = target(np.asarray(candidate, dtype=float))
        if math.isfinite(value) and np.all(np.isfinite(gradient)):
            theta, logp, grad = np.asarray(candidate, dtype=float), value, gradient
            break
    if theta is None:
        raise InitializationFailure(
            "no finite log-density found in 100 initialization attempts"
        )

    inv_mass = np.ones(dim)
    step = _find_initial_step(target, theta, logp, grad, inv_mass, rng)
    averaging = _DualAveraging(step, config.target_accept)
    welford = _Welford(dim)
    init_end, term_start, window_ends = _slow_window_ends(config.warmup_iterations)
    ham = _Hamiltonian(target, inv_mass, step, config.divergence_threshold)

    for it in range(config.warmup_iterations):
        state, _, accept_stat, _ = _nuts_transition(
            ham, theta, logp, grad, config.max_tree_depth, rng
        )
        theta, logp, grad = state.theta, state.logp, state.grad
        ham.step = averaging.update(accept_stat)
        if init_end <= it < term_start:
            welford.push(theta)
            if (it + 1) in window_ends:
                ham.inv_mass = welford.variance()
                welford = _Welford(dim)
                step = _find_initial_step(target, theta, logp, grad, ham.inv_mass, rng)
                averaging = _DualAveraging(step, config.target_accept)
                ham.step = step

    ham.step = averaging.adapted_step
    thetas = np.empty((config.sampling_iterations, dim))
    logps = np.empty(config.sampling_iterations)
    divergences = np.zeros(config.sampling_iterations, dtype=bool)
    accept_stats = np.empty(config.sampling_iterations)
    for it in range(config.sampling_iterations):
        state, divergent, accept_stat, _ = _nuts_transition(
            ham, theta, logp, grad, config.max_tree_depth, rng
        )
        theta, logp, grad = state.theta, state.logp, state.grad
        thetas[it] = theta
        logps[it] = logp
        divergences[it] = divergent
        accept_stats[it] = accept_stat
    if divergences.all():
        raise AllDivergent("every post-warmup transition diverged")
    return thetas, logps, divergences, accept_stats


def sample(
    target: Callable,
    dim: int,
    config: SamplerConfig,
    constrain: Callable | None = None,
    names: tuple[str, ...] | None = None,
    layout=None,
    initial: np.ndarray | None = None,
) -> PosteriorDraws:
    """Draw from a differentiable log-density.

    ``target(theta)`` must return ``(log_density, gradient)``.  ``constrain``
    optionally maps each unconstrained draw to a reporting scale (identity
    by default); ``names`` labels the constrained columns.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    all_theta, all_logp, all_div, all_chain, all_accept = [], [], [], [], []
    for c in range(config.chains):
        rng = np.random.default_rng(seeds[c])
        thetas, logps, divs, accepts = _run_chain(target, dim, config, rng, initial)
        all_theta.append(thetas)
        all_logp.append(logps)
        all_div.append(divs)
        all_accept.append(accepts)
        all_chain.append(np.full(config.sampling_iterations, c))
    unconstrained = np.vstack(all_theta)
    if constrain is None:
        draws = unconstrained.copy()
    else:
        draws = np.vstack([constrain(t) for t in unconstrained])
    if names is None:
        names = tuple(f"theta[{i + 1}]" for i in range(draws.shape[1]))
    return PosteriorDraws(
        draws=draws,
        names=tuple(names),
        logp=np.concatenate(all_logp),
        divergent=np.concatenate(all_div),
        chain=np.concatenate(all_chain),
        unconstrained=unconstrained,
        layout=layout,
        accept_stats=np.concatenate(all_accept),
    )


# --- convergence diagnostics -------------------------------------------------


def _rank_normalize(matrix: np.ndarray) -> np.ndarray:
    """Rank-normalize pooled draws (chains x iterations)."""
    flat = matrix.reshape(-1)
    order = np.argsort(flat, kind="stable")
    ranks = np.empty_like(flat)
    ranks[order] = np.arange(1, flat.size + 1, dtype=float)
    # average ties
    values, inverse = np.unique(flat, return_inverse=True)
    if values.size < flat.size:
        sums = np.bincount(inverse, weights=ranks)
        counts = np.bincount(inverse)
        ranks = (sums / counts)[inverse]
    z = ndtri((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(matrix.shape)


def _split_chains(matrix: np.ndarray) -> np.ndarray:
    chains, n = matrix.shape
    half = n // 2
    return np.vstack([matrix[:, :half], matrix[:, half : 2 * half]])


def _rhat_single(split: np.ndarray) -> float:
    m, n = split.shape
    chain_means = split.mean(axis=1)
    within = split.var(axis=1, ddof=1).mean()
    between = n * chain_means.var(ddof=1)
    var_plus = (n - 1) / n * within + between / n
    if within <= 0:
        return np.nan
    return math.sqrt(var_plus / within)


def _ess_single(split: np.ndarray) -> float:
    m, n = split.shape
    within = split.var(axis=1, ddof=1).mean()
    chain_means = split.mean(axis=1)
    var_plus = (n - 1) / n * within + chain_means.var(ddof=1)
    if within <= 0 or var_plus <= 0:
        return np.nan
    # per-chain autocovariances via FFT
    centered = split - chain_means[:, None]
    size = 2 ** math.ceil(math.log2(2 * n))
    freq = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(freq * np.conj(freq), n=size, axis=1)[:, :n].real / n
    mean_acov = acov.mean(axis=0)
    rho = 1.0 - (within - mean_acov) / var_plus
    # sum lag pairs (rho_1+rho_2), (rho_3+rho_4), ... until a pair turns
    # negative (Geyer initial positive sequence); tau = 1 + 2 sum rho_t
    total = 0.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        total += pair
        t += 2
    tau = max(1.0 + 2.0 * total, 1.0 / math.log10(m * n + 10.0))
    return m * n / tau


def diagnostics(draws: PosteriorDraws) -> pd.DataFrame:
    """Split-Rhat (rank-normalized) and effective sample size per parameter."""
    if draws.n_chains < 2:
        raise InsufficientDraws("diagnostics need at least two chains")
    if draws.draws_per_chain < 100:
        raise InsufficientDraws("diagnostics need at least 100 draws per chain")
    by_chain = draws.by_chain()
    rows = []
    for j, name in enumerate(draws.names):
        matrix = by_chain[:, :, j]
        if np.all(matrix == matrix.flat[0]):
            rows.append((name, np.nan, np.nan, True))
            continue
        split = _split_chains(matrix)
        rhat = _rhat_single(_rank_normalize(split))
        ess = _ess_single(split)
        rows.append((name, rhat, ess, False))
    frame = pd.DataFrame(rows, columns=["parameter", "rhat", "ess", "constant"])
    frame["n_divergent"] = int(draws.divergent.sum())
    return frame
