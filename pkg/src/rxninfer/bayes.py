"""Prior, likelihood and posterior in log10 rate-constant coordinates.

Every uncertain rate constant owns a *slot*: its position in
``net.parameter_slots``. Parameter vectors passed around the sampler are
full-length slot arrays with ``NaN`` for slots of excluded reactions.

The likelihood of a model only depends on its effective network, so the
:class:`Posterior` engine always integrates the effective network.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize

from .kinetics import ForwardModel, IntegrationError, IntegratorConfig, RateParameters
from .network import EffectiveNetworkCache, EffectiveNetworkKey, ModelIndicator, ReactionNetwork

LOG_2PI = math.log(2.0 * math.pi)
NEG_INF = -math.inf

LogDensityValue = float


class ModeNotFound(RuntimeError):
    """No optimizer start converged."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SingularCovariance(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    times: np.ndarray
    observations: np.ndarray
    noise_variance: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        obs = np.asarray(self.observations, dtype=float).ravel()
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "observations", obs)
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        if times.size and obs.size % times.size:
            raise ValueError("observation count is not a multiple of the number of times")
        if times.size == 0 and obs.size:
            raise ValueError("observations given without times")
        if np.any(np.diff(times) <= 0) or (times.size and times[0] < 0):
            raise ValueError("times must be strictly increasing and non-negative")

    @property
    def d(self) -> int:
        return int(self.observations.size)

    def check(self, net: ReactionNetwork) -> None:
        if self.d != self.times.size * len(net.observed):
            raise ValueError(
                f"dataset has {self.d} values, expected {self.times.size} x {len(net.observed)} observed species"
            )

    @classmethod
    def empty(cls, noise_variance: float = 1.0) -> "Dataset":
        return cls(np.empty(0), np.empty(0), noise_variance)


@dataclass(frozen=True)
class OptimizerConfig:
    grad_tol: float = 1e-5
    max_evals: int = 200
    n_starts: int = 3
    grad_step: float = 1e-3
    bound_sigmas: float = 10.0
    # A stalled line search whose gradient is already this small is taken as
    # converged: ODE solver noise keeps FD gradients from reaching grad_tol.
    stall_grad_tol: float = 1e-2


@dataclass(frozen=True)
class FDConfig:
    h: float = 1e-3
    eig_floor: float = 1e-8


@dataclass(frozen=True)
class ConditionalGaussian:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.covariance, dtype=float)
        object.__setattr__(self, "covariance", cov)
        chol = np.linalg.cholesky(cov) if cov.size else cov
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self._chol @ rng.standard_normal(self.dim)

    def logpdf(self, x) -> float:
        if self.dim == 0:
            return 0.0
        z = np.linalg.solve(self._chol, np.asarray(x, dtype=float) - self.mean)
        return float(-0.5 * z @ z - np.log(np.diag(self._chol)).sum() - 0.5 * self.dim * LOG_2PI)


def normal_logpdf(x, mean, var) -> float:
    x, mean, var = (np.asarray(a, dtype=float) for a in (x, mean, var))
    return float(np.sum(-0.5 * (LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var))


# -- generic optimisation / Laplace machinery -------------------------------------


def central_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_hessian(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    f0 = f(x)
    H = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h**2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * h**2)
    return H


def find_mode(
    logf: Callable[[np.ndarray], float],
    starts: Sequence[np.ndarray],
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    bounds: Sequence[tuple[float, float]] | None = None,
) -> np.ndarray:
    """Maximise ``logf`` with L-BFGS-B on central-difference gradients.

    Starts are tried in order; the first converged result is returned.
    Convergence means scipy reports success, or the line search stalled
    with a gradient norm below ``stall_grad_tol``.
    Non-finite values are replaced by a large penalty so line searches
    back off from failed integrations.
    """
    h = opt_cfg.grad_step

    def neg(x):
        v = logf(x)
        return -v if np.isfinite(v) else 1e100

    def fun_and_grad(x):
        v = neg(x)
        g = np.empty(x.size)
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = h
            g[i] = (neg(x + e) - neg(x - e)) / (2 * h)
        return v, g

    best = None
    for x0 in starts[: max(1, opt_cfg.n_starts)]:
        res = optimize.minimize(
            fun_and_grad,
            np.asarray(x0, dtype=float),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxfun": opt_cfg.max_evals, "gtol": opt_cfg.grad_tol, "maxiter": opt_cfg.max_evals},
        )
        if best is None or res.fun < best.fun:
            best = res
        if res.fun >= 1e100:
            continue
        if res.success or np.linalg.norm(res.jac) <= opt_cfg.stall_grad_tol:
            return np.asarray(res.x, dtype=float)
    raise ModeNotFound("optimizer did not converge from any start", best=None if best is None else best.x)


def find_mode_lsq(
    residuals: Callable[[np.ndarray], np.ndarray],
    starts: Sequence[np.ndarray],
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    bounds: Sequence[tuple[float, float]] | None = None,
) -> np.ndarray:
    """Maximise ``-0.5 * |residuals(x)|^2`` by trust-region Gauss-Newton.

    The Jacobian is taken by central differences with absolute step
    ``grad_step``. A start is accepted once scipy reports convergence on
    step size, cost change or gradient. An absolute gradient test alone is
    not used: with small noise variances the residuals are large and the
    integrator noise in the Jacobian keeps ``J^T r`` well above any fixed
    tolerance at the optimum.
    """
    h = opt_cfg.grad_step
    if bounds is None:
        lo, hi = -np.inf, np.inf
    else:
        lo = np.array([b[0] for b in bounds], dtype=float)
        hi = np.array([b[1] for b in bounds], dtype=float)

    def jac(x):
        cols = []
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = h
            cols.append((residuals(x + e) - residuals(x - e)) / (2 * h))
        return np.column_stack(cols)

    best = None
    for x0 in starts[: max(1, opt_cfg.n_starts)]:
        x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
        res = optimize.least_squares(
            residuals, x0, jac=jac, bounds=(lo, hi), method="trf",
            max_nfev=opt_cfg.max_evals, xtol=1e-6, ftol=1e-8, gtol=opt_cfg.grad_tol,
        )
        if best is None or res.cost < best.cost:
            best = res
        if res.status > 0 and np.all(np.isfinite(res.x)) and res.cost < 1e19:
            return np.asarray(res.x, dtype=float)
    raise ModeNotFound("optimizer did not converge from any start", best=None if best is None else best.x)


def laplace_covariance(
    logf: Callable[[np.ndarray], float],
    mode: np.ndarray,
    fallback_precision: np.ndarray,
    fd_cfg: FDConfig = FDConfig(),
) -> np.ndarray:
    """Sigma = (-H)^-1 at ``mode``; eigen-directions with curvature below
    ``eig_floor`` take their curvature from ``fallback_precision`` instead."""
    H = central_hessian(logf, mode, fd_cfg.h)
    if not np.all(np.isfinite(H)):
        raise SingularCovariance("non-finite Hessian")
    P = -0.5 * (H + H.T)
    w, V = np.linalg.eigh(P)
    bad = w < fd_cfg.eig_floor
    if np.any(bad):
        prec = np.diag(np.asarray(fallback_precision, dtype=float))
        for k in np.flatnonzero(bad):
            w[k] = V[:, k] @ prec @ V[:, k]
    if np.any(w < fd_cfg.eig_floor) or not np.all(np.isfinite(w)):
        raise SingularCovariance("covariance singular after regularization")
    cov = (V / w) @ V.T
    return 0.5 * (cov + cov.T)


# -- slot helpers -------------------------------------------------------------------


def slot_vector(net: ReactionNetwork, params) -> np.ndarray:
    """Full slot array from a slot array, ``RateParameters`` or a
    ``{(rid, dir): log10_k}`` mapping; missing slots are NaN."""
    slots = net.parameter_slots
    if isinstance(params, np.ndarray):
        if params.shape != (len(slots),):
            raise ValueError(f"parameter vector must have length {len(slots)}")
        return params.astype(float)
    values = params.log10_k if isinstance(params, RateParameters) else params
    return np.array([float(values.get(s, np.nan)) for s in slots])


def included_slots(net: ReactionNetwork, reaction_ids: Iterable[int]) -> np.ndarray:
    ids = set(reaction_ids)
    return np.array([i for i, (rid, _) in enumerate(net.parameter_slots) if rid in ids], dtype=int)


def _model_ids(net, model):
    return net.model_reactions(model) if isinstance(model, ModelIndicator) else frozenset(model)


def uniform_model_log_prior(net: ReactionNetwork) -> Callable[[ModelIndicator], float]:
    value = -len(net.uncertain_ids) * math.log(2.0)
    return lambda model: value


# -- spec-level functions -------------------------------------------------------------


def log_prior(net: ReactionNetwork, model, params) -> LogDensityValue:
    theta = slot_vector(net, params)
    idx = included_slots(net, _model_ids(net, model))
    if np.any(np.isnan(theta[idx])):
        missing = [net.parameter_slots[i] for i in idx if np.isnan(theta[i])]
        raise ValueError(f"no value for uncertain rate constants {missing}")
    if idx.size == 0:
        return 0.0
    priors = net.slot_priors()
    mean = np.array([priors[i].mean for i in idx])
    var = np.array([priors[i].variance for i in idx])
    return normal_logpdf(theta[idx], mean, var)


def gaussian_log_likelihood(residual: np.ndarray, noise_variance: float) -> float:
    d = residual.size
    return float(-0.5 * d * math.log(2 * math.pi * noise_variance) - residual @ residual / (2 * noise_variance))


def log_likelihood(
    net: ReactionNetwork,
    model,
    params,
    data: Dataset,
    cfg: IntegratorConfig = IntegratorConfig(),
    restrict_to_effective_network: bool = False,
) -> LogDensityValue:
    """Gaussian log-likelihood; ``-inf`` when the forward solve fails."""
    post = Posterior(net, data, cfg)
    ids = _model_ids(net, model)
    if restrict_to_effective_network:
        ids = frozenset(post.en(net.model_from_reactions(ids)).reaction_ids)
    return post.log_likelihood(ids, slot_vector(net, params))


def log_posterior(
    net: ReactionNetwork,
    model: ModelIndicator,
    params,
    data: Dataset,
    cfg: IntegratorConfig = IntegratorConfig(),
    model_log_prior: Callable[[ModelIndicator], float] | None = None,
) -> LogDensityValue:
    post = Posterior(net, data, cfg, model_log_prior=model_log_prior)
    return post.log_target(model, slot_vector(net, params))


def _fixed_vector(net, fixed) -> np.ndarray:
    theta = np.full(len(net.parameter_slots), np.nan)
    items = fixed.items() if isinstance(fixed, Mapping) else fixed
    for i, v in items:
        theta[i] = float(v)
    return theta


def conditional_mode(
    net: ReactionNetwork,
    model: ModelIndicator,
    fixed,
    free: Sequence[int],
    data: Dataset,
    cfg: IntegratorConfig = IntegratorConfig(),
    opt_cfg: OptimizerConfig = OptimizerConfig(),
) -> np.ndarray:
    """Mode of the conditional posterior over the ``free`` slots with the
    ``fixed`` slots (``(slot, value)`` pairs or mapping) held."""
    post = Posterior(net, data, cfg, opt_cfg=opt_cfg)
    return post.gaussian(model, free, _fixed_vector(net, fixed)).mean


def conditional_gaussian(
    net: ReactionNetwork,
    model: ModelIndicator,
    fixed,
    free: Sequence[int],
    data: Dataset,
    cfg: IntegratorConfig = IntegratorConfig(),
    fd_cfg: FDConfig = FDConfig(),
    opt_cfg: OptimizerConfig = OptimizerConfig(),
) -> ConditionalGaussian:
    post = Posterior(net, data, cfg, opt_cfg=opt_cfg, fd_cfg=fd_cfg)
    return post.gaussian(model, free, _fixed_vector(net, fixed))


# -- cached engine ---------------------------------------------------------------------


class Posterior:
    """Posterior evaluation with memoised effective networks, likelihoods
    and conditional Gaussians, shared by the sampler and the estimators.

    Conditional Gaussians are cached on (effective network, free slots,
    values of the remaining effective-network slots); identical inputs
    therefore always produce bit-identical proposals.
    """

    def __init__(
        self,
        net: ReactionNetwork,
        data: Dataset,
        cfg: IntegratorConfig = IntegratorConfig(),
        model_log_prior: Callable[[ModelIndicator], float] | None = None,
        opt_cfg: OptimizerConfig = OptimizerConfig(),
        fd_cfg: FDConfig = FDConfig(),
        en_cache: EffectiveNetworkCache | None = None,
        cache_size: int = 4096,
    ):
        data.check(net)
        self.net = net
        self.data = data
        self.cfg = cfg
        self.opt_cfg = opt_cfg
        self.fd_cfg = fd_cfg
        self.model_log_prior = model_log_prior or uniform_model_log_prior(net)
        self.en = en_cache or EffectiveNetworkCache(net)
        self.forward = ForwardModel(net, data.times, cfg)
        self.slots = net.parameter_slots
        priors = net.slot_priors()
        self.prior_mean = np.array([p.mean for p in priors], dtype=float)
        self.prior_var = np.array([p.variance for p in priors], dtype=float)
        self.prior_std = np.sqrt(self.prior_var)
        self._slot_cache: dict[frozenset, np.ndarray] = {}
        self._ll_cache: OrderedDict = OrderedDict()
        self._gauss_cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self.n_gaussians = 0

    # -- indices -----------------------------------------------------------
    def slots_of(self, reaction_ids: Iterable[int]) -> np.ndarray:
        key = frozenset(reaction_ids)
        idx = self._slot_cache.get(key)
        if idx is None:
            idx = self._slot_cache[key] = included_slots(self.net, key)
        return idx

    def model_slots(self, model: ModelIndicator) -> np.ndarray:
        return self.slots_of(self.net.model_reactions(model))

    def en_slots(self, key: EffectiveNetworkKey) -> np.ndarray:
        return self.slots_of(key.reaction_ids)

    # -- densities -----------------------------------------------------------
    def log_prior_slots(self, idx: np.ndarray, theta: np.ndarray) -> float:
        if idx.size == 0:
            return 0.0
        z = theta[idx] - self.prior_mean[idx]
        return float(np.sum(-0.5 * (LOG_2PI + np.log(self.prior_var[idx])) - 0.5 * z * z / self.prior_var[idx]))

    def log_likelihood(self, reaction_ids: Iterable[int], theta: np.ndarray) -> float:
        ids = tuple(sorted(reaction_ids))
        if self.data.d == 0:
            return 0.0
        idx = self.slots_of(ids)
        vals = theta[idx]
        key = (ids, vals.tobytes())
        hit = self._ll_cache.get(key)
        if hit is not None:
            self._ll_cache.move_to_end(key)
            return hit
        if np.any(np.isnan(vals)):
            raise ValueError("likelihood requested with missing rate constants")
        try:
            pred = self.forward.predict(ids, {self.slots[i]: float(theta[i]) for i in idx})
            ll = gaussian_log_likelihood(self.data.observations - pred, self.data.noise_variance)
        except IntegrationError:
            ll = NEG_INF
        if not math.isfinite(ll):
            ll = NEG_INF
        self._remember(self._ll_cache, key, ll)
        return ll

    def log_likelihood_en(self, key: EffectiveNetworkKey, theta: np.ndarray) -> float:
        return self.log_likelihood(key.reaction_ids, theta)

    def log_target(self, model: ModelIndicator, theta: np.ndarray) -> float:
        """Joint log posterior over all included coordinates."""
        ll = self.log_likelihood_en(self.en(model), theta)
        if ll == NEG_INF:
            return NEG_INF
        return self.model_log_prior(model) + self.log_prior_slots(self.model_slots(model), theta) + ll

    def log_target_en(self, model: ModelIndicator, theta: np.ndarray) -> float:
        """Log posterior with non-effective coordinates integrated out."""
        key = self.en(model)
        ll = self.log_likelihood_en(key, theta)
        if ll == NEG_INF:
            return NEG_INF
        return self.model_log_prior(model) + self.log_prior_slots(self.en_slots(key), theta) + ll

    # -- conditional Gaussians --------------------------------------------------
    def conditional_logpost(self, key: EffectiveNetworkKey, free: np.ndarray, theta: np.ndarray):
        base = theta.copy()

        def f(u):
            x = base.copy()
            x[free] = u
            ll = self.log_likelihood_en(key, x)
            if ll == NEG_INF:
                return NEG_INF
            return self.log_prior_slots(free, x) + ll

        return f

    def conditional_residuals(self, key: EffectiveNetworkKey, free: np.ndarray, theta: np.ndarray):
        """Residual vector whose half squared norm is the negative
        conditional log posterior up to a constant."""
        base = theta.copy()
        idx = self.en_slots(key)
        ids = key.reaction_ids
        scale = 1.0 / math.sqrt(self.data.noise_variance)
        n = self.data.observations.size + free.size

        def r(u):
            x = base.copy()
            x[free] = u
            prior = (u - self.prior_mean[free]) / self.prior_std[free]
            try:
                pred = self.forward.predict(ids, {self.slots[i]: float(x[i]) for i in idx})
            except IntegrationError:
                return np.full(n, 1e10)
            data = ((self.data.observations - pred) * scale).ravel()
            if not np.all(np.isfinite(data)):
                return np.full(n, 1e10)
            return np.concatenate([data, prior])

        return r

    def gaussian(self, model: ModelIndicator, free: Sequence[int], theta: np.ndarray) -> ConditionalGaussian:
        """Laplace approximation of p(theta[free] | rest, model, data).

        Free slots outside the model's effective network are exactly
        prior-distributed and form their own diagonal block.
        """
        free = np.array(sorted(set(int(i) for i in free)), dtype=int)
        key = self.en(model)
        en_idx = self.en_slots(key)
        inside = np.array([i for i in free if i in set(en_idx)], dtype=int)
        held = np.array([i for i in en_idx if i not in set(inside)], dtype=int)
        held_vals = theta[held]
        if np.any(np.isnan(held_vals)):
            raise ValueError("conditioning values missing for effective-network slots")
        ckey = (key.reaction_ids, tuple(free), tuple(inside), held_vals.tobytes())
        hit = self._gauss_cache.get(ckey)
        if hit is not None:
            self._gauss_cache.move_to_end(ckey)
            return hit

        mean = self.prior_mean[free].copy()
        cov = np.diag(self.prior_var[free])
        if inside.size:
            if self.data.d == 0:
                mu_in, cov_in = self.prior_mean[inside], np.diag(self.prior_var[inside])
            else:
                mu_in, cov_in = self._laplace(key, inside, theta)
            pos = np.searchsorted(free, inside)
            mean[pos] = mu_in
            cov[np.ix_(pos, pos)] = cov_in
        self.n_gaussians += 1
        g = ConditionalGaussian(mean, cov)
        self._remember(self._gauss_cache, ckey, g)
        return g

    def _laplace(self, key, inside, theta):
        f = self.conditional_logpost(key, inside, theta)
        m, s = self.prior_mean[inside], self.prior_std[inside]
        starts = [m, m + s, m - s]
        width = self.opt_cfg.bound_sigmas * s
        bounds = list(zip(m - width, m + width))
        r = self.conditional_residuals(key, inside, theta)
        mode = find_mode_lsq(r, starts, self.opt_cfg, bounds=bounds)
        cov = laplace_covariance(f, mode, 1.0 / self.prior_var[inside], self.fd_cfg)
        return mode, cov

    def _remember(self, cache: OrderedDict, key, value):
        cache[key] = value
        if len(cache) > self._cache_size:
            cache.popitem(last=False)
