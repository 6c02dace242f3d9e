"""scikit-learn style facade over the sampler.

``X`` is the vector of observation times and ``y`` the (n_times, n_observed)
array of measurements of the network's observed species.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .bayes import Dataset, Posterior
from .io import load_network
from .kinetics import ForwardModel, IntegratorConfig
from .network import ReactionNetwork, enumerate_clusters
from .postprocess import derandomized_model_probs, raw_model_probs
from .sampler import SamplerConfig, Variant, run_chain
from .validation import check_network, check_observations, check_positive, check_times


class NetworkStructureSampler(BaseEstimator):
    """Reversible-jump sampler over reaction-network structure.

    After ``fit``: ``trace_``, ``model_probs_`` (raw visit frequencies),
    ``derandomized_probs_`` (None when clusters cannot be enumerated) and
    ``best_state_`` (highest log posterior seen).
    """

    def __init__(
        self,
        network="example1",
        noise_variance=1.0,
        variant="NA",
        n_steps=1000,
        burn_in=0,
        beta=0.5,
        seed=0,
        poisson_mean=1.5,
        rw_scale=0.1,
        rel_tol=1e-8,
        abs_tol=1e-10,
    ):
        self.network = network
        self.noise_variance = noise_variance
        self.variant = variant
        self.n_steps = n_steps
        self.burn_in = burn_in
        self.beta = beta
        self.seed = seed
        self.poisson_mean = poisson_mean
        self.rw_scale = rw_scale
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol

    def _network(self) -> ReactionNetwork:
        net = self.network if isinstance(self.network, ReactionNetwork) else load_network(self.network)
        return check_network(net)

    def _integrator(self) -> IntegratorConfig:
        return IntegratorConfig(rel_tol=self.rel_tol, abs_tol=self.abs_tol)

    def fit(self, X, y):
        net = self._network()
        times = check_times(X)
        obs = check_observations(y, times.size, len(net.observed))
        data = Dataset(times, obs, check_positive("noise_variance", self.noise_variance))
        cfg = SamplerConfig(
            variant=Variant(self.variant),
            beta=self.beta,
            n_steps=self.n_steps,
            burn_in=self.burn_in,
            seed=self.seed,
            poisson_mean=self.poisson_mean,
            rw_scale=self.rw_scale,
        )
        self.network_ = net
        self.posterior_ = Posterior(net, data, self._integrator())
        self.trace_ = run_chain(self.posterior_, cfg)
        self.model_probs_ = raw_model_probs(self.trace_, self.burn_in)
        try:
            clusters = enumerate_clusters(net)
            self.derandomized_probs_ = derandomized_model_probs(self.trace_, self.burn_in, clusters)
        except ValueError:
            self.derandomized_probs_ = None
        self.best_state_ = self.trace_.best_state
        return self

    def _check_fitted(self):
        if not hasattr(self, "trace_"):
            raise RuntimeError(f"{type(self).__name__} is not fitted; call fit first")

    def predict(self, X) -> np.ndarray:
        """Observed-species trajectories of the best model at times ``X``,
        shape (n_times, n_observed)."""
        self._check_fitted()
        times = check_times(X)
        net, st = self.network_, self.best_state_
        values = {s: float(v) for s, v in zip(net.parameter_slots, st.theta) if np.isfinite(v)}
        for r in net.reactions:
            if r.id in net.fixed_ids:
                values[(r.id, "f")] = r.log10_k
                if r.reversible:
                    values[(r.id, "r")] = r.log10_k_reverse
        fm = ForwardModel(net, times, self._integrator())
        return fm.predict(net.model_reactions(st.model), values).reshape(times.size, -1)

    def transform(self, X=None) -> np.ndarray:
        """Reaction-inclusion probabilities, one column per uncertain reaction."""
        self._check_fitted()
        bits = self.trace_["model_bits"][self.burn_in:]
        return np.array([[b[i] == "1" for i in range(len(self.network_.uncertain_ids))] for b in bits]).mean(
            axis=0, keepdims=True
        )

    def score(self, X, y) -> float:
        """Gaussian log likelihood of ``(X, y)`` under the best state."""
        pred = self.predict(X)
        obs = check_observations(y, pred.shape[0], pred.shape[1])
        s2 = float(self.noise_variance)
        return float(-0.5 * np.sum((obs - pred) ** 2) / s2 - 0.5 * obs.size * np.log(2 * np.pi * s2))
