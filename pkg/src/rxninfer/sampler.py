"""Reversible-jump MCMC over reaction-network models and rate constants.

Four between-model schemes share one jump construction. A jump from
``(M, theta)`` to ``(M', theta')`` redraws a set ``X`` of slots:

* NuA      -- the toggled reaction's slots;
* NA       -- plus every slot whose reaction enters or leaves the
  effective network;
* SensNuA  -- toggled slots plus a sensitivity-chosen subset of the
  common coordinates;
* SensNA   -- NA's set plus a sensitivity-chosen subset of the common
  effective-network coordinates.

Slots of ``X`` present in ``M'`` are drawn from the conditional Gaussian of
``M'``; the reverse move would redraw the slots of ``X`` present in ``M``
from the conditional Gaussian of ``M``. Because ``X`` is symmetric in the
two endpoints, forward and reverse ratios cancel exactly.

All variants target the joint posterior over every included coordinate.
Coordinates outside the effective network are exactly prior-distributed,
so their Gaussian block is the prior itself.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

import numpy as np

from .bayes import ModeNotFound, NEG_INF, Posterior, SingularCovariance
from .kinetics import IntegrationError
from .network import EffectiveNetworkKey, ModelIndicator

log = logging.getLogger(__name__)

MOVE_TYPES = ("within", "birth", "death", "swap-updated")


class Variant(str, Enum):
    NUA = "NuA"
    NA = "NA"
    SENS_NUA = "SensNuA"
    SENS_NA = "SensNA"

    @property
    def network_aware(self) -> bool:
        return self in (Variant.NA, Variant.SENS_NA)

    @property
    def sensitivity(self) -> bool:
        return self in (Variant.SENS_NUA, Variant.SENS_NA)


@dataclass(frozen=True)
class SamplerConfig:
    variant: Variant = Variant.NA
    beta: float = 0.5
    n_steps: int = 1000
    seed: int = 0
    chain_index: int = 0
    poisson_mean: float = 1.5
    n_sens_draws: int = 3
    sens_step: float = 1e-3
    rw_scale: float = 0.1
    adapt: bool = True
    burn_in: int = 0
    target_accept: float = 0.3
    snapshot_every: int = 0
    check_reciprocity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if not self.poisson_mean > 0:
            raise ValueError("poisson_mean must be positive")
        if self.n_steps < 0 or self.burn_in < 0 or self.snapshot_every < 0:
            raise ValueError("n_steps, burn_in and snapshot_every must be non-negative")
        if self.n_sens_draws < 1:
            raise ValueError("n_sens_draws must be positive")
        if not self.rw_scale > 0:
            raise ValueError("rw_scale must be positive")


@dataclass
class ChainState:
    """One chain position. ``theta`` spans all slots; excluded ones are NaN."""

    model: ModelIndicator
    theta: np.ndarray
    en_key: EffectiveNetworkKey
    log_post: float

    @classmethod
    def build(cls, post: Posterior, model: ModelIndicator, theta: np.ndarray) -> "ChainState":
        theta = np.array(theta, dtype=float)
        mask = np.zeros(theta.size, dtype=bool)
        mask[post.model_slots(model)] = True
        theta[~mask] = np.nan
        if np.any(np.isnan(theta[mask])):
            raise ValueError("state is missing values for included rate constants")
        return cls(model, theta, post.en(model), post.log_target(model, theta))


@dataclass(frozen=True)
class SensitivityIndex:
    reaction_id: int
    index: float


@dataclass
class MoveResult:
    state: ChainState
    accepted: bool
    move_type: str
    proposed: ModelIndicator
    proposed_en: EffectiveNetworkKey
    log_alpha: float = math.nan
    log_alpha_reverse: float = math.nan
    failure: str = ""


TRACE_COLUMNS = (
    "step",
    "from_bits",
    "from_en_id",
    "model_bits",
    "en_id",
    "log_post",
    "move_type",
    "accepted",
    "proposed_bits",
    "proposed_en_id",
    "log_alpha",
    "log_alpha_reverse",
    "failure",
)


@dataclass
class Trace:
    """Per-step records in columnar form, plus the initial state and
    periodic parameter snapshots."""

    uncertain_ids: tuple[int, ...]
    slot_names: tuple[str, ...]
    initial: dict = field(default_factory=dict)
    columns: dict = field(default_factory=lambda: {c: [] for c in TRACE_COLUMNS})
    snapshots: list = field(default_factory=list)
    final_state: ChainState | None = None
    best_state: ChainState | None = None

    def append(self, **row) -> None:
        for c in TRACE_COLUMNS:
            self.columns[c].append(row[c])

    def __len__(self) -> int:
        return len(self.columns["step"])

    def __getitem__(self, column: str) -> list:
        return self.columns[column]

    @property
    def counters(self) -> dict[str, dict[str, int]]:
        out = {m: {"attempted": 0, "accepted": 0} for m in MOVE_TYPES}
        for mt, acc in zip(self.columns["move_type"], self.columns["accepted"]):
            out[mt]["attempted"] += 1
            out[mt]["accepted"] += int(acc)
        return out

    def rows(self):
        return zip(*(self.columns[c] for c in TRACE_COLUMNS))

    def snapshot_header(self) -> list[str]:
        return ["step", "model_bits", *self.slot_names]

    def snapshot_rows(self):
        for step, bits, theta in self.snapshots:
            yield [step, bits, *(float(v) for v in theta)]


def slot_name(slot: tuple[int, str]) -> str:
    rid, d = slot
    return f"k{rid}{d}"


# -- elementary moves --------------------------------------------------------------


def propose_model(current: ModelIndicator, rng: np.random.Generator) -> tuple[ModelIndicator, float, float]:
    """Toggle one uniformly chosen uncertain reaction; symmetric, so
    ``log q_fwd == log q_rev == -log N``."""
    n = len(current)
    if n == 0:
        raise ValueError("no uncertain reactions to toggle")
    pos = int(rng.integers(n))
    lq = -math.log(n)
    return current.toggle(pos), lq, lq


class ChainContext:
    """Everything a move needs besides the state: posterior engine, config,
    random stream, step-size adaptation and sensitivity cache."""

    def __init__(self, post: Posterior, cfg: SamplerConfig, rng: np.random.Generator | None = None):
        self.post = post
        self.cfg = cfg
        self.rng = rng if rng is not None else chain_rng(cfg.seed, cfg.chain_index)
        self.scales: dict[EffectiveNetworkKey, float] = {}
        self.adapt_counts: dict[EffectiveNetworkKey, int] = {}
        self._sens: dict[EffectiveNetworkKey, dict[int, float]] = {}
        self.step = 0

    def adapting(self) -> bool:
        return self.cfg.adapt and self.step <= self.cfg.burn_in

    def sensitivities(self, key: EffectiveNetworkKey) -> dict[int, float]:
        """Sensitivity per uncertain reaction; 0 outside the effective network.

        Cached per effective network; the draws use a stream derived from
        the seed and the network so results do not depend on visit order.
        """
        hit = self._sens.get(key)
        if hit is None:
            digest = hashlib.sha256(key.label.encode()).digest()
            rng = np.random.default_rng([self.cfg.seed, int.from_bytes(digest[:8], "little")])
            model = self.post.net.model_from_reactions(key.reaction_ids)
            nominal = self.post.prior_mean.copy()
            values = sensitivity_indices(self.post, model, nominal, self.cfg.n_sens_draws, rng, self.cfg.sens_step)
            hit = {s.reaction_id: s.index for s in values}
            for rid in self.post.net.uncertain_ids:
                hit.setdefault(rid, 0.0)
            self._sens[key] = hit
        return hit


def chain_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(chain_index)]))


def sensitivity_indices(
    post: Posterior,
    model: ModelIndicator,
    nominal: np.ndarray,
    n_draws: int,
    rng: np.random.Generator,
    step: float = 1e-3,
) -> list[SensitivityIndex]:
    """Average |d log posterior / d log10 k_i| over prior draws of k_i with
    the other effective-network coordinates held at ``nominal``.

    Reactions outside the effective network get 0 without any solve. A
    reversible reaction averages over its two directions.
    """
    key = post.en(model)
    out = []
    for rid in post.net.uncertain_ids:
        if rid not in key:
            out.append(SensitivityIndex(rid, 0.0))
            continue
        idx = post.slots_of([rid])
        samples = []
        for _ in range(n_draws):
            draw = post.prior_mean[idx] + post.prior_std[idx] * rng.standard_normal(idx.size)
            grads = []
            for k, slot in enumerate(idx):
                x = nominal.copy()
                x[idx] = draw
                f = post.conditional_logpost(key, np.array([slot]), x)
                hi, lo = f(np.array([draw[k] + step])), f(np.array([draw[k] - step]))
                if not (math.isfinite(hi) and math.isfinite(lo)):
                    grads = None
                    break
                grads.append(abs(hi - lo) / (2 * step))
            if grads is not None:
                samples.append(float(np.mean(grads)))
        if not samples:
            log.warning("sensitivity of reaction %d: every draw failed to integrate", rid)
        out.append(SensitivityIndex(rid, float(np.mean(samples)) if samples else 0.0))
    return out


def select_common_update_set(
    en_current: EffectiveNetworkKey | Iterable[int],
    en_proposed: EffectiveNetworkKey | Iterable[int],
    sens_current: Mapping[int, float],
    sens_proposed: Mapping[int, float],
    poisson_mean: float,
    rng: np.random.Generator,
    common: Iterable[int] | None = None,
) -> frozenset[int]:
    """Union of the top-r1 common reactions by current sensitivity and the
    top-r2 by proposed sensitivity, r1, r2 ~ Poisson(poisson_mean).

    ``common`` defaults to the reactions shared by both effective networks
    that carry a sensitivity. Ties go to the smaller reaction id.
    """
    if common is None:
        common = set(en_current) & set(en_proposed) & set(sens_current) & set(sens_proposed)
    common = sorted(common)
    r1, r2 = (int(v) for v in rng.poisson(poisson_mean, size=2))
    if not common:
        return frozenset()
    by_cur = sorted(common, key=lambda r: (-sens_current.get(r, 0.0), r))
    by_new = sorted(common, key=lambda r: (-sens_proposed.get(r, 0.0), r))
    return frozenset(by_cur[:r1]) | frozenset(by_new[:r2])


def within_model_step(state: ChainState, ctx: ChainContext) -> MoveResult:
    """Prior refresh of non-effective coordinates, then a Gaussian random
    walk on the effective-network coordinates."""
    post, rng = ctx.post, ctx.rng
    key = state.en_key
    en_idx = post.en_slots(key)
    all_idx = post.model_slots(state.model)
    theta = state.theta.copy()
    aux = np.setdiff1d(all_idx, en_idx)
    if aux.size:
        theta[aux] = post.prior_mean[aux] + post.prior_std[aux] * rng.standard_normal(aux.size)
        state = ChainState(state.model, theta, key, post.log_target(state.model, theta))
    if en_idx.size == 0:
        return MoveResult(state, True, "within", state.model, key, 0.0)

    scale = ctx.scales.get(key, ctx.cfg.rw_scale)
    prop = state.theta.copy()
    prop[en_idx] += scale * rng.standard_normal(en_idx.size)
    lp = post.log_target(state.model, prop)
    log_alpha = lp - state.log_post if lp != NEG_INF else NEG_INF
    accepted = log_alpha >= 0 or math.log(rng.random()) < log_alpha
    if ctx.adapting():
        n = ctx.adapt_counts.get(key, 0) + 1
        ctx.adapt_counts[key] = n
        acc_prob = math.exp(min(0.0, log_alpha)) if log_alpha != NEG_INF else 0.0
        new = scale * math.exp((acc_prob - ctx.cfg.target_accept) / math.sqrt(n))
        ctx.scales[key] = float(min(max(new, 1e-4), 10.0))
    failure = "integration" if lp == NEG_INF else ""
    if accepted:
        state = ChainState(state.model, prop, key, lp)
    return MoveResult(state, accepted, "within", state.model, key, log_alpha, failure=failure)


# -- between-model jumps --------------------------------------------------------------


def _toggled(post: Posterior, a: ModelIndicator, b: ModelIndicator) -> frozenset[int]:
    return frozenset(post.net.model_reactions(a) ^ post.net.model_reactions(b))


def jump_free_set(
    post: Posterior,
    current: ModelIndicator,
    proposed: ModelIndicator,
    network_aware: bool,
    update: Iterable[int] = (),
) -> frozenset[int]:
    """Reactions whose slots are redrawn by a jump between two models.

    The result is symmetric in ``current`` and ``proposed``.
    """
    out = set(_toggled(post, current, proposed)) | set(update)
    if network_aware:
        out |= set(post.en(current).reaction_ids) ^ set(post.en(proposed).reaction_ids)
    return frozenset(r for r in out if r in set(post.net.uncertain_ids))


def jump_log_alpha(
    post: Posterior,
    src: ModelIndicator,
    src_theta: np.ndarray,
    dst: ModelIndicator,
    dst_theta: np.ndarray,
    free_reactions: Iterable[int],
    log_q_model_fwd: float,
    log_q_model_rev: float,
    same_en_exact: bool = False,
) -> float:
    """log acceptance ratio of the jump ``src -> dst`` at realised endpoints.

    ``same_en_exact`` uses the closed form for jumps inside a cluster,
    where the target and proposal terms cancel analytically.
    """
    if same_en_exact:
        return post.model_log_prior(dst) - post.model_log_prior(src) + log_q_model_rev - log_q_model_fwd
    free_idx = post.slots_of(free_reactions)
    fwd = np.intersect1d(free_idx, post.model_slots(dst))
    rev = np.intersect1d(free_idx, post.model_slots(src))
    t_dst = post.log_target(dst, dst_theta)
    t_src = post.log_target(src, src_theta)
    if t_dst == NEG_INF:
        return NEG_INF
    lq_fwd = post.gaussian(dst, fwd, dst_theta).logpdf(dst_theta[fwd]) if fwd.size else 0.0
    lq_rev = post.gaussian(src, rev, src_theta).logpdf(src_theta[rev]) if rev.size else 0.0
    return (t_dst - t_src) + (log_q_model_rev - log_q_model_fwd) + (lq_rev - lq_fwd)


def _between(
    state: ChainState,
    proposed: ModelIndicator,
    ctx: ChainContext,
    network_aware: bool,
    sensitivity: bool,
    log_q_fwd: float,
    log_q_rev: float,
) -> MoveResult:
    post, rng = ctx.post, ctx.rng
    src = state.model
    adding = proposed.count() > src.count()
    move_type = "birth" if adding else "death"
    dst_en = post.en(proposed)
    same_en = dst_en == state.en_key

    update: frozenset[int] = frozenset()
    if sensitivity and not (network_aware and same_en):
        toggled = _toggled(post, src, proposed)
        if network_aware:
            common = (set(state.en_key) & set(dst_en)) & set(post.net.uncertain_ids)
        else:
            shared = post.net.model_reactions(src) & post.net.model_reactions(proposed)
            common = (shared & set(post.net.uncertain_ids)) - toggled
        update = select_common_update_set(
            state.en_key,
            dst_en,
            ctx.sensitivities(state.en_key),
            ctx.sensitivities(dst_en),
            ctx.cfg.poisson_mean,
            rng,
            common=common,
        )
        if update:
            move_type = "swap-updated"

    free = jump_free_set(post, src, proposed, network_aware, update)
    exact = network_aware and same_en
    dst_slots = post.model_slots(proposed)
    fwd_idx = np.intersect1d(post.slots_of(free), dst_slots)
    theta = state.theta.copy()
    keep = np.zeros(theta.size, dtype=bool)
    keep[dst_slots] = True
    theta[~keep] = np.nan
    theta[fwd_idx] = np.nan
    try:
        if fwd_idx.size:
            g = post.gaussian(proposed, fwd_idx, theta)
            theta[fwd_idx] = g.sample(rng)
        log_alpha = jump_log_alpha(post, src, state.theta, proposed, theta, free, log_q_fwd, log_q_rev, exact)
    except (ModeNotFound, SingularCovariance, np.linalg.LinAlgError) as exc:
        log.debug("proposal construction failed: %s", exc)
        return MoveResult(state, False, move_type, proposed, dst_en, NEG_INF, failure="proposal")

    failure = "integration" if log_alpha == NEG_INF else ""
    log_alpha_rev = math.nan
    if ctx.cfg.check_reciprocity and log_alpha != NEG_INF:
        rev_free = jump_free_set(post, proposed, src, network_aware, update)
        log_alpha_rev = jump_log_alpha(post, proposed, theta, src, state.theta, rev_free, log_q_rev, log_q_fwd, exact)

    accepted = log_alpha >= 0 or math.log(rng.random()) < log_alpha
    if accepted:
        state = ChainState(proposed, theta, dst_en, post.log_target(proposed, theta))
    return MoveResult(state, accepted, move_type, proposed, dst_en, log_alpha, log_alpha_rev, failure)


def between_model_nua(state, proposed, ctx, log_q_fwd=0.0, log_q_rev=0.0) -> MoveResult:
    return _between(state, proposed, ctx, False, False, log_q_fwd, log_q_rev)


def between_model_na(state, proposed, ctx, log_q_fwd=0.0, log_q_rev=0.0) -> MoveResult:
    return _between(state, proposed, ctx, True, False, log_q_fwd, log_q_rev)


def between_model_sens(state, proposed, ctx, network_aware: bool, log_q_fwd=0.0, log_q_rev=0.0) -> MoveResult:
    return _between(state, proposed, ctx, network_aware, True, log_q_fwd, log_q_rev)


_DISPATCH = {
    Variant.NUA: lambda s, p, c, f, r: between_model_nua(s, p, c, f, r),
    Variant.NA: lambda s, p, c, f, r: between_model_na(s, p, c, f, r),
    Variant.SENS_NUA: lambda s, p, c, f, r: between_model_sens(s, p, c, False, f, r),
    Variant.SENS_NA: lambda s, p, c, f, r: between_model_sens(s, p, c, True, f, r),
}


# -- driver ------------------------------------------------------------------------------


def default_initial_state(post: Posterior, model: ModelIndicator | None = None) -> ChainState:
    """Full model (unless given) with every rate constant at its prior mean."""
    model = model or ModelIndicator.full(len(post.net.uncertain_ids))
    return ChainState.build(post, model, post.prior_mean.copy())


def run_chain(
    post: Posterior,
    cfg: SamplerConfig,
    init: ChainState | None = None,
    ctx: ChainContext | None = None,
    on_step: Callable[[int, MoveResult], bool] | None = None,
) -> Trace:
    """Run one chain for ``cfg.n_steps`` steps; reproducible from the seed.

    ``on_step(step, result)`` is called after every step; a true return
    value ends the chain early.
    """
    ctx = ctx or ChainContext(post, cfg)
    state = init or default_initial_state(post)
    if state.log_post == NEG_INF:
        raise IntegrationError("initial state has zero posterior density (integration failed)")
    net = post.net
    trace = Trace(net.uncertain_ids, tuple(slot_name(s) for s in net.parameter_slots))
    trace.initial = {
        "model_bits": state.model.bits,
        "en_id": state.en_key.label,
        "log_post": state.log_post,
    }
    if cfg.snapshot_every:
        trace.snapshots.append((0, state.model.bits, state.theta.copy()))
    best = state
    n_unc = len(net.uncertain_ids)
    between = _DISPATCH[cfg.variant]
    for step in range(1, cfg.n_steps + 1):
        ctx.step = step
        if n_unc == 0 or ctx.rng.random() < cfg.beta:
            res = within_model_step(state, ctx)
        else:
            proposed, lqf, lqr = propose_model(state.model, ctx.rng)
            res = between(state, proposed, ctx, lqf, lqr)
        trace.append(
            step=step,
            from_bits=state.model.bits,
            from_en_id=state.en_key.label,
            model_bits=res.state.model.bits,
            en_id=res.state.en_key.label,
            log_post=res.state.log_post,
            move_type=res.move_type,
            accepted=bool(res.accepted),
            proposed_bits=res.proposed.bits,
            proposed_en_id=res.proposed_en.label,
            log_alpha=float(res.log_alpha),
            log_alpha_reverse=float(res.log_alpha_reverse),
            failure=res.failure,
        )
        state = res.state
        if state.log_post > best.log_post:
            best = state
        if cfg.snapshot_every and step % cfg.snapshot_every == 0:
            trace.snapshots.append((step, state.model.bits, state.theta.copy()))
        if on_step is not None and on_step(step, res):
            break
    trace.final_state = state
    trace.best_state = best
    return trace


# -- trace files ----------------------------------------------------------------------------

_COLUMN_TYPES = {
    "step": int,
    "accepted": lambda v: bool(int(v)),
    "log_post": float,
    "log_alpha": float,
    "log_alpha_reverse": float,
}


def write_trace(trace: Trace, path, snapshot_path=None) -> None:
    """Trace CSV (one row per step) and, if snapshots exist, the sidecar
    parameter-snapshot CSV."""
    from .io import write_csv

    write_csv(path, TRACE_COLUMNS, trace.rows())
    if snapshot_path is not None and trace.snapshots:
        write_csv(snapshot_path, trace.snapshot_header(), trace.snapshot_rows())


def read_trace(path, uncertain_ids: tuple[int, ...] | None = None) -> Trace:
    import csv

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRACE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: trace is missing columns {sorted(missing)}")
        rows = list(reader)
    n_unc = len(rows[0]["model_bits"]) if rows else 0
    trace = Trace(tuple(uncertain_ids) if uncertain_ids else tuple(range(n_unc)), ())
    for row in rows:
        trace.append(**{c: _COLUMN_TYPES.get(c, str)(row[c]) for c in TRACE_COLUMNS})
    if rows and uncertain_ids is not None and n_unc != len(uncertain_ids):
        raise ValueError(f"{path}: model bits have length {n_unc}, expected {len(uncertain_ids)}")
    if rows:
        trace.initial = {"model_bits": rows[0]["from_bits"], "en_id": rows[0]["from_en_id"]}
    return trace
