"""Posterior summaries computed from sampler traces."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .network import (
    EffectiveNetworkKey,
    ModelIndicator,
    PathwayRule,
    ReactionNetwork,
    pathway_class,
)
from .sampler import MOVE_TYPES, Trace

BETWEEN_TYPES = ("birth", "death", "swap-updated")


@dataclass(frozen=True)
class FeaturePredicate:
    name: str
    indicator: Callable[[ModelIndicator], bool]


def model_feature(bits: str) -> FeaturePredicate:
    return FeaturePredicate(f"model:{bits}", lambda m, b=bits: m.bits == b)


def reaction_feature(net: ReactionNetwork, rid: int) -> FeaturePredicate:
    pos = net.uncertain_ids.index(rid)
    return FeaturePredicate(f"reaction:{rid}", lambda m, p=pos: m.included[p])


def pathway_feature(net: ReactionNetwork, rules: Sequence[PathwayRule], label: str) -> FeaturePredicate:
    return FeaturePredicate(f"pathway:{label}", lambda m: pathway_class(net, m, rules) == label)


def _post_burn(trace: Trace | Sequence[str], column: str, burn_in: int) -> list:
    values = trace[column] if isinstance(trace, Trace) else list(trace)
    if not 0 <= burn_in < len(values):
        raise ValueError(f"burn_in={burn_in} must lie in [0, {len(values)})")
    return values[burn_in:]


def raw_model_probs(trace: Trace | Sequence[str], burn_in: int = 0) -> dict[str, float]:
    """Visit frequencies of each model (by bit string) after burn-in."""
    bits = _post_burn(trace, "model_bits", burn_in)
    n = len(bits)
    return {b: c / n for b, c in sorted(Counter(bits).items())}


def raw_feature_probs(trace: Trace, burn_in: int, predicates: Sequence[FeaturePredicate]) -> dict[str, float]:
    counts = Counter(_post_burn(trace, "model_bits", burn_in))
    n = sum(counts.values())
    out = {}
    for p in predicates:
        out[p.name] = sum(c for b, c in counts.items() if p.indicator(ModelIndicator.from_bits(b))) / n
    return out


def _cluster_lookup(clusters: Mapping) -> dict[str, list[ModelIndicator]]:
    out = {}
    for key, members in clusters.items():
        label = key.label if isinstance(key, EffectiveNetworkKey) else str(key)
        out[label] = list(members)
    return out


def _within_cluster_expectations(
    clusters: dict[str, list[ModelIndicator]],
    labels: Iterable[str],
    predicates: Sequence[FeaturePredicate],
    model_prior: Callable[[ModelIndicator], float] | None,
) -> dict[str, np.ndarray]:
    out = {}
    for label in labels:
        if label not in clusters:
            raise KeyError(f"cluster {label!r} seen in the trace is not among the enumerated clusters")
        members = clusters[label]
        w = np.array([1.0 if model_prior is None else float(model_prior(m)) for m in members])
        w = w / w.sum()
        out[label] = np.array([sum(wi for wi, m in zip(w, members) if p.indicator(m)) for p in predicates])
    return out


def derandomized_feature_probs(
    trace: Trace,
    burn_in: int,
    clusters: Mapping | None,
    predicates: Sequence[FeaturePredicate],
    model_prior: Callable[[ModelIndicator], float] | None = None,
) -> dict[str, float]:
    """Average over samples of E[F | cluster of the sample].

    ``model_prior`` gives (unnormalised) prior mass per model; ``None``
    means uniform, where the expectation is a plain within-cluster count.
    """
    if clusters is None:
        raise ValueError("cluster enumeration unavailable; use raw_feature_probs instead")
    lookup = _cluster_lookup(clusters)
    visits = Counter(_post_burn(trace, "en_id", burn_in))
    n = sum(visits.values())
    expect = _within_cluster_expectations(lookup, visits, predicates, model_prior)
    total = sum(c * expect[label] for label, c in visits.items()) / n
    return {p.name: float(v) for p, v in zip(predicates, total)}


def derandomized_model_probs(
    trace: Trace,
    burn_in: int,
    clusters: Mapping,
    model_prior: Callable[[ModelIndicator], float] | None = None,
) -> dict[str, float]:
    """Derandomized probability of every model in the enumerated space."""
    lookup = _cluster_lookup(clusters)
    visits = Counter(_post_burn(trace, "en_id", burn_in))
    n = sum(visits.values())
    out: dict[str, float] = {}
    for label, members in lookup.items():
        share = visits.get(label, 0) / n
        w = np.array([1.0 if model_prior is None else float(model_prior(m)) for m in members])
        w = w / w.sum()
        for wi, m in zip(w, members):
            out[m.bits] = share * wi
    missing = set(visits) - set(lookup)
    if missing:
        raise KeyError(f"clusters {sorted(missing)} seen in the trace are not enumerated")
    return dict(sorted(out.items()))


# -- diagnostics -----------------------------------------------------------------------


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def ess_diagnostic(series) -> tuple[float, bool]:
    """(ESS, degenerate) using Geyer's initial positive sequence.

    A zero-variance series is degenerate and gets ESS = N.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise ValueError("ESS needs at least 10 samples")
    acov = _autocovariance(x)
    if acov[0] <= 0:
        return float(n), True
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(min(n, n / tau)), False


def ess(series) -> float:
    return ess_diagnostic(series)[0]


def reaction_count_series(trace: Trace, burn_in: int = 0) -> np.ndarray:
    return np.array([b.count("1") for b in _post_burn(trace, "model_bits", burn_in)], dtype=float)


def _rate(acc: int, att: int) -> float:
    return acc / att if att else 0.0


def acceptance_report(
    trace: Trace,
    net: ReactionNetwork | None = None,
    rules: Sequence[PathwayRule] = (),
    default_label: str = "other",
) -> dict[str, dict[str, float]]:
    """accepted / attempted per move type and for between-model,
    between-cluster and between-pathway moves.

    A between-pathway attempt is a move whose current and proposed models
    carry two different, non-default pathway labels.
    """
    tallies = {k: [0, 0] for k in (*MOVE_TYPES, "between_model", "between_cluster", "between_pathway")}
    label_cache: dict[str, str] = {}

    def label(bits):
        if bits not in label_cache:
            label_cache[bits] = pathway_class(net, ModelIndicator.from_bits(bits), rules, default_label)
        return label_cache[bits]

    rows = zip(
        trace["move_type"], trace["accepted"], trace["from_bits"], trace["from_en_id"],
        trace["proposed_bits"], trace["proposed_en_id"],
    )
    for mt, acc, src, src_en, dst, dst_en in rows:
        acc = int(acc)
        tallies[mt][0] += acc
        tallies[mt][1] += 1
        if mt not in BETWEEN_TYPES:
            continue
        tallies["between_model"][0] += acc
        tallies["between_model"][1] += 1
        if src_en != dst_en:
            tallies["between_cluster"][0] += acc
            tallies["between_cluster"][1] += 1
        if net is not None and rules:
            a, b = label(src), label(dst)
            if a != b and default_label not in (a, b):
                tallies["between_pathway"][0] += acc
                tallies["between_pathway"][1] += 1
    return {k: {"accepted": a, "attempted": t, "rate": _rate(a, t)} for k, (a, t) in tallies.items()}


# -- replicates --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureEstimate:
    name: str
    raw_mean: float
    derandomized_mean: float
    raw_variance: float
    derandomized_variance: float
    n_replicates: int


@dataclass(frozen=True)
class EstimateReport:
    features: tuple[FeatureEstimate, ...]

    def as_rows(self):
        for f in self.features:
            yield [f.name, f.raw_mean, f.derandomized_mean, f.raw_variance, f.derandomized_variance, f.n_replicates]


def replicate_variance(estimates: Sequence[Mapping[str, float]]) -> dict[str, tuple[float, float]]:
    """(mean, sample variance with ddof=1) of each feature across replicates."""
    if len(estimates) < 2:
        raise ValueError("need at least two replicates")
    names = sorted(set().union(*estimates))
    out = {}
    for name in names:
        v = np.array([e.get(name, 0.0) for e in estimates])
        out[name] = (float(v.mean()), float(v.var(ddof=1)))
    return out


def estimate_report(
    traces: Sequence[Trace],
    burn_in: int,
    clusters: Mapping,
    predicates: Sequence[FeaturePredicate],
    model_prior: Callable[[ModelIndicator], float] | None = None,
) -> EstimateReport:
    raw = [raw_feature_probs(t, burn_in, predicates) for t in traces]
    der = [derandomized_feature_probs(t, burn_in, clusters, predicates, model_prior) for t in traces]
    rv, dv = replicate_variance(raw), replicate_variance(der)
    return EstimateReport(
        tuple(
            FeatureEstimate(p.name, rv[p.name][0], dv[p.name][0], rv[p.name][1], dv[p.name][1], len(traces))
            for p in predicates
        )
    )


def top_models(probs: Mapping[str, float], k: int = 8) -> list[str]:
    return [b for b, _ in sorted(probs.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def build_report(
    traces: Sequence[Trace],
    burn_in: int,
    net: ReactionNetwork,
    clusters: Mapping | None,
    rules: Sequence[PathwayRule] = (),
) -> dict:
    """Report document with sections model_probs, feature_probs, ess,
    acceptance and variances (the last only with two or more traces)."""
    pooled_raw: Counter = Counter()
    per_trace_raw = [raw_model_probs(t, burn_in) for t in traces]
    for probs in per_trace_raw:
        pooled_raw.update(probs)
    raw = {b: v / len(traces) for b, v in sorted(pooled_raw.items())}

    predicates = [reaction_feature(net, rid) for rid in net.uncertain_ids]
    predicates += [pathway_feature(net, rules, r.label) for r in rules]

    doc: dict = {"model_probs": {}, "feature_probs": {}, "ess": [], "acceptance": [], "variances": []}
    if clusters is not None:
        der_each = [derandomized_model_probs(t, burn_in, clusters) for t in traces]
        der = {b: float(np.mean([d[b] for d in der_each])) for b in der_each[0]}
    else:
        der = {}
    for b in sorted(set(raw) | {b for b, v in der.items() if v > 0}):
        doc["model_probs"][b] = {"raw": float(raw.get(b, 0.0)), "derandomized": der.get(b)}

    raw_f = [raw_feature_probs(t, burn_in, predicates) for t in traces]
    der_f = [derandomized_feature_probs(t, burn_in, clusters, predicates) for t in traces] if clusters else None
    for i, p in enumerate(predicates):
        doc["feature_probs"][p.name] = {
            "raw": float(np.mean([r[p.name] for r in raw_f])),
            "derandomized": None if der_f is None else float(np.mean([d[p.name] for d in der_f])),
        }

    for i, t in enumerate(traces):
        value, degenerate = ess_diagnostic(reaction_count_series(t, burn_in))
        doc["ess"].append({"replicate": i, "statistic": "reaction_count", "ess": value, "degenerate": degenerate})
        rep = acceptance_report(t, net, rules)
        for k, v in rep.items():
            doc["acceptance"].append({"replicate": i, "move": k, **v})

    if len(traces) >= 2:
        top = top_models(der or raw)
        feats = [model_feature(b) for b in top] + list(predicates)
        if clusters is not None:
            report = estimate_report(traces, burn_in, clusters, feats)
            for f in report.features:
                doc["variances"].append(f.__dict__.copy())
        else:
            rv = replicate_variance([raw_feature_probs(t, burn_in, feats) for t in traces])
            for f in feats:
                doc["variances"].append(
                    {"name": f.name, "raw_mean": rv[f.name][0], "raw_variance": rv[f.name][1], "n_replicates": len(traces)}
                )
    return doc
