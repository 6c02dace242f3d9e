"""Reaction-network data model and topology analysis.

A :class:`ReactionNetwork` holds the universe of proposed reactions. A
:class:`ModelIndicator` picks a subset of the uncertain reactions; fixed
reactions are part of every model. The effective network of a model is the
smallest set of its reactions that can change the observed species, found
purely from the network graph (no ODE solve).
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence


class RateLaw(str, Enum):
    MASS_ACTION = "mass_action"
    MICHAELIS_MENTEN = "michaelis_menten"


class ClusterCapExceeded(ValueError):
    """Raised when exhaustive model enumeration would be too large."""


@dataclass(frozen=True)
class Species:
    name: str
    initial_concentration: float = 0.0
    observed: bool = False


@dataclass(frozen=True)
class Prior:
    """Normal prior on a log10 rate constant."""

    mean: float
    variance: float

    @property
    def std(self) -> float:
        return self.variance ** 0.5


@dataclass(frozen=True)
class Reaction:
    id: int
    reactants: tuple[str, ...]
    products: tuple[str, ...]
    enzymes: tuple[str, ...] = ()
    reversible: bool = False
    rate_law: RateLaw = RateLaw.MASS_ACTION
    log10_k: float = 0.0
    log10_k_reverse: float | None = None
    michaelis_constant: float | None = None
    fixed: bool = True
    prior: Prior | None = None
    reverse_prior: Prior | None = None

    @property
    def directions(self) -> tuple[str, ...]:
        return ("f", "r") if self.reversible else ("f",)

    def priors(self) -> dict[str, Prior | None]:
        out = {"f": self.prior}
        if self.reversible:
            out["r"] = self.reverse_prior
        return out


@dataclass(frozen=True, order=True)
class ModelIndicator:
    """Inclusion vector over a network's uncertain reactions.

    Ordering is lexicographic on the bits with excluded < included, which is
    also the order produced by :func:`all_models`.
    """

    included: tuple[bool, ...]

    @classmethod
    def from_bits(cls, bits: str) -> "ModelIndicator":
        if any(b not in "01" for b in bits):
            raise ValueError(f"model bits must be 0/1 characters, got {bits!r}")
        return cls(tuple(b == "1" for b in bits))

    @classmethod
    def full(cls, n: int) -> "ModelIndicator":
        return cls((True,) * n)

    @classmethod
    def empty(cls, n: int) -> "ModelIndicator":
        return cls((False,) * n)

    @property
    def bits(self) -> str:
        return "".join("1" if b else "0" for b in self.included)

    def toggle(self, position: int) -> "ModelIndicator":
        inc = list(self.included)
        inc[position] = not inc[position]
        return ModelIndicator(tuple(inc))

    def __len__(self) -> int:
        return len(self.included)

    def count(self) -> int:
        return sum(self.included)

    def is_subset_of(self, other: "ModelIndicator") -> bool:
        return all(b <= o for b, o in zip(self.included, other.included))


@dataclass(frozen=True, order=True)
class EffectiveNetworkKey:
    """Sorted reaction ids of an effective network; equal keys define a cluster."""

    reaction_ids: tuple[int, ...]

    @classmethod
    def of(cls, ids: Iterable[int]) -> "EffectiveNetworkKey":
        return cls(tuple(sorted(set(ids))))

    @classmethod
    def from_label(cls, label: str) -> "EffectiveNetworkKey":
        if label in ("", "none"):
            return cls(())
        return cls(tuple(sorted(int(x) for x in label.split("-"))))

    @property
    def label(self) -> str:
        return "-".join(str(i) for i in self.reaction_ids) or "none"

    def __len__(self) -> int:
        return len(self.reaction_ids)

    def __contains__(self, rid: object) -> bool:
        return rid in self.reaction_ids

    def __iter__(self):
        return iter(self.reaction_ids)

    def issubset(self, other: "EffectiveNetworkKey") -> bool:
        return set(self.reaction_ids) <= set(other.reaction_ids)


@dataclass(frozen=True)
class PathwayRule:
    """Named model class: all of ``requires`` present and, when given, at
    least one of ``excludes_any`` absent."""

    label: str
    requires: frozenset[int] = frozenset()
    excludes_any: frozenset[int] = frozenset()

    def matches(self, reaction_ids: frozenset[int] | set[int]) -> bool:
        if not self.requires <= reaction_ids:
            return False
        if self.excludes_any and self.excludes_any <= reaction_ids:
            return False
        return True


@dataclass(frozen=True)
class ReactionNetwork:
    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...]
    name: str = "network"
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        object.__setattr__(
            self,
            "_index",
            {
                "species": {s.name: i for i, s in enumerate(self.species)},
                "reaction": {r.id: r for r in self.reactions},
                "position": {r.id: i for i, r in enumerate(self.reactions)},
            },
        )

    # -- lookups ---------------------------------------------------------
    @property
    def species_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.species)

    def species_index(self, name: str) -> int:
        return self._index["species"][name]

    def reaction(self, rid: int) -> Reaction:
        return self._index["reaction"][rid]

    def reaction_position(self, rid: int) -> int:
        return self._index["position"][rid]

    @property
    def reaction_ids(self) -> tuple[int, ...]:
        return tuple(r.id for r in self.reactions)

    @property
    def uncertain_ids(self) -> tuple[int, ...]:
        return tuple(sorted(r.id for r in self.reactions if not r.fixed))

    @property
    def fixed_ids(self) -> tuple[int, ...]:
        return tuple(sorted(r.id for r in self.reactions if r.fixed))

    @property
    def observed(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.species if s.observed)

    @property
    def initial_concentrations(self) -> tuple[float, ...]:
        return tuple(float(s.initial_concentration) for s in self.species)

    @property
    def parameter_slots(self) -> tuple[tuple[int, str], ...]:
        """(reaction id, direction) for every uncertain rate constant."""
        return tuple((rid, d) for rid in self.uncertain_ids for d in self.reaction(rid).directions)

    def slot_priors(self) -> list[Prior]:
        return [self.reaction(rid).priors()[d] for rid, d in self.parameter_slots]

    # -- models ----------------------------------------------------------
    def model_reactions(self, model: ModelIndicator) -> frozenset[int]:
        """Fixed reactions plus the uncertain reactions switched on in ``model``."""
        unc = self.uncertain_ids
        if len(model) != len(unc):
            raise ValueError(f"model has {len(model)} bits, network has {len(unc)} uncertain reactions")
        return frozenset(self.fixed_ids) | {rid for rid, b in zip(unc, model.included) if b}

    def model_from_reactions(self, ids: Iterable[int]) -> ModelIndicator:
        ids = set(ids)
        return ModelIndicator(tuple(rid in ids for rid in self.uncertain_ids))

    def with_reactions(self, reactions: Sequence[Reaction]) -> "ReactionNetwork":
        return ReactionNetwork(self.species, tuple(reactions), name=self.name)


def all_models(net: ReactionNetwork) -> Iterable[ModelIndicator]:
    """Every model over ``net`` in canonical (lexicographic) order."""
    for bits in itertools.product((False, True), repeat=len(net.uncertain_ids)):
        yield ModelIndicator(bits)


def validate_network(net: ReactionNetwork) -> list[str]:
    """Return human-readable invariant violations; empty when the network is valid."""
    problems: list[str] = []
    names = [s.name for s in net.species]
    seen: set[str] = set()
    for n in names:
        if n in seen:
            problems.append(f"species {n!r} is defined more than once")
        seen.add(n)
    for s in net.species:
        if not s.initial_concentration >= 0:
            problems.append(f"species {s.name!r} has negative initial concentration {s.initial_concentration}")
    if not any(s.observed for s in net.species):
        problems.append("no species is marked observed")

    ids_seen: set[int] = set()
    for r in net.reactions:
        tag = f"reaction {r.id}"
        if r.id in ids_seen:
            problems.append(f"{tag}: duplicate reaction id")
        ids_seen.add(r.id)
        for role in ("reactants", "products", "enzymes"):
            for sp in getattr(r, role):
                if sp not in seen:
                    problems.append(f"{tag}: {role[:-1]} {sp!r} is not a known species")
        roles = [set(r.reactants), set(r.products), set(r.enzymes)]
        for (a, b), (na, nb) in zip(
            itertools.combinations(roles, 2),
            itertools.combinations(("reactants", "products", "enzymes"), 2),
        ):
            if a & b:
                problems.append(f"{tag}: {na} and {nb} share {sorted(a & b)}")
        if r.rate_law == RateLaw.MICHAELIS_MENTEN:
            if r.michaelis_constant is None or not r.michaelis_constant > 0:
                problems.append(f"{tag}: michaelis_menten requires a positive michaelis_constant")
            if len(r.reactants) != 1:
                problems.append(f"{tag}: michaelis_menten needs exactly one substrate, got {len(r.reactants)}")
            if r.reversible:
                problems.append(f"{tag}: reversible michaelis_menten is not supported")
        elif r.michaelis_constant is not None:
            problems.append(f"{tag}: mass_action must not carry a michaelis_constant")
        if r.reversible and r.log10_k_reverse is None:
            problems.append(f"{tag}: reversible reaction needs log10_k_reverse")
        for d, prior in r.priors().items():
            if r.fixed and prior is not None:
                problems.append(f"{tag}: fixed reaction must not carry a prior")
            if not r.fixed:
                if prior is None:
                    problems.append(f"{tag}: uncertain reaction is missing a prior for direction {d!r}")
                elif not prior.variance > 0:
                    problems.append(f"{tag}: prior variance must be positive")
    return problems


# -- topology ----------------------------------------------------------------


def active_reactions(net: ReactionNetwork, model: ModelIndicator | Iterable[int]) -> frozenset[int]:
    """Reactions that can fire given the initially present species.

    Fixed-point iteration: a reaction fires once all of its reactants and
    enzymes are available (either side for a reversible reaction); firing
    makes its products (and reactants, if reversible) available.
    """
    ids = _reaction_ids(net, model)
    available = {s.name for s in net.species if s.initial_concentration > 0}
    active: set[int] = set()
    pending = [net.reaction(rid) for rid in sorted(ids)]
    changed = True
    while changed:
        changed = False
        for r in pending:
            if r.id in active:
                continue
            enz = set(r.enzymes)
            fwd = (set(r.reactants) | enz) <= available
            rev = r.reversible and (set(r.products) | enz) <= available
            if fwd or rev:
                active.add(r.id)
                available.update(r.products)
                if r.reversible:
                    available.update(r.reactants)
                changed = True
    return frozenset(active)


def influences_observables(net: ReactionNetwork, active: Iterable[int], rid: int) -> bool:
    """Whether perturbing reaction ``rid`` can reach an observed species.

    Influence spreads from the reaction's reactants and products to any
    active reaction that consumes, is catalysed by, or produces an affected
    species; enzymes themselves are never marked as affected.
    """
    active = frozenset(active)
    if rid not in active:
        raise ValueError(f"reaction {rid} is not active")
    r = net.reaction(rid)
    affected = set(r.reactants) | set(r.products)
    reached = {rid}
    observed = set(net.observed)
    others = [net.reaction(j) for j in sorted(active) if j != rid]
    while True:
        before = len(affected)
        for rj in others:
            if rj.id in reached:
                continue
            if (set(rj.reactants) | set(rj.enzymes)) & affected or set(rj.products) & affected:
                reached.add(rj.id)
                affected.update(rj.reactants)
                affected.update(rj.products)
        if affected & observed:
            return True
        if len(affected) == before:
            return False


def effective_network(net: ReactionNetwork, model: ModelIndicator | Iterable[int]) -> EffectiveNetworkKey:
    active = active_reactions(net, model)
    return EffectiveNetworkKey.of(rid for rid in active if influences_observables(net, active, rid))


class EffectiveNetworkCache:
    """Thread-safe memo of :func:`effective_network` keyed by model."""

    def __init__(self, net: ReactionNetwork):
        self.net = net
        self._memo: dict[ModelIndicator, EffectiveNetworkKey] = {}
        self._lock = threading.Lock()

    def __call__(self, model: ModelIndicator) -> EffectiveNetworkKey:
        key = self._memo.get(model)
        if key is None:
            key = effective_network(self.net, model)
            with self._lock:
                self._memo.setdefault(model, key)
        return key

    def __len__(self) -> int:
        return len(self._memo)


def enumerate_clusters(
    net: ReactionNetwork, cap: int = 20
) -> dict[EffectiveNetworkKey, list[ModelIndicator]]:
    """Partition all 2**N models by effective network.

    Keys are returned in ascending key order; each member list is in
    canonical model order. The cluster whose key is empty (models that
    cannot affect any observable) is included so that sizes sum to 2**N.
    """
    n = len(net.uncertain_ids)
    if n > cap:
        raise ClusterCapExceeded(
            f"{n} uncertain reactions exceed the enumeration cap of {cap}; "
            "use online clustering (memoized effective_network during sampling) instead"
        )
    clusters: dict[EffectiveNetworkKey, list[ModelIndicator]] = {}
    for m in all_models(net):
        clusters.setdefault(effective_network(net, m), []).append(m)
    return dict(sorted(clusters.items()))


def pathway_class(
    net: ReactionNetwork,
    model: ModelIndicator | Iterable[int],
    rules: Sequence[PathwayRule],
    default: str = "other",
) -> str:
    ids = _reaction_ids(net, model)
    for rule in rules:
        if rule.matches(ids):
            return rule.label
    return default


def pathway_rules(spec: Sequence[Mapping]) -> list[PathwayRule]:
    return [
        PathwayRule(
            label=str(p["label"]),
            requires=frozenset(int(x) for x in p.get("requires", ())),
            excludes_any=frozenset(int(x) for x in p.get("excludes_any", ())),
        )
        for p in spec
    ]


def _reaction_ids(net: ReactionNetwork, model) -> frozenset[int]:
    if isinstance(model, ModelIndicator):
        return net.model_reactions(model)
    return frozenset(model)
