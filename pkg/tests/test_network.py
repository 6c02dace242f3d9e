import itertools
import random

import pytest
from hypothesis import given, settings

from rxninfer.io import SpecError, network_from_dict, network_to_dict
from rxninfer.network import (
    ClusterCapExceeded,
    EffectiveNetworkCache,
    EffectiveNetworkKey,
    ModelIndicator,
    RateLaw,
    Reaction,
    ReactionNetwork,
    Species,
    active_reactions,
    all_models,
    effective_network,
    enumerate_clusters,
    influences_observables,
    pathway_class,
    pathway_rules,
    validate_network,
)

from strategies import networks

LEFT_BOTH = pathway_rules(
    [
        {"label": "left", "requires": [1, 2, 8, 10, 12], "excludes_any": [3, 5, 6]},
        {"label": "both", "requires": [1, 2, 3, 5, 6, 8, 10, 12]},
    ]
)
ALL12 = set(range(1, 13))


def _drop(net, *rids):
    return net.model_from_reactions(ALL12 - set(rids))


# -- validation ------------------------------------------------------------------------


def test_bundled_networks_validate(ex1, ex2):
    assert validate_network(ex1) == []
    assert validate_network(ex2) == []
    assert ex1.uncertain_ids == (3, 4, 5, 6, 7)
    assert ex2.uncertain_ids == tuple(range(3, 13))


def test_unknown_species_is_named(ex1):
    bad = Reaction(id=99, reactants=("X",), products=("BRaf",), log10_k=0.0)
    problems = validate_network(ex1.with_reactions(ex1.reactions + (bad,)))
    assert len(problems) == 1 and "'X'" in problems[0]


def test_mass_action_with_michaelis_constant_is_flagged(ex1):
    bad = Reaction(id=99, reactants=("BRaf",), products=("BRafPP",), log10_k=0.0, michaelis_constant=5.0)
    problems = validate_network(ex1.with_reactions(ex1.reactions + (bad,)))
    assert len(problems) == 1 and "michaelis" in problems[0]


def test_spec_round_trip(ex1):
    assert network_from_dict(network_to_dict(ex1)) == ex1


def test_malformed_spec_raises():
    with pytest.raises(SpecError):
        network_from_dict({"species": [{"name": "A"}], "reactions": [{"id": 1}]})


# -- activation and influence ----------------------------------------------------------------------


def test_full_model_all_active(ex1):
    assert active_reactions(ex1, ModelIndicator.full(5)) == frozenset(ALL12)


def test_without_reaction_2_bound_egfr_consumers_inactive(ex2):
    ids = ALL12 - {2}
    active = active_reactions(ex2, ids)
    assert not {1, 3, 12} & active


def test_empty_model_without_fixed_reactions():
    net = ReactionNetwork(
        (Species("A", 1.0), Species("B", 0.0, observed=True)),
        (Reaction(id=1, reactants=("A",), products=("B",), fixed=False, prior=_prior()),),
    )
    assert active_reactions(net, ModelIndicator.empty(1)) == frozenset()
    assert effective_network(net, ModelIndicator.empty(1)) == EffectiveNetworkKey(())


def _prior():
    from rxninfer.network import Prior

    return Prior(0.0, 1.0)


def test_reaction_3_influence_blocked_by_enzymes(ex1):
    active = active_reactions(ex1, ALL12 - {6})
    assert influences_observables(ex1, active, 3) is False


def test_reaction_10_influences_braf(ex1):
    active = active_reactions(ex1, ALL12)
    assert influences_observables(ex1, active, 10) is True


def test_reaction_producing_observable_influences(ex1):
    active = active_reactions(ex1, ALL12)
    assert influences_observables(ex1, active, 8) is True


def test_influence_requires_active_reaction(ex1):
    with pytest.raises(ValueError):
        influences_observables(ex1, frozenset({1, 2}), 8)


@pytest.mark.parametrize("missing", [3, 6])
def test_missing_reaction_networks_share_left_pathway_en(ex1, missing):
    key = effective_network(ex1, _drop(ex1, missing))
    assert key.reaction_ids == (1, 2, 8, 9, 10, 11, 12)


# -- clusters ---------------------------------------------------------------------------


def test_example1_has_five_clusters(ex1):
    clusters = enumerate_clusters(ex1)
    assert len(clusters) == 5
    assert sum(len(v) for v in clusters.values()) == 32


def test_example2_has_24_effective_networks(ex2):
    clusters = enumerate_clusters(ex2)
    non_empty = [k for k in clusters if len(k)]
    assert len(non_empty) == 24
    assert sum(len(v) for v in clusters.values()) == 1024


def test_no_uncertain_reactions_single_cluster():
    net = ReactionNetwork(
        (Species("A", 1.0), Species("B", 0.0, observed=True)),
        (Reaction(id=1, reactants=("A",), products=("B",)),),
    )
    clusters = enumerate_clusters(net)
    assert list(clusters.values()) == [[ModelIndicator(())]]


def test_cap_exceeded(ex2):
    with pytest.raises(ClusterCapExceeded, match="online"):
        enumerate_clusters(ex2, cap=5)


def test_cache_matches_direct(ex1):
    cache = EffectiveNetworkCache(ex1)
    for m in all_models(ex1):
        assert cache(m) == effective_network(ex1, m)
    assert len(cache) == 32


def test_key_label_round_trip():
    for ids in [(), (1,), (1, 2, 8)]:
        k = EffectiveNetworkKey.of(ids)
        assert EffectiveNetworkKey.from_label(k.label) == k


# -- pathways --------------------------------------------------------------------------


def test_pathway_left(ex1):
    assert pathway_class(ex1, _drop(ex1, 5), LEFT_BOTH) == "left"


def test_pathway_both(ex1):
    assert pathway_class(ex1, ModelIndicator.full(5), LEFT_BOTH) == "both"


def test_pathway_default(ex1):
    for m in all_models(ex1):
        assert pathway_class(ex1, m, []) == "other"


# -- exhaustive properties on the bundled networks ------------------------------------------------


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_monotone_over_all_comparable_pairs(name, request):
    net = request.getfixturevalue(name)
    en = {m: set(effective_network(net, m)) for m in all_models(net)}
    n = len(net.uncertain_ids)
    for m in en:
        # enumerate supersets by filling zero bits
        zeros = [i for i, b in enumerate(m.included) if not b]
        for k in range(1, len(zeros) + 1):
            for extra in itertools.combinations(zeros, k):
                sup = list(m.included)
                for i in extra:
                    sup[i] = True
                assert en[m] <= en[ModelIndicator(tuple(sup))]
        assert len(m) == n


def test_single_toggle_never_incomparable(ex1):
    for m in all_models(ex1):
        a = set(effective_network(ex1, m))
        for i in range(len(m)):
            b = set(effective_network(ex1, m.toggle(i)))
            assert a <= b or b <= a


# -- hypothesis properties --------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(networks())
def test_effective_network_deterministic_under_reordering(net):
    shuffled = list(net.reactions)
    random.Random(0).shuffle(shuffled)
    other = net.with_reactions(shuffled)
    for m in all_models(net):
        assert effective_network(net, m) == effective_network(other, m)


@settings(max_examples=60, deadline=None)
@given(networks())
def test_effective_network_idempotent(net):
    for m in all_models(net):
        key = effective_network(net, m)
        assert effective_network(net, frozenset(key)) == key


@settings(max_examples=60, deadline=None)
@given(networks(max_reactions=6, min_uncertain=2))
def test_effective_network_monotone(net):
    models = list(all_models(net))
    en = {m: effective_network(net, m) for m in models}
    for a in models:
        for b in models:
            if a.is_subset_of(b):
                assert en[a].issubset(en[b])


@settings(max_examples=60, deadline=None)
@given(networks())
def test_clusters_partition_model_space(net):
    clusters = enumerate_clusters(net)
    members = [m for ms in clusters.values() for m in ms]
    assert len(members) == 2 ** len(net.uncertain_ids)
    assert len(set(members)) == len(members)
    for key, ms in clusters.items():
        assert all(effective_network(net, m) == key for m in ms)


@settings(max_examples=60, deadline=None)
@given(networks())
def test_effective_network_within_active_set(net):
    for m in all_models(net):
        assert set(effective_network(net, m)) <= set(active_reactions(net, m))
