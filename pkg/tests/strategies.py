"""Hypothesis strategies for small random reaction networks."""

from hypothesis import strategies as st

from rxninfer.network import Prior, RateLaw, Reaction, ReactionNetwork, Species


@st.composite
def networks(draw, max_species=6, max_reactions=6, min_uncertain=0):
    n_sp = draw(st.integers(2, max_species))
    names = [f"S{i}" for i in range(n_sp)]
    species = [
        Species(n, initial_concentration=draw(st.sampled_from([0.0, 0.0, 1.0, 10.0])), observed=(i == n_sp - 1))
        for i, n in enumerate(names)
    ]
    n_rx = draw(st.integers(1, max_reactions))
    reactions = []
    for rid in range(1, n_rx + 1):
        reactants = draw(st.lists(st.sampled_from(names), min_size=1, max_size=2, unique=True))
        others = [n for n in names if n not in reactants]
        products = draw(st.lists(st.sampled_from(others), min_size=0, max_size=2, unique=True)) if others else []
        rest = [n for n in names if n not in reactants and n not in products]
        enzymes = draw(st.lists(st.sampled_from(rest), max_size=1, unique=True)) if rest else []
        reversible = draw(st.booleans()) and bool(products)
        fixed = draw(st.booleans()) if rid > min_uncertain else False
        reactions.append(
            Reaction(
                id=rid,
                reactants=tuple(reactants),
                products=tuple(products),
                enzymes=tuple(enzymes),
                reversible=reversible,
                rate_law=RateLaw.MASS_ACTION,
                log10_k=0.0,
                log10_k_reverse=0.0 if reversible else None,
                fixed=fixed,
                prior=None if fixed else Prior(0.0, 0.25),
                reverse_prior=Prior(0.0, 0.25) if (reversible and not fixed) else None,
            )
        )
    return ReactionNetwork(tuple(species), tuple(reactions), name="random")
