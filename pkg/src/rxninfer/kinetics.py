"""Deterministic ODE forward model for reaction networks.

Two evaluation paths share the same semantics:

* :func:`reaction_rate` / :func:`assemble_rhs` -- plain Python, readable,
  used as the reference in tests;
* a packed numeric "program" evaluated by a numba ``cfunc`` and integrated
  with LSODA (via ``numbalsoda``), used everywhere performance matters.

Rate constants enter as log10 values. Enzymes multiply the rate of the
reaction they catalyse and have zero net stoichiometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numba as nb
import numpy as np
from numbalsoda import lsoda, lsoda_sig

from .network import ModelIndicator, RateLaw, Reaction, ReactionNetwork

_HEADER = 2
_MAXL = 6
_BLOCK = 5 + 3 * (_MAXL + 1)
_MA, _MM = 0.0, 1.0


class IntegrationError(RuntimeError):
    """The ODE solve failed; carries the reaction set and parameters."""

    def __init__(self, message, reactions=None, params=None):
        super().__init__(message)
        self.reactions = reactions
        self.params = params


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    # LSODA semantics: maximum internal steps between two output times.
    max_steps: int = 100_000

    def __post_init__(self):
        if not 0 < self.rel_tol < 1 or not 0 < self.abs_tol < 1:
            raise ValueError("rel_tol and abs_tol must lie in (0, 1)")
        if int(self.max_steps) < 1:
            raise ValueError("max_steps must be positive")


@dataclass
class RateParameters:
    """log10 rate constants keyed by ``(reaction id, 'f' | 'r')`` plus
    Michaelis constants keyed by reaction id."""

    log10_k: dict[tuple[int, str], float]
    michaelis: dict[int, float] = field(default_factory=dict)

    @classmethod
    def base(cls, net: ReactionNetwork, overrides: Mapping[tuple[int, str], float] | None = None) -> "RateParameters":
        logk: dict[tuple[int, str], float] = {}
        km: dict[int, float] = {}
        for r in net.reactions:
            logk[(r.id, "f")] = float(r.log10_k)
            if r.reversible:
                logk[(r.id, "r")] = float(r.log10_k_reverse)
            if r.michaelis_constant is not None:
                km[r.id] = float(r.michaelis_constant)
        if overrides:
            for key, value in overrides.items():
                if key not in logk:
                    raise KeyError(f"unknown rate constant {key}")
                logk[key] = float(value)
        return cls(logk, km)

    def k(self, rid: int, direction: str = "f") -> float:
        return 10.0 ** self.log10_k[(rid, direction)]


@dataclass(frozen=True)
class ConcentrationState:
    values: np.ndarray
    time: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    values: np.ndarray  # (len(times), n_species)
    species: tuple[str, ...]

    @property
    def states(self) -> list[ConcentrationState]:
        return [ConcentrationState(v, float(t)) for t, v in zip(self.times, self.values)]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, self.species.index(name)]


# -- reference path ------------------------------------------------------------


def reaction_rate(reaction: Reaction, params: RateParameters, conc: Mapping[str, float]) -> tuple[float, float]:
    """(forward, reverse) rate of one reaction; reverse is 0 when irreversible."""

    def c(name):
        return max(float(conc[name]), 0.0)

    enz = 1.0
    for e in reaction.enzymes:
        enz *= c(e)
    kf = params.k(reaction.id, "f")
    if reaction.rate_law == RateLaw.MICHAELIS_MENTEN:
        s = c(reaction.reactants[0])
        km = params.michaelis.get(reaction.id, reaction.michaelis_constant)
        return kf * enz * s / (km + s), 0.0
    fwd = kf * enz
    for r in reaction.reactants:
        fwd *= c(r)
    rev = 0.0
    if reaction.reversible:
        rev = params.k(reaction.id, "r") * enz
        for p in reaction.products:
            rev *= c(p)
    return fwd, rev


def assemble_rhs(
    net: ReactionNetwork,
    model: ModelIndicator | Iterable[int],
    params: RateParameters,
    conc: np.ndarray | ConcentrationState,
) -> np.ndarray:
    """d[S]/dt for every species in network order."""
    values = conc.values if isinstance(conc, ConcentrationState) else np.asarray(conc, dtype=float)
    named = dict(zip(net.species_names, values))
    ids = net.model_reactions(model) if isinstance(model, ModelIndicator) else frozenset(model)
    out = np.zeros(len(net.species))
    for rid in sorted(ids):
        rx = net.reaction(rid)
        fwd, rev = reaction_rate(rx, params, named)
        net_rate = fwd - rev
        for s in rx.reactants:
            out[net.species_index(s)] -= net_rate
        for s in rx.products:
            out[net.species_index(s)] += net_rate
    return out


# -- compiled path ---------------------------------------------------------------


@nb.njit(cache=True)
def _rhs_kernel(y, dy, data):
    ns = int(data[0])
    nr = int(data[1])
    c = np.empty(ns)
    for s in range(ns):
        c[s] = y[s] if y[s] > 0.0 else 0.0
        dy[s] = 0.0
    for j in range(nr):
        b = _HEADER + j * _BLOCK
        law = data[b]
        rev = data[b + 1]
        kf = data[b + 2]
        kr = data[b + 3]
        km = data[b + 4]
        o = b + 5
        nre = int(data[o])
        op = o + _MAXL + 1
        npr = int(data[op])
        oe = op + _MAXL + 1
        nen = int(data[oe])
        enz = 1.0
        for i in range(nen):
            enz *= c[int(data[oe + 1 + i])]
        if law == 1.0:
            s = c[int(data[o + 1])]
            rate = kf * enz * s / (km + s)
        else:
            fwd = kf * enz
            for i in range(nre):
                fwd *= c[int(data[o + 1 + i])]
            back = 0.0
            if rev == 1.0:
                back = kr * enz
                for i in range(npr):
                    back *= c[int(data[op + 1 + i])]
            rate = fwd - back
        for i in range(nre):
            dy[int(data[o + 1 + i])] -= rate
        for i in range(npr):
            dy[int(data[op + 1 + i])] += rate


@nb.cfunc(lsoda_sig, cache=True)
def _lsoda_rhs(t, y_, dy_, p_):
    ns = int(p_[0])
    nr = int(p_[1])
    y = nb.carray(y_, (ns,))
    dy = nb.carray(dy_, (ns,))
    data = nb.carray(p_, (_HEADER + nr * _BLOCK,))
    _rhs_kernel(y, dy, data)


_RHS_ADDRESS = _lsoda_rhs.address


class KineticProgram:
    """Packed numeric description of one reaction set, ready for LSODA.

    ``slot_index`` maps ``(reaction id, direction)`` to the position of its
    rate constant inside :attr:`template` so callers can overwrite values
    without re-packing.
    """

    def __init__(self, net: ReactionNetwork, reaction_ids: Iterable[int], params: RateParameters | None = None):
        params = params or RateParameters.base(net)
        self.reaction_ids = tuple(sorted(reaction_ids))
        self.n_species = len(net.species)
        data = np.zeros(_HEADER + _BLOCK * len(self.reaction_ids))
        data[0] = self.n_species
        data[1] = len(self.reaction_ids)
        self.slot_index: dict[tuple[int, str], int] = {}
        for j, rid in enumerate(self.reaction_ids):
            rx = net.reaction(rid)
            b = _HEADER + j * _BLOCK
            data[b] = _MM if rx.rate_law == RateLaw.MICHAELIS_MENTEN else _MA
            data[b + 1] = 1.0 if rx.reversible else 0.0
            data[b + 2] = params.k(rid, "f")
            self.slot_index[(rid, "f")] = b + 2
            if rx.reversible:
                data[b + 3] = params.k(rid, "r")
                self.slot_index[(rid, "r")] = b + 3
            if rx.rate_law == RateLaw.MICHAELIS_MENTEN:
                data[b + 4] = params.michaelis.get(rid, rx.michaelis_constant)
            offset = b + 5
            for names in (rx.reactants, rx.products, rx.enzymes):
                if len(names) > _MAXL:
                    raise ValueError(f"reaction {rid}: more than {_MAXL} species in one role")
                data[offset] = len(names)
                for i, name in enumerate(names):
                    data[offset + 1 + i] = net.species_index(name)
                offset += _MAXL + 1
        self.template = data

    def with_log10(self, values: Mapping[tuple[int, str], float]) -> np.ndarray:
        data = self.template.copy()
        for key, v in values.items():
            pos = self.slot_index.get(key)
            if pos is not None:
                data[pos] = 10.0 ** v
        return data

    def rhs(self, y: np.ndarray, data: np.ndarray | None = None) -> np.ndarray:
        dy = np.empty(self.n_species)
        _rhs_kernel(np.asarray(y, dtype=float), dy, self.template if data is None else data)
        return dy


def solve_program(
    data: np.ndarray, y0: np.ndarray, times: np.ndarray, cfg: IntegratorConfig
) -> np.ndarray:
    """Integrate a packed program from t=0; rows of the result match ``times``.

    Raises :class:`IntegrationError` on solver failure, non-finite output, or
    a concentration below ``-(abs_tol + rel_tol * peak)`` where ``peak`` is
    that species' largest magnitude over the output times.
    """
    times = np.asarray(times, dtype=float)
    prepend = times.size == 0 or times[0] > 0.0
    t_eval = np.concatenate(([0.0], times)) if prepend else times
    if t_eval.size < 2:
        out = np.tile(np.asarray(y0, dtype=float), (t_eval.size, 1))
        return out[1:] if prepend else out
    usol, ok = lsoda(
        _RHS_ADDRESS,
        np.asarray(y0, dtype=float),
        t_eval,
        data,
        cfg.rel_tol,
        cfg.abs_tol,
        int(cfg.max_steps),
    )
    if not ok:
        raise IntegrationError("LSODA reported failure")
    if not np.all(np.isfinite(usol)):
        raise IntegrationError("non-finite concentrations")
    # Undershoot below zero is tolerated up to each species' error scale.
    floor = -(cfg.abs_tol + cfg.rel_tol * np.abs(usol).max(axis=0))
    if np.any(usol < floor):
        raise IntegrationError(f"negative concentration {usol.min():.3e} beyond solver tolerance")
    return usol[1:] if prepend else usol


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float).ravel()
    if times.size and (times[0] < 0 or np.any(np.diff(times) <= 0)):
        raise ValueError("times must be strictly increasing and non-negative")
    return times


def integrate(
    net: ReactionNetwork,
    model: ModelIndicator | Iterable[int],
    params: RateParameters,
    times,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> Trajectory:
    times = _check_times(times)
    ids = net.model_reactions(model) if isinstance(model, ModelIndicator) else frozenset(model)
    prog = KineticProgram(net, ids, params)
    try:
        values = solve_program(prog.template, np.array(net.initial_concentrations), times, cfg)
    except IntegrationError as exc:
        raise IntegrationError(str(exc), reactions=prog.reaction_ids, params=params) from None
    return Trajectory(times, values, net.species_names)


def observed_indices(net: ReactionNetwork) -> np.ndarray:
    return np.array([i for i, s in enumerate(net.species) if s.observed], dtype=int)


def predict_observables(
    net: ReactionNetwork,
    model: ModelIndicator | Iterable[int],
    params: RateParameters,
    times,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> np.ndarray:
    """G(M, k): observed concentrations, time-major then species order."""
    traj = integrate(net, model, params, times, cfg)
    return traj.values[:, observed_indices(net)].reshape(-1)


class ForwardModel:
    """Cached observable predictor for repeated solves over one network.

    Programs are built once per reaction set; each call only overwrites
    the uncertain rate constants.
    """

    def __init__(self, net: ReactionNetwork, times, cfg: IntegratorConfig = IntegratorConfig()):
        self.net = net
        self.times = _check_times(times)
        self.cfg = cfg
        self.y0 = np.array(net.initial_concentrations, dtype=float)
        self.obs = observed_indices(net)
        self._programs: dict[tuple[int, ...], KineticProgram] = {}
        self.n_solves = 0

    def program(self, reaction_ids: Iterable[int]) -> KineticProgram:
        key = tuple(sorted(reaction_ids))
        prog = self._programs.get(key)
        if prog is None:
            prog = self._programs[key] = KineticProgram(self.net, key)
        return prog

    def predict(self, reaction_ids: Iterable[int], log10_values: Mapping[tuple[int, str], float]) -> np.ndarray:
        prog = self.program(reaction_ids)
        self.n_solves += 1
        if not prog.reaction_ids or self.times.size == 0:
            return np.tile(self.y0[self.obs], self.times.size)
        try:
            sol = solve_program(prog.with_log10(log10_values), self.y0, self.times, self.cfg)
        except IntegrationError as exc:
            raise IntegrationError(str(exc), reactions=prog.reaction_ids, params=dict(log10_values)) from None
        return sol[:, self.obs].reshape(-1)
