"""Independent oracles: hand transcriptions and a separate integrator.

Nothing here imports rxninfer's kinetics; the species production rates are
written out term by term for the 12-reaction EGF-ERK network.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import odeint, quad, solve_ivp, trapezoid

SPECIES = (
    "unboundEGFR", "inactiveSOS", "inactiveRas", "inactiveRap1", "boundEGFR", "activeSOS", "activeRas",
    "activeRap1", "EGF", "BRafPP", "BRaf", "activeC3G", "inactiveC3G", "degradedEGFR", "Gap",
)
Y0 = dict(unboundEGFR=500, inactiveSOS=1200, inactiveRas=1200, inactiveRap1=1200, boundEGFR=0, activeSOS=0,
          activeRas=0, activeRap1=0, EGF=1000, BRafPP=0, BRaf=1500, activeC3G=0, inactiveC3G=1200,
          degradedEGFR=0, Gap=2400)
BASE_LOG10 = {"1": 0.0, "2f": 1.5, "2r": 0.0, "3": 0.5, "4": 2.0, "5": 2.0, "6": 0.4, "7": 1.0, "8": 0.5,
              "9": 0.0, "10": 0.5, "11": 4.0, "12": 2.5}
KM = {3: 3386.3875, 5: 3566.0, 6: 17991.179, 7: 6808.32, 8: 7631.63, 9: 12457.816, 10: 13.73, 11: 9834.13,
      12: 8176.56}


def reaction_terms(c: dict, k: dict, include=range(1, 13)) -> dict:
    """Rates of reactions 1-12, written out by hand from the rate table."""
    inc = set(include)
    K = {key: 10.0 ** v for key, v in k.items()}
    r = {
        1: K["1"] * c["boundEGFR"],
        2: K["2f"] * c["EGF"] * c["unboundEGFR"] - K["2r"] * c["boundEGFR"],
        3: K["3"] * c["boundEGFR"] * c["inactiveC3G"] / (KM[3] + c["inactiveC3G"]),
        4: K["4"] * c["activeC3G"],
        5: K["5"] * c["activeC3G"] * c["inactiveRap1"] / (KM[5] + c["inactiveRap1"]),
        6: K["6"] * c["activeRap1"] * c["BRaf"] / (KM[6] + c["BRaf"]),
        7: K["7"] * c["Gap"] * c["activeRap1"] / (KM[7] + c["activeRap1"]),
        8: K["8"] * c["activeRas"] * c["BRaf"] / (KM[8] + c["BRaf"]),
        9: K["9"] * c["Gap"] * c["activeRas"] / (KM[9] + c["activeRas"]),
        10: K["10"] * c["activeSOS"] * c["inactiveRas"] / (KM[10] + c["inactiveRas"]),
        11: K["11"] * c["activeSOS"] / (KM[11] + c["activeSOS"]),
        12: K["12"] * c["boundEGFR"] * c["inactiveSOS"] / (KM[12] + c["inactiveSOS"]),
    }
    return {i: (v if i in inc else 0.0) for i, v in r.items()}


def transcribed_rhs(c: dict, k: dict, include=range(1, 13), rap1_plus_sign: bool = False) -> dict:
    """Species production rates written out term by term.

    ``rap1_plus_sign=True`` puts '+' on the reaction-7 term of
    d[activeRap1]/dt; the stoichiometric form has '-'.
    """
    r = reaction_terms(c, k, include)
    s7 = 1.0 if rap1_plus_sign else -1.0
    return {
        "unboundEGFR": -r[2],
        "inactiveSOS": -r[12] + r[11],
        "inactiveRas": -r[10] + r[9],
        "inactiveRap1": r[7] - r[5],
        "boundEGFR": r[2] - r[1],
        "activeSOS": r[12] - r[11],
        "activeRas": r[10] - r[9],
        "activeRap1": s7 * r[7] + r[5],
        "EGF": -r[2],
        "BRafPP": r[6] + r[8],
        "BRaf": -r[6] - r[8],
        "activeC3G": r[3] - r[4],
        "inactiveC3G": -r[3] + r[4],
        "degradedEGFR": r[1],
        "Gap": 0.0,
    }


def radau_braf(times, k: dict | None = None, include=range(1, 13), rtol=1e-10, atol=1e-10) -> np.ndarray:
    """[BRaf](times) with scipy's Radau on the transcribed system."""
    k = dict(BASE_LOG10, **(k or {}))

    def f(t, y):
        c = dict(zip(SPECIES, np.maximum(y, 0.0)))
        d = transcribed_rhs(c, k, include)
        return [d[s] for s in SPECIES]

    y0 = [float(Y0[s]) for s in SPECIES]
    sol = solve_ivp(f, (0.0, float(times[-1])), y0, method="Radau", t_eval=times, rtol=rtol, atol=atol)
    assert sol.success, sol.message
    return sol.y[SPECIES.index("BRaf")]


def odeint_braf(times, k: dict | None = None, include=range(1, 13), rtol=1e-10, atol=1e-10) -> np.ndarray:
    """[BRaf](times) with ODEPACK's LSODA on the transcribed system."""
    k = dict(BASE_LOG10, **(k or {}))

    def f(y, t):
        c = dict(zip(SPECIES, np.maximum(y, 0.0)))
        d = transcribed_rhs(c, k, include)
        return [d[s] for s in SPECIES]

    y0 = [float(Y0[s]) for s in SPECIES]
    y = odeint(f, y0, np.concatenate(([0.0], times)), rtol=rtol, atol=atol, mxstep=100000)
    return y[1:, SPECIES.index("BRaf")]


def gaussian_ll(obs, pred, s2) -> float:
    r = np.asarray(obs) - np.asarray(pred)
    return float(-0.5 * r.size * np.log(2 * np.pi * s2) - 0.5 * r @ r / s2)


def normal_logpdf(x, m, v) -> float:
    return float(-0.5 * np.log(2 * np.pi * v) - 0.5 * (x - m) ** 2 / v)


def grid_moments(logf, lo, hi, n=1000):
    """Mode (grid argmax) and quadrature mean/variance of exp(logf) on [lo, hi]."""
    x = np.linspace(lo, hi, n)
    lp = np.array([logf(v) for v in x])
    w = np.exp(lp - lp.max())
    z = trapezoid(w, x)
    mean = trapezoid(w * x, x) / z
    var = trapezoid(w * (x - mean) ** 2, x) / z
    return x[np.argmax(lp)], mean, var, x[1] - x[0]


def prior_normaliser(m, v) -> float:
    return quad(lambda x: np.exp(normal_logpdf(x, m, v)), m - 12 * np.sqrt(v), m + 12 * np.sqrt(v))[0]
