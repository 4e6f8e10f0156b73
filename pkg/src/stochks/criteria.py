"""Closed-form blow-up thresholds, blow-up times and the Gronwall envelope.

With ``b = 2 gamma C_sigma`` and ``kappa = chi / (4 pi) - 2``:

* almost-sure threshold ``chi_as = 8 pi (1 + gamma)``, time
  ``T1 = 4 pi V0 / (chi - chi_as)``;
* positive-probability threshold ``chi_pp = 8 pi (1 + gamma V0 C_sigma)``, time
  ``T2 = -log(1 - b V0 / kappa) / b`` (the root of the envelope);
* envelope ``E(t) = V0 e^{b t} - kappa (e^{b t} - 1) / b`` bounding ``E[V[u_t]]``.

As ``b -> 0`` both ``T2`` and the envelope reduce to the deterministic values
``4 pi V0 / (chi - 8 pi)`` and ``V0 - kappa t``; these limits are evaluated
directly rather than as 0/0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

EIGHT_PI = 8.0 * math.pi

AS_BLOWUP = "as_blowup"
PP_BLOWUP = "positive_prob_blowup"
NO_CRITERION = "no_criterion"


@dataclass(frozen=True)
class CriteriaReport:
    chi: float
    gamma: float
    V0: float
    c_sigma: float
    chi_as: float
    chi_pp: float
    T1: float | None
    T2: float | None
    T_star: float | None
    regime: str

    def to_dict(self) -> dict:
        return asdict(self)


def _check(chi, gamma, V0, c_sigma):
    for name, v in (("chi", chi), ("gamma", gamma), ("V0", V0), ("c_sigma", c_sigma)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite")
    if chi <= 0:
        raise ValueError("chi must be positive")
    if V0 <= 0:
        raise ValueError("V0 must be positive")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if c_sigma < 0:
        raise ValueError("c_sigma must be non-negative")


def time_t1(chi: float, gamma: float, V0: float) -> float | None:
    chi_as = EIGHT_PI * (1.0 + gamma)
    if chi <= chi_as:
        return None
    return 4.0 * math.pi * V0 / (chi - chi_as)


def time_t2(chi: float, gamma: float, V0: float, c_sigma: float) -> float | None:
    chi_pp = EIGHT_PI * (1.0 + gamma * V0 * c_sigma)
    if chi <= chi_pp:
        return None
    b = 2.0 * gamma * c_sigma
    if b == 0.0:
        return 4.0 * math.pi * V0 / (chi - EIGHT_PI)
    a = EIGHT_PI * gamma * V0 * c_sigma / (chi - EIGHT_PI)
    return -math.log1p(-a) / b


def evaluate_criteria(chi: float, gamma: float, V0: float, c_sigma: float) -> CriteriaReport:
    _check(chi, gamma, V0, c_sigma)
    T1 = time_t1(chi, gamma, V0)
    T2 = time_t2(chi, gamma, V0, c_sigma)
    defined = [t for t in (T1, T2) if t is not None]
    if T1 is not None:
        regime = AS_BLOWUP
    elif T2 is not None:
        regime = PP_BLOWUP
    else:
        regime = NO_CRITERION
    return CriteriaReport(
        chi=chi,
        gamma=gamma,
        V0=V0,
        c_sigma=c_sigma,
        chi_as=EIGHT_PI * (1.0 + gamma),
        chi_pp=EIGHT_PI * (1.0 + gamma * V0 * c_sigma),
        T1=T1,
        T2=T2,
        T_star=min(defined) if defined else None,
        regime=regime,
    )


def gronwall_envelope(chi: float, gamma: float, V0: float, c_sigma: float, t):
    """Upper bound on ``E[V[u_t]]``; accepts scalar or array ``t``."""
    t = np.asarray(t, dtype=float)
    kappa = chi / (4.0 * math.pi) - 2.0
    b = 2.0 * gamma * c_sigma
    if b == 0.0:
        out = V0 - kappa * t
    else:
        out = V0 * np.exp(b * t) - kappa * np.expm1(b * t) / b
    return float(out) if out.ndim == 0 else out


T1_SMALLER = "T1_smaller"
T2_SMALLER = "T2_smaller"
TIE = "tie"
UNDEFINED = "undefined"


def ordering_check(V0: float, c_sigma: float, chi: float, gamma: float, rel_tol: float = 1e-12) -> str:
    """Which of ``T1``, ``T2`` is smaller; ``undefined`` unless both exist."""
    rep = evaluate_criteria(chi, gamma, V0, c_sigma)
    if rep.T1 is None or rep.T2 is None:
        return UNDEFINED
    if math.isclose(rep.T1, rep.T2, rel_tol=rel_tol):
        return TIE
    return T1_SMALLER if rep.T1 < rep.T2 else T2_SMALLER
