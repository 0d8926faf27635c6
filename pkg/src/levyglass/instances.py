"""Planted reference instances with well-separated bond timescales."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .couplings import CouplingLaw, RegimeParams, sample_matrix
from .wells import WellDecomposition


@dataclass
class PlantedInstance:
    J: object
    regime: RegimeParams
    decomp: WellDecomposition
    law: CouplingLaw
    seed: int


def planted_instance(n=8, beta=1.0, bonds=((0, 1, 6.0), (2, 3, -5.0)), log_t=None,
                     background=0.005, seed=0, alpha=0.5, max_background=0.25):
    """Planted bonds over a scaled Pareto background.

    The first seed at or after ``seed`` whose largest background entry is at
    most ``max_background`` is used, so the instance is reproducible.
    ``log_t`` defaults to the midpoint between zero and the smallest planted
    log-scale, which makes every planted bond relevant.
    """
    edges = {(i, j): v for i, j, v in bonds}
    law = CouplingLaw.planted_law(n, edges, base=CouplingLaw.pareto(alpha, n),
                                  base_scale=background, alpha=alpha)
    planted = {(min(i, j), max(i, j)) for i, j, _ in bonds}
    s = int(seed)
    while True:
        J = sample_matrix(law, s)
        A = np.abs(J.values).copy()
        for i, j in planted:
            A[i, j] = A[j, i] = 0.0
        if A.max() <= max_background:
            break
        s += 1
    if log_t is None:
        log_t = beta * min(abs(v) for *_, v in bonds)
    regime = RegimeParams.from_log_time(beta, log_t, n, alpha=alpha)
    return PlantedInstance(J, regime, WellDecomposition(J, regime), law, s)
