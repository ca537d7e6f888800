"""
Dissipation: collapse operators and static detuning ensembles.

Rates are in 1/ns. A2 decays radiatively to GM and GP with equal branching
(gamma_sp/2 each) and into G0 through the strain-mixing channel (gamma_mix).
EY decays back to G0. Ground-state dephasing is either a Lindblad term on GM
and GP or an ensemble of static differential detunings.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional
import logging
import math

import numpy as np
from scipy import stats

from nv_levels import NV_SCHEME, LevelScheme
from sim_defaults import (
    GAMMA_EY_PER_NS,
    GAMMA_MIX_PER_NS,
    GAMMA_SP_PER_NS,
    STREAM_STATIC_DETUNING,
    T2STAR_US,
    derive_rng,
)

logger = logging.getLogger(__name__)


class DephasingModel(str, Enum):
    NONE = "none"
    LINDBLAD = "lindblad"
    STATIC_GAUSSIAN = "static_gaussian"

    @classmethod
    def parse(cls, value) -> "DephasingModel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            allowed = ", ".join(member.value for member in cls)
            raise ValueError(f"dephasing_model: expected one of {allowed}, got {value!r}") from None


def _rate(value, name: str) -> float:
    try:
        rate = float(value)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name}: expected numeric value, got {value!r}") from exc
    if not math.isfinite(rate) or rate < 0:
        raise ValueError(f"{name}: must be a finite rate >= 0, got {rate}")
    return rate


@dataclass(frozen=True)
class DecoherenceParams:
    gamma_sp: float = GAMMA_SP_PER_NS  # A2 radiative decay (1/ns)
    gamma_mix: float = GAMMA_MIX_PER_NS  # A2 -> G0 strain mixing (1/ns)
    gamma_ey: float = GAMMA_EY_PER_NS  # EY radiative decay (1/ns)
    t2star_us: float = T2STAR_US
    dephasing_model: DephasingModel = DephasingModel.LINDBLAD
    static_samples: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("gamma_sp", "gamma_mix", "gamma_ey"):
            object.__setattr__(self, name, _rate(getattr(self, name), name))
        t2star = _rate(self.t2star_us, "t2star_us")
        if t2star <= 0:
            raise ValueError(f"t2star_us: must be > 0, got {t2star}")
        object.__setattr__(self, "t2star_us", t2star)
        object.__setattr__(self, "dephasing_model", DephasingModel.parse(self.dephasing_model))
        if isinstance(self.static_samples, bool) or int(self.static_samples) != self.static_samples:
            raise ValueError(f"static_samples: expected an integer, got {self.static_samples!r}")
        if self.static_samples < 1:
            raise ValueError(f"static_samples: must be >= 1, got {self.static_samples}")
        object.__setattr__(self, "static_samples", int(self.static_samples))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def gamma_phi(self) -> float:
        """Lindblad dephasing rate giving a GM-GP coherence 1/e time of t2star."""
        return 1.0 / (self.t2star_us * 1000.0)

    def without_decoherence(self) -> "DecoherenceParams":
        """Radiative decay only: no dephasing, no strain-mixing channel."""
        return replace(self, gamma_mix=0.0, dephasing_model=DephasingModel.NONE)


def _jump(scheme: LevelScheme, to_level: str, from_level: str, rate: float) -> np.ndarray:
    op = np.zeros((scheme.dimension, scheme.dimension), dtype=complex)
    op[scheme.index(to_level), scheme.index(from_level)] = math.sqrt(rate)
    return op


def collapse_operators(params: DecoherenceParams, scheme: LevelScheme = NV_SCHEME) -> List[np.ndarray]:
    """
    Lindblad operators for the given rates.

    Zero-rate channels are left out, so all-zero rates give an empty list.
    Dephasing operators are only present for the LINDBLAD model; the
    STATIC_GAUSSIAN model is handled by ensemble averaging in the propagator.
    """
    channels = [
        ("GM", "A2", params.gamma_sp / 2.0),
        ("GP", "A2", params.gamma_sp / 2.0),
        ("G0", "A2", params.gamma_mix),
        ("G0", "EY", params.gamma_ey),
    ]
    operators = [_jump(scheme, to, frm, rate) for to, frm, rate in channels if rate > 0]

    if params.dephasing_model is DephasingModel.LINDBLAD:
        gamma_phi = params.gamma_phi
        for level in ("GM", "GP"):
            operators.append(_jump(scheme, level, level, gamma_phi))
    return operators


def rate_matrix(params: DecoherenceParams, scheme: LevelScheme = NV_SCHEME) -> np.ndarray:
    """
    Classical population rates dp/dt = M p of the jump channels.

    M[f, i] = |L_fi|^2 for f != i and each column sums to zero. Dephasing
    projectors are diagonal and leave populations alone, so they drop out.
    """
    dim = scheme.dimension
    rates = np.zeros((dim, dim))
    for op in collapse_operators(params, scheme):
        weights = np.abs(op) ** 2
        np.fill_diagonal(weights, 0.0)
        rates += weights
    rates -= np.diag(rates.sum(axis=0))
    return rates


def static_sigma_mhz(t2star_us: float) -> float:
    """
    Detuning spread for a Gaussian envelope exp(-(2 pi sigma t)^2 / 2).

    The envelope reaches 1/e at t = t2star for sigma = sqrt(2)/(2 pi t2star).
    """
    return math.sqrt(2.0) / (2.0 * math.pi * t2star_us)


def static_detuning_samples(
    params: DecoherenceParams, sigma_mhz: Optional[float] = None
) -> np.ndarray:
    """
    Seeded differential GM/GP detunings (MHz) for the static ensemble.

    Samples are stratified quantiles of the normal distribution, one per
    equal-probability stratum with a seeded position inside it, so a few tens
    of members already reproduce the Gaussian envelope closely.

    Raises:
        ValueError: if the dephasing model is not STATIC_GAUSSIAN
    """
    if params.dephasing_model is not DephasingModel.STATIC_GAUSSIAN:
        raise ValueError(
            f"static detuning samples need the static_gaussian model, got "
            f"{params.dephasing_model.value}"
        )
    sigma = static_sigma_mhz(params.t2star_us) if sigma_mhz is None else float(sigma_mhz)
    if sigma < 0:
        raise ValueError(f"sigma_mhz: must be >= 0, got {sigma}")
    count = params.static_samples
    if sigma == 0.0:
        return np.zeros(count)

    rng = derive_rng(params.seed, STREAM_STATIC_DETUNING)
    strata = (np.arange(count) + rng.random(count)) / count
    strata = np.clip(strata, 1e-12, 1.0 - 1e-12)
    samples = sigma * stats.norm.ppf(strata)
    logger.debug("[DEPHASING] %d static samples, sigma=%.4f MHz", count, sigma)
    return samples
