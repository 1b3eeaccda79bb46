"""Phase-dependent outcome probabilities of the lossy interferometer.

Every detection probability treated here has the fringe form

    p(phi) = w * (1 + s * V * cos(m * phi))

with weight ``w``, visibility ``V``, sign ``s = +-1`` and harmonic ``m``.
:class:`FringeLaw` implements that form together with its phase derivative
and a cancellation-free expression for ``p'^2 / p``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import LossBudget, classical_arm_transmissions
from .errors import ConsistencyError, DomainError, IdempotenceWarning

# Clamping beyond this is a bug, not rounding.
CLAMP_TOLERANCE = 1e-12

DEGENERATE_WAVELENGTH_NM = 1560.61

SAME_PORT_LABELS = ("P12", "P34")
CROSS_PORT_LABELS = ("P23", "P14")
COINCIDENCE_LABELS = ("P12", "P34", "P23", "P14")
SINGLE_PHOTON_LABELS = ("P10", "P01")
FRANSON_LABELS = ("P20", "P02", "P11")


class Basis(str, enum.Enum):
    POLARIZATION = "polarization"
    PATH = "path"


class PhaseConvention(str, enum.Enum):
    PER_PHOTON = "per_photon_phi"
    TOTAL = "total_Phi"


class FransonMode(str, enum.Enum):
    POST_SELECTED = "post_selected"
    FULL = "full"


@dataclass(frozen=True)
class EntangledPairSpec:
    """Maximally entangled photon pair entering the interferometer."""

    basis: Basis = Basis.POLARIZATION
    pair_phase: float = 0.0
    wavelength_nm: float = DEGENERATE_WAVELENGTH_NM

    def __post_init__(self):
        object.__setattr__(self, "basis", Basis(self.basis))
        if not math.isfinite(self.pair_phase):
            raise DomainError("pair phase must be finite")
        if not self.wavelength_nm > 0:
            raise DomainError("wavelength must be positive")


@dataclass(frozen=True)
class NoonProbe:
    """N-photon path-entangled probe; ``total_phase`` is Phi = N * phi."""

    n_photons: int = 2
    arm_balance: float = 1.0
    phase_convention: PhaseConvention = PhaseConvention.PER_PHOTON
    total_phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phase_convention", PhaseConvention(self.phase_convention))
        if int(self.n_photons) != self.n_photons or self.n_photons < 1:
            raise DomainError(f"photon number must be a positive integer, got {self.n_photons}")
        if not (0.0 < self.arm_balance <= 1.0):
            raise DomainError(f"arm balance {self.arm_balance} outside (0, 1]")

    @property
    def per_photon_phase(self) -> float:
        return self.total_phase / self.n_photons


@dataclass(frozen=True)
class Visibility:
    value: float
    order: int

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise DomainError(f"visibility {self.value} outside [0, 1]")
        if self.order < 1:
            raise DomainError("visibility order must be >= 1")

    def __float__(self):
        return float(self.value)


def _visibility_value(v, order: int) -> float:
    if isinstance(v, Visibility):
        if v.order != order:
            raise DomainError(f"expected an order-{order} visibility, got order {v.order}")
        return v.value
    v = float(v)
    if not (0.0 <= v <= 1.0):
        raise DomainError(f"visibility {v} outside [0, 1]")
    return v


def visibility_from_relative_loss(eta_t: float, n: int) -> Visibility:
    """N-photon fringe visibility when one arm transmits ``eta_t`` of the power."""
    if not (0.0 < eta_t <= 1.0):
        raise DomainError(f"relative transmission {eta_t} outside (0, 1]")
    if int(n) != n or n < 1:
        raise DomainError(f"photon number must be a positive integer, got {n}")
    amp = math.sqrt(eta_t) ** n
    return Visibility(2.0 * amp / (1.0 + eta_t**n), int(n))


@dataclass(frozen=True)
class FringeLaw:
    weight: float
    visibility: float
    sign: int = 1
    harmonic: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.weight < -CLAMP_TOLERANCE or self.weight > 1 + CLAMP_TOLERANCE:
            raise ConsistencyError(f"fringe weight {self.weight} outside [0, 1]")
        if not (0.0 <= self.visibility <= 1.0 + CLAMP_TOLERANCE):
            raise ConsistencyError(f"fringe visibility {self.visibility} outside [0, 1]")

    def _theta(self, phi):
        return self.harmonic * np.asarray(phi, dtype=float)

    def prob(self, phi):
        p = self.weight * (1.0 + self.sign * self.visibility * np.cos(self._theta(phi)))
        return _clamp_probability(p)

    def deriv(self, phi):
        return -self.weight * self.sign * self.visibility * self.harmonic * np.sin(self._theta(phi))

    def deriv2(self, phi):
        return -self.weight * self.sign * self.visibility * self.harmonic**2 * np.cos(self._theta(phi))

    def fisher_term(self, phi):
        """``p'^2 / p`` written without cancellation near the fringe nulls.

        At V = 1 the null value is the continuous limit, not 0/0.
        """
        half = 0.5 * self._theta(phi)
        if self.sign > 0:
            near, far = np.cos(half), np.sin(half)
        else:
            near, far = np.sin(half), np.cos(half)
        w, v, m2 = self.weight, min(self.visibility, 1.0), self.harmonic**2
        if w == 0.0 or v == 0.0:
            return np.zeros_like(half)
        if v == 1.0:
            return w * m2 * 2.0 * far**2
        # 1 + s V cos(theta) = (1 - V) + 2 V near^2 ; sin^2(theta) = 4 near^2 far^2
        return w * m2 * v * v * 4.0 * near**2 * far**2 / ((1.0 - v) + 2.0 * v * near**2)

    def fisher_term_slope(self, phi):
        """d/dphi of :meth:`fisher_term`; used to polish maxima."""
        theta = self._theta(phi)
        w, v, m = self.weight, min(self.visibility, 1.0), self.harmonic
        s = self.sign
        if w == 0.0 or v == 0.0:
            return np.zeros_like(theta)
        sin, cos = np.sin(theta), np.cos(theta)
        if v == 1.0:
            # w m^2 (1 - s cos theta)
            return w * m**3 * s * sin
        den = 1.0 + s * v * cos
        num = 2.0 * sin * cos * den + s * v * sin**3
        return w * m**3 * v * v * num / den**2


def _clamp_probability(p):
    p = np.asarray(p, dtype=float)
    if np.any(p < -CLAMP_TOLERANCE) or np.any(p > 1.0 + CLAMP_TOLERANCE):
        raise ConsistencyError("probability law left [0, 1] beyond rounding")
    out = np.clip(p, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def complement_law(laws: Sequence[FringeLaw]) -> FringeLaw:
    """The law ``1 - sum(laws)`` for laws sharing one harmonic."""
    harmonics = {law.harmonic for law in laws if law.visibility > 0 and law.weight > 0}
    if len(harmonics) > 1:
        raise ValueError("complement only defined for laws sharing one harmonic")
    m = harmonics.pop() if harmonics else (laws[0].harmonic if laws else 1)
    total = math.fsum(law.weight for law in laws)
    cos_coeff = math.fsum(law.weight * law.sign * law.visibility for law in laws)
    rest = 1.0 - total
    if rest < -CLAMP_TOLERANCE:
        raise ConsistencyError(f"outcome weights sum to {total} > 1")
    rest = max(rest, 0.0)
    if rest <= CLAMP_TOLERANCE:
        if abs(cos_coeff) > CLAMP_TOLERANCE:
            raise ConsistencyError("complement would be negative somewhere")
        return FringeLaw(0.0, 0.0, 1, m)
    vis = abs(cos_coeff) / rest
    if vis > 1.0 + CLAMP_TOLERANCE:
        raise ConsistencyError("complement would be negative somewhere")
    return FringeLaw(rest, min(vis, 1.0), -1 if cos_coeff > 0 else 1, m)


@dataclass(frozen=True)
class Outcome:
    label: str
    law: FringeLaw


@dataclass(frozen=True)
class OutcomeDistribution:
    """Labelled, phase-parametrised detection probabilities.

    ``complement`` is the probability that no qualifying detection occurs.
    It is kept apart from ``outcomes`` because the standard Fisher
    information sums over registered outcomes only.
    """

    outcomes: tuple[Outcome, ...]
    complement: FringeLaw
    period: float
    n_photons: int
    name: str = ""

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(o.label for o in self.outcomes)

    def law(self, label: str) -> FringeLaw:
        for o in self.outcomes:
            if o.label == label:
                return o.law
        raise KeyError(label)

    def probabilities(self, phi) -> dict[str, np.ndarray]:
        return {o.label: o.law.prob(phi) for o in self.outcomes}

    def derivatives(self, phi) -> dict[str, np.ndarray]:
        return {o.label: o.law.deriv(phi) for o in self.outcomes}

    def prob_matrix(self, phi, include_complement=False) -> np.ndarray:
        """Probabilities with shape ``(n_outcomes, len(phi))``."""
        laws = [o.law for o in self.outcomes]
        if include_complement:
            laws.append(self.complement)
        return np.array([np.atleast_1d(law.prob(phi)) for law in laws])

    def with_complement(self, label: str = "none") -> "OutcomeDistribution":
        """Same distribution with the no-detection event as a registered outcome."""
        return OutcomeDistribution(
            outcomes=self.outcomes + (Outcome(label, self.complement),),
            complement=FringeLaw(0.0, 0.0, 1, self.complement.harmonic),
            period=self.period,
            n_photons=self.n_photons,
            name=self.name,
        )


def _distribution(outcomes, harmonic, n_photons, name):
    outcomes = tuple(outcomes)
    return OutcomeDistribution(
        outcomes=outcomes,
        complement=complement_law([o.law for o in outcomes]),
        period=2.0 * math.pi / harmonic,
        n_photons=n_photons,
        name=name,
    )


def noon_output_distribution(probe: NoonProbe) -> OutcomeDistribution:
    """Two output-port probabilities of an N00N probe with arm imbalance.

    With the total-phase convention the laws are functions of Phi = N phi
    (harmonic 1); otherwise of the per-photon phase (harmonic N).
    """
    n, eta_t = probe.n_photons, probe.arm_balance
    weight = (1.0 + eta_t**n) / 4.0
    vis = visibility_from_relative_loss(eta_t, n).value
    m = n if probe.phase_convention is PhaseConvention.PER_PHOTON else 1
    return _distribution(
        [Outcome("P+", FringeLaw(weight, vis, 1, m)), Outcome("P-", FringeLaw(weight, vis, -1, m))],
        harmonic=m,
        n_photons=n,
        name=f"noon_N{n}",
    )


def _line_transmissions(budget) -> tuple[float, float, float, float]:
    if isinstance(budget, LossBudget):
        return budget.eta
    return LossBudget(eta=tuple(budget)).eta


def coincidence_distribution(budget, v2) -> OutcomeDistribution:
    """Four two-photon coincidence probabilities, weighted by line transmissions.

    Same-port pairs (P12, P34) follow ``1 + V cos 2phi``, cross-port pairs
    (P23, P14) follow ``1 - V cos 2phi``.
    """
    e1, e2, e3, e4 = _line_transmissions(budget)
    v = _visibility_value(v2, 2)
    pairs = {"P12": (e1 * e2, 1), "P34": (e3 * e4, 1), "P23": (e2 * e3, -1), "P14": (e1 * e4, -1)}
    return _distribution(
        [Outcome(lab, FringeLaw(w / 4.0, v, s, 2)) for lab, (w, s) in pairs.items()],
        harmonic=2,
        n_photons=2,
        name="two_photon",
    )


def single_photon_distribution(budget, v1) -> OutcomeDistribution:
    """Single-photon fringes with each port seeing the mean of its two lines."""
    budget = budget if isinstance(budget, LossBudget) else LossBudget(eta=tuple(budget))
    port_a, port_b = classical_arm_transmissions(budget)
    v = _visibility_value(v1, 1)
    return _distribution(
        [
            Outcome("P10", FringeLaw(port_a / 2.0, v, 1, 1)),
            Outcome("P01", FringeLaw(port_b / 2.0, v, -1, 1)),
        ],
        harmonic=1,
        n_photons=1,
        name="single_photon",
    )


def distinguishable_franson_distribution(eta: float, visibility: float, mode="full"):
    """Photon-number-resolved outputs of a Franson setup with distinguishable terms.

    Post-selection halves the efficiency; without it the non-interfering
    terms halve the visibility.
    """
    mode = FransonMode(mode)
    if not (0.0 < eta <= 1.0):
        raise DomainError(f"efficiency {eta} outside (0, 1]")
    if not (0.0 <= visibility <= 1.0):
        raise DomainError(f"visibility {visibility} outside [0, 1]")
    if mode is FransonMode.POST_SELECTED:
        eta_eff, v_eff = eta / 2.0, visibility
    else:
        eta_eff, v_eff = eta, visibility / 2.0
    bunched = eta_eff**2 / 4.0
    return _distribution(
        [
            Outcome("P20", FringeLaw(bunched, v_eff, 1, 2)),
            Outcome("P02", FringeLaw(bunched, v_eff, 1, 2)),
            Outcome("P11", FringeLaw(eta_eff**2 / 2.0, v_eff, -1, 2)),
        ],
        harmonic=2,
        n_photons=2,
        name=f"franson_{mode.value}",
    )


def transcribe_polarization_to_path(spec: EntangledPairSpec, eta_t: float = 1.0) -> NoonProbe:
    """Map a polarization-entangled pair to the two-photon path state it becomes.

    The pair phase is the sum of both photons' phases, so the per-photon
    phase is half of it.
    """
    if spec.basis is Basis.PATH:
        warnings.warn("pair is already path-entangled; returning the equivalent probe",
                      IdempotenceWarning, stacklevel=2)
    return NoonProbe(
        n_photons=2,
        arm_balance=eta_t,
        phase_convention=PhaseConvention.TOTAL,
        total_phase=spec.pair_phase,
    )
