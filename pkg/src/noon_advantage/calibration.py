"""Per-line loss budgets, dB conversion and calibration bookkeeping.

All transmissions are intensity (power) ratios, so dB values use the
``10 * log10`` convention. Detector efficiency is folded into each line
transmission and never stored separately.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

N_LINES = 4

# ~10x the rounding granularity of dB values quoted with two decimals.
AUDIT_THRESHOLD_DB = 0.02
# Relative spread (max - min) / mean above which a line is flagged.
SPREAD_WARNING = 0.10

SOURCES = ("measured", "derived", "scenario")

CALIBRATION_HEADER = (
    "line_id",
    "reference_power_w",
    "measured_power_w",
    "attenuator_db",
    "counts_per_s",
    "timestamp",
)


def db_to_transmission(loss_db):
    """Convert a (non-negative) loss in dB to a power transmission in (0, 1]."""
    loss = np.asarray(loss_db, dtype=float)
    if np.any(~np.isfinite(loss)) or np.any(loss < 0):
        raise DomainError(f"loss must be a finite non-negative dB value, got {loss_db!r}")
    out = 10.0 ** (-loss / 10.0)
    return float(out) if out.ndim == 0 else out


def transmission_to_db(eta):
    """Convert a power transmission in (0, 1] to a loss in dB."""
    t = np.asarray(eta, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t <= 0) or np.any(t > 1):
        raise DomainError(f"transmission must lie in (0, 1], got {eta!r}")
    out = -10.0 * np.log10(t)
    return float(out) if out.ndim == 0 else out


def _check_eta(eta: Sequence[float]) -> tuple[float, ...]:
    values = tuple(float(x) for x in eta)
    if len(values) != N_LINES:
        raise DomainError(f"expected {N_LINES} line transmissions, got {len(values)}")
    for i, x in enumerate(values, start=1):
        if not (0.0 < x <= 1.0) or not math.isfinite(x):
            raise DomainError(f"line {i} transmission {x} outside (0, 1]")
    return values


@dataclass(frozen=True)
class LossBudget:
    """Transmissions eta_1..eta_4 of the four detection lines.

    ``db`` holds the quoted losses when they were supplied independently of
    ``eta`` (they are not forced to agree; see :func:`consistency_audit`).
    """

    eta: tuple[float, ...]
    db: tuple[float, ...] | None = None
    source: str = "derived"
    eta_std: tuple[float, ...] | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "eta", _check_eta(self.eta))
        if self.db is not None:
            db = tuple(float(x) for x in self.db)
            if len(db) != N_LINES:
                raise DomainError(f"expected {N_LINES} dB values, got {len(db)}")
            object.__setattr__(self, "db", db)
        if self.source not in SOURCES:
            raise DomainError(f"unknown budget source {self.source!r}")
        if self.eta_std is not None:
            object.__setattr__(self, "eta_std", tuple(float(x) for x in self.eta_std))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @classmethod
    def from_transmissions(cls, eta, source="derived"):
        """Budget with dB values derived from the transmissions."""
        eta = _check_eta(eta)
        return cls(eta=eta, db=tuple(transmission_to_db(x) for x in eta), source=source)

    @classmethod
    def from_db(cls, loss_db, source="derived"):
        db = tuple(float(x) for x in loss_db)
        return cls(eta=tuple(db_to_transmission(x) for x in db), db=db, source=source)

    @classmethod
    def uniform(cls, eta, source="scenario"):
        return cls.from_transmissions([eta] * N_LINES, source=source)

    def scaled(self, factors, source="scenario"):
        """Multiply each line transmission by ``factors`` (scalar or length 4)."""
        f = np.broadcast_to(np.asarray(factors, dtype=float), (N_LINES,))
        new = np.asarray(self.eta) * f
        if np.any(new > 1.0 + 1e-12):
            bad = [i + 1 for i in np.flatnonzero(new > 1.0 + 1e-12)]
            raise DomainError(f"scaled transmission exceeds 1 on line(s) {bad}")
        return LossBudget.from_transmissions(np.minimum(new, 1.0), source=source)

    def to_dict(self):
        out = {
            "eta": list(self.eta),
            "db": None if self.db is None else list(self.db),
            "source": self.source,
            "warnings": list(self.warnings),
        }
        if self.eta_std is not None:
            out["eta_std"] = list(self.eta_std)
        return out

    @classmethod
    def from_dict(cls, data):
        if "eta" not in data:
            raise DomainError("budget object has no 'eta' field")
        return cls(
            eta=data["eta"],
            db=data.get("db"),
            source=data.get("source", "derived"),
            eta_std=data.get("eta_std"),
            warnings=tuple(data.get("warnings", ())),
        )


@dataclass(frozen=True)
class ArmBalance:
    """Relative power transmission of the long arm with respect to the short arm."""

    eta_t: float

    def __post_init__(self):
        if not (0.0 < self.eta_t <= 1.0):
            raise DomainError(f"arm balance eta_t={self.eta_t} outside (0, 1]")


@dataclass(frozen=True)
class CalibrationRecord:
    line_id: int
    reference_power: float
    measured_power: float
    attenuator_setting_db: float = 0.0
    detector_counts: float = 0.0
    timestamp: str = ""

    def __post_init__(self):
        if self.line_id not in range(1, N_LINES + 1):
            raise DomainError(f"line_id {self.line_id} not in 1..{N_LINES}")
        if self.reference_power <= 0 or self.measured_power <= 0:
            raise DomainError(f"line {self.line_id}: powers must be positive")
        if self.transmission > 1.0 + 1e-9:
            raise DomainError(
                f"line {self.line_id}: measured power exceeds the attenuated reference"
            )

    @property
    def transmission(self) -> float:
        """Line transmission with the attenuator setting removed."""
        attenuated_reference = self.reference_power * 10.0 ** (-self.attenuator_setting_db / 10.0)
        return self.measured_power / attenuated_reference


def build_loss_budget(records: Iterable[CalibrationRecord], reported_db=None) -> LossBudget:
    """Average per-line transmissions over calibration records.

    ``reported_db`` attaches independently quoted dB values so that
    :func:`consistency_audit` can compare them with the measured ratios;
    by default the dB values are derived from the averages.
    """
    by_line: dict[int, list[float]] = {i: [] for i in range(1, N_LINES + 1)}
    for rec in records:
        by_line[rec.line_id].append(rec.transmission)
    missing = [i for i, vals in by_line.items() if not vals]
    if missing:
        raise DomainError(f"no calibration records for line(s) {missing}")

    eta, std, notes = [], [], []
    for i in range(1, N_LINES + 1):
        vals = np.asarray(by_line[i])
        mean = float(vals.mean())
        eta.append(min(mean, 1.0))
        std.append(float(vals.std(ddof=1)) if vals.size > 1 else 0.0)
        spread = float(vals.max() - vals.min()) / mean
        if spread > SPREAD_WARNING:
            notes.append(f"line {i}: record spread {spread:.1%} exceeds {SPREAD_WARNING:.0%}")

    db = reported_db if reported_db is not None else [transmission_to_db(x) for x in eta]
    return LossBudget(eta=eta, db=db, source="measured", eta_std=std, warnings=tuple(notes))


@dataclass(frozen=True)
class AuditFinding:
    line_id: int
    eta: float
    db: float
    db_implied_by_eta: float
    eta_implied_by_db: float

    def __str__(self):
        return (
            f"line {self.line_id}: eta={self.eta:.4g} implies {self.db_implied_by_eta:.3f} dB "
            f"but {self.db:.3f} dB is quoted (implies eta={self.eta_implied_by_db:.4g})"
        )


def consistency_audit(budget: LossBudget, threshold_db: float = AUDIT_THRESHOLD_DB):
    """Return one finding per line whose quoted dB disagrees with its transmission.

    A budget without dB values yields an empty list (nothing to compare).
    """
    if budget.db is None:
        return []
    findings = []
    for i, (eta, db) in enumerate(zip(budget.eta, budget.db), start=1):
        implied = transmission_to_db(eta)
        if abs(implied - db) > threshold_db:
            findings.append(
                AuditFinding(
                    line_id=i,
                    eta=eta,
                    db=db,
                    db_implied_by_eta=implied,
                    eta_implied_by_db=10.0 ** (-db / 10.0),
                )
            )
    return findings


def classical_arm_transmissions(budget: LossBudget) -> tuple[float, float]:
    """Transmissions seen by a single photon leaving either output port."""
    e1, e2, e3, e4 = budget.eta
    return (e1 + e2) / 2.0, (e3 + e4) / 2.0


def read_calibration_csv(path) -> list[CalibrationRecord]:
    """Load calibration records; raises ``ValueError`` naming the offending row."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CALIBRATION_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(CALIBRATION_HEADER)}, got {reader.fieldnames}"
            )
        for row_no, row in enumerate(reader, start=2):
            try:
                records.append(
                    CalibrationRecord(
                        line_id=int(row["line_id"]),
                        reference_power=float(row["reference_power_w"]),
                        measured_power=float(row["measured_power_w"]),
                        attenuator_setting_db=float(row["attenuator_db"] or 0.0),
                        detector_counts=float(row["counts_per_s"] or 0.0),
                        timestamp=row["timestamp"],
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: row {row_no}: {exc}") from exc
    return records


def reference_budget(with_quoted_db: bool = True) -> LossBudget:
    """The calibrated line transmissions of the fibered experiment.

    The quoted dB values are attached verbatim; line 1's is inconsistent
    with its transmission and is kept so the audit can flag it.
    """
    eta = (0.517, 0.546, 0.649, 0.608)
    if not with_quoted_db:
        return LossBudget.from_transmissions(eta, source="measured")
    return LossBudget(eta=eta, db=(2.43, 2.63, 1.87, 2.16), source="measured")


REFERENCE_ARM_BALANCE = ArmBalance(0.88)
