"""Synthetic fringe scans with Poisson counting statistics.

Frequency-correlated photons are routed deterministically by the WDM
filters: each output port carries a channel-20 and a channel-22 detector,
so every pair lands on exactly one of the four coincidence labels.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .calibration import LossBudget
from .errors import DomainError
from .interferometer import (
    NoonProbe,
    coincidence_distribution,
    single_photon_distribution,
    visibility_from_relative_loss,
)

MAX_EXPECTED_COUNTS = 2**31
SCAN_HEADER = ("control", "phi_rad", "label", "counts", "dwell_s")
DIAGNOSTIC_LABELS = ("P13", "P24")


@dataclass(frozen=True)
class WdmPlan:
    signal_channel: int = 20
    idler_channel: int = 22
    degenerate_channel: int = 21
    channel_width_ghz: float = 100.0
    detectors: tuple = (("A", 20, 1), ("A", 22, 2), ("B", 20, 3), ("B", 22, 4))

    def __post_init__(self):
        if self.signal_channel == self.idler_channel:
            raise DomainError("signal and idler channels must be disjoint")
        by_channel = {}
        for _, ch, det in self.detectors:
            by_channel.setdefault(ch, []).append(det)
        if sorted(by_channel) != sorted((self.signal_channel, self.idler_channel)):
            raise DomainError("detectors must sit on the signal and idler channels only")

    def detector(self, channel: int, port: str) -> int:
        for p, ch, det in self.detectors:
            if p == port and ch == channel:
                return det
        raise DomainError(f"no detector on channel {channel} at port {port!r}")


def route_by_wdm(plan: WdmPlan, photon_channels, exit_ports) -> str:
    """Coincidence label for a pair with the given channels and exit ports."""
    ch_a, ch_b = photon_channels
    if ch_a == ch_b:
        raise DomainError("both photons in one channel violates energy conservation model")
    if {ch_a, ch_b} != {plan.signal_channel, plan.idler_channel}:
        raise DomainError(f"channels {ch_a}, {ch_b} are not the correlated pair")
    d = sorted(plan.detector(ch, port) for ch, port in zip(photon_channels, exit_ports))
    return f"P{d[0]}{d[1]}"


def phase_from_voltage(a: float, b: float, u):
    """Linear phase-shifter response phi = a * u + b."""
    return a * np.asarray(u, dtype=float) + b if np.ndim(u) else a * u + b


@dataclass(frozen=True)
class ScanConfig:
    """Everything needed to reproduce one simulated scan.

    ``control`` is either a phase grid (radians) or, when ``voltage_map`` is
    given as ``(a, b)``, a voltage grid mapped to phase linearly.
    """

    budget: LossBudget
    control: tuple
    probe: NoonProbe | None = None
    single_photon: bool = False
    visibility: float | None = None
    pair_rate: float = 1e5
    dwell_time: float = 1.0
    voltage_map: tuple | None = None
    rng_seed: int = 0
    accidental_rate: float = 0.0
    multi_pair_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "control", tuple(float(x) for x in np.ravel(self.control)))
        if not self.control:
            raise DomainError("control grid is empty")
        if self.pair_rate <= 0 or self.dwell_time <= 0:
            raise DomainError("pair rate and dwell time must be positive")
        if self.accidental_rate < 0 or self.multi_pair_rate < 0:
            raise DomainError("background rates must be non-negative")
        if self.visibility is None and self.probe is None:
            object.__setattr__(self, "probe", NoonProbe(2, 1.0))
        if not 0 <= int(self.rng_seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def labels(self):
        return ("P10", "P01") if self.single_photon else ("P12", "P34", "P23", "P14")

    def resolved_visibility(self) -> float:
        if self.visibility is not None:
            return float(self.visibility)
        order = 1 if self.single_photon else 2
        return visibility_from_relative_loss(self.probe.arm_balance, order).value

    def distribution(self):
        v = self.resolved_visibility()
        if self.single_photon:
            return single_photon_distribution(self.budget, v)
        return coincidence_distribution(self.budget, v)

    def phases(self) -> np.ndarray:
        ctrl = np.asarray(self.control)
        if self.voltage_map is None:
            return ctrl
        a, b = self.voltage_map
        return phase_from_voltage(a, b, ctrl)

    def to_dict(self):
        d = asdict(self)
        d["budget"] = self.budget.to_dict()
        d["probe"] = None if self.probe is None else {
            "n_photons": self.probe.n_photons,
            "arm_balance": self.probe.arm_balance,
        }
        d["control"] = list(self.control)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class FringeScan:
    control: np.ndarray
    phi: np.ndarray | None
    labels: tuple
    counts: np.ndarray  # shape (n_points, n_labels)
    dwell: np.ndarray
    metadata: dict = field(default_factory=dict)
    noiseless: bool = False

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (len(self.control), len(self.labels)):
            raise ValueError("counts must have shape (n_points, n_labels)")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if self.noiseless:
            object.__setattr__(self, "counts", counts.astype(float))
            return
        if not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValueError("counts must be integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    def curve(self, label):
        return self.counts[:, self.labels.index(label)]

    def to_rows(self):
        for i, u in enumerate(self.control):
            phi = "" if self.phi is None else self.phi[i]
            for j, lab in enumerate(self.labels):
                n = self.counts[i, j]
                yield u, phi, lab, (float(n) if self.noiseless else int(n)), self.dwell[i]


def _substream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def expected_counts(config: ScanConfig) -> np.ndarray:
    """Mean counts per grid point and label, shape ``(n_points, n_labels)``."""
    dist = config.distribution()
    phi = config.phases()
    probs = dist.prob_matrix(phi).T
    floor = config.accidental_rate * config.dwell_time / len(config.labels)
    mean = config.pair_rate * config.dwell_time * probs + floor
    if np.any(mean > MAX_EXPECTED_COUNTS):
        raise DomainError("expected counts exceed 2**31; reduce pair rate or dwell time")
    return mean


def simulate_fringe_scan(config: ScanConfig) -> FringeScan:
    """Draw Poisson counts for each grid point from an independent substream."""
    mean = expected_counts(config)
    counts = np.empty(mean.shape, dtype=np.int64)
    for i, row in enumerate(mean):
        counts[i] = _substream(config.rng_seed, i).poisson(row)
    phi = config.phases()
    return FringeScan(
        control=np.asarray(config.control),
        phi=np.asarray(phi),
        labels=config.labels,
        counts=counts,
        dwell=np.full(len(config.control), config.dwell_time),
        metadata={"seed": int(config.rng_seed), "config_digest": config.digest()},
    )


def expected_scan(config: ScanConfig) -> FringeScan:
    """Noise-free scan holding the mean counts themselves (not integers)."""
    return FringeScan(
        control=np.asarray(config.control),
        phi=np.asarray(config.phases()),
        labels=config.labels,
        counts=expected_counts(config),
        dwell=np.full(len(config.control), config.dwell_time),
        metadata={"seed": None, "config_digest": config.digest()},
        noiseless=True,
    )


@dataclass(frozen=True)
class DiagnosticExpectation:
    """Expected same-channel coincidences; ``true`` is before line losses."""

    true: float
    accidental: float
    detected: float


def multi_pair_diagnostic(config: ScanConfig) -> dict:
    """Expected P13 / P24 coincidences over one dwell.

    A single pair can never put both photons in one channel, so only the
    accidental floor and injected multi-pair events contribute.
    """
    e1, e2, e3, e4 = config.budget.eta
    floor = config.accidental_rate * config.dwell_time / 4.0
    true = config.multi_pair_rate * config.dwell_time
    return {
        "P13": DiagnosticExpectation(true, floor, true * e1 * e3 + floor),
        "P24": DiagnosticExpectation(true, floor, true * e2 * e4 + floor),
    }


def simulate_multi_pair_counts(config: ScanConfig, index: int = -1) -> dict:
    rng = _substream(config.rng_seed, 2**32 + (index % 2**32))
    exp = multi_pair_diagnostic(config)
    return {lab: int(rng.poisson(exp[lab].detected)) for lab in DIAGNOSTIC_LABELS}


def multi_pair_detected(counts: dict, expectation: dict, n_sigma: float = 5.0) -> dict:
    """Per label, whether observed counts exceed the accidental floor by ``n_sigma``."""
    out = {}
    for lab in DIAGNOSTIC_LABELS:
        floor = expectation[lab].accidental
        out[lab] = counts[lab] - floor > n_sigma * math.sqrt(max(floor, 1.0))
    return out


def write_scan_csv(scan: FringeScan, path, fmt="{:.12g}"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCAN_HEADER)
        for u, phi, lab, n, dwell in scan.to_rows():
            count = fmt.format(n) if isinstance(n, float) else n
            w.writerow([fmt.format(u), "" if phi == "" else fmt.format(phi), lab, count, fmt.format(dwell)])


def read_scan_csv(path) -> FringeScan:
    """Parse a scan file; errors name the first malformed row."""
    rows = {}
    labels: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SCAN_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SCAN_HEADER)}, got {header}")
        for row_no, row in enumerate(reader, start=2):
            try:
                if len(row) != len(SCAN_HEADER):
                    raise ValueError(f"expected {len(SCAN_HEADER)} fields, got {len(row)}")
                u = float(row[0])
                phi = float(row[1]) if row[1].strip() else None
                lab = row[2].strip()
                n = float(row[3])
                if n < 0 or n != int(n):
                    raise ValueError(f"counts {row[3]!r} is not a non-negative integer")
                dwell = float(row[4])
                if dwell <= 0:
                    raise ValueError("dwell must be positive")
            except ValueError as exc:
                raise ValueError(f"{path}: row {row_no}: {exc}") from exc
            if lab not in labels:
                labels.append(lab)
            rows.setdefault(u, {"phi": phi, "dwell": dwell, "counts": {}})["counts"][lab] = int(n)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    controls = list(rows)
    missing = [u for u in controls if set(rows[u]["counts"]) != set(labels)]
    if missing:
        raise ValueError(f"{path}: control value {missing[0]} lacks some labels")
    phis = [rows[u]["phi"] for u in controls]
    phi = None if any(p is None for p in phis) else np.asarray(phis)
    return FringeScan(
        control=np.asarray(controls),
        phi=phi,
        labels=tuple(labels),
        counts=np.array([[rows[u]["counts"][lab] for lab in labels] for u in controls]),
        dwell=np.asarray([rows[u]["dwell"] for u in controls]),
    )
