"""Weighted least-squares fits of fringe scans and derived confidence bands.

Each curve is modelled as ``A0 * (1 +- V cos(m (phi - phi0)))`` with the
sign fixed by the label class (same-port/bunched +, cross-port/split -).
Weights are Poisson, ``sigma^2 = max(counts, 1)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import FitError
from .fisher import FisherCurve, Normalization, fisher_curve, max_fisher
from .interferometer import coincidence_distribution, single_photon_distribution
from .simulator import FringeScan

MIN_POINTS = 8
MAX_EVALUATIONS = 2000

_PLUS = {"P12", "P34", "P10", "P20", "P02", "P+"}
_MINUS = {"P23", "P14", "P01", "P11", "P-"}


def label_sign(label: str) -> int:
    if label in _PLUS:
        return 1
    if label in _MINUS:
        return -1
    raise FitError(f"no fringe sign known for label {label!r}")


@dataclass(frozen=True)
class FringeModel:
    amplitude: float
    visibility: float
    harmonic: int
    phase_offset: float = 0.0
    sign: int = 1

    def __call__(self, phi):
        theta = self.harmonic * (np.asarray(phi, dtype=float) - self.phase_offset)
        return self.amplitude * (1.0 + self.sign * self.visibility * np.cos(theta))

    def gradient(self, phi):
        """Partial derivatives w.r.t. (A0, V, phi0), shape ``(3, len(phi))``."""
        theta = self.harmonic * (np.asarray(phi, dtype=float) - self.phase_offset)
        c, s = np.cos(theta), np.sin(theta)
        a, v, m, sg = self.amplitude, self.visibility, self.harmonic, self.sign
        return np.array([1.0 + sg * v * c, a * sg * c, a * sg * v * m * s])


@dataclass(frozen=True)
class CurveFit:
    label: str
    model: FringeModel
    cov: np.ndarray
    chi2_red: float
    n_points: int

    @property
    def sigma_v(self) -> float:
        return math.sqrt(max(self.cov[1, 1], 0.0))

    def to_dict(self):
        return {
            "label": self.label,
            "A0": self.model.amplitude,
            "V": self.model.visibility,
            "phi0": self.model.phase_offset,
            "cov": self.cov.tolist(),
            "chi2_red": self.chi2_red,
        }


@dataclass(frozen=True)
class FitResult:
    curves: tuple
    pooled_visibility: float
    pooled_sigma: float
    harmonic: int
    mode: str = "per_curve"
    warnings: tuple = field(default=())

    def curve(self, label) -> CurveFit:
        for c in self.curves:
            if c.label == label:
                return c
        raise KeyError(label)

    def to_dict(self):
        return {
            "harmonic": self.harmonic,
            "mode": self.mode,
            "curves": [c.to_dict() for c in self.curves],
            "pooled": {"V": self.pooled_visibility, "sigma_V": self.pooled_sigma},
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data):
        m = int(data["harmonic"])
        curves = tuple(
            CurveFit(
                label=c["label"],
                model=FringeModel(c["A0"], c["V"], m, c["phi0"], label_sign(c["label"])),
                cov=np.asarray(c["cov"], dtype=float),
                chi2_red=c["chi2_red"],
                n_points=int(c.get("n_points", 0)),
            )
            for c in data["curves"]
        )
        return cls(
            curves=curves,
            pooled_visibility=data["pooled"]["V"],
            pooled_sigma=data["pooled"]["sigma_V"],
            harmonic=m,
            mode=data.get("mode", "per_curve"),
            warnings=tuple(data.get("warnings", ())),
        )


def _check_span(phi, m):
    if phi.size < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} points per curve, got {phi.size}")
    period = 2.0 * math.pi / m
    ordered = np.sort(phi)
    span = ordered[-1] - ordered[0] + np.median(np.diff(ordered))
    if span < period * (1.0 - 1e-6):
        raise FitError(f"scan spans {span:.4g} rad, less than one fringe period {period:.4g}")


def _initial_guess(phi, y, m, sign):
    """Mean level, smoothed contrast and phase of the m-th Fourier component."""
    a0 = float(np.mean(y))
    order = np.argsort(phi)
    smooth = np.convolve(y[order], np.ones(3) / 3.0, mode="valid") if y.size >= 3 else y
    hi, lo = float(smooth.max()), float(smooth.min())
    v0 = (hi - lo) / (hi + lo) if hi + lo > 0 else 0.0
    c = np.sum(y * np.exp(-1j * m * phi))
    phi0 = -np.angle(sign * c) / m
    return a0, min(max(v0, 0.0), 1.0), phi0


def _joint_fit(phi, ys, scales, signs, m, share_v, share_phi):
    """Least squares over all curves with optionally shared V and/or phi0."""
    n_curves = len(ys)
    guesses = [_initial_guess(phi, y / s, m, sg) for y, s, sg in zip(ys, scales, signs)]
    a_idx = list(range(n_curves))
    nxt = n_curves
    if share_v:
        v_idx = [nxt] * n_curves
        nxt += 1
    else:
        v_idx = list(range(nxt, nxt + n_curves))
        nxt += n_curves
    if share_phi:
        p_idx = [nxt] * n_curves
        nxt += 1
    else:
        p_idx = list(range(nxt, nxt + n_curves))
        nxt += n_curves
    x0 = np.empty(nxt)
    for k, (a0, v0, p0) in enumerate(guesses):
        x0[a_idx[k]] = a0
        x0[v_idx[k]] = v0
        x0[p_idx[k]] = p0
    if share_v:
        x0[v_idx[0]] = float(np.mean([g[1] for g in guesses]))
    if share_phi:
        # average the per-curve phases on the circle
        x0[p_idx[0]] = np.angle(np.mean([np.exp(1j * m * g[2]) for g in guesses])) / m

    sigmas = [np.sqrt(np.maximum(y, 1.0)) for y in ys]

    def residuals(x):
        out = []
        for k in range(n_curves):
            model = x[a_idx[k]] * scales[k] * (
                1.0 + signs[k] * x[v_idx[k]] * np.cos(m * (phi - x[p_idx[k]]))
            )
            out.append((model - ys[k]) / sigmas[k])
        return np.concatenate(out)

    res = least_squares(
        residuals, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
        max_nfev=MAX_EVALUATIONS * nxt,
    )
    if res.status <= 0:
        raise FitError(f"fit did not converge: {res.message}", last_iterate=res.x)
    jac = res.jac
    cov = np.linalg.pinv(jac.T @ jac)
    return res.x, cov, res.fun, (a_idx, v_idx, p_idx)


def fit_fringes(scan: FringeScan, m: int, shared_visibility=False, shared_phase=False,
                phase_map=None) -> FitResult:
    """Fit every curve of ``scan`` with harmonic ``m`` and pool the visibilities.

    By default each curve gets its own (A0, V, phi0) and the pooled
    visibility is their inverse-variance weighted mean. ``shared_visibility``
    and ``shared_phase`` tie those parameters across curves in one joint fit.
    ``phase_map=(a, b)`` converts the control column when the scan carries
    no phases.
    """
    if m not in (1, 2):
        raise FitError(f"harmonic must be 1 or 2, got {m}")
    if scan.phi is not None:
        phi = np.asarray(scan.phi, dtype=float)
    elif phase_map is not None:
        phi = phase_map[0] * np.asarray(scan.control, dtype=float) + phase_map[1]
    else:
        raise FitError("scan has no phase column and no voltage-to-phase map was given")
    _check_span(phi, m)
    scales = [np.asarray(scan.dwell, dtype=float) / float(np.mean(scan.dwell))] * len(scan.labels)
    signs = [label_sign(lab) for lab in scan.labels]
    ys = [scan.curve(lab).astype(float) for lab in scan.labels]

    if shared_visibility or shared_phase:
        x, cov, resid, (ai, vi, pi) = _joint_fit(phi, ys, scales, signs, m, shared_visibility, shared_phase)
        groups = [[ai[k], vi[k], pi[k]] for k in range(len(ys))]
        blocks = [(x[g], cov[np.ix_(g, g)]) for g in groups]
        n_local = len(x) / len(ys)
        chis = [
            float(np.sum(resid[k * phi.size:(k + 1) * phi.size] ** 2)) / max(phi.size - n_local, 1)
            for k in range(len(ys))
        ]
        mode = "joint" + ("_shared_V" if shared_visibility else "") + ("_shared_phi" if shared_phase else "")
    else:
        blocks, chis = [], []
        for y, sc, sg in zip(ys, scales, signs):
            x, cov, resid, _ = _joint_fit(phi, [y], [sc], [sg], m, False, False)
            blocks.append((x, cov))
            chis.append(float(np.sum(resid**2)) / max(phi.size - 3, 1))
        mode = "per_curve"

    period = 2.0 * math.pi / m
    curves = []
    for lab, sg, (x, cov), chi in zip(scan.labels, signs, blocks, chis):
        a0, v, p0 = (float(t) for t in x)
        cov = np.array(cov, dtype=float)
        if v < 0:
            v, p0 = -v, p0 + math.pi / m
            flip = np.diag([1.0, -1.0, 1.0])
            cov = flip @ cov @ flip
        cov = 0.5 * (cov + cov.T)
        curves.append(CurveFit(lab, FringeModel(a0, v, m, p0 % period, sg), cov, chi, phi.size))

    notes = []
    if shared_visibility:
        pooled, sigma = curves[0].model.visibility, curves[0].sigma_v
    else:
        vs = np.array([c.model.visibility for c in curves])
        sig = np.array([c.sigma_v for c in curves])
        if np.all(sig > 0):
            w = 1.0 / sig**2
            pooled, sigma = float(np.sum(w * vs) / np.sum(w)), float(1.0 / math.sqrt(np.sum(w)))
        else:
            pooled, sigma = float(vs.mean()), 0.0
    if pooled > 1.0:
        notes.append(f"pooled visibility {pooled:.6f} clipped to 1")
        pooled = 1.0
    return FitResult(tuple(curves), pooled, sigma, m, mode, tuple(notes))


@dataclass(frozen=True)
class Band:
    phi: np.ndarray
    central: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def _check_covariance(cov, label):
    if not np.all(np.isfinite(cov)):
        raise FitError(f"{label}: covariance is not finite")
    eig = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if eig.min() < -1e-9 * max(abs(eig.max()), 1e-300):
        raise FitError(f"{label}: covariance is not positive semidefinite")


def confidence_band(fit: FitResult, k: float, phi) -> dict:
    """Pointwise ``model +- k * sigma_model`` from first-order covariance propagation."""
    phi = np.asarray(phi, dtype=float)
    bands = {}
    for c in fit.curves:
        _check_covariance(c.cov, c.label)
        g = c.model.gradient(phi)
        var = np.einsum("ip,ij,jp->p", g, c.cov, g)
        sd = np.sqrt(np.maximum(var, 0.0))
        central = c.model(phi)
        bands[c.label] = Band(phi, central, central - k * sd, central + k * sd)
    return bands


@dataclass(frozen=True)
class FisherBand:
    central: FisherCurve
    lower: np.ndarray
    upper: np.ndarray
    visibilities: tuple  # (lower, central, upper)
    maxima: dict  # "lower"/"central"/"upper" -> (phi, value)
    warnings: tuple = ()


def fi_band_from_fit(fit: FitResult, budget, k: float = 3.0, grid=None,
                     normalization="raw", tol=1e-10) -> FisherBand:
    """Fisher-information curve at the pooled visibility with a k-sigma envelope.

    The FI of these fringe laws increases with V at every phase, so the
    envelope is the FI evaluated at the two ends of ``V +- k sigma_V``.
    """
    v = fit.pooled_visibility
    dv = k * fit.pooled_sigma
    notes = []
    v_lo, v_hi = max(v - dv, 0.0), v + dv
    if v_hi > 1.0:
        notes.append(f"upper visibility {v_hi:.6f} clamped to 1")
        v_hi = 1.0
    make = single_photon_distribution if fit.harmonic == 1 else coincidence_distribution
    dists = {"lower": make(budget, v_lo), "central": make(budget, v), "upper": make(budget, v_hi)}
    if grid is None:
        grid = np.linspace(0.0, 2.0 * math.pi / fit.harmonic, 1001)[:-1]
    curves = {key: fisher_curve(d, grid, normalization) for key, d in dists.items()}
    scale = dists["central"].n_photons if Normalization(normalization) is Normalization.PER_PHOTON else 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        maxima = {}
        for key, d in dists.items():
            p, f = max_fisher(d, tol=tol)
            maxima[key] = (p, f / scale)
    return FisherBand(
        central=curves["central"],
        lower=curves["lower"].values,
        upper=curves["upper"].values,
        visibilities=(v_lo, v, v_hi),
        maxima=maxima,
        warnings=tuple(notes),
    )
