"""Two-color Raman shelving of |F=2,m=2> into |F''=3,m''=3>.

Only axial motion is modeled. Each vibrational level n drives its own
carrier Rabi rate Omega_nn = Omega_R exp(-eta^2/2) L_n(eta^2); a thermal
distribution of n dephases the oscillation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import constants as C
from scipy import optimize

from .stats import CountHistogram, HistogramModel, classify, fit_dark_fraction, telegraph_sample

TWO_PI = 2 * math.pi
BA137_ION_MASS = 136.9058274 * C.atomic_mass - C.m_e
THERMAL_TAIL = 1e-10


class TransferError(ValueError):
    """Invalid transfer configuration or fit input."""


@dataclass(frozen=True)
class TransferConfig:
    lambda1: float = 493e-9  # m
    lambda2: float = 650e-9
    theta: float = math.pi / 4  # beam difference vector vs trap axis
    trap_freq: float = TWO_PI * 90e3  # rad/s, axial
    mass: float = BA137_ION_MASS
    rabi: float = TWO_PI * 2.60e6  # Omega_R, rad/s
    nbar: float = 14.0
    gamma: float = TWO_PI * 20.1e6  # cooling transition linewidth, rad/s
    radial_freqs: tuple = (TWO_PI * 388e3, TWO_PI * 348e3)  # carried, not used

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise TransferError("wavelengths must be > 0")
        if not self.trap_freq > 0:
            raise TransferError("trap frequency must be > 0")
        if not self.nbar >= 0:
            raise TransferError("nbar must be >= 0")
        if not 0 <= self.theta <= math.pi / 2 + 1e-12:
            raise TransferError("theta must lie in [0, pi/2]")
        if not (self.rabi >= 0 and self.mass > 0 and self.gamma > 0):
            raise TransferError("rabi >= 0, mass > 0 and gamma > 0 required")

    def to_dict(self) -> dict:
        return {
            "lambda1_m": self.lambda1,
            "lambda2_m": self.lambda2,
            "theta_deg": math.degrees(self.theta),
            "trap_freq_hz": self.trap_freq / TWO_PI,
            "mass_kg": self.mass,
            "rabi_hz": self.rabi / TWO_PI,
            "nbar": self.nbar,
            "gamma_hz": self.gamma / TWO_PI,
            "radial_freqs_hz": [w / TWO_PI for w in self.radial_freqs],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransferConfig":
        known = {"lambda1_m", "lambda2_m", "theta_deg", "trap_freq_hz", "mass_kg",
                 "rabi_hz", "nbar", "gamma_hz", "radial_freqs_hz"}
        extra = set(d) - known
        if extra:
            raise TransferError(f"unknown transfer keys: {sorted(extra)}")
        base = cls()
        kw = {}
        if "lambda1_m" in d:
            kw["lambda1"] = float(d["lambda1_m"])
        if "lambda2_m" in d:
            kw["lambda2"] = float(d["lambda2_m"])
        if "theta_deg" in d:
            kw["theta"] = math.radians(float(d["theta_deg"]))
        if "trap_freq_hz" in d:
            kw["trap_freq"] = TWO_PI * float(d["trap_freq_hz"])
        if "mass_kg" in d:
            kw["mass"] = float(d["mass_kg"])
        if "rabi_hz" in d:
            kw["rabi"] = TWO_PI * float(d["rabi_hz"])
        if "nbar" in d:
            kw["nbar"] = float(d["nbar"])
        if "gamma_hz" in d:
            kw["gamma"] = TWO_PI * float(d["gamma_hz"])
        if "radial_freqs_hz" in d:
            kw["radial_freqs"] = tuple(TWO_PI * float(f) for f in d["radial_freqs_hz"])
        return replace(base, **kw)


@dataclass
class RabiCurve:
    """Sampled P_bright(t).

    ``sigma`` holds optional per-point uncertainties; ``shots`` is the number
    of binomial trials per point when known, which lets the fit take its
    weights from the model instead of from the noisy data.
    """

    t: np.ndarray
    p: np.ndarray
    sigma: np.ndarray | None = None
    shots: int | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.t.shape != self.p.shape or self.t.ndim != 1:
            raise TransferError("times and probabilities must be equal-length 1-d arrays")
        if np.any(self.t < 0) or np.any(np.diff(self.t) <= 0):
            raise TransferError("times must be >= 0 and strictly increasing")
        if np.any(self.p < 0) or np.any(self.p > 1):
            raise TransferError("probabilities must lie in [0, 1]")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
        if self.shots is not None and self.shots < 1:
            raise TransferError("shots must be >= 1")

    def to_csv(self) -> str:
        rows = ["t_ns,p_bright"] + [f"{t * 1e9:.6f},{p:.12g}" for t, p in zip(self.t, self.p)]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "RabiCurve":
        rows = [r.strip() for r in text.strip().splitlines() if r.strip()]
        if not rows or rows[0].replace(" ", "") != "t_ns,p_bright":
            raise TransferError("Rabi CSV must start with header 't_ns,p_bright'")
        try:
            data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
        except ValueError as exc:
            raise TransferError(f"bad Rabi CSV row: {exc}") from None
        if data.size == 0:
            raise TransferError("Rabi CSV has no data rows")
        return cls(data[:, 0] * 1e-9, data[:, 1])


def lamb_dicke(cfg: TransferConfig) -> float:
    dk = abs(TWO_PI / cfg.lambda1 - TWO_PI / cfg.lambda2)
    return dk * math.cos(cfg.theta) * math.sqrt(C.hbar / (2 * cfg.mass * cfg.trap_freq))


def laguerre_all(n_max: int, x: float) -> np.ndarray:
    """L_0(x) ... L_n_max(x) by the three-term recurrence."""
    out = np.empty(n_max + 1)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = 1.0 - x
    for k in range(1, n_max):
        out[k + 1] = ((2 * k + 1 - x) * out[k] - k * out[k - 1]) / (k + 1)
    return out


def laguerre(n: int, x: float) -> float:
    if n < 0:
        raise ValueError("Laguerre order must be >= 0")
    return float(laguerre_all(n, x)[n])


def rabi_nn(rabi: float, eta: float, n: int) -> float:
    """Carrier Rabi rate of vibrational level n."""
    if eta < 0 or n < 0:
        raise ValueError("need eta >= 0 and n >= 0")
    return rabi * math.exp(-eta * eta / 2) * laguerre(n, eta * eta)


def thermal_cutoff(nbar: float, tail: float = THERMAL_TAIL) -> int:
    """Largest n kept so the thermal weight beyond it is below ``tail``."""
    if nbar <= 0:
        return 0
    r = nbar / (1 + nbar)
    return max(0, math.ceil(math.log(tail) / math.log(r)) - 1)


def thermal_weights(nbar: float, tail: float = THERMAL_TAIL) -> np.ndarray:
    n = np.arange(thermal_cutoff(nbar, tail) + 1)
    if nbar <= 0:
        return np.ones(1)
    return np.exp(n * math.log(nbar) - (n + 1) * math.log1p(nbar))


def _p_bright(rabi: float, eta: float, nbar: float, t: np.ndarray) -> np.ndarray:
    w = thermal_weights(nbar)
    om = rabi * math.exp(-eta * eta / 2) * laguerre_all(len(w) - 1, eta * eta)
    c = np.cos(np.outer(t, om) / 2)
    return np.clip((c * c) @ w, 0.0, 1.0)


def thermal_rabi(cfg: TransferConfig, t, eta: float | None = None):
    """P_bright(t) averaged over a thermal distribution of axial levels."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    p = _p_bright(cfg.rabi, lamb_dicke(cfg) if eta is None else eta, cfg.nbar, t)
    return float(p[0]) if scalar else p


def first_minimum(cfg: TransferConfig, eta: float | None = None):
    """(t, P_bright) at the first minimum of the thermal Rabi curve."""
    half = math.pi / cfg.rabi  # bare pi time
    grid = np.linspace(0, 2 * half, 2001)
    p = thermal_rabi(cfg, grid, eta)
    i = int(np.argmax((p[1:-1] <= p[:-2]) & (p[1:-1] <= p[2:]))) + 1
    r = optimize.minimize_scalar(
        lambda x: thermal_rabi(cfg, x, eta), bounds=(grid[i - 1], grid[i + 1]),
        method="bounded", options={"xatol": 1e-15},
    )
    return float(r.x), float(r.fun)


def doppler_limit(cfg: TransferConfig) -> float:
    return cfg.gamma / (2 * cfg.trap_freq)


def synthetic_curve(cfg: TransferConfig, times, shots: int, seed: int) -> RabiCurve:
    """Binomial samples of P_bright, point i drawn from a (seed, i) stream."""
    times = np.asarray(times, dtype=float)
    p = thermal_rabi(cfg, times)
    k = np.array([np.random.default_rng([seed, i]).binomial(shots, pi) for i, pi in enumerate(p)])
    phat = k / shots
    return RabiCurve(times, phat, binomial_sigma(phat, shots), shots)


def binomial_sigma(p, shots: int) -> np.ndarray:
    """Per-point standard error with a half-count floor at p = 0 or 1."""
    p = np.asarray(p, dtype=float)
    a = 0.5 / shots
    return np.sqrt((p + a) * (1 - p + a) / shots)


@dataclass
class RabiFit:
    nbar: float
    nbar_sigma: float
    rabi: float  # rad/s
    rabi_sigma: float
    eta: float
    eta_sigma: float = 0.0
    chi2_reduced: float = math.nan
    success: bool = True
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "nbar": self.nbar,
            "nbar_sigma": self.nbar_sigma,
            "omega_hz": self.rabi / TWO_PI,
            "omega_sigma": self.rabi_sigma / TWO_PI,
            "eta": self.eta,
            "eta_sigma": self.eta_sigma,
            "chi2_reduced": self.chi2_reduced,
            "success": self.success,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RabiFit":
        return cls(
            nbar=float(d["nbar"]), nbar_sigma=float(d["nbar_sigma"]),
            rabi=TWO_PI * float(d["omega_hz"]), rabi_sigma=TWO_PI * float(d["omega_sigma"]),
            eta=float(d.get("eta", math.nan)), eta_sigma=float(d.get("eta_sigma", 0.0)),
            chi2_reduced=float(d.get("chi2_reduced", math.nan)),
            success=bool(d.get("success", True)), message=d.get("message", ""),
        )


MIN_POINTS = 10
MIN_PERIODS = 1.5


REWEIGHT_ITER = 5


def fit_rabi(curve: RabiCurve, eta: float, fit_eta: bool = False) -> RabiFit:
    """Weighted least squares of (nbar, Omega_R) against the thermal model.

    The frequency is seeded by a coarse grid scan. When the shots per point
    are known the binomial weights are recomputed from the fitted curve and
    the fit repeated; weights taken from the observed fractions pull the
    fit toward points that happen to sit near 0 or 1. Without any sigmas
    the covariance is scaled by the residual variance.
    """
    t, p = curve.t, curve.p
    if len(t) < MIN_POINTS:
        raise TransferError(f"need at least {MIN_POINTS} points, got {len(t)}")
    span = t[-1] - t[0]
    w = 1.0 / curve.sigma if curve.sigma is not None else np.ones_like(p)
    if curve.shots is not None:
        w = 1.0 / binomial_sigma(p, curve.shots)

    # coarse scan in (frequency, nbar)
    dt = float(np.min(np.diff(t)))
    f_grid = np.linspace(0.5 / span, 0.5 / dt, 600)
    best = None
    for nb in (0.0, 2.0, 8.0, 20.0, 50.0):
        for f in f_grid:
            r = float(np.sum((w * (_p_bright(TWO_PI * f, eta, nb, t) - p)) ** 2))
            if best is None or r < best[0]:
                best = (r, f, nb)
    _, f0, nb0 = best
    if span * f0 < MIN_PERIODS:
        raise TransferError(
            f"data span {span * 1e9:.0f} ns covers {span * f0:.2f} periods; need {MIN_PERIODS}"
        )

    scale = 1e6  # MHz-scale variables keep the solver well scaled

    def model(x):
        return _p_bright(TWO_PI * scale * x[1], x[2] if fit_eta else eta, x[0], t)

    x = np.array([nb0, f0 / scale] + ([eta] if fit_eta else []))
    lo = [0.0, 0.0] + ([0.0] if fit_eta else [])
    hi = [1e4, np.inf] + ([2.0] if fit_eta else [])
    for _ in range(REWEIGHT_ITER if curve.shots is not None else 1):
        try:
            res = optimize.least_squares(lambda x: w * (model(x) - p), x, bounds=(lo, hi), method="trf",
                                         x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                         max_nfev=20000)
        except ValueError as exc:
            return RabiFit(math.nan, math.inf, math.nan, math.inf, eta, success=False, message=str(exc))
        moved = np.max(np.abs(res.x - x) / np.maximum(np.abs(x), 1e-12))
        x = res.x
        if curve.shots is not None:
            w = 1.0 / binomial_sigma(model(x), curve.shots)
        if moved < 1e-9:
            break
    res.fun = w * (model(x) - p)
    dof = len(t) - len(x)
    chi2 = float(res.fun @ res.fun)
    J = res.jac
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((len(x), len(x)), np.inf)
    if curve.sigma is None and curve.shots is None and dof > 0:
        cov = cov * chi2 / dof
    sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    ok = bool(res.success) and res.status > 0
    return RabiFit(
        nbar=float(x[0]),
        nbar_sigma=float(sig[0]),
        rabi=TWO_PI * scale * float(x[1]),
        rabi_sigma=TWO_PI * scale * float(sig[1]),
        eta=float(x[2]) if fit_eta else eta,
        eta_sigma=float(sig[2]) if fit_eta else 0.0,
        chi2_reduced=chi2 / dof if dof > 0 else math.nan,
        success=ok,
        message="" if ok else f"least squares did not converge: {res.message}",
    )


@dataclass
class TransferEstimate:
    p_transfer: float
    sigma: float
    t_pi: float  # s
    p_bright_model: float
    classified_dark: float  # raw fraction labeled dark

    def to_dict(self) -> dict:
        return {
            "p_transfer": self.p_transfer,
            "sigma": self.sigma,
            "t_pi_ns": self.t_pi * 1e9,
            "p_bright_model": self.p_bright_model,
            "classified_dark": self.classified_dark,
        }


def transfer_fidelity(
    cfg: TransferConfig, n_shots: int, seed: int, model: HistogramModel, t: float | None = None
) -> TransferEstimate:
    """Simulated shelving probability at the first Rabi minimum (or at ``t``).

    Shot i draws its state and photon count from streams derived from
    (seed, i). The transfer probability is the maximum-likelihood dark
    fraction of the resulting count histogram under ``model``; its error
    combines binomial and classification overlap via the Fisher information.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    if t is None:
        t, pb = first_minimum(cfg)
    else:
        pb = thermal_rabi(cfg, t)
    counts = np.empty(n_shots, dtype=np.int64)
    dark_label = 0
    for i in range(n_shots):
        ss = np.random.SeedSequence([seed, i])
        u, count_seed = ss.generate_state(2)
        bright = np.random.default_rng(int(u)).random() < pb
        counts[i] = telegraph_sample(model, "bright" if bright else "dark", int(count_seed))
        dark_label += classify(int(counts[i]), model)[0] == "dark"
    frac, err = fit_dark_fraction(CountHistogram.from_counts(counts), model)
    return TransferEstimate(frac, err, t, pb, dark_label / n_shots)
