"""Photon-count statistics for bright/dark state detection.

The count distributions assume at most one optical-pumping event per
detection window: a bright ion may be pumped dark after an exponential time
(mean tau_b), a dark ion may be pumped bright (mean tau_d). Integrating the
Poisson count over the jump time gives closed forms in terms of the
regularized lower incomplete gamma function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import optimize
from scipy.special import gammaln
from scipy.stats import chi2, poisson

TAIL_EPS = 1e-12
CHUNK = 1 << 16  # samples per derived RNG stream
TAU_UPPER_FACTOR = 1e3  # tau sentinel, in units of the detection window
CONF_LEVEL = 0.99


class ModelError(ValueError):
    """Histogram model parameters outside the domain of the count formulas."""


# ---------------------------------------------------------------------------
# regularized incomplete gamma


def _log_prefactor(k: float, x: float) -> float:
    return k * math.log(x) - x - math.lgamma(k)


def _series(k: float, x: float) -> float:
    """P(k, x) / exp(_log_prefactor(k, x))."""
    term = 1.0 / k
    total = term
    a = k
    for _ in range(10000):
        a += 1.0
        term *= x / a
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total


def _continued_fraction(k: float, x: float) -> float:
    """Q(k, x) / exp(_log_prefactor(k, x)), modified Lentz evaluation."""
    tiny = 1e-300
    b = x + 1.0 - k
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - k)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def reg_lower_gamma(k, x: float) -> float:
    """P(k, x) = (1/Gamma(k)) * integral_0^x t^(k-1) e^-t dt.

    Series below x = k + 1, continued fraction for the complement above.
    """
    if x < 0:
        raise ValueError("reg_lower_gamma needs x >= 0")
    if k <= 0:
        raise ValueError("reg_lower_gamma needs k > 0")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < k + 1.0:
        return min(1.0, _series(k, x) * math.exp(_log_prefactor(k, x)))
    return max(0.0, 1.0 - _continued_fraction(k, x) * math.exp(_log_prefactor(k, x)))


def _scaled_gamma_diff(kmax: int, lo: float, hi: float, s: float) -> np.ndarray:
    """exp(s) * (P(k, hi) - P(k, lo)) for k = 1..kmax, 0 <= lo <= hi.

    When both arguments sit in the upper tail the difference is taken
    between the complements, which avoids cancelling two numbers near 1.
    """
    out = np.empty(kmax)
    for i, k in enumerate(range(1, kmax + 1)):
        if lo >= k + 1.0:
            q_lo = _continued_fraction(k, lo) * math.exp(_log_prefactor(k, lo) + s)
            q_hi = _continued_fraction(k, hi) * math.exp(_log_prefactor(k, hi) + s)
            out[i] = q_lo - q_hi
        else:
            p_lo = 0.0 if lo == 0 else _series(k, lo) * math.exp(_log_prefactor(k, lo) + s)
            out[i] = reg_lower_gamma(k, hi) * math.exp(s) - p_lo
    return out


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class HistogramModel:
    nbar_dark: float
    nbar_bright: float
    tau_dark: float  # s; math.inf for no depumping
    tau_bright: float  # s
    window: float = 1e-3  # detection time, s

    def __post_init__(self):
        if not (self.nbar_dark >= 0 and self.nbar_bright >= self.nbar_dark):
            raise ModelError("need nbar_bright >= nbar_dark >= 0")
        if not (self.tau_dark > 0 and self.tau_bright > 0 and self.window > 0):
            raise ModelError("pumping times and window must be > 0")

    @property
    def contrast(self) -> float:
        return self.nbar_bright - self.nbar_dark

    def beta(self, tau: float) -> float:
        if math.isinf(tau) or self.contrast == 0:
            return 0.0
        return self.window / (tau * self.contrast)

    @property
    def beta_bright(self) -> float:
        return self.beta(self.tau_bright)

    @property
    def beta_dark(self) -> float:
        return self.beta(self.tau_dark)

    def n_max(self) -> int:
        """Count beyond which both distributions hold less than TAIL_EPS."""
        return int(poisson.isf(TAIL_EPS, max(self.nbar_bright, 1e-3))) + 2

    def to_dict(self) -> dict:
        enc = lambda v: None if math.isinf(v) else v
        return {
            "nbar_dark": self.nbar_dark,
            "nbar_bright": self.nbar_bright,
            "tau_dark": enc(self.tau_dark),
            "tau_bright": enc(self.tau_bright),
            "window": self.window,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "HistogramModel":
        dec = lambda v: math.inf if v is None else float(v)
        try:
            return cls(
                nbar_dark=float(d["nbar_dark"]),
                nbar_bright=float(d["nbar_bright"]),
                tau_dark=dec(d["tau_dark"]),
                tau_bright=dec(d["tau_bright"]),
                window=float(d.get("window", 1e-3)),
            )
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed model document: {exc}") from None


REFERENCE_MODEL = HistogramModel(0.44, 8.7, 5.8e-3, 3.4e-3, 1e-3)


def _poisson_pmf(mu: float, n: np.ndarray) -> np.ndarray:
    if mu == 0:
        return (n == 0).astype(float)
    return np.exp(n * math.log(mu) - mu - gammaln(n + 1))


def bright_pmf(m: HistogramModel, n):
    """P_b(n): bright ion that may be pumped dark during the window."""
    scalar = np.ndim(n) == 0
    n = np.atleast_1d(np.asarray(n, dtype=np.int64))
    if np.any(n < 0):
        raise ValueError("counts must be >= 0")
    b = m.beta_bright
    out = math.exp(-b * m.contrast) * _poisson_pmf(m.nbar_bright, n)
    if b > 0:
        kmax = int(n.max()) + 1
        diff = _scaled_gamma_diff(kmax, (1 + b) * m.nbar_dark, (1 + b) * m.nbar_bright, b * m.nbar_dark)
        out = out + b * np.exp(-(n + 1) * math.log1p(b)) * diff[n]
    return float(out[0]) if scalar else out


def dark_pmf(m: HistogramModel, n):
    """P_d(n): dark ion that may be pumped bright during the window."""
    b = m.beta_dark
    if b >= 1:
        raise ModelError(f"dark-state formula needs beta_d < 1 (got {b:.4g})")
    scalar = np.ndim(n) == 0
    n = np.atleast_1d(np.asarray(n, dtype=np.int64))
    if np.any(n < 0):
        raise ValueError("counts must be >= 0")
    out = math.exp(-b * m.contrast) * _poisson_pmf(m.nbar_dark, n)
    if b > 0:
        kmax = int(n.max()) + 1
        diff = _scaled_gamma_diff(kmax, (1 - b) * m.nbar_dark, (1 - b) * m.nbar_bright, -b * m.nbar_bright)
        out = out + b * np.exp(-(n + 1) * math.log1p(-b)) * diff[n]
    return float(out[0]) if scalar else out


def pmf_table(m: HistogramModel, n_max: int | None = None):
    """(n, P_b, P_d) arrays for n = 0..n_max."""
    n = np.arange((m.n_max() if n_max is None else n_max) + 1)
    return n, bright_pmf(m, n), dark_pmf(m, n)


# ---------------------------------------------------------------------------
# generative oracle


def telegraph_samples(m: HistogramModel, initial: str, n: int, seed: int) -> np.ndarray:
    """Counts from the single-jump telegraph process.

    Samples are drawn in fixed-size chunks, chunk c from a generator seeded
    with (seed, c), so results do not depend on how work is split.
    """
    if initial not in ("bright", "dark"):
        raise ValueError("initial must be 'bright' or 'dark'")
    rate_b, rate_d = m.nbar_bright / m.window, m.nbar_dark / m.window
    if initial == "bright":
        r1, r2, tau = rate_b, rate_d, m.tau_bright
    else:
        r1, r2, tau = rate_d, rate_b, m.tau_dark
    out = np.empty(n, dtype=np.int64)
    for c in range(0, (n + CHUNK - 1) // CHUNK):
        rng = np.random.default_rng([seed, c])
        size = min(CHUNK, n - c * CHUNK)
        if math.isinf(tau):
            T = np.full(size, np.inf)
        else:
            T = rng.exponential(tau, size)
        t1 = np.minimum(T, m.window)
        mean = r1 * t1 + r2 * (m.window - t1)
        out[c * CHUNK : c * CHUNK + size] = rng.poisson(mean)
    return out


def telegraph_sample(m: HistogramModel, initial: str, seed: int) -> int:
    return int(telegraph_samples(m, initial, 1, seed)[0])


# ---------------------------------------------------------------------------
# histograms


@dataclass
class CountHistogram:
    """Frequencies indexed by count: ``freq[n]`` events saw n photons."""

    freq: np.ndarray

    def __post_init__(self):
        self.freq = np.asarray(self.freq, dtype=np.int64)
        if self.freq.ndim != 1 or np.any(self.freq < 0):
            raise ValueError("histogram frequencies must be a 1-d nonnegative array")

    @property
    def total(self) -> int:
        return int(self.freq.sum())

    @classmethod
    def from_counts(cls, counts) -> "CountHistogram":
        counts = np.asarray(counts, dtype=np.int64)
        return cls(np.bincount(counts, minlength=1))

    @classmethod
    def from_mapping(cls, d: Mapping) -> "CountHistogram":
        if not d:
            return cls(np.zeros(1, dtype=np.int64))
        top = max(int(k) for k in d)
        freq = np.zeros(top + 1, dtype=np.int64)
        for k, v in d.items():
            freq[int(k)] += int(v)
        return cls(freq)

    def mean(self) -> float:
        return float(np.arange(len(self.freq)) @ self.freq / self.total)

    def to_csv(self) -> str:
        lines = ["n,count"] + [f"{n},{c}" for n, c in enumerate(self.freq)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "CountHistogram":
        rows = [r.strip() for r in text.strip().splitlines() if r.strip()]
        if not rows or rows[0].replace(" ", "") != "n,count":
            raise ValueError("histogram CSV must start with header 'n,count'")
        d = {}
        for r in rows[1:]:
            n, c = r.split(",")
            d[int(n)] = d.get(int(n), 0) + int(c)
        return cls.from_mapping(d)


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    model: HistogramModel
    half_widths: dict
    chi2_reduced: float
    log_likelihood: float
    success: bool = True
    message: str = ""
    dof: int = 0
    at_bound: tuple = ()

    def to_dict(self) -> dict:
        enc = lambda v: None if (v is None or math.isinf(v) or math.isnan(v)) else v
        return {
            **self.model.to_dict(),
            "half_widths": {k: enc(v) for k, v in self.half_widths.items()},
            "confidence": CONF_LEVEL,
            "chi2_reduced": self.chi2_reduced,
            "dof": self.dof,
            "log_likelihood": self.log_likelihood,
            "success": self.success,
            "message": self.message,
            "at_bound": list(self.at_bound),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitResult":
        dec = lambda v: math.inf if v is None else float(v)
        return cls(
            model=HistogramModel.from_dict(d),
            half_widths={k: dec(v) for k, v in d["half_widths"].items()},
            chi2_reduced=float(d["chi2_reduced"]),
            log_likelihood=float(d["log_likelihood"]),
            success=bool(d.get("success", True)),
            message=d.get("message", ""),
            dof=int(d.get("dof", 0)),
            at_bound=tuple(d.get("at_bound", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class FitError(RuntimeError):
    def __init__(self, result: FitResult):
        super().__init__(result.message)
        self.result = result


PARAM_NAMES = ("nbar_dark", "nbar_bright", "tau_dark", "tau_bright")


def _binned(p: np.ndarray, k: int) -> np.ndarray:
    """Probabilities of bins 0..k-1 plus the pooled tail n >= k."""
    head = np.clip(p[:k], 1e-300, None)
    tail = max(1.0 - p[:k].sum(), 1e-300)
    return np.append(head, tail)


def _hist_bins(h: CountHistogram) -> np.ndarray:
    """Observed frequencies in bins 0..K-1 and >= K, K the largest count seen."""
    return h.freq.astype(float)


def _neg_loglike(model: HistogramModel, hb: np.ndarray, hd: np.ndarray) -> float:
    kb, kd = len(hb) - 1, len(hd) - 1
    n = np.arange(max(kb, kd) + 1)
    pb, pd = bright_pmf(model, n), dark_pmf(model, n)
    ll = hb @ np.log(_binned(pb, kb)) + hd @ np.log(_binned(pd, kd))
    return -float(ll)


def _pooled_chi2(freq: np.ndarray, p: np.ndarray, total: int, min_expected: float = 5.0):
    """Pearson chi^2 with adjacent bins merged until each expects >= min_expected."""
    expected = total * p
    k = len(expected)
    obs = np.zeros(k)
    obs[: min(k, len(freq))] = freq[:k]
    obs[-1] += freq[k:].sum()
    chi = 0.0
    bins = 0
    acc_o = acc_e = 0.0
    groups = []
    for o, e in zip(obs, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            groups.append([acc_o, acc_e])
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if groups:
            groups[-1][0] += acc_o
            groups[-1][1] += acc_e
        else:
            groups.append([acc_o, acc_e])
    for o, e in groups:
        chi += (o - e) ** 2 / e
        bins += 1
    return chi, bins


def chi2_report(model: HistogramModel, bright: CountHistogram, dark: CountHistogram, n_free: int = 4):
    """(chi^2, dof) over both histograms with pooled low-expectation bins."""
    n_hi = max(model.n_max(), len(bright.freq), len(dark.freq))
    n = np.arange(n_hi)
    out_chi = 0.0
    dof = -n_free
    for h, pmf in ((bright, bright_pmf), (dark, dark_pmf)):
        p = pmf(model, n)
        p = np.append(p[:-1], max(1.0 - p[:-1].sum(), 0.0))  # last bin takes the tail
        c, b = _pooled_chi2(h.freq, p, h.total)
        out_chi += c
        dof += b - 1
    return out_chi, dof


class _Objective:
    """Negative log-likelihood in an unconstrained-ish parameterization.

    x = (nbar_dark, nbar_bright - nbar_dark, log rate_dark, log rate_bright),
    rate = 1/tau in units of 1/window.
    """

    def __init__(self, hb, hd, window, log_rate_min):
        self.hb, self.hd, self.window = hb, hd, window
        self.log_rate_min = log_rate_min

    def model(self, x) -> HistogramModel:
        nd, dn, lrd, lrb = x
        lrd, lrb = max(lrd, self.log_rate_min), max(lrb, self.log_rate_min)
        return HistogramModel(
            nbar_dark=max(nd, 0.0),
            nbar_bright=max(nd, 0.0) + max(dn, 1e-9),
            tau_dark=self.window / math.exp(lrd),
            tau_bright=self.window / math.exp(lrb),
            window=self.window,
        )

    def __call__(self, x) -> float:
        nd, dn = x[0], x[1]
        if nd < 0 or dn <= 0:
            return 1e300
        try:
            m = self.model(x)
            if m.beta_dark >= 0.999:
                return 1e300
            return _neg_loglike(m, self.hb, self.hd)
        except (ModelError, OverflowError, ValueError):
            return 1e300


def _nll_natural(theta, hb, hd, window) -> float:
    nd, nb, td, tb = theta
    try:
        m = HistogramModel(nd, nb, td, tb, window)
        if m.beta_dark >= 1:
            return math.inf
        return _neg_loglike(m, hb, hd)
    except ModelError:
        return math.inf


def _hessian(f, theta: np.ndarray, steps: np.ndarray) -> np.ndarray:
    k = len(theta)
    H = np.zeros((k, k))
    f0 = f(theta)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = steps[i]
        H[i, i] = (f(theta + ei) - 2 * f0 + f(theta - ei)) / steps[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (
                f(theta + ei + ej) - f(theta + ei - ej) - f(theta - ei + ej) + f(theta - ei - ej)
            ) / (4 * steps[i] * steps[j])
    return H


def fit_histograms(
    bright: CountHistogram, dark: CountHistogram, window: float = 1e-3, max_iter: int = 4000
) -> FitResult:
    """Joint maximum-likelihood fit of (nbar_d, nbar_b, tau_d, tau_b).

    Nelder-Mead on the multinomial likelihood of both histograms, then a
    golden-section polish along each coordinate. Half-widths are 99%
    intervals from the curvature of the log-likelihood at the optimum.
    A pumping time pinned at the sentinel 1e3 * window reports an infinite
    half-width. On non-convergence the returned result has ``success=False``.
    """
    if bright.total < 100 or dark.total < 100:
        raise ValueError("each histogram needs at least 100 events")
    hb, hd = _hist_bins(bright), _hist_bins(dark)
    tau_max = TAU_UPPER_FACTOR * window
    obj = _Objective(hb, hd, window, math.log(window / tau_max))

    p0_dark = dark.freq[0] / dark.total
    nd0 = -math.log(min(max(p0_dark, 1e-6), 1 - 1e-9))
    nb0 = max(bright.mean() * 1.05, nd0 + 1.0)
    x0 = np.array([nd0, nb0 - nd0, math.log(0.1), math.log(0.1)])

    res = optimize.minimize(
        obj, x0, method="Nelder-Mead",
        options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": max_iter, "adaptive": True},
    )
    x = res.x.copy()
    x[2:] = np.maximum(x[2:], obj.log_rate_min)
    # polish coordinate-wise, then let the simplex confirm
    for _ in range(3):
        for i in range(4):
            def along(v, i=i):
                y = x.copy()
                y[i] = v
                return obj(y)
            lo, hi = (x[i] - 0.5, x[i] + 0.5) if i >= 2 else (max(x[i] * 0.8 - 1e-3, 0.0), x[i] * 1.2 + 1e-3)
            if i >= 2:
                lo = max(lo, obj.log_rate_min)
            r = optimize.minimize_scalar(along, bounds=(lo, hi), method="bounded",
                                         options={"xatol": 1e-9})
            if r.fun <= obj(x):
                x[i] = r.x
    res2 = optimize.minimize(
        obj, x, method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": max_iter, "adaptive": True},
    )
    if res2.fun <= obj(x):
        x = res2.x
    x[2:] = np.maximum(x[2:], obj.log_rate_min)
    model = obj.model(x)
    nll = obj(x)
    success = bool(res.success or res2.success) and math.isfinite(nll) and nll < 1e299

    at_bound = tuple(
        name for name, lr in (("tau_dark", x[2]), ("tau_bright", x[3]))
        if lr <= obj.log_rate_min + 1e-3
    )
    theta = np.array([model.nbar_dark, model.nbar_bright, model.tau_dark, model.tau_bright])
    free = [i for i, name in enumerate(PARAM_NAMES) if name not in at_bound]
    half = {name: math.inf for name in PARAM_NAMES}
    if success:
        steps = np.array([
            max(1e-4, 1e-3 * theta[0]), 1e-3 * theta[1], 1e-3 * theta[2], 1e-3 * theta[3]
        ])

        def f_free(v):
            t = theta.copy()
            t[free] = v
            return _nll_natural(t, hb, hd, window)

        H = _hessian(f_free, theta[free], steps[free])
        try:
            cov = np.linalg.inv(H)
            scale = math.sqrt(chi2.ppf(CONF_LEVEL, 1))
            for j, i in enumerate(free):
                half[PARAM_NAMES[i]] = scale * math.sqrt(cov[j, j]) if cov[j, j] > 0 else math.nan
        except np.linalg.LinAlgError:
            success = False
            res2.message = "singular curvature matrix at the optimum"
    chi, dof = chi2_report(model, bright, dark, n_free=len(free))
    result = FitResult(
        model=model,
        half_widths=half,
        chi2_reduced=chi / dof if dof > 0 else math.nan,
        log_likelihood=-nll,
        success=success,
        message="" if success else f"fit did not converge: {res2.message}",
        dof=dof,
        at_bound=at_bound,
    )
    return result


# ---------------------------------------------------------------------------
# discrimination


def optimal_threshold(m: HistogramModel, n_max: int | None = None):
    """Integer threshold n_c (bright iff n >= n_c) minimizing the mean error.

    Returns (n_c, eps_bright, eps_dark); ties go to the smaller threshold.
    """
    n, pb, pd = pmf_table(m, n_max)
    cb = np.cumsum(pb)
    cd = np.cumsum(pd)
    best = None
    for nc in range(1, len(n)):
        eb = float(cb[nc - 1])
        ed = float(max(0.0, 1.0 - cd[nc - 1]))
        err = 0.5 * (eb + ed)
        if best is None or err < best[0] - 1e-15:
            best = (err, nc, eb, ed)
    _, nc, eb, ed = best
    return nc, eb, ed


def detection_fidelity(m: HistogramModel) -> float:
    _, eb, ed = optimal_threshold(m)
    return 1.0 - 0.5 * (eb + ed)


def classify(n: int, m: HistogramModel):
    """Equal-prior likelihood-ratio label and its posterior probability."""
    pb, pd = bright_pmf(m, n), dark_pmf(m, n)
    total = pb + pd
    if total == 0:
        return "bright" if n >= m.nbar_bright else "dark", 0.5
    if pb >= pd:
        return "bright", pb / total
    return "dark", pd / total


def fit_dark_fraction(h: CountHistogram, m: HistogramModel):
    """ML dark-state fraction of a histogram using the model PMFs as a basis.

    Returns (fraction, standard error from the Fisher information).
    """
    n = np.arange(len(h.freq))
    k = len(h.freq) - 1
    pb = _binned(bright_pmf(m, np.arange(k + 1)), k)
    pd = _binned(dark_pmf(m, np.arange(k + 1)), k)
    f = h.freq.astype(float)

    def nll(p):
        return -float(f @ np.log(np.clip(p * pd + (1 - p) * pb, 1e-300, None)))

    r = optimize.minimize_scalar(nll, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-10})
    p = float(r.x)
    for edge in (0.0, 1.0):
        if nll(edge) <= r.fun:
            p = edge
    mix = np.clip(p * pd + (1 - p) * pb, 1e-300, None)
    info = float(f @ ((pd - pb) ** 2 / mix**2))
    return p, (1.0 / math.sqrt(info) if info > 0 else math.inf)
