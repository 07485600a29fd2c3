"""Rate-equation optical pumping in the S1/2 + D3/2 manifold of 137Ba+.

The P levels are adiabatically eliminated: every laser tone contributes an
incoherent excitation rate Gamma (Omega^2/4) / (Delta^2 + Gamma^2/4) per
(lower, upper) sublevel pair, redistributed by the spontaneous branching
ratios. Coherent Raman coupling inside D3/2 enters as a symmetric population
exchange with a Lorentzian two-photon lineshape.

Frequencies are angular (rad/s) everywhere in this module; the JSON readers
and writers convert from/to plain hertz.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .atom import (
    TWO_PI,
    AtomModel,
    Sublevel,
    branching_ratio,
    build_ba137,
    dipole_amplitude,
    lande_gF,
    max_amplitude,
    sublevels_of,
    MU_B_OVER_HBAR,
)

POLARIZATIONS = (-1, 0, 1)
DARK_THRESHOLD = 10.0  # events/s
RESONANT_WINDOW = TWO_PI * 100e6  # max_detuning that keeps only near-resonant couplings


class PumpingConfigError(ValueError):
    """Invalid beam, Raman pair or setup parameters."""


class UnsupportedConfiguration(PumpingConfigError):
    """A physically meaningful request the rate model does not cover."""


def _normalize_pol(pol) -> tuple:
    w = tuple(complex(x) for x in pol)
    if len(w) != 3:
        raise PumpingConfigError("polarization needs weights for q = -1, 0, +1")
    return w


@dataclass(frozen=True)
class BeamConfig:
    """One laser beam driving ``lower(F) -> upper(F')``.

    ``F``/``Fp`` may be None, in which case the beam is referenced to the
    fine-structure centroid. ``polarization`` holds complex field weights on
    q = (-1, 0, +1); ``sidebands`` are extra tones as (offset, relative field
    amplitude) on top of the unit-amplitude carrier.
    """

    name: str
    lower: str
    upper: str
    F: float | None
    Fp: float | None
    polarization: tuple
    rabi: float  # rad/s, on the strongest pair of the target line
    detuning: float = 0.0  # rad/s, carrier relative to the target line
    sidebands: tuple = ()
    extinction_db: float = math.inf

    def __post_init__(self):
        pol = _normalize_pol(self.polarization)
        norm = sum(abs(x) ** 2 for x in pol)
        if abs(norm - 1.0) > 1e-9:
            raise PumpingConfigError(f"{self.name}: polarization weights not normalized ({norm})")
        if self.rabi < 0:
            raise PumpingConfigError(f"{self.name}: negative Rabi rate")
        if not self.extinction_db >= 0:
            raise PumpingConfigError(f"{self.name}: extinction must be >= 0 dB")
        object.__setattr__(self, "polarization", pol)
        object.__setattr__(
            self, "sidebands", tuple((float(o), float(a)) for o, a in self.sidebands)
        )

    def intensity_weights(self) -> dict:
        """|weight|^2 per q after polarization leakage.

        A fraction 10^(-dB/10) of the power is redistributed evenly over the
        two components it was not meant to occupy.
        """
        leak = 0.0 if math.isinf(self.extinction_db) else 10 ** (-self.extinction_db / 10)
        p = [abs(x) ** 2 for x in self.polarization]
        return {q: (1 - leak) * pq + leak * (1 - pq) / 2 for q, pq in zip(POLARIZATIONS, p)}

    def tones(self) -> list:
        return [(0.0, 1.0), *self.sidebands]

    def with_tones(self, offset: float, amplitude: float) -> "BeamConfig":
        """Add a copy of every existing tone shifted by ``offset``."""
        extra = [(o + offset, a * amplitude) for o, a in self.tones()]
        return replace(self, sidebands=self.sidebands + tuple(extra))

    def to_dict(self) -> dict:
        def pol_entry(x: complex):
            return x.real if x.imag == 0 else [x.real, x.imag]

        return {
            "name": self.name,
            "lower": self.lower,
            "F": self.F,
            "upper": self.upper,
            "Fp": self.Fp,
            "polarization": [pol_entry(x) for x in self.polarization],
            "rabi_hz": self.rabi / TWO_PI,
            "detuning_hz": self.detuning / TWO_PI,
            "sidebands_hz": [[o / TWO_PI, a] for o, a in self.sidebands],
            "extinction_db": None if math.isinf(self.extinction_db) else self.extinction_db,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BeamConfig":
        try:
            pol = [complex(*x) if isinstance(x, (list, tuple)) else complex(x) for x in d["polarization"]]
            ext = d.get("extinction_db")
            return cls(
                name=d["name"],
                lower=d["lower"],
                F=d.get("F"),
                upper=d["upper"],
                Fp=d.get("Fp"),
                polarization=tuple(pol),
                rabi=TWO_PI * float(d["rabi_hz"]),
                detuning=TWO_PI * float(d.get("detuning_hz", 0.0)),
                sidebands=tuple((TWO_PI * float(o), float(a)) for o, a in d.get("sidebands_hz", [])),
                extinction_db=math.inf if ext is None else float(ext),
            )
        except (KeyError, TypeError) as exc:
            raise PumpingConfigError(f"malformed beam entry: {exc}") from None


@dataclass(frozen=True)
class RamanPairConfig:
    """Raman pair inside D3/2: ``pi_beam`` and ``sigma_beam`` (sigma+).

    ``detuning`` is the common one-photon detuning from the D3/2 -> P1/2
    centroid; ``two_photon`` is the difference frequency omega_sigma - omega_pi.
    """

    pi_beam: BeamConfig
    sigma_beam: BeamConfig
    detuning: float
    two_photon: float = 0.0

    def validate(self, atom: AtomModel):
        gamma = atom.level("P1/2").gamma
        if abs(self.detuning) <= 100 * gamma:
            raise PumpingConfigError("Raman pair must be detuned by more than 100 linewidths")

    def to_dict(self) -> dict:
        return {
            "pi_beam": self.pi_beam.to_dict(),
            "sigma_beam": self.sigma_beam.to_dict(),
            "detuning_hz": self.detuning / TWO_PI,
            "two_photon_hz": self.two_photon / TWO_PI,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RamanPairConfig":
        try:
            return cls(
                pi_beam=BeamConfig.from_dict(d["pi_beam"]),
                sigma_beam=BeamConfig.from_dict(d["sigma_beam"]),
                detuning=TWO_PI * float(d["detuning_hz"]),
                two_photon=TWO_PI * float(d.get("two_photon_hz", 0.0)),
            )
        except (KeyError, TypeError) as exc:
            raise PumpingConfigError(f"malformed Raman pair entry: {exc}") from None


@dataclass(frozen=True)
class DetectionSetup:
    """Beams on during detection plus everything needed to prepare states.

    ``aux_beams`` are available to the preparation sequences but are off
    during detection (D6 in the shipped configuration).
    """

    atom: AtomModel
    beams: tuple
    raman_pairs: tuple = ()
    collection_efficiency: float = 1e-3
    background_rate: float = 0.0  # counts/s
    duration: float = 1e-3  # s
    aux_beams: tuple = ()
    pump_modulation: tuple = (TWO_PI * 1.488e9, 1.0)  # (offset rad/s, amplitude)

    def __post_init__(self):
        object.__setattr__(self, "beams", tuple(self.beams))
        object.__setattr__(self, "raman_pairs", tuple(self.raman_pairs))
        object.__setattr__(self, "aux_beams", tuple(self.aux_beams))
        if not 0 <= self.collection_efficiency <= 1:
            raise PumpingConfigError("collection efficiency must lie in [0, 1]")
        if self.duration <= 0:
            raise PumpingConfigError("detection duration must be > 0")
        if self.background_rate < 0:
            raise PumpingConfigError("background rate must be >= 0")
        for pair in self.raman_pairs:
            pair.validate(self.atom)

    def beam(self, name: str) -> BeamConfig:
        for b in self.beams + self.aux_beams:
            if b.name == name:
                return b
        raise PumpingConfigError(f"no beam named {name!r}")

    def with_beams(self, beams: Iterable[BeamConfig], raman: bool = True) -> "DetectionSetup":
        return replace(self, beams=tuple(beams), raman_pairs=self.raman_pairs if raman else ())

    def to_dict(self) -> dict:
        return {
            "atom": self.atom.to_dict(),
            "beams": [b.to_dict() for b in self.beams],
            "aux_beams": [b.to_dict() for b in self.aux_beams],
            "raman_pairs": [p.to_dict() for p in self.raman_pairs],
            "collection_efficiency": self.collection_efficiency,
            "background_rate": self.background_rate,
            "duration": self.duration,
            "pump_modulation_hz": [self.pump_modulation[0] / TWO_PI, self.pump_modulation[1]],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DetectionSetup":
        try:
            atom = AtomModel.from_dict(d["atom"]) if "atom" in d else build_ba137()
            mod = d.get("pump_modulation_hz", [1.488e9, 1.0])
            return cls(
                atom=atom,
                beams=[BeamConfig.from_dict(b) for b in d.get("beams", [])],
                aux_beams=[BeamConfig.from_dict(b) for b in d.get("aux_beams", [])],
                raman_pairs=[RamanPairConfig.from_dict(p) for p in d.get("raman_pairs", [])],
                collection_efficiency=float(d.get("collection_efficiency", 1e-3)),
                background_rate=float(d.get("background_rate", 0.0)),
                duration=float(d.get("duration", 1e-3)),
                pump_modulation=(TWO_PI * float(mod[0]), float(mod[1])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, PumpingConfigError):
                raise
            raise PumpingConfigError(f"malformed setup document: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DetectionSetup":
        return cls.from_dict(json.loads(text))


@dataclass
class RateMatrix:
    """Generator of the population dynamics, column convention dp/dt = R p.

    ``rates[j, i]`` is the transfer rate from state i to state j (1/s);
    ``emission[i]`` the detected-photon rate while in state i.
    """

    rates: np.ndarray
    emission: np.ndarray
    states: tuple

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.emission = np.asarray(self.emission, dtype=float)
        np.fill_diagonal(self.rates, 0.0)
        np.fill_diagonal(self.rates, -self.rates.sum(axis=0))

    @classmethod
    def zeros(cls, states: Sequence[Sublevel]) -> "RateMatrix":
        n = len(states)
        return cls(np.zeros((n, n)), np.zeros(n), tuple(states))

    @property
    def outflow(self) -> np.ndarray:
        return -np.diag(self.rates)

    def index(self, s: Sublevel) -> int:
        return self.states.index(s)

    def __add__(self, other: "RateMatrix") -> "RateMatrix":
        if other.states != self.states:
            raise ValueError("rate matrices over different state spaces")
        off = lambda m: m - np.diag(np.diag(m))
        return RateMatrix(off(self.rates) + off(other.rates), self.emission + other.emission, self.states)


# ---------------------------------------------------------------------------
# rate construction


def _line_reference(atom: AtomModel, beam: BeamConfig) -> float:
    if beam.F is None or beam.Fp is None:
        lo, up = atom.level(beam.lower), atom.level(beam.upper)
        return TWO_PI * (up.offset_thz - lo.offset_thz) * 1e12
    return atom.line_frequency(beam.lower, beam.F, beam.upper, beam.Fp)


def _decay_table(atom: AtomModel, excited: Sequence[Sublevel], states: Sequence[Sublevel]) -> np.ndarray:
    return np.array([[branching_ratio(atom, e, g) for g in states] for e in excited])


def scattering_rate_matrix(setup: DetectionSetup, max_detuning: float | None = None) -> RateMatrix:
    """Optical pumping rates from every beam in ``setup.beams``.

    ``max_detuning`` (rad/s) drops any tone/transition pair further detuned
    than this; use it to keep only resonant couplings.
    """
    atom = setup.atom
    states = atom.ground_sublevels
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)
    rates = np.zeros((n, n))
    scatter = np.zeros(n)
    cache = {}
    for beam in setup.beams:
        upper = atom.level(beam.upper)
        if upper.perturbative:
            raise UnsupportedConfiguration(
                f"{beam.name}: {beam.upper} is only available for perturbative estimates"
            )
        if not atom.level(beam.lower).metastable:
            raise UnsupportedConfiguration(f"{beam.name}: lower level must be S1/2 or D3/2")
        excited = sublevels_of(upper)
        if beam.upper not in cache:
            cache[beam.upper] = _decay_table(atom, excited, states)
        decay = cache[beam.upper]
        gamma = upper.gamma
        a_ref = max_amplitude(atom, beam.lower, beam.F, beam.upper, beam.Fp)
        if a_ref == 0.0:
            raise PumpingConfigError(f"{beam.name}: target line is dipole-forbidden")
        line = _line_reference(atom, beam)
        weights = beam.intensity_weights()
        tones = beam.tones()
        for g in states:
            if g.level != beam.lower:
                continue
            gi = idx[g]
            eg = atom.energy(g)
            for ei, e in enumerate(excited):
                q = int(round(e.mF - g.mF))
                if abs(q) > 1 or weights[q] == 0.0:
                    continue
                amp = dipole_amplitude(atom, e, g, q)
                if amp == 0.0:
                    continue
                transition = atom.energy(e) - eg
                rel = (amp / a_ref) ** 2 * weights[q]
                total = 0.0
                for offset, a in tones:
                    delta = line + beam.detuning + offset - transition
                    if max_detuning is not None and abs(delta) > max_detuning:
                        continue
                    om2 = beam.rabi**2 * a**2 * rel
                    total += gamma * (om2 / 4) / (delta**2 + gamma**2 / 4)
                if total == 0.0:
                    continue
                scatter[gi] += total
                rates[:, gi] += total * decay[ei]
    return RateMatrix(rates, setup.collection_efficiency * scatter, states)


def _amp_scale(atom: AtomModel, upper: str) -> float:
    """Absolute D3/2 coupling of ``upper`` relative to P1/2.

    Uses |<J'||d||J>|^2 / (2J'+1) proportional to Gamma * fraction / omega^3.
    """

    def strength(label):
        lv = atom.level(label)
        d = atom.level("D3/2")
        omega = TWO_PI * (lv.offset_thz - d.offset_thz) * 1e12
        return lv.gamma * lv.decay_fractions.get("D3/2", 0.0) / omega**3

    return math.sqrt(strength(upper) / strength("P1/2"))


def two_photon_rabi(
    atom: AtomModel, pair: RamanPairConfig, a: Sublevel, b: Sublevel, via: str = "P1/2"
) -> float:
    """Effective Rabi rate coupling a=|F,m-1> to b=|F,m> through ``via``.

    a absorbs from the sigma+ beam, b is reached by emission into the pi beam.
    """
    up = atom.level(via)
    a_ref = max_amplitude(atom, "D3/2", None, "P1/2", None)
    scale = _amp_scale(atom, via) if via != "P1/2" else 1.0
    w_sig = pair.sigma_beam.intensity_weights()[1]
    w_pi = pair.pi_beam.intensity_weights()[0]
    pol_fac = math.sqrt(w_sig * w_pi)
    if pol_fac == 0.0:
        return 0.0
    p12, d32 = atom.level("P1/2"), atom.level("D3/2")
    centroid = TWO_PI * (p12.offset_thz - d32.offset_thz) * 1e12
    omega_pi = centroid + pair.detuning
    total = 0.0
    for e in sublevels_of(up):
        if e.mF != b.mF:
            continue
        a1 = dipole_amplitude(atom, e, a, 1)
        a2 = dipole_amplitude(atom, e, b, 0)
        if a1 == 0.0 or a2 == 0.0:
            continue
        om1 = pair.sigma_beam.rabi * scale * a1 / a_ref
        om2 = pair.pi_beam.rabi * scale * a2 / a_ref
        delta_e = omega_pi - (atom.energy(e) - atom.energy(b))
        total += om1 * om2 / (2 * delta_e)
    return abs(total) * pol_fac


def raman_pairs_in(atom: AtomModel) -> list:
    """All (|F,m-1>, |F,m>) sublevel pairs of D3/2."""
    out = []
    d32 = atom.level("D3/2")
    for F in d32.f_values:
        n = int(round(2 * F))
        for k in range(n):
            m = -F + k + 1
            out.append((Sublevel("D3/2", F, m - 1), Sublevel("D3/2", F, m)))
    return out


def raman_pair_detuning(atom: AtomModel, pair: RamanPairConfig, a: Sublevel, b: Sublevel) -> float:
    return pair.two_photon - (atom.energy(b) - atom.energy(a))


def raman_exchange_rates(setup: DetectionSetup, pair: RamanPairConfig) -> RateMatrix:
    """Symmetric exchange k = Omega_eff/2 * L(delta) for each D3/2 pair."""
    atom = setup.atom
    pair.validate(atom)
    states = atom.ground_sublevels
    idx = {s: i for i, s in enumerate(states)}
    rates = np.zeros((len(states), len(states)))
    for a, b in raman_pairs_in(atom):
        om = two_photon_rabi(atom, pair, a, b)
        if om == 0.0:
            continue
        delta = raman_pair_detuning(atom, pair, a, b)
        hw = om / 2
        k = hw * hw**2 / (delta**2 + hw**2)
        rates[idx[b], idx[a]] += k
        rates[idx[a], idx[b]] += k
    return RateMatrix(rates, np.zeros(len(states)), states)


def rate_matrix(setup: DetectionSetup, max_detuning: float | None = None) -> RateMatrix:
    """Full generator: optical pumping plus every Raman pair."""
    R = scattering_rate_matrix(setup, max_detuning)
    for pair in setup.raman_pairs:
        R = R + raman_exchange_rates(setup, pair)
    return R


def raman_via_p32_estimate(setup: DetectionSetup, pair: RamanPairConfig) -> float:
    """Two-photon Rabi rate |3,2> <-> |3,3> through P3/2 (rad/s). Diagnostic only."""
    atom = setup.atom
    if not atom.has_level("P3/2"):
        raise PumpingConfigError("atom model carries no P3/2 parameters")
    a, b = Sublevel("D3/2", 3, 2), Sublevel("D3/2", 3, 3)
    return two_photon_rabi(atom, pair, a, b, via="P3/2")


def p32_scattering_rate(setup: DetectionSetup, s: Sublevel) -> float:
    """Spontaneous scattering out of ``s`` via P3/2 from all 650 nm light (1/s)."""
    atom = setup.atom
    up = atom.level("P3/2")
    scale = _amp_scale(atom, "P3/2")
    a_ref = max_amplitude(atom, "D3/2", None, "P1/2", None)
    d32, p12 = atom.level("D3/2"), atom.level("P1/2")
    centroid12 = TWO_PI * (p12.offset_thz - d32.offset_thz) * 1e12
    fields = []
    for beam in setup.beams:
        if beam.lower == "D3/2":
            for off, amp in beam.tones():
                fields.append((beam, _line_reference(setup.atom, beam) + beam.detuning + off, amp))
    for pair in setup.raman_pairs:
        fields.append((pair.pi_beam, centroid12 + pair.detuning, 1.0))
        fields.append((pair.sigma_beam, centroid12 + pair.detuning + pair.two_photon, 1.0))
    rate = 0.0
    for beam, omega, amp in fields:
        w = beam.intensity_weights()
        for e in sublevels_of(up):
            q = int(round(e.mF - s.mF))
            if abs(q) > 1 or w[q] == 0.0:
                continue
            d = dipole_amplitude(atom, e, s, q)
            om2 = (beam.rabi * amp * scale * d / a_ref) ** 2 * w[q]
            delta = omega - (atom.energy(e) - atom.energy(s))
            rate += up.gamma * (om2 / 4) / (delta**2 + up.gamma**2 / 4)
    return rate


# ---------------------------------------------------------------------------
# dynamics


def evolve_populations(R: RateMatrix, p0, t: float) -> np.ndarray:
    """Populations after time t, exp(R t) p0."""
    if t < 0:
        raise ValueError("evolution time must be >= 0")
    p0 = np.asarray(p0, dtype=float)
    if np.any(p0 < 0) or abs(p0.sum() - 1) > 1e-9:
        raise ValueError("p0 must be a probability vector")
    if t == 0:
        return p0.copy()
    p = expm(R.rates * t) @ p0
    if not (np.all(np.isfinite(p)) and p.min() > -1e-12 and abs(p.sum() - 1) < 1e-9):
        p = _integrate(R.rates, p0, t)
    p = np.where(p < -1e-12, 0.0, np.clip(p, 0.0, None))
    return p / p.sum()


def _integrate(A: np.ndarray, p0: np.ndarray, t: float) -> np.ndarray:
    sol = solve_ivp(
        lambda _t, y: A @ y, (0.0, t), p0, method="BDF", jac=A, rtol=1e-9, atol=1e-14
    )
    return sol.y[:, -1]


def find_dark_states(R: RateMatrix, threshold: float = DARK_THRESHOLD) -> frozenset:
    """States whose total outflow rate is below ``threshold`` (1/s)."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    out = R.outflow
    return frozenset(s for s, r in zip(R.states, out) if r < threshold)


def depump_timescale(R: RateMatrix, s: Sublevel, target: Iterable[Sublevel] | None = None) -> float:
    """Time constant for leaving ``s`` (no target) or filling ``target``.

    With a target set the target is made absorbing, the evolution starts from
    the quasi-stationary distribution on the complement, and 1 - P_target(t)
    is fitted to exp(-t/tau) over [0, 5 tau], refining tau until it settles.
    Returns ``math.inf`` when nothing ever leaves.
    """
    if target is None:
        out = R.outflow[R.index(s)]
        return math.inf if out <= 0 else 1.0 / out
    tset = set(target)
    if s in tset:
        raise ValueError("start state lies inside the target set")
    comp = [i for i, x in enumerate(R.states) if x not in tset]
    tidx = [i for i, x in enumerate(R.states) if x in tset]
    A = R.rates.copy()
    A[:, tidx] = 0.0  # target absorbing
    Q = A[np.ix_(comp, comp)]
    w, v = np.linalg.eig(Q)
    k = int(np.argmax(w.real))
    lam = w[k].real
    if lam >= -1e-300 or not np.isfinite(lam):
        return math.inf
    qsd = np.abs(v[:, k].real)
    if qsd.sum() == 0:
        return math.inf
    p0 = np.zeros(len(R.states))
    p0[comp] = qsd / qsd.sum()

    tau = -1.0 / lam
    for _ in range(6):
        ts = np.linspace(0.0, 5 * tau, 51)
        step = expm(A * (ts[1] - ts[0]))
        p = p0.copy()
        surv = [1.0]
        for _t in ts[1:]:
            p = step @ p
            surv.append(max(1.0 - p[tidx].sum(), 1e-300))
        y = np.log(np.asarray(surv))
        slope, _ = np.polyfit(ts, y, 1)
        if slope >= 0:
            return math.inf
        new_tau = -1.0 / slope
        if abs(new_tau - tau) < 1e-3 * tau:
            return new_tau
        tau = new_tau
    return tau


def uniform_ground(atom: AtomModel) -> np.ndarray:
    n = len(atom.ground_sublevels)
    return np.full(n, 1.0 / n)


DARK_PREP_BEAMS = ("D1", "D2", "D3", "D4", "D5")
BRIGHT_PREP_BEAMS = ("D3", "D4", "D5", "D6")
MODULATED_BEAMS = ("D1", "D2")


def prep_setup(setup: DetectionSetup, variant: str) -> DetectionSetup:
    """Beam configuration used to prepare the dark or bright state."""
    if variant == "dark":
        off, amp = setup.pump_modulation
        beams = []
        for name in DARK_PREP_BEAMS:
            b = setup.beam(name)
            beams.append(b.with_tones(off, amp) if name in MODULATED_BEAMS else b)
    elif variant == "bright":
        beams = [setup.beam(name) for name in BRIGHT_PREP_BEAMS]
    else:
        raise ValueError(f"unknown preparation variant {variant!r}")
    return setup.with_beams(beams)


def optical_pump_prepare(setup: DetectionSetup, variant: str, duration: float = 1e-3, p0=None) -> np.ndarray:
    """Populations after optical pumping for ``duration`` from ``p0`` (uniform by default)."""
    ps = prep_setup(setup, variant)
    if p0 is None:
        p0 = uniform_ground(setup.atom)
    return evolve_populations(rate_matrix(ps), p0, duration)


# ---------------------------------------------------------------------------
# shipped calibration

def _pol(sigma_minus=0.0, pi=0.0, sigma_plus=0.0) -> tuple:
    return (sigma_minus, pi, sigma_plus)


S_HYPERFINE_HZ = 8.036e9


def default_setup(b_field: float | None = None) -> DetectionSetup:
    """The shipped detection configuration (D1-D5 + Raman pair, D6 auxiliary).

    Beam powers are not published, so the Rabi rates here are a calibration:
    they put the bright-state count near 8.7 per ms, clear |F''=3, m<3> in a
    few tens of microseconds and give a ~0.5 MHz Raman coupling.
    """
    atom = build_ba137() if b_field is None else build_ba137({"b_field": b_field})
    s = math.sqrt(0.5)
    sideband = ((TWO_PI * S_HYPERFINE_HZ, 1.0),)
    cool = dict(lower="S1/2", F=2, upper="P1/2", Fp=1, rabi=TWO_PI * CAL["s_rabi_hz"],
                detuning=TWO_PI * CAL["s_detuning_hz"], sidebands=sideband)
    rep = dict(lower="D3/2", upper="P1/2", Fp=1, polarization=_pol(pi=1.0), rabi=TWO_PI * CAL["d_rabi_hz"])
    beams = (
        BeamConfig(name="D1", polarization=_pol(sigma_plus=1.0), **cool),
        BeamConfig(name="D2", polarization=_pol(sigma_minus=1.0), **cool),
        BeamConfig(name="D3", F=2, **rep),
        BeamConfig(name="D4", F=1, **rep),
        BeamConfig(name="D5", F=0, **rep),
    )
    d6 = BeamConfig(
        name="D6", lower="D3/2", F=3, upper="P1/2", Fp=2,
        polarization=_pol(sigma_minus=s, sigma_plus=s), rabi=TWO_PI * CAL["d6_rabi_hz"],
    )
    raman_beam = dict(lower="D3/2", F=None, upper="P1/2", Fp=None, rabi=TWO_PI * CAL["raman_rabi_hz"])
    d32 = atom.level("D3/2")
    zeeman_step = lande_gF(d32, 1) * MU_B_OVER_HBAR * atom.b_field
    pair = RamanPairConfig(
        pi_beam=BeamConfig(name="R1", polarization=_pol(pi=1.0), **raman_beam),
        sigma_beam=BeamConfig(name="R2", polarization=_pol(sigma_plus=1.0), **raman_beam),
        detuning=TWO_PI * CAL["raman_detuning_hz"],
        two_photon=zeeman_step,
    )
    return DetectionSetup(
        atom=atom,
        beams=beams,
        raman_pairs=(pair,),
        collection_efficiency=CAL["collection_efficiency"],
        background_rate=CAL["background_rate"],
        duration=1e-3,
        aux_beams=(d6,),
    )


CAL = {
    "s_rabi_hz": 10e6,
    "s_detuning_hz": -10e6,
    "d_rabi_hz": 10e6,
    "d6_rabi_hz": 10e6,
    "raman_rabi_hz": 1.295e9,
    "raman_detuning_hz": -1e12,
    "collection_efficiency": 1.951e-3,
    "background_rate": 440.0,
}


# ---------------------------------------------------------------------------
# detection Monte Carlo


def event_seeds(seed: int, n: int, start: int = 0) -> np.ndarray:
    """Per-event 32-bit seeds derived from (seed, event index)."""
    return np.array(
        [np.random.SeedSequence([seed, i]).generate_state(1)[0] for i in range(start, start + n)],
        dtype=np.uint32,
    )


def _kernel_inputs(R: RateMatrix, p0):
    p0 = np.asarray(p0, dtype=float)
    if np.any(p0 < -1e-12) or abs(p0.sum() - 1) > 1e-9:
        raise ValueError("p0 must be a probability vector")
    p0 = np.clip(p0, 0, None)
    out = R.outflow.copy()
    jumps = np.array(R.rates, dtype=float, copy=True)
    np.fill_diagonal(jumps, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(out > 0, jumps / out, 0.0).T  # row i: destinations from i
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = np.where(out > 0, 1.0, cdf[:, -1])
    return np.cumsum(p0 / p0.sum()), out, np.ascontiguousarray(cdf), R.emission.copy()


def simulate_detection_batch(
    setup: DetectionSetup, p0, n_events: int, seed: int, R: RateMatrix | None = None
) -> np.ndarray:
    """Detected counts for ``n_events`` independent windows of ``setup.duration``.

    Event i uses a generator seeded from (seed, i) only, so any subset or
    reordering of events reproduces the same counts.
    """
    from ._ssa import run_events

    if n_events < 1:
        raise ValueError("need at least one event")
    if R is None:
        R = rate_matrix(setup)
    p0_cdf, out, cdf, emission = _kernel_inputs(R, p0)
    seeds = event_seeds(seed, n_events)
    bg = setup.background_rate * setup.duration
    return run_events(seeds, p0_cdf, out, cdf, emission, float(setup.duration), float(bg))


def simulate_detection(setup: DetectionSetup, p0, seed: int, R: RateMatrix | None = None) -> int:
    """Detected photon count in one window; equals event 0 of a batch with ``seed``."""
    return int(simulate_detection_batch(setup, p0, 1, seed, R)[0])


def count_histogram(counts) -> dict:
    """Counts -> {n: frequency} over 0..max(n), zero bins included."""
    counts = np.asarray(counts, dtype=np.int64)
    freq = np.bincount(counts)
    return {int(n): int(f) for n, f in enumerate(freq)}


# ---------------------------------------------------------------------------
# calibrated timescales


def with_extinction(setup: DetectionSetup, names: Iterable[str], db: float) -> DetectionSetup:
    names = set(names)
    beams = [replace(b, extinction_db=db) if b.name in names else b for b in setup.beams]
    return setup.with_beams(beams)


def calibration_timescales(setup: DetectionSetup, extinction_db: float = 30.0) -> dict:
    """Order-of-magnitude pumping figures of the detection configuration.

    clearing: fill time of everything outside |F''=3, m<3>;
    bright_to_dark: accumulation into |F''=3,+3> from the bright manifold;
    dark_depump: lifetime of |F''=3,+3> with the pi repumpers at ``extinction_db``;
    raman_max / raman_via_p32: largest in-manifold and the via-P3/2 two-photon rates (Hz).
    """
    R = rate_matrix(setup)
    dark = Sublevel("D3/2", 3, 3)
    f3 = [s for s in R.states if s.level == "D3/2" and s.F == 3 and s.mF < 3]
    rest = [s for s in R.states if s not in f3]
    out = {
        "clearing": depump_timescale(R, f3[0], rest),
        "bright_to_dark": depump_timescale(R, Sublevel("S1/2", 2, 0), [dark]),
        "dark_depump": depump_timescale(
            rate_matrix(with_extinction(setup, ("D3", "D4", "D5"), extinction_db)), dark
        ),
    }
    if setup.raman_pairs:
        pair = setup.raman_pairs[0]
        rates = [abs(two_photon_rabi(setup.atom, pair, a, b)) for a, b in raman_pairs_in(setup.atom)]
        out["raman_max"] = max(rates) / TWO_PI
        if setup.atom.has_level("P3/2"):
            out["raman_via_p32"] = abs(raman_via_p32_estimate(setup, pair)) / TWO_PI
    return out
