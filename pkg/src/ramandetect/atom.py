"""Level structure of 137Ba+ and the angular-momentum bookkeeping built on it.

Frequencies follow two conventions: level data (hyperfine constants, fine
structure offsets) are stored in the units spectroscopists quote them in
(MHz, THz), while every derived quantity handed to the dynamics code is an
angular frequency in rad/s.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from math import pi, sqrt
from typing import Iterable, Mapping

from scipy import constants as C

from .angular import wigner3j, wigner6j

TWO_PI = 2 * pi
MU_B_OVER_HBAR = C.physical_constants["Bohr magneton"][0] / C.hbar  # rad/s/T
G_S = 2.0

LEVEL_LABELS = ("S1/2", "P1/2", "D3/2", "P3/2")


class AtomConfigError(ValueError):
    """Invalid level data or atom overrides."""


def _half(x: float):
    """Canonical half-integer: int when integral, else float."""
    n2 = round(2 * x)
    if abs(2 * x - n2) > 1e-9:
        raise AtomConfigError(f"{x!r} is not a half-integer")
    return n2 // 2 if n2 % 2 == 0 else n2 / 2


def fmt_half(x) -> str:
    """Render a half-integer for tables: '2', '-1', '0.5'."""
    x = _half(x)
    return str(x) if isinstance(x, int) else f"{x:g}"


@dataclass(frozen=True)
class LevelSpec:
    label: str
    L: int
    J: float
    I: float
    A_mhz: float = 0.0
    B_mhz: float = 0.0
    offset_thz: float = 0.0
    gamma: float = 0.0  # natural linewidth, rad/s; 0 marks a metastable level
    decay_fractions: Mapping[str, float] = field(default_factory=dict)
    perturbative: bool = False  # kept out of the sublevel state space

    def __post_init__(self):
        if self.label not in LEVEL_LABELS:
            raise AtomConfigError(f"unknown level label {self.label!r}")
        if self.L < 0 or int(self.L) != self.L:
            raise AtomConfigError(f"{self.label}: L must be a nonnegative integer")
        J, I = _half(self.J), _half(self.I)
        if I < 0:
            raise AtomConfigError(f"{self.label}: nuclear spin must be >= 0")
        if abs(J - self.L) != 0.5:
            raise AtomConfigError(f"{self.label}: J={J} incompatible with L={self.L}, S=1/2")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "decay_fractions", dict(self.decay_fractions))
        if self.gamma < 0:
            raise AtomConfigError(f"{self.label}: negative linewidth")
        if self.L % 2 == 1:
            if self.gamma <= 0:
                raise AtomConfigError(f"{self.label}: P levels need gamma > 0")
            total = sum(self.decay_fractions.values())
            if abs(total - 1.0) > 1e-12 or any(v < 0 for v in self.decay_fractions.values()):
                raise AtomConfigError(
                    f"{self.label}: decay fractions must be >= 0 and sum to 1 (got {total!r})"
                )

    @property
    def metastable(self) -> bool:
        return self.gamma == 0

    @property
    def f_values(self) -> list:
        lo = abs(self.J - self.I)
        n = int(round(self.J + self.I - lo)) + 1
        return [_half(lo + k) for k in range(n)]

    @property
    def g_j(self) -> float:
        J, L, S = self.J, self.L, 0.5
        return 1.0 + (G_S - 1.0) * (J * (J + 1) + S * (S + 1) - L * (L + 1)) / (2 * J * (J + 1))

    def hyperfine_mhz(self, F) -> float:
        """Magnetic-dipole plus electric-quadrupole hyperfine shift of F."""
        J, I = self.J, self.I
        K = F * (F + 1) - I * (I + 1) - J * (J + 1)
        shift = 0.5 * self.A_mhz * K
        if self.B_mhz and I >= 1 and J >= 1:
            shift += self.B_mhz * (
                (0.75 * K * (K + 1) - I * (I + 1) * J * (J + 1))
                / (2 * I * (2 * I - 1) * J * (2 * J - 1))
            )
        return shift

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "L": self.L,
            "J": self.J,
            "I": self.I,
            "A_mhz": self.A_mhz,
            "B_mhz": self.B_mhz,
            "offset_thz": self.offset_thz,
            "gamma_hz": self.gamma / TWO_PI,
            "decay_fractions": dict(self.decay_fractions),
            "perturbative": self.perturbative,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LevelSpec":
        d = dict(d)
        gamma_hz = d.pop("gamma_hz", 0.0)
        try:
            return cls(gamma=TWO_PI * float(gamma_hz), **d)
        except TypeError as exc:
            raise AtomConfigError(str(exc)) from None


@dataclass(frozen=True, order=True)
class Sublevel:
    level: str
    F: float
    mF: float

    def __post_init__(self):
        object.__setattr__(self, "F", _half(self.F))
        object.__setattr__(self, "mF", _half(self.mF))
        if abs(self.mF) > self.F:
            raise AtomConfigError(f"|mF| > F in {self}")

    def __str__(self) -> str:
        return f"{self.level}|F={fmt_half(self.F)},m={fmt_half(self.mF)}>"


@dataclass(frozen=True)
class AtomModel:
    levels: tuple
    b_field: float = 5e-4  # tesla, along the quantization axis

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        labels = [lv.label for lv in self.levels]
        if len(set(labels)) != len(labels):
            raise AtomConfigError("duplicate level labels")
        if self.b_field < 0:
            raise AtomConfigError("magnetic field must be >= 0")

    def level(self, label: str) -> LevelSpec:
        for lv in self.levels:
            if lv.label == label:
                return lv
        raise KeyError(label)

    def has_level(self, label: str) -> bool:
        return any(lv.label == label for lv in self.levels)

    @cached_property
    def sublevels(self) -> tuple:
        """Dense enumeration of every non-perturbative sublevel."""
        out = []
        for lv in self.levels:
            if lv.perturbative:
                continue
            out.extend(sublevels_of(lv))
        return tuple(out)

    @cached_property
    def ground_sublevels(self) -> tuple:
        """Metastable manifold (S1/2 and D3/2) used as the rate-equation state space."""
        return tuple(s for s in self.sublevels if self.level(s.level).metastable)

    def index(self, s: Sublevel) -> int:
        return self._index[s]

    @cached_property
    def _index(self) -> dict:
        return {s: i for i, s in enumerate(self.ground_sublevels)}

    def with_field(self, b_field: float) -> "AtomModel":
        return replace(self, b_field=b_field)

    def energy(self, s: Sublevel) -> float:
        """Sublevel energy as an angular frequency relative to S1/2 centroid."""
        lv = self.level(s.level)
        return (
            TWO_PI * (lv.offset_thz * 1e12 + lv.hyperfine_mhz(s.F) * 1e6)
            + zeeman_shift(lv, s, self.b_field)
        )

    def hyperfine_splitting_hz(self, label: str, F_hi, F_lo) -> float:
        lv = self.level(label)
        return (lv.hyperfine_mhz(F_hi) - lv.hyperfine_mhz(F_lo)) * 1e6

    def line_frequency(self, lower: str, F, upper: str, Fp) -> float:
        """Zero-field angular frequency of the F -> F' hyperfine line."""
        lo, up = self.level(lower), self.level(upper)
        return TWO_PI * (
            (up.offset_thz - lo.offset_thz) * 1e12
            + (up.hyperfine_mhz(Fp) - lo.hyperfine_mhz(F)) * 1e6
        )

    def to_dict(self) -> dict:
        return {"b_field": self.b_field, "levels": [lv.to_dict() for lv in self.levels]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AtomModel":
        try:
            levels = [LevelSpec.from_dict(x) for x in d["levels"]]
        except (KeyError, TypeError) as exc:
            raise AtomConfigError(f"malformed atom document: {exc}") from None
        return cls(levels=levels, b_field=float(d.get("b_field", 5e-4)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AtomModel":
        return cls.from_dict(json.loads(text))


def sublevels_of(lv: LevelSpec) -> list:
    out = []
    for F in lv.f_values:
        n = int(round(2 * F)) + 1
        out.extend(Sublevel(lv.label, F, -F + k) for k in range(n))
    return out


def lande_gF(level: LevelSpec, F) -> float:
    """Hyperfine Lande factor from g_J, neglecting the nuclear moment."""
    if F == 0:
        return 0.0
    J, I = level.J, level.I
    return level.g_j * (F * (F + 1) + J * (J + 1) - I * (I + 1)) / (2 * F * (F + 1))


def zeeman_shift(level: LevelSpec, s: Sublevel, b_field: float) -> float:
    """Linear Zeeman shift g_F mu_B m_F B / hbar in rad/s."""
    if b_field < 0:
        raise AtomConfigError("magnetic field must be >= 0")
    if s.mF == 0:
        return 0.0
    return lande_gF(level, s.F) * MU_B_OVER_HBAR * s.mF * b_field


def _check_dipole_pair(atom: AtomModel, e: Sublevel, g: Sublevel):
    le, lg = atom.level(e.level), atom.level(g.level)
    if (le.L - lg.L) % 2 == 0:
        raise AtomConfigError(f"no E1 coupling between {le.label} and {lg.label} (same parity)")
    if le.gamma <= 0:
        raise AtomConfigError(f"{le.label} is not an excited level")
    return le, lg


def dipole_amplitude(atom: AtomModel, e: Sublevel, g: Sublevel, q: int) -> float:
    """Relative E1 amplitude <e| d_q |g> with m' = m + q.

    Normalised per (excited sublevel, lower fine-structure level): summing the
    squared amplitude over every lower sublevel and every q gives 1.
    """
    le, lg = _check_dipole_pair(atom, e, g)
    if e.mF != g.mF + q or abs(e.F - g.F) > 1:
        return 0.0
    Jp, Fp, J, F, I = le.J, e.F, lg.J, g.F, le.I
    three_j = wigner3j(Fp, 1, F, -e.mF, q, g.mF)
    if three_j == 0.0:
        return 0.0
    six_j = wigner6j(Jp, Fp, I, F, J, 1)
    phase = (-1) ** int(round(Fp - e.mF + Jp + I + F + 1))
    return phase * sqrt((2 * F + 1) * (2 * Fp + 1) * (2 * Jp + 1)) * three_j * six_j


def branching_ratio(atom: AtomModel, e: Sublevel, g: Sublevel) -> float:
    """Probability that a spontaneous decay from e populates g."""
    le, lg = atom.level(e.level), atom.level(g.level)
    frac = le.decay_fractions.get(lg.label, 0.0)
    if frac == 0.0 or (le.L - lg.L) % 2 == 0:
        return 0.0
    q = int(round(e.mF - g.mF))
    if abs(q) > 1:
        return 0.0
    return frac * dipole_amplitude(atom, e, g, q) ** 2


def max_amplitude(atom: AtomModel, lower: str, F, upper: str, Fp) -> float:
    """Largest |amplitude| on a hyperfine line (any F/F' when given as None)."""
    lo, up = atom.level(lower), atom.level(upper)
    best = 0.0
    for g in sublevels_of(lo):
        if F is not None and g.F != F:
            continue
        for e in sublevels_of(up):
            if Fp is not None and e.F != Fp:
                continue
            q = int(round(e.mF - g.mF))
            if abs(q) <= 1:
                best = max(best, abs(dipole_amplitude(atom, e, g, q)))
    return best


# Default constants. Hyperfine values are standard 137Ba+ spectroscopy numbers
# except A(S1/2), which is pinned to the 8.036 GHz splitting the detection
# sidebands are built around.
BA137_LEVELS = {
    "S1/2": dict(L=0, J=0.5, A_mhz=4018.0, offset_thz=0.0),
    "P1/2": dict(
        L=1, J=0.5, A_mhz=743.7, offset_thz=607.426, gamma=TWO_PI * 20.1e6,
        decay_fractions={"S1/2": 0.732, "D3/2": 0.268},
    ),
    "D3/2": dict(L=2, J=1.5, A_mhz=189.7288, B_mhz=44.5408, offset_thz=146.114),
    "P3/2": dict(
        L=1, J=1.5, A_mhz=127.2, B_mhz=92.5, offset_thz=657.426, gamma=TWO_PI * 25.4e6,
        decay_fractions={"S1/2": 0.741, "D3/2": 0.029, "D5/2": 0.230},
        perturbative=True,
    ),
}
BA137_SPIN = 1.5
DEFAULT_B_FIELD = 5e-4


def build_ba137(overrides: Mapping | None = None) -> AtomModel:
    """Default 137Ba+ model, optionally with constants replaced.

    ``overrides`` may contain ``b_field`` (T), ``nuclear_spin`` (applied to all
    levels) and ``levels``: a mapping from level label to a mapping of
    LevelSpec fields (``gamma_hz`` accepted in place of ``gamma``).
    """
    overrides = dict(overrides or {})
    unknown = set(overrides) - {"b_field", "nuclear_spin", "levels"}
    if unknown:
        raise AtomConfigError(f"unknown atom overrides: {sorted(unknown)}")
    spin = overrides.get("nuclear_spin", BA137_SPIN)
    level_over = overrides.get("levels", {}) or {}
    if not isinstance(level_over, Mapping):
        raise AtomConfigError("'levels' override must be a mapping")
    levels = []
    for label, base in BA137_LEVELS.items():
        kw = dict(base, label=label, I=spin)
        extra = dict(level_over.get(label, {}))
        if "gamma_hz" in extra:
            extra["gamma"] = TWO_PI * float(extra.pop("gamma_hz"))
        kw.update(extra)
        try:
            levels.append(LevelSpec(**kw))
        except TypeError as exc:
            raise AtomConfigError(str(exc)) from None
    return AtomModel(levels=levels, b_field=float(overrides.get("b_field", DEFAULT_B_FIELD)))


def sublevel_table(atom: AtomModel) -> list[dict]:
    """Rows of the ``atom dump`` table."""
    rows = []
    for s in atom.sublevels:
        lv = atom.level(s.level)
        rows.append(
            {
                "level": s.level,
                "F": fmt_half(s.F),
                "mF": fmt_half(s.mF),
                "energy_GHz": atom.energy(s) / TWO_PI / 1e9,
                "gF": lande_gF(lv, s.F),
            }
        )
    return rows


def levels_in(atom: AtomModel, labels: Iterable[str]) -> list:
    return [s for s in atom.sublevels if s.level in set(labels)]
