"""One-shot reproduction of the detection and shelving analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .atom import Sublevel, branching_ratio, lande_gF
from .config import ExperimentConfig, atomic_write, dumps
from .pumping import (
    RESONANT_WINDOW,
    calibration_timescales,
    find_dark_states,
    optical_pump_prepare,
    rate_matrix,
    simulate_detection_batch,
)
from .stats import (
    REFERENCE_MODEL,
    CountHistogram,
    bright_pmf,
    detection_fidelity,
    fit_histograms,
)
from .transfer import (
    TWO_PI,
    doppler_limit,
    first_minimum,
    fit_rabi,
    lamb_dicke,
    synthetic_curve,
    transfer_fidelity,
)

DEFAULT_SEED = 137
RABI_POINTS = 25
RABI_SPAN = 1e-6
RABI_SHOTS = 1000


def sub_seed(seed: int, k: int) -> int:
    """Independent 63-bit seed for pipeline stage k."""
    return int(np.random.SeedSequence([seed, 0x5EED, k]).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class Row:
    name: str
    value: object
    reference: object
    lo: float | None = None
    hi: float | None = None
    gated: bool = True

    def bounds(self, scale: float):
        if self.lo is None:
            return None
        if scale == 0:
            return self.reference, self.reference
        lo = self.reference - scale * (self.reference - self.lo)
        hi = self.hi if math.isinf(self.hi) else self.reference + scale * (self.hi - self.reference)
        return lo, hi

    def passed(self, scale: float) -> bool | None:
        if not self.gated:
            return None
        b = self.bounds(scale)
        if b is None:
            return self.value == self.reference
        return bool(b[0] <= self.value <= b[1])

    def to_dict(self, scale: float) -> dict:
        b = self.bounds(scale)
        return {
            "name": self.name,
            "value": self.value,
            "reference": self.reference,
            "bounds": None if b is None else [b[0], None if math.isinf(b[1]) else b[1]],
            "gated": self.gated,
            "pass": self.passed(scale),
        }


def _names(states) -> list:
    return sorted(str(s) for s in states)


def dark_state_sets(setup) -> dict:
    nr = setup.with_beams(setup.beams, raman=False)
    with_d6 = setup.with_beams(list(setup.beams) + [setup.beam("D6")])
    return {
        "full": find_dark_states(rate_matrix(setup)),
        "no_raman_resonant": find_dark_states(rate_matrix(nr, max_detuning=RESONANT_WINDOW)),
        "no_raman": find_dark_states(rate_matrix(nr)),
        "with_d6": find_dark_states(rate_matrix(with_d6)),
    }


def expected_no_raman(atom) -> frozenset:
    f3 = [s for s in atom.ground_sublevels if s.level == "D3/2" and s.F == 3]
    return frozenset(
        [Sublevel("D3/2", 1, 0), Sublevel("D3/2", 2, -2), Sublevel("D3/2", 2, 2), *f3]
    )


def reproduce(cfg: ExperimentConfig, seed: int, out_dir, tol_scale: float = 1.0, figures: bool = True) -> dict:
    """Run every stage, write tables/figures into ``out_dir`` and return the summary."""
    out = Path(out_dir)
    setup, atom, tcfg = cfg.setup, cfg.setup.atom, cfg.transfer
    rows: list[Row] = []

    # structure
    rows.append(Row("s_hyperfine_hz", atom.hyperfine_splitting_hz("S1/2", 2, 1), 8.036e9, 8.035e9, 8.037e9))
    rows.append(Row("p_hyperfine_hz", atom.hyperfine_splitting_hz("P1/2", 2, 1), 1.488e9, 1.483e9, 1.493e9))
    d5 = atom.line_frequency("D3/2", 0, "P1/2", 1) - atom.line_frequency("D3/2", 3, "P1/2", 2)
    rows.append(Row("d5_offset_from_f3_line_hz", abs(d5) / TWO_PI, 394e6, 384e6, 404e6))
    d32 = atom.level("D3/2")
    g = [lande_gF(d32, F) for F in d32.f_values if F > 0]  # g_F undefined at F = 0
    rows.append(Row("d32_gF_spread", max(g) - min(g), 0.0, 0.0, 1e-12))
    br = branching_ratio(atom, Sublevel("P1/2", 2, 2), Sublevel("D3/2", 3, 3))
    rows.append(Row("branching_p2_to_d33", br, 0.125, 0.1, 0.15))

    # pumping
    sets = dark_state_sets(setup)
    rows.append(Row("dark_set_full", _names(sets["full"]), _names([Sublevel("D3/2", 3, 3)])))
    rows.append(Row("dark_set_no_raman_resonant", _names(sets["no_raman_resonant"]), _names(expected_no_raman(atom))))
    rows.append(Row("dark_set_with_d6", _names(sets["with_d6"]), []))
    rows.append(Row("dark_set_no_raman_all_terms", _names(sets["no_raman"]), None, gated=False))
    ts = calibration_timescales(setup)
    rows.append(Row("clearing_time_s", ts["clearing"], 3e-5, 1e-5, 1e-4))
    rows.append(Row("dark_depump_30db_s", ts["dark_depump"], 25e-3, 10e-3, 60e-3))
    rows.append(Row("bright_to_dark_s", ts["bright_to_dark"], 9e-3, gated=False))
    rows.append(Row("raman_via_p32_hz", ts["raman_via_p32"], 5e3, 0.0, 5e3))
    rows.append(Row("raman_ratio", ts["raman_max"] / ts["raman_via_p32"], 100.0, 100.0, math.inf))

    # detection Monte Carlo and fit
    R = rate_matrix(setup)
    p_bright = optical_pump_prepare(setup, "bright")
    p_dark = optical_pump_prepare(setup, "dark")
    rows.append(Row("dark_prep_population", float(p_dark[R.index(Sublevel("D3/2", 3, 3))]), 1.0, 0.95, 1.0))
    counts_b = simulate_detection_batch(setup, p_bright, 10_000, sub_seed(seed, 0), R)
    counts_d = simulate_detection_batch(setup, p_dark, 10_000, sub_seed(seed, 1), R)
    hb, hd = CountHistogram.from_counts(counts_b), CountHistogram.from_counts(counts_d)
    atomic_write(out / "bright_histogram.csv", hb.to_csv())
    atomic_write(out / "dark_histogram.csv", hd.to_csv())
    fit = fit_histograms(hb, hd, setup.duration)
    atomic_write(out / "fit.json", dumps(fit.to_dict()))
    m = fit.model
    rows.append(Row("sim_fit_nbar_bright", m.nbar_bright, 8.7, 8.4, 9.0))
    rows.append(Row("sim_fit_nbar_dark", m.nbar_dark, 0.44, 0.39, 0.49))
    rows.append(Row("sim_fit_tau_bright_s", m.tau_bright, 3.4e-3, gated=False))
    rows.append(Row("sim_fit_tau_dark_s", m.tau_dark, 5.8e-3, gated=False))
    rows.append(Row("sim_fit_chi2_reduced", fit.chi2_reduced, 0.91, gated=False))
    rows.append(Row("sim_fit_fidelity", detection_fidelity(m), 0.896, gated=False))

    # analytic statistics with the published parameters
    rows.append(Row("reference_model_p_bright_zero", bright_pmf(REFERENCE_MODEL, 0), 0.023, 0.021, 0.025))
    rows.append(Row("reference_model_fidelity", detection_fidelity(REFERENCE_MODEL), 0.896, 0.886, 0.906))

    # shelving transfer
    eta = lamb_dicke(tcfg)
    rows.append(Row("lamb_dicke_eta", eta, 0.044, 0.043, 0.045))
    rows.append(Row("doppler_ratio", doppler_limit(tcfg) / 14.0, 7.0, 5.0, 10.0))
    times = np.linspace(0, RABI_SPAN, RABI_POINTS)
    curve = synthetic_curve(tcfg, times, RABI_SHOTS, sub_seed(seed, 2))
    atomic_write(out / "rabi_curve.csv", curve.to_csv())
    rf = fit_rabi(curve, eta)
    atomic_write(out / "rabi_fit.json", dumps(rf.to_dict()))
    rows.append(Row("rabi_fit_nbar", rf.nbar, 14.0, 12.0, 16.0))
    rows.append(Row("rabi_fit_omega_hz", rf.rabi / TWO_PI, 2.60e6, 2.58e6, 2.62e6))
    t_min, p_min = first_minimum(tcfg)
    rows.append(Row("rabi_min_time_s", t_min, 2.0e-7, 1.8e-7, 2.2e-7))
    rows.append(Row("rabi_min_p_bright", p_min, 0.0, 0.0, 0.03))
    est = transfer_fidelity(tcfg, RABI_SHOTS, sub_seed(seed, 3), cfg.model)
    rows.append(Row("transfer_probability", est.p_transfer, 1.0, 0.97, 1.0))

    if figures:
        from .plotting import plot_histograms, plot_rabi

        plot_histograms(out / "histograms.png", hb, hd, m)
        plot_rabi(out / "rabi.png", curve, replace(tcfg, nbar=rf.nbar, rabi=rf.rabi), eta)

    results = [r.to_dict(tol_scale) for r in rows]
    summary = {
        "seed": seed,
        "tolerance_scale": tol_scale,
        "rows": results,
        "all_pass": all(r["pass"] is not False for r in results),
    }
    atomic_write(out / "summary.json", dumps(summary))
    return summary
