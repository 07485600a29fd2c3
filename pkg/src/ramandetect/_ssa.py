"""Compiled kernel for detection-window Gillespie runs.

Each event re-seeds numba's generator from its own seed so an event's count
depends only on (seed, event index), never on batch order.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _pick(cdf, u):
    i = np.searchsorted(cdf, u, side="right")
    return min(i, cdf.shape[0] - 1)


@njit(cache=True)
def run_events(seeds, p0_cdf, out_rate, jump_cdf, emission, duration, bg_mean):
    """Photon counts for one detection window per seed.

    jump_cdf[i] is the cumulative distribution of the destination given a
    jump out of state i; emission[i] the detected-photon rate in state i.
    Given the state path the detected count is Poisson with mean
    integral(emission) + background, drawn once per event.
    """
    n_ev = seeds.shape[0]
    counts = np.empty(n_ev, dtype=np.int64)
    for k in range(n_ev):
        np.random.seed(seeds[k])
        s = _pick(p0_cdf, np.random.random())
        t = 0.0
        lam = bg_mean
        while True:
            r = out_rate[s]
            dwell = -np.log(1.0 - np.random.random()) / r if r > 0.0 else duration
            if t + dwell >= duration:
                lam += emission[s] * (duration - t)
                break
            lam += emission[s] * dwell
            t += dwell
            s = _pick(jump_cdf[s], np.random.random())
        # a sum of conditionally independent Poisson dwell counts
        counts[k] = np.random.poisson(lam) if lam > 0.0 else 0
    return counts
