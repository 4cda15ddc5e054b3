"""Small compiled helpers shared by the simulators."""
import math

from numba import njit


@njit(cache=True, inline="always")
def interp(samples, period, x):
    # same arithmetic as env.eval_periodic for linear mode; branches instead of
    # integer modulo since r already lies in [0, period)
    n = samples.shape[0]
    r = x - period * math.floor(x / period)
    if r >= period:
        r = 0.0
    s = r * (n / period)
    i = int(s)
    w = s - i
    if i >= n:
        i -= n
    j = i + 1
    if j == n:
        j = 0
    left = samples[i]
    return left + w * (samples[j] - left)
