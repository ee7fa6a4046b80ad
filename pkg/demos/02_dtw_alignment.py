"""Dynamic time warping on sequences spoken at different speeds.

Takes a smooth trajectory, replays it slower, and shows that DTW recovers
the correspondence so the warped target matches the source frame count.
"""

import numpy as np

from semivc.align import align_pair, dtw, dtw_cost
from semivc.features import FeatureSequence

gen = np.random.default_rng(0)


def trajectory(n):
    phase = np.linspace(0, 2 * np.pi, n)
    base = np.stack([np.sin(phase), np.cos(2 * phase)], axis=1)
    return base @ gen.standard_normal((2, 49)) * 0.5


fast = trajectory(40)
slow = trajectory(65)  # same content, stretched in time

path, cost = dtw(fast, slow, return_cost=True)
print("path length %d, total cost %.3f" % (len(path.steps), cost))
print("cost vs a random partner of the same length: %.3f"
      % dtw_cost(fast, gen.standard_normal((65, 49))))


def wrap(mcep):
    T = mcep.shape[0]
    return FeatureSequence(mcep=mcep, c0=np.zeros(T),
                           f0=np.full(T, 120.0), ap=np.zeros(T))


pair = align_pair(wrap(fast), wrap(slow))
aligned_err = np.abs(pair.x.mcep - pair.y_warped.mcep).mean()
naive_err = np.abs(fast - slow[:40]).mean()
print("aligned pair: %d frames each" % pair.x.n_frames)
print("mean |difference|: %.3f warped vs %.3f naive truncation"
      % (aligned_err, naive_err))
