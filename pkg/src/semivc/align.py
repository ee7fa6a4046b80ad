"""Dynamic time warping and target-onto-source warping of utterance pairs."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .features import FeatureSequence, InputError


@dataclass
class WarpPath:
    """Monotone alignment path from (0,0) to (T_x-1, T_y-1).

    Each step advances the source index, the target index, or both by 1.
    """
    steps: list  # of (i, j) tuples

    def validate(self, t_x, t_y):
        if not self.steps:
            raise InputError("empty warp path")
        if self.steps[0] != (0, 0) or self.steps[-1] != (t_x - 1, t_y - 1):
            raise InputError("warp path must span (0,0)..(%d,%d)" % (t_x - 1, t_y - 1))
        for (i0, j0), (i1, j1) in zip(self.steps, self.steps[1:]):
            di, dj = i1 - i0, j1 - j0
            if (di, dj) not in ((1, 0), (0, 1), (1, 1)):
                raise InputError("invalid warp step (%d,%d)" % (di, dj))


@dataclass
class AlignedPair:
    x: FeatureSequence
    y_warped: FeatureSequence
    path: WarpPath


def dtw(x, y, return_cost=False, band_radius=None):
    """Minimum-cost alignment of two feature matrices.

    Local cost is squared Euclidean distance; allowed steps are (1,0),
    (0,1), (1,1). Backtrace ties prefer the diagonal predecessor, then the
    source advance, then the target advance. `band_radius`, when given,
    restricts |i - j| to a Sakoe-Chiba band (scaled for unequal lengths).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise InputError("dtw feature dimension mismatch: %d vs %d"
                         % (x.shape[1], y.shape[1]))
    t_x, t_y = x.shape[0], y.shape[0]
    local = cdist(x, y, "sqeuclidean")

    if band_radius is not None:
        ratio = t_y / t_x
        for i in range(t_x):
            center = i * ratio
            local[i, :max(0, int(center - band_radius))] = np.inf
            local[i, int(center + band_radius) + 1:] = np.inf

    acc = np.full((t_x + 1, t_y + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, t_x + 1):
        prev = acc[i - 1]
        cur = acc[i]
        row = local[i - 1]
        for j in range(1, t_y + 1):
            cur[j] = row[j - 1] + min(prev[j - 1], prev[j], cur[j - 1])

    # backtrace; candidates ordered by tie preference
    steps = []
    i, j = t_x, t_y
    while i > 1 or j > 1:
        steps.append((i - 1, j - 1))
        best = min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
        if acc[i - 1, j - 1] == best:
            i, j = i - 1, j - 1
        elif acc[i - 1, j] == best:
            i = i - 1
        else:
            j = j - 1
    steps.append((0, 0))
    steps.reverse()
    path = WarpPath(steps)
    if return_cost:
        return path, float(acc[t_x, t_y])
    return path


def dtw_cost(x, y, band_radius=None):
    _, cost = dtw(x, y, return_cost=True, band_radius=band_radius)
    return cost


def warp_target(x, y, path):
    """Warp y onto the timeline of x along `path`.

    For each source index i, the warped frame is the target frame of the
    first path step visiting i (the smallest j). All tracks are warped
    consistently.
    """
    path.validate(x.n_frames, y.n_frames)
    pick = np.full(x.n_frames, -1, dtype=int)
    for i, j in path.steps:
        if pick[i] < 0:
            pick[i] = j
    y_warped = FeatureSequence(mcep=y.mcep[pick], c0=y.c0[pick],
                               f0=y.f0[pick], ap=y.ap[pick],
                               frame_hop=y.frame_hop)
    return AlignedPair(x=x, y_warped=y_warped, path=path)


def align_pair(x, y, x_cost=None, y_cost=None, band_radius=None):
    """DTW on cost features (default: raw mcep) then warp y onto x."""
    cx = x.mcep if x_cost is None else x_cost
    cy = y.mcep if y_cost is None else y_cost
    path = dtw(cx, cy, band_radius=band_radius)
    return warp_target(x, y, path)
