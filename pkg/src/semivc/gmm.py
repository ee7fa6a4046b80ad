"""Gaussian mixture voice conversion baseline.

The mixture over source frames is fit unsupervised with EM (diagonal
covariances). Conversion maps each frame through a posterior-weighted sum of
per-component affine regressions; the regression parameters are learned from
aligned pairs by linear least squares, since the mapping is linear in them.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import serialize, stats
from .features import FeatureSequence, InputError

VAR_FLOOR = 1e-6
EM_TOL_PER_FRAME = 1e-6
EM_MAX_ITER = 200
RIDGE = 1e-6
EM_FRAME_CAP = 100_000

CHECKPOINT_VERSION = 1


class DegenerateComponentError(Exception):
    """A mixture component lost all responsibility mass twice."""


@dataclass
class GmmVcModel:
    weights: np.ndarray    # K
    means: np.ndarray      # K×D
    variances: np.ndarray  # K×D, diagonal covariances
    conv_bias: np.ndarray  # K×D
    conv_mat: np.ndarray   # K×D×D

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]


def _log_gauss(frames, means, variances):
    """N×K matrix of diagonal-Gaussian log densities."""
    diff = frames[:, None, :] - means[None, :, :]
    return -0.5 * (np.log(2 * np.pi * variances).sum(axis=1)[None, :]
                   + (diff ** 2 / variances[None, :, :]).sum(axis=2))


def _log_joint(model, frames):
    return np.log(model.weights)[None, :] + _log_gauss(frames, model.means,
                                                       model.variances)


def log_likelihood(model, frames):
    return float(logsumexp(_log_joint(model, frames), axis=1).sum())


def _kmeanspp_init(frames, K, rng):
    """k-means++ seeding of component means."""
    n = len(frames)
    centers = [frames[rng.integers(0, n)]]
    for _ in range(1, K):
        d2 = np.min([((frames - c) ** 2).sum(axis=1) for c in centers], axis=0)
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers.append(frames[rng.choice(n, p=probs)])
    return np.array(centers)


def fit_gmm(frames, K, seed=0):
    """EM fit of a K-component diagonal GMM on N×D frames.

    Stops when the per-frame log-likelihood gain drops below EM_TOL_PER_FRAME
    or after EM_MAX_ITER iterations; the log-likelihood is checked to be
    non-decreasing every iteration. Conversion parameters come back
    zero-initialized.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise InputError("frames must be N×D")
    n, d = frames.shape
    if K < 1:
        raise InputError("K must be >= 1")
    if n < K:
        raise InputError("need at least K frames (%d < %d)" % (n, K))

    rng = np.random.default_rng(seed)
    if n > EM_FRAME_CAP:
        frames = frames[rng.choice(n, EM_FRAME_CAP, replace=False)]
        n = EM_FRAME_CAP

    global_var = np.maximum(frames.var(axis=0), VAR_FLOOR)
    model = GmmVcModel(
        weights=np.full(K, 1.0 / K),
        means=_kmeanspp_init(frames, K, rng),
        variances=np.tile(global_var, (K, 1)),
        conv_bias=np.zeros((K, d)),
        conv_mat=np.zeros((K, d, d)),
    )

    prev_ll = -np.inf
    reseeded = set()
    for _ in range(EM_MAX_ITER):
        lj = _log_joint(model, frames)
        norm = logsumexp(lj, axis=1)
        ll = float(norm.sum())
        if ll + 1e-9 * max(1.0, abs(ll)) < prev_ll:
            raise AssertionError("EM log-likelihood decreased: %g -> %g"
                                 % (prev_ll, ll))
        resp = np.exp(lj - norm[:, None])

        mass = resp.sum(axis=0)
        dead = np.where(mass < 1e-10)[0]
        if len(dead):
            for i in dead:
                if i in reseeded:
                    raise DegenerateComponentError(
                        "component %d lost all mass after reseeding" % i)
                reseeded.add(i)
                model.means[i] = frames[rng.integers(0, n)]
                model.variances[i] = global_var
                model.weights[i] = 1.0 / K
            model.weights = model.weights / model.weights.sum()
            prev_ll = -np.inf
            continue

        if ll - prev_ll < EM_TOL_PER_FRAME * n and np.isfinite(prev_ll):
            break
        prev_ll = ll

        model.weights = mass / n
        model.means = (resp.T @ frames) / mass[:, None]
        sq = resp.T @ (frames ** 2) / mass[:, None]
        model.variances = np.maximum(sq - model.means ** 2, VAR_FLOOR)
    return model


def posterior(model, x):
    """Responsibilities P(z = i | x) for one frame or a batch of frames.

    Computed in log space; each row sums to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    frames = x[None, :] if single else x
    lj = _log_joint(model, frames)
    resp = np.exp(lj - logsumexp(lj, axis=1)[:, None])
    return resp[0] if single else resp


def _regressors(model, frames):
    """Per-frame design rows for the conversion map.

    Row layout per component i: [p_i, p_i * Sigma_i^{-1}(x - mu_i)], so the
    map output is design @ stacked-parameters and the MSE fit is linear.
    """
    resp = posterior(model, frames)
    n, d = frames.shape
    K = model.n_components
    whitened = (frames[:, None, :] - model.means[None, :, :]) / model.variances[None, :, :]
    design = np.empty((n, K * (1 + d)))
    for i in range(K):
        design[:, i * (1 + d)] = resp[:, i]
        design[:, i * (1 + d) + 1:(i + 1) * (1 + d)] = resp[:, i, None] * whitened[:, i, :]
    return design


def fit_conversion(model, pairs):
    """Learn conversion bias/matrix parameters from aligned pairs by MSE.

    `pairs` yields (x_frames, y_frames) with matching lengths; frames are in
    the same space the mixture was fit on. Solved as ridge-regularized least
    squares on the stacked parameters.
    """
    xs, ys = [], []
    for x, y in pairs:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if x.shape != y.shape:
            raise InputError("aligned pair shape mismatch")
        xs.append(x)
        ys.append(y)
    if not xs:
        raise InputError("fit_conversion requires at least one aligned pair")
    X = np.concatenate(xs, axis=0)
    Y = np.concatenate(ys, axis=0)

    design = _regressors(model, X)
    gram = design.T @ design + RIDGE * np.eye(design.shape[1])
    coef = np.linalg.solve(gram, design.T @ Y)  # (K*(1+D)) × D

    d = model.dim
    K = model.n_components
    for i in range(K):
        block = coef[i * (1 + d):(i + 1) * (1 + d)]
        model.conv_bias[i] = block[0]
        model.conv_mat[i] = block[1:].T
    return model


def map_frames(model, frames):
    """Apply the learned per-component affine conversion to N×D frames."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    return _regressors(model, frames) @ _stacked_params(model)


def _stacked_params(model):
    d = model.dim
    K = model.n_components
    coef = np.empty((K * (1 + d), d))
    for i in range(K):
        coef[i * (1 + d)] = model.conv_bias[i]
        coef[i * (1 + d) + 1:(i + 1) * (1 + d)] = model.conv_mat[i].T
    return coef


def convert_gmm(model, x, src_stats=None, tgt_stats=None):
    """Convert a source FeatureSequence to target-speaker features.

    With speaker stats given, the mcep track is z-scored with source stats
    before mapping and denormalized with target stats after; F0 goes through
    the log-Gaussian transform. c0 and aperiodicity are copied unmodified.
    """
    if src_stats is not None:
        mcep_in = (x.mcep - src_stats.mcep_mean) / src_stats.mcep_std
    else:
        mcep_in = x.mcep
    mcep_out = map_frames(model, mcep_in)
    if tgt_stats is not None:
        mcep_out = mcep_out * tgt_stats.mcep_std + tgt_stats.mcep_mean
    if src_stats is not None and tgt_stats is not None:
        f0 = stats.convert_f0(x.f0, src_stats, tgt_stats)
    else:
        f0 = x.f0.copy()
    return FeatureSequence(mcep=mcep_out, c0=x.c0.copy(), f0=f0,
                           ap=x.ap.copy(), frame_hop=x.frame_hop)


def save_gmm(path, model):
    entries = {
        "weights": model.weights,
        "means": model.means,
        "variances": model.variances,
        "conv_bias": model.conv_bias,
        "conv_mat": model.conv_mat,
    }
    serialize.write_keyed(path, entries, version=CHECKPOINT_VERSION)


def load_gmm(path):
    _, e = serialize.read_keyed(path, expect_version=CHECKPOINT_VERSION)
    return GmmVcModel(weights=e["weights"], means=e["means"],
                      variances=e["variances"], conv_bias=e["conv_bias"],
                      conv_mat=e["conv_mat"])
