"""Semi-supervised shared-latent voice conversion model.

One encoder maps either speaker's (normalized) features to the parameters of
a per-frame Gaussian posterior over a shared latent sequence; two decoders
with identical architecture but independent parameters map latents back to
source and target features. Training maximizes a variational bound that sums
a paired term (both reconstructions), and unpaired source-only / target-only
terms in which the missing speaker's decoder receives no gradient. All losses
here are the negated bounds, with additive Gaussian constants dropped
uniformly so values are comparable across terms.
"""

from dataclasses import dataclass

import numpy as np

from . import align, serialize, stats
from .features import FeatureSequence, InputError, N_MCEP
from .graph import (AdamState, ParamSet, RngState, Tensor, affine, birnn,
                    gaussian_sample, init_gru_params, kl_to_standard_normal,
                    sgd_step)

CHECKPOINT_VERSION = 1
MAX_CHUNK_FRAMES = 600


class TrainingDivergedError(Exception):
    """Loss was non-finite for too many consecutive steps."""


@dataclass
class SsVcConfig:
    feature_dim: int = N_MCEP
    latent_dim: int = 16
    enc_widths: tuple = (32, 64)
    dec_widths: tuple = (64, 32)
    sigma2: float = 1e-3  # fixed decoder output variance, not learned

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")


@dataclass
class TrainConfig:
    method: str = "semi"          # semi | dblstm_vae | dblstm
    epochs: int = 20
    learning_rate: float = 1e-3
    patience: int = 0             # early stop on validation MCD; 0 disables
    min_steps: int = 0            # cycle batches until at least this many steps per epoch


class SsVcModel:
    """Encoder, posterior heads, and the two speaker decoders."""

    def __init__(self, config, seed=0):
        self.config = config
        rng = RngState(seed)
        F, L = config.feature_dim, config.latent_dim
        e1, e2 = config.enc_widths
        d1, d2 = config.dec_widths

        self.encoder = ParamSet()
        init_gru_params(self.encoder, "enc.l1", F, e1, rng)
        init_gru_params(self.encoder, "enc.l2", 2 * e1, e2, rng)
        self.encoder.add("head_mu.W", rng.normal((2 * e2, L)) / np.sqrt(2 * e2))
        self.encoder.add("head_mu.b", np.zeros(L))
        self.encoder.add("head_logvar.W", rng.normal((2 * e2, L)) / np.sqrt(2 * e2))
        self.encoder.add("head_logvar.b", np.zeros(L))

        self.decoder_x = self._make_decoder(rng)
        self.decoder_y = self._make_decoder(rng)

        self.params = ParamSet()
        self.params.merge(self.encoder, "encoder.")
        self.params.merge(self.decoder_x, "decoder_x.")
        self.params.merge(self.decoder_y, "decoder_y.")

    def _make_decoder(self, rng):
        L, F = self.config.latent_dim, self.config.feature_dim
        d1, d2 = self.config.dec_widths
        dec = ParamSet()
        init_gru_params(dec, "l1", L, d1, rng)
        init_gru_params(dec, "l2", 2 * d1, d2, rng)
        dec.add("out.W", rng.normal((2 * d2, F)) / np.sqrt(2 * d2))
        dec.add("out.b", np.zeros(F))
        return dec


def encode(model, features):
    """Posterior parameters (mu, log_var), each T×L, for either speaker."""
    x = features if isinstance(features, Tensor) else Tensor(np.atleast_2d(features))
    e1, e2 = model.config.enc_widths
    h = birnn(x, model.encoder, e1, "enc.l1")
    h = birnn(h, model.encoder, e2, "enc.l2")
    mu = affine(h, model.encoder["head_mu.W"], model.encoder["head_mu.b"])
    log_var = affine(h, model.encoder["head_logvar.W"], model.encoder["head_logvar.b"])
    return mu, log_var


def _decode(model, dec, z):
    z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(z))
    d1, d2 = model.config.dec_widths
    h = birnn(z, dec, d1, "l1")
    h = birnn(h, dec, d2, "l2")
    return affine(h, dec["out.W"], dec["out.b"])


def decode_x(model, z):
    return _decode(model, model.decoder_x, z)


def decode_y(model, z):
    return _decode(model, model.decoder_y, z)


def _sq_err(pred, target):
    return (pred - Tensor(target)).square().sum()


def loss_paired(model, x, y, rng):
    """Negated paired bound, estimated with two samples.

    One latent sample is drawn from the posterior given x and one from the
    posterior given y; each estimate carries both reconstruction terms scaled
    by 1/(2 sigma^2) plus the KL of the posterior it sampled from, and the
    two estimates are averaged.
    """
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    if x.shape[0] != y.shape[0]:
        raise InputError("paired sequences must have equal length")
    inv2s2 = 1.0 / (2.0 * model.config.sigma2)
    total = None
    for feats in (x, y):
        mu, log_var = encode(model, feats)
        z = gaussian_sample(mu, log_var, rng)
        recon = _sq_err(decode_x(model, z), x) + _sq_err(decode_y(model, z), y)
        est = recon * inv2s2 + kl_to_standard_normal(mu, log_var)
        total = est if total is None else total + est
    return total * 0.5


def loss_unpaired(model, features, which, rng):
    """Negated unpaired bound for a source-only or target-only utterance.

    Only the owning speaker's reconstruction appears, so the other decoder's
    parameters receive no gradient.
    """
    if which not in ("source", "target"):
        raise InputError("which must be 'source' or 'target'")
    features = np.atleast_2d(features)
    mu, log_var = encode(model, features)
    z = gaussian_sample(mu, log_var, rng)
    decode = decode_x if which == "source" else decode_y
    recon = _sq_err(decode(model, z), features)
    return recon * (1.0 / (2.0 * model.config.sigma2)) + kl_to_standard_normal(mu, log_var)


def loss_regression(model, x, y):
    """Plain supervised squared-error loss through the deterministic path
    (posterior mean, no sampling); used for the non-variational baseline."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    if x.shape[0] != y.shape[0]:
        raise InputError("paired sequences must have equal length")
    mu, _ = encode(model, x)
    return _sq_err(decode_y(model, mu), y)


# -- batching ---------------------------------------------------------------

@dataclass
class TrainingBatch:
    kind: str                      # paired | source_only | target_only
    x: FeatureSequence = None      # normalized
    y: FeatureSequence = None      # normalized; DTW-warped onto x when paired

    def __post_init__(self):
        if self.kind == "paired":
            if self.x is None or self.y is None:
                raise InputError("paired batch requires both x and y")
            if self.x.n_frames != self.y.n_frames:
                raise InputError("paired batch length mismatch")
        elif self.kind == "source_only":
            if self.x is None or self.y is not None:
                raise InputError("source_only batch carries x only")
        elif self.kind == "target_only":
            if self.y is None or self.x is not None:
                raise InputError("target_only batch carries y only")
        else:
            raise InputError("unknown batch kind %r" % self.kind)


def _chunk(fs, max_frames=MAX_CHUNK_FRAMES):
    if fs.n_frames <= max_frames:
        return [fs]
    out = []
    for start in range(0, fs.n_frames, max_frames):
        stop = min(start + max_frames, fs.n_frames)
        out.append(FeatureSequence(fs.mcep[start:stop], fs.c0[start:stop],
                                   fs.f0[start:stop], fs.ap[start:stop],
                                   fs.frame_hop))
    return out


def make_batches(paired=(), source_only=(), target_only=(),
                 max_frames=MAX_CHUNK_FRAMES):
    """Build TrainingBatch list from normalized sequences, chunking long
    utterances (bidirectional layers need whole chunks in memory)."""
    batches = []
    for x, y in paired:
        for cx, cy in zip(_chunk(x, max_frames), _chunk(y, max_frames)):
            t = min(cx.n_frames, cy.n_frames)
            if cx.n_frames != cy.n_frames:
                cx, cy = _chunk(cx, t)[0], _chunk(cy, t)[0]
            batches.append(TrainingBatch("paired", x=cx, y=cy))
    for x in source_only:
        for cx in _chunk(x, max_frames):
            batches.append(TrainingBatch("source_only", x=cx))
    for y in target_only:
        for cy in _chunk(y, max_frames):
            batches.append(TrainingBatch("target_only", y=cy))
    return batches


def batch_loss(model, batch, method, rng):
    if method == "dblstm":
        if batch.kind != "paired":
            raise InputError("regression baseline trains on paired data only")
        return loss_regression(model, batch.x.mcep, batch.y.mcep)
    if batch.kind == "paired":
        return loss_paired(model, batch.x.mcep, batch.y.mcep, rng)
    if batch.kind == "source_only":
        return loss_unpaired(model, batch.x.mcep, "source", rng)
    return loss_unpaired(model, batch.y.mcep, "target", rng)


def train(model, batches, config, rng, val_pairs=None, src_stats=None,
          tgt_stats=None, log_path=None):
    """Optimize the model on shuffled batches; returns the training log.

    The per-step loss is the dataset objective restricted to that step's
    batch. The supervised variational ablation is exactly this trainer with
    the unpaired batches dropped, so identical seeds give identical
    checkpoints. Validation MCD is computed at each epoch end when val_pairs
    and speaker stats are provided; early stopping restores the best
    parameters when patience is enabled.
    """
    if not batches:
        raise InputError("train requires at least one batch")
    batches = list(batches)
    if config.method in ("dblstm_vae", "dblstm"):
        batches = [b for b in batches if b.kind == "paired"]
        if not batches:
            raise InputError("method %r requires paired batches" % config.method)

    opt = AdamState(model.params)
    log = []
    step = 0
    nan_streak = 0
    best_val = np.inf
    best_state = None
    bad_epochs = 0

    for epoch in range(config.epochs):
        order = list(batches)
        rng.shuffle(order)
        if config.min_steps and len(order) < config.min_steps:
            reps = -(-config.min_steps // len(order))
            order = order * reps
        for batch in order:
            model.params.zero_grad()
            loss = batch_loss(model, batch, config.method, rng)
            value = loss.item()
            if not np.isfinite(value):
                nan_streak += 1
                if nan_streak >= 10:
                    raise TrainingDivergedError(
                        "loss non-finite for %d consecutive steps at step %d"
                        % (nan_streak, step))
                model.params.zero_grad()
                step += 1
                continue
            nan_streak = 0
            loss.backward()
            sgd_step(model.params, opt, config.learning_rate)
            step += 1
            log.append((step, batch.kind, value, ""))

        if val_pairs and src_stats is not None and tgt_stats is not None:
            val = evaluate_model(model, val_pairs, src_stats, tgt_stats)
            log.append((step, "validation", float("nan"), "%.6f" % val))
            if config.patience:
                if val < best_val - 1e-9:
                    best_val = val
                    best_state = model.params.state_dict()
                    bad_epochs = 0
                else:
                    bad_epochs += 1
                    if bad_epochs >= config.patience:
                        break

    if best_state is not None:
        model.params.load_state_dict(best_state)

    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write("step,term_kind,loss,val_mcd\n")
            for row in log:
                fh.write("%d,%s,%s,%s\n"
                         % (row[0], row[1],
                            "" if not np.isfinite(row[2]) and row[1] == "validation"
                            else "%.6f" % row[2], row[3]))
    return log


# -- conversion and evaluation ----------------------------------------------

@dataclass
class ConversionResult:
    mcep_hat: np.ndarray
    c0: np.ndarray
    f0_converted: np.ndarray
    ap: np.ndarray
    frame_hop: float = 0.005

    def to_feature_sequence(self):
        return FeatureSequence(mcep=self.mcep_hat, c0=self.c0,
                               f0=self.f0_converted, ap=self.ap,
                               frame_hop=self.frame_hop)


def convert(model, x, src_stats, tgt_stats):
    """Source features -> target-speaker features via the posterior mean.

    Deterministic: no latent sampling at conversion time. c0 and ap are
    copied from the source; F0 goes through the log-Gaussian transform.
    """
    normalized = stats.normalize(x, src_stats)
    mcep_chunks = []
    for chunk in _chunk(normalized):
        mu, _ = encode(model, chunk.mcep)
        mcep_chunks.append(decode_y(model, mu).values)
    mcep_hat = np.concatenate(mcep_chunks, axis=0) * tgt_stats.mcep_std + tgt_stats.mcep_mean
    return ConversionResult(
        mcep_hat=mcep_hat,
        c0=x.c0.copy(),
        f0_converted=stats.convert_f0(x.f0, src_stats, tgt_stats),
        ap=x.ap.copy(),
        frame_hop=x.frame_hop,
    )


def evaluate_model(model, pairs, src_stats, tgt_stats, use_dtw=True):
    """Frame-weighted test MCD of source->target conversion.

    Converted output lives on the source timeline; with use_dtw the output is
    aligned to the reference target before scoring (test pairs are unaligned
    in general).
    """
    scored = []
    for x, y in pairs:
        result = convert(model, x, src_stats, tgt_stats)
        if use_dtw:
            pair = align.align_pair(result.to_feature_sequence(), y)
            scored.append((pair.x.mcep, pair.y_warped.mcep))
        else:
            scored.append((result.mcep_hat, y.mcep))
    return stats.corpus_mcd(scored)


# -- checkpointing ----------------------------------------------------------

def save_checkpoint(path, model, src_stats=None, tgt_stats=None):
    entries = {
        "hyper.feature_dim": np.array([model.config.feature_dim], float),
        "hyper.latent_dim": np.array([model.config.latent_dim], float),
        "hyper.enc_widths": np.array(model.config.enc_widths, float),
        "hyper.dec_widths": np.array(model.config.dec_widths, float),
        "hyper.sigma2": np.array([model.config.sigma2], float),
    }
    if src_stats is not None and tgt_stats is not None:
        for tag, s in (("src", src_stats), ("tgt", tgt_stats)):
            entries["stats.%s.mcep_mean" % tag] = s.mcep_mean
            entries["stats.%s.mcep_std" % tag] = s.mcep_std
            entries["stats.%s.logf0" % tag] = np.array([s.logf0_mean, s.logf0_std])
    for name, values in model.params.state_dict().items():
        entries["param." + name] = values.astype(np.float32)
    serialize.write_keyed(path, entries, version=CHECKPOINT_VERSION)


def load_checkpoint(path):
    """Returns (model, src_stats, tgt_stats); stats are None if absent."""
    _, e = serialize.read_keyed(path, expect_version=CHECKPOINT_VERSION)
    config = SsVcConfig(
        feature_dim=int(e["hyper.feature_dim"][0]),
        latent_dim=int(e["hyper.latent_dim"][0]),
        enc_widths=tuple(int(v) for v in e["hyper.enc_widths"]),
        dec_widths=tuple(int(v) for v in e["hyper.dec_widths"]),
        sigma2=float(e["hyper.sigma2"][0]),
    )
    model = SsVcModel(config, seed=0)
    state = {name[len("param."):]: vals for name, vals in e.items()
             if name.startswith("param.")}
    model.params.load_state_dict(state)

    def read_stats(tag):
        key = "stats.%s.mcep_mean" % tag
        if key not in e:
            return None
        return stats.SpeakerStats(
            mcep_mean=e[key], mcep_std=e["stats.%s.mcep_std" % tag],
            logf0_mean=float(e["stats.%s.logf0" % tag][0]),
            logf0_std=float(e["stats.%s.logf0" % tag][1]))

    return model, read_stats("src"), read_stats("tgt")
