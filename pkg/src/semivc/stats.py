"""Speaker normalization statistics, F0 conversion, and mel-cepstral
distortion."""

from dataclasses import dataclass

import numpy as np

from .features import InputError

STD_FLOOR = 1e-6

# mean over frames of (10/ln10) * sqrt(2 * sum_d diff_d^2), d = 1..49
MCD_SCALE = 10.0 / np.log(10.0) * np.sqrt(2.0)


class StatisticsError(Exception):
    """Corpus insufficient for the requested statistics."""


@dataclass
class SpeakerStats:
    mcep_mean: np.ndarray   # 49
    mcep_std: np.ndarray    # 49, floored
    logf0_mean: float
    logf0_std: float

    def to_text(self):
        lines = ["mcep_mean " + " ".join("%.17g" % v for v in self.mcep_mean),
                 "mcep_std " + " ".join("%.17g" % v for v in self.mcep_std),
                 "logf0_mean %.17g" % self.logf0_mean,
                 "logf0_std %.17g" % self.logf0_std]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, rest = line.split(None, 1)
            fields[key] = np.array([float(v) for v in rest.split()])
        return cls(mcep_mean=fields["mcep_mean"], mcep_std=fields["mcep_std"],
                   logf0_mean=float(fields["logf0_mean"][0]),
                   logf0_std=float(fields["logf0_std"][0]))


def fit_stats(corpus):
    """Per-speaker moments: mcep over all frames, log-F0 over voiced frames.

    Population (1/N) variance convention; stds floored at STD_FLOOR.
    """
    if not corpus:
        raise StatisticsError("empty corpus")
    mcep = np.concatenate([fs.mcep for fs in corpus], axis=0)
    f0 = np.concatenate([fs.f0 for fs in corpus])
    voiced = f0[f0 > 0]
    if voiced.size == 0:
        raise StatisticsError("no voiced frames in corpus")
    logf0 = np.log(voiced)
    return SpeakerStats(
        mcep_mean=mcep.mean(axis=0),
        mcep_std=np.maximum(mcep.std(axis=0), STD_FLOOR),
        logf0_mean=float(logf0.mean()),
        logf0_std=float(max(logf0.std(), STD_FLOOR)),
    )


def normalize(fs, s):
    """Z-score the mcep tracks; c0, f0, ap untouched."""
    out = fs.copy()
    out.mcep = (fs.mcep - s.mcep_mean) / s.mcep_std
    return out


def denormalize(fs, s):
    out = fs.copy()
    out.mcep = fs.mcep * s.mcep_std + s.mcep_mean
    return out


def convert_f0(f0, src, tgt):
    """Log-Gaussian F0 transform; the unvoiced mask is preserved exactly."""
    f0 = np.asarray(f0, dtype=np.float64)
    out = np.zeros_like(f0)
    voiced = f0 > 0
    out[voiced] = np.exp((np.log(f0[voiced]) - src.logf0_mean) / src.logf0_std
                         * tgt.logf0_std + tgt.logf0_mean)
    return out


def mcd(a, b):
    """Mel-cepstral distortion in dB between two T×49 sequences."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise InputError("mcd shape mismatch: %s vs %s" % (a.shape, b.shape))
    per_frame = np.sqrt(((a - b) ** 2).sum(axis=1))
    return float(MCD_SCALE * per_frame.mean())


def corpus_mcd(pairs):
    """Frame-weighted mean MCD over (converted, reference) mcep pairs."""
    if not pairs:
        raise InputError("corpus_mcd requires at least one pair")
    total = 0.0
    frames = 0
    for a, b in pairs:
        a = np.atleast_2d(np.asarray(a))
        t = a.shape[0]
        total += mcd(a, b) * t
        frames += t
    return total / frames
