"""Audio ingest, per-frame acoustic feature extraction, and the feature
container file format.

Features per utterance: a T×49 mel-cepstral matrix (coefficients 1..49),
the zeroth cepstral coefficient kept as a separate energy track, an F0
contour in Hz (0 marks unvoiced frames), and a per-frame aperiodicity
scalar that is passed through the pipeline unmodified.
"""

import struct
from dataclasses import dataclass

import numpy as np
import scipy.fftpack
import scipy.io.wavfile

N_MCEP = 49  # converted coefficients; c0 stored separately

F0_MIN = 50.0
F0_MAX = 500.0
VOICING_THRESHOLD = 0.3

MAGIC = b"VCF1"


class FormatError(Exception):
    """Malformed or unsupported file contents."""


class InputError(Exception):
    """Precondition violation on an operation input."""


@dataclass
class AudioClip:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int


@dataclass
class FrameConfig:
    fft_size: int = 1024
    hop: float = 0.005  # seconds
    n_cepstra: int = 50  # includes c0
    mel_warp: float = 1.0
    n_mel_bands: int = 64

    def __post_init__(self):
        if self.fft_size <= 0 or (self.fft_size & (self.fft_size - 1)) != 0:
            raise ValueError("fft_size must be a power of two")
        if self.hop <= 0:
            raise ValueError("hop must be positive")

    def hop_samples(self, sample_rate):
        return int(round(self.hop * sample_rate))


@dataclass
class FeatureSequence:
    mcep: np.ndarray       # T×49
    c0: np.ndarray         # T
    f0: np.ndarray         # T, Hz; 0 = unvoiced
    ap: np.ndarray         # T, in [0, 1]
    frame_hop: float = 0.005

    def __post_init__(self):
        self.mcep = np.asarray(self.mcep, dtype=np.float64)
        self.c0 = np.asarray(self.c0, dtype=np.float64)
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.ap = np.asarray(self.ap, dtype=np.float64)
        T = self.mcep.shape[0]
        if T < 1:
            raise ValueError("feature sequence must have at least one frame")
        if self.mcep.ndim != 2 or self.mcep.shape[1] != N_MCEP:
            raise ValueError("mcep must be T×%d" % N_MCEP)
        for track in (self.c0, self.f0, self.ap):
            if track.shape != (T,):
                raise ValueError("all tracks must share length T")
        if not np.all(np.isfinite(self.mcep)):
            raise ValueError("mcep entries must be finite")
        if np.any(self.f0 < 0):
            raise ValueError("f0 must be nonnegative")

    @property
    def n_frames(self):
        return self.mcep.shape[0]

    def copy(self):
        return FeatureSequence(self.mcep.copy(), self.c0.copy(),
                               self.f0.copy(), self.ap.copy(), self.frame_hop)


def load_wav(path):
    """Read a PCM or float WAV; returns samples scaled to [-1, 1].

    Multichannel files keep the first channel only.
    """
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError("cannot parse WAV %r: %s" % (str(path), exc)) from exc
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise FormatError("unsupported WAV sample format %s" % data.dtype)
    samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate=int(rate))


def frame_count(n_samples, cfg, sample_rate):
    return (n_samples - cfg.fft_size) // cfg.hop_samples(sample_rate) + 1


def _frames(samples, cfg, sample_rate):
    hop = cfg.hop_samples(sample_rate)
    T = frame_count(len(samples), cfg, sample_rate)
    idx = np.arange(cfg.fft_size)[None, :] + hop * np.arange(T)[:, None]
    return samples[idx]


def _mel_filterbank(n_bands, fft_size, sample_rate):
    """Triangular mel filters over the rfft bins."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_bins = fft_size // 2 + 1
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_bands + 2)
    hz_pts = mel_to_hz(mel_pts)
    bins = hz_pts / (sample_rate / 2.0) * (n_bins - 1)
    fb = np.zeros((n_bands, n_bins))
    for i in range(n_bands):
        left, center, right = bins[i], bins[i + 1], bins[i + 2]
        k = np.arange(n_bins)
        up = (k - left) / max(center - left, 1e-9)
        down = (right - k) / max(right - center, 1e-9)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _autocorr_f0(frame, sample_rate):
    """Normalized-autocorrelation pitch for one frame; 0 if unvoiced."""
    frame = frame - frame.mean()
    energy = float(frame @ frame)
    if energy < 1e-10:
        return 0.0
    lag_min = int(sample_rate / F0_MAX)
    lag_max = min(int(sample_rate / F0_MIN), len(frame) - 1)
    n = len(frame)
    spec = np.fft.rfft(frame, 2 * n)
    ac = np.fft.irfft(spec * np.conj(spec))[:lag_max + 1]
    ac = ac / ac[0]
    seg = ac[lag_min:lag_max + 1]
    best = int(np.argmax(seg))
    if seg[best] < VOICING_THRESHOLD:
        return 0.0
    lag = lag_min + best
    # parabolic refinement around the peak
    if 0 < lag < lag_max:
        a, b, c = ac[lag - 1], ac[lag], ac[lag + 1]
        denom = a - 2 * b + c
        if abs(denom) > 1e-12:
            lag = lag + 0.5 * (a - c) / denom
    f0 = sample_rate / lag
    if f0 < F0_MIN or f0 > F0_MAX:
        return 0.0
    return float(f0)


def estimate_f0(clip, cfg):
    """Per-frame F0 in Hz; voiced frames in [F0_MIN, F0_MAX], unvoiced 0."""
    if clip.sample_rate != 16000:
        raise InputError("pipeline requires 16 kHz audio")
    if len(clip.samples) < cfg.fft_size:
        raise InputError("clip shorter than one analysis frame")
    frames = _frames(clip.samples, cfg, clip.sample_rate)
    return np.array([_autocorr_f0(f, clip.sample_rate) for f in frames])


def extract_features(clip, cfg=None):
    """Extract mel-cepstra, c0, F0, and the aperiodicity track.

    The spectral envelope is the Hann-windowed STFT magnitude smoothed
    through a mel filterbank; cepstra are the orthonormal DCT-II of the
    log mel spectrum truncated to cfg.n_cepstra coefficients.
    """
    cfg = cfg or FrameConfig()
    if clip.sample_rate != 16000:
        raise InputError("pipeline requires 16 kHz audio")
    if len(clip.samples) < cfg.fft_size:
        raise InputError("clip shorter than one analysis frame")

    frames = _frames(clip.samples, cfg, clip.sample_rate)
    window = np.hanning(cfg.fft_size)
    spec = np.abs(np.fft.rfft(frames * window, cfg.fft_size, axis=1))
    fb = _mel_filterbank(cfg.n_mel_bands, cfg.fft_size, clip.sample_rate)
    mel = spec ** 2 @ fb.T
    log_mel = np.log(np.maximum(mel, 1e-10))
    cep = scipy.fftpack.dct(log_mel, type=2, norm="ortho", axis=1)[:, :cfg.n_cepstra]

    f0 = estimate_f0(clip, cfg)
    ap = np.where(f0 > 0, 0.0, 1.0)
    return FeatureSequence(mcep=cep[:, 1:], c0=cep[:, 0], f0=f0, ap=ap,
                           frame_hop=cfg.hop)


# -- container format -------------------------------------------------------
#
# magic "VCF1" | u32 T | u32 n_mcep (=49) | u32 flags
# f32 mcep row-major (T×49) | f32 c0[T] | f32 f0[T] | f32 ap[T] | f64 frame_hop
# all little-endian.

def write_features(path, fs):
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<III", fs.n_frames, N_MCEP, 0)
    payload += fs.mcep.astype("<f4").tobytes()
    payload += fs.c0.astype("<f4").tobytes()
    payload += fs.f0.astype("<f4").tobytes()
    payload += fs.ap.astype("<f4").tobytes()
    payload += struct.pack("<d", fs.frame_hop)
    with open(path, "wb") as fh:
        fh.write(payload)


def read_features(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise FormatError("truncated header at byte %d" % len(data))
    if data[:4] != MAGIC:
        raise FormatError("bad magic at byte 0: %r" % data[:4])
    T, n_mcep, _flags = struct.unpack_from("<III", data, 4)
    if n_mcep != N_MCEP:
        raise FormatError("unexpected mcep width %d at byte 8" % n_mcep)
    off = 16
    need = 4 * T * n_mcep + 3 * 4 * T + 8
    if len(data) - off < need:
        raise FormatError("truncated payload at byte %d (need %d more)"
                          % (len(data), need - (len(data) - off)))
    mcep = np.frombuffer(data, "<f4", T * n_mcep, off).reshape(T, n_mcep)
    off += 4 * T * n_mcep
    c0 = np.frombuffer(data, "<f4", T, off)
    off += 4 * T
    f0 = np.frombuffer(data, "<f4", T, off)
    off += 4 * T
    ap = np.frombuffer(data, "<f4", T, off)
    off += 4 * T
    (frame_hop,) = struct.unpack_from("<d", data, off)
    return FeatureSequence(mcep=mcep.astype(np.float64), c0=c0.astype(np.float64),
                           f0=f0.astype(np.float64), ap=ap.astype(np.float64),
                           frame_hop=frame_hop)
