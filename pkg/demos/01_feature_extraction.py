"""Walk through the feature pipeline on a synthetic 'vowel'.

Builds a sawtooth at a known pitch, extracts cepstra + F0, and round-trips
the result through the binary feature container.
"""

import tempfile
from pathlib import Path

import numpy as np

from semivc.features import (AudioClip, FrameConfig, estimate_f0,
                             extract_features, read_features, write_features)

rate = 16000
freq = 160.0
t = np.arange(rate) / rate  # one second
phase = (t * freq) % 1.0
clip = AudioClip(samples=0.7 * (2 * phase - 1), sample_rate=rate)

cfg = FrameConfig()
print("frame config: fft=%d, hop=%d samples (%.1f ms)"
      % (cfg.fft_size, cfg.hop_samples(rate), 1000 * cfg.hop))

f0 = estimate_f0(clip, cfg)
voiced = f0[f0 > 0]
print("F0: %d/%d frames voiced, median %.1f Hz (true %.1f Hz)"
      % (len(voiced), len(f0), np.median(voiced), freq))

fs = extract_features(clip, cfg)
print("features: %d frames, mcep %s, c0 range [%.2f, %.2f]"
      % (fs.n_frames, fs.mcep.shape, fs.c0.min(), fs.c0.max()))

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "vowel.vcf"
    write_features(path, fs)
    back = read_features(path)
    print("container round trip: %d bytes, max |mcep error| = %.2e"
          % (path.stat().st_size, np.abs(back.mcep - fs.mcep).max()))
