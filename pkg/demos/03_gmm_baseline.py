"""The classic GMM mapping baseline on the synthetic two-speaker corpus.

Fits a mixture on source frames, learns the per-component affine conversion
from aligned pairs, and scores the conversion in mel-cepstral distortion.
"""

import tempfile

import numpy as np

from semivc import align, features, gmm, stats
from semivc.harness import SynthSpec, generate_synthetic_corpus

with tempfile.TemporaryDirectory() as d:
    spec = SynthSpec(n_train=20, n_validation=2, n_test=5,
                     frames_min=60, frames_max=90, seed=0)
    manifest = generate_synthetic_corpus(d, spec)

    train = [(features.read_features(s), features.read_features(t))
             for s, t in manifest.paired_split("train")]
    test = [(features.read_features(s), features.read_features(t))
            for s, t in manifest.paired_split("test")]

    src_stats = stats.fit_stats([x for x, _ in train])
    tgt_stats = stats.fit_stats([y for _, y in train])

    frames = np.concatenate([stats.normalize(x, src_stats).mcep
                             for x, _ in train])
    model = gmm.fit_gmm(frames, K=8, seed=0)
    print("fit %d-component GMM on %d frames, log-likelihood %.2f/frame"
          % (model.n_components, len(frames),
             gmm.log_likelihood(model, frames) / len(frames)))

    aligned = []
    for x, y in train:
        pair = align.align_pair(stats.normalize(x, src_stats),
                                stats.normalize(y, tgt_stats))
        aligned.append((pair.x.mcep, pair.y_warped.mcep))
    gmm.fit_conversion(model, aligned)

    scored, baseline = [], []
    for x, y in test:
        converted = gmm.convert_gmm(model, x, src_stats, tgt_stats)
        pair = align.align_pair(converted, y)
        scored.append((pair.x.mcep, pair.y_warped.mcep))
        raw = align.align_pair(x, y)
        baseline.append((raw.x.mcep, raw.y_warped.mcep))

    print("test MCD before conversion: %.2f dB" % stats.corpus_mcd(baseline))
    print("test MCD after GMM mapping: %.2f dB" % stats.corpus_mcd(scored))
