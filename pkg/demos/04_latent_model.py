"""Train the shared-latent sequence model with and without unpaired data.

Uses a small synthetic corpus where only a few utterance pairs are treated
as parallel; the rest are fed to the semi-supervised objective as unpaired
source/target material. Compares against the purely supervised variational
model trained on the same few pairs.
"""

import tempfile

from semivc import align, features, ssvc, stats
from semivc.harness import SynthSpec, generate_synthetic_corpus

N_PARALLEL = 3

with tempfile.TemporaryDirectory() as d:
    spec = SynthSpec(n_train=30, n_validation=2, n_test=5,
                     frames_min=60, frames_max=90, seed=0)
    manifest = generate_synthetic_corpus(d, spec)
    train = [(features.read_features(s), features.read_features(t))
             for s, t in manifest.paired_split("train")]
    test = [(features.read_features(s), features.read_features(t))
            for s, t in manifest.paired_split("test")]

    paired = train[:N_PARALLEL]
    src_only = [x for x, _ in train[N_PARALLEL:]]
    tgt_only = [y for _, y in train[N_PARALLEL:]]

    src_stats = stats.fit_stats([x for x, _ in paired] + src_only)
    tgt_stats = stats.fit_stats([y for _, y in paired] + tgt_only)

    norm_paired = []
    for x, y in paired:
        pair = align.align_pair(stats.normalize(x, src_stats),
                                stats.normalize(y, tgt_stats))
        norm_paired.append((pair.x, pair.y_warped))
    norm_src = [stats.normalize(x, src_stats) for x in src_only]
    norm_tgt = [stats.normalize(y, tgt_stats) for y in tgt_only]

    config = ssvc.SsVcConfig(latent_dim=8, enc_widths=(16, 32),
                             dec_widths=(32, 16))

    for method, use_unpaired in (("dblstm_vae", False), ("semi", True)):
        batches = ssvc.make_batches(
            paired=norm_paired,
            source_only=norm_src if use_unpaired else (),
            target_only=norm_tgt if use_unpaired else ())
        model = ssvc.SsVcModel(config, seed=0)
        ssvc.train(model, batches, ssvc.TrainConfig(method=method, epochs=10),
                   ssvc.RngState(0))
        mcd = ssvc.evaluate_model(model, test, src_stats, tgt_stats)
        label = ("supervised (%d pairs)" % N_PARALLEL if not use_unpaired
                 else "semi-supervised (%d pairs + %d unpaired)"
                 % (N_PARALLEL, len(src_only) + len(tgt_only)))
        print("%-48s test MCD %.2f dB" % (label, mcd))
