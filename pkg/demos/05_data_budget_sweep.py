"""Miniature version of the data-budget experiments.

With a fixed total number of training utterances, varies how many of them
are parallel and reports test MCD per method. Shrunk settings so the whole
sweep runs in about a minute; the full-size run lives in the acceptance
suite and the `semivc sweep-parallel` CLI command.
"""

import tempfile

from semivc import harness, ssvc
from semivc.harness import SweepSpec, SynthSpec, generate_synthetic_corpus

with tempfile.TemporaryDirectory() as d:
    spec = SynthSpec(n_train=12, n_validation=2, n_test=4,
                     frames_min=50, frames_max=70, seed=0)
    manifest = generate_synthetic_corpus(d, spec)

    sweep = SweepSpec(total_budget=12, parallel_counts=(1, 4, 12),
                      repeats=2, seed=0)
    rows = harness.run_parallel_sweep(
        manifest, sweep,
        model_config=ssvc.SsVcConfig(latent_dim=8, enc_widths=(16, 16),
                                     dec_widths=(16, 16)),
        train_config=ssvc.TrainConfig(epochs=6))

    print("%-12s %10s %12s %10s" % ("method", "n_parallel", "n_unpaired",
                                    "mcd (dB)"))
    for n in sweep.parallel_counts:
        for method in ("dblstm", "dblstm_vae", "semi"):
            cells = [float(r["test_mcd_db"]) for r in rows
                     if r["method"] == method and int(r["n_parallel"]) == n]
            unpaired = max(int(r["n_nonparallel"]) for r in rows
                           if r["method"] == method
                           and int(r["n_parallel"]) == n)
            print("%-12s %10d %12d %10.2f"
                  % (method, n, unpaired, sum(cells) / len(cells)))
