"""Dataset manifests, the synthetic two-speaker corpus, and the data-budget
experiment sweeps."""

import csv
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import align, features, ssvc, stats
from .features import FeatureSequence

SPLITS = ("train", "validation", "test")


class ConfigError(Exception):
    """Manifest or sweep configuration problem."""


def prompt_id(path):
    """Prompt identifier of an utterance file: the filename stem."""
    return Path(path).stem


@dataclass
class DatasetManifest:
    paired: list = field(default_factory=list)       # (src, tgt, split)
    source_only: list = field(default_factory=list)  # (path, split)
    target_only: list = field(default_factory=list)  # (path, split)
    root: str = ""  # relative entries resolve against this directory

    def _resolve(self, p):
        if not self.root or os.path.isabs(p):
            return p
        return os.path.join(self.root, p)

    def validate(self):
        seen = {}
        for src, tgt, split in self.paired:
            for p in (src, tgt):
                if seen.setdefault(p, split) != split:
                    raise ConfigError("utterance %r in more than one split" % p)
        for p, split in self.source_only + self.target_only:
            if seen.setdefault(p, split) != split:
                raise ConfigError("utterance %r in more than one split" % p)
        src_prompts = {prompt_id(p) for p, _ in self.source_only}
        tgt_prompts = {prompt_id(p) for p, _ in self.target_only}
        overlap = src_prompts & tgt_prompts
        if overlap:
            raise ConfigError("prompt(s) %s appear in both source_only and "
                              "target_only" % sorted(overlap))

    def paired_split(self, split):
        return [(self._resolve(s), self._resolve(t))
                for s, t, sp in self.paired if sp == split]

    def source_only_split(self, split):
        return [self._resolve(p) for p, sp in self.source_only if sp == split]

    def target_only_split(self, split):
        return [self._resolve(p) for p, sp in self.target_only if sp == split]


def write_manifest(path, manifest):
    with open(path, "w") as fh:
        for split in SPLITS:
            entries = ([("paired", s, t) for s, t, sp in manifest.paired
                        if sp == split]
                       + [("source", p) for p, sp in manifest.source_only
                          if sp == split]
                       + [("target", p) for p, sp in manifest.target_only
                          if sp == split])
            if not entries:
                continue
            fh.write("split %s\n" % split)
            for entry in entries:
                fh.write(" ".join(str(v) for v in entry) + "\n")


def read_manifest(path):
    manifest = DatasetManifest(root=str(Path(path).parent))
    split = "train"
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            key = parts[0]
            if key == "split":
                if len(parts) != 2 or parts[1] not in SPLITS:
                    raise ConfigError("line %d: bad split declaration" % lineno)
                split = parts[1]
            elif key == "paired":
                if len(parts) != 3:
                    raise ConfigError("line %d: paired needs two paths" % lineno)
                manifest.paired.append((parts[1], parts[2], split))
            elif key == "source":
                if len(parts) != 2:
                    raise ConfigError("line %d: source needs one path" % lineno)
                manifest.source_only.append((parts[1], split))
            elif key == "target":
                if len(parts) != 2:
                    raise ConfigError("line %d: target needs one path" % lineno)
                manifest.target_only.append((parts[1], split))
            else:
                raise ConfigError("line %d: unknown key %r" % (lineno, key))
    manifest.validate()
    return manifest


# -- synthetic corpus -------------------------------------------------------

@dataclass
class SynthSpec:
    n_train: int = 100
    n_validation: int = 10
    n_test: int = 10
    frames_min: int = 80
    frames_max: int = 120
    latent_dim: int = 4
    hidden_dim: int = 16
    noise_std: float = 0.05
    seed: int = 0


def _random_map(rng, latent_dim, hidden_dim, out_dim):
    """Fixed random two-layer tanh map from latents to features."""
    W1 = rng.standard_normal((latent_dim, hidden_dim)) * (1.5 / np.sqrt(latent_dim))
    b1 = rng.standard_normal(hidden_dim) * 0.3
    W2 = rng.standard_normal((hidden_dim, out_dim)) * (1.0 / np.sqrt(hidden_dim))
    b2 = rng.standard_normal(out_dim) * 0.1

    def apply(latents):
        return np.tanh(latents @ W1 + b1) @ W2 + b2

    return apply


def _ar2_latents(rng, n_frames, dim):
    """Smooth order-2 autoregressive latent sequence, unit-ish scale."""
    r, theta = 0.93, 0.18
    a1, a2 = 2 * r * np.cos(theta), -r * r
    innov_std = 0.35
    z = np.zeros((n_frames + 20, dim))
    eps = rng.standard_normal((n_frames + 20, dim)) * innov_std
    for t in range(2, n_frames + 20):
        z[t] = a1 * z[t - 1] + a2 * z[t - 2] + eps[t]
    return z[20:]


def generate_synthetic_corpus(out_dir, spec):
    """Write a two-speaker corpus driven by a shared latent process.

    Source features are one fixed nonlinear map of the latents, target
    features another; paired entries share the latent sequence, so the
    ground-truth correspondence is known. The pairing of held-out unpaired
    entries is never written into the manifest.
    """
    out_dir = Path(out_dir)
    (out_dir / "src").mkdir(parents=True, exist_ok=True)
    (out_dir / "tgt").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    map_src = _random_map(rng, spec.latent_dim, spec.hidden_dim, features.N_MCEP)
    map_tgt = _random_map(rng, spec.latent_dim, spec.hidden_dim, features.N_MCEP)
    logf0_src, logf0_tgt = np.log(110.0), np.log(200.0)

    manifest = DatasetManifest(root=str(out_dir))
    counts = [("train", spec.n_train), ("validation", spec.n_validation),
              ("test", spec.n_test)]
    idx = 0
    for split, count in counts:
        for _ in range(count):
            T = int(rng.integers(spec.frames_min, spec.frames_max + 1))
            latents = _ar2_latents(rng, T, spec.latent_dim)
            voiced = _smooth_mask(rng, T)
            stem = "utt%04d.vcf" % idx
            for tag, fmap, lf0 in (("src", map_src, logf0_src),
                                   ("tgt", map_tgt, logf0_tgt)):
                mcep = fmap(latents) + rng.standard_normal((T, features.N_MCEP)) * spec.noise_std
                f0 = np.where(voiced,
                              np.exp(lf0 + 0.08 * latents[:, 0]
                                     + 0.02 * rng.standard_normal(T)), 0.0)
                f0 = np.clip(f0, 0.0, features.F0_MAX)
                fs = FeatureSequence(mcep=mcep, c0=0.5 * latents[:, 1],
                                     f0=f0, ap=np.where(voiced, 0.0, 1.0))
                features.write_features(out_dir / tag / stem, fs)
            manifest.paired.append(("src/" + stem, "tgt/" + stem, split))
            idx += 1
    manifest.validate()
    write_manifest(out_dir / "manifest.txt", manifest)
    return manifest


def _smooth_mask(rng, n_frames):
    """Mostly-voiced mask with contiguous unvoiced stretches."""
    drive = _ar2_latents(rng, n_frames, 1)[:, 0]
    # quantile threshold guarantees every utterance keeps voiced frames
    return drive < np.quantile(drive, 0.8)


# -- sweeps -----------------------------------------------------------------

@dataclass
class SweepSpec:
    total_budget: int = 100
    parallel_counts: tuple = (1, 10, 100)
    repeats: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if any(n > self.total_budget for n in self.parallel_counts):
            raise ConfigError("parallel count exceeds the total budget")


RESULT_HEADER = ["method", "n_parallel", "n_nonparallel", "repeat",
                 "test_mcd_db", "train_seconds"]


def _load_pairs(entries):
    return [(features.read_features(s), features.read_features(t))
            for s, t in entries]


def _prepare_cell(pairs_raw, n_parallel, n_unpaired_src, n_unpaired_tgt, order):
    """Assign utterances of the training budget to paired / unpaired roles."""
    paired_idx = order[:n_parallel]
    rest = order[n_parallel:]
    src_idx = rest[:n_unpaired_src]
    tgt_idx = rest[n_unpaired_src:n_unpaired_src + n_unpaired_tgt]
    paired = [pairs_raw[i] for i in paired_idx]
    src_only = [pairs_raw[i][0] for i in src_idx]
    tgt_only = [pairs_raw[i][1] for i in tgt_idx]
    return paired, src_only, tgt_only


def _train_cell(method, paired, src_only, tgt_only, test_pairs, seed,
                model_config=None, train_config=None):
    """Fit speaker stats, align, train one model, and score test MCD."""
    src_corpus = [x for x, _ in paired] + src_only
    tgt_corpus = [y for _, y in paired] + tgt_only
    if not src_corpus or not tgt_corpus:
        raise ConfigError("cell has no data for one speaker")
    src_stats = stats.fit_stats(src_corpus)
    tgt_stats = stats.fit_stats(tgt_corpus)

    norm_paired = []
    for x, y in paired:
        xn = stats.normalize(x, src_stats)
        yn = stats.normalize(y, tgt_stats)
        pair = align.align_pair(xn, yn)
        norm_paired.append((pair.x, pair.y_warped))
    norm_src = [stats.normalize(x, src_stats) for x in src_only]
    norm_tgt = [stats.normalize(y, tgt_stats) for y in tgt_only]

    batches = ssvc.make_batches(paired=norm_paired, source_only=norm_src,
                                target_only=norm_tgt)
    model_config = model_config or ssvc.SsVcConfig()
    train_config = train_config or ssvc.TrainConfig()
    cfg = ssvc.TrainConfig(method=method, epochs=train_config.epochs,
                           learning_rate=train_config.learning_rate,
                           patience=train_config.patience,
                           min_steps=train_config.min_steps)
    model = ssvc.SsVcModel(model_config, seed=seed)
    rng = ssvc.RngState(seed)
    start = time.monotonic()
    ssvc.train(model, batches, cfg, rng)
    seconds = time.monotonic() - start
    mcd_db = ssvc.evaluate_model(model, test_pairs, src_stats, tgt_stats)
    return mcd_db, seconds


def run_parallel_sweep(manifest, spec, out_csv=None, model_config=None,
                       train_config=None):
    """Fixed data budget, varying number of parallel utterances.

    For each parallel count n, trains a supervised regression model and a
    supervised variational model on the n pairs, and the semi-supervised
    model on the n pairs plus the remaining budget as unpaired data split
    evenly between the speakers.
    """
    train_entries = manifest.paired_split("train")
    if len(train_entries) < spec.total_budget:
        raise ConfigError("train split has %d paired utterances, budget is %d"
                          % (len(train_entries), spec.total_budget))
    pairs_raw = _load_pairs(train_entries[:spec.total_budget])
    test_pairs = _load_pairs(manifest.paired_split("test"))
    if not test_pairs:
        raise ConfigError("manifest has no test pairs")

    rows = []
    for repeat in range(spec.repeats):
        cell_rng = np.random.default_rng((spec.seed, repeat))
        order = list(cell_rng.permutation(spec.total_budget))
        for n in spec.parallel_counts:
            remainder = spec.total_budget - n
            n_src = remainder // 2
            n_tgt = remainder - n_src
            paired, src_only, tgt_only = _prepare_cell(
                pairs_raw, n, n_src, n_tgt, order)
            cell_seed = spec.seed * 1_000_003 + repeat * 1009 + n
            for method, use_unpaired in (("dblstm", False),
                                         ("dblstm_vae", False),
                                         ("semi", True)):
                mcd_db, seconds = _train_cell(
                    method, paired,
                    src_only if use_unpaired else [],
                    tgt_only if use_unpaired else [],
                    test_pairs, cell_seed,
                    model_config=model_config, train_config=train_config)
                rows.append({"method": method, "n_parallel": n,
                             "n_nonparallel": remainder if use_unpaired else 0,
                             "repeat": repeat,
                             "test_mcd_db": "%.6f" % mcd_db,
                             "train_seconds": "%.3f" % seconds})
    if out_csv:
        _write_results(out_csv, rows)
    return rows


def run_nonparallel_sweep(manifest, counts, repeats=3, seed=0, out_csv=None,
                          model_config=None, train_config=None):
    """One parallel utterance, varying amount of non-parallel data.

    Also emits supervised-baseline reference rows trained on the single pair.
    """
    counts = list(counts)
    if counts != sorted(counts):
        raise ConfigError("counts must be ascending")
    train_entries = manifest.paired_split("train")
    if len(train_entries) < 1 + max(counts):
        raise ConfigError("train split too small for max count %d" % max(counts))
    pairs_raw = _load_pairs(train_entries[:1 + max(counts)])
    test_pairs = _load_pairs(manifest.paired_split("test"))
    if not test_pairs:
        raise ConfigError("manifest has no test pairs")

    rows = []
    for repeat in range(repeats):
        cell_rng = np.random.default_rng((seed, repeat))
        order = list(cell_rng.permutation(len(pairs_raw)))
        for count in counts:
            n_src = count // 2
            n_tgt = count - n_src
            paired, src_only, tgt_only = _prepare_cell(
                pairs_raw, 1, n_src, n_tgt, order)
            cell_seed = seed * 1_000_003 + repeat * 1009 + count
            mcd_db, seconds = _train_cell(
                "semi", paired, src_only, tgt_only, test_pairs, cell_seed,
                model_config=model_config, train_config=train_config)
            rows.append({"method": "semi", "n_parallel": 1,
                         "n_nonparallel": count, "repeat": repeat,
                         "test_mcd_db": "%.6f" % mcd_db,
                         "train_seconds": "%.3f" % seconds})
        # supervised reference on the same single pair
        paired, _, _ = _prepare_cell(pairs_raw, 1, 0, 0, order)
        cell_seed = seed * 1_000_003 + repeat * 1009
        mcd_db, seconds = _train_cell(
            "dblstm", paired, [], [], test_pairs, cell_seed,
            model_config=model_config, train_config=train_config)
        rows.append({"method": "dblstm", "n_parallel": 1, "n_nonparallel": 0,
                     "repeat": repeat, "test_mcd_db": "%.6f" % mcd_db,
                     "train_seconds": "%.3f" % seconds})
    if out_csv:
        _write_results(out_csv, rows)
    return rows


def _write_results(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
