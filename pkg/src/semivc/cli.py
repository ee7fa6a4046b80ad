"""Command-line interface.

Every run is fully determined by its config file and --seed. Exit codes:
0 success, 1 input/configuration error, 2 runtime failure.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import align, features, gmm, harness, ssvc, stats
from .features import FormatError, InputError
from .harness import ConfigError
from .stats import StatisticsError


def read_config(path):
    """Parse a `key = value` text config file."""
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("config line %d: expected key = value" % lineno)
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def _model_config(cfg):
    kwargs = {}
    if "latent_dim" in cfg:
        kwargs["latent_dim"] = int(cfg["latent_dim"])
    if "enc_widths" in cfg:
        kwargs["enc_widths"] = tuple(int(v) for v in cfg["enc_widths"].split(","))
    if "dec_widths" in cfg:
        kwargs["dec_widths"] = tuple(int(v) for v in cfg["dec_widths"].split(","))
    if "sigma2" in cfg:
        kwargs["sigma2"] = float(cfg["sigma2"])
    return ssvc.SsVcConfig(**kwargs)


def _train_config(cfg, method):
    kwargs = {"method": method}
    if "epochs" in cfg:
        kwargs["epochs"] = int(cfg["epochs"])
    if "learning_rate" in cfg:
        kwargs["learning_rate"] = float(cfg["learning_rate"])
    if "patience" in cfg:
        kwargs["patience"] = int(cfg["patience"])
    if "min_steps" in cfg:
        kwargs["min_steps"] = int(cfg["min_steps"])
    return ssvc.TrainConfig(**kwargs)


def _load_split_features(manifest, split):
    paired = [(features.read_features(s), features.read_features(t))
              for s, t in manifest.paired_split(split)]
    src_only = [features.read_features(p) for p in manifest.source_only_split(split)]
    tgt_only = [features.read_features(p) for p in manifest.target_only_split(split)]
    return paired, src_only, tgt_only


def cmd_extract(args):
    cfg = features.FrameConfig()
    wav = Path(args.wav)
    out = Path(args.out)
    paths = sorted(wav.glob("*.wav")) if wav.is_dir() else [wav]
    if not paths:
        raise InputError("no WAV files under %r" % str(wav))
    out.mkdir(parents=True, exist_ok=True)
    for p in paths:
        clip = features.load_wav(p)
        fs = features.extract_features(clip, cfg)
        features.write_features(out / (p.stem + ".vcf"), fs)
        print("extracted %s: %d frames" % (p.name, fs.n_frames))
    return 0


def cmd_align(args):
    x = features.read_features(args.source)
    y = features.read_features(args.target)
    pair = align.align_pair(x, y)
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    features.write_features(str(stem) + ".x.vcf", pair.x)
    features.write_features(str(stem) + ".y.vcf", pair.y_warped)
    print("aligned %d source frames (target had %d)" % (x.n_frames, y.n_frames))
    return 0


def cmd_stats(args):
    paths = sorted(Path(args.features).glob("*.vcf"))
    if not paths:
        raise InputError("no feature files under %r" % args.features)
    corpus = [features.read_features(p) for p in paths]
    s = stats.fit_stats(corpus)
    with open(args.out, "w") as fh:
        fh.write(s.to_text())
    print("wrote stats over %d utterances to %s" % (len(corpus), args.out))
    return 0


def _fit_speaker_stats(paired, src_only, tgt_only):
    src_stats = stats.fit_stats([x for x, _ in paired] + src_only)
    tgt_stats = stats.fit_stats([y for _, y in paired] + tgt_only)
    return src_stats, tgt_stats


def cmd_train_gmm(args):
    cfg = read_config(args.config) if args.config else {}
    manifest = harness.read_manifest(args.manifest)
    paired, src_only, tgt_only = _load_split_features(manifest, "train")
    if not paired:
        raise InputError("train-gmm requires paired training data")
    src_stats, tgt_stats = _fit_speaker_stats(paired, src_only, tgt_only)
    frames = np.concatenate(
        [stats.normalize(x, src_stats).mcep for x, _ in paired]
        + [stats.normalize(x, src_stats).mcep for x in src_only], axis=0)
    K = int(cfg.get("components", 32))
    model = gmm.fit_gmm(frames, K, seed=args.seed)
    aligned = []
    for x, y in paired:
        pair = align.align_pair(stats.normalize(x, src_stats),
                                stats.normalize(y, tgt_stats))
        aligned.append((pair.x.mcep, pair.y_warped.mcep))
    gmm.fit_conversion(model, aligned)
    gmm.save_gmm(args.out, model)
    _write_stats_sidecars(args.out, src_stats, tgt_stats)
    print("trained %d-component GMM on %d pairs -> %s"
          % (K, len(paired), args.out))
    return 0


def _write_stats_sidecars(out, src_stats, tgt_stats):
    with open(str(out) + ".src_stats.txt", "w") as fh:
        fh.write(src_stats.to_text())
    with open(str(out) + ".tgt_stats.txt", "w") as fh:
        fh.write(tgt_stats.to_text())


def cmd_train_ssvc(args):
    cfg = read_config(args.config) if args.config else {}
    manifest = harness.read_manifest(args.manifest)
    paired, src_only, tgt_only = _load_split_features(manifest, "train")
    if args.parallel is not None:
        drop = paired[args.parallel:]
        src_only = src_only + [x for x, _ in drop]
        tgt_only = tgt_only + [y for _, y in drop]
        paired = paired[:args.parallel]
    if not paired and not src_only and not tgt_only:
        raise InputError("no training data in manifest")
    if not paired and args.method != "semi":
        raise InputError("method %r requires paired data" % args.method)
    if not ([x for x, _ in paired] + src_only) or not ([y for _, y in paired] + tgt_only):
        raise InputError("need data from both speakers to fit stats")
    src_stats, tgt_stats = _fit_speaker_stats(paired, src_only, tgt_only)

    norm_paired = []
    for x, y in paired:
        pair = align.align_pair(stats.normalize(x, src_stats),
                                stats.normalize(y, tgt_stats))
        norm_paired.append((pair.x, pair.y_warped))
    batches = ssvc.make_batches(
        paired=norm_paired,
        source_only=[stats.normalize(x, src_stats) for x in src_only],
        target_only=[stats.normalize(y, tgt_stats) for y in tgt_only])

    model = ssvc.SsVcModel(_model_config(cfg), seed=args.seed)
    rng = ssvc.RngState(args.seed)
    val_pairs, _, _ = _load_split_features(manifest, "validation")
    ssvc.train(model, batches, _train_config(cfg, args.method), rng,
               val_pairs=val_pairs or None, src_stats=src_stats,
               tgt_stats=tgt_stats, log_path=str(args.out) + ".log.csv")
    ssvc.save_checkpoint(args.out, model, src_stats, tgt_stats)
    _write_stats_sidecars(args.out, src_stats, tgt_stats)
    if not paired:
        print("warning: trained without any paired utterances; "
              "the decoders were never cross-coupled")
    print("trained %s model (%d paired, %d source-only, %d target-only) -> %s"
          % (args.method, len(paired), len(src_only), len(tgt_only), args.out))
    return 0


def cmd_convert(args):
    x = features.read_features(args.input)
    try:
        model, src_stats, tgt_stats = ssvc.load_checkpoint(args.model)
        is_gmm = False
    except (FormatError, KeyError):
        model = gmm.load_gmm(args.model)
        is_gmm = True
        src_stats = tgt_stats = None
    if args.src_stats:
        with open(args.src_stats) as fh:
            src_stats = stats.SpeakerStats.from_text(fh.read())
    if args.tgt_stats:
        with open(args.tgt_stats) as fh:
            tgt_stats = stats.SpeakerStats.from_text(fh.read())
    if src_stats is None or tgt_stats is None:
        for tag in ("src", "tgt"):
            sidecar = Path(str(args.model) + ".%s_stats.txt" % tag)
            if sidecar.exists():
                with open(sidecar) as fh:
                    parsed = stats.SpeakerStats.from_text(fh.read())
                if tag == "src":
                    src_stats = src_stats or parsed
                else:
                    tgt_stats = tgt_stats or parsed
    if src_stats is None or tgt_stats is None:
        raise InputError("speaker stats not found; pass --src-stats/--tgt-stats")

    if is_gmm:
        converted = gmm.convert_gmm(model, x, src_stats, tgt_stats)
    else:
        if not np.any(np.abs(model.params["decoder_y.out.W"].values) > 0):
            print("warning: target decoder looks untrained")
        converted = ssvc.convert(model, x, src_stats, tgt_stats).to_feature_sequence()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    features.write_features(args.out, converted)
    print("converted %d frames -> %s" % (x.n_frames, args.out))
    return 0


def cmd_evaluate(args):
    conv_dir, ref_dir = Path(args.converted), Path(args.reference)
    conv = {p.stem: p for p in sorted(conv_dir.glob("*.vcf"))}
    ref = {p.stem: p for p in sorted(ref_dir.glob("*.vcf"))}
    stems = sorted(set(conv) & set(ref))
    if not stems:
        raise InputError("no matching feature-file stems between directories")
    rows = []
    scored = []
    for stem in stems:
        a = features.read_features(conv[stem])
        b = features.read_features(ref[stem])
        if args.no_dtw:
            pair_frames = (a.mcep, b.mcep)
        else:
            pair = align.align_pair(a, b)
            pair_frames = (pair.x.mcep, pair.y_warped.mcep)
        scored.append(pair_frames)
        rows.append((stem, stats.mcd(*pair_frames)))
    overall = stats.corpus_mcd(scored)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["utterance", "mcd_db"])
            for stem, value in rows:
                writer.writerow([stem, "%.6f" % value])
            writer.writerow(["overall", "%.6f" % overall])
    print("MCD over %d utterances: %.2f dB" % (len(stems), overall))
    return 0


def cmd_gen_synth(args):
    cfg = read_config(args.config) if args.config else {}
    spec = harness.SynthSpec(
        n_train=int(cfg.get("n_train", args.utterances)),
        n_validation=int(cfg.get("n_validation", 10)),
        n_test=int(cfg.get("n_test", 10)),
        frames_min=int(cfg.get("frames_min", 80)),
        frames_max=int(cfg.get("frames_max", 120)),
        seed=args.seed)
    manifest = harness.generate_synthetic_corpus(args.out, spec)
    print("generated %d paired utterances under %s"
          % (len(manifest.paired), args.out))
    return 0


def _sweep_common(args):
    cfg = read_config(args.config) if args.config else {}
    manifest = harness.read_manifest(args.manifest)
    return cfg, manifest


def cmd_sweep_parallel(args):
    cfg, manifest = _sweep_common(args)
    spec = harness.SweepSpec(
        total_budget=int(cfg.get("total_budget", args.budget)),
        parallel_counts=tuple(int(v) for v in args.counts.split(",")),
        repeats=args.repeats, seed=args.seed)
    harness.run_parallel_sweep(manifest, spec, out_csv=args.out,
                               model_config=_model_config(cfg),
                               train_config=_train_config(cfg, "semi"))
    print("parallel sweep written to %s" % args.out)
    return 0


def cmd_sweep_nonparallel(args):
    cfg, manifest = _sweep_common(args)
    counts = [int(v) for v in args.counts.split(",")]
    harness.run_nonparallel_sweep(manifest, counts, repeats=args.repeats,
                                  seed=args.seed, out_csv=args.out,
                                  model_config=_model_config(cfg),
                                  train_config=_train_config(cfg, "semi"))
    print("non-parallel sweep written to %s" % args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="semivc",
                                     description="Voice conversion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract features from WAV files")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("align", help="DTW-align a target utterance to a source")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="output stem for .x.vcf/.y.vcf")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("stats", help="fit speaker normalization statistics")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train-gmm", help="train the GMM conversion baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_gmm)

    p = sub.add_parser("train-ssvc", help="train the sequence latent model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--method", default="semi",
                   choices=["semi", "dblstm_vae", "dblstm"])
    p.add_argument("--parallel", type=int, default=None,
                   help="cap on paired utterances; the rest become unpaired")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_ssvc)

    p = sub.add_parser("convert", help="convert a source utterance")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--src-stats")
    p.add_argument("--tgt-stats")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("evaluate", help="MCD between converted and reference")
    p.add_argument("--converted", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out")
    p.add_argument("--no-dtw", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-synth", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--utterances", type=int, default=100)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("sweep-parallel", help="data-budget sweep over parallel counts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--counts", default="1,10,100")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep_parallel)

    p = sub.add_parser("sweep-nonparallel",
                       help="sweep over non-parallel counts with one pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--counts", default="0,10,50,100")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep_nonparallel)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (InputError, FormatError, ConfigError, StatisticsError,
            FileNotFoundError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print("runtime failure: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
