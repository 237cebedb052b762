"""``rhrnet`` command-line interface.

Exit codes: 0 success, 1 gradient check failed, 2 usage or configuration
error, 3 data error, 4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint, gradcheck
from .audio import (SAMPLE_RATE, AudioClip, ManifestRow, MixSpec, make_noise, mix_at_snr,
                    read_manifest, read_wav, reassemble, resample, segment, speech_like,
                    write_manifest, write_wav)
from .config import RunConfig, load_run_config, parse_scale
from .errors import (CheckpointError, ConfigError, ContractError, DataError,
                     DegenerateSignalError, SignalTooShortError, TrainingError, WavError)
from .metrics import MetricReport, evaluate_pair
from .model import ModelConfig, build, enhance_segments
from .training import EpochRecord, TrainState, fit

EXIT_OK, EXIT_GRADCHECK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
PEAK_LIMIT = 0.99

log = logging.getLogger("rhrnet")


class UsageError(Exception):
    pass


def _parse_snrs(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--snr expects comma-separated numbers, got {text!r}") from None
    if not values or not all(np.isfinite(values)):
        raise UsageError(f"--snr expects finite numbers, got {text!r}")
    return values


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- mix -------------------------------------------------------------------------

def _limit_peak(clean: AudioClip, noisy: AudioClip) -> tuple[AudioClip, AudioClip]:
    """Scale both clips by the same factor so the noisy one fits PCM16 range."""
    peak = float(np.abs(noisy.samples).max())
    if peak <= PEAK_LIMIT:
        return clean, noisy
    g = PEAK_LIMIT / peak
    return AudioClip(clean.samples * g, clean.rate), AudioClip(noisy.samples * g, noisy.rate)


def cmd_mix(args) -> int:
    if (args.clean is None) == (args.synth is None):
        raise UsageError("give exactly one of --clean DIR or --synth N")
    snrs = _parse_snrs(args.snr)
    kinds = [k.strip() for k in args.noise.split(",") if k.strip()]
    if not kinds:
        raise UsageError("--noise needs at least one kind")
    noise_sources: list = []
    for k in kinds:
        if k in ("white", "babble"):
            noise_sources.append(k)
        elif Path(k).is_file():
            noise_sources.append(read_wav(k))
        else:
            raise UsageError(f"--noise {k!r} is neither white, babble nor an existing WAV file")
    spec = MixSpec(snrs, args.seed, tuple(noise_sources))

    out = Path(args.out)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "noisy").mkdir(parents=True, exist_ok=True)

    if args.synth is not None:
        if args.synth < 1:
            raise UsageError("--synth needs a positive count")
        n_samples = int(round(args.seconds * SAMPLE_RATE))
        jobs = [(k, f"synth_{k:05d}", None) for k in range(args.synth)]
    else:
        src = Path(args.clean)
        if not src.is_dir():
            raise UsageError(f"--clean {src} is not a directory")
        files = sorted(src.glob("*.wav"))
        if not files:
            raise DataError(f"no .wav files in {src}")
        n_samples = None
        jobs = [(k, f.stem, f) for k, f in enumerate(files)]

    def make(job):
        k, stem, path = job
        rng = np.random.default_rng([spec.seed, k])
        if path is None:
            clean = AudioClip(speech_like(n_samples, SAMPLE_RATE, rng), SAMPLE_RATE)
        else:
            clean = read_wav(path)
        source = spec.noise[k % len(spec.noise)]
        noise = source if isinstance(source, AudioClip) else \
            AudioClip(make_noise(source, len(clean), clean.rate, rng), clean.rate)
        if noise.rate != clean.rate:
            noise = resample(noise, clean.rate)
        snr = spec.snr_db[k % len(spec.snr_db)]
        clean, noisy = _limit_peak(clean, mix_at_snr(clean, noise, snr, rng))
        cpath, npath = out / "clean" / f"{stem}.wav", out / "noisy" / f"{stem}.wav"
        write_wav(clean, cpath)
        write_wav(noisy, npath)
        return ManifestRow(cpath, npath, snr)

    rows = _map(make, jobs, args.jobs)
    write_manifest(rows, out / "manifest.csv")
    print(f"wrote {len(rows)} pairs and {out / 'manifest.csv'}")
    return EXIT_OK


# -- train -----------------------------------------------------------------------

def _load_training_segments(manifest: Path, L: int):
    rows = read_manifest(manifest)
    if not rows:
        raise DataError(f"manifest {manifest} has no rows")
    noisy, clean = [], []
    for r in rows:
        try:
            c, n = read_wav(r.clean), read_wav(r.noisy)
        except (OSError, WavError) as exc:
            raise DataError(f"cannot read pair {r.clean}, {r.noisy}: {exc}") from exc
        if c.rate != SAMPLE_RATE or n.rate != SAMPLE_RATE:
            raise DataError(f"{r.clean}: training data must be {SAMPLE_RATE} Hz")
        if len(c) != len(n):
            raise DataError(f"{r.clean} and {r.noisy} differ in length")
        clean.append(segment(c, L, "train").segments)
        noisy.append(segment(n, L, "train").segments)
    return np.concatenate(noisy), np.concatenate(clean)


def _split(noisy, clean, fraction: float, seed: int):
    if fraction == 0:
        return (noisy, clean), (noisy, clean)
    n_val = max(1, int(round(fraction * len(noisy))))
    if n_val >= len(noisy):
        raise DataError(f"{len(noisy)} segments are too few for a {fraction:.0%} validation split")
    order = np.random.default_rng([seed, 3]).permutation(len(noisy))
    val, train = np.sort(order[:n_val]), np.sort(order[n_val:])
    return (noisy[train], clean[train]), (noisy[val], clean[val])


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.scale is not None:
        cfg.model = replace(cfg.model, scale=parse_scale(args.scale))
    overrides = {k: v for k, v in (("lr_init", args.lr), ("batch_size", args.batch_size),
                                   ("max_epochs", args.epochs)) if v is not None}
    if overrides:
        cfg.schedule = replace(cfg.schedule, **overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.val_fraction is not None:
        cfg.val_fraction = args.val_fraction
    return cfg.validate()


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resume = None
    if args.resume:
        ckpt = checkpoint.load_checkpoint(args.resume)
        params = ckpt.params
        if params.config != cfg.model:
            raise ConfigError("resume checkpoint was trained with a different model config")
        resume = TrainState.from_meta(ckpt.meta, ckpt.optimizer)
    else:
        params = build(cfg.model, cfg.seed)

    noisy, clean = _load_training_segments(Path(args.data), cfg.model.L)
    train, val = _split(noisy, clean, cfg.val_fraction, cfg.seed)
    (out / "config.ini").write_text(cfg.to_text())
    history_path = out / "history.log"
    if resume is None:
        history_path.write_text("")
    start_epoch = resume.epoch if resume else 0
    rng = np.random.default_rng([cfg.seed, 2, start_epoch])

    def on_epoch(record: EpochRecord, current, state: TrainState):
        line = record.log_line()
        print(line, flush=True)
        with open(history_path, "a") as fh:
            fh.write(line + "\n")
        meta = state.meta()
        checkpoint.save(current, out / "last.ckpt", state.optimizer.s, meta)
        if state.best_epoch == record.epoch:
            checkpoint.save(current, out / "best.ckpt", meta=meta)

    result = fit(params, train, val, cfg.schedule, rng, resume=resume, on_epoch=on_epoch)
    print(f"best epoch {result.best_epoch}, validation loss {result.state.best_val:.6e}; "
          f"checkpoints in {out}")
    return EXIT_OK


# -- enhance ---------------------------------------------------------------------

def enhance_clip(params, clip: AudioClip) -> AudioClip:
    segs = segment(clip, params.config.L, "eval")
    segs.segments = enhance_segments(params, segs.segments).astype(np.float64)
    return reassemble(segs, clip.rate)


def cmd_enhance(args) -> int:
    params = checkpoint.load(args.model)
    clip = read_wav(args.inp)
    source_rate, n = clip.rate, len(clip)
    if clip.rate != SAMPLE_RATE:
        if not args.resample:
            raise DataError(f"{args.inp} is {clip.rate} Hz; the model expects {SAMPLE_RATE} Hz "
                            "(pass --resample)")
        clip = resample(clip, SAMPLE_RATE)
    out = enhance_clip(params, clip)
    if source_rate != SAMPLE_RATE:
        out = resample(out, source_rate)
        samples = out.samples[:n] if len(out) >= n else np.pad(out.samples, (0, n - len(out)))
        out = AudioClip(samples, source_rate)
    write_wav(out, args.out)
    print(f"wrote {args.out} ({len(out)} samples at {out.rate} Hz)")
    return EXIT_OK


# -- evaluate --------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    rows = read_manifest(args.pairs)
    if not rows:
        raise UsageError(f"manifest {args.pairs} has no rows")

    def score(row: ManifestRow):
        try:
            clean, enhanced = read_wav(row.clean), read_wav(row.noisy)
        except (OSError, WavError) as exc:
            raise DataError(f"cannot read pair {row.clean}, {row.noisy}: {exc}") from exc
        if enhanced.rate != clean.rate:
            enhanced = resample(enhanced, clean.rate)
        if len(enhanced) != len(clean):
            raise DataError(f"{row.noisy} has {len(enhanced)} samples, {row.clean} has {len(clean)}")
        try:
            return evaluate_pair(row.noisy.name, clean, enhanced)
        except (DegenerateSignalError, SignalTooShortError) as exc:
            raise DataError(f"{row.clean}: {exc}") from exc

    report = MetricReport(_map(score, rows, args.jobs))
    Path(args.out).write_text(report.to_csv())
    print(report.to_table())
    return EXIT_OK


# -- gradcheck -------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    config = ModelConfig(scale=parse_scale(args.scale)).validate()
    report = gradcheck.check(config, args.seed, corrupt=args.corrupt_gradient)
    for line in report.lines():
        print(line)
    ok = report.passed()
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {report.max_error:.3e} "
          f"(tolerance {gradcheck.TOLERANCE:.0e})")
    return EXIT_OK if ok else EXIT_GRADCHECK


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rhrnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", help="build paired clean/noisy WAVs and a manifest")
    p.add_argument("--clean", help="directory of clean 16-bit WAV files")
    p.add_argument("--synth", type=int, help="generate N synthetic speech-like clips instead")
    p.add_argument("--seconds", type=float, default=2.0, help="length of synthetic clips")
    p.add_argument("--noise", default="white,babble",
                   help="comma list of noise kinds: white, babble or WAV paths (round-robin)")
    p.add_argument("--snr", default="15,10,5,0", help="comma list of SNRs in dB (round-robin)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--data", required=True, help="manifest of clean,noisy,snr rows")
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="continue from a last.ckpt")
    p.add_argument("--scale", help="override model scale (fraction or 'tiny')")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="override max_epochs")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="override lr_init")
    p.add_argument("--val-fraction", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one WAV file")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resample", action="store_true",
                   help=f"accept non-{SAMPLE_RATE} Hz input by resampling")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="SSNR and STOI for clean,enhanced pairs")
    p.add_argument("--pairs", required=True, help="manifest; second column is the enhanced file")
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model gradient")
    p.add_argument("--scale", default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ContractError) as exc:
        print(f"rhrnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, WavError, CheckpointError, DegenerateSignalError, OSError) as exc:
        print(f"rhrnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"rhrnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
