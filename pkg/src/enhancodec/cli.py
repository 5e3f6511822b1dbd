"""Command-line interface: train, encode, decode, mix, rir, eval.

Exit codes: 0 success, 1 usage error, 2 data or model incompatibility,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bitstream import BITS_PER_CODE, unpack
from .data import (
    MixtureSpec,
    RoomSpec,
    SamplerConfig,
    image_source_rir,
    mix_at_snr,
    random_room,
    read_manifest,
)
from .dsp import CODEC_SAMPLE_RATE, wav_read, wav_write
from .errors import (
    BitstreamError,
    IncompatibleModelError,
    NumericalError,
    WavFormatError,
)
from .model import CompressorEnhancer
from .training import (
    CONFIG_DOC,
    EvalPair,
    TrainConfig,
    Trainer,
    evaluate_objective,
)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _train_epilog() -> str:
    defaults = TrainConfig()
    lines = ["config keys (file or --set key=value):"]
    for f in fields(TrainConfig):
        lines.append(f"  {f.name} = {getattr(defaults, f.name)}")
        lines.append(f"      {CONFIG_DOC[f.name]}")
    return "\n".join(lines)


def build_parser() -> _Parser:
    parser = _Parser(prog="enhancodec", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser(
        "train", help="train a model from manifests",
        epilog=_train_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--speech-manifest", help="TSV of clean speech files")
    p.add_argument("--noise-manifest", help="TSV of noise files (not read in codec_only mode)")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--resume", help="resume training from this checkpoint")
    p.add_argument("--mode", choices=("enhancing", "codec_only", "enhancing_low_noise"))
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="compress a wav file to a bitstream")
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--in", dest="input", required=True, help="16 kHz mono PCM16 wav")
    p.add_argument("--out", required=True, help="bitstream path to write")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="reconstruct a wav file from a bitstream")
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--in", dest="input", required=True, help="bitstream path")
    p.add_argument("--out", required=True, help="wav path to write")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--temperature", type=float, default=1.0,
                   help="softmax temperature; 0 decodes by argmax")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("mix", help="mix speech and noise at a requested SNR")
    p.add_argument("--speech", required=True, help="clean speech wav")
    p.add_argument("--noise", required=True, help="noise wav (>= speech length)")
    p.add_argument("--snr", type=float, required=True, help="target SNR in dB")
    p.add_argument("--out", required=True, help="mixture wav to write")
    p.add_argument("--target-out", help="also write the gain-matched clean target")
    p.add_argument("--rir", help=".npy impulse response to convolve the speech with")
    p.add_argument("--random-room", action="store_true",
                   help="draw a random room response (uses --seed)")
    p.add_argument("--seed", type=int, default=0, help="seed for --random-room")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("rir", help="synthesize a shoebox impulse response")
    p.add_argument("--room", default="5,4,3", metavar="LX,LY,LZ", help="room size in meters")
    p.add_argument("--source", default="2,2,1.5", metavar="X,Y,Z", help="source position")
    p.add_argument("--mic", default="3.5,2.5,1.5", metavar="X,Y,Z", help="microphone position")
    p.add_argument("--beta", type=float, default=0.5, help="wall reflection coefficient")
    p.add_argument("--order", type=int, default=6, help="maximum reflection count")
    p.add_argument("--rate", type=int, default=CODEC_SAMPLE_RATE, help="sample rate")
    p.add_argument("--out", required=True, help=".npy path to write")
    p.set_defaults(func=cmd_rir)

    p = sub.add_parser("eval", help="objective metrics per SNR bucket")
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--pairs", required=True,
                   help="TSV manifest: noisy_wav<TAB>clean_wav<TAB>snr_db")
    p.add_argument("--buckets", default="17.5,12.5,7.5,2.5",
                   help="comma-separated bucket centers in dB")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("--temperature", type=float, default=0.0, help="generation temperature")
    p.set_defaults(func=cmd_eval)

    return parser


def _floats(text: str, n: int, flag: str) -> tuple:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ValueError(f"{flag} expects {n} comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def cmd_train(args, parser) -> int:
    try:
        config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
        overrides = dict(vars(config).items())
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep or key not in CONFIG_DOC:
                raise ValueError(f"--set expects a known KEY=VALUE, got {item!r}")
            overrides[key] = type(overrides[key])(value)
        for key in ("mode", "steps", "seed"):
            if getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
        config = TrainConfig(**overrides)
    except ValueError as exc:
        parser.error(str(exc))
    if args.resume:
        if not args.speech_manifest:
            parser.error("--resume still requires --speech-manifest")
        manifest = read_manifest(args.speech_manifest, args.noise_manifest)
        trainer = Trainer.from_checkpoint(args.resume, manifest=manifest)
    else:
        if not args.speech_manifest:
            parser.error("--speech-manifest is required")
        if config.mode != "codec_only" and not args.noise_manifest:
            parser.error(f"mode {config.mode} requires --noise-manifest")
        manifest = read_manifest(args.speech_manifest, args.noise_manifest)
        trainer = Trainer(config, manifest=manifest)
    trainer.run(checkpoint_path=args.out, log_fn=print)
    print(f"wrote {args.out} at step {trainer.step_index}")
    return 0


def cmd_encode(args, parser) -> int:
    model, _, _ = CompressorEnhancer.load(args.model)
    wav = wav_read(args.input)
    stream = model.encode_to_stream(wav)
    with open(args.out, "wb") as f:
        f.write(stream)
    header, _ = unpack(stream)
    bits = header.frame_count * header.num_speech_codebooks * BITS_PER_CODE
    kbps = bits / wav.duration / 1000.0
    print(f"wrote {args.out}: {bits} payload bits over {wav.duration:.2f} s = {kbps:.2f} kb/s")
    return 0


def cmd_decode(args, parser) -> int:
    model, _, _ = CompressorEnhancer.load(args.model)
    with open(args.input, "rb") as f:
        stream = f.read()
    wav = model.decode_from_stream(stream, seed=args.seed, temperature=args.temperature)
    wav_write(args.out, wav)
    print(f"wrote {args.out}: {len(wav)} samples at {wav.sample_rate} Hz")
    return 0


def cmd_mix(args, parser) -> int:
    if args.rir and args.random_room:
        parser.error("--rir and --random-room are mutually exclusive")
    speech = wav_read(args.speech)
    noise = wav_read(args.noise)
    rir = None
    if args.rir:
        rir = np.load(args.rir)
    elif args.random_room:
        rir = image_source_rir(random_room(np.random.default_rng(args.seed), SamplerConfig()))
    result = mix_at_snr(MixtureSpec(speech=speech, noise=noise, rir=rir, snr_db=args.snr))
    wav_write(args.out, result.x)
    if args.target_out:
        wav_write(args.target_out, result.target)
    print(f"wrote {args.out}: alpha {result.alpha:.4f}, gain {result.gain:.4f}")
    return 0


def cmd_rir(args, parser) -> int:
    try:
        room = RoomSpec(
            dimensions=_floats(args.room, 3, "--room"),
            source_position=_floats(args.source, 3, "--source"),
            mic_position=_floats(args.mic, 3, "--mic"),
            reflection_coefficient=args.beta,
            max_order=args.order,
        )
    except ValueError as exc:
        parser.error(str(exc))
    h = image_source_rir(room, sample_rate=args.rate)
    np.save(args.out, h)
    print(f"wrote {args.out}: {np.count_nonzero(h)} taps over {len(h) / args.rate:.4f} s")
    return 0


def cmd_eval(args, parser) -> int:
    model, _, _ = CompressorEnhancer.load(args.model)
    parts = [p for p in args.buckets.replace(",", " ").split() if p]
    if not parts:
        parser.error("--buckets needs at least one value")
    try:
        buckets = tuple(float(p) for p in parts)
    except ValueError:
        parser.error(f"--buckets expects numbers, got {args.buckets!r}")
    pairs = []
    for lineno, raw in enumerate(Path(args.pairs).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(
                f"{args.pairs}:{lineno}: expected noisy<TAB>clean<TAB>snr_db"
            )
        noisy, clean, snr = parts
        pairs.append(EvalPair(x=wav_read(noisy), s=wav_read(clean), snr_db=float(snr)))
    report = evaluate_objective(model, pairs, snr_buckets=buckets,
                                seed=args.seed, temperature=args.temperature)
    print(report.format_table())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, parser) or 0
    except SystemExit as exc:
        code = exc.code
        return int(code) if code else 0
    except (WavFormatError, BitstreamError, IncompatibleModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
