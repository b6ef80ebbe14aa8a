"""Command line entry point: ``python -m tokencodec.main <command> ...``."""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import torch

from .core.config import CodecConfig, get_settings, load_codec_config, read_config_file
from .core.exceptions import handle_codec_error
from .core.logging import get_logger, setup_logging
from .core.monitoring import MetricsCollector, PerformanceMonitor
from .pipeline.analysis import AblationGrid, ablation_grid, export_codebook_csv, index_distribution, mel_distance_eval
from .pipeline.bitstream import decode_file, encode_file, read_tokens, write_tokens
from .pipeline.checkpoint import load_model, restore_trainer
from .pipeline.data import ManifestClips, load_manifest
from .pipeline.training import Trainer

logger = get_logger(__name__)


def _codec_config(args: argparse.Namespace) -> CodecConfig:
    if args.config:
        return load_codec_config(Path(args.config))
    return CodecConfig.preset(args.preset)


def _report_rtf(monitor: PerformanceMonitor, operation: str, audio_seconds: float) -> None:
    """Print the model RTF and the end-to-end RTF including file I/O."""
    collector = monitor.metrics_collector
    model_rtf = collector.mean(f"{operation}_rtf")
    total = collector.mean(f"{operation}_file_execution_time")
    if model_rtf is None or total is None:
        return
    end_to_end = total / audio_seconds if audio_seconds > 0 else float("inf")
    print(f"{operation} RTF: {model_rtf:.4f} (end to end {end_to_end:.4f})")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _codec_config(args)
    manifest = load_manifest(args.manifest).split(args.split)
    clips = ManifestClips(manifest, cfg.sample_rate, cfg.train.max_clip_seconds)
    run_name = Path(args.config).stem if args.config else args.preset
    run_dir = Path(args.out) if args.out else get_settings().METRICS_DIR / run_name

    metrics = MetricsCollector()
    metrics.open_csv(run_dir / "metrics.csv", append=args.resume is not None)
    try:
        trainer = Trainer(cfg, clips, device=args.device, metrics=metrics, fault_dir=run_dir)
        if args.resume:
            restore_trainer(trainer, args.resume)
        trainer.fit(steps=args.steps, checkpoint_dir=run_dir / "checkpoints")
    finally:
        metrics.close()
    print(f"Finished at step {trainer.step}; checkpoint {run_dir / 'checkpoints' / 'last.pt'}")
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    model = load_model(args.ckpt, device=args.device or "cpu")
    monitor = PerformanceMonitor()

    @monitor.track_execution_time("encode_file")
    def run():
        stream = encode_file(args.input, model, monitor=monitor)
        write_tokens(stream, args.output)
        return stream

    stream = run()
    print(
        f"{stream.num_frames} tokens, {stream.token_rate:g} tok/s, "
        f"{stream.bitrate_kbps:g} kbps -> {args.output}"
    )
    if args.rtf:
        _report_rtf(monitor, "encode", stream.duration_seconds)
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    model = load_model(args.ckpt, device=args.device or "cpu")
    monitor = PerformanceMonitor()

    @monitor.track_execution_time("decode_file")
    def run():
        stream = read_tokens(args.input)
        decode_file(stream, model, args.output, monitor=monitor)
        return stream

    stream = run()
    print(f"{stream.duration_seconds:.2f}s of audio -> {args.output}")
    if args.rtf:
        _report_rtf(monitor, "decode", stream.duration_seconds)
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    model = load_model(args.ckpt, device=args.device or "cpu")
    manifest = load_manifest(args.manifest)
    if args.split:
        manifest = manifest.split(args.split)
    report = index_distribution(model, manifest, out_csv=args.output, tag=args.split or Path(args.manifest).stem)
    print(json.dumps(report.summary(), indent=2))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _codec_config(args)
    report = mel_distance_eval(
        args.ref, args.deg, out_csv=args.output,
        spectral=cfg.mel_spectral, mel=cfg.mel, sample_rate=cfg.sample_rate,
    )
    print(f"mean={report.mean:.6f} std={report.std:.6f} pairs={len(report.distances)} unpaired={len(report.unpaired)}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _codec_config(args)
    grid = AblationGrid(**read_config_file(Path(args.grid)))
    manifest = load_manifest(args.manifest)
    clips = ManifestClips(manifest.split("train"), cfg.sample_rate, max(cfg.train.max_clip_seconds, *grid.context_windows))
    eval_entries = manifest.split(args.eval_split)
    eval_clips = ManifestClips(eval_entries, cfg.sample_rate, cfg.train.max_clip_seconds) if len(eval_entries) else None
    rows = ablation_grid(cfg, grid, clips, eval_clips, steps=args.steps, out_csv=args.output, device=args.device)
    failed = sum(row["status"] != "ok" for row in rows)
    print(f"{len(rows)} cells, {failed} failed -> {args.output}")
    return 0


def cmd_export_codebook(args: argparse.Namespace) -> int:
    model = load_model(args.ckpt)
    export_codebook_csv(model.quantizer.codebook, args.output)
    print(f"{model.codebook_size} codes -> {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokencodec", description="Single-codebook neural audio codec")
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    parser.add_argument("--log-format", choices=["standard", "json"], default=None)
    parser.add_argument("--device", default=None, help="auto, cpu, cuda, cuda:N or mps")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="TOML or YAML codec config")
        p.add_argument("--preset", default="75tps", help="Preset used when no --config is given")

    p = sub.add_parser("train", help="Train a codec on a manifest")
    add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", default=None, help="Run directory for metrics and checkpoints (default METRICS_DIR/<config name>)")
    p.add_argument("--steps", type=int, default=None, help="Stop after this many iterations")
    p.add_argument("--resume", default=None, help="Checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="Audio file to token file")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rtf", action="store_true", help="Print the real-time factor")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="Token file to audio file")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rtf", action="store_true", help="Print the real-time factor")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("analyze", help="Code-index distribution over a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", help="Mel distance between paired directories")
    add_config_args(p)
    p.add_argument("--ref", required=True)
    p.add_argument("--deg", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="Run the ablation grid at toy scale")
    add_config_args(p)
    p.add_argument("--grid", required=True, help="TOML or YAML file with the grid axes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--eval-split", default="test")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-codebook", help="Dump code vectors and usage as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_export_codebook)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(log_level=args.log_level, log_format=args.log_format)
    settings = get_settings()
    if settings.DETERMINISTIC:
        torch.use_deterministic_algorithms(True, warn_only=True)
    torch.manual_seed(settings.SEED)

    try:
        return args.func(args)
    except Exception as e:
        report = handle_codec_error(e)
        logger.error(f"{report['error_type']}: {report['message']}", exc_info=report["exit_code"] == 1)
        print(json.dumps(report, indent=2, default=str), file=sys.stderr)
        return report["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
