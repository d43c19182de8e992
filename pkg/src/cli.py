"""
Command-Line Interface

Subcommands:
    pretrain     train a source GAN from scratch on the source corpus
    transfer     initialize from a source checkpoint and train on the target corpus
    eval         proxy-FID of a checkpoint against a corpus
    generate     N x N sample grid
    interpolate  latent interpolation strip
    mix          style-mixing grid
    analyze      gamma/beta statistics, boxplot and sorted gamma matrix
    synth-data   write a synthetic corpus as PNG files
    sweep        transfer over a list of GmDn partitions

Every command writes ``config.resolved`` into its output directory. Exit
codes: 0 success, 2 config error, 3 data error, 4 numeric abort,
5 checkpoint error.

Version: 1.0.0
License: MIT License
"""

import argparse
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import structlog

from .architecture import ModelPartition, configure_models
from .config import (
    GPMode,
    RunConfig,
    TrainMode,
    get_settings,
    load_run_config,
)
from .data import ImageCorpus, SyntheticDomain, SyntheticSpec, resolve_corpus, synth_generate, write_corpus
from .errors import ConfigError, DomainError, GanTransferError
from .metrics import (
    FeatureExtractor,
    adafm_stats,
    bank_gammas,
    default_gamma_bank,
    frechet_distance,
    generate,
    interpolate,
    make_grid,
    plot_modulation_boxplot,
    sample_latents,
    save_png,
    sorted_gamma_matrix,
    style_mix,
)
from .models import SweepResult
from .monitoring import setup_structured_logging
from .train import train_loop
from .transfer import (
    load_checkpoint,
    restore_models,
    transfer_init,
    write_transfer_report,
)

logger = structlog.get_logger(__name__)

DOMAIN_EXIT_CODE = 4

# flag dest -> RunConfig field
FLAG_FIELDS = {
    "seed": "seed",
    "mode": "mode",
    "gm": "gm",
    "dn": "dn",
    "iters": "total_iters",
    "warmup": "warmup_iters",
    "batch": "batch",
    "lr": "lr",
    "r1_gamma": "r1_gamma",
    "latent_dim": "latent_dim",
    "limit_n": "limit_n",
    "resolution": "resolution",
    "regime": "regime",
    "grid": "grid_size",
    "steps": "interp_steps",
    "mix_block": "mix_block",
    "count": "synth_count",
    "eval_every": "eval_every",
    "snapshot_every": "snapshot_every",
    "fid_samples": "fid_samples",
    "pairs": "sweep_pairs",
}


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="key=value configuration file")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--resolution", type=int)
    parser.add_argument("--latent-dim", dest="latent_dim", type=int)
    parser.add_argument("--grayscale", action="store_true", default=None)
    parser.add_argument("--data", help="image directory or synth:<domain>")


def _add_training(parser: argparse.ArgumentParser):
    parser.add_argument("--iters", type=int)
    parser.add_argument("--warmup", type=int)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--r1-gamma", dest="r1_gamma", type=float)
    parser.add_argument("--gp-both", dest="gp_both", action="store_true", default=None,
                        help="penalize real and fake samples")
    parser.add_argument("--early-stop", dest="early_stop", action="store_true", default=None)
    parser.add_argument("--eval-every", dest="eval_every", type=int)
    parser.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    parser.add_argument("--fid-samples", dest="fid_samples", type=int)


def _add_transfer(parser: argparse.ArgumentParser):
    parser.add_argument("--source-ckpt", dest="source_ckpt", type=Path)
    parser.add_argument("--mode", choices=[m.value for m in TrainMode])
    parser.add_argument("--gm", type=int)
    parser.add_argument("--dn", type=int)
    parser.add_argument("--limit-n", dest="limit_n", type=int)
    parser.add_argument("--regime", choices=["standard", "extreme"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ganxfer",
        description="Transfer pretrained GAN filters to small target domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the source model from scratch")
    _add_common(p)
    _add_training(p)

    p = sub.add_parser("transfer", help="transfer a source checkpoint to the target corpus")
    _add_common(p)
    _add_training(p)
    _add_transfer(p)

    p = sub.add_parser("eval", help="proxy-FID of a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--fid-samples", dest="fid_samples", type=int)

    p = sub.add_parser("generate", help="write an N x N sample grid")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--grid", type=int)

    p = sub.add_parser("interpolate", help="write a latent interpolation strip")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("mix", help="write a style-mixing grid")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--grid", type=int)
    p.add_argument("--mix-block", dest="mix_block", type=int)

    p = sub.add_parser("analyze", help="modulation statistics")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--compare", type=Path, nargs="*", default=[],
                   help="further checkpoints for the sorted gamma matrix")
    p.add_argument("--bank", help="conv bank for the sorted gamma matrix")

    p = sub.add_parser("synth-data", help="write a synthetic corpus as PNG files")
    _add_common(p)
    p.add_argument("--domain", choices=[d.value for d in SyntheticDomain], required=True)
    p.add_argument("--count", type=int)

    p = sub.add_parser("sweep", help="transfer over several GmDn partitions")
    _add_common(p)
    _add_training(p)
    _add_transfer(p)
    p.add_argument("--pairs", help="comma-separated GmDn labels")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Translate parsed flags into RunConfig overrides"""
    overrides: Dict[str, Any] = {}
    for dest, field in FLAG_FIELDS.items():
        if field is not None and getattr(args, dest, None) is not None:
            overrides[field] = getattr(args, dest)
    if getattr(args, "grayscale", None):
        overrides["grayscale"] = True
    if getattr(args, "early_stop", None):
        overrides["early_stop"] = True
    if getattr(args, "gp_both", None):
        overrides["gp_mode"] = GPMode.REAL_AND_FAKE
    if getattr(args, "bank", None):
        overrides["gamma_bank"] = args.bank
    data = getattr(args, "data", None)
    if data is not None:
        overrides["source_data" if args.command == "pretrain" else "target_data"] = data
    return overrides


def _target_corpus(cfg: RunConfig) -> ImageCorpus:
    return resolve_corpus(cfg.target_data, cfg.resolution, cfg.grayscale,
                          cfg.synth_count, cfg.seed, cfg.limit_n)


def cmd_pretrain(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    source_cfg = cfg.model_copy(update={"mode": TrainMode.SCRATCH, "head_type": cfg.pretrain_head})
    corpus = resolve_corpus(cfg.source_data, cfg.resolution, cfg.grayscale,
                            cfg.synth_count, cfg.seed)
    generator, discriminator, partition = configure_models(source_cfg)
    logger.info("pretraining", images=len(corpus), provenance=corpus.provenance,
                iterations=cfg.total_iters)
    train_loop((generator, discriminator), corpus, source_cfg, out, partition=partition)


def run_transfer(cfg: RunConfig, source_ckpt: Optional[Path], out: Path):
    """Build the target model for ``cfg.mode``, initialize it and train"""
    corpus = _target_corpus(cfg)
    generator, discriminator, partition = configure_models(cfg)
    source = None
    if cfg.mode == TrainMode.SCRATCH:
        if source_ckpt is not None:
            logger.warning("source checkpoint ignored in scratch mode", ckpt=str(source_ckpt))
    elif source_ckpt is not None:
        source = load_checkpoint(source_ckpt)
    report = transfer_init(source, generator, discriminator, partition, cfg.mode)
    out.mkdir(parents=True, exist_ok=True)
    write_transfer_report(report, out)
    logger.info("transferring", mode=cfg.mode.value, partition=partition.label,
                images=len(corpus), provenance=corpus.provenance)
    return train_loop((generator, discriminator), corpus, cfg, out, partition=partition)


def cmd_transfer(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    run_transfer(cfg, args.source_ckpt, out)


def cmd_eval(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    ckpt_cfg, generator, _ = restore_models(load_checkpoint(args.ckpt))
    corpus = _target_corpus(cfg)
    extractor = FeatureExtractor()
    count = min(cfg.fid_samples, len(corpus))
    real = extractor.fit(corpus.images[:count])
    fake = extractor.fit(generate(generator, sample_latents(cfg.fid_samples, ckpt_cfg.latent_dim,
                                                            cfg.eval_seed)))
    value = frechet_distance(real, fake)
    pd.DataFrame([{"ckpt": str(args.ckpt), "real_images": count,
                   "fake_images": cfg.fid_samples, "pfid": value}]).to_csv(out / "eval.csv", index=False)
    logger.info("evaluation", ckpt=str(args.ckpt), pfid=value)
    print(f"pfid={value:.6f}")


def cmd_generate(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    ckpt_cfg, generator, _ = restore_models(load_checkpoint(args.ckpt))
    z = sample_latents(cfg.grid_size ** 2, ckpt_cfg.latent_dim, cfg.seed)
    save_png(make_grid(generate(generator, z), nrow=cfg.grid_size), out / "samples.png")


def cmd_interpolate(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    ckpt_cfg, generator, _ = restore_models(load_checkpoint(args.ckpt))
    z = sample_latents(2, ckpt_cfg.latent_dim, cfg.seed)
    frames = interpolate(generator, z[0], z[1], cfg.interp_steps)
    save_png(make_grid(frames, nrow=cfg.interp_steps), out / "interpolation.png")


def cmd_mix(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    """Grid: top row destinations, left column sources, cells mixes"""
    ckpt_cfg, generator, _ = restore_models(load_checkpoint(args.ckpt))
    k = cfg.grid_size
    z = sample_latents(2 * k, ckpt_cfg.latent_dim, cfg.seed)
    sources, dests = z[:k], z[k:]
    src_images = generate(generator, sources)
    dst_images = generate(generator, dests)
    blank = np.full_like(src_images[:1], -1.0)
    tiles: List[np.ndarray] = [blank, dst_images]
    for i in range(k):
        row = style_mix(generator, np.repeat(sources[i:i + 1], k, axis=0), dests, cfg.mix_block)
        tiles.extend([src_images[i:i + 1], row])
    save_png(make_grid(np.concatenate(tiles), nrow=k + 1), out / "mix.png")


def cmd_analyze(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    _, generator, _ = restore_models(load_checkpoint(args.ckpt))
    report = adafm_stats(generator)
    report.to_frame().to_csv(out / "adafm_stats.csv", index=False)
    plot_modulation_boxplot(generator, out / "adafm_boxplot.png")

    bank = cfg.gamma_bank or default_gamma_bank(generator)
    rows = [bank_gammas(generator, bank)]
    labels = [str(args.ckpt)]
    for path in args.compare:
        _, other, _ = restore_models(load_checkpoint(path))
        rows.append(bank_gammas(other, bank))
        labels.append(str(path))
    result = sorted_gamma_matrix(rows)
    frame = pd.DataFrame(result.matrix, index=labels,
                         columns=[f"f{j}" for j in result.permutation])
    frame.to_csv(out / "gamma_sorted.csv", index_label="checkpoint")
    logger.info("analysis written", groups=len({s.group for s in report.stats}), bank=bank,
                domains=len(rows), dominant=[len(d) for d in result.dominant])


def cmd_synth_data(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    spec = SyntheticSpec(domain=SyntheticDomain(args.domain), count=cfg.synth_count,
                         seed=cfg.seed, size=cfg.resolution, grayscale=cfg.grayscale)
    write_corpus(synth_generate(spec), out / "images")


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace, out: Path) -> None:
    if cfg.mode == TrainMode.SCRATCH or cfg.mode == TrainMode.FINETUNE_ALL:
        raise ConfigError(f"sweep needs a partitioned mode, got {cfg.mode.value}")
    results = []
    for label in cfg.sweep_pairs:
        partition = ModelPartition.parse(label)
        run_cfg = cfg.model_copy(update={"gm": partition.m, "dn": partition.n})
        outcome = run_transfer(run_cfg, args.source_ckpt, out / partition.label)
        results.append(SweepResult(partition=partition.label, gm=partition.m, dn=partition.n,
                                   best_pfid=outcome.summary.best_pfid,
                                   final_pfid=outcome.summary.final_pfid,
                                   iterations_completed=outcome.summary.iterations_completed))
    pd.DataFrame([r.model_dump() for r in results]).to_csv(out / "gmdn_sweep.csv", index=False)


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace, Path], None]] = {
    "pretrain": cmd_pretrain,
    "transfer": cmd_transfer,
    "eval": cmd_eval,
    "generate": cmd_generate,
    "interpolate": cmd_interpolate,
    "mix": cmd_mix,
    "analyze": cmd_analyze,
    "synth-data": cmd_synth_data,
    "sweep": cmd_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_structured_logging(get_settings())
    try:
        cfg = load_run_config(args.config, overrides_from_args(args))
        out: Path = args.out
        out.mkdir(parents=True, exist_ok=True)
        cfg.write_resolved(out / "config.resolved")
        COMMANDS[args.command](cfg, args, out)
    except GanTransferError as exc:
        logger.error("command failed", command=args.command, error=str(exc),
                     exit_code=exc.exit_code)
        return exc.exit_code
    except DomainError as exc:
        logger.error("command failed", command=args.command, error=str(exc),
                     channel=exc.channel, exit_code=DOMAIN_EXIT_CODE)
        return DOMAIN_EXIT_CODE
    return 0
