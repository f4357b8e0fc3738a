#!/usr/bin/env python3
"""
PlaceAlign - aligning Earth-observation embedding fields with POI semantics
Main entry point for the pipeline
"""

import argparse
import logging
import sys

from align.losses import EmptyBatchError
from align.trainer import TrainingError
from cli.commands import TASKS, cmd_embed, cmd_eval, cmd_pretrain, cmd_sweep, cmd_synth
from cli.config import ConfigError, apply_overrides, load_config
from fieldgrid.field import FieldFormatError, InvalidFieldError
from infer.regions import RegionError
from nn.checkpoint import CheckpointFormatError
from nn.functional import NonFiniteError
from poi.records import PoiFormatError
from poi.text_embeddings import EmptyTokensError, TextEmbeddingError
from tasks.samples import SampleFormatError
from tasks.sweep import AXES
from tasks.training import TaskError

PIPELINE_ERRORS = (ConfigError, FieldFormatError, InvalidFieldError, PoiFormatError, TextEmbeddingError,
                   EmptyTokensError, CheckpointFormatError, NonFiniteError, EmptyBatchError, TrainingError,
                   RegionError, SampleFormatError, TaskError, OSError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='PlaceAlign embedding alignment pipeline')
    parser.add_argument('--config', type=str, default=None,
                        help='Path to YAML config (default: built-in defaults)')
    parser.add_argument('--seed', type=int, default=None,
                        help='Seed for generation and pretraining (overrides config)')
    parser.add_argument('--threads', type=int, default=None,
                        help='Worker threads (default: available cores)')
    parser.add_argument('--out-dir', type=str, default=None,
                        help='Output directory (default: out)')
    parser.add_argument('--verbose', action='store_true',
                        help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('synth', help='Generate the synthetic city bundle')

    p = sub.add_parser('pretrain', help='Contrastive pretraining of the projection head')
    p.add_argument('--resume-from', type=str, default=None,
                   help='Checkpoint whose resume state continues the run')
    p.add_argument('--no-plots', action='store_true', help='Skip the training curve plot')

    p = sub.add_parser('embed', help='Point and region embeddings, aligned and raw')
    p.add_argument('--raw-pixel', action='store_true',
                   help='Feed each cell vector to the head without buffer pooling')

    p = sub.add_parser('eval', help='Train and score downstream task heads')
    p.add_argument('--task', choices=TASKS, required=True)
    p.add_argument('--embeddings', nargs='+', default=None, metavar='LABEL=PATH',
                   help='Embedding files to score (default: raw and aligned from embed)')
    p.add_argument('--scaled', action='store_true',
                   help='Report scores as percent and divergences scaled up')

    p = sub.add_parser('sweep', help='Sensitivity sweep over one factor')
    p.add_argument('--axis', choices=AXES, required=True)
    p.add_argument('--no-plots', action='store_true', help='Skip the sweep plot')
    return parser


def parse_blocks(items):
    if items is None:
        return None
    blocks = []
    for item in items:
        label, sep, path = item.partition('=')
        if not sep or not label or not path:
            raise ConfigError(f"--embeddings expects LABEL=PATH, got {item!r}")
        blocks.append((label, path))
    return blocks


def run(args) -> int:
    cfg = apply_overrides(load_config(args.config), seed=args.seed, threads=args.threads,
                          out_dir=args.out_dir).validate()
    if args.command == 'synth':
        return cmd_synth(cfg)
    if args.command == 'pretrain':
        return cmd_pretrain(cfg, resume_from=args.resume_from, plots=not args.no_plots)
    if args.command == 'embed':
        return cmd_embed(cfg, raw_pixel=args.raw_pixel)
    if args.command == 'eval':
        return cmd_eval(cfg, args.task, blocks=parse_blocks(args.embeddings), scaled=args.scaled)
    return cmd_sweep(cfg, args.axis, plots=not args.no_plots)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return run(args)
    except PIPELINE_ERRORS as e:
        logging.getLogger('main').error("%s failed: %s", args.command, e)
        return 1


if __name__ == '__main__':
    sys.exit(main())
