"""Command-line interface.

    drums-trainer train --data basis/ --out weights.tnsr --epochs 50
    drums-trainer export-identity --out identity.tnsr --base-filters 16
    drums-trainer dump-parity --weights weights.tnsr --seed 0 \
                  --out parity.tnsr

Exit codes: 0 success, 1 diverged, 2 configuration error, 3 data
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .archive import ArchiveFormatError
from .data import PairingError, assemble, scan_pairs, split_subjects
from .model import ArchDescriptor, export_identity, export_weights
from .parity import dump_parity
from .train import DivergenceError, TrainingConfig, train, write_history


def _build_parser():
    ap = argparse.ArgumentParser(prog="drums-trainer", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the refiner on stored basis pairs")
    p.add_argument("--data", required=True, help="directory of basis archives")
    p.add_argument("--out", required=True, help="weight archive to write")
    p.add_argument("--curves", default="", help="loss csv (default: next to --out)")
    p.add_argument("--epochs", type=int, default=50,
                   help="desk-scale default; full scale uses 500")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--base-filters", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("export-identity", help="write pass-through weights")
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--base-filters", type=int, default=16)
    p.add_argument("--channels", type=int, default=6)
    p.set_defaults(fn=_cmd_identity)

    p = sub.add_parser("dump-parity", help="record a seeded forward pass")
    p.add_argument("--weights", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_parity)
    return ap


def _cmd_train(args):
    pairs = scan_pairs(args.data)
    subjects = sorted({p.subject for p in pairs})
    train_subj, val_subj, test_subj = split_subjects(subjects, args.split_seed)
    x_train, y_train = assemble(pairs, train_subj)
    x_val, y_val = assemble(pairs, val_subj)
    cfg = TrainingConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        dropout=args.dropout,
        levels=args.levels,
        base_filters=args.base_filters,
        seed=args.seed,
    )
    print(
        f"training on {x_train.shape[0]} pairs from {len(train_subj)} subjects, "
        f"validating on {x_val.shape[0]}"
    )
    model, history = train(x_train, y_train, x_val, y_val, cfg)
    count = export_weights(model, args.out)
    curves = args.curves or os.path.splitext(args.out)[0] + "_curves.csv"
    write_history(curves, history)
    split_path = os.path.splitext(args.out)[0] + "_split.json"
    with open(split_path, "w") as fh:
        json.dump(
            {"train": train_subj, "val": val_subj, "test": test_subj}, fh, indent=1
        )
    last = history[-1]
    print(
        f"exported {count} tensors ({model.parameter_total()} parameters) "
        f"to {args.out}"
    )
    print(
        f"epoch {last['epoch']}: train {last['train_loss']:.4f} "
        f"val {last['val_loss']:.4f}"
    )
    return 0


def _cmd_identity(args):
    arch = ArchDescriptor(
        levels=args.levels,
        base_filters=args.base_filters,
        in_channels=args.channels,
        out_channels=args.channels,
        dropout=0.0,
    )
    export_identity(arch, args.out)
    print(f"wrote identity weights to {args.out}")
    return 0


def _cmd_parity(args):
    if not os.path.exists(args.weights):
        raise PairingError(f"weight archive not found: {args.weights}")
    names = dump_parity(args.weights, args.seed, args.out)
    print(f"dumped {len(names)} tensors to {args.out}")
    return 0


def main(argv=None):
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
        return args.fn(args)
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (PairingError, ArchiveFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
