"""Command-line interface.

Subcommands cover the full workflow on synthetic data:

    drums phantom  --out data/ --subjects 4
    drums recon    --dataset data/ --subject subj00 --modality T1 \
                   --method espirit -R 8 --out runs/espirit_r8/
    drums fit      --input runs/espirit_r8/subj00_T1_espirit_r08.tnsr \
                   --modality T1 --out maps/
    drums eval     --test runs/espirit_r8/subj00_T1_espirit_r08.tnsr \
                   --dataset data/ --subject subj00 --modality T1 \
                   --out eval/espirit_r8_subj00.csv
    drums report   --inputs 'eval/*.csv' --out summary.csv

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import __version__, tensor_io
from .fitting import fit_map
from .phantom import (
    DEFAULT_ACCELERATIONS,
    DEFAULT_ACS_LINES,
    contrast_times,
    jittered_spec,
    write_subject,
)
from .pipeline import (
    ConfigError,
    DataError,
    evaluate_map,
    evaluate_stack,
    load_config,
    load_truth,
    read_metrics_csv,
    reconstruct,
    save_panel_png,
    save_recon,
    write_manifest,
    write_metrics_csv,
)
from .subspace import prepare_basis, save_basis
from .tensor_io import ArchiveError, Tensor, write_archive


def _add_phantom(sub):
    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--grid", type=int, default=192)
    p.add_argument("--coils", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.0,
                   help="relative k-space noise level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modalities", default="T1,T2")
    p.add_argument("--accelerations", default=",".join(str(r) for r in DEFAULT_ACCELERATIONS))
    p.add_argument("--acs-lines", type=int, default=DEFAULT_ACS_LINES)


def _add_recon(sub):
    p = sub.add_parser("recon", help="reconstruct stored acquisitions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--subject", required=True,
                   help="subject directory name, or 'all'")
    p.add_argument("--modality", default=None)
    p.add_argument("--method", default=None)
    p.add_argument("-R", "--acceleration", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default="")
    p.add_argument("--weights", default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--use-stored-maps", action="store_true", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--png", action="store_true")
    p.add_argument("--save-basis", action="store_true",
                   help="also store the spatial basis archive (lowrank/drums)")


def _add_fit(sub):
    p = sub.add_parser("fit", help="fit parameter maps from a stack archive")
    p.add_argument("--input", required=True)
    p.add_argument("--entry", default="stack")
    p.add_argument("--modality", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true")


def _add_eval(sub):
    p = sub.add_parser("eval", help="compare a reconstruction against truth")
    p.add_argument("--test", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--modality", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="")
    p.add_argument("-R", "--acceleration", type=int, default=0)
    p.add_argument("--with-maps", action="store_true",
                   help="also fit both stacks and compare parameter maps")
    p.add_argument("--png", default="")


def _add_report(sub):
    p = sub.add_parser("report", help="aggregate metric csv files")
    p.add_argument("--inputs", required=True, help="glob of eval csv files")
    p.add_argument("--out", required=True)


def _parser():
    ap = argparse.ArgumentParser(
        prog="drums",
        description="accelerated cardiac parametric mapping on synthetic phantoms",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    _add_phantom(sub)
    _add_recon(sub)
    _add_fit(sub)
    _add_eval(sub)
    _add_report(sub)
    return ap


def _cmd_phantom(args):
    modalities = tuple(m.strip() for m in args.modalities.split(",") if m.strip())
    for m in modalities:
        if m not in ("T1", "T2"):
            raise ConfigError(f"unknown modality {m!r}")
    try:
        accelerations = tuple(
            int(r) for r in args.accelerations.split(",") if r.strip()
        )
    except ValueError as exc:
        raise ConfigError(f"bad accelerations: {exc}")
    if args.subjects < 1:
        raise ConfigError("subjects must be >= 1")
    os.makedirs(args.out, exist_ok=True)
    index = {"subjects": [], "modalities": list(modalities),
             "accelerations": list(accelerations)}
    for i in range(args.subjects):
        name = f"subj{i:02d}"
        spec = jittered_spec(
            subject_seed=args.seed * 1000 + i,
            grid=(args.grid, args.grid),
            n_coils=args.coils,
            noise_relative=args.noise,
        )
        write_subject(
            os.path.join(args.out, name),
            spec,
            modalities=modalities,
            accelerations=accelerations,
            acs_lines=args.acs_lines,
        )
        index["subjects"].append(name)
        print(f"wrote {name}")
    with open(os.path.join(args.out, "dataset.json"), "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    write_manifest(args.out, "phantom", vars(args))
    return 0


def _recon_one(subject_dir, subject, cfg, args):
    result = reconstruct(subject_dir, cfg)
    times = contrast_times(cfg.modality)
    stem = f"{subject}_{cfg.modality}_{cfg.method}_r{cfg.acceleration:02d}"
    out_path = os.path.join(args.out, stem + ".tnsr")
    save_recon(out_path, result, times)
    if args.save_basis:
        save_basis(
            os.path.join(args.out, stem + "_basis.tnsr"),
            result.basis,
            prepare_basis(result.basis),
        )
    if result.report is not None:
        result.report.write_csv(os.path.join(args.out, stem + "_convergence.csv"))
    if args.png:
        save_panel_png(
            os.path.join(args.out, stem + ".png"),
            [result.stack[t] for t in range(result.stack.shape[0])],
        )
    print(
        f"{stem}: method={cfg.method} "
        f"total={result.timings_s.get('total', 0.0):.2f}s"
    )
    return out_path


def _cmd_recon(args):
    overrides = {
        "method": args.method,
        "modality": args.modality,
        "acceleration": args.acceleration,
        "rank": args.rank,
        "weights_path": args.weights,
        "lam": args.lam,
        "iterations": args.iterations,
        "use_stored_maps": args.use_stored_maps,
        "seed": args.seed,
    }
    cfg = load_config(args.config, overrides)
    if args.save_basis and cfg.method not in ("lowrank", "drums"):
        raise ConfigError("--save-basis requires a subspace method (lowrank/drums)")
    if not os.path.isdir(args.dataset):
        raise DataError(f"dataset directory not found: {args.dataset}")
    if args.subject == "all":
        index_path = os.path.join(args.dataset, "dataset.json")
        if os.path.exists(index_path):
            with open(index_path) as fh:
                subjects = json.load(fh)["subjects"]
        else:
            subjects = sorted(
                d for d in os.listdir(args.dataset)
                if os.path.isdir(os.path.join(args.dataset, d))
            )
    else:
        subjects = [args.subject]
    os.makedirs(args.out, exist_ok=True)
    for subject in subjects:
        subject_dir = os.path.join(args.dataset, subject)
        if not os.path.isdir(subject_dir):
            raise DataError(f"subject directory not found: {subject_dir}")
        _recon_one(subject_dir, subject, cfg, args)
    settings = {k: v for k, v in vars(args).items() if v is not None}
    write_manifest(args.out, "recon", settings)
    return 0


def _cmd_fit(args):
    if args.modality not in ("T1", "T2"):
        raise ConfigError(f"modality must be T1 or T2, got {args.modality!r}")
    if not os.path.exists(args.input):
        raise DataError(f"input archive not found: {args.input}")
    entries = tensor_io.read_archive_dict(args.input)
    if args.entry not in entries:
        raise DataError(f"{args.input}: no entry {args.entry!r}")
    stack = entries[args.entry]
    if "times_ms" in entries:
        times = entries["times_ms"].astype(np.float64)
    else:
        times = contrast_times(args.modality)
    pm = fit_map(stack.astype(np.complex128), times, args.modality)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.input))[0] + f"_{args.modality.lower()}map"
    out_path = os.path.join(args.out, stem + ".tnsr")
    entries_out = [
        Tensor("values", tensor_io.as_real32(pm.values)),
        Tensor("residual", tensor_io.as_real32(pm.residual)),
        Tensor("flags", tensor_io.as_real32(pm.flags)),
    ]
    for key, arr in sorted(pm.aux.items()):
        entries_out.append(Tensor(f"aux_{key}", tensor_io.as_real32(arr)))
    write_archive(out_path, entries_out)
    if args.png:
        hi = pm.bounds[1] if pm.modality == "T2" else 2200.0
        save_panel_png(out_path[:-5] + ".png", [pm.values], window=(0.0, hi))
    write_manifest(args.out, "fit", vars(args))
    print(f"wrote {out_path}")
    return 0


def _cmd_eval(args):
    if not os.path.exists(args.test):
        raise DataError(f"test archive not found: {args.test}")
    test = tensor_io.read_archive_dict(args.test)
    if "stack" not in test:
        raise DataError(f"{args.test}: no 'stack' entry")
    subject_dir = os.path.join(args.dataset, args.subject)
    truth = load_truth(subject_dir, args.modality)
    roi = truth["roi"] > 0.5
    rows = evaluate_stack(test["stack"], truth["stack"])
    times = truth["times_ms"].astype(np.float64)
    test_map = fit_map(test["stack"].astype(np.complex128), times, args.modality)
    rows += evaluate_map(test_map.values, truth["values"].astype(np.float64), roi)
    meta = {
        "subject": args.subject,
        "modality": args.modality,
        "method": args.method,
        "acceleration": args.acceleration,
    }
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(args.out, rows, meta)
    if args.png:
        save_panel_png(
            args.png,
            [np.abs(test["stack"][0]), np.abs(truth["stack"][0]),
             np.abs(np.abs(test["stack"][0].astype(np.complex128))
                    - np.abs(truth["stack"][0].astype(np.complex128)))],
        )
    for row in rows:
        print(f"{row.metric}: {row.value:.6g}")
    return 0


def _cmd_report(args):
    paths = sorted(glob.glob(args.inputs))
    if not paths:
        raise DataError(f"no files match {args.inputs!r}")
    rows = []
    for p in paths:
        rows.extend(read_metrics_csv(p))
    groups = {}
    for row in rows:
        key = (row.get("method", ""), row.get("modality", ""),
               row.get("acceleration", ""), row["metric"])
        groups.setdefault(key, []).append(float(row["value"]))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("method,modality,acceleration,metric,mean,min,max,count\n")
        for key in sorted(groups):
            vals = groups[key]
            fh.write(
                ",".join(
                    [*key,
                     f"{np.mean(vals):.10g}", f"{np.min(vals):.10g}",
                     f"{np.max(vals):.10g}", str(len(vals))]
                )
                + "\n"
            )
    print(f"wrote {args.out} ({len(groups)} aggregate rows from {len(paths)} files)")
    return 0


_COMMANDS = {
    "phantom": _cmd_phantom,
    "recon": _cmd_recon,
    "fit": _cmd_fit,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ArchiveError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
