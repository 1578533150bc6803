"""Desk-scale end-to-end run: corpus, training, and held-out comparison.

Generates a small phantom corpus with the imaging CLI, reconstructs
subspace bases at several accelerations, trains the refiner on the
basis archives, and checks that the refined method improves on the
plain subspace reconstruction for held-out subjects at R=8.

Everything heavy lands under --work; the artifacts worth keeping
(weights, loss curves, split, parity dump, results) land in --fixtures.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

ACCELERATIONS = (4, 8, 10)
EVAL_R = 8


def run(cmd):
    print("+", " ".join(cmd), flush=True)
    subprocess.run(cmd, check=True)


def drums_cli(*args):
    run([sys.executable, "-m", "drums.cli"] + list(args))


def trainer_cli(*args):
    run([sys.executable, "-m", "drums_trainer.cli"] + list(args))


def make_corpus(data_dir, n_subjects, seed):
    if os.path.exists(os.path.join(data_dir, "dataset.json")):
        print(f"corpus already present in {data_dir}")
        return
    drums_cli(
        "phantom", "--out", data_dir,
        "--subjects", str(n_subjects),
        "--modalities", "T1",
        "--seed", str(seed),
    )


def subjects_of(data_dir):
    with open(os.path.join(data_dir, "dataset.json")) as fh:
        return json.load(fh)["subjects"]


def recon_bases(data_dir, recon_dir, subjects):
    """Reconstruct every subject with the plain subspace method.

    R=1 runs with few iterations: the data are fully sampled, so the
    solver converges almost immediately and the result serves as the
    training target for the undersampled runs.
    """
    os.makedirs(recon_dir, exist_ok=True)
    for subject in subjects:
        for r in (1,) + ACCELERATIONS:
            stem = f"{subject}_T1_lowrank_r{r:02d}"
            if os.path.exists(os.path.join(recon_dir, stem + "_basis.tnsr")):
                continue
            t0 = time.perf_counter()
            args = [
                "recon", "--dataset", data_dir, "--subject", subject,
                "--modality", "T1", "--method", "lowrank",
                "-R", str(r), "--out", recon_dir, "--save-basis",
            ]
            if r == 1:
                args += ["--iterations", "10"]
            drums_cli(*args)
            print(f"{stem}: {time.perf_counter() - t0:.1f}s", flush=True)


def train(recon_dir, weights_path, epochs):
    """Desk-scale settings: 48 pairs are far too few for the published
    batch size of 16 (3 steps per epoch); small batches buy the step
    count the epoch budget denies, and dropout is off because the
    desk-size network is not the 31M-parameter configuration the 0.5
    rate was tuned for.
    """
    trainer_cli(
        "train", "--data", recon_dir, "--out", weights_path,
        "--epochs", str(epochs),
        "--batch-size", "2",
        "--dropout", "0.0",
    )


def nrmse_vs_truth(recon_path, truth_path):
    from drums import tensor_io
    from drums.metrics import nrmse

    recon = tensor_io.read_archive_dict(recon_path)["stack"]
    truth = tensor_io.read_archive_dict(truth_path)["stack"]
    return float(nrmse(np.abs(recon), np.abs(truth)))


def compare_held_out(data_dir, recon_dir, drums_dir, weights_path, test_subjects):
    rows = []
    for subject in test_subjects:
        truth_path = os.path.join(data_dir, subject, "T1", "truth.tnsr")
        low_path = os.path.join(
            recon_dir, f"{subject}_T1_lowrank_r{EVAL_R:02d}.tnsr")
        drums_path = os.path.join(
            drums_dir, f"{subject}_T1_drums_r{EVAL_R:02d}.tnsr")
        if not os.path.exists(drums_path):
            drums_cli(
                "recon", "--dataset", data_dir, "--subject", subject,
                "--modality", "T1", "--method", "drums",
                "-R", str(EVAL_R), "--weights", weights_path,
                "--out", drums_dir,
            )
        rows.append({
            "subject": subject,
            "nrmse_lowrank": nrmse_vs_truth(low_path, truth_path),
            "nrmse_drums": nrmse_vs_truth(drums_path, truth_path),
        })
        print(rows[-1], flush=True)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", default="/tmp/desk")
    ap.add_argument("--fixtures", default=os.path.join(
        os.path.dirname(os.path.abspath(__file__)), "..", "fixtures"))
    ap.add_argument("--subjects", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--parity-seed", type=int, default=3)
    args = ap.parse_args(argv)

    data_dir = os.path.join(args.work, "data")
    recon_dir = os.path.join(args.work, "recon")
    drums_dir = os.path.join(args.work, "drums")
    fixtures = os.path.abspath(args.fixtures)
    os.makedirs(fixtures, exist_ok=True)
    weights_path = os.path.join(fixtures, "desk_weights.tnsr")

    make_corpus(data_dir, args.subjects, args.seed)
    subjects = subjects_of(data_dir)
    recon_bases(data_dir, recon_dir, subjects)

    if not os.path.exists(weights_path):
        train(recon_dir, weights_path, args.epochs)
    trainer_cli(
        "dump-parity", "--weights", weights_path,
        "--seed", str(args.parity_seed),
        "--out", os.path.join(fixtures, "desk_parity.tnsr"),
    )

    with open(os.path.splitext(weights_path)[0] + "_split.json") as fh:
        split = json.load(fh)
    rows = compare_held_out(
        data_dir, recon_dir, drums_dir, weights_path, split["test"])
    mean_low = float(np.mean([r["nrmse_lowrank"] for r in rows]))
    mean_drums = float(np.mean([r["nrmse_drums"] for r in rows]))
    results = {
        "acceleration": EVAL_R,
        "epochs": args.epochs,
        "test_subjects": split["test"],
        "per_subject": rows,
        "mean_nrmse_lowrank": mean_low,
        "mean_nrmse_drums": mean_drums,
    }
    with open(os.path.join(fixtures, "desk_results.json"), "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
    print(f"mean NRMSE lowrank={mean_low:.6f} drums={mean_drums:.6f}")
    if mean_drums > mean_low:
        print("FAILED: refined method did not improve on the subspace baseline")
        return 1
    print("ok: refined method matches or improves on the baseline")
    return 0


if __name__ == "__main__":
    sys.exit(main())
