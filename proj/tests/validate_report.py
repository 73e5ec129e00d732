"""Trains a tiny model through the CLI, profiles it and checks the report against its schema."""

import csv
import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import jsonschema

TINY_CONFIG = {
    "dataset": {"classes": 2, "samples_per_class": 5, "num_joints": 20, "frames": 8, "holdout_every": 5},
    "preprocessing": {"target_T": 8, "batch": 4},
    "ssc": {"spike_steps": 2, "hidden_channels": 8},
    "smf": {"smic_hidden": 8},
    "blocks": {"width": 16, "dropout": 0.0},
    "optimizer": {"lr": 0.05, "epochs": 1},
    "kd": {"mode": "none"},
}

EXIT_CONFIG, EXIT_DATA = 2, 3


def run(binary, *args, expect=0):
    proc = subprocess.run([binary, *args], capture_output=True, text=True)
    if proc.returncode != expect:
        sys.exit(f"{' '.join(args)}: exit {proc.returncode}, expected {expect}\n{proc.stdout}{proc.stderr}")


def close(a, b):
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12)


def main():
    binary, schema_path, workdir = sys.argv[1], Path(sys.argv[2]), Path(sys.argv[3])
    shutil.rmtree(workdir, ignore_errors=True)
    workdir.mkdir(parents=True)
    config = workdir / "tiny.json"
    config.write_text(json.dumps(TINY_CONFIG))
    out = workdir / "run"
    base = ["--config", str(config), "--out", str(out)]

    run(binary, *base, "profile", expect=EXIT_DATA)  # no checkpoint yet
    run(binary, *base, "train")
    run(binary, *base, "profile", "--ann-equivalent")

    report = json.loads((out / "energy_report.json").read_text())
    jsonschema.validate(report, json.loads(schema_path.read_text()))

    layers = report["layers"]
    if sum(l["first_layer"] for l in layers) != 1:
        sys.exit("expected exactly one first layer")
    if not close(sum(l["flops"] for l in layers), report["totals"]["flops"]):
        sys.exit("layer FLOPs do not add up to the total")
    if not close(sum(l["sops"] for l in layers), report["totals"]["sops"]):
        sys.exit("layer SOPs do not add up to the total")
    for l in layers:
        if not close(l["sops"], l["r"] * l["S"] * l["flops"]):
            sys.exit(f"{l['id']}: sops != r * S * flops")
    if not report["totals"]["energy_mJ"] < report["ann_equivalent_mJ"]:
        sys.exit("SNN energy is not below the ANN equivalent")

    with open(out / "energy_report.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    if [r["id"] for r in rows[:-1]] != [l["id"] for l in layers] or rows[-1]["id"] != "total":
        sys.exit("CSV rows do not mirror the JSON layers")
    if not close(float(rows[-1]["sops"]), report["totals"]["sops"]):
        sys.exit("CSV total disagrees with JSON")

    run(binary, *base, "profile")
    if "ann_equivalent_mJ" in json.loads((out / "energy_report.json").read_text()):
        sys.exit("ann_equivalent_mJ present without --ann-equivalent")

    config.write_text(json.dumps({"blocks": {"width": "wide"}}))
    run(binary, *base, "profile", expect=EXIT_CONFIG)
    print(f"energy report valid: {len(layers)} layers, {report['totals']['energy_mJ']:.6g} mJ")


if __name__ == "__main__":
    main()
