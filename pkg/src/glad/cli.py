"""Command-line surface: synth, gap, train, eval, ablate.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 numeric failure.
Worker count may be set via the GLAD_WORKERS environment variable; all
computation is deterministic regardless of its value.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import model as glad_model
from .debias import build_background_bank
from .gapmetrics import (GapReport, SceneFeatureSet, accuracy_gap,
                         scene_distance, temporal_distance)
from .synthdata import (DatasetError, DomainSpec, generate_domain,
                        read_dataset, spec_from_dict, spec_to_dict,
                        write_dataset)
from .trainer import (NumericError, TrainConfig, config_from_dict,
                      config_to_dict, evaluate, format_ablation_table,
                      run_ablation_matrix, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def default_benchmark_specs(seed: int = 0) -> dict:
    """The planted two-domain benchmark: class-correlated long source videos
    versus fixed-checkerboard short target videos."""
    return {
        "source_train": DomainSpec(n_videos=600, length_range=(48, 96),
                                   background_mode="class_correlated",
                                   bias_rho=1.0, seed=seed, domain="source"),
        "source_test": DomainSpec(n_videos=120, length_range=(48, 96),
                                  background_mode="class_correlated",
                                  bias_rho=1.0, seed=seed + 1000, domain="source"),
        "target_train": DomainSpec(n_videos=300, length_range=(8, 24),
                                   background_mode="fixed_checkerboard",
                                   seed=seed + 1, domain="target"),
        "target_test": DomainSpec(n_videos=120, length_range=(8, 24),
                                  background_mode="fixed_checkerboard",
                                  seed=seed + 1001, domain="target"),
    }


def resolve_split_dir(path: str) -> str:
    """Accept either a split directory or a domain directory holding train/."""
    if os.path.exists(os.path.join(path, "manifest.json")):
        return path
    train = os.path.join(path, "train")
    if os.path.exists(os.path.join(train, "manifest.json")):
        return train
    raise FileNotFoundError(f"no dataset found at {path}")


def _workers() -> int:
    raw = os.environ.get("GLAD_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError as e:
        raise UsageError(f"GLAD_WORKERS must be an integer, got {raw!r}") from e
    if n < 1:
        raise UsageError("GLAD_WORKERS must be >= 1")
    return n


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.spec:
        with open(args.spec) as f:
            raw = json.load(f)
        specs = {k: spec_from_dict(v) for k, v in raw.items()}
    else:
        specs = default_benchmark_specs(seed)
    if args.dry_run:
        for name, spec in specs.items():
            print(f"{name}: {json.dumps(spec_to_dict(spec))}")
        return EXIT_OK
    out = args.out or "datasets"
    layout = {"source_train": ("source", "train"), "source_test": ("source", "test"),
              "target_train": ("target", "train"), "target_test": ("target", "test")}
    for name, spec in specs.items():
        domain, split = layout.get(name, (name, ""))
        directory = os.path.join(out, domain, split) if split else os.path.join(out, name)
        manifest, samples = generate_domain(spec)
        write_dataset(manifest, samples, directory)
        print(f"wrote {len(samples)} videos to {directory}")
    src = specs.get("source_train")
    tgt = specs.get("target_train")
    if src and tgt:
        print(f"planted shifts: source lengths {list(src.length_range)} vs "
              f"target {list(tgt.length_range)}; source background bias "
              f"rho={src.bias_rho}, target mode={tgt.background_mode}")
    return EXIT_OK


def scene_features_of(samples) -> SceneFeatureSet:
    # Scene features are L2-normalized temporal-median backgrounds; this
    # replaces a pretrained scene-classification network at desk scale.
    bank = build_background_bank(samples)
    return SceneFeatureSet.from_vectors(bank.backgrounds.astype(np.float64))


def cmd_gap(args) -> int:
    src_manifest, src_samples = read_dataset(resolve_split_dir(args.source))
    tgt_manifest, tgt_samples = read_dataset(resolve_split_dir(args.target))
    delta_bg = scene_distance(scene_features_of(src_samples),
                              scene_features_of(tgt_samples))
    delta_temp = temporal_distance(src_manifest.lengths(), tgt_manifest.lengths())
    report = GapReport(delta_bg=delta_bg, delta_temp=delta_temp,
                       notes={"scene_feature": "normalized temporal-median background"})
    if args.mca_sup is not None and args.mca_src is not None:
        report.mca_supervised_target = args.mca_sup
        report.mca_source_only = args.mca_src
        report.delta_acc = accuracy_gap(args.mca_sup, args.mca_src)
    print(report.to_table())
    payload = json.dumps(report.to_dict(), indent=1)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gap.json"), "w") as f:
            f.write(payload)
    else:
        print(payload)
    return EXIT_OK


def load_experiment(path: str):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path}: invalid JSON ({e})") from e
    for key in ("source_dir", "target_dir"):
        if key not in doc:
            raise UsageError(f"config {path}: missing field {key!r}")
    try:
        tc = config_from_dict(doc.get("train", {}))
    except TypeError as e:
        raise UsageError(f"config {path}: train.{e}") from e
    return doc, tc


def _load_splits(doc):
    src_dir = resolve_split_dir(doc["source_dir"])
    tgt_dir = resolve_split_dir(doc["target_dir"])
    _, src_train = read_dataset(src_dir)
    _, tgt_train = read_dataset(tgt_dir)
    tgt_test = None
    test_dir = doc.get("test_dir")
    if test_dir is None:
        candidate = os.path.join(os.path.dirname(tgt_dir.rstrip("/")), "test")
        if os.path.exists(os.path.join(candidate, "manifest.json")):
            test_dir = candidate
    if test_dir:
        _, tgt_test = read_dataset(resolve_split_dir(test_dir))
    return src_train, tgt_train, tgt_test


def _write_resolved_config(doc, tc, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    resolved = dict(doc)
    resolved["train"] = config_to_dict(tc)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(resolved, f, indent=1)


def cmd_train(args) -> int:
    doc, tc = load_experiment(args.config)
    if args.seed is not None:
        tc.seed = args.seed
    out = args.out or doc.get("out_dir") or "train_out"
    _write_resolved_config(doc, tc, out)
    src_train, tgt_train, tgt_test = _load_splits(doc)
    _, report = train(tc, src_train, tgt_train, tgt_test, out_dir=out)
    last = report.epochs[-1]
    print(f"final: loss_total={last['loss_total']:.4f} "
          f"target_mca={last['target_mca']:.2f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    mdl = glad_model.load_model(args.checkpoint)
    _, samples = read_dataset(resolve_split_dir(args.data))
    cm, mca = evaluate(mdl, samples, mdl.config.n_classes)
    print(f"MCA: {mca:.2f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.json"), "w") as f:
            json.dump({"mca": mca, "confusion": cm.tolist()}, f, indent=1)
    return EXIT_OK


def cmd_ablate(args) -> int:
    doc, tc = load_experiment(args.config)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0, 1, 2]
    out = args.out or doc.get("out_dir") or "ablate_out"
    _write_resolved_config(doc, tc, out)
    src_train, tgt_train, tgt_test = _load_splits(doc)
    if tgt_test is None:
        raise UsageError("ablation needs a labeled target test split")
    table = run_ablation_matrix(tc, src_train, tgt_train, tgt_test, seeds)
    text = format_ablation_table(table)
    print(text)
    with open(os.path.join(out, "ablation.json"), "w") as f:
        json.dump(table, f, indent=1)
    with open(os.path.join(out, "ablation.txt"), "w") as f:
        f.write(text + "\n")
    return EXIT_OK


def build_parser() -> CliParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None)
    parser = CliParser(prog="glad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic benchmark")
    p.add_argument("--spec", help="JSON file of domain specs")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gap", parents=[common], help="measure domain gaps")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--mca-sup", type=float, default=None)
    p.add_argument("--mca-src", type=float, default=None)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="run the ablation matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _workers()
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
