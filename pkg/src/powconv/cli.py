"""Command-line entry point: ``powconv <subcommand> [--config FILE] [flags]``.

Exit status is 0 on success, 1 when a check or experiment fails (or its
data is unusable) and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import ConfigurationError, PowConvError

log = logging.getLogger("powconv")

SUBCOMMANDS = {
    "gradcheck": "GradCheck",
    "table1": "Table1",
    "table2": "Table2",
    "train": "CnnTrain",
    "deform": "Deform",
    "robustness": "Robustness",
    "stats": "Stats",
    "gen-data": "GenData",
}


class Failure(Exception):
    """An experiment ran but did not meet its own success condition."""


def _progress(row):
    log.info("%s", row)


# --------------------------------------------------------------------------
# subcommand bodies; each takes the merged ExperimentConfig and the args
# --------------------------------------------------------------------------

def cmd_gradcheck(cfg, args):
    from .gradcheck import run_gradcheck
    from .tables import write_csv
    report = run_gradcheck(cfg.get_int("instances", 100), cfg.seed)
    rows = [{"check": r.check, "instance": r.instance, "tensor": r.tensor,
             "rel_error": r.error, "passed": r.passed} for r in report.results]
    write_csv(cfg.out / "gradcheck.csv", ["check", "instance", "tensor", "rel_error", "passed"], rows)
    for check, worst in report.worst().items():
        status = "ok" if all(r.passed for r in report.results if r.check == check) else "FAIL"
        print(f"{status:4s} {check:32s} instances={report.instances(check):4d} worst={worst:.2e}")
    for r in report.failures[:20]:
        print(f"failed: {r.check} instance={r.instance} seed={cfg.seed} tensor={r.tensor} error={r.error:.3e}")
    print(f"{len(report.results)} comparisons in {report.seconds:.1f}s")
    if not report.passed:
        raise Failure(f"{len(report.failures)} gradient comparisons exceeded tolerance")


def cmd_table1(cfg, args):
    from .tables import run_table1
    rows, _ = run_table1(cfg, _progress)
    for r in rows:
        print(f"N={r['N']} {r['variant']:18s} test {r['test_mean']} +- {r['test_std']} "
              f"({r['n_ok']} ok, {r['n_failed']} failed)")
    if any(r["n_ok"] == 0 for r in rows):
        raise Failure("every run of some variant diverged")


def cmd_table2(cfg, args):
    from .tables import run_table2
    rows, _ = run_table2(cfg, _progress)
    for r in rows:
        print(f"{r['row']:16s} M={r['M']:4d} hidden={r['hidden']:5d} R all {r['all_r_mean']} "
              f"+- {r['all_r_std']} best {r['best_r_mean']}")
    if any(r["n_ok"] == 0 for r in rows):
        raise Failure("every run of some cell diverged")


def cmd_train(cfg, args):
    from .cnn import train_cnn
    result = train_cnn(cfg, progress=_progress)
    last = result.history.test_acc[-1] if result.history.test_acc else float("nan")
    print(f"{cfg.variant or 'base'}: {len(result.history.losses)} epochs, test accuracy {last:.2f}%, "
          f"log {result.log_path}, checkpoint {result.checkpoint}")
    if result.diverged:
        raise Failure("training hit a non-finite loss")


def cmd_deform(cfg, args):
    from .robustness import deform_corpus
    manifest, entries = deform_corpus(cfg)
    print(f"wrote {len(entries)} images; manifest {manifest}")


def cmd_robustness(cfg, args):
    from .robustness import evaluate_robustness
    checkpoints = cfg.get_list("checkpoints", [])
    if not checkpoints or not cfg.get("manifest"):
        raise ConfigurationError("[data] needs checkpoints and manifest")
    rows, kept = evaluate_robustness(checkpoints, cfg.get("manifest"), cfg.out)
    print(f"{kept} images pass the correctness filter")
    for r in rows:
        print("  ".join(f"{k}={v}" for k, v in r.items() if k != "table"))


def cmd_stats(cfg, args):
    from .diagnostics import run_stats
    rows = run_stats(cfg)
    for r in rows:
        print(f"{r['layer']:32s} skew {r['skew_a']:.4g}/{r['skew_b']:.4g} "
              f"kurt {r['kurt_a']:.4g}/{r['kurt_b']:.4g} jsd {r['jsd_ab']:.6g}")


def cmd_gen_data(cfg, args):
    from . import synthdata as sd
    from .tables import derived_seed
    kind = cfg.get("kind", "classification")
    out = cfg.out
    if kind == "classification":
        spec = sd.SyntheticClassSpec(cfg.get_int("n_features", 128), cfg.get_int("n", 4),
                                     cfg.get_int("n_train", 10_000), cfg.get_int("n_test", 10_000),
                                     derived_seed(cfg.seed, "gen-data"))
        diverged = cfg.get_bool("diverged", True)
        train, test = sd.make_classification_dataset(spec, diverged)
        prov = {**sd.spec_provenance(spec), "diverged": diverged, "config_seed": cfg.seed}
        sd.export_dataset(out, "train", train.x, train.y, {**prov, "kappa": list(train.kappa)})
        sd.export_dataset(out, "test", test.x, test.y, {**prov, "kappa": list(test.kappa)})
    elif kind == "regression":
        m, n = cfg.get_int("m", 16), cfg.get_int("n_samples", 20_000)
        data = sd.make_power_regression_dataset(m, n, derived_seed(cfg.seed, "gen-data"))
        sd.export_dataset(out, "power_regression", data.x, data.y,
                          {"m": m, "n_samples": n, "config_seed": cfg.seed,
                           "exponents": list(data.exponents)})
    elif kind == "gnd":
        conf = sd.GndConfig(cfg.get_float("kappa", 0.0), cfg.get_float("xi", 0.0),
                            cfg.get_float("scale", 1.0))
        x = sd.gnd_sample(conf, cfg.get_int("n_samples", 10_000), derived_seed(cfg.seed, "gen-data"))
        sd.export_dataset(out, "gnd", x, np.zeros(0), {**vars(conf), "config_seed": cfg.seed})
    elif kind == "cifar-synthetic":
        from .cnn import write_synthetic_cifar
        write_synthetic_cifar(out, cfg.get_int("per_file", 1000), cfg.get_int("n_test", 1000),
                              cfg.seed, cfg.get_int("n_classes", 10), cfg.get_float("noise", 0.15))
    elif kind == "corpus":
        from .cnn import load_cifar10, synthetic_images
        from .deform import write_ppm
        n = cfg.get_int("n_images", 100)
        if cfg.get("cifar_dir"):
            _, _, x, y = load_cifar10(cfg.get("cifar_dir"), 1, n, cfg.seed)
        else:
            xb, y = synthetic_images(n, cfg.seed, cfg.get_int("n_classes", 10))
            x = xb / 255.0
        for i, (img, label) in enumerate(zip(x, y)):
            dest = Path(out) / str(int(label)) / f"{i:05d}.ppm"
            dest.parent.mkdir(parents=True, exist_ok=True)
            write_ppm(dest, img.transpose(1, 2, 0))
    else:
        raise ConfigurationError(
            f"unknown gen-data kind {kind!r}; use classification, regression, gnd, cifar-synthetic or corpus")
    print(f"wrote {kind} data to {out}")


COMMANDS = {
    "gradcheck": cmd_gradcheck, "table1": cmd_table1, "table2": cmd_table2, "train": cmd_train,
    "deform": cmd_deform, "robustness": cmd_robustness, "stats": cmd_stats, "gen-data": cmd_gen_data,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="powconv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI experiment config")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--runs", type=int, help="repetitions per cell")
        p.add_argument("--variant", help="model variant")
        p.add_argument("--epochs", type=int, help="training epochs")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a [data] key (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, SUBCOMMANDS[args.command])
        data = dict(cfg.data)
        for item in args.set:
            if "=" not in item:
                raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            data[key.strip()] = value.strip()
        cfg = cfg.with_overrides(seed=args.seed, out=args.out, runs=args.runs,
                                 variant=args.variant, epochs=args.epochs, data=data)
        cfg.check_paths()
        cfg.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (Failure, PowConvError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
