"""Deformed corpora and robustness tables.

A corpus is a directory of images grouped into one sub-directory per
class; the sub-directory name is the class id (an integer or a CIFAR-10
class name).  :func:`deform_corpus` writes deformed copies plus a TSV
manifest, and :func:`evaluate_robustness` scores checkpoints on it.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import deform
from .cnn import CIFAR10_CLASSES
from .config import ExperimentConfig
from .errors import ConfigurationError, DataError
from .network import load_checkpoint
from .tables import derived_seed, write_csv

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp")


def label_from_path(path) -> int:
    name = Path(path).parent.name
    if name.isdigit():
        return int(name)
    if name in CIFAR10_CLASSES:
        return CIFAR10_CLASSES.index(name)
    raise DataError(f"cannot infer a class from directory {name!r} of {path}")


def list_corpus(directory):
    directory = Path(directory)
    files = sorted(p for p in directory.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no images under {directory}")
    return files


def parse_kind_list(cfg: ExperimentConfig):
    """Deformations to apply: ``kinds`` plus ``<Kind>.<param>`` keys in ``[data]``."""
    kinds = cfg.get_list("kinds", [k for k in deform.KINDS if k not in ("Identity", "TargetedOcclude")])
    specs = []
    for kind in kinds:
        params = {}
        for part in kind.split("+"):
            prefix = part.lower() + "."
            for key, value in cfg.data.items():
                if key.lower().startswith(prefix):
                    params[f"{part}.{key[len(prefix):]}"] = value
        if "+" not in kind:
            params = {k.split(".", 1)[1]: v for k, v in params.items()}
        specs.append((kind, ",".join(f"{k}={v}" for k, v in params.items())))
    return specs


def deform_corpus(cfg: ExperimentConfig):
    """Write every requested deformation of every corpus image.

    ``[data]`` keys: ``images`` (corpus root), ``kinds`` (comma list; chains
    as ``Blur+SaltPepper``), ``<Kind>.<param>`` overrides, ``donors``
    (directory; default the corpus itself, excluding the image being
    deformed), ``checkpoint`` (network for TargetedOcclude), ``identity``
    (also emit undeformed copies; default true).  Output images go to
    ``out/<kind>/<class>/<name>.ppm``; the manifest to ``out/manifest.tsv``.
    """
    root = Path(cfg.get("images") or "")
    if not cfg.get("images"):
        raise ConfigurationError("[data] images is required")
    files = list_corpus(root)
    donor_files = list_corpus(cfg.get("donors")) if cfg.get("donors") else files
    donors = {p: deform.read_image(p) for p in donor_files}
    kinds = parse_kind_list(cfg)
    if cfg.get_bool("identity", True):
        kinds = [("Identity", "")] + kinds
    net = load_checkpoint(cfg.get("checkpoint")) if cfg.get("checkpoint") else None
    out = Path(cfg.out)
    entries = []
    for path in files:
        img = deform.read_image(path)
        rel = path.relative_to(root)
        label = label_from_path(path)
        for kind, params in kinds:
            seed = derived_seed(cfg.seed, "deform", str(rel), kind) % 2 ** 31
            specs = deform.parse_chain(kind, params, seed)
            others = [d for p, d in donors.items() if p != path] or list(donors.values())
            result = deform.apply_chain(img, specs, donors=others, net=net, class_id=label)
            dest = out / kind / rel.with_suffix(".ppm")
            dest.parent.mkdir(parents=True, exist_ok=True)
            deform.write_ppm(dest, result)
            entries.append(deform.ManifestEntry(str(path.resolve()), kind, params, seed,
                                                str(dest.relative_to(out))))
    manifest = out / "manifest.tsv"
    deform.write_manifest(manifest, entries)
    return manifest, entries


def _resolve(manifest_dir, p):
    p = Path(p)
    return p if p.is_absolute() else manifest_dir / p


def _batch(paths):
    return np.stack([deform.read_image(p).transpose(2, 0, 1) for p in paths])


def topk_errors(logits, labels, k=5):
    """Top-1 and top-k error in percent."""
    k = min(k, logits.shape[1])
    order = np.argsort(-logits, axis=1, kind="stable")
    top1 = order[:, 0] == labels
    topk = (order[:, :k] == labels[:, None]).any(axis=1)
    return 100.0 * (1 - top1.mean()), 100.0 * (1 - topk.mean())


def filter_correct(nets, paths, labels):
    """Indices of images every network classifies correctly (top-1)."""
    keep = np.ones(len(paths), dtype=bool)
    x = _batch(paths)
    for net in nets.values():
        keep &= net.predict(x).argmax(axis=1) == labels
    return np.flatnonzero(keep)


def evaluate_robustness(checkpoints, manifest, out=None):
    """Top-1/top-5 error per deformation and model, on the commonly-correct subset.

    ``checkpoints`` maps model names to checkpoint directories (a list uses
    the directory names).  Rows are deformations; each model contributes a
    ``<name>.top1`` and ``<name>.top5`` column.
    """
    if not isinstance(checkpoints, dict):
        checkpoints = {Path(c).name: c for c in checkpoints}
    if not checkpoints:
        raise ConfigurationError("need at least one checkpoint")
    nets = {name: load_checkpoint(path) for name, path in checkpoints.items()}
    manifest = Path(manifest)
    entries = deform.read_manifest(manifest)
    originals = sorted({e.input for e in entries})
    labels = np.array([label_from_path(p) for p in originals])
    kept = filter_correct(nets, [_resolve(manifest.parent, p) for p in originals], labels)
    if kept.size == 0:
        raise DataError("no image is classified correctly by every model")
    kept_inputs = {originals[i]: labels[i] for i in kept}
    kinds = list(dict.fromkeys(e.kind for e in entries))
    rows = []
    for kind in kinds:
        sel = [e for e in entries if e.kind == kind and e.input in kept_inputs]
        row = {"table": "Table 5", "deformation": kind, "n_images": len(sel)}
        if sel:
            x = _batch([_resolve(manifest.parent, e.output) for e in sel])
            y = np.array([kept_inputs[e.input] for e in sel])
        for name, net in nets.items():
            if sel:
                top1, top5 = topk_errors(net.predict(x), y)
                row[f"{name}.top1"], row[f"{name}.top5"] = round(top1, 4), round(top5, 4)
            else:
                row[f"{name}.top1"] = row[f"{name}.top5"] = "nan"
        rows.append(row)
    columns = ["table", "deformation", "n_images"] + [f"{n}.{t}" for n in nets for t in ("top1", "top5")]
    if out is not None:
        write_csv(Path(out) / "robustness.csv", columns, rows)
    log.info("%d of %d originals kept by the correctness filter", kept.size, len(originals))
    return rows, kept.size
