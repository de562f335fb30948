"""Command-line interface.

Every subcommand resolves a run directory ``<out>/run-<hash12>`` from the
merged configuration, so the stages of one pipeline find each other's
artifacts without extra flags::

    integrated-cell gen        --config cfg.yaml
    integrated-cell train-ref  --config cfg.yaml
    integrated-cell train-cond --config cfg.yaml
    integrated-cell integrate  --config cfg.yaml --image cell.tif --labels 1,3
    integrated-cell eval       --config cfg.yaml --split test
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import checkpoint as ckpt_io
from . import integration as I
from .config import RunConfig, load_config
from .datagen import generate_corpus, split
from .datagen.io import read_corpus, read_image, write_corpus, write_image
from .errors import CheckpointError, ConfigError, InputError, IntegratedCellError, ShapeError
from .training import ConditionalTrainer, ReferenceTrainer

log = logging.getLogger("integrated_cell")

CORPUS_DIR = "corpus"
REFERENCE_CKPT = "reference/checkpoint.pt"
CONDITIONAL_CKPT = "conditional/checkpoint.pt"


class Run:
    """Resolved configuration plus the run directory it names."""

    def __init__(self, config: RunConfig, out):
        self.config = config
        self.hash = config.content_hash()
        self.dir = Path(out) / f"run-{self.hash[:12]}"

    def path(self, rel: str) -> Path:
        return self.dir / rel

    def ensure(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        cfg = self.dir / "config.yaml"
        if not cfg.exists():
            self.config.dump(cfg)

    def structure_names(self) -> list[str]:
        return self.config.corpus.structure_names()

    def corpus(self, which: str | None = "train"):
        root = self.path(CORPUS_DIR)
        if not (root / "manifest.jsonl").exists():
            raise InputError(f"no corpus at {root}; run `gen` first")
        images, labels, records = read_corpus(root, which)
        if not records:
            raise InputError(f"corpus split {which!r} is empty")
        return torch.from_numpy(images), torch.from_numpy(labels), records


# -- subcommands -----------------------------------------------------------

def cmd_gen(run: Run, args) -> Path:
    run.ensure()
    spec = run.config.corpus
    spec.validate()
    images, records = generate_corpus(spec)
    records = split(records, run.config.split.train_fraction, run.config.split.seed)
    write_corpus(run.path(CORPUS_DIR), images, records, spec)
    n_train = sum(r["split"] == "train" for r in records)
    log.info("wrote %d images (%d train, %d test) to %s", len(records), n_train,
             len(records) - n_train, run.path(CORPUS_DIR))
    return run.path(CORPUS_DIR)


def _train(run: Run, args, trainer, stage: str, epochs: int, reference_id=None) -> Path:
    out = run.path(f"{stage}/checkpoint.pt")
    cfg = run.config.to_dict()

    def save():
        ckpt_io.save_checkpoint(out, trainer, cfg, run.hash, reference_id=reference_id)

    def on_step(t):
        if t.batch_index == 0:
            save()

    trainer.run(epochs, on_step=on_step)
    save()
    trainer.curves.write_csv(run.path(f"{stage}/curves.csv"))
    trainer.curves.write_epoch_csv(run.path(f"{stage}/epochs.csv"))
    (run.path(f"{stage}/evaluation.json")).write_text(
        json.dumps(trainer.curves.evaluation, indent=1, sort_keys=True))
    log.info("%s model: %d steps, checkpoint %s", stage, trainer.step_count, out)
    return out


def _resume_source(run: Run, args, default: str) -> Path:
    return Path(args.checkpoint) if args.checkpoint else run.path(default)


def cmd_train_ref(run: Run, args) -> Path:
    ck = None
    if args.resume:
        ck = ckpt_io.load_checkpoint(_resume_source(run, args, REFERENCE_CKPT), "reference")
        ckpt_io.check_hash(ck, run.hash)
    run.ensure()
    images, _, _ = run.corpus("train")
    x_r = images[:, : run.config.model.n_reference].contiguous()
    if ck is not None:
        trainer = ckpt_io.resume_reference(ck, x_r)
        log.info("resuming reference training at step %d", trainer.step_count)
    else:
        trainer = ReferenceTrainer(x_r, run.config.training, run.config.model)
    return _train(run, args, trainer, "reference", run.config.training.epochs_reference)


def cmd_train_cond(run: Run, args) -> Path:
    ck = None
    if args.resume:
        ck = ckpt_io.load_checkpoint(_resume_source(run, args, CONDITIONAL_CKPT), "conditional")
        ckpt_io.check_hash(ck, run.hash)
    run.ensure()
    images, labels, _ = run.corpus("train")
    if ck is not None:
        trainer = ckpt_io.resume_conditional(ck, images, labels)
        ref_id = ck["reference"]["id"]
        log.info("resuming conditional training at step %d", trainer.step_count)
    else:
        ref_path = Path(args.checkpoint) if args.checkpoint else run.path(REFERENCE_CKPT)
        if not ref_path.is_file():
            raise CheckpointError(
                f"conditional training needs a trained reference model; none at {ref_path} "
                "(run `train-ref` first or pass --checkpoint)"
            )
        ck = ckpt_io.load_checkpoint(ref_path, "reference")
        reference = ckpt_io.reference_model(ck)
        if reference.trained_steps == 0:
            raise CheckpointError(f"reference checkpoint {ref_path} is untrained")
        trainer = ConditionalTrainer(images, labels, reference, run.config.training, run.config.model)
        ref_id = ck["id"]
    return _train(run, args, trainer, "conditional", run.config.training.epochs_conditional, ref_id)


def _load_models(run: Run, args, need_conditional=True):
    path = Path(args.checkpoint) if args.checkpoint else run.path(
        CONDITIONAL_CKPT if need_conditional else REFERENCE_CKPT)
    if not need_conditional and not args.checkpoint and not path.exists():
        path = run.path(CONDITIONAL_CKPT)
    ck = ckpt_io.load_checkpoint(path, "conditional" if need_conditional else None)
    ref = ckpt_io.reference_model(ck)
    cond = ckpt_io.conditional_model(ck) if ck["stage"] == "conditional" else None
    return ck, ref, cond


def parse_labels(text: str | None, names: list[str]) -> list[int]:
    """Comma list of 1-based labels or structure names; empty means all."""
    if not text:
        return list(range(1, len(names) + 1))
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if tok.isdigit():
            out.append(int(tok))
        elif tok in names:
            out.append(names.index(tok) + 1)
        else:
            raise ConfigError(f"unknown structure {tok!r}; choose from {names} or 1..{len(names)}")
    return out


def _save_png(path: Path, rgb: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(path)


def cmd_integrate(run: Run, args) -> Path:
    ck, ref, cond = _load_models(run, args)
    if not args.image:
        raise ConfigError("integrate needs --image")
    img_path = Path(args.image)
    if not img_path.is_file():
        raise InputError(f"image not found: {img_path}")
    img, _ = read_image(img_path)
    r, S = ref.config.n_reference, ref.config.image_size
    if img.shape[0] < r or img.shape[1:] != (S, S):
        raise ShapeError(f"{img_path} has shape {img.shape}; need at least ({r}, {S}, {S})")
    names = run.structure_names()
    labels = parse_labels(args.labels, names)
    res = I.integrate_structures(ref, cond, img[:r], labels, names, ck["id"])
    out_dir = run.path("integrate")
    out_dir.mkdir(parents=True, exist_ok=True)
    pix = res.pixels[0].numpy()
    write_image(out_dir / f"{img_path.stem}.tif", pix, res.channel_names,
                labels=res.labels, checkpoint=res.checkpoint_id)
    tiles = np.stack([np.concatenate([pix[:r], pix[r + k: r + k + 1]]) for k in range(len(labels))])
    _save_png(out_dir / f"{img_path.stem}.png", I.montage(tiles[None]))
    log.info("integrated %s into %d channels", img_path.name, pix.shape[0])
    return out_dir / f"{img_path.stem}.tif"


def cmd_classify(run: Run, args) -> Path:
    _, _, cond = _load_models(run, args)
    images, labels, records = run.corpus(args.split)
    probs, pred = I.classify_all(cond, images)
    out = run.path(f"classify/{args.split}_predictions.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    K = cond.config.n_classes
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "true", "predicted"] + [f"p{k}" for k in range(1, K + 1)])
        for rec, t, p, pr in zip(records, labels.tolist(), pred.tolist(), probs.tolist()):
            w.writerow([rec["id"], t, p] + [f"{v:.6g}" for v in pr])
    acc = float((pred == labels).float().mean())
    log.info("%s accuracy %.4f", args.split, acc)
    return out


def parse_floats(text: str | None, default):
    if not text:
        return tuple(default)
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError as e:
        raise ConfigError(f"cannot parse number list {text!r}") from e


def parse_dims(text: str | None) -> tuple[int, int]:
    try:
        dims = tuple(int(t) for t in (text or "0,1").split(","))
    except ValueError as e:
        raise ConfigError(f"cannot parse --dims {text!r}") from e
    if len(dims) != 2:
        raise ConfigError("--dims takes exactly two indices i,j")
    return dims


def cmd_traverse(run: Run, args) -> Path:
    role = args.role
    ck, ref, cond = _load_models(run, args, need_conditional=(role == "z_s"))
    dims, grid = parse_dims(args.dims), parse_floats(args.grid, I.DEFAULT_GRID)
    if role == "z_r":
        tiles = I.latent_traversal(ref, "z_r", dims, grid)
    else:
        images, labels, _ = run.corpus("test")
        with I.eval_mode(ref.enc_r):
            z_r = ref.enc_r(images[:1, : ref.config.n_reference])[0]
        y = parse_labels(args.labels, run.structure_names())[0] if args.labels else int(labels[0])
        tiles = I.latent_traversal(cond, "z_s", dims, grid, z_r=z_r, y=y)
    out_dir = run.path(f"traverse/{role}_{dims[0]}_{dims[1]}")
    tiles = tiles.numpy()
    for row in range(tiles.shape[0]):
        for col in range(tiles.shape[1]):
            write_image(out_dir / "tiles" / f"r{row}_c{col}.tif", tiles[row, col],
                        [f"c{k}" for k in range(tiles.shape[2])], role=role,
                        dims=list(dims), value_i=grid[col], value_j=grid[row])
    _save_png(out_dir / "montage.png", I.montage(tiles))
    log.info("wrote %dx%d traversal to %s", len(grid), len(grid), out_dir)
    return out_dir


def cmd_eval(run: Run, args) -> Path:
    _, ref, cond = _load_models(run, args)
    images, labels, _ = run.corpus(args.split)
    _, pred = I.classify_all(cond, images)
    K = cond.config.n_classes
    names = run.structure_names()
    cm = I.confusion_matrix(labels.numpy(), pred.numpy(), K)
    out_dir = run.path(f"eval/{args.split}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "confusion.txt").write_text(I.format_confusion(cm, names) + "\n")
    with open(out_dir / "confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\predicted"] + names)
        for name, row in zip(names, cm.tolist()):
            w.writerow([name] + row)
    _, bce_r = I.reconstruct(ref, images[:, : ref.config.n_reference])
    _, bce_rs = I.reconstruct(cond, images)
    metrics = {
        "n": int(len(labels)),
        "accuracy": float(np.trace(cm) / max(cm.sum(), 1)),
        "recon_bce_reference": float(bce_r.mean()),
        "recon_bce_conditional": float(bce_rs.mean()),
    }
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    print(I.format_confusion(cm, names))
    log.info("%s accuracy %.4f", args.split, metrics["accuracy"])
    return out_dir


COMMANDS = {
    "gen": cmd_gen,
    "train-ref": cmd_train_ref,
    "train-cond": cmd_train_cond,
    "integrate": cmd_integrate,
    "classify": cmd_classify,
    "traverse": cmd_traverse,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="integrated-cell", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML run configuration")
        s.add_argument("--seed", type=int, help="master seed for every named seed")
        s.add_argument("--out", default="runs", help="parent of the run directory")
        s.add_argument("--checkpoint", help="checkpoint to read (defaults to the run directory's)")
        s.add_argument("-q", "--quiet", action="store_true")
        if name in ("train-ref", "train-cond"):
            s.add_argument("--resume", action="store_true", help="continue from the checkpoint")
        if name in ("integrate", "traverse"):
            s.add_argument("--labels", help="comma list of labels (1-based) or structure names")
        if name == "integrate":
            s.add_argument("--image", help="preprocessed TIFF with reference channels first")
        if name in ("classify", "eval"):
            s.add_argument("--split", default="test", choices=("train", "test"))
        if name == "traverse":
            s.add_argument("--dims", default="0,1", help="latent indices i,j")
            s.add_argument("--grid", help="comma list of values, e.g. --grid=-3,0,3 (default "
                           + ",".join(map(str, I.DEFAULT_GRID)) + ")")
            s.add_argument("--role", default="z_r", choices=("z_r", "z_s"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        run = Run(load_config(args.config, seed=args.seed), args.out)
        result = COMMANDS[args.command](run, args)
    except IntegratedCellError as e:
        print(f"error [{type(e).__name__}]: {e}", file=sys.stderr)
        return e.exit_code
    print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
