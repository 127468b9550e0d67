"""Command-line entry point: one subcommand per pipeline stage.

Dataset directories (written by ``gen``) hold ``classes.txt`` (one
``name kind`` line per class, the line order being the class index),
``spec.json`` and per scene ``NNNN.ppm``, ``NNNN.sem.pgm``, ``NNNN.inst.pgm``.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .clustering import BandwidthTable, bandwidth_search, classwise_cluster, default_grid
from .core import ClassTable, ConfigurationError, DimensionError
from .datagen import (GenerationError, Scene, generate_scenes, load_spec, mirror_scene,
                      save_spec, toy_spec)
from .formats import (FormatError, read_embedding, read_panoptic, read_pgm16, read_ppm,
                      write_embedding, write_panoptic, write_pgm16, write_ppm)
from .fusion import ConsistencyError, fuse
from .loss import EmptyLossError
from .metrics import evaluate, format_key_values, format_table, miou, report_values
from .network import ModelFormatError, TrainConfig, load_model, predict, save_model, train
from .pipeline import run_benchmark, run_pipeline

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
DATA_ERRORS = (ConfigurationError, DimensionError, FormatError, ModelFormatError,
               ConsistencyError, GenerationError, EmptyLossError, OSError, ValueError)


class UsageError(Exception):
    pass


# -- dataset directories -------------------------------------------------------

def write_classes(path, classes: ClassTable) -> None:
    with open(path, "w") as f:
        for c in classes.classes:
            f.write(f"{c.name} {c.kind}\n")


def read_classes(path) -> ClassTable:
    pairs = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise FormatError(f"{path}:{n}: expected 'name kind'")
            pairs.append((parts[0], parts[1]))
    try:
        return ClassTable.from_pairs(pairs)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def scene_names(directory) -> list[str]:
    names = sorted(os.path.basename(p)[:-4] for p in glob.glob(os.path.join(directory, "*.ppm")))
    if not names:
        raise FormatError(f"{directory}: no scenes (*.ppm) found")
    return names


def read_scene(directory, name) -> Scene:
    base = os.path.join(directory, name)
    return Scene(read_ppm(base + ".ppm"), read_pgm16(base + ".sem.pgm"),
                 read_pgm16(base + ".inst.pgm"))


def read_dataset(directory):
    classes = read_classes(os.path.join(directory, "classes.txt"))
    names = scene_names(directory)
    return classes, names, [read_scene(directory, n) for n in names]


def write_scene(directory, name, scene: Scene) -> None:
    base = os.path.join(directory, name)
    write_ppm(base + ".ppm", scene.image)
    write_pgm16(base + ".sem.pgm", scene.sem)
    write_pgm16(base + ".inst.pgm", scene.inst)


def _classes_for(args, fallback_dir=None) -> ClassTable:
    path = args.classes or (os.path.join(fallback_dir, "classes.txt") if fallback_dir else None)
    if path is None:
        raise UsageError("--classes is required")
    return read_classes(path)


# -- subcommands ----------------------------------------------------------------

def cmd_gen(args) -> None:
    spec = load_spec(args.spec) if args.spec else toy_spec()
    scenes = generate_scenes(spec, args.count, args.seed)
    if args.mirror:
        scenes = [mirror_scene(s) for s in scenes]
    os.makedirs(args.out, exist_ok=True)
    write_classes(os.path.join(args.out, "classes.txt"), spec.class_table())
    save_spec(spec, os.path.join(args.out, "spec.json"))
    for i, s in enumerate(scenes):
        write_scene(args.out, f"{i:04d}", s)
    print(f"wrote {len(scenes)} scenes to {args.out}")


def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"--hidden expects comma-separated integers, got {text!r}") from None
    if any(d < 1 for d in dims):
        raise UsageError("--hidden widths must be positive")
    return dims


def cmd_train(args) -> None:
    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    if args.branch == "instance" and args.stage == 2 and not args.from_model:
        raise UsageError("stage 2 needs --from (the stage-1 model)")
    if args.branch == "semantic" and args.bandwidths:
        raise UsageError("--bandwidths is only meaningful for the instance branch")
    classes, _, scenes = read_dataset(args.data)
    cfg = TrainConfig(iters=args.iters, lr=args.lr, batch_size=args.batch_size,
                      seed=args.seed, hidden=_parse_hidden(args.hidden),
                      embed_dim=args.embed_dim, num_classes=classes.num_classes,
                      stage=args.stage)
    init = load_model(args.from_model) if args.from_model else None
    net, log = train(args.branch, scenes, cfg, init)
    save_model(net, args.out)
    if args.log:
        with open(args.log, "w") as f:
            for it, lr, v in zip(log.iteration, log.lr, log.loss):
                if args.branch == "semantic":
                    f.write(f"{it} {lr!r} {v!r}\n")
                else:
                    f.write(f"{it} {lr!r} {v.l_inst!r} {v.l_var!r} {v.l_dist!r} {v.l_reg!r}\n")
    print(f"final loss {log.final():.6g}")
    if args.bandwidths:
        subset = scenes[:args.search_scenes]
        embs = predict(net, np.stack([s.image for s in subset]))
        table = BandwidthTable()
        for k in classes.thing_ids:
            triples = [(e, s.sem, s.inst) for e, s in zip(embs, subset)]
            try:
                table[classes.classes[k].name] = bandwidth_search(
                    triples, k, classes, default_grid(cfg.loss.delta_v), cfg.loss.delta_v)
            except ValueError:
                # class absent from the search scenes: fall back to the margin
                table[classes.classes[k].name] = cfg.loss.delta_v
        table.save(args.bandwidths)
        print(f"bandwidths: {' '.join(f'{n}={v:g}' for n, v in table.items())}")


def cmd_infer(args) -> None:
    if args.semantic_gt and not args.data:
        raise UsageError("--semantic-gt needs --data (ground-truth semantic maps)")
    if not args.semantic_gt and not args.semantic_model:
        raise UsageError("--semantic-model is required unless --semantic-gt is given")
    if bool(args.data) == bool(args.image):
        raise UsageError("give exactly one of --data or --image")
    classes = _classes_for(args, args.data)
    bandwidths = BandwidthTable.load(args.bandwidths)
    sem_net = load_model(args.semantic_model) if args.semantic_model else None
    inst_net = load_model(args.instance_model)
    if args.data:
        jobs = [(n, os.path.join(args.data, n + ".ppm")) for n in scene_names(args.data)]
    else:
        jobs = [(os.path.splitext(os.path.basename(args.image))[0], args.image)]
    os.makedirs(args.out, exist_ok=True)
    for name, path in jobs:
        image = read_ppm(path)
        gt = read_pgm16(os.path.join(args.data, name + ".sem.pgm")) if args.semantic_gt else None
        pan = run_pipeline(image, sem_net, inst_net, bandwidths, classes, semantic_gt=gt,
                           threads=args.threads)
        out = os.path.join(args.out, name)
        write_panoptic(out, pan)
        if args.save_embedding:
            write_embedding(out + ".emb", predict(inst_net, image))
    print(f"wrote {len(jobs)} panoptic maps to {args.out}")


def cmd_cluster(args) -> None:
    classes = _classes_for(args)
    emb = read_embedding(args.embedding)
    sem = read_pgm16(args.semantic)
    inst = classwise_cluster(emb, sem, classes, BandwidthTable.load(args.bandwidths),
                             min_freq=args.min_freq, threads=args.threads,
                             seeding=args.seeding)
    write_pgm16(args.out, inst)
    print(f"{int(inst.max())} instances")


def cmd_fuse(args) -> None:
    classes = _classes_for(args)
    pan = fuse(read_pgm16(args.semantic), read_pgm16(args.instance), classes,
               min_area=args.min_area)
    write_panoptic(args.out, pan)
    print(f"{len(pan.segments)} segments")


def cmd_eval(args) -> None:
    classes = _classes_for(args, args.data)
    names = scene_names(args.data)
    preds, gts, sem_pred, sem_gt = [], [], [], []
    for n in names:
        scene = read_scene(args.data, n)
        pred = read_panoptic(os.path.join(args.pred, n))
        preds.append(pred)
        gts.append(fuse(scene.sem, scene.inst, classes))
        sem_pred.append(pred.category_map())
        sem_gt.append(scene.sem)
    stats = evaluate(preds, gts, classes)
    _, mean_iou = miou(np.stack(sem_pred), np.stack(sem_gt), classes.num_classes)
    values = report_values(stats, mean_iou)
    print(format_table(values, args.label), end="")
    with open(args.out, "w") as f:
        f.write(format_key_values(values, stats, classes))


def cmd_bench(args) -> None:
    if min(args.height, args.width, args.channels, args.instances, args.runs) < 1:
        raise UsageError("bench dimensions, instances and runs must be >= 1")
    report = run_benchmark(args.height, args.width, args.channels, args.instances,
                           args.seeding, runs=args.runs, seed=args.seed,
                           threads=args.threads)
    text = report.format()
    print(text, end="")
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    shared.add_argument("--threads", type=int, default=1,
                        help="clustering workers; outputs do not depend on it")

    p = argparse.ArgumentParser(prog="panoptic-lab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[shared], help="generate labelled scenes")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--spec", help="scene spec JSON (default: built-in toy spec)")
    g.add_argument("--mirror", action="store_true",
                   help="reflect each scene's left half onto its right half")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[shared], help="train a branch")
    t.add_argument("--data", required=True, help="training dataset directory")
    t.add_argument("--out", required=True, help="output model file")
    t.add_argument("--branch", choices=("semantic", "instance"), required=True)
    t.add_argument("--stage", type=int, choices=(1, 2), default=1)
    t.add_argument("--iters", type=int, default=500)
    t.add_argument("--lr", type=float, default=0.003, help="base learning rate (default 0.003)")
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--hidden", default="16,16", help="hidden layer widths")
    t.add_argument("--embed-dim", type=int, default=12)
    t.add_argument("--from", dest="from_model",
                   help="starting model: stage-1 model for stage 2, or semantic weights "
                        "to initialise stage 1")
    t.add_argument("--log", help="write per-iteration lr and loss here")
    t.add_argument("--bandwidths", help="instance branch: search bandwidths, write table here")
    t.add_argument("--search-scenes", type=int, default=50,
                   help="training scenes used by the bandwidth search")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[shared], help="run the full pipeline")
    i.add_argument("--out", required=True, help="output directory for panoptic maps")
    i.add_argument("--data", help="dataset directory to process")
    i.add_argument("--image", help="single PPM image")
    i.add_argument("--classes", help="class table (default: <data>/classes.txt)")
    i.add_argument("--semantic-model")
    i.add_argument("--instance-model", required=True)
    i.add_argument("--bandwidths", required=True)
    i.add_argument("--semantic-gt", action="store_true",
                   help="use ground-truth semantic maps instead of the semantic branch")
    i.add_argument("--save-embedding", action="store_true")
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("cluster", parents=[shared], help="class-wise mean-shift")
    c.add_argument("--out", required=True, help="output instance map (PGM)")
    c.add_argument("--embedding", required=True)
    c.add_argument("--semantic", required=True)
    c.add_argument("--bandwidths", required=True)
    c.add_argument("--classes", required=True)
    c.add_argument("--seeding", choices=("bin", "exhaustive"), default="bin")
    c.add_argument("--min-freq", type=int, default=1)
    c.set_defaults(func=cmd_cluster)

    f = sub.add_parser("fuse", parents=[shared], help="semantic + instance -> panoptic")
    f.add_argument("--out", required=True, help="output prefix (.pgm and .segments)")
    f.add_argument("--semantic", required=True)
    f.add_argument("--instance", required=True)
    f.add_argument("--classes", required=True)
    f.add_argument("--min-area", type=int, default=0)
    f.set_defaults(func=cmd_fuse)

    e = sub.add_parser("eval", parents=[shared], help="PQ / SQ / RQ / mIoU")
    e.add_argument("--out", required=True, help="key-value metric report")
    e.add_argument("--pred", required=True, help="directory of panoptic predictions")
    e.add_argument("--data", required=True, help="ground-truth dataset directory")
    e.add_argument("--classes")
    e.add_argument("--label", default="ours", help="row label of the printed table")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[shared], help="clustering benchmark")
    b.add_argument("--out", help="also write the report here")
    b.add_argument("--height", type=int, default=1024)
    b.add_argument("--width", type=int, default=2048)
    b.add_argument("--channels", type=int, default=12)
    b.add_argument("--instances", type=int, default=20)
    b.add_argument("--seeding", choices=("bin", "exhaustive"), default="bin")
    b.add_argument("--runs", type=int, default=5)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        # single-threaded BLAS keeps every reduction order fixed
        with threadpool_limits(limits=1):
            args.func(args)
    except UsageError as e:
        parser.error(str(e))
    except FloatingPointError as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
