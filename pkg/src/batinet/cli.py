"""Command-line entry point: ``batinet <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataprep, eval as ev, imaging, pipeline
from .gn import Gn, train_gn
from .pdn import Pdn, train_pdn
from .text import tokenize
from .training import LOSS_TERMS, GnTrainConfig, PdnTrainConfig

log = logging.getLogger("batinet")


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return h, w


def _weights(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) not in (5, 6):
        raise argparse.ArgumentTypeError("expected w_adv,w_per,w_cor,w_damsm,w_reg[,w_mask]")
    return dict(zip(LOSS_TERMS, vals))


def cmd_prepare_data(args):
    if args.source == "synthetic":
        h, w = args.size
        source = dataprep.SyntheticSource(args.count, dataprep.SceneParams(h, w), args.seed)
    else:
        if not args.dir:
            raise SystemExit("--source dir needs --dir PATH")
        segmenter = None
        if args.threshold_segmenter is not None:
            segmenter = dataprep.ThresholdSegmenter(args.threshold_channel, args.threshold_segmenter)
        source = list(dataprep.DirectorySource(Path(args.dir), segmenter))[:args.count or None]
    rows = dataprep.build_dataset(source, args.out, test_fraction=args.test_fraction)
    print(f"wrote {len(rows)} samples to {args.out}")


def _load_split(data, split):
    samples = [t for _, t in dataprep.load_dataset(data, split)]
    if not samples:
        raise SystemExit(f"{data}: no {split} samples")
    return samples


def cmd_train_pdn(args):
    cfg = PdnTrainConfig(seed=args.seed, epochs=args.epochs, batch_size=args.batch,
                         resolution=args.resolution, out=args.out, log_path=args.log,
                         checkpoint_every=args.checkpoint_every, pdn_input=args.input,
                         warmup_epochs=args.warmup_epochs)
    train_pdn(_load_split(args.data, "train"), cfg)
    print(f"saved PDN checkpoint to {args.out}")


def cmd_train_gn(args):
    if not args.oracle_pos and not args.pdn:
        raise SystemExit("train-gn needs --pdn CKPT or --oracle-pos")
    pdn = Pdn.load(args.pdn) if args.pdn else None
    cfg = GnTrainConfig(seed=args.seed, epochs=args.epochs, batch_size=args.batch,
                        resolution=args.resolution, out=args.out, log_path=args.log,
                        checkpoint_every=args.checkpoint_every, oracle_pos=args.oracle_pos,
                        pretrain_epochs=args.pretrain_epochs, weights=args.weights or {})
    train_gn(_load_split(args.data, "train"), pdn, cfg)
    print(f"saved GN checkpoint to {args.out}")


def cmd_train_classifier(args):
    clf = ev.train_classifier(_load_split(args.data, "train"), args.resolution, args.epochs,
                              seed=args.seed)
    clf.save(args.out)
    print(f"saved classifier checkpoint to {args.out}")


def _run_config(args):
    overrides = {"seed": args.seed, "hn": args.hn, "out": args.out, "stages_dir": args.stages_dir}
    if args.no_pdn:
        overrides["use_pdn"] = False
    if args.config:
        return pipeline.read_config_file(args.config, overrides=overrides)
    return pipeline.RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def _run_flow(args, flow, image_path):
    cfg = _run_config(args)
    gn = Gn.load(args.gn)
    pdn = Pdn.load(args.pdn) if args.pdn and cfg.use_pdn else None
    jobs = [(image_path, args.text, cfg.out)]
    if args.batch_file:
        jobs = []
        for line in Path(args.batch_file).read_text(encoding="utf-8").splitlines():
            if line.strip():
                path, text, out = line.split("\t")
                jobs.append((path, text, out))
    for path, text, out in jobs:
        if not path:
            raise SystemExit("an input image path is required")
        job_cfg = pipeline.replace(cfg, out=out)
        record = flow(imaging.load_image(path), tokenize(text), pdn, gn, job_cfg)
        record.inputs = {"image": str(path)}
        record_path = args.record or (str(Path(out).with_suffix(".jsonl")) if out else None)
        if record_path:
            pipeline.append_record(record_path, record)
        print(json.dumps(record.summary()))


def cmd_bat2i(args):
    _run_flow(args, pipeline.bat2i, args.bg)


def cmd_tgim(args):
    _run_flow(args, pipeline.tgim, args.image)


def cmd_ablate(args):
    samples = _load_split(args.data, "test")[:args.count or None]
    cfg = pipeline.RunConfig(seed=args.seed, hn=args.hn or "stats")
    clf = ev.AttributeClassifier.load(args.classifier) if args.classifier else None
    report = pipeline.run_ablation_suite(samples, Pdn.load(args.pdn), Gn.load(args.gn), cfg, clf,
                                         records_path=args.records)
    if args.out:
        Path(args.out).write_text(report.to_tsv(), encoding="utf-8")
    print(report.render())


def cmd_eval(args):
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - {"is", "iou", "nima"}
    if unknown:
        raise SystemExit(f"unknown metrics {sorted(unknown)}")
    root = Path(args.images)
    paths = sorted(root.glob("*.png"))
    runs = {}
    stubs = []
    if "is" in metrics or "nima" in metrics:
        if not paths:
            raise SystemExit(f"{root}: no PNG images")
        images = [imaging.load_image(p) for p in paths]
    if "is" in metrics:
        if not args.classifier:
            raise SystemExit("the is metric needs --classifier CKPT")
        clf = ev.AttributeClassifier.load(args.classifier)
        mean, std = ev.inception_score(images, clf, min(args.splits, len(images)))
        runs.setdefault(args.name, {})["IS"] = (mean, std, len(images))
    if "nima" in metrics:
        mean, std = ev.aesthetic_score(images)
        runs.setdefault(args.name, {})["NIMA"] = (mean, std, len(images))
        stubs.append("NIMA")
    if "iou" in metrics:
        ious = []
        for rec_path in sorted(root.glob("*.jsonl")):
            for line in rec_path.read_text(encoding="utf-8").splitlines():
                rec = json.loads(line)
                if rec.get("oracle_box"):
                    ious.append(ev.position_iou(rec["box"], rec["oracle_box"]))
        if not ious:
            raise SystemExit(f"{root}: no records with oracle boxes for the iou metric")
        runs.setdefault(args.name, {})["iou"] = ious
    report = ev.build_report(runs, {"images": str(root)}, stub_metrics=stubs)
    Path(args.out).write_text(report.to_tsv(), encoding="utf-8")
    print(report.render(paper_rows=False))


def build_parser():
    p = argparse.ArgumentParser(prog="batinet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare-data", help="build mask/foreground/background datasets")
    s.add_argument("--source", choices=["synthetic", "dir"], default="synthetic")
    s.add_argument("--dir", help="raw <id>.png + <id>.txt pairs for --source dir")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--size", type=_size, default=(32, 32))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-fraction", type=float, default=2933 / 11788)
    s.add_argument("--threshold-segmenter", type=float, default=None,
                   help="segment --source dir images by thresholding one channel")
    s.add_argument("--threshold-channel", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare_data)

    def train_common(s, resolution, epochs):
        s.add_argument("--data", required=True)
        s.add_argument("--epochs", type=int, default=epochs)
        s.add_argument("--batch", type=int, default=32)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--resolution", type=int, default=resolution)
        s.add_argument("--checkpoint-every", type=int, default=0)
        s.add_argument("--log", help="JSON-lines loss curve")
        s.add_argument("--out", required=True)

    s = sub.add_parser("train-pdn", help="train the position detect network")
    train_common(s, 32, 30)
    s.add_argument("--input", choices=["background", "original", "mixed"], default="mixed")
    s.add_argument("--warmup-epochs", type=int, default=10)
    s.set_defaults(func=cmd_train_pdn)

    s = sub.add_parser("train-gn", help="train the generation network")
    train_common(s, 64, 40)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--pdn")
    g.add_argument("--oracle-pos", action="store_true")
    s.add_argument("--pretrain-epochs", type=int, default=5)
    s.add_argument("--weights", type=_weights, default=None,
                   help="w_adv,w_per,w_cor,w_damsm,w_reg[,w_mask]")
    s.set_defaults(func=cmd_train_gn)

    s = sub.add_parser("train-classifier", help="train the synthetic attribute classifier")
    train_common(s, 64, 10)
    s.set_defaults(func=cmd_train_classifier)

    def flow_common(s):
        s.add_argument("--text", default="")
        s.add_argument("--pdn")
        s.add_argument("--gn", required=True)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", default=None)
        s.add_argument("--no-pdn", action="store_true")
        s.add_argument("--hn", choices=["stats", "filter", "off"], default=None)
        s.add_argument("--stages-dir", default=None, help="also write per-stage foreground PNGs")
        s.add_argument("--record", default=None, help="RunRecord JSON-lines path")
        s.add_argument("--config", default=None, help="key=value run config file")
        s.add_argument("--batch-file", default=None, help="TSV of image<TAB>text<TAB>out lines")

    s = sub.add_parser("bat2i", help="background-aware text-to-image")
    s.add_argument("--bg", default="")
    flow_common(s)
    s.set_defaults(func=cmd_bat2i)

    s = sub.add_parser("tgim", help="text-guided image manipulation")
    s.add_argument("--image", default="")
    flow_common(s)
    s.set_defaults(func=cmd_tgim)

    s = sub.add_parser("ablate", help="full vs w/o PDN vs w/o HN on the test split")
    s.add_argument("--data", required=True)
    s.add_argument("--pdn", required=True)
    s.add_argument("--gn", required=True)
    s.add_argument("--classifier")
    s.add_argument("--count", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--hn", choices=["stats", "filter"], default="stats")
    s.add_argument("--records", help="append per-run records (JSON lines)")
    s.add_argument("--out", help="report TSV")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("eval", help="metrics over a directory of generated images")
    s.add_argument("--images", required=True)
    s.add_argument("--classifier")
    s.add_argument("--metrics", default="is")
    s.add_argument("--splits", type=int, default=10)
    s.add_argument("--name", default="run", help="column label in the report")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (dataprep.DataprepError, pipeline.PipelineError, ev.MetricError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
