"""Command-line interface: one subcommand per workflow.

Exit codes: 0 success, 1 data/validation failure, 2 usage error. Diagnostics
go to stderr; data goes to files or stdout. Output is byte-identical across
runs for identical flags and seeds (reports never embed timestamps), at any
``PHENOKEY_THREADS`` setting.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

from . import __version__
from .anatomy import acr_gradient, acr_loss, box_for_keypoints, fit_prior, prior_from_dict, prior_to_dict
from .dataset import Dataset, parse_coco, serialize_coco, validate
from .errors import DivergenceError, PhenokeyError
from .metrics import (
    PCK_SCALE_MODES,
    EvalConfig,
    evaluate_datasets,
    phenotype_value_pairs,
    report_to_dict,
)
from .morphometry import default_table, measure_all
from .optim import ToyPredictor, TrainConfig, make_toy_problem, train
from .plots import plot_deviation_summary, plot_scatter
from .schema import SPECIES
from .synth import PerturbationModel, generate_population, load_template, perturb


def _write_text(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2) + "\n")


def _cmd_validate(args) -> int:
    dataset = parse_coco(args.input)
    violations = validate(dataset)
    for v in violations:
        sys.stdout.write(str(v) + "\n")
    if violations:
        sys.stderr.write(f"{args.input}: {len(violations)} violation(s)\n")
        return 1
    sys.stderr.write(f"{args.input}: ok ({len(dataset)} records)\n")
    return 0


def _cmd_measure(args) -> int:
    dataset = parse_coco(args.input)
    table = default_table()
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["image_id", "abbrev", "value_px", "status"])
    for rec in dataset:
        measured, skipped = measure_all(rec.keypoints, table)
        by_abbrev = {m.abbrev: m for m in measured}
        skip_by_abbrev = {s.abbrev: s for s in skipped}
        for pdef in table:
            if pdef.abbrev in by_abbrev:
                value = by_abbrev[pdef.abbrev].value
                status = "degenerate" if value == 0.0 else "ok"
                writer.writerow([rec.image_id, pdef.abbrev, repr(value), status])
            else:
                missing = skip_by_abbrev[pdef.abbrev].missing_keypoint
                writer.writerow([rec.image_id, pdef.abbrev, "", f"skipped:K-{missing}"])
    _write_text(args.out, buf.getvalue())
    return 0


def _eval_config(args) -> EvalConfig:
    # precedence: flags > config file > defaults
    values = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        for key in ("pmp_threshold", "pck_threshold", "pck_scale_mode", "oks_scale", "oks_k"):
            if key in file_cfg:
                values[key] = file_cfg[key]
    if args.r is not None:
        values["pmp_threshold"] = args.r
        values.setdefault("pck_threshold", args.r)
        if args.pck_threshold is None:
            values["pck_threshold"] = args.r
    if args.pck_threshold is not None:
        values["pck_threshold"] = args.pck_threshold
    if args.pck_scale is not None:
        values["pck_scale_mode"] = args.pck_scale
    if getattr(args, "oks_scale", None) is not None:
        values["oks_scale"] = args.oks_scale
    if "oks_k" in values:
        values["oks_k"] = tuple(values["oks_k"])
    return EvalConfig(**values)


def _cmd_evaluate(args) -> int:
    gt = parse_coco(args.gt)
    pred = parse_coco(args.pred)
    cfg = _eval_config(args)
    metrics = {
        "oks": ("oks",),
        "pck": ("pck",),
        "pmp": ("pmp",),
        "all": ("oks", "pck", "pmp", "phenotypes"),
    }[args.metric]
    report = evaluate_datasets(gt, pred, cfg, metrics=metrics)
    doc = report_to_dict(report)
    doc["metric"] = args.metric
    _write_json(args.out, doc)
    return 0


def _cmd_prior(args) -> int:
    dataset = parse_coco(args.train)
    species = args.species
    if species is not None:
        records = tuple(r for r in dataset if r.keypoints.species == species)
        if not records:
            raise PhenokeyError(f"no records with species {species!r} in {args.train}")
        dataset = Dataset(records=records, role=dataset.role)
    prior = fit_prior(dataset, species=species or "other")
    _write_json(args.out, prior_to_dict(prior))
    return 0


def _cmd_acr(args) -> int:
    pred = parse_coco(args.pred)
    with open(args.prior, encoding="utf-8") as fh:
        prior = prior_from_dict(json.load(fh))
    per_image = []
    total = 0.0
    for rec in pred:
        box = box_for_keypoints(prior, rec.keypoints)
        loss = acr_loss(rec.keypoints, box)
        grad = acr_gradient(rec.keypoints, box)
        total += loss
        per_image.append(
            {
                "image_id": rec.image_id,
                "loss": loss,
                "keypoints_outside": int((grad != 0).any(axis=1).sum()),
                "gradient": grad.tolist(),
            }
        )
    _write_json(args.out, {"schema_version": 1, "total_loss": total, "per_image": per_image})
    return 0


def _cmd_train_toy(args) -> int:
    problem = make_toy_problem(
        n=args.n, feature_dim=args.feature_dim, seed=args.seed, template=args.template
    )
    cfg = TrainConfig(
        steps=args.steps,
        lr=args.lr,
        lr_decay=args.lr_decay,
        lr_weights=args.lr_weights,
        alpha=args.alpha,
        use_acr=(args.acr == "on"),
    )
    predictor = ToyPredictor.mean_baseline(problem.targets, args.feature_dim)
    try:
        _, trace = train(predictor, problem, cfg)
    except DivergenceError as exc:
        if exc.trace is not None:
            exc.trace.to_csv(args.trace)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    trace.to_csv(args.trace)
    last = trace[-1]
    sys.stderr.write(
        f"finished {args.steps} steps: L_mse={last.l_mse:.6g} L_acr={last.l_acr:.6g} "
        f"violations={last.violation_count}\n"
    )
    return 0


def _cmd_synth(args) -> int:
    template = load_template(args.template)
    dataset = generate_population(template, args.n, seed=args.seed, role=args.role)
    if args.perturb is not None:
        model = PerturbationModel(mode=args.perturb, magnitude=args.magnitude, seed=args.seed)
        dataset = perturb(dataset, model)
    serialize_coco(dataset, args.out)
    sys.stderr.write(f"wrote {len(dataset)} records to {args.out}\n")
    return 0


def _cmd_plot(args) -> int:
    gt = parse_coco(args.gt)
    if args.kind == "scatter":
        pred = parse_coco(args.pred[0].split("=", 1)[-1])
        gt_vals, pred_vals = phenotype_value_pairs(gt, pred, args.phenotype)
        plot_scatter(list(zip(gt_vals, pred_vals)), args.out, title=args.phenotype)
    else:
        deviations = {}
        for spec_item in args.pred:
            label, _, path = spec_item.partition("=")
            if not path:
                label, path = spec_item, spec_item
            pred = parse_coco(path)
            pred_by_id = {r.image_id: r for r in pred}
            values = []
            for rec in gt:
                pr = pred_by_id.get(rec.image_id)
                if pr is None:
                    raise PhenokeyError(f"prediction file {path} missing image {rec.image_id!r}")
                diff = pr.keypoints.xy - rec.keypoints.xy
                dist = (diff**2).sum(axis=1) ** 0.5
                values.extend(float(d) for d, vis in zip(dist, rec.keypoints.visible) if vis)
            deviations[label] = values
        plot_deviation_summary(deviations, args.out, csv_path=args.csv)
    return 0


def _cmd_report(args) -> int:
    with open(args.evaluation, encoding="utf-8") as fh:
        evaluation = json.load(fh)
    measurements = []
    with open(args.measures, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            measurements.append(row)
    _write_json(
        args.out,
        {"schema_version": 1, "evaluation": evaluation, "measurements": measurements},
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phenokey",
        description="Fish morphometric keypoint evaluation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an annotation file against all invariants")
    p.add_argument("--input", required=True)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("measure", help="measure the 23 phenotypes per image as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(fn=_cmd_measure)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--metric", choices=["oks", "pck", "pmp", "all"], default="all")
    p.add_argument("--r", type=float, default=None, help="threshold (default 0.1)")
    p.add_argument("--pck-threshold", type=float, default=None)
    p.add_argument("--pck-scale", choices=list(PCK_SCALE_MODES), default=None)
    p.add_argument("--oks-scale", type=float, default=None)
    p.add_argument("--config", default=None, help="JSON file with EvalConfig overrides")
    p.add_argument("--out", default=None, help="report path (default stdout)")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("prior", help="fit the anatomical prior from training ground truth")
    p.add_argument("--train", required=True)
    p.add_argument("--species", choices=list(SPECIES), default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_prior)

    p = sub.add_parser("acr", help="evaluate box-constraint loss/gradient for predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_acr)

    p = sub.add_parser("train-toy", help="run the toy constrained trainer, writing a trace CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=2.0)
    p.add_argument("--lr-decay", type=float, default=0.0)
    p.add_argument("--acr", choices=["on", "off"], default="on")
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--lr-weights", type=float, default=0.025)
    p.add_argument("--n", type=int, default=48)
    p.add_argument("--feature-dim", type=int, default=6)
    p.add_argument("--template", default="deep_bodied")
    p.add_argument("--trace", required=True, help="trace CSV output path")
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("synth", help="generate a synthetic population (optionally perturbed)")
    p.add_argument("--template", required=True, help="built-in name or template JSON path")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--role", choices=["train", "test"], default="train")
    p.add_argument("--perturb", choices=["uniform_px", "proportional_to_shortest_phenotype"],
                   default=None)
    p.add_argument("--magnitude", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("plot", help="emit SVG plots (scatter with fit, deviation boxes)")
    p.add_argument("--kind", choices=["scatter", "deviation"], required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", action="append", required=True,
                   help="prediction file; for deviation plots use LABEL=FILE, repeatable")
    p.add_argument("--phenotype", default="TL", help="phenotype abbreviation for scatter plots")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="quantile CSV path (deviation plots)")
    p.set_defaults(fn=_cmd_plot)

    p = sub.add_parser("report", help="compose evaluate and measure outputs without recomputation")
    p.add_argument("--evaluation", required=True, help="report JSON from `evaluate`")
    p.add_argument("--measures", required=True, help="CSV from `measure`")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.fn(args)
    except (PhenokeyError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
