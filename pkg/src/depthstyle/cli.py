"""Command-line interface.

Subcommands:
    train          train one style model from a config file
    stylize        apply a trained model to a file or directory
    eval           score one (content, stylized) pair
    eval-table     aggregate a manifest of methods into a comparison table
    sweep          train several depth weights and chart the trade-off
    depth-compare  render side-by-side depth maps for a set of images

Config files are flat YAML (or JSON) whose keys mirror TrainConfig;
command-line flags override file values. Report-writing commands also
render a matplotlib figure next to the delimited output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import depth as depth_mod
from . import evaluation, plots
from .errors import ConfigurationError
from .images import load_image, to_uint8
from .inference import StylizeRequest, stylize_batch
from .training import TrainConfig, sweep_depth_weight, train

log = logging.getLogger("depthstyle")


def load_train_config(path=None, overrides: dict | None = None) -> TrainConfig:
    data = {}
    if path:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {path} must contain a mapping")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return TrainConfig.from_dict(data)


def cmd_train(args) -> int:
    config = load_train_config(args.config, {
        "style_image": args.style,
        "dataset_root": args.data,
        "depth_weight": args.depth_weight,
        "iterations": args.iterations,
        "seed": args.seed,
    })
    out_dir = Path(args.out)
    net, train_log = train(config, out_dir=out_dir)
    figure = plots.plot_training_log(train_log, out_dir / "training_log.png")
    print(f"model: {out_dir / 'model.npz'}")
    print(f"log: {out_dir / 'training_log.csv'}")
    print(f"figure: {figure}")
    return 0


def cmd_stylize(args) -> int:
    request = StylizeRequest(model_path=args.model, input_path=args.input,
                             output_path=args.output, max_dim=args.max_dim)
    report = stylize_batch(request)
    print(report.summary())
    for path, reason in report.failures.items():
        print(f"  failed: {path}: {reason}")
    return 0 if not report.failures else 1


def _build_depth_estimator(name: str):
    return depth_mod.depth_backend(name)


def cmd_eval(args) -> int:
    estimator = _build_depth_estimator(args.depth_backend)
    row = evaluation.evaluate_pair(args.content, args.stylized, estimator,
                                   args.saliency_backend)
    for name, value in row.values().items():
        print(f"{name}: {'missing' if value is None else f'{value:.4f}'}")
    for note in row.notes:
        print(f"note: {note}")
    if args.report:
        payload = {"schema_version": evaluation.REPORT_SCHEMA_VERSION,
                   "content": row.content, "stylized": row.stylized,
                   **row.values(), "notes": row.notes}
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(json.dumps(payload, indent=2))
        print(f"report: {args.report}")
    return 0


def cmd_eval_table(args) -> int:
    manifest = evaluation.read_manifest_csv(args.manifest)
    estimator = _build_depth_estimator(args.depth_backend)
    table = evaluation.compare_methods(manifest, estimator, args.saliency_backend)
    out = Path(args.out)
    if out.suffix == ".json":
        table.write_json(out)
    else:
        table.write_csv(out)
    figure_path = Path(args.figure) if args.figure else out.with_suffix(".png")
    plots.plot_method_comparison(table, figure_path)
    print(f"table: {out}")
    print(f"figure: {figure_path}")
    for metric, ranked in table.best.items():
        if ranked:
            print(f"best {metric}: {ranked[0]}" + (f" (then {ranked[1]})" if len(ranked) > 1 else ""))
    missing = {m: files for m, files in table.missing.items() if files}
    if missing:
        print(f"missing files: {missing}")
    return 0


def cmd_sweep(args) -> int:
    config = load_train_config(args.config, {
        "style_image": args.style,
        "dataset_root": args.data,
        "iterations": args.iterations,
        "seed": args.seed,
    })
    weights = [float(w) for w in args.depth_weights.split(",")]
    out_dir = Path(args.out)
    points = sweep_depth_weight(config, weights, args.held_out, out_dir=out_dir)
    summaries = [p.summary for p in points]
    csv_path = out_dir / "sweep_summary.csv"
    with open(csv_path, "w") as fh:
        keys = list(summaries[0])
        fh.write(",".join(keys) + "\n")
        for s in summaries:
            fh.write(",".join(f"{s[k]:.8g}" for k in keys) + "\n")
    figure = plots.plot_depth_tradeoff(summaries, out_dir / "sweep_tradeoff.png")
    print(f"summary: {csv_path}")
    print(f"figure: {figure}")
    for s in summaries:
        print(f"depth_weight={s['depth_weight']:g}: "
              f"depth-map SSIM {s['depth_map_ssim_mean']:.4f}, "
              f"final style loss {s['final_style_loss']:.4g}")
    return 0


def cmd_depth_compare(args) -> int:
    backends = args.backends.split(",")
    estimators = {name: _build_depth_estimator(name) for name in backends}
    labeled_images = []
    labeled_maps = {name: [] for name in backends}
    export_dir = Path(args.export_dir) if args.export_dir else None
    for path in args.images:
        image = load_image(path, size=args.size)
        labeled_images.append((Path(path).stem, to_uint8(image)[0]))
        for name, est in estimators.items():
            depth_map = depth_mod.estimate_depth(est, image)
            values = depth_map.values[0].detach().cpu().numpy()
            labeled_maps[name].append(values)
            if export_dir:
                depth_mod.export_depth_png(
                    depth_map, export_dir / f"{Path(path).stem}_{name}.png")
    figure = plots.plot_depth_comparison(labeled_images, labeled_maps, args.out)
    print(f"figure: {figure}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthstyle",
                                     description="depth-aware fast style transfer toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one style model")
    p.add_argument("--config", help="YAML/JSON file with TrainConfig keys")
    p.add_argument("--style", help="style image path (overrides config)")
    p.add_argument("--data", help="training image directory (overrides config)")
    p.add_argument("--depth-weight", type=float, default=None, dest="depth_weight")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("stylize", help="stylize a file or directory")
    p.add_argument("--model", required=True, help="model archive (.npz)")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--max-dim", type=int, default=None, dest="max_dim")
    p.set_defaults(fn=cmd_stylize)

    p = sub.add_parser("eval", help="score one content/stylized pair")
    p.add_argument("--content", required=True)
    p.add_argument("--stylized", required=True)
    p.add_argument("--report", help="write the row as JSON here")
    p.add_argument("--depth-backend", default="blur", dest="depth_backend")
    p.add_argument("--saliency-backend", default="spectral_residual", dest="saliency_backend")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("eval-table", help="aggregate a manifest into a method table")
    p.add_argument("--manifest", required=True,
                   help="CSV with columns method,content_path,stylized_path")
    p.add_argument("--out", required=True, help="output table (.csv or .json)")
    p.add_argument("--figure", help="figure path (default: table path with .png)")
    p.add_argument("--depth-backend", default="blur", dest="depth_backend")
    p.add_argument("--saliency-backend", default="spectral_residual", dest="saliency_backend")
    p.set_defaults(fn=cmd_eval_table)

    p = sub.add_parser("sweep", help="train several depth weights and chart the trade-off")
    p.add_argument("--config", help="YAML/JSON file with TrainConfig keys")
    p.add_argument("--style")
    p.add_argument("--data")
    p.add_argument("--depth-weights", required=True, dest="depth_weights",
                   help="comma-separated weights, e.g. 0,1e3,1e5")
    p.add_argument("--held-out", required=True, dest="held_out",
                   help="directory of held-out images for scoring")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("depth-compare", help="render side-by-side depth maps")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--backends", default="blur", help="comma-separated backend names")
    p.add_argument("--size", type=int, default=256, help="short-side resize before estimation")
    p.add_argument("--out", required=True, help="figure path (.png)")
    p.add_argument("--export-dir", dest="export_dir",
                   help="also write each map as a 16-bit grayscale PNG here")
    p.set_defaults(fn=cmd_depth_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
