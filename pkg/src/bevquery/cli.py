"""Command-line entry point: simulate, infer, fit, eval, plot-sampling, plot-tau.

Exit codes: 0 success, 2 usage or configuration error, 1 internal contract
violation. The worker thread count comes from BEVQUERY_NUM_THREADS.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np
import yaml

from .decoder import (MAX_LAYERS, ModelConfig, ModelParams, finalize, run_decoder,
                      sampling_probe)
from .errors import ConfigurationError, ContractViolation
from .io import atomic_write_text, dumps_jsonl, read_jsonl
from .metrics import evaluate
from .parallel import num_threads
from .plots import sampling_points_svg, tau_bars_svg, tau_curves_svg
from .sampling import SamplingConfig, StreamSpec, prepare_inputs
from .scene import Scene, SceneConfig, build_scene, gt_at
from .training import spsa_fit

log = logging.getLogger("bevquery")

SECTIONS = ("scene", "model", "sampling", "streams", "fit")
TAU_SCORE_THRESHOLD = 0.3


@dataclass
class FitConfig:
    steps: int = 500
    step_size: float = 3e-4
    perturb: float = 1e-2
    grad_clip: float = 10.0
    num_layers: int = None

    def __post_init__(self):
        if self.steps < 0 or self.step_size <= 0 or self.perturb <= 0:
            raise ConfigurationError("fit needs steps >= 0, step_size > 0, perturb > 0")


@dataclass
class Pipeline:
    scene: SceneConfig
    model: ModelConfig
    sampling: SamplingConfig
    fit: FitConfig

    def to_dict(self):
        sampling = self.sampling.to_dict()
        streams = sampling.pop("streams")
        scene = asdict(self.scene)
        for key in ("speed_range", "ego_velocity", "strides"):
            scene[key] = list(scene[key])
        return {"scene": scene, "model": asdict(self.model), "sampling": sampling,
                "streams": streams, "fit": asdict(self.fit)}


def _checked(section, raw, cls):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"section '{section}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"unknown keys in '{section}': {', '.join(unknown)}")
    return dict(raw)


def pipeline_from_dict(doc):
    """Build and cross-check every section; unknown sections or keys are errors."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a mapping of sections")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown config sections: {', '.join(unknown)}")
    try:
        scene = SceneConfig(**_checked("scene", doc.get("scene"), SceneConfig))
        model_raw = _checked("model", doc.get("model"), ModelConfig)
        model_raw.setdefault("channels", scene.channels)
        model_raw.setdefault("num_classes", scene.num_classes)
        model_raw.setdefault("roi_half_extent", scene.roi_half_extent)
        model = ModelConfig(**model_raw)
        sampling_raw = _checked("sampling", doc.get("sampling"), SamplingConfig)
        if "streams" in sampling_raw:
            raise ConfigurationError("streams belong in their own section")
        streams = doc.get("streams") or []
        if not isinstance(streams, list):
            raise ConfigurationError("section 'streams' must be a list")
        streams = [StreamSpec(**_checked("streams", s, StreamSpec)) for s in streams]
        sampling = SamplingConfig(**sampling_raw, streams=streams)
        fit = FitConfig(**_checked("fit", doc.get("fit"), FitConfig))
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
    if model.channels != scene.channels:
        raise ConfigurationError(
            f"model.channels={model.channels} but the scene renders {scene.channels}")
    if model.num_classes < scene.num_classes:
        raise ConfigurationError("model.num_classes is smaller than the scene's classes")
    if sampling.num_frames > scene.num_frames:
        raise ConfigurationError("sampling.num_frames exceeds scene.num_frames")
    if sampling.num_levels > len(scene.strides):
        raise ConfigurationError("sampling.num_levels exceeds the number of strides")
    return Pipeline(scene, model, sampling, fit)


def load_config(path):
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: malformed config: {exc}") from exc
    return pipeline_from_dict(doc)


def load_scene_file(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: malformed scene file: {exc}") from exc
    if "pipeline" not in doc:
        raise ConfigurationError(f"{path}: scene file lacks its pipeline config")
    return Scene.from_dict(doc), pipeline_from_dict(doc["pipeline"])


def _params(args, pipe):
    if args.params:
        params = ModelParams.load(args.params)
        if params.config.channels != pipe.model.channels:
            raise ConfigurationError("params were built for a different channel count")
        return params
    return ModelParams.init(pipe.model, pipe.sampling, seed=args.seed)


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)


def _layers(value):
    if not 1 <= value <= MAX_LAYERS:
        raise ConfigurationError(f"layer must be in 1..{MAX_LAYERS}, got {value}")
    return value


def gt_jsonl_rows(scene):
    rows = []
    for t in range(scene.num_frames):
        gt = gt_at(scene, t)
        for oid, cls, box in zip(gt.object_ids, gt.class_ids, gt.boxes):
            rows.append({"frame": t, "object_id": int(oid), "class": int(cls),
                         "box": [float(x) for x in box]})
    return rows


def cmd_simulate(args):
    pipe = load_config(args.config)
    scene = build_scene(pipe.scene, args.seed)
    doc = scene.to_dict()
    doc["pipeline"] = pipe.to_dict()
    gt_path = args.gt or os.path.splitext(args.out)[0] + ".gt.jsonl"
    atomic_write_text(args.out, json.dumps(doc, sort_keys=True, indent=1) + "\n")
    atomic_write_text(gt_path, dumps_jsonl(gt_jsonl_rows(scene)))
    log.info("wrote %s and %s", args.out, gt_path)
    return 0


def cmd_infer(args):
    layers = _layers(args.layers) if args.layers is not None else None
    scene, pipe = load_scene_file(args.scene)
    params = _params(args, pipe)
    layers = layers or params.config.num_layers
    inputs = prepare_inputs(scene, params.sampling_config, num_threads())
    dets = run_decoder(params, inputs, layers)
    rows = []
    for layer in range(layers):
        rows.extend(finalize(dets, args.score_threshold, layer))
    _write(args.out, dumps_jsonl(rows))
    return 0


def cmd_fit(args):
    scene, pipe = load_scene_file(args.scene)
    params = _params(args, pipe)
    steps = pipe.fit.steps if args.steps is None else args.steps
    inputs = prepare_inputs(scene, params.sampling_config, num_threads())
    fitted, trace = spsa_fit(params, inputs, gt_at(scene, 0), steps,
                             step_size=pipe.fit.step_size, perturb=pipe.fit.perturb,
                             seed=args.seed, num_layers=pipe.fit.num_layers,
                             threads=num_threads(), grad_clip=pipe.fit.grad_clip)
    fitted.save(args.out)
    lines = ["step,loss\n"] + [f"{i},{loss!r}\n" for i, loss in enumerate(trace)]
    _write(args.trace, "".join(lines))
    return 0


def cmd_eval(args):
    dets = read_jsonl(args.detections)
    gts = [g for g in read_jsonl(args.ground_truth) if g.get("frame", 0) == args.frame]
    layer = args.layer
    if layer is None and dets:
        layer = max(d["layer"] for d in dets)
    preds = [d for d in dets if d["layer"] == layer]
    report = evaluate(preds, gts)
    report["layer"] = layer
    report["frame"] = args.frame
    _write(args.out, json.dumps(report, sort_keys=True, indent=2) + "\n")
    return 0


def _frame_range(text, num_frames):
    try:
        if ":" in text:
            lo, hi = text.split(":", 1)
            frames = range(int(lo or 0), int(hi) if hi else num_frames)
        else:
            frames = range(int(text), int(text) + 1)
    except ValueError as exc:
        raise ConfigurationError(f"bad frame range '{text}'") from exc
    if not frames or frames.start < 0 or frames.stop > num_frames:
        raise ConfigurationError(f"frame range '{text}' outside 0..{num_frames - 1}")
    return frames


def cmd_plot_sampling(args):
    scene, pipe = load_scene_file(args.scene)
    params = _params(args, pipe)
    layer = _layers(args.layer or params.config.num_layers)
    frames = _frame_range(args.frames, params.sampling_config.num_frames)
    inputs = prepare_inputs(scene, params.sampling_config, num_threads())
    points = sampling_probe(params, inputs, layer)
    os.makedirs(args.out_dir, exist_ok=True)
    for t in frames:
        for k, cam in enumerate(scene.cameras):
            svg = sampling_points_svg(points[:, t], cam,
                                      title=f"layer {layer} frame {t} view {k}")
            atomic_write_text(os.path.join(args.out_dir, f"sampling_f{t}_v{k}.svg"), svg)
    return 0


def tau_summary(taus, scores, num_classes, threshold=TAU_SCORE_THRESHOLD):
    """Per-query dump plus class and head means over confident queries."""
    cls = np.argmax(scores, axis=1)
    best = scores[np.arange(len(cls)), cls]
    dump = [{"query_id": i, "class": int(cls[i]), "score": float(best[i]),
             "taus": [float(x) for x in taus[i]]} for i in range(len(cls))]
    keep = best > threshold
    class_means, counts = [], []
    for c in range(num_classes):
        sel = keep & (cls == c)
        counts.append(int(sel.sum()))
        class_means.append(float(np.mean(taus[sel])) if sel.any() else None)
    pool = taus[keep] if keep.any() else taus
    head_means = [float(x) for x in np.mean(pool, axis=0)]
    return dump, {"score_threshold": threshold, "class_mean_tau": class_means,
                  "class_counts": counts, "head_mean_tau": head_means,
                  "head_pool": "confident" if keep.any() else "all"}


def cmd_plot_tau(args):
    scene, pipe = load_scene_file(args.scene)
    params = _params(args, pipe)
    layer = _layers(args.layer or params.config.num_layers)
    inputs = prepare_inputs(scene, params.sampling_config, num_threads())
    dets = run_decoder(params, inputs, layer)
    dump, summary = tau_summary(dets.taus[-1], dets.scores[-1], params.config.num_classes,
                                args.score_threshold)
    summary["layer"] = layer
    os.makedirs(args.out_dir, exist_ok=True)
    out = args.out_dir
    atomic_write_text(os.path.join(out, "tau_queries.jsonl"), dumps_jsonl(dump))
    atomic_write_text(os.path.join(out, "tau_summary.json"),
                      json.dumps(summary, sort_keys=True, indent=2) + "\n")
    atomic_write_text(os.path.join(out, "tau_classes.svg"),
                      tau_bars_svg(summary["class_mean_tau"], summary["class_counts"]))
    atomic_write_text(os.path.join(out, "tau_curves.svg"),
                      tau_curves_svg(summary["head_mean_tau"], params.config.distance_fn))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="bevquery", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="build a synthetic scene and its ground truth")
    p.add_argument("config")
    p.add_argument("out", help="scene JSON path")
    p.add_argument("--gt", help="ground-truth JSONL path (default: <out>.gt.jsonl)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    def model_args(p):
        p.add_argument("scene")
        p.add_argument("--params", help="params file (default: fresh init from --seed)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("infer", help="run the decoder and write detections JSONL")
    model_args(p)
    p.add_argument("--layers", type=int)
    p.add_argument("--score-threshold", type=float, default=0.0)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("fit", help="fit params to the scene's current-frame ground truth")
    model_args(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True, help="fitted params path")
    p.add_argument("--trace", required=True, help="loss trace CSV path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("detections")
    p.add_argument("ground_truth")
    p.add_argument("--layer", type=int, help="detections layer (default: deepest present)")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot-sampling", help="SVG of sampling points per frame and view")
    model_args(p)
    p.add_argument("--layer", type=int)
    p.add_argument("--frames", default="0:", help="frame or start:stop range")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot_sampling)

    p = sub.add_parser("plot-tau", help="SVG summaries of the learned attention falloff")
    model_args(p)
    p.add_argument("--layer", type=int)
    p.add_argument("--score-threshold", type=float, default=TAU_SCORE_THRESHOLD)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot_tau)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, OSError, KeyError, ValueError) as exc:
        print(f"bevquery {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ContractViolation as exc:
        print(f"bevquery {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
