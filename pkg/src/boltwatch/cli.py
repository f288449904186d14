"""Command-line front end: ``boltwatch {synth,track,study,eval,hough}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 evaluation
undefined (every ground-truth rotation is ~0).  All angles in files are
radians; ``--degrees`` only changes what is printed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import synth
from .detection import AnnotationDetector, BlobDetector, load_manifest
from .errors import FrameReadError, InvalidConfig, InvalidParameter, UndefinedMetric
from .evaluation import StudyGrid, read_gt, run_param_study, score_bolts, write_gnuplot
from .fileio import atomic_path, write_text
from .geometry import MsacConfig
from .hough import DEFAULT_THRESHOLDS, edge_map, hough_lines
from .imagecore import read_image, write_image
from .pipeline import PipelineConfig, read_history, run

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_UNDEFINED = 0, 2, 3, 4
SEED_ENV = "BOLTWATCH_SEED"
DETECTORS = ("annotation", "blob")
PRESETS = {
    "clean_rotation": synth.clean_rotation_scene,
    "static": synth.static_scene,
    "six_bolt": synth.six_bolt_scene,
    "lighting_switch": synth.lighting_switch_scene,
    "study": synth.study_scene,
}

log = logging.getLogger("boltwatch")


class ConfigError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


@dataclass
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    detector: str = "annotation"
    seed: int | None = None
    outputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"pipeline": self.pipeline.to_dict(), "detector": self.detector, "seed": self.seed,
                "outputs": dict(self.outputs)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise InvalidConfig("run config must be a JSON object")
        unknown = set(d) - {"pipeline", "detector", "seed", "outputs"}
        if unknown:
            raise InvalidConfig(f"unknown run config fields: {sorted(unknown)}")
        try:
            pipe = PipelineConfig.from_dict(d.get("pipeline", {}))
        except (TypeError, InvalidParameter) as exc:
            raise InvalidConfig(f"pipeline: {exc}") from exc
        det = d.get("detector", "annotation")
        if det not in DETECTORS:
            raise InvalidConfig(f"detector: expected one of {DETECTORS}, got {det!r}")
        seed = d.get("seed")
        if seed is not None and not isinstance(seed, int):
            raise InvalidConfig("seed: expected an integer")
        return cls(pipe, det, seed, dict(d.get("outputs", {})))

    def resolved(self) -> PipelineConfig:
        """Pipeline config with the MSAC seed taken from ``seed`` (or the environment)."""
        seed = self.seed if self.seed is not None else default_seed()
        m = self.pipeline.msac
        return PipelineConfig(**{**self.pipeline.__dict__,
                                 "msac": MsacConfig(m.inlier_threshold, m.confidence, m.max_trials, seed)})


def load_json(path) -> dict:
    """Parse a JSON file, turning syntax errors into ``line N`` diagnostics."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _read_frames(files):
    for k, f in enumerate(files):
        try:
            yield read_image(f)
        except (OSError, ValueError) as exc:
            raise FrameReadError(k, f, f"({exc})") from exc


def _manifest(path, frames_dir=None):
    """Load a manifest, checking its ROIs against the size of the first frame."""
    path = Path(path)
    doc = load_json(path)
    try:
        names = [Path(f["file"]).name if frames_dir else f["file"] for f in doc["frames"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: every frame needs a 'file' entry") from exc
    if not names:
        raise ConfigError(f"{path}: no frames listed")
    base = Path(frames_dir) if frames_dir else path.parent
    first = next(_read_frames([base / names[0]]))
    manifest = load_manifest(path, (first.shape[1], first.shape[0]))
    manifest.files = [base / n for n in names]
    return manifest


def _fmt_angle(x: float, degrees: bool) -> str:
    return f"{math.degrees(x):.4f} deg" if degrees else f"{x:.6f} rad"


def cmd_synth(args) -> int:
    doc = load_json(args.config)
    if "preset" in doc:
        name = doc["preset"]
        if name not in PRESETS:
            raise ConfigError(f"{args.config}: preset: unknown {name!r}; choose from {sorted(PRESETS)}")
        try:
            scene = PRESETS[name](**doc.get("args", {}))
        except TypeError as exc:
            raise ConfigError(f"{args.config}: args: {exc}") from exc
    else:
        try:
            scene = synth.SceneConfig.from_dict(doc)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    scene.validate()
    manifest = synth.generate(scene, args.out, ext=args.ext)
    print(f"wrote {scene.frame_count} frames and {manifest}")
    return EXIT_OK


def cmd_track(args) -> int:
    rc = RunConfig.from_dict(load_json(args.config)) if args.config else RunConfig()
    if args.seed is not None:
        rc.seed = args.seed
    if args.detector:
        rc.detector = args.detector
    cfg = rc.resolved()
    if args.no_redetect:
        cfg = PipelineConfig(**{**cfg.__dict__, "redetect": False})
    manifest = _manifest(args.manifest, args.frames)
    detector = AnnotationDetector.from_manifest(manifest) if rc.detector == "annotation" else BlobDetector()
    history = run(_read_frames(manifest.files), detector, cfg, manifest.fps)
    sign = -1.0 if args.ccw_positive else 1.0
    with atomic_path(args.out) as tmp:
        history.write_csv(tmp, sign)
    if args.summary:
        with atomic_path(args.summary) as tmp:
            history.write_summary(tmp, sign)
    if args.gnuplot:
        with atomic_path(args.gnuplot) as tmp:
            write_gnuplot(history, tmp, sign)
    if args.report:
        from .plotting import plot_history

        rows = read_history(args.out)
        gt = None
        gt_path = Path(args.manifest).parent / "gt.csv"
        if gt_path.exists():
            gt = _gt_series(gt_path, sign)
        with atomic_path(Path(args.report) / "history.png") as tmp:
            plot_history(rows, tmp, gt, args.degrees)
    for b, info in sorted(history.summary["bolts"].items(), key=lambda kv: int(kv[0])):
        print(f"bolt {b}: phi = {_fmt_angle(sign * info['final_phi'], args.degrees)}, "
              f"status {info['status']}, redetects {info['events']['redetect']}")
    return EXIT_OK


def _gt_series(path, sign: float = 1.0) -> dict[int, list[tuple[float, float]]]:
    import csv

    series: dict[int, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            series.setdefault(int(rec["bolt_id"]), []).append((float(rec["time_s"]), sign * float(rec["theta_rad"])))
    return series


def cmd_study(args) -> int:
    try:
        grid = StudyGrid.from_dict(load_json(args.grid))
    except (TypeError, ValueError, InvalidParameter) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{args.grid}: {exc}") from exc
    scene_dir = Path(args.scene)
    manifest = _manifest(scene_dir / "manifest.json")
    gt = read_gt(args.gt or scene_dir / "gt.csv")
    if args.bolt not in gt:
        raise ConfigError(f"bolt {args.bolt} has no ground truth")
    frames = list(_read_frames(manifest.files))
    detector = AnnotationDetector.from_manifest(manifest)

    def progress(i, row):
        log.info("cell %d/%d np=%d be=%g bs=%d ni=%d accuracy=%.4f", i + 1, len(grid),
                 row.np, row.be, row.bs, row.ni, row.accuracy)

    result = run_param_study(grid, frames, detector, gt[args.bolt], manifest.fps, args.bolt, progress)
    with atomic_path(args.out) as tmp:
        result.write_csv(tmp)
    summary = args.summary or Path(args.out).with_name("study_summary.json")
    with atomic_path(summary) as tmp:
        result.write_summary(tmp)
    if args.report:
        from .plotting import plot_study

        with atomic_path(Path(args.report) / "study.png") as tmp:
            plot_study(result, tmp)
    for p, means in result.marginals().items():
        print(p + ": " + ", ".join(f"{k}={100 * v:.2f}%" for k, v in means.items()))
    return EXIT_OK


def cmd_eval(args) -> int:
    rows = read_history(args.pred)
    pred: dict[int, float] = {}
    for r in rows:
        pred[r.bolt_id] = r.cum_rad
    gt = read_gt(args.gt)
    scores = score_bolts(pred, gt)
    out = []
    for s in scores:
        if s.accuracy is None:
            print(f"bolt {s.bolt_id}: ground truth ~0, |phi| = {_fmt_angle(s.abs_phi, args.degrees)}")
        else:
            print(f"bolt {s.bolt_id}: phi = {_fmt_angle(s.phi, args.degrees)}, "
                  f"gt = {_fmt_angle(s.phi_gt, args.degrees)}, accuracy = {s.accuracy:.5f}")
        out.append({"bolt_id": s.bolt_id, "phi": s.phi, "phi_gt": s.phi_gt, "accuracy": s.accuracy,
                    "abs_phi": s.abs_phi})
    if args.json:
        write_text(args.json, json.dumps(out, indent=1) + "\n")
    if scores and all(s.accuracy is None for s in scores):
        print("accuracy undefined: every ground-truth rotation is ~0", file=sys.stderr)
        return EXIT_UNDEFINED
    return EXIT_OK


def cmd_hough(args) -> int:
    try:
        img = read_image(args.image)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read {args.image}: {exc}") from exc
    thresholds = args.thresholds
    if thresholds is not None:
        thresholds = thresholds[0] if len(thresholds) == 1 else tuple(thresholds)
    edges = edge_map(img, args.method, thresholds)
    lines = hough_lines(edges, args.peaks)
    if args.edges_out:
        with atomic_path(args.edges_out) as tmp:
            write_image(tmp, edges.astype(float))
    text = "rho,theta_deg,votes\n" + "".join(f"{ln.rho:.6f},{ln.theta_line:.6f},{ln.votes}\n" for ln in lines)
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)
    if args.report:
        from .plotting import plot_hough

        with atomic_path(Path(args.report) / "hough.png") as tmp:
            plot_hough(img, edges, lines, tmp)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boltwatch", description="Bolt rotation tracking from video frames.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic scene with ground truth")
    s.add_argument("--config", required=True, help="scene JSON, or {\"preset\": name, \"args\": {...}}")
    s.add_argument("--out", required=True)
    s.add_argument("--ext", default="png", choices=("png", "pgm"))
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("track", help="estimate per-bolt rotation over a frame sequence")
    t.add_argument("--frames", help="frame directory (defaults to the manifest's directory)")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config", help="run config JSON")
    t.add_argument("--out", required=True, help="history CSV")
    t.add_argument("--summary", help="summary JSON")
    t.add_argument("--gnuplot", help="flat text time history")
    t.add_argument("--report", help="directory for figures")
    t.add_argument("--detector", choices=DETECTORS)
    t.add_argument("--seed", type=int)
    t.add_argument("--ccw-positive", action="store_true", help="report counter-clockwise turns as positive")
    t.add_argument("--no-redetect", action="store_true", help="track only; never call the detector again")
    t.add_argument("--degrees", action="store_true", help="print angles in degrees")
    t.set_defaults(func=cmd_track)

    g = sub.add_parser("study", help="run the NP x BE x BS x NI parameter grid")
    g.add_argument("--grid", required=True)
    g.add_argument("--scene", required=True, help="directory written by `synth`")
    g.add_argument("--gt", help="ground truth CSV (defaults to SCENE/gt.csv)")
    g.add_argument("--bolt", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--summary")
    g.add_argument("--report", help="directory for figures")
    g.set_defaults(func=cmd_study)

    e = sub.add_parser("eval", help="score a history CSV against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--json")
    e.add_argument("--degrees", action="store_true")
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("hough", help="edge map plus Hough lines for one image")
    h.add_argument("--image", required=True)
    h.add_argument("--method", default="canny", choices=sorted(DEFAULT_THRESHOLDS))
    h.add_argument("--thresholds", type=float, nargs="+")
    h.add_argument("--peaks", type=int, default=6)
    h.add_argument("--edges-out", help="edge raster (PGM or PNG)")
    h.add_argument("--out", help="lines CSV (stdout if omitted)")
    h.add_argument("--report", help="directory for figures")
    h.set_defaults(func=cmd_hough)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidConfig, InvalidParameter) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UndefinedMetric as exc:
        print(f"evaluation undefined: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except FrameReadError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
