"""Command-line pipeline orchestration.

Each stage reads and writes sidecar files inside a work directory, one
subdirectory per record, so stages can be scripted independently; ``all``
chains them with per-record isolation (one bad scan never aborts the batch).
Every run writes a machine-readable JSON-lines log. With a fixed seed and
config, reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, bundle as bundle_io
from .core import (
    StereopaneError,
    centered_camera,
    make_gd,
    normalize_inverse_depth,
)
from .disparity import (
    MatcherConfig,
    dense_disparity,
    disparity_to_depth,
    letterbox_disparity,
)
from .geometry import boundary_mask, compute_rig
from .ingest import align_crops_verbose, fetch_records, match_and_cull, mutual_matches
from .inpaint import corner_gds, depth_loss, inpaint_gd_verbose, intensity_loss, request_from_gd
from .rectify import apply_and_offset, estimate_fundamental, loop_zhang_rectify
from .viewsynth import SceneRenderer, benchmark


@dataclass(frozen=True)
class PipelineConfig:
    """Stage parameters; defaults are the pipeline's published constants."""

    ratio_threshold: float = 0.7
    cull_min_matches: int = 10
    cull_fraction: float = 0.005
    review_fraction: float = 0.015
    vertical_slack: int = 2
    patch: int = 9
    levels: int = 3
    max_disp: int | None = None
    triangle_threshold: float = 0.1
    lambda_hole: float = 6.0
    lambda_tv: float = 0.1
    boundary_ring: float = 5.0
    boundary_ratio: float = 1.1
    depth_tolerance: float = 0.01
    workers: int = 1
    seed: int = 0
    limit: int | None = None
    http_retries: int = 2

    def __post_init__(self):
        for name in ("ratio_threshold", "cull_fraction", "review_fraction",
                     "triangle_threshold", "lambda_hole", "lambda_tv",
                     "boundary_ring", "boundary_ratio", "depth_tolerance"):
            if getattr(self, name) <= 0:
                raise StereopaneError(f"config {name} must be positive")

    def matcher(self) -> MatcherConfig:
        return MatcherConfig(max_disp=self.max_disp,
                             vertical_slack=self.vertical_slack,
                             patch=self.patch, levels=self.levels)


def _parse_scalar(text: str):
    t = text.strip()
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    if t.lower() in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t.strip("\"'")


def load_config_file(path) -> dict:
    """Flat key = value config text; '#' starts a comment."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise StereopaneError(f"bad config line: {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_scalar(value)
    return out


def build_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        file_values = load_config_file(args.config)
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(file_values) - known
        if unknown:
            raise StereopaneError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **file_values)
    overrides = {}
    for name in ("seed", "workers", "limit", "max_disp"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    return replace(cfg, **overrides) if overrides else cfg


class RunLog:
    """One JSON object per line: record id, stage, status, reason."""

    def __init__(self, path: Path, truncate: bool = False):
        self.path = path
        self.entries: list[dict] = []
        if truncate and path.exists():
            path.unlink()

    def add(self, record: str, stage: str, status: str, reason: str = ""):
        self.entries.append({"record": record, "stage": stage,
                             "status": status, "reason": reason})

    def flush(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e, sort_keys=True) + "\n")
        self.entries = []


def _record_dirs(workdir: Path) -> list[Path]:
    return sorted(p for p in workdir.iterdir()
                  if p.is_dir() and (p / "left.png").is_file())


# --- stages ----------------------------------------------------------------

def stage_ingest(locator: str, out: Path, cfg: PipelineConfig, log: RunLog) -> int:
    records = fetch_records(locator, limit=cfg.limit, retries=cfg.http_retries,
                            workers=cfg.workers)
    kept = 0
    for rec in records:
        report = match_and_cull(rec, cfg.ratio_threshold)
        rdir = out / rec.id
        rdir.mkdir(parents=True, exist_ok=True)
        bundle_io.write_manifest(rdir / "report.json", {
            "n_keypoints": report.n_keypoints,
            "n_good": report.n_good,
            "verdict": report.verdict,
            "reason": report.reason,
        })
        if report.verdict == "cull":
            log.add(rec.id, "ingest", "cull", report.reason)
            continue
        if report.verdict == "review":
            print(f"review: {rec.id} ({report.reason})")
            log.add(rec.id, "ingest", "review", report.reason)
        try:
            left, right, info = align_crops_verbose(rec, cfg.ratio_threshold)
        except StereopaneError as exc:
            log.add(rec.id, "ingest", "error", str(exc))
            continue
        bundle_io.save_png16(rdir / "left.png", left.data)
        bundle_io.save_png16(rdir / "right.png", right.data)
        bundle_io.write_manifest(rdir / "meta.json", {
            **rec.metadata,
            "align": {"origin_left": list(info["origin_left"]),
                      "origin_right": list(info["origin_right"]),
                      "shift": list(info["shift"])},
            "full_size_left": [rec.left.width, rec.left.height],
        })
        log.add(rec.id, "ingest", "ok")
        kept += 1
    return kept


def _principal_from_meta(meta: dict, shape) -> np.ndarray | None:
    """Full-frame center in aligned-crop coordinates, if it lies inside."""
    try:
        full_w, full_h = meta["full_size_left"]
        ox, oy = meta["align"]["origin_left"]
    except (KeyError, TypeError):
        return None
    px = (full_w - 1) / 2.0 - ox
    py = (full_h - 1) / 2.0 - oy
    h, w = shape
    if 0 <= px <= w - 1 and 0 <= py <= h - 1:
        return np.array([px, py])
    return None


def stage_rectify(workdir: Path, cfg: PipelineConfig, log: RunLog) -> int:
    from .ingest import load_image_gray
    done = 0
    for rdir in _record_dirs(workdir):
        rec_id = rdir.name
        try:
            left = load_image_gray(rdir / "left.png")
            right = load_image_gray(rdir / "right.png")
            meta = json.loads((rdir / "meta.json").read_text(encoding="utf-8")) \
                if (rdir / "meta.json").is_file() else {}
            matches, _ = mutual_matches(left.data, right.data,
                                        cfg.ratio_threshold)
            fm, inliers = estimate_fundamental(matches, seed=cfg.seed)
            principal = _principal_from_meta(meta, left.shape)
            h_l, h_r = loop_zhang_rectify(fm, (left.width, left.height),
                                          principal)
            pair = apply_and_offset(left, right, h_l, h_r, matches[inliers])
            bundle_io.save_rectified(rdir, pair)
            log.add(rec_id, "rectify", "ok")
            done += 1
        except StereopaneError as exc:
            log.add(rec_id, "rectify", "error", str(exc))
    return done


def stage_disparity(workdir: Path, cfg: PipelineConfig, log: RunLog,
                    letterbox: int | None = None) -> int:
    done = 0
    for rdir in _record_dirs(workdir):
        rec_id = rdir.name
        if not (rdir / "rect_meta.json").is_file():
            continue
        try:
            pair = bundle_io.load_rectified(rdir)
            disp = dense_disparity(pair, cfg.matcher())
            bundle_io.save_disparity(rdir, disp)
            if letterbox:
                boxed = letterbox_disparity(disp, letterbox)
                sub = rdir / f"disp_{letterbox}"
                bundle_io.save_disparity(sub, boxed)
            log.add(rec_id, "disparity", "ok")
            done += 1
        except StereopaneError as exc:
            log.add(rec_id, "disparity", "error", str(exc))
    return done


def stage_build(workdir: Path, cfg: PipelineConfig, log: RunLog) -> int:
    done = 0
    for rdir in _record_dirs(workdir):
        rec_id = rdir.name
        if not (rdir / "disp_meta.json").is_file():
            continue
        try:
            pair = bundle_io.load_rectified(rdir)
            disp = bundle_io.load_disparity(rdir)
            depth, _far = disparity_to_depth(disp, pair.focal, pair.baseline)
            valid = disp.valid & pair.left_valid
            if not valid.any():
                raise StereopaneError("no valid depth")
            ref_holed = make_gd(pair.left.data, depth.data, valid)
            ref_holes = ~valid
            if ref_holes.any():
                bm = boundary_mask(ref_holed, ref_holes, cfg.boundary_ring,
                                   cfg.boundary_ratio)
                ref_gd, _ = inpaint_gd_verbose(request_from_gd(ref_holed, bm))
            else:
                ref_gd = ref_holed
            h, w = ref_gd.shape
            cam = centered_camera(w, h, pair.focal)
            rig = compute_rig(ref_gd.depth, disp.d_max, pair.baseline, cam)
            corners, requests = corner_gds(ref_gd, rig, return_requests=True)
            hole_masks = [ref_holes if ref_holes.any() else None]
            hole_masks += [None if r is None else ~r.mask for r in requests]
            sb = bundle_io.make_bundle(rig, [ref_gd] + corners, provenance={
                "record_id": rec_id,
                "pipeline_version": __version__,
                "params": {"seed": cfg.seed, "patch": cfg.patch,
                           "ratio_threshold": cfg.ratio_threshold},
                "hole_masks": hole_masks,
            })
            bundle_io.save(sb, rdir / "bundle")
            log.add(rec_id, "build", "ok")
            done += 1
        except StereopaneError as exc:
            log.add(rec_id, "build", "error", str(exc))
    return done


# --- commands ---------------------------------------------------------------

def cmd_render(args) -> int:
    if args.serve:
        return _serve(Path(args.bundle), args.port)
    sb = bundle_io.load(args.bundle)
    if args.path:
        report = benchmark(sb, args.frames, out_dir=args.out,
                           workers=args.workers or 1)
        print(f"wrote {args.frames} frames to {args.out} "
              f"(mean {report.mean_ms:.2f} ms)")
        return 0
    eye = np.array([float(v) for v in args.eye.split(",")])
    renderer = SceneRenderer(sb, workers=args.workers or 1)
    img = renderer.synthesize(eye)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bundle_io.save_png8(out, img.data)
    print(f"wrote {out}")
    return 0


def _serve(root: Path, port: int) -> int:
    from functools import partial
    from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer

    class Handler(SimpleHTTPRequestHandler):
        def end_headers(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            super().end_headers()

        def log_message(self, *a):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", port),
                                 partial(Handler, directory=str(root)))
    print(f"serving {root} on http://127.0.0.1:{port}/ (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_bench(args) -> int:
    sb = bundle_io.load(args.bundle)
    report = benchmark(sb, args.frames, workers=args.workers or 1)
    if not report.frame_ms:
        print("no frames")
        return 0
    print(f"frames={len(report.frame_ms)} mean={report.mean_ms:.2f} ms "
          f"median={report.median_ms:.2f} ms p99={report.p99_ms:.2f} ms")
    return 0


def cmd_metrics(args) -> int:
    pred = bundle_io.load(args.pred)
    truth = bundle_io.load(args.truth)
    if pred.shape != truth.shape:
        raise StereopaneError("bundles must share dimensions")
    masks = pred.provenance.get("hole_masks") or [None] * 5
    for i, (pg, tg) in enumerate(zip(pred.gds, truth.gds)):
        holes = masks[i]
        m = np.ones(pg.shape, bool) if holes is None else ~holes
        dm = depth_loss(normalize_inverse_depth(pg.depth),
                        normalize_inverse_depth(tg.depth), m)
        iv, ih = intensity_loss(pg.intensity, tg.intensity, m)
        print(f"gd{i}: depth l_valid={dm.l_valid:.6f} l_hole={dm.l_hole:.6f} "
              f"tv={dm.tv_term:.6f} total={dm.total:.6f} | "
              f"intensity l_valid={iv:.6f} l_hole={ih:.6f}")
    return 0


def _add_common(p, workers=True):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    if workers:
        p.add_argument("--workers", type=int, default=None)


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stereopane",
        description="antique stereo pairs to explorable 3D scene bundles")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="fetch, cull and align records")
    sp.add_argument("locator")
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int, default=None)
    _add_common(sp)

    for name in ("rectify", "disparity", "build"):
        sp = sub.add_parser(name, help=f"run the {name} stage over a work dir")
        sp.add_argument("workdir")
        if name == "disparity":
            sp.add_argument("--size", type=int, default=None,
                            help="also write a letterboxed square map")
            sp.add_argument("--max-disp", dest="max_disp", type=int,
                            default=None)
        _add_common(sp)

    sp = sub.add_parser("render", help="render a novel view or frame path")
    sp.add_argument("bundle")
    sp.add_argument("--eye", default="0,0,0")
    sp.add_argument("--out", default="view.png")
    sp.add_argument("--path", action="store_true",
                    help="emit a frame sequence along the benchmark path")
    sp.add_argument("--frames", type=int, default=120)
    sp.add_argument("--serve", action="store_true",
                    help="serve the given directory over HTTP instead")
    sp.add_argument("--port", type=int, default=8132)
    sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("bench", help="benchmark synthesis over the standard path")
    sp.add_argument("bundle")
    sp.add_argument("--frames", type=int, default=120)
    sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("metrics", help="inpainting metrics between two bundles")
    sp.add_argument("pred")
    sp.add_argument("truth")

    sp = sub.add_parser("all", help="full pipeline over a record source")
    sp.add_argument("locator")
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int, default=None)
    sp.add_argument("--max-disp", dest="max_disp", type=int, default=None)
    _add_common(sp)
    return p


def run(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "ingest":
            cfg = build_config(args)
            out = Path(args.out)
            log = RunLog(out / "run_log.jsonl", truncate=True)
            n = stage_ingest(args.locator, out, cfg, log)
            log.flush()
            print(f"ingested {n} records")
            return 0
        if args.command in ("rectify", "disparity", "build"):
            cfg = build_config(args)
            workdir = Path(args.workdir)
            if not workdir.is_dir():
                raise StereopaneError(f"no such work dir: {workdir}")
            log = RunLog(workdir / "run_log.jsonl")
            stage = {"rectify": stage_rectify, "build": stage_build}.get(args.command)
            if args.command == "disparity":
                n = stage_disparity(workdir, cfg, log, letterbox=args.size)
            else:
                n = stage(workdir, cfg, log)
            log.flush()
            print(f"{args.command}: {n} records done")
            return 0
        if args.command == "render":
            return cmd_render(args)
        if args.command == "bench":
            return cmd_bench(args)
        if args.command == "metrics":
            return cmd_metrics(args)
        if args.command == "all":
            cfg = build_config(args)
            out = Path(args.out)
            log = RunLog(out / "run_log.jsonl", truncate=True)
            stage_ingest(args.locator, out, cfg, log)
            stage_rectify(out, cfg, log)
            stage_disparity(out, cfg, log)
            n = stage_build(out, cfg, log)
            log.flush()
            print(f"built {n} bundles under {out}")
            return 0
        parser.error(f"unknown command {args.command}")
    except StereopaneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
