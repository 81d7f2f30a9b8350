"""Record acquisition, stereo-pair culling and crop alignment.

Records come from a local fixture directory or an HTTP index. Pairs are kept
or culled by counting feature matches that survive the 0.7 ratio test: fewer
than 10 (or 0.5% of keypoints) culls the pair, 0.5%-1.5% flags it for manual
review, and matching is done mutually (best match in both directions) so the
verdict cannot depend on which side is called left. Crop boxes, when present,
are aligned by the median displacement of matches inside them and trimmed to
their intersection.
"""

from __future__ import annotations

import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urljoin

import cv2
import numpy as np
from PIL import Image

from .core import ImageGray, StereopaneError

logger = logging.getLogger(__name__)

RATIO_THRESHOLD = 0.7
CULL_MIN_MATCHES = 10
CULL_FRACTION = 0.005
REVIEW_FRACTION = 0.015
MIN_ALIGN_MATCHES = 4

DEFAULT_HTTP_TIMEOUT = 10.0
HTTP_TIMEOUT_ENV = "STEREOPANE_HTTP_TIMEOUT"


@dataclass(frozen=True)
class RawRecord:
    """One stereo scan: both sides, metadata, optional crop rectangles
    (x, y, w, h) that must lie inside their images."""

    id: str
    left: ImageGray
    right: ImageGray
    metadata: dict = field(default_factory=dict)
    crop_left: tuple[int, int, int, int] | None = None
    crop_right: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        for crop, img in ((self.crop_left, self.left),
                          (self.crop_right, self.right)):
            if crop is None:
                continue
            x, y, w, h = crop
            if w <= 0 or h <= 0 or x < 0 or y < 0 \
                    or x + w > img.width or y + h > img.height:
                raise StereopaneError("crop rectangle outside image bounds")


@dataclass(frozen=True)
class MatchReport:
    n_keypoints: int
    n_good: int
    matches: np.ndarray  # rows (xl, yl, xr, yr)
    verdict: str         # keep | review | cull
    reason: str = ""


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def _detect(img: np.ndarray):
    sift = cv2.SIFT_create()
    kps, desc = sift.detectAndCompute(_to_u8(img), None)
    if desc is None:
        return np.zeros((0, 2)), None
    pts = np.array([kp.pt for kp in kps], np.float64)
    return pts, desc


def _ratio_pass(desc_a, desc_b, ratio):
    """Best match in b for each a-descriptor passing the ratio test; returns
    {a_index: b_index}."""
    matcher = cv2.BFMatcher(cv2.NORM_L2)
    out = {}
    if len(desc_a) < 1 or len(desc_b) < 2:
        return out
    for pairs in matcher.knnMatch(desc_a, desc_b, k=2):
        if len(pairs) < 2:
            continue
        m, n = pairs
        if m.distance < ratio * n.distance:
            out[m.queryIdx] = m.trainIdx
    return out


def mutual_matches(left: np.ndarray, right: np.ndarray,
                   ratio: float = RATIO_THRESHOLD):
    """Symmetric feature matching: a pair counts only when it passes the
    ratio test in both directions and each side is the other's best match.
    Returns (matches (N, 4), n_keypoints) with n_keypoints the smaller of
    the two detection counts."""
    pl, dl = _detect(left)
    pr, dr = _detect(right)
    n_kp = min(len(pl), len(pr))
    if dl is None or dr is None:
        return np.zeros((0, 4)), n_kp
    fwd = _ratio_pass(dl, dr, ratio)
    bwd = _ratio_pass(dr, dl, ratio)
    rows = [np.concatenate([pl[i], pr[j]])
            for i, j in sorted(fwd.items()) if bwd.get(j) == i]
    matches = np.array(rows, np.float64).reshape(-1, 4)
    return matches, n_kp


def verdict_from_counts(n_keypoints: int, n_good: int,
                        cull_min: int = CULL_MIN_MATCHES,
                        cull_frac: float = CULL_FRACTION,
                        review_frac: float = REVIEW_FRACTION) -> str:
    if n_keypoints == 0:
        return "cull"
    if n_good < cull_min or n_good < cull_frac * n_keypoints:
        return "cull"
    if n_good < review_frac * n_keypoints:
        return "review"
    return "keep"


def match_and_cull(rec: RawRecord, ratio: float = RATIO_THRESHOLD) -> MatchReport:
    """Score a record's stereo-ness from feature matches."""
    matches, n_kp = mutual_matches(rec.left.data, rec.right.data, ratio)
    if n_kp == 0:
        return MatchReport(0, 0, matches, "cull", reason="featureless")
    v = verdict_from_counts(n_kp, matches.shape[0])
    reason = "" if v == "keep" else f"{matches.shape[0]}/{n_kp} good matches"
    return MatchReport(n_kp, matches.shape[0], matches, v, reason=reason)


def _crop_or_full(img: ImageGray, crop) -> tuple[np.ndarray, tuple[int, int]]:
    if crop is None:
        return img.data, (0, 0)
    x, y, w, h = crop
    return img.data[y:y + h, x:x + w], (x, y)


def align_crops_verbose(rec: RawRecord, ratio: float = RATIO_THRESHOLD):
    """Align the two crop regions by the median match displacement and trim
    both to the intersection; returns (left, right, info) where info carries
    the output origins inside the original frames."""
    cl, ol = _crop_or_full(rec.left, rec.crop_left)
    cr, orr = _crop_or_full(rec.right, rec.crop_right)
    matches, _ = mutual_matches(cl, cr, ratio)
    if matches.shape[0] < MIN_ALIGN_MATCHES:
        raise StereopaneError("insufficient alignment evidence")
    disp = matches[:, 2:4] - matches[:, 0:2]
    dx = int(round(float(np.median(disp[:, 0]))))
    dy = int(round(float(np.median(disp[:, 1]))))

    hl, wl = cl.shape
    hr, wr = cr.shape
    x0 = max(0, -dx)
    x1 = min(wl, wr - dx)
    y0 = max(0, -dy)
    y1 = min(hl, hr - dy)
    if x1 <= x0 or y1 <= y0:
        raise StereopaneError("disjoint crops")
    left_out = ImageGray(cl[y0:y1, x0:x1].copy())
    right_out = ImageGray(cr[y0 + dy:y1 + dy, x0 + dx:x1 + dx].copy())
    info = {
        "origin_left": (ol[0] + x0, ol[1] + y0),
        "origin_right": (orr[0] + x0 + dx, orr[1] + y0 + dy),
        "shift": (dx, dy),
    }
    return left_out, right_out, info


def align_crops(rec: RawRecord, ratio: float = RATIO_THRESHOLD):
    left, right, _ = align_crops_verbose(rec, ratio)
    return left, right


# --- record loading -------------------------------------------------------

def load_image_gray(source) -> ImageGray:
    """Read an image file (path or bytes) as grayscale floats in [0, 1]."""
    img = Image.open(io.BytesIO(source) if isinstance(source, bytes) else source)
    with img:
        if img.mode in ("I;16", "I"):
            arr = np.asarray(img).astype(np.float64) / 65535.0
        else:
            arr = np.asarray(img.convert("L")).astype(np.float64) / 255.0
    return ImageGray(np.clip(arr, 0.0, 1.0))


def _crop_from_meta(value):
    if value is None:
        return None
    x, y, w, h = (int(v) for v in value)
    return (x, y, w, h)


def _record_from_parts(rec_id: str, left_src, right_src, meta: dict) -> RawRecord:
    return RawRecord(
        id=rec_id,
        left=load_image_gray(left_src),
        right=load_image_gray(right_src),
        metadata={k: meta[k] for k in ("title", "date", "source_url")
                  if k in meta},
        crop_left=_crop_from_meta(meta.get("crop_left")),
        crop_right=_crop_from_meta(meta.get("crop_right")),
    )


def _fetch_dir(root: Path, limit) -> list[RawRecord]:
    records = []
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    for p in dirs:
        if limit is not None and len(records) >= limit:
            break
        try:
            meta = json.loads((p / "meta.json").read_text(encoding="utf-8")) \
                if (p / "meta.json").is_file() else {}
            records.append(_record_from_parts(
                p.name, p / "left.png", p / "right.png", meta))
        except Exception as exc:  # noqa: BLE001
            logger.warning("skipping record %s: %s", p.name, exc)
    return records


def http_timeout() -> float:
    raw = os.environ.get(HTTP_TIMEOUT_ENV)
    try:
        return float(raw) if raw else DEFAULT_HTTP_TIMEOUT
    except ValueError:
        return DEFAULT_HTTP_TIMEOUT


def _http_get(session, url: str, timeout: float, retries: int) -> bytes:
    last = None
    for _ in range(max(1, retries + 1)):
        try:
            resp = session.get(url, timeout=timeout)
            resp.raise_for_status()
            return resp.content
        except Exception as exc:  # noqa: BLE001
            last = exc
    raise StereopaneError(f"GET {url} failed: {last}")


def _fetch_http(index_url: str, limit, timeout: float, retries: int,
                workers: int) -> list[RawRecord]:
    import requests

    session = requests.Session()
    try:
        index = json.loads(_http_get(session, index_url, timeout, retries))
    except StereopaneError as exc:
        raise StereopaneError(f"unreachable index: {exc}") from exc
    if not isinstance(index, list):
        raise StereopaneError("index must be a JSON array of records")
    if limit is not None:
        index = index[:limit]

    def fetch_one(entry):
        rec_id = str(entry.get("id", ""))
        try:
            left = _http_get(session, urljoin(index_url, entry["left"]),
                             timeout, retries)
            right = _http_get(session, urljoin(index_url, entry["right"]),
                              timeout, retries)
            meta = {}
            if entry.get("meta"):
                meta = json.loads(_http_get(
                    session, urljoin(index_url, entry["meta"]), timeout, retries))
            return _record_from_parts(rec_id, left, right, meta)
        except Exception as exc:  # noqa: BLE001
            logger.warning("skipping record %s: %s", rec_id, exc)
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(fetch_one, index))
    return [r for r in results if r is not None]


def fetch_records(locator: str, limit: int | None = None,
                  timeout: float | None = None, retries: int = 2,
                  workers: int = 1) -> list[RawRecord]:
    """Load records from a fixture directory or an HTTP(S) index URL.

    Per-record failures are logged and skipped; an unreachable index or
    missing directory is fatal.
    """
    timeout = http_timeout() if timeout is None else timeout
    if str(locator).startswith(("http://", "https://")):
        return _fetch_http(str(locator), limit, timeout, retries, workers)
    root = Path(locator)
    if not root.is_dir():
        raise StereopaneError(f"no such fixture directory: {locator}")
    return _fetch_dir(root, limit)
