"""Seven-channel RGB-D images, surface normals and the Cornell file layout.

Channel order is fixed: depth, Y, U, V, nX, nY, nZ.  Normals are computed in
(pixel, pixel, depth) space and oriented so that nZ >= 0, i.e. a flat surface
facing the camera has normal (0, 0, 1).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError
from .rects import GraspRect

log = logging.getLogger(__name__)

CHANNELS = ("depth", "Y", "U", "V", "nX", "nY", "nZ")
N_CHANNELS = len(CHANNELS)

_RGB2YUV = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YUV2RGB = np.linalg.inv(_RGB2YUV)


@dataclass(frozen=True, eq=False)
class RgbdImage:
    channels: np.ndarray  # (7, H, W) float64
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        ch = np.array(self.channels, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if ch.ndim != 3 or ch.shape[0] != N_CHANNELS:
            raise ValueError(f"expected ({N_CHANNELS}, H, W) channels, got {ch.shape}")
        if valid.shape != ch.shape[1:]:
            raise ValueError(f"valid mask {valid.shape} does not match planes {ch.shape[1:]}")
        ch.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    def plane(self, name: str) -> np.ndarray:
        return self.channels[CHANNELS.index(name)]

    def rgb(self) -> np.ndarray:
        """Approximate (H, W, 3) RGB in [0, 1] recovered from the YUV planes."""
        return yuv_to_rgb(self.channels[1], self.channels[2], self.channels[3])


@dataclass(frozen=True, eq=False)
class AnnotatedScene:
    image: RgbdImage
    positives: tuple
    negatives: tuple
    object_id: int
    image_id: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.object_id < 0 or self.image_id < 0:
            raise ValueError("object_id and image_id must be non-negative")
        object.__setattr__(self, "positives", tuple(self.positives))
        object.__setattr__(self, "negatives", tuple(self.negatives))


def rgb_to_yuv(r, g, b):
    """BT.601 full-range RGB -> YUV for planes (or scalars) in [0, 1]."""
    rgb = np.stack(np.broadcast_arrays(*map(np.asarray, (r, g, b))), axis=-1).astype(float)
    yuv = rgb @ _RGB2YUV.T
    return yuv[..., 0], yuv[..., 1], yuv[..., 2]


def yuv_to_rgb(y, u, v):
    yuv = np.stack(np.broadcast_arrays(*map(np.asarray, (y, u, v))), axis=-1).astype(float)
    return np.clip(yuv @ _YUV2RGB.T, 0.0, 1.0)


def estimate_normals(depth, valid=None, window=7):
    """Per-pixel least-squares plane fit of depth over a square window.

    Fits ``d = a*dx + b*dy + c`` to the valid neighbours of each pixel and
    returns the unit normal ``(-a, -b, 1) / norm`` as three planes plus the
    updated validity mask.  Pixels that are invalid themselves, have fewer than
    three valid neighbours, or whose neighbours are collinear are marked
    invalid and get a zero normal.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be an odd integer >= 3, got {window}")
    d = np.asarray(depth, dtype=float)
    m = np.isfinite(d) if valid is None else (np.asarray(valid, dtype=bool) & np.isfinite(d))
    md = np.where(m, d, 0.0)
    mf = m.astype(float)

    half = window // 2
    off = np.arange(-half, half + 1, dtype=float)
    ox = np.broadcast_to(off[None, :], (window, window))
    oy = np.broadcast_to(off[:, None], (window, window))

    def corr(img, kernel):
        return ndimage.correlate(img, kernel, mode="constant", cval=0.0)

    ones = np.ones((window, window))
    s1 = corr(mf, ones)
    sx = corr(mf, ox)
    sy = corr(mf, oy)
    sxx = corr(mf, ox * ox)
    syy = corr(mf, oy * oy)
    sxy = corr(mf, ox * oy)
    sd = corr(md, ones)
    sxd = corr(md, ox)
    syd = corr(md, oy)

    with np.errstate(divide="ignore", invalid="ignore"):
        n = np.maximum(s1, 1.0)
        cxx = sxx - sx * sx / n
        cyy = syy - sy * sy / n
        cxy = sxy - sx * sy / n
        cxd = sxd - sx * sd / n
        cyd = syd - sy * sd / n
        det = cxx * cyy - cxy * cxy
        scale = np.maximum(cxx + cyy, 1.0)
        ok = m & (s1 >= 3) & (det > 1e-9 * scale * scale)
        a = np.where(ok, (cyy * cxd - cxy * cyd) / np.where(ok, det, 1.0), 0.0)
        b = np.where(ok, (cxx * cyd - cxy * cxd) / np.where(ok, det, 1.0), 0.0)
    norm = np.sqrt(a * a + b * b + 1.0)
    nx = np.where(ok, -a / norm, 0.0)
    ny = np.where(ok, -b / norm, 0.0)
    nz = np.where(ok, 1.0 / norm, 0.0)
    return nx, ny, nz, ok


def make_rgbd(rgb, depth, valid=None, window=7) -> RgbdImage:
    """Assemble an RgbdImage from an (H, W, 3) RGB array in [0, 1] and a depth plane."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb must be (H, W, 3), got {rgb.shape}")
    depth = np.asarray(depth, dtype=float)
    if depth.shape != rgb.shape[:2]:
        raise ValueError(f"depth {depth.shape} does not match rgb {rgb.shape[:2]}")
    y, u, v = rgb_to_yuv(rgb[..., 0], rgb[..., 1], rgb[..., 2])
    nx, ny, nz, ok = estimate_normals(depth, valid, window)
    d = np.where(ok, depth, 0.0)
    return RgbdImage(np.stack([d, y, u, v, nx, ny, nz]), ok)


# ---------------------------------------------------------------------------
# Cornell layout
# ---------------------------------------------------------------------------

_IMAGE_RE = re.compile(r"pcd(\d+)r\.png$")
MAPPING_NAMES = ("objects.txt", "z.txt")


def read_rect_file(path):
    """Parse a cpos/cneg file: four "x y" lines per rectangle.

    Rectangles with any NaN vertex are skipped with a warning.
    """
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            rows.append((float(parts[0]), float(parts[1]), lineno))
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed vertex line {line!r}") from None
    if len(rows) % 4:
        raise DataError(f"{path}:{rows[-1][2]}: vertex count {len(rows)} is not a multiple of 4")
    rects = []
    for k in range(0, len(rows), 4):
        pts = np.array([r[:2] for r in rows[k:k + 4]])
        if not np.all(np.isfinite(pts)):
            log.warning("%s:%d: rectangle with NaN vertex skipped", path, rows[k][2])
            continue
        rects.append(GraspRect.from_vertices(pts))
    return rects


def write_rect_file(path, rects):
    lines = []
    for r in rects:
        for x, y in r.corners():
            lines.append(f"{float(x)!r} {float(y)!r}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_pcd_depth(path, height, width):
    """Depth plane from an ASCII PCD file with ``z`` and ``index`` fields."""
    path = Path(path)
    with path.open() as fh:
        fields = None
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "FIELDS":
                fields = tok[1:]
            elif tok[0] == "DATA":
                if tok[1:] != ["ascii"]:
                    raise DataError(f"{path}:{lineno}: only ascii PCD data is supported")
                break
        else:
            raise DataError(f"{path}: no DATA line in PCD header")
        if not fields or "z" not in fields or "index" not in fields:
            raise DataError(f"{path}: PCD header must declare z and index fields")
        try:
            data = np.loadtxt(fh, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: malformed point data ({exc})") from None
    depth = np.full(height * width, np.nan)
    if data.size:
        if data.shape[1] != len(fields):
            raise DataError(f"{path}: expected {len(fields)} columns, got {data.shape[1]}")
        idx = data[:, fields.index("index")].astype(np.int64)
        z = data[:, fields.index("z")]
        keep = (idx >= 0) & (idx < height * width)
        depth[idx[keep]] = z[keep]
    return depth.reshape(height, width)


def write_pcd_depth(path, depth, valid):
    h, w = depth.shape
    idx = np.flatnonzero(valid.ravel())
    ys, xs = np.divmod(idx, w)
    z = depth.ravel()[idx]
    header = [
        "# .PCD v.7 - Point Cloud Data file format",
        "FIELDS x y z rgb index",
        "SIZE 4 4 4 4 4",
        "TYPE F F F F U",
        "COUNT 1 1 1 1 1",
        f"WIDTH {len(idx)}",
        "HEIGHT 1",
        f"POINTS {len(idx)}",
        "DATA ascii",
    ]
    body = [f"{x} {y} {float(zz)!r} 0 {i}" for x, y, zz, i in zip(xs, ys, z, idx)]
    Path(path).write_text("\n".join(header + body) + "\n")


def read_object_map(directory):
    """Map image id -> object id from ``objects.txt`` or Cornell's ``z.txt``.

    Each line starts with an image id (``123`` or ``pcd0123``) followed by an
    integer object id; anything after is ignored.
    """
    directory = Path(directory)
    for name in MAPPING_NAMES:
        found = sorted(directory.rglob(name))
        if found:
            path = found[0]
            break
    else:
        return None
    mapping = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        tok = line.split()
        if not tok:
            continue
        try:
            image_id = int(tok[0].removeprefix("pcd"))
            mapping[image_id] = int(tok[1])
        except (ValueError, IndexError):
            raise DataError(f"{path}:{lineno}: malformed object mapping line {line!r}") from None
    return mapping


def load_cornell(directory, window=7):
    """Load every annotated scene under ``directory`` (searched recursively)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory not found: {directory}")
    mapping = read_object_map(directory)
    if mapping is None:
        log.warning("%s: no object mapping file; using image id as object id", directory)
        mapping = {}
    scenes = []
    for png in sorted(directory.rglob("pcd*r.png")):
        if not _IMAGE_RE.search(png.name):
            continue
        missing = [str(p) for p in _companions(png).values() if not p.exists()]
        if missing:
            log.warning("image %d skipped, missing %s", _image_id(png), ", ".join(missing))
            continue
        scenes.append(load_scene(png, window, mapping.get(_image_id(png))))
    return scenes


def _image_id(png):
    return int(_IMAGE_RE.search(Path(png).name).group(1))


def _companions(png):
    png = Path(png)
    stem = png.name[: -len("r.png")]
    return {k: png.parent / f"{stem}{k}" for k in (".txt", "cpos.txt", "cneg.txt")}


def load_scene(png, window=7, object_id=None, require_labels=True):
    """Load one Cornell-layout image from its ``pcdNNNNr.png`` path.

    The point cloud file must sit next to it.  Rectangle files are required
    unless ``require_labels`` is false, in which case missing ones give empty
    lists.
    """
    png = Path(png)
    if not png.exists():
        raise DataError(f"image not found: {png}")
    if not _IMAGE_RE.search(png.name):
        raise DataError(f"{png}: expected a name like pcd0123r.png")
    files = _companions(png)
    if not files[".txt"].exists():
        raise DataError(f"point cloud not found: {files['.txt']}")
    image_id = _image_id(png)
    rgb = np.asarray(Image.open(png).convert("RGB"), dtype=float) / 255.0
    depth = read_pcd_depth(files[".txt"], rgb.shape[0], rgb.shape[1])
    image = make_rgbd(rgb, depth, np.isfinite(depth), window)
    labels = {}
    for key in ("cpos.txt", "cneg.txt"):
        path = files[key]
        if path.exists():
            labels[key] = _inside(read_rect_file(path), image, path)
        elif require_labels:
            raise DataError(f"annotation file not found: {path}")
        else:
            labels[key] = []
    object_id = image_id if object_id is None else object_id
    return AnnotatedScene(image, labels["cpos.txt"], labels["cneg.txt"], object_id, image_id)


def _inside(rects, image, path):
    from .patch import rect_overlaps_image

    kept = [r for r in rects if rect_overlaps_image(r, image.width, image.height)]
    if len(kept) < len(rects):
        log.warning("%s: %d rectangle(s) outside the image skipped", path, len(rects) - len(kept))
    return kept


def save_cornell(scenes, directory):
    """Write scenes in the Cornell layout so :func:`load_cornell` can read them back.

    RGB is quantized to 8 bits and normals are recomputed on load, so only the
    depth values and rectangle vertices round-trip exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for sc in scenes:
        stem = directory / f"pcd{sc.image_id:04d}"
        rgb = (np.round(sc.image.rgb() * 255.0)).astype(np.uint8)
        Image.fromarray(rgb).save(f"{stem}r.png")
        write_pcd_depth(f"{stem}.txt", sc.image.plane("depth"), sc.image.valid)
        write_rect_file(f"{stem}cpos.txt", sc.positives)
        write_rect_file(f"{stem}cneg.txt", sc.negatives)
        lines.append(f"{sc.image_id} {sc.object_id}")
    (directory / "objects.txt").write_text("\n".join(lines) + "\n")
