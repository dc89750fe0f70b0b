"""Region-of-Interest layers: nested focal rectangles at decreasing resolution.

A configuration is a stack of centered rectangles, innermost first. Inside
each ring (a rectangle minus the next-inner one) pixels are replaced by the
mean of their subsampling block; blocks are anchored at the ring rectangle's
top-left corner. Outside the outermost rectangle the screen is either black
or, with peripheral vision, a coarse ``grid x grid`` rendering of the frame.

Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

SCREEN = 80

EDGE_MODES = ("shift", "crop")


class InvalidConfig(ValueError):
    pass


class InvalidInput(ValueError):
    pass


@dataclass(frozen=True)
class FocalPoint:
    fx: int
    fy: int


class VisualAction(enum.IntEnum):
    STAY = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4


N_VISUAL_ACTIONS = len(VisualAction)

_DELTAS = {
    VisualAction.STAY: (0, 0),
    VisualAction.UP: (0, -1),
    VisualAction.DOWN: (0, 1),
    VisualAction.LEFT: (-1, 0),
    VisualAction.RIGHT: (1, 0),
}


@dataclass(frozen=True)
class RoiConfig:
    """Focal layer stack.

    ``layers`` holds ``(width, height, factor)`` triples, innermost first.
    ``edge_mode`` decides what happens near the border: ``"shift"`` keeps
    the whole stack on screen by clamping its center, ``"crop"`` centers the
    stack on the focal point and drops off-screen pixels.
    """

    layers: tuple[tuple[int, int, int], ...]
    peripheral: bool = False
    peripheral_grid: int = 5
    edge_mode: str = "shift"

    def __post_init__(self):
        layers = tuple(tuple(int(v) for v in layer) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise InvalidConfig("at least one focal layer is required")
        for w, h, s in layers:
            if s <= 0:
                raise InvalidConfig(f"subsampling factor must be positive, got {s}")
            if w <= 0 or h <= 0:
                raise InvalidConfig(f"focal size must be positive, got {w}x{h}")
            if w % 2 or h % 2:
                raise InvalidConfig(f"focal size must be even, got {w}x{h}")
        for (w0, h0, s0), (w1, h1, s1) in zip(layers, layers[1:]):
            if not (w1 > w0 and h1 > h0):
                raise InvalidConfig("focal rectangles must strictly grow outward")
            if s1 < s0:
                raise InvalidConfig("subsampling factors must not decrease outward")
        if self.peripheral_grid <= 0:
            raise InvalidConfig("peripheral_grid must be positive")
        if self.edge_mode not in EDGE_MODES:
            raise InvalidConfig(f"edge_mode must be one of {EDGE_MODES}, got {self.edge_mode!r}")

    @property
    def outer(self) -> tuple[int, int, int]:
        return self.layers[-1]

    @property
    def is_identity(self) -> bool:
        return (
            len(self.layers) == 1
            and self.layers[0] == (SCREEN, SCREEN, 1)
            and self.edge_mode == "shift"
        )


def move_focal_point(fp: FocalPoint, action: int, step: int = 5, screen: int = SCREEN) -> FocalPoint:
    dx, dy = _DELTAS[VisualAction(action)]
    return FocalPoint(
        min(max(fp.fx + dx * step, 0), screen - 1),
        min(max(fp.fy + dy * step, 0), screen - 1),
    )


def center_point(screen: int = SCREEN) -> FocalPoint:
    return FocalPoint(screen // 2, screen // 2)


def effective_center(cfg: RoiConfig, fp: FocalPoint, shape: tuple[int, int]) -> tuple[int, int]:
    """Center (x, y) the rectangle stack is actually drawn around."""
    if cfg.edge_mode == "crop":
        return fp.fx, fp.fy
    height, width = shape
    w, h, _ = cfg.outer
    return (
        min(max(fp.fx, w // 2), width - w // 2),
        min(max(fp.fy, h // 2), height - h // 2),
    )


def layer_rects(cfg: RoiConfig, fp: FocalPoint, shape: tuple[int, int]) -> list[tuple[int, int, int, int]]:
    """Unclipped ``(x0, y0, x1, y1)`` half-open rectangles, innermost first."""
    cx, cy = effective_center(cfg, fp, shape)
    return [(cx - w // 2, cy - h // 2, cx + w // 2, cy + h // 2) for w, h, _ in cfg.layers]


def _validate(frame: np.ndarray, cfg: RoiConfig, fp: FocalPoint) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise InvalidInput(f"frame must be 2-D, got shape {frame.shape}")
    height, width = frame.shape
    if not (0 <= fp.fx < width and 0 <= fp.fy < height):
        raise InvalidInput(f"focal point {fp} outside {width}x{height} frame")
    if cfg.edge_mode == "shift":
        w, h, _ = cfg.outer
        if w > width or h > height:
            raise InvalidInput(f"outer focal area {w}x{h} exceeds {width}x{height} frame")
    return frame


def _block_fill(frame, out, rect, inner, factor):
    """Replace ring pixels of ``rect`` minus ``inner`` by their block means."""
    height, width = frame.shape
    x0, y0, x1, y1 = rect
    cx0, cy0, cx1, cy1 = max(x0, 0), max(y0, 0), min(x1, width), min(y1, height)
    if cx0 >= cx1 or cy0 >= cy1:
        return
    mask = np.ones((cy1 - cy0, cx1 - cx0), dtype=bool)
    if inner is not None:
        ix0, iy0, ix1, iy1 = inner
        mask[max(iy0, cy0) - cy0:max(min(iy1, cy1) - cy0, 0), max(ix0, cx0) - cx0:max(min(ix1, cx1) - cx0, 0)] = False
    if factor == 1:
        out[cy0:cy1, cx0:cx1][mask] = frame[cy0:cy1, cx0:cx1][mask]
        return
    rows = (np.arange(cy0, cy1) - y0) // factor
    cols = (np.arange(cx0, cx1) - x0) // factor
    rstart = np.flatnonzero(np.diff(rows, prepend=-1))
    cstart = np.flatnonzero(np.diff(cols, prepend=-1))
    sub = np.where(mask, frame[cy0:cy1, cx0:cx1], 0.0)
    sums = np.add.reduceat(np.add.reduceat(sub, rstart, axis=0), cstart, axis=1)
    counts = np.add.reduceat(np.add.reduceat(mask.astype(np.float64), rstart, axis=0), cstart, axis=1)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    ri = np.repeat(np.arange(len(rstart)), np.diff(np.append(rstart, len(rows))))
    ci = np.repeat(np.arange(len(cstart)), np.diff(np.append(cstart, len(cols))))
    out[cy0:cy1, cx0:cx1][mask] = means[ri[:, None], ci[None, :]][mask]


def apply_roi(frame: np.ndarray, cfg: RoiConfig, fp: FocalPoint) -> np.ndarray:
    """Foveate ``frame`` around ``fp``; returns a new canvas of the same size."""
    frame = _validate(frame, cfg, fp)
    if cfg.is_identity and frame.shape == (SCREEN, SCREEN):
        return frame.copy()
    out = np.zeros_like(frame)
    rects = layer_rects(cfg, fp, frame.shape)
    inner = None
    for rect, (_, _, factor) in zip(rects, cfg.layers):
        _block_fill(frame, out, rect, inner, factor)
        inner = rect
    if cfg.peripheral:
        out = apply_peripheral(frame, cfg, fp, out)
    return out


def _peripheral_block(cfg: RoiConfig, shape: tuple[int, int]) -> tuple[int, int]:
    height, width = shape
    g = cfg.peripheral_grid
    if height % g or width % g:
        raise InvalidConfig(f"peripheral grid {g} does not divide a {width}x{height} frame")
    return height // g, width // g


def apply_peripheral(frame: np.ndarray, cfg: RoiConfig, fp: FocalPoint, partial: np.ndarray) -> np.ndarray:
    """Fill everything outside the outermost rectangle with coarse block means of ``frame``."""
    frame = _validate(frame, cfg, fp)
    bh, bw = _peripheral_block(cfg, frame.shape)
    g = cfg.peripheral_grid
    coarse = frame.reshape(g, bh, g, bw).mean(axis=(1, 3))
    background = np.repeat(np.repeat(coarse, bh, axis=0), bw, axis=1)
    x0, y0, x1, y1 = layer_rects(cfg, fp, frame.shape)[-1]
    height, width = frame.shape
    outside = np.ones(frame.shape, dtype=bool)
    outside[max(y0, 0):max(min(y1, height), 0), max(x0, 0):max(min(x1, width), 0)] = False
    out = np.array(partial, dtype=np.float64, copy=True)
    out[outside] = background[outside]
    return out


def visible_peripheral_blocks(cfg: RoiConfig, fp: FocalPoint, shape: tuple[int, int] = (SCREEN, SCREEN)) -> int:
    """Number of background blocks not fully hidden by the outermost rectangle."""
    bh, bw = _peripheral_block(cfg, shape)
    x0, y0, x1, y1 = layer_rects(cfg, fp, shape)[-1]
    g = cfg.peripheral_grid
    hidden_rows = sum(1 for r in range(g) if y0 <= r * bh and (r + 1) * bh <= y1)
    hidden_cols = sum(1 for c in range(g) if x0 <= c * bw and (c + 1) * bw <= x1)
    return g * g - hidden_rows * hidden_cols


def visible_pixel_count(cfg: RoiConfig, fp_interior: bool = True, screen: int = SCREEN) -> int:
    """Number of distinct pixel values the agent can see.

    Each ring contributes its area divided by ``factor**2``; peripheral
    configs add the background blocks left visible at the centered focal
    point. The closed form assumes every rectangle is fully on screen.
    """
    if not fp_interior and cfg.edge_mode == "crop":
        raise ValueError("closed-form count needs every focal rectangle on screen")
    total = Fraction(0)
    inner_area = 0
    for w, h, s in cfg.layers:
        total += Fraction(w * h - inner_area, s * s)
        inner_area = w * h
    if cfg.peripheral:
        total += visible_peripheral_blocks(cfg, center_point(screen), (screen, screen))
    if total.denominator != 1:
        raise InvalidConfig(f"pixel count {total} is not an integer")
    return int(total)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Binary P5 graymap with maxval 255; ``image`` values are in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InvalidInput("PGM export needs a 2-D image")
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    height, width = pixels.shape
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Inverse of :func:`write_pgm` (values scaled back to [0, 1])."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise InvalidInput(f"{path}: not a binary PGM")
    width, height, maxval = (int(v) for v in fields[1:])
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos + 1)
    return pixels.reshape(height, width) / float(maxval)
