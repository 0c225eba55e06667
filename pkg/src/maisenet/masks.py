"""Binary instance masks: dense grids, run-length codec, IoU, rasterization.

Run lengths are column-major and always start with the zero run, so an
encoding beginning with a foreground pixel starts with a 0 count. The
codec round trip is exact for every mask including all-zeros/all-ones.
"""

from __future__ import annotations

import numpy as np

__all__ = ["BinaryMask", "mask_iou", "rasterize_polygons"]


class BinaryMask:
    def __init__(self, array):
        arr = np.asarray(array)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got rank {arr.ndim}")
        self.array = arr.astype(bool)

    @property
    def height(self) -> int:
        return self.array.shape[0]

    @property
    def width(self) -> int:
        return self.array.shape[1]

    def area(self) -> int:
        return int(self.array.sum())

    def bbox(self) -> tuple[float, float, float, float]:
        """Tight (x, y, w, h) box around the foreground; requires a nonempty mask."""
        ys, xs = np.nonzero(self.array)
        if ys.size == 0:
            raise ValueError("bbox of an empty mask is undefined")
        x0, x1 = int(xs.min()), int(xs.max())
        y0, y1 = int(ys.min()), int(ys.max())
        return (float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1))

    # -- run-length codec ---------------------------------------------------
    def rle_counts(self) -> list[int]:
        flat = self.array.ravel(order="F")
        if flat.size == 0:
            return []
        changes = np.flatnonzero(np.diff(flat.view(np.int8))) + 1
        bounds = np.concatenate(([0], changes, [flat.size]))
        counts = np.diff(bounds).tolist()
        if flat[0]:
            counts.insert(0, 0)
        return [int(c) for c in counts]

    @classmethod
    def from_rle(cls, counts, size) -> "BinaryMask":
        height, width = int(size[0]), int(size[1])
        counts = [int(c) for c in counts]
        if any(c < 0 for c in counts):
            raise ValueError("run-length counts must be non-negative")
        total = sum(counts)
        if total != height * width:
            raise ValueError(
                f"run-length counts sum to {total}, expected height*width = {height * width}"
            )
        flat = np.zeros(height * width, dtype=bool)
        pos = 0
        value = False
        for count in counts:
            if value:
                flat[pos : pos + count] = True
            pos += count
            value = not value
        return cls(flat.reshape((height, width), order="F"))

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryMask) and np.array_equal(self.array, other.array)

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width}, area={self.area()})"


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Pixel IoU of two same-sized masks; rejected when both are empty."""
    if a.array.shape != b.array.shape:
        raise ValueError(
            f"mask extents differ: {a.array.shape} vs {b.array.shape}"
        )
    union = np.logical_or(a.array, b.array).sum()
    if union == 0:
        raise ValueError("IoU of two empty masks is undefined")
    inter = np.logical_and(a.array, b.array).sum()
    return float(inter) / float(union)


def rasterize_polygons(polygons, height: int, width: int) -> BinaryMask:
    """Fill polygons onto a pixel grid (union, even-odd rule at pixel centers).

    Each polygon is a flat [x0, y0, x1, y1, ...] list in pixel coordinates.
    """
    grid = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        if len(poly) < 6 or len(poly) % 2 != 0:
            raise ValueError(
                f"polygon must hold >= 3 (x, y) pairs, got {len(poly)} values"
            )
        xs = np.asarray(poly[0::2], dtype=np.float64)
        ys = np.asarray(poly[1::2], dtype=np.float64)
        grid |= _fill_polygon(xs, ys, height, width)
    return BinaryMask(grid)


def _fill_polygon(xs, ys, height, width) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    n = xs.size
    for row in range(height):
        cy = row + 0.5
        crossings = []
        for k in range(n):
            x0, y0 = xs[k], ys[k]
            x1, y1 = xs[(k + 1) % n], ys[(k + 1) % n]
            if (y0 <= cy) == (y1 <= cy):
                continue
            crossings.append(x0 + (cy - y0) * (x1 - x0) / (y1 - y0))
        crossings.sort()
        for left, right in zip(crossings[0::2], crossings[1::2]):
            lo = max(int(np.ceil(left - 0.5)), 0)
            hi = min(int(np.floor(right - 0.5)), width - 1)
            if hi >= lo:
                out[row, lo : hi + 1] = True
    return out
