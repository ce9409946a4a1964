"""Elevation rasters: synthesis, ASCII grid I/O and bilinear sampling."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

NODATA_DEFAULT = -9999.0


class GridParseError(ValueError):
    pass


class BoundsError(ValueError):
    pass


@dataclass(frozen=True)
class WorldPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True, eq=False)
class Raster:
    """North-up grid. ``values`` is (height, width); row 0 is the northern edge.

    Cell ``(row, col)`` has its centre at
    ``x = origin_x + (col + 0.5) * cell_size`` and
    ``y = origin_y + (height - row - 0.5) * cell_size``; ``origin`` is the
    lower-left corner of the grid.
    """

    values: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)
    nodata: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"raster values must be a non-empty 2-D array, got {v.shape}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        # values are read-only, so the mask is computed once
        valid = np.isfinite(v) if self.nodata is None else np.isfinite(v) & (v != self.nodata)
        valid.setflags(write=False)
        object.__setattr__(self, "_valid", valid)
        object.__setattr__(self, "_all_valid", bool(valid.all()))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the grid's outer border."""
        x0, y0 = self.origin
        return x0, y0, x0 + self.width * self.cell_size, y0 + self.height * self.cell_size

    @property
    def valid_mask(self) -> np.ndarray:
        return self._valid

    def value_range(self) -> tuple[float, float]:
        vals = self.values[self.valid_mask]
        return float(vals.min()), float(vals.max())

    def contains(self, x, y) -> np.ndarray:
        x0, y0, x1, y1 = self.extent
        x, y = np.asarray(x), np.asarray(y)
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def shifted(self, dx: float, dy: float) -> "Raster":
        return Raster(self.values, self.cell_size, (self.origin[0] + dx, self.origin[1] + dy), self.nodata)

    def _fractional_index(self, x, y):
        col = (np.asarray(x, dtype=np.float64) - self.origin[0]) / self.cell_size - 0.5
        row = self.height - 0.5 - (np.asarray(y, dtype=np.float64) - self.origin[1]) / self.cell_size
        return row, col

    def bilinear(self, x, y, clamp: bool = False) -> np.ndarray:
        """Vectorised bilinear interpolation at world coordinates."""
        row, col = self._fractional_index(x, y)
        H, W = self.height, self.width
        if clamp:
            row = np.clip(row, 0.0, H - 1.0)
            col = np.clip(col, 0.0, W - 1.0)
        else:
            # the outer half cell replicates the border centres
            bad = (row < -0.5 - 1e-9) | (row > H - 0.5 + 1e-9) | (col < -0.5 - 1e-9) | (col > W - 0.5 + 1e-9)
            if np.any(bad):
                i = int(np.flatnonzero(np.ravel(bad))[0])
                bx = float(np.ravel(np.broadcast_to(x, bad.shape))[i])
                by = float(np.ravel(np.broadcast_to(y, bad.shape))[i])
                raise BoundsError(f"point ({bx:.3f}, {by:.3f}) outside raster extent {self.extent}")
            row = np.clip(row, 0.0, H - 1.0)
            col = np.clip(col, 0.0, W - 1.0)
        r0 = np.minimum(np.floor(row).astype(np.intp), max(H - 2, 0))
        c0 = np.minimum(np.floor(col).astype(np.intp), max(W - 2, 0))
        r1 = np.minimum(r0 + 1, H - 1)
        c1 = np.minimum(c0 + 1, W - 1)
        fr = row - r0
        fc = col - c0
        v = self.values
        corners = (v[r0, c0], v[r0, c1], v[r1, c0], v[r1, c1])
        if not self._all_valid:
            valid = self._valid
            ok = valid[r0, c0] & valid[r0, c1] & valid[r1, c0] & valid[r1, c1]
            if not np.all(ok):
                raise BoundsError("sampling touches a nodata cell")
        top = corners[0] * (1 - fc) + corners[1] * fc
        bot = corners[2] * (1 - fc) + corners[3] * fc
        return top * (1 - fr) + bot * fr


def sample_point(r: Raster, p: WorldPoint) -> float:
    return float(r.bilinear(p.x, p.y))


def sample_patch(r: Raster, center: WorldPoint, half_extent: float, grid_n: int,
                 clamp: bool = True) -> np.ndarray:
    """``grid_n x grid_n`` samples over the square ``center +- half_extent``.

    Rows run north to south like the raster itself. Samples falling past the
    border are clamped to it (edge replication) unless ``clamp`` is False.
    """
    if grid_n < 1:
        raise ValueError("grid_n must be >= 1")
    if grid_n == 1:
        offs = np.zeros(1)
    else:
        offs = np.linspace(-half_extent, half_extent, grid_n)
    xs = center.x + offs
    ys = center.y - offs
    X, Y = np.meshgrid(xs, ys)
    return r.bilinear(X, Y, clamp=clamp)


def sample_polyline(r: Raster, a: WorldPoint, b: WorldPoint, n: int) -> np.ndarray:
    """``n`` samples along the chord a -> b at t = 0, 1/(n-1), ..., 1."""
    if n < 2:
        raise ValueError("need at least two samples along a segment")
    t = np.linspace(0.0, 1.0, n)
    xs = np.empty(n)
    ys = np.empty(n)
    # each half is measured from its nearer endpoint so that reversing the
    # segment reproduces the samples bit for bit
    half = n // 2
    xs[:half] = a.x + t[:half] * (b.x - a.x)
    ys[:half] = a.y + t[:half] * (b.y - a.y)
    xs[n - half:] = b.x + t[:half][::-1] * (a.x - b.x)
    ys[n - half:] = b.y + t[:half][::-1] * (a.y - b.y)
    if n % 2:
        xs[half] = 0.5 * (a.x + b.x)
        ys[half] = 0.5 * (a.y + b.y)
    return r.bilinear(xs, ys)


# --------------------------------------------------------------------------
# synthesis

def synth_terrain(width: int, height: int, cell_size: float, roughness: float, seed: int,
                  decay: float = 0.4) -> Raster:
    """Diamond-square fractal surface, deterministic in ``seed``.

    ``decay`` sets how fast displacement shrinks per subdivision level (the
    texture); ``roughness`` scales total relief, so the surface spans
    ``500 +- 500 * roughness`` metres and always fits in [0, 1000].
    """
    if width < 16 or height < 16:
        raise ValueError(f"terrain must be at least 16x16 cells, got {width}x{height}")
    if not 0.0 < roughness <= 1.0:
        raise ValueError(f"roughness must lie in (0, 1], got {roughness}")
    rng = np.random.default_rng(seed)
    k = int(np.ceil(np.log2(max(width, height) - 1)))
    size = 2 ** k + 1
    z = np.zeros((size, size))
    z[::size - 1, ::size - 1] = rng.uniform(-1.0, 1.0, size=(2, 2))
    amp = 1.0
    step = size - 1
    while step > 1:
        h = step // 2
        # diamond: centre of each square
        c = (z[:-1:step, :-1:step] + z[:-1:step, step::step] + z[step::step, :-1:step] + z[step::step, step::step]) / 4
        z[h::step, h::step] = c + amp * rng.uniform(-1.0, 1.0, size=c.shape)
        # square: edge midpoints, averaging available neighbours
        for r0, c0 in ((0, h), (h, 0)):
            rows = np.arange(r0, size, step)
            cols = np.arange(c0, size, step)
            R, C = np.meshgrid(rows, cols, indexing="ij")
            acc = np.zeros(R.shape)
            cnt = np.zeros(R.shape)
            for dr, dc in ((-h, 0), (h, 0), (0, -h), (0, h)):
                rr, cc = R + dr, C + dc
                ok = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size)
                acc[ok] += z[rr[ok], cc[ok]]
                cnt[ok] += 1
            z[R, C] = acc / cnt + amp * rng.uniform(-1.0, 1.0, size=R.shape)
        amp *= decay
        step = h
    z = z[:height, :width]
    z = z - z.mean()
    z = z / np.abs(z).max()
    values = 500.0 + 500.0 * roughness * z
    return Raster(np.clip(values, 0.0, 1000.0), float(cell_size))


# --------------------------------------------------------------------------
# ASCII grid I/O

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_ascii_grid(path) -> Raster:
    lines = Path(path).read_text().splitlines()
    header = {}
    for i, key in enumerate(_HEADER_KEYS):
        if i >= len(lines):
            raise GridParseError(f"line {i + 1}: missing header '{key}'")
        parts = lines[i].split()
        if len(parts) != 2 or parts[0].lower() != key:
            raise GridParseError(f"line {i + 1}: expected '{key} <value>', got {lines[i]!r}")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise GridParseError(f"line {i + 1}: bad number {parts[1]!r}") from None
    ncols, nrows = header["ncols"], header["nrows"]
    if ncols != int(ncols) or nrows != int(nrows) or ncols < 1 or nrows < 1:
        raise GridParseError(f"line 1-2: grid dimensions must be positive integers, got {ncols} x {nrows}")
    ncols, nrows = int(ncols), int(nrows)
    if header["cellsize"] <= 0:
        raise GridParseError(f"line 5: cellsize must be positive, got {header['cellsize']}")
    body = [ln for ln in lines[6:]]
    rows = []
    for j, ln in enumerate(body):
        if not ln.strip():
            continue
        vals = ln.split()
        if len(vals) != ncols:
            raise GridParseError(f"line {j + 7}: expected {ncols} values, got {len(vals)}")
        try:
            rows.append([float(v) for v in vals])
        except ValueError as e:
            raise GridParseError(f"line {j + 7}: {e}") from None
    if len(rows) != nrows:
        raise GridParseError(f"expected {nrows} data rows, got {len(rows)}")
    return Raster(np.array(rows), header["cellsize"], (header["xllcorner"], header["yllcorner"]),
                  header["nodata_value"])


def write_ascii_grid(r: Raster, path) -> None:
    nodata = NODATA_DEFAULT if r.nodata is None else r.nodata
    out = [
        f"ncols {r.width}",
        f"nrows {r.height}",
        f"xllcorner {r.origin[0]!r}",
        f"yllcorner {r.origin[1]!r}",
        f"cellsize {r.cell_size!r}",
        f"NODATA_value {nodata!r}",
    ]
    vals = np.where(np.isfinite(r.values), r.values, nodata)
    out.extend(" ".join(f"{v:.9g}" for v in row) for row in vals)
    _atomic_write(Path(path), "\n".join(out) + "\n")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
