"""Functional datasets: containers, synthetic generators, CSV ingestion.

Two CSV layouts are understood:

* long format, header ``sample_id,x[,x2,...],value`` with one observation
  per row; samples may be observed at different points (ragged layout);
* grid format, one sample per row, header ``[sample_id,]x=<v>,x=<v>,...``;
  only for 1D inputs on a shared grid.

Lines starting with ``#`` are comments and are skipped on read.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyDatasetError,
    InvalidConfigError,
    InvalidInputError,
    ParseError,
    UnsupportedLayoutError,
)
from .seeding import make_rng

log = logging.getLogger(__name__)

MISSING_TOKENS = {"", "nan", "NaN", "NA", "N/A", "?", "null"}

QUADRATIC_GRID = np.linspace(-10.0, 10.0, 100)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class InputNormalization:
    """Affine map of input points onto the unit box ``[0, 1]^dim``."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_points(cls, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(_frozen(points.min(axis=0)), _frozen(points.max(axis=0)))

    @classmethod
    def identity(cls, dim=1):
        return cls(_frozen(np.zeros(dim)), _frozen(np.ones(dim)))

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def scale(self):
        span = self.upper - self.lower
        # degenerate axes (a single coordinate value) keep unit scale
        return np.where(span > 0, span, 1.0)

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return (points - self.lower) / self.scale

    def to_dict(self):
        return {"lower": [float(v) for v in self.lower], "upper": [float(v) for v in self.upper]}

    @classmethod
    def from_dict(cls, d):
        return cls(_frozen(d["lower"]), _frozen(d["upper"]))

    def __eq__(self, other):
        if not isinstance(other, InputNormalization):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))


class FunctionalDataset:
    """A set of function samples, each a list of (input point, value) pairs.

    Points are stored as ``(N_i, dim)`` arrays. When every sample shares the
    same point list the dataset has ``layout == "shared"`` and exposes
    :attr:`grid` and the ``(L, S)`` matrix :attr:`values`.
    """

    def __init__(self, points, values, normalization=None):
        if len(points) != len(values):
            raise InvalidInputError("points and values must have the same number of samples")
        pts, vals = [], []
        for p, v in zip(points, values):
            p = np.asarray(p, dtype=np.float64)
            if p.ndim == 1:
                p = p[:, None]
            v = np.asarray(v, dtype=np.float64).reshape(-1)
            if p.shape[0] != v.shape[0] or v.shape[0] < 1:
                raise InvalidInputError("each sample needs as many values as points (at least one)")
            if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
                raise InvalidInputError("non-finite point or value in dataset")
            pts.append(_frozen(p))
            vals.append(_frozen(v))
        if pts and len({p.shape[1] for p in pts}) != 1:
            raise InvalidInputError("all samples must have the same input dimension")
        self.points = pts
        self.sample_values = vals
        shared = bool(pts) and all(
            p.shape == pts[0].shape and np.array_equal(p, pts[0]) for p in pts[1:]
        )
        self.layout = "shared" if shared else "ragged"
        if normalization is None and pts:
            normalization = InputNormalization.from_points(np.concatenate(pts))
        self.normalization = normalization

    @classmethod
    def from_grid(cls, grid, values, normalization=None):
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim == 1:
            grid = grid[:, None]
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if values.shape[0] == 0:
            ds = cls([], [], normalization or InputNormalization.from_points(grid))
            ds._empty_grid = _frozen(grid)
            return ds
        return cls([grid] * values.shape[0], list(values), normalization)

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        if self.points:
            return self.points[0].shape[1]
        return self.normalization.dim

    @property
    def grid(self):
        if not self.points and hasattr(self, "_empty_grid"):
            return self._empty_grid
        if self.layout != "shared":
            raise UnsupportedLayoutError("dataset is not on a shared grid")
        return self.points[0]

    @property
    def values(self):
        if not self.points:
            return np.zeros((0, self.grid.shape[0]))
        if self.layout != "shared":
            raise UnsupportedLayoutError("dataset is not on a shared grid")
        return np.stack(self.sample_values)

    def subset(self, indices):
        indices = list(indices)
        ds = FunctionalDataset(
            [self.points[i] for i in indices],
            [self.sample_values[i] for i in indices],
            self.normalization,
        )
        if not indices and self.layout == "shared" and self.points:
            ds._empty_grid = self.points[0]
        return ds

    def union_points(self):
        """Distinct observation points across all samples, in first-seen order."""
        seen = {}
        for p in self.points:
            for row in p:
                key = row.tobytes()
                if key not in seen:
                    seen[key] = row
        return np.array(list(seen.values())).reshape(-1, self.dim)


# --------------------------------------------------------------------------
# Synthetic generators
# --------------------------------------------------------------------------


def quadratic_generate(count, seed):
    """Bimodal quadratic curves ``a x^2 + eps`` on 100 points of [-10, 10].

    ``a`` is +1 or -1 with equal probability and ``eps ~ N(0, 1)`` is drawn
    once per curve, so every curve is a shifted parabola.
    """
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    rng = np.random.default_rng(seed)
    a = 2.0 * rng.integers(0, 2, size=count) - 1.0
    eps = rng.standard_normal(count)
    values = a[:, None] * QUADRATIC_GRID[None, :] ** 2 + eps[:, None]
    return FunctionalDataset.from_grid(QUADRATIC_GRID, values)


def quadratic_sampler(seed):
    """Endless supply of fresh Quadratic curves, ``draw(n) -> (n, 100)``."""
    rng = np.random.default_rng(seed)

    def draw(n):
        a = 2.0 * rng.integers(0, 2, size=n) - 1.0
        eps = rng.standard_normal(n)
        return a[:, None] * QUADRATIC_GRID[None, :] ** 2 + eps[:, None]

    return draw


def grid2d_generate(side, count, seed):
    """Images with two random Gaussian bumps on a ``side x side`` grid over [0,1]^2."""
    if side < 2:
        raise InvalidInputError("side must be >= 2")
    rng = np.random.default_rng(seed)
    ax = np.linspace(0.0, 1.0, side)
    gx, gy = np.meshgrid(ax, ax, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    values = np.zeros((count, side * side))
    for i in range(count):
        for _ in range(2):
            c = rng.uniform(0.2, 0.8, size=2)
            w = rng.uniform(0.1, 0.2)
            amp = rng.uniform(0.5, 1.5)
            d2 = np.sum((grid - c) ** 2, axis=1)
            values[i] += amp * np.exp(-d2 / (2 * w * w))
    return FunctionalDataset.from_grid(grid, values)


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------


def fmt(v):
    return repr(float(v))


def _data_lines(text):
    """Yield (line_number, line) for non-comment, non-blank lines."""
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield n, line


def _parse_cell(cell, line):
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"cannot parse {cell!r} as a number", line) from None


def read_long_csv(path):
    """Parse a long-format CSV. Returns ``{sample_id: (points, values)}`` in file order.

    Missing values are kept as NaN so that preprocessing can decide what to drop.
    """
    text = Path(path).read_text()
    rows = list(_data_lines(text))
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    header_line, header = rows[0]
    cols = [c.strip() for c in next(csv.reader([header]))]
    if len(cols) < 3 or cols[0] != "sample_id" or cols[-1] != "value" or cols[1] != "x":
        raise ParseError("long-format header must be sample_id,x[,x2,...],value", header_line)
    ncols = len(cols)
    samples = {}
    for n, line in rows[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != ncols:
            raise ParseError(f"expected {ncols} fields, got {len(cells)}", n)
        sid = cells[0].strip()
        x = [_parse_cell(c, n) for c in cells[1:-1]]
        if any(math.isnan(v) for v in x):
            raise ParseError("missing input coordinate", n)
        y = _parse_cell(cells[-1], n)
        pts, vals = samples.setdefault(sid, ([], []))
        pts.append(x)
        vals.append(y)
    return {sid: (np.array(p), np.array(v)) for sid, (p, v) in samples.items()}


def read_grid_csv(path):
    """Parse a grid-format CSV. Returns ``(ids, grid, values)``; missing cells are NaN."""
    text = Path(path).read_text()
    rows = list(_data_lines(text))
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    header_line, header = rows[0]
    cols = [c.strip() for c in next(csv.reader([header]))]
    has_id = cols[0] == "sample_id"
    xcols = cols[1:] if has_id else cols
    grid = []
    for c in xcols:
        if not c.startswith("x="):
            raise ParseError(f"grid-format column {c!r} must look like x=<value>", header_line)
        grid.append(_parse_cell(c[2:], header_line))
    ids, values = [], []
    for n, line in rows[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != len(cols):
            raise ParseError(f"expected {len(cols)} fields, got {len(cells)}", n)
        if has_id:
            ids.append(cells[0].strip())
            cells = cells[1:]
        else:
            ids.append(str(len(ids)))
        values.append([_parse_cell(c, n) for c in cells])
    return ids, np.array(grid), np.array(values, dtype=np.float64).reshape(len(ids), len(grid))


def long_csv_text(dataset, comment=None, ids=None):
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    dim = dataset.dim
    xcols = ["x"] + [f"x{k}" for k in range(2, dim + 1)]
    buf.write(",".join(["sample_id", *xcols, "value"]) + "\n")
    for i, (p, v) in enumerate(zip(dataset.points, dataset.sample_values)):
        sid = ids[i] if ids is not None else str(i)
        for row, y in zip(p, v):
            buf.write(",".join([sid, *(fmt(c) for c in row), fmt(y)]) + "\n")
    return buf.getvalue()


def grid_csv_text(dataset, comment=None, ids=None):
    if dataset.dim != 1:
        raise InvalidInputError("grid format supports 1D inputs only")
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    grid = dataset.grid[:, 0]
    buf.write(",".join(["sample_id"] + [f"x={fmt(x)}" for x in grid]) + "\n")
    for i, v in enumerate(dataset.sample_values):
        sid = ids[i] if ids is not None else str(i)
        buf.write(",".join([sid, *(fmt(y) for y in v)]) + "\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# Manifests, preprocessing, splitting
# --------------------------------------------------------------------------

SOURCES = ("QuadraticSynthetic", "CsvLong", "CsvGrid")
MODES = ("none", "melbourne", "gridwatch")


@dataclass
class DatasetManifest:
    name: str = "quadratic"
    source: str = "QuadraticSynthetic"
    path: str | None = None
    count: int = 2000
    mode: str = "none"
    drop_missing: bool = True
    # gridwatch filters; all in input units
    grid_step: float | None = None
    diff_percentile: float | None = 99.5
    flat_span: float | None = 30.0
    split_ratios: Sequence[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    seed: int = 0

    def __post_init__(self):
        if self.source not in SOURCES:
            raise InvalidConfigError(f"unknown dataset source {self.source!r}")
        if self.mode not in MODES:
            raise InvalidConfigError(f"unknown preprocessing mode {self.mode!r}")
        r = [float(x) for x in self.split_ratios]
        if len(r) != 3 or any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            raise InvalidConfigError("split_ratios must be three non-negative numbers summing to 1")
        self.split_ratios = r
        if self.source != "QuadraticSynthetic" and not self.path:
            raise InvalidConfigError(f"source {self.source} needs a path")

    def to_dict(self):
        return {
            "name": self.name,
            "source": self.source,
            "path": self.path,
            "count": self.count,
            "mode": self.mode,
            "drop_missing": self.drop_missing,
            "grid_step": self.grid_step,
            "diff_percentile": self.diff_percentile,
            "flat_span": self.flat_span,
            "split_ratios": list(self.split_ratios),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        known = set(cls().to_dict())
        extra = set(d) - known
        if extra:
            raise InvalidConfigError(f"unknown dataset keys: {sorted(extra)}")
        return cls(**d)


def has_missing(values):
    return bool(np.any(np.isnan(values)))


def off_step(points, step):
    """True when some input coordinate is not an integer multiple of ``step``."""
    q = points / step
    return bool(np.any(np.abs(q - np.round(q)) > 1e-9))


def exceeds_diff_threshold(values, threshold):
    return bool(np.any(np.abs(np.diff(values)) > threshold))


def has_flat_run(points, values, span):
    """True when consecutive equal readings cover at least ``span`` input units."""
    x = points[:, 0]
    start = 0
    for k in range(1, len(values) + 1):
        if k == len(values) or values[k] != values[start]:
            if x[k - 1] - x[start] >= span:
                return True
            start = k
    return False


def preprocess(points, values, manifest):
    """Apply the manifest's row filters and rescaling to raw per-sample arrays."""
    keep = list(range(len(values)))
    if manifest.drop_missing or manifest.mode == "melbourne":
        keep = [i for i in keep if not has_missing(values[i])]
    elif any(has_missing(values[i]) for i in keep):
        raise InvalidInputError("dataset has missing values and drop_missing is off")
    if manifest.mode == "gridwatch":
        if manifest.grid_step:
            keep = [i for i in keep if not off_step(points[i], manifest.grid_step)]
        if manifest.diff_percentile is not None and keep:
            diffs = np.concatenate([np.abs(np.diff(values[i])) for i in keep])
            if diffs.size:
                thr = np.percentile(diffs, manifest.diff_percentile)
                keep = [i for i in keep if not exceeds_diff_threshold(values[i], thr)]
        if manifest.flat_span is not None:
            keep = [i for i in keep if not has_flat_run(points[i], values[i], manifest.flat_span)]
    if not keep:
        raise EmptyDatasetError("preprocessing dropped every sample")
    pts = [points[i] for i in keep]
    vals = [np.asarray(values[i], dtype=np.float64) for i in keep]
    if manifest.mode == "melbourne":
        sd = np.concatenate(vals).std()
        if sd > 0:
            vals = [v / sd for v in vals]
    elif manifest.mode == "gridwatch":
        out_p, out_v = [], []
        for p, v in zip(pts, vals):
            sd = v.std()
            if sd == 0:
                log.warning("dropping constant sample during per-sample scaling")
                continue
            out_p.append(p)
            out_v.append((v - v.mean()) / sd)
        if not out_v:
            raise EmptyDatasetError("preprocessing dropped every sample")
        pts, vals = out_p, out_v
    return pts, vals, keep


def ingest_csv(manifest):
    """Read and preprocess the manifest's CSV file into a FunctionalDataset."""
    if manifest.source == "CsvLong":
        samples = read_long_csv(manifest.path)
        points = [p for p, _ in samples.values()]
        values = [v for _, v in samples.values()]
    elif manifest.source == "CsvGrid":
        _, grid, table = read_grid_csv(manifest.path)
        points = [grid[:, None]] * table.shape[0]
        values = list(table)
    else:
        raise InvalidConfigError("ingest_csv needs a CSV source")
    pts, vals, _ = preprocess(points, values, manifest)
    return FunctionalDataset(pts, vals)


def split_sizes(n, ratios):
    """Floor each share, hand the remainder to the first (train) split."""
    sizes = [int(math.floor(r * n + 1e-9)) for r in ratios]
    sizes[0] += n - sum(sizes)
    return sizes


@dataclass
class Splits:
    train: FunctionalDataset
    val: FunctionalDataset
    test: FunctionalDataset
    indices: tuple


def split_dataset(dataset, ratios=(0.8, 0.1, 0.1), seed=0):
    n = len(dataset)
    perm = make_rng(seed, "split").permutation(n)
    a, b, _ = split_sizes(n, ratios)
    idx = (perm[:a], perm[a : a + b], perm[a + b :])
    parts = [dataset.subset(ix) for ix in idx]
    return Splits(*parts, indices=idx)


def load_dataset(manifest):
    if manifest.source == "QuadraticSynthetic":
        return quadratic_generate(manifest.count, manifest.seed)
    return ingest_csv(manifest)


def load_splits(manifest):
    return split_dataset(load_dataset(manifest), manifest.split_ratios, manifest.seed)
