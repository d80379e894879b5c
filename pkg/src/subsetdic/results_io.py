"""Writing and batch import of correlation and strain result files.

Two formats share one metadata header. CSV keeps the header as ``#``
comment lines ahead of a normal column header, so the files stay loadable
by spreadsheet tools and ``numpy.loadtxt``. The binary format stores the
same header compactly and then raw little-endian arrays; it round-trips
displacement fields bit-exactly, which the text format cannot promise
beyond its printed precision of nine significant digits.

File naming follows the deformed image: a result for ``def_0001.tiff``
becomes ``dic_results_def_0001.csv`` (or ``.bin``), and its strain field
``strain_def_0001.csv``. The prefix and output directory are arguments.
"""

from __future__ import annotations

import glob as globlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic, NoMatch, ParseError, TruncatedFile, VersionMismatch,
)
from .params import (
    CostKind, PointStatus, ShapeKind, StrainBasis, StrainFormulation,
)
from .rgdic import DicResult
from .roi import SubsetGrid
from .strain import StrainField

__all__ = [
    "FORMAT_VERSION", "ResultFileHeader", "DicImport", "StrainImport",
    "write_dic_csv", "read_dic_csv", "write_dic_binary", "read_dic_binary",
    "import_2d", "write_strain_csv", "read_strain_csv", "import_strain",
]

FORMAT_VERSION = 1

_MAGIC = b"DICF2D\x00\x00"
# everything after the magic, before the label bytes and the arrays:
# version, subset size/step, cost and shape codes, image dims,
# grid dims, grid origin, label byte count
_BIN_HEADER = struct.Struct("<IIIBBIIIIiiH")

_DIC_COLUMNS = ("x", "y", "u_x", "u_y", "zncc", "iterations", "status")
_STRAIN_COLUMNS = ("x", "y", "Fxx", "Fxy", "Fyx", "Fyy",
                   "exx", "eyy", "exy", "valid")

_COST_CODES = {CostKind.SSD: 0, CostKind.NSSD: 1, CostKind.ZNSSD: 2}
_SHAPE_CODES = {ShapeKind.RIGID: 0, ShapeKind.AFFINE: 1,
                ShapeKind.QUADRATIC: 2}
_COST_FROM_CODE = {v: k for k, v in _COST_CODES.items()}
_SHAPE_FROM_CODE = {v: k for k, v in _SHAPE_CODES.items()}


def _fmt(x: float) -> str:
    """Nine significant digits; NaN prints as 'nan'."""
    return format(float(x), ".9g")


@dataclass
class ResultFileHeader:
    """Metadata block carried by every result file, both formats.

    The grid origin pins the lattice so a file is self-describing: center
    coordinates are ``origin + step * index`` along each axis.
    """

    format_version: int
    subset_size: int
    subset_step: int
    cost: str
    shape: str
    image_width: int
    image_height: int
    grid_cols: int
    grid_rows: int
    grid_origin_x: int
    grid_origin_y: int
    image_label: str

    @classmethod
    def from_result(cls, result: DicResult) -> "ResultFileHeader":
        g = result.grid
        h, w = result.image_shape
        return cls(format_version=FORMAT_VERSION,
                   subset_size=g.subset_size, subset_step=g.subset_step,
                   cost=result.cost.value, shape=result.shape_kind.value,
                   image_width=int(w), image_height=int(h),
                   grid_cols=g.cols, grid_rows=g.rows,
                   grid_origin_x=int(g.xs[0]), grid_origin_y=int(g.ys[0]),
                   image_label=result.image_label)


_HEADER_KEYS = ("format_version", "subset_size", "subset_step", "cost",
                "shape", "image_width", "image_height", "grid_cols",
                "grid_rows", "grid_origin_x", "grid_origin_y", "image_label")
_INT_KEYS = {"format_version", "subset_size", "subset_step", "image_width",
             "image_height", "grid_cols", "grid_rows", "grid_origin_x",
             "grid_origin_y"}


def _header_lines(header: ResultFileHeader):
    for key in _HEADER_KEYS:
        yield f"# {key}: {getattr(header, key)}"
    legend = ",".join(f"{int(s)}={s.name.lower()}" for s in PointStatus)
    yield f"# status_codes: {legend}"


def _split_comment_block(lines):
    """Collect '# key: value' pairs and the index of the first data line."""
    meta = {}
    body_at = len(lines)
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_at = i
            break
        key, sep, value = line[1:].partition(":")
        if sep:
            meta[key.strip()] = value.strip()
    return meta, body_at


def _header_from_meta(meta: dict, path) -> ResultFileHeader:
    missing = [k for k in _HEADER_KEYS if k not in meta]
    if missing:
        raise ParseError(f"{path}: header lacks {', '.join(missing)}")
    values = {}
    for key in _HEADER_KEYS:
        raw = meta[key]
        if key in _INT_KEYS:
            try:
                values[key] = int(raw)
            except ValueError:
                raise ParseError(f"{path}: header field {key} is not an "
                                 f"integer: {raw!r}") from None
        else:
            values[key] = raw
    return ResultFileHeader(**values)


def _stem(label: str) -> str:
    return Path(label).stem or "result"


# --------------------------------------------------------------------- CSV


def write_dic_csv(result: DicResult, basepath=".", delimiter: str = ",",
                  prefix: str = "dic_results_") -> Path:
    """Write one correlation result as delimited text; returns the path."""
    header = ResultFileHeader.from_result(result)
    path = Path(basepath) / f"{prefix}{_stem(result.image_label)}.csv"
    g = result.grid
    with open(path, "w", newline="") as fh:
        for line in _header_lines(header):
            fh.write(line + "\n")
        fh.write(delimiter.join(_DIC_COLUMNS) + "\n")
        for r in range(g.rows):
            for c in range(g.cols):
                fh.write(delimiter.join((
                    str(int(g.xs[c])), str(int(g.ys[r])),
                    _fmt(result.u[r, c]), _fmt(result.v[r, c]),
                    _fmt(result.zncc[r, c]),
                    str(int(result.iterations[r, c])),
                    str(int(result.status[r, c])))) + "\n")
    return path


def _parse_data_rows(lines, body_at, n_cols, n_expected, delimiter, path):
    """Split and float-convert data rows, with file:line diagnostics."""
    rows = []
    for off, line in enumerate(lines[body_at:]):
        if not line.strip():
            continue
        parts = line.split(delimiter)
        lineno = body_at + off + 1
        if len(parts) != n_cols:
            raise ParseError(f"{path}:{lineno}: expected {n_cols} fields, "
                             f"got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    if len(rows) != n_expected:
        raise ParseError(f"{path}: expected {n_expected} data rows, "
                         f"got {len(rows)}")
    return np.asarray(rows, dtype=np.float64)


def _lattice_from_columns(x, y, rows, cols, path):
    """Recover the center coordinate vectors and check lattice consistency."""
    xg = x.reshape(rows, cols)
    yg = y.reshape(rows, cols)
    if (xg != xg[0]).any() or (yg.T != yg[:, 0]).any():
        raise ParseError(f"{path}: point coordinates do not form a "
                         "row-major lattice")
    return xg[0].astype(np.int64), yg[:, 0].astype(np.int64)


def _check_enum(mapping, raw, what, path):
    try:
        return mapping(raw)
    except ValueError:
        raise ParseError(f"{path}: unknown {what} {raw!r}") from None


def read_dic_csv(path, delimiter: str = ",") -> DicResult:
    """Inverse of write_dic_csv, up to the printed precision."""
    lines = Path(path).read_text().splitlines()
    meta, body_at = _split_comment_block(lines)
    header = _header_from_meta(meta, path)
    if body_at >= len(lines):
        raise ParseError(f"{path}: no column header line")
    if lines[body_at].split(delimiter) != list(_DIC_COLUMNS):
        raise ParseError(f"{path}:{body_at + 1}: column header is not "
                         f"{delimiter.join(_DIC_COLUMNS)}")
    rows, cols = header.grid_rows, header.grid_cols
    data = _parse_data_rows(lines, body_at + 1, len(_DIC_COLUMNS),
                            rows * cols, delimiter, path)
    xs, ys = _lattice_from_columns(data[:, 0], data[:, 1], rows, cols, path)
    return _assemble_result(header, xs, ys,
                            data[:, 2].reshape(rows, cols),
                            data[:, 3].reshape(rows, cols),
                            data[:, 4].reshape(rows, cols),
                            data[:, 5].reshape(rows, cols).astype(np.int32),
                            data[:, 6].reshape(rows, cols).astype(np.uint8),
                            path)


def _assemble_result(header, xs, ys, u, v, zncc, iterations, status,
                     path) -> DicResult:
    cost = _check_enum(CostKind, header.cost, "cost", path)
    shape = _check_enum(ShapeKind, header.shape, "shape", path)
    present = status != int(PointStatus.ABSENT)
    grid = SubsetGrid(xs=xs, ys=ys, present=present,
                      subset_size=header.subset_size,
                      subset_step=header.subset_step)
    # files persist only the displacement part of the shape function
    pvec = np.zeros((header.grid_rows, header.grid_cols, shape.n_params))
    pvec[..., 0] = u
    pvec[..., 1] = v
    return DicResult(grid=grid, image_label=header.image_label,
                     shape_kind=shape, u=u, v=v, zncc=zncc,
                     iterations=iterations, status=status, point_params=pvec,
                     cost=cost,
                     image_shape=(header.image_height, header.image_width))


# ------------------------------------------------------------------ binary


def write_dic_binary(result: DicResult, basepath=".",
                     prefix: str = "dic_results_") -> Path:
    """Write one correlation result in the compact binary layout."""
    header = ResultFileHeader.from_result(result)
    path = Path(basepath) / f"{prefix}{_stem(result.image_label)}.bin"
    label = header.image_label.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_BIN_HEADER.pack(
            header.format_version, header.subset_size, header.subset_step,
            _COST_CODES[result.cost], _SHAPE_CODES[result.shape_kind],
            header.image_width, header.image_height,
            header.grid_cols, header.grid_rows,
            header.grid_origin_x, header.grid_origin_y, len(label)))
        fh.write(label)
        for arr, dt in ((result.u, "<f8"), (result.v, "<f8"),
                        (result.zncc, "<f8"),
                        (result.iterations, "<i4"), (result.status, "<i4")):
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return path


def _read_exact(fh, n: int, path, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"{path}: ran out of bytes reading {what} "
                            f"({len(buf)} of {n})")
    return buf


def read_dic_binary(path) -> DicResult:
    """Bit-exact inverse of write_dic_binary."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if len(magic) < len(_MAGIC):
            raise TruncatedFile(f"{path}: shorter than the magic bytes")
        if magic != _MAGIC:
            raise BadMagic(f"{path}: leading bytes {magic!r} are not a "
                           "2D correlation result file")
        raw = _read_exact(fh, _BIN_HEADER.size, path, "header")
        (version, subset_size, subset_step, cost_code, shape_code,
         image_w, image_h, grid_cols, grid_rows,
         origin_x, origin_y, label_len) = _BIN_HEADER.unpack(raw)
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"{path}: format version {version}, "
                                  f"this reader handles {FORMAT_VERSION}")
        if cost_code not in _COST_FROM_CODE:
            raise ParseError(f"{path}: unknown cost code {cost_code}")
        if shape_code not in _SHAPE_FROM_CODE:
            raise ParseError(f"{path}: unknown shape code {shape_code}")
        label = _read_exact(fh, label_len, path, "label").decode("utf-8")
        n = grid_rows * grid_cols

        def grid_array(dt, what):
            nbytes = n * np.dtype(dt).itemsize
            flat = np.frombuffer(_read_exact(fh, nbytes, path, what),
                                 dtype=dt)
            return flat.reshape(grid_rows, grid_cols).copy()

        u = grid_array("<f8", "u_x")
        v = grid_array("<f8", "u_y")
        zncc = grid_array("<f8", "zncc")
        iterations = grid_array("<i4", "iterations")
        status = grid_array("<i4", "status").astype(np.uint8)
    header = ResultFileHeader(
        format_version=version, subset_size=subset_size,
        subset_step=subset_step, cost=_COST_FROM_CODE[cost_code].value,
        shape=_SHAPE_FROM_CODE[shape_code].value,
        image_width=image_w, image_height=image_h,
        grid_cols=grid_cols, grid_rows=grid_rows,
        grid_origin_x=origin_x, grid_origin_y=origin_y, image_label=label)
    xs = origin_x + subset_step * np.arange(grid_cols, dtype=np.int64)
    ys = origin_y + subset_step * np.arange(grid_rows, dtype=np.int64)
    return _assemble_result(header, xs, ys, u, v, zncc, iterations, status,
                            path)


# ------------------------------------------------------------ batch import


@dataclass
class DicImport:
    """An ordered set of correlation results over one subset grid.

    ``ss_x``/``ss_y`` are the shared center coordinate vectors; the field
    arrays are indexed [image, y, x] with images in lexicographic filename
    order. Indexing and iteration yield the individual results.
    """

    results: list
    labels: list
    ss_x: np.ndarray
    ss_y: np.ndarray
    u_x: np.ndarray
    u_y: np.ndarray
    zncc: np.ndarray
    iterations: np.ndarray
    status: np.ndarray

    def __len__(self) -> int:
        return len(self.results)

    def __getitem__(self, i) -> DicResult:
        return self.results[i]

    def __iter__(self):
        return iter(self.results)


def _sorted_matches(pattern) -> list:
    paths = sorted(globlib.glob(str(pattern)))
    if not paths:
        raise NoMatch(f"no files match {str(pattern)!r}")
    return paths


def import_2d(pattern, binary: bool = False,
              delimiter: str = ",") -> DicImport:
    """Load every result file matching a glob, sorted by filename."""
    paths = _sorted_matches(pattern)
    results = [read_dic_binary(p) if binary else read_dic_csv(p, delimiter)
               for p in paths]
    first = results[0]
    for p, r in zip(paths[1:], results[1:]):
        if (r.grid.rows, r.grid.cols) != (first.grid.rows, first.grid.cols):
            raise ParseError(
                f"{p}: grid {r.grid.rows}x{r.grid.cols} does not match "
                f"{paths[0]} ({first.grid.rows}x{first.grid.cols})")
    return DicImport(
        results=results, labels=[r.image_label for r in results],
        ss_x=first.grid.xs.copy(), ss_y=first.grid.ys.copy(),
        u_x=np.stack([r.u for r in results]),
        u_y=np.stack([r.v for r in results]),
        zncc=np.stack([r.zncc for r in results]),
        iterations=np.stack([r.iterations for r in results]),
        status=np.stack([r.status for r in results]))


# ------------------------------------------------------------------ strain


_STRAIN_KEYS = ("format_version", "window_points", "basis", "formulation",
                "vsg", "grid_cols", "grid_rows", "image_label")
_STRAIN_INT_KEYS = {"format_version", "window_points", "grid_cols",
                    "grid_rows"}


def write_strain_csv(field: StrainField, basepath=".", delimiter: str = ",",
                     prefix: str = "strain_") -> Path:
    """Write one strain field as delimited text; returns the path.

    Invalid windows carry ``valid=0`` and nan in every tensor column.
    """
    path = Path(basepath) / f"{prefix}{_stem(field.image_label)}.csv"
    rows, cols = field.exx.shape
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version: {FORMAT_VERSION}\n")
        fh.write(f"# window_points: {field.window_points}\n")
        fh.write(f"# basis: {field.basis.value}\n")
        fh.write(f"# formulation: {field.formulation.value}\n")
        fh.write(f"# vsg: {_fmt(field.vsg)}\n")
        fh.write(f"# grid_cols: {cols}\n")
        fh.write(f"# grid_rows: {rows}\n")
        fh.write(f"# image_label: {field.image_label}\n")
        fh.write(delimiter.join(_STRAIN_COLUMNS) + "\n")
        for r in range(rows):
            for c in range(cols):
                F = field.F[r, c]
                fh.write(delimiter.join((
                    str(int(field.xs[c])), str(int(field.ys[r])),
                    _fmt(F[0, 0]), _fmt(F[0, 1]), _fmt(F[1, 0]),
                    _fmt(F[1, 1]), _fmt(field.exx[r, c]),
                    _fmt(field.eyy[r, c]), _fmt(field.exy[r, c]),
                    str(int(field.valid[r, c])))) + "\n")
    return path


def read_strain_csv(path, delimiter: str = ",") -> StrainField:
    """Inverse of write_strain_csv, up to the printed precision."""
    lines = Path(path).read_text().splitlines()
    meta, body_at = _split_comment_block(lines)
    missing = [k for k in _STRAIN_KEYS if k not in meta]
    if missing:
        raise ParseError(f"{path}: header lacks {', '.join(missing)}")
    try:
        ints = {k: int(meta[k]) for k in _STRAIN_INT_KEYS}
        vsg = float(meta["vsg"])
    except ValueError as exc:
        raise ParseError(f"{path}: bad header value: {exc}") from None
    basis = _check_enum(StrainBasis, meta["basis"], "basis", path)
    formulation = _check_enum(StrainFormulation, meta["formulation"],
                              "formulation", path)
    if body_at >= len(lines):
        raise ParseError(f"{path}: no column header line")
    if lines[body_at].split(delimiter) != list(_STRAIN_COLUMNS):
        raise ParseError(f"{path}:{body_at + 1}: column header is not "
                         f"{delimiter.join(_STRAIN_COLUMNS)}")
    rows, cols = ints["grid_rows"], ints["grid_cols"]
    data = _parse_data_rows(lines, body_at + 1, len(_STRAIN_COLUMNS),
                            rows * cols, delimiter, path)
    xs, ys = _lattice_from_columns(data[:, 0], data[:, 1], rows, cols, path)
    F = np.empty((rows, cols, 2, 2))
    F[:, :, 0, 0] = data[:, 2].reshape(rows, cols)
    F[:, :, 0, 1] = data[:, 3].reshape(rows, cols)
    F[:, :, 1, 0] = data[:, 4].reshape(rows, cols)
    F[:, :, 1, 1] = data[:, 5].reshape(rows, cols)
    return StrainField(
        xs=xs, ys=ys, F=F,
        exx=data[:, 6].reshape(rows, cols),
        eyy=data[:, 7].reshape(rows, cols),
        exy=data[:, 8].reshape(rows, cols),
        valid=data[:, 9].reshape(rows, cols).astype(bool),
        vsg=vsg, window_points=ints["window_points"], basis=basis,
        formulation=formulation, image_label=meta["image_label"])


@dataclass
class StrainImport:
    """An ordered set of strain fields over one window grid.

    ``window_x``/``window_y`` are the shared window-center coordinate
    vectors; ``eps_*`` arrays are indexed [image, y, x] in lexicographic
    filename order.
    """

    fields: list
    labels: list
    window_x: np.ndarray
    window_y: np.ndarray
    eps_xx: np.ndarray
    eps_yy: np.ndarray
    eps_xy: np.ndarray
    F: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.fields)

    def __getitem__(self, i) -> StrainField:
        return self.fields[i]

    def __iter__(self):
        return iter(self.fields)


def import_strain(pattern, delimiter: str = ",") -> StrainImport:
    """Load every strain file matching a glob, sorted by filename."""
    paths = _sorted_matches(pattern)
    fields = [read_strain_csv(p, delimiter) for p in paths]
    first = fields[0]
    for p, f in zip(paths[1:], fields[1:]):
        if f.exx.shape != first.exx.shape:
            raise ParseError(
                f"{p}: window grid {f.exx.shape} does not match "
                f"{paths[0]} ({first.exx.shape})")
    return StrainImport(
        fields=fields, labels=[f.image_label for f in fields],
        window_x=first.xs.copy(), window_y=first.ys.copy(),
        eps_xx=np.stack([f.exx for f in fields]),
        eps_yy=np.stack([f.eyy for f in fields]),
        eps_xy=np.stack([f.exy for f in fields]),
        F=np.stack([f.F for f in fields]),
        valid=np.stack([f.valid for f in fields]))
