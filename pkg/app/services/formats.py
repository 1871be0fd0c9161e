"""
File formats: OFF meshes, XYZ clouds, text voxel volumes, binary grids,
dataset directories and the CSV / PGM / JSONL outputs of the CLI.

Every writer goes through a temp file in the target directory followed by a
rename, so a failed write never leaves a partial file behind. Inside
staged_outputs() writes are held back and committed together, so a command
that fails part way leaves none of its outputs.
"""

import csv
import io
import json
import logging
import os
import struct
import tempfile
from contextlib import contextmanager
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from models.field import FieldGrid
from models.geometry import PointCloud, TriMesh, VoxelVolume
from models.probes import ResponseMatrix
from models.run import GRID_HEADER_BYTES, GRID_MAGIC, GRID_VERSION, GridFile, RunConfig
from models.training import TrainingSample, TrainReport
from services.errors import FormatError, InvalidArgumentError, ParseError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
TextInput = Union[str, bytes]

# magic, version, R, C, precision, 3 reserved bytes
_HEADER = struct.Struct("<4sIHHB3x")
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}

LABELS_FILE = "labels.csv"


class OutputBatch:
    """
    Files staged by one command. Nothing reaches its final path until
    commit(), which first writes every temp file and only then renames.
    """

    def __init__(self) -> None:
        self.pending: dict[Path, bytes] = {}

    def add(self, path: Path, data: bytes) -> None:
        self.pending[path] = data

    def commit(self) -> None:
        created_dirs: list[Path] = []
        temps: list[tuple[str, Path]] = []
        committed: list[Path] = []
        try:
            for path, data in self.pending.items():
                missing = [p for p in (path.parent, *path.parent.parents) if not p.exists()]
                path.parent.mkdir(parents=True, exist_ok=True)
                created_dirs.extend(reversed(missing))
                fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
                temps.append((tmp, path))
                with os.fdopen(fd, "wb") as f:
                    f.write(data)
            for tmp, path in temps:
                existed = path.exists()
                os.replace(tmp, path)
                if not existed:
                    committed.append(path)
        except BaseException:
            for tmp, _ in temps:
                if os.path.exists(tmp):
                    os.unlink(tmp)
            for path in committed:
                path.unlink(missing_ok=True)
            for directory in reversed(created_dirs):
                try:
                    directory.rmdir()
                except OSError:
                    pass
            raise
        logger.debug(f"Committed {len(temps)} staged files")


_batch: ContextVar[Optional[OutputBatch]] = ContextVar("output_batch", default=None)


@contextmanager
def staged_outputs() -> Iterator[OutputBatch]:
    """Stage every write made inside the block; commit them together on success."""
    batch = OutputBatch()
    token = _batch.set(batch)
    try:
        yield batch
    finally:
        _batch.reset(token)
    batch.commit()


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    path = Path(path)
    batch = _batch.get()
    if batch is not None:
        batch.add(path, data)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {len(data)} bytes to {path}")


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _text(data: TextInput, source: Optional[str]) -> str:
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError("input is not UTF-8 text", offset=e.start, source=source) from e
    return data


def _content_lines(text: str) -> Iterable[tuple[int, list[str]]]:
    """(1-based line number, tokens) for lines that are not blank or comments."""
    for number, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if tokens:
            yield number, tokens


def _floats(tokens: Sequence[str], number: int, source: Optional[str]) -> list[float]:
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric token in {' '.join(tokens)!r}", line=number, source=source)
    if not all(np.isfinite(values)):
        raise ParseError("coordinates must be finite", line=number, source=source)
    return values


def _ints(tokens: Sequence[str], number: int, source: Optional[str]) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected integers, got {' '.join(tokens)!r}", line=number, source=source)


# --- OFF -----------------------------------------------------------------


def parse_off(data: TextInput, source: Optional[str] = None) -> TriMesh:
    """
    OFF mesh. Counts may follow the header on the same line; polygons with
    more than three vertices are fan-triangulated as (v0, vi, vi+1).
    """
    lines = iter(_content_lines(_text(data, source)))
    try:
        number, tokens = next(lines)
    except StopIteration:
        raise ParseError("empty OFF file", line=1, source=source)
    if tokens[0] != "OFF":
        raise ParseError(f"expected OFF header, got {tokens[0]!r}", line=number, source=source)
    counts = tokens[1:]
    if not counts:
        try:
            number, counts = next(lines)
        except StopIteration:
            raise ParseError("missing counts line", line=number + 1, source=source)
    counts = _ints(counts, number, source)
    if len(counts) < 2 or min(counts[:2]) < 0:
        raise ParseError("counts line needs vertex and face counts", line=number, source=source)
    n_vertices, n_faces = counts[0], counts[1]

    vertices = []
    for _ in range(n_vertices):
        try:
            number, tokens = next(lines)
        except StopIteration:
            raise ParseError(
                f"expected {n_vertices} vertices, found {len(vertices)}",
                line=number + 1,
                source=source,
            )
        if len(tokens) < 3:
            raise ParseError("vertex needs 3 coordinates", line=number, source=source)
        vertices.append(_floats(tokens[:3], number, source))

    faces = []
    for i in range(n_faces):
        try:
            number, tokens = next(lines)
        except StopIteration:
            raise ParseError(
                f"expected {n_faces} faces, found {i}", line=number + 1, source=source
            )
        size = _ints(tokens[:1], number, source)[0]
        if size < 3 or len(tokens) < size + 1:
            raise ParseError(
                f"face needs at least 3 indices, got {tokens!r}", line=number, source=source
            )
        # trailing colour values are ignored
        idx = _ints(tokens[1 : size + 1], number, source)
        if min(idx) < 0 or max(idx) >= n_vertices:
            raise ParseError(
                f"face index out of range for {n_vertices} vertices", line=number, source=source
            )
        if len(set(idx)) != len(idx):
            raise ParseError("face repeats a vertex", line=number, source=source)
        faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, size - 1))

    extra = next(lines, None)
    if extra is not None:
        number, tokens = extra
        raise ParseError(
            f"unexpected content after faces: {tokens[0]!r}", line=number, source=source
        )

    mesh = TriMesh.of(np.array(vertices).reshape(-1, 3), np.array(faces).reshape(-1, 3))
    logger.debug(f"Parsed OFF with {mesh.n_vertices} vertices, {mesh.n_faces} triangles")
    return mesh


def read_off(path: PathLike) -> TriMesh:
    return parse_off(Path(path).read_bytes(), source=str(path))


# --- XYZ -----------------------------------------------------------------


def parse_xyz(data: TextInput, source: Optional[str] = None) -> PointCloud:
    """Rows of 'x y z' or 'x y z nx ny nz'; every row must use the same arity."""
    rows, width = [], None
    for number, tokens in _content_lines(_text(data, source)):
        if len(tokens) not in (3, 6):
            raise ParseError(
                f"expected 3 or 6 columns, got {len(tokens)}", line=number, source=source
            )
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise ParseError(
                f"row has {len(tokens)} columns, earlier rows have {width}",
                line=number,
                source=source,
            )
        rows.append(_floats(tokens, number, source))
    arr = np.array(rows).reshape(-1, width or 3)
    normals = arr[:, 3:] if width == 6 else None
    return PointCloud.of(arr[:, :3], normals)


def read_xyz(path: PathLike) -> PointCloud:
    return parse_xyz(Path(path).read_bytes(), source=str(path))


def format_xyz(cloud: PointCloud) -> str:
    data = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    return "".join(" ".join(map(repr, row)) + "\n" for row in data.tolist())


def write_xyz(path: PathLike, cloud: PointCloud) -> None:
    atomic_write_text(path, format_xyz(cloud))


# --- voxels ----------------------------------------------------------------


def parse_voxels(data: TextInput, source: Optional[str] = None) -> VoxelVolume:
    """'VOXN <N>' then N*N rows of N '0'/'1' characters: z planes, y rows, x columns."""
    lines = _text(data, source).splitlines()
    if not lines:
        raise ParseError("empty voxel file", line=1, source=source)
    header = lines[0].split()
    if len(header) != 2 or header[0] != "VOXN":
        raise ParseError("expected header 'VOXN <N>'", line=1, source=source)
    try:
        n = int(header[1])
    except ValueError:
        raise ParseError(f"bad volume size {header[1]!r}", line=1, source=source)
    if n < 1:
        raise ParseError(f"volume size must be positive, got {n}", line=1, source=source)
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != n * n:
        raise ParseError(
            f"expected {n * n} rows, found {len(body)}",
            line=min(len(body), n * n) + 2,
            source=source,
        )
    occupancy = np.zeros((n, n, n), dtype=bool)
    for i, row in enumerate(body):
        number = i + 2
        row = row.strip()
        if len(row) != n:
            raise ParseError(f"row has {len(row)} cells, expected {n}", line=number, source=source)
        bad = set(row) - {"0", "1"}
        if bad:
            raise ParseError(
                f"invalid cell character {sorted(bad)[0]!r}", line=number, source=source
            )
        iz, iy = divmod(i, n)
        occupancy[:, iy, iz] = np.frombuffer(row.encode("ascii"), dtype=np.uint8) == ord("1")
    return VoxelVolume.of(occupancy)


def format_voxels(vol: VoxelVolume) -> str:
    n = vol.size
    lines = [f"VOXN {n}"]
    for iz in range(n):
        for iy in range(n):
            lines.append("".join("1" if v else "0" for v in vol.occupancy[:, iy, iz]))
    return "\n".join(lines) + "\n"


def read_voxels(path: PathLike) -> VoxelVolume:
    return parse_voxels(Path(path).read_bytes(), source=str(path))


def write_voxels(path: PathLike, vol: VoxelVolume) -> None:
    atomic_write_text(path, format_voxels(vol))


# --- grids -----------------------------------------------------------------


def encode_grid(grid: FieldGrid, precision: int = 4) -> bytes:
    if precision not in _DTYPES:
        raise InvalidArgumentError(f"precision must be 4 or 8, got {precision}")
    r, c = grid.resolution, grid.channels
    if r > 0xFFFF or c > 0xFFFF:
        raise InvalidArgumentError(f"grid too large for the file header: R={r}, C={c}")
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, r, c, precision)
    return header + grid.values.astype(_DTYPES[precision]).tobytes(order="C")


def decode_grid(data: bytes, source: Optional[str] = None) -> GridFile:
    where = f"{source}: " if source else ""
    if len(data) < GRID_HEADER_BYTES:
        raise FormatError(f"{where}truncated header ({len(data)} bytes)")
    magic, version, r, c, precision = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise FormatError(f"{where}bad magic {magic!r}")
    if version != GRID_VERSION:
        raise FormatError(f"{where}unsupported version {version}")
    if precision not in _DTYPES:
        raise FormatError(f"{where}unknown precision tag {precision}")
    if data[13:16] != b"\x00\x00\x00":
        raise FormatError(f"{where}reserved header bytes are not zero")
    expected = GRID_HEADER_BYTES + precision * r**3 * c
    if len(data) != expected:
        raise FormatError(f"{where}expected {expected} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype=_DTYPES[precision], offset=GRID_HEADER_BYTES)
    try:
        grid = FieldGrid(values=values.astype(np.float64).reshape(r, r, r, c))
    except (ValidationError, ValueError) as e:
        raise FormatError(f"{where}invalid grid contents: {e}") from e
    return GridFile(resolution=r, channels=c, precision=precision, grid=grid)


def write_grid(path: PathLike, grid: FieldGrid, precision: int = 4) -> None:
    atomic_write_bytes(path, encode_grid(grid, precision))


def read_grid(path: PathLike) -> FieldGrid:
    return decode_grid(Path(path).read_bytes(), source=str(path)).grid


# --- datasets ----------------------------------------------------------------


def shape_file_name(index: int) -> str:
    return f"shape_{index:04d}.xyz"


def write_dataset(directory: PathLike, shapes: Sequence) -> None:
    """One XYZ file per shape plus labels.csv (file,label)."""
    directory = Path(directory)
    rows = []
    for i, shape in enumerate(shapes):
        name = shape_file_name(i)
        write_xyz(directory / name, shape.cloud)
        label = getattr(shape, "label", None)
        rows.append((name, "" if label is None else int(label)))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["file", "label"])
    writer.writerows(rows)
    atomic_write_text(directory / LABELS_FILE, buf.getvalue())
    logger.info(f"Wrote {len(rows)} shapes to {directory}")


def read_dataset(directory: PathLike) -> list[TrainingSample]:
    """
    Shapes listed in labels.csv, in file order. Without labels.csv every
    *.xyz file is read in name order, unlabelled.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidArgumentError(f"dataset directory not found: {directory}")
    labels_path = directory / LABELS_FILE
    entries: list[tuple[str, Optional[int]]] = []
    if labels_path.exists():
        with labels_path.open(newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["file", "label"]:
                raise ParseError("expected header 'file,label'", line=1, source=str(labels_path))
            for number, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise ParseError("expected 2 columns", line=number, source=str(labels_path))
                name, label = row
                try:
                    entries.append((name, int(label) if label.strip() else None))
                except ValueError:
                    raise ParseError(f"bad label {label!r}", line=number, source=str(labels_path))
    else:
        entries = [(p.name, None) for p in sorted(directory.glob("*.xyz"))]
    if not entries:
        raise InvalidArgumentError(f"no shapes in {directory}")
    samples = [
        TrainingSample(cloud=read_xyz(directory / name), label=label) for name, label in entries
    ]
    logger.info(f"Read {len(samples)} shapes from {directory}")
    return samples


# --- tables and images -------------------------------------------------------


def format_matrix_csv(matrix: np.ndarray, header: Optional[Sequence[str]] = None) -> str:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lines = [",".join(header)] if header else []
    lines.extend(",".join(map(repr, row)) for row in matrix.tolist())
    return "\n".join(lines) + "\n"


def write_matrix_csv(
    path: PathLike, matrix: np.ndarray, header: Optional[Sequence[str]] = None
) -> None:
    atomic_write_text(path, format_matrix_csv(matrix, header))


def write_embeddings_csv(path: PathLike, embeddings: np.ndarray) -> None:
    """One row per element, one column per channel, no header."""
    if np.ndim(embeddings) != 2:
        raise InvalidArgumentError(f"embeddings must be a matrix, got shape {np.shape(embeddings)}")
    write_matrix_csv(path, embeddings)


def write_response_csv(path: PathLike, response: ResponseMatrix) -> None:
    """radius column followed by one column per channel."""
    header = ["radius"] + [f"c{j}" for j in range(response.values.shape[1])]
    table = np.column_stack([response.radii, response.values])
    write_matrix_csv(path, table, header)


def format_pgm(image: np.ndarray) -> tuple[str, float, float]:
    """Plain (P2) graymap, min-max scaled to 0..255. A flat image maps to 0."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InvalidArgumentError(f"image must be 2-d, got shape {image.shape}")
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        gray = np.rint((image - lo) / (hi - lo) * 255.0).astype(int)
    else:
        gray = np.zeros(image.shape, dtype=int)
    height, width = image.shape
    body = "\n".join(" ".join(map(str, row)) for row in gray.tolist())
    return f"P2\n{width} {height}\n255\n{body}\n", lo, hi


def write_pgm(path: PathLike, image: np.ndarray) -> tuple[float, float]:
    text, lo, hi = format_pgm(image)
    atomic_write_text(path, text)
    return lo, hi


def write_slices(directory: PathLike, slices: np.ndarray, axis: str) -> list[Path]:
    """Per channel a PGM image and a raw CSV; ranges.txt records each image's min/max."""
    directory = Path(directory)
    written, ranges = [], ["channel,min,max"]
    for c, image in enumerate(slices):
        stem = f"slice_{axis}_c{c:02d}"
        lo, hi = write_pgm(directory / f"{stem}.pgm", image)
        write_matrix_csv(directory / f"{stem}.csv", image)
        ranges.append(f"{c},{lo!r},{hi!r}")
        written.extend([directory / f"{stem}.pgm", directory / f"{stem}.csv"])
    atomic_write_text(directory / "ranges.txt", "\n".join(ranges) + "\n")
    written.append(directory / "ranges.txt")
    logger.info(f"Wrote {len(slices)} {axis}-slices to {directory}")
    return written


# --- run configuration and reports -------------------------------------------


def load_run_config(path: Optional[PathLike] = None, **overrides: Any) -> RunConfig:
    """RunConfig from an optional JSON file, with non-None overrides applied on top."""
    values: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            values = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, line=e.lineno, source=str(path)) from e
        if not isinstance(values, dict):
            raise ParseError("config must be a JSON object", line=1, source=str(path))
    return RunConfig.build(values, **overrides)


def format_train_report(report: TrainReport) -> str:
    """One JSON record per epoch."""
    return "".join(record.model_dump_json() + "\n" for record in report.epochs)


def write_train_report(path: PathLike, report: TrainReport) -> Path:
    """Epoch records as JSONL at `path`; the full report next to it as <stem>.summary.json."""
    path = Path(path)
    atomic_write_text(path, format_train_report(report))
    summary = path.with_name(f"{path.stem}.summary.json")
    atomic_write_text(summary, report.model_dump_json(indent=2) + "\n")
    return summary
