"""On-disk formats for embeddings, landmarks, trial pairs, images and manifests.

Embedding file (``emb-v1``)::

    emb-v1 dim=<D>
    <image_id> <subject_id> <v1> ... <vD>

Landmark file (``lmk-v1``)::

    lmk-v1 n=<K>
    <image_id> <x1> <y1> ... <xK> <yK>

Pair file: CSV ``reference_id,probe_id,label`` with lowercase labels.

Lines starting with ``#`` before the format header are comments; they are
kept on the loaded collection so that a rewrite reproduces the file.
"""

from __future__ import annotations

import csv
import io
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ReferentialError

EMB_MAGIC = "emb-v1"
LMK_MAGIC = "lmk-v1"
DEFAULT_DIM = 512
DEFAULT_LANDMARKS = 68


class Label(str, Enum):
    MATED = "mated"
    NONMATED = "nonmated"
    DOPPELGANGER = "doppelganger"


def format_float(v: float) -> str:
    """Shortest decimal that parses back to the same double."""
    return repr(float(v))


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Embedding:
    image_id: str
    subject_id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise DataFormatError("embedding values must be a flat vector")
        if not np.all(np.isfinite(v)):
            raise DataFormatError(f"non-finite value in embedding {self.image_id!r}")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    image_id: str
    points: np.ndarray  # (K, 2) as (x, y)

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(p)):
            raise DataFormatError(f"non-finite landmark in {self.image_id!r}")
        object.__setattr__(self, "points", _readonly(p))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def check_bounds(self, width: int, height: int) -> None:
        p = self.points
        if p.size and (p[:, 0].min() < 0 or p[:, 1].min() < 0
                       or p[:, 0].max() > width - 1 or p[:, 1].max() > height - 1):
            raise DataFormatError(
                f"landmarks of {self.image_id!r} fall outside a {width}x{height} image")


@dataclass(frozen=True)
class TrialPair:
    reference_id: str
    probe_id: str
    label: Label


class _Table(Sequence):
    """Immutable ordered record collection with retained comment lines."""

    def __init__(self, records: Iterable, comments: Iterable[str] = ()):
        self._records = tuple(records)
        self.comments = tuple(comments)

    def __getitem__(self, i):
        return self._records[i]

    def __len__(self):
        return len(self._records)

    def __repr__(self):
        return f"{type(self).__name__}(n={len(self)})"


class EmbeddingTable(_Table):
    def __init__(self, records, dim: int, comments=()):
        super().__init__(records, comments)
        self.dim = dim
        self._index = {e.image_id: e for e in self._records}

    def by_id(self) -> Mapping[str, Embedding]:
        return self._index


class LandmarkTable(_Table):
    def __init__(self, records, count: int, comments=()):
        super().__init__(records, comments)
        self.count = count
        self._index = {s.image_id: s for s in self._records}

    def by_id(self) -> Mapping[str, LandmarkSet]:
        return self._index


class PairList(_Table):
    pass


def _split_header(lines: list[str], path, magic: str, key: str) -> tuple[list[str], int, int]:
    comments = []
    for i, line in enumerate(lines):
        if line.startswith("#"):
            comments.append(line.rstrip("\r\n"))
            continue
        m = re.fullmatch(rf"{re.escape(magic)}\s+{key}=(\d+)\s*", line)
        if not m:
            raise DataFormatError(f"expected header '{magic} {key}=<N>'", path, i + 1)
        return comments, int(m.group(1)), i + 1
    raise DataFormatError(f"missing '{magic}' header", path)


def _parse_floats(tokens, path, lineno) -> np.ndarray:
    try:
        v = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError(f"non-numeric value ({exc})", path, lineno) from None
    if not np.all(np.isfinite(v)):
        raise DataFormatError("non-finite value", path, lineno)
    return v


def parse_embeddings(text: str, expected_dim: int | None = None, path=None) -> EmbeddingTable:
    lines = text.splitlines()
    comments, dim, start = _split_header(lines, path, EMB_MAGIC, "dim")
    if expected_dim is not None and dim != expected_dim:
        raise DataFormatError(
            f"dimension mismatch: header declares {dim}, expected {expected_dim}", path, start)
    records, seen = [], set()
    for lineno, line in enumerate(lines[start:], start + 1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != dim + 2:
            raise DataFormatError(
                f"dimension mismatch: expected {dim} values, got {max(len(tok) - 2, 0)}",
                path, lineno)
        if tok[0] in seen:
            raise DataFormatError(f"duplicate image_id {tok[0]!r}", path, lineno)
        seen.add(tok[0])
        records.append(Embedding(tok[0], tok[1], _parse_floats(tok[2:], path, lineno)))
    return EmbeddingTable(records, dim, comments)


def load_embeddings(path, expected_dim: int | None = DEFAULT_DIM) -> EmbeddingTable:
    path = Path(path)
    return parse_embeddings(path.read_text(encoding="utf-8"), expected_dim, path)


def format_embeddings(embeddings: Iterable[Embedding], dim: int | None = None,
                      comments: Iterable[str] = ()) -> str:
    embeddings = list(embeddings)
    if dim is None:
        dim = getattr(embeddings, "dim", None) or (embeddings[0].dim if embeddings else 0)
    out = [c if c.startswith("#") else "# " + c for c in comments]
    out.append(f"{EMB_MAGIC} dim={dim}")
    for e in embeddings:
        if e.dim != dim:
            raise DataFormatError(f"embedding {e.image_id!r} has dim {e.dim}, table dim {dim}")
        out.append(" ".join([e.image_id, e.subject_id, *map(format_float, e.values)]))
    return "\n".join(out) + "\n"


def write_embeddings(path, embeddings, dim: int | None = None, comments=None) -> None:
    if comments is None:
        comments = getattr(embeddings, "comments", ())
    if dim is None:
        dim = getattr(embeddings, "dim", None)
    Path(path).write_text(format_embeddings(embeddings, dim, comments), encoding="utf-8")


def parse_landmarks(text: str, expected_count: int | None = DEFAULT_LANDMARKS,
                    path=None) -> LandmarkTable:
    lines = text.splitlines()
    comments, n, start = _split_header(lines, path, LMK_MAGIC, "n")
    if expected_count is not None and n != expected_count:
        raise DataFormatError(
            f"landmark count mismatch: header declares {n}, expected {expected_count}",
            path, start)
    records, seen = [], set()
    for lineno, line in enumerate(lines[start:], start + 1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != 2 * n + 1:
            raise DataFormatError(
                f"landmark count mismatch: expected {n} points, got {(len(tok) - 1) / 2:g}",
                path, lineno)
        if tok[0] in seen:
            raise DataFormatError(f"duplicate image_id {tok[0]!r}", path, lineno)
        seen.add(tok[0])
        records.append(LandmarkSet(tok[0], _parse_floats(tok[1:], path, lineno).reshape(n, 2)))
    return LandmarkTable(records, n, comments)


def load_landmarks(path, expected_count: int | None = DEFAULT_LANDMARKS) -> LandmarkTable:
    path = Path(path)
    return parse_landmarks(path.read_text(encoding="utf-8"), expected_count, path)


def format_landmarks(sets: Iterable[LandmarkSet], count: int | None = None,
                     comments: Iterable[str] = ()) -> str:
    sets = list(sets)
    if count is None:
        count = sets[0].count if sets else 0
    out = [c if c.startswith("#") else "# " + c for c in comments]
    out.append(f"{LMK_MAGIC} n={count}")
    for s in sets:
        if s.count != count:
            raise DataFormatError(f"{s.image_id!r} has {s.count} points, table has {count}")
        out.append(" ".join([s.image_id, *map(format_float, s.points.ravel())]))
    return "\n".join(out) + "\n"


def write_landmarks(path, sets, count: int | None = None, comments=None) -> None:
    if comments is None:
        comments = getattr(sets, "comments", ())
    if count is None:
        count = getattr(sets, "count", None)
    Path(path).write_text(format_landmarks(sets, count, comments), encoding="utf-8")


def parse_pairs(text: str, path=None) -> PairList:
    comments, pairs = [], []
    body = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#"):
            if pairs or body:
                continue
            comments.append(line.rstrip("\r\n"))
        elif line.strip():
            body.append((lineno, line))
    for lineno, line in body:
        row = next(csv.reader([line]))
        if len(row) != 3:
            raise DataFormatError(f"expected 3 fields, got {len(row)}", path, lineno)
        ref, probe, label = (f.strip() for f in row)
        try:
            lab = Label(label)
        except ValueError:
            raise DataFormatError(f"unknown label {label!r}", path, lineno) from None
        if not ref or not probe:
            raise DataFormatError("empty identifier", path, lineno)
        pairs.append(TrialPair(ref, probe, lab))
    return PairList(pairs, comments)


def load_pairs(path) -> PairList:
    path = Path(path)
    return parse_pairs(path.read_text(encoding="utf-8"), path)


def format_pairs(pairs: Iterable[TrialPair], comments: Iterable[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write((c if c.startswith("#") else "# " + c) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    for p in pairs:
        w.writerow([p.reference_id, p.probe_id, p.label.value])
    return buf.getvalue()


def write_pairs(path, pairs, comments=None) -> None:
    if comments is None:
        comments = getattr(pairs, "comments", ())
    Path(path).write_text(format_pairs(pairs, comments), encoding="utf-8")


def check_references(pairs: Iterable[TrialPair], embeddings: Mapping[str, Embedding],
                     check_subjects: bool = True) -> None:
    """Reject pairs whose ids lack embeddings or whose subjects contradict the label."""
    for n, p in enumerate(pairs, 1):
        for ident in (p.reference_id, p.probe_id):
            if ident not in embeddings:
                raise ReferentialError(f"pair {n}: no embedding for id {ident!r}")
        if not check_subjects:
            continue
        same = embeddings[p.reference_id].subject_id == embeddings[p.probe_id].subject_id
        if p.label is Label.MATED and not same:
            raise ReferentialError(f"pair {n}: mated pair with different subjects")
        if p.label is not Label.MATED and same:
            raise ReferentialError(f"pair {n}: {p.label.value} pair of the same subject")


# -- images --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """8-bit RGB image, row-major, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3:
            raise DataFormatError(f"expected an (H, W, 3) RGB array, got shape {p.shape}")
        if p.dtype != np.uint8:
            raise DataFormatError(f"expected uint8 samples, got {p.dtype}")
        object.__setattr__(self, "pixels", _readonly(np.ascontiguousarray(p).copy()))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 3

    def same_size(self, other: "ImageBuffer") -> bool:
        return self.pixels.shape == other.pixels.shape


def load_image(path) -> ImageBuffer:
    from PIL import Image

    path = Path(path)
    with Image.open(path) as im:
        if im.format != "PNG":
            raise DataFormatError(f"only PNG images are supported, got {im.format}", path)
        if im.mode != "RGB":
            raise DataFormatError(f"expected 8-bit RGB, got mode {im.mode}", path)
        return ImageBuffer(np.asarray(im, dtype=np.uint8))


def save_image(path, image: ImageBuffer) -> None:
    from PIL import Image

    Image.fromarray(image.pixels, mode="RGB").save(Path(path), format="PNG")


# -- manifest ------------------------------------------------------------

@dataclass
class DatasetManifest:
    embeddings: list[Path] = field(default_factory=list)
    pairs: list[Path] = field(default_factory=list)
    landmarks: list[Path] = field(default_factory=list)
    dim: int = DEFAULT_DIM
    landmark_count: int = DEFAULT_LANDMARKS

    def load(self) -> tuple[dict[str, Embedding], list[TrialPair]]:
        """Ingest every referenced file and check referential integrity."""
        index: dict[str, Embedding] = {}
        for p in self.embeddings:
            for e in load_embeddings(p, self.dim):
                if e.image_id in index:
                    raise DataFormatError(f"duplicate image_id {e.image_id!r} across files", p)
                index[e.image_id] = e
        pairs = [tp for p in self.pairs for tp in load_pairs(p)]
        check_references(pairs, index)
        return index, pairs


_MANIFEST_LIST_KEYS = {"embeddings", "pairs", "landmarks"}


def load_manifest(path) -> DatasetManifest:
    """Parse ``key=value`` lines; list keys may repeat. Relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    m = DatasetManifest()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise DataFormatError("expected key=value", path, lineno)
        if key in _MANIFEST_LIST_KEYS:
            target = Path(value)
            if not target.is_absolute():
                target = path.parent / target
            if not target.exists():
                raise DataFormatError(f"referenced file {target} does not exist", path, lineno)
            getattr(m, key).append(target)
        elif key in ("dim", "landmark_count"):
            try:
                n = int(value)
            except ValueError:
                raise DataFormatError(f"{key} must be an integer", path, lineno) from None
            if n <= 0:
                raise DataFormatError(f"{key} must be positive", path, lineno)
            setattr(m, key, n)
        else:
            raise DataFormatError(f"unknown manifest key {key!r}", path, lineno)
    return m


def peek_embedding_dim(path) -> int:
    """Dimension declared in an ``emb-v1`` header, without reading the records."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                continue
            m = re.fullmatch(rf"{EMB_MAGIC}\s+dim=(\d+)\s*", line)
            if not m:
                break
            return int(m.group(1))
    raise DataFormatError(f"missing '{EMB_MAGIC}' header", path)
