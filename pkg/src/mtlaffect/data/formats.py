"""On-disk formats: binary feature matrices, label TSVs and the dataset manifest.

Feature file: 16-byte header (``MTLF``, u32 rows, u32 cols, u32 reserved),
then rows*cols little-endian float32 values, row-major.

Label file: UTF-8 TSV with a header row and one row per annotated frame:
``frame_id valence arousal expression AU1 ... AU26`` (12 AU columns).
Missing annotations use sentinels: -5 for valence/arousal, -1 for
expression and AUs.

Manifest: UTF-8 TSV. Lines starting with ``#`` form the header block
(``#mtl-manifest<TAB>1`` and one ``#feature_set<TAB>name<TAB>dim`` per
feature set), followed by a column header and one row per video. Paths are
relative to the manifest's directory.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import LoadError

FEATURE_MAGIC = b"MTLF"
FEATURE_HEADER = struct.Struct("<4sIII")
AU_NAMES = ("AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26")
LABEL_COLUMNS = ("frame_id", "valence", "arousal", "expression", *AU_NAMES)
VA_MISSING = -5.0
EXPR_MISSING = -1
AU_MISSING = -1
MANIFEST_MAGIC = "#mtl-manifest"
MANIFEST_VERSION = "1"


def write_features(path, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
    rows, cols = arr.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FEATURE_HEADER.pack(FEATURE_MAGIC, rows, cols, 0))
        fh.write(arr.tobytes())


def read_features(path, mmap: bool = False) -> np.ndarray:
    """Feature matrix widened to float64 (or a read-only float32 memmap with ``mmap``)."""
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            head = fh.read(FEATURE_HEADER.size)
    except OSError as exc:
        raise LoadError(f"{p}: cannot read feature file ({exc})") from None
    if len(head) != FEATURE_HEADER.size:
        raise LoadError(f"{p}: truncated feature header")
    magic, rows, cols, _ = FEATURE_HEADER.unpack(head)
    if magic != FEATURE_MAGIC:
        raise LoadError(f"{p}: bad feature magic {magic!r}")
    expected = FEATURE_HEADER.size + 4 * rows * cols
    if p.stat().st_size != expected:
        raise LoadError(f"{p}: header says {rows}x{cols} but file has {p.stat().st_size} bytes")
    if rows * cols == 0:
        return np.zeros((rows, cols))
    data = np.memmap(p, dtype="<f4", mode="r", offset=FEATURE_HEADER.size, shape=(rows, cols))
    return data if mmap else np.asarray(data, dtype=np.float64)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_labels(path, frame_ids, valence, arousal, expression, aus) -> None:
    """Write raw label columns (sentinels already applied)."""
    aus = np.asarray(aus)
    lines = ["\t".join(LABEL_COLUMNS)]
    for i in range(len(frame_ids)):
        cells = [str(int(frame_ids[i])), _fmt(valence[i]), _fmt(arousal[i]), str(int(expression[i]))]
        cells += [str(int(a)) for a in aus[i]]
        lines.append("\t".join(cells))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class LabelTable:
    frame_ids: np.ndarray
    valence: np.ndarray
    arousal: np.ndarray
    expression: np.ndarray
    aus: np.ndarray
    masks: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.frame_ids)


def read_labels(path) -> LabelTable:
    """Parse a label TSV; sentinels become masks and are replaced by zeros."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"{p}: cannot read label file ({exc})") from None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or tuple(lines[0].split("\t")) != LABEL_COLUMNS:
        raise LoadError(f"{p}: label header must be {' '.join(LABEL_COLUMNS)}")
    rows = [ln.split("\t") for ln in lines[1:]]
    if any(len(r) != len(LABEL_COLUMNS) for r in rows):
        raise LoadError(f"{p}: every label row needs {len(LABEL_COLUMNS)} columns")
    try:
        tab = np.array(rows, dtype=np.float64).reshape(len(rows), len(LABEL_COLUMNS))
    except ValueError as exc:
        raise LoadError(f"{p}: non-numeric label cell ({exc})") from None
    frame_ids = tab[:, 0].astype(np.int64)
    val, aro, expr, aus = tab[:, 1], tab[:, 2], tab[:, 3], tab[:, 4:]
    masks = {"V": val != VA_MISSING, "A": aro != VA_MISSING, "EXPR": expr != EXPR_MISSING,
             "AU": aus != AU_MISSING}
    for name, col, m in (("valence", val, masks["V"]), ("arousal", aro, masks["A"])):
        if np.any(np.abs(col[m]) > 1.0):
            raise LoadError(f"{p}: {name} outside [-1, 1]")
    e = expr[masks["EXPR"]]
    if np.any((e < 0) | (e > 7) | (e % 1 != 0)):
        raise LoadError(f"{p}: expression labels must be integers in 0..7 or -1")
    if not np.isin(aus[masks["AU"]], (0.0, 1.0)).all():
        raise LoadError(f"{p}: AU labels must be 0, 1 or -1")
    return LabelTable(
        frame_ids=frame_ids,
        valence=np.where(masks["V"], val, 0.0),
        arousal=np.where(masks["A"], aro, 0.0),
        expression=np.where(masks["EXPR"], expr, 0).astype(np.int64),
        aus=np.where(masks["AU"], aus, 0.0),
        masks=masks,
    )


@dataclass
class ManifestEntry:
    video_id: str
    frames: int
    labels: Path
    features: dict[str, Path]


@dataclass
class DatasetManifest:
    path: Path
    feature_sets: list[tuple[str, int]]
    videos: list[ManifestEntry]


def write_manifest(path, feature_sets: list[tuple[str, int]], videos: list[ManifestEntry]) -> None:
    path = Path(path)
    root = path.parent
    names = [n for n, _ in feature_sets]
    lines = [f"{MANIFEST_MAGIC}\t{MANIFEST_VERSION}"]
    lines += [f"#feature_set\t{n}\t{d}" for n, d in feature_sets]
    lines.append("\t".join(["video_id", "frames", "labels", *names]))
    for v in videos:
        rel = [_rel(v.labels, root)] + [_rel(v.features[n], root) for n in names]
        lines.append("\t".join([v.video_id, str(v.frames), *rel]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _rel(p: Path, root: Path) -> str:
    p = Path(p)
    try:
        return p.relative_to(root).as_posix()
    except ValueError:
        return p.as_posix()


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise LoadError(f"{path}: cannot read manifest ({exc})") from None
    if not lines or lines[0].split("\t")[:1] != [MANIFEST_MAGIC]:
        raise LoadError(f"{path}: not a manifest (missing {MANIFEST_MAGIC} line)")
    feature_sets: list[tuple[str, int]] = []
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        parts = lines[i].split("\t")
        if parts[0] == "#feature_set":
            if len(parts) != 3 or not parts[2].isdigit():
                raise LoadError(f"{path}: malformed feature_set line {lines[i]!r}")
            feature_sets.append((parts[1], int(parts[2])))
        i += 1
    if i >= len(lines):
        raise LoadError(f"{path}: missing column header")
    header = lines[i].split("\t")
    names = [n for n, _ in feature_sets]
    if header[:3] != ["video_id", "frames", "labels"] or header[3:] != names:
        raise LoadError(f"{path}: column header {header} does not match feature sets {names}")
    root = path.parent
    videos = []
    seen = set()
    for ln in lines[i + 1:]:
        if not ln.strip():
            continue
        cells = ln.split("\t")
        if len(cells) != len(header):
            raise LoadError(f"{path}: row {cells[:1]} has {len(cells)} cells, expected {len(header)}")
        vid = cells[0]
        if vid in seen:
            raise LoadError(f"{path}: duplicate video id {vid}")
        seen.add(vid)
        try:
            frames = int(cells[1])
        except ValueError:
            raise LoadError(f"{path}: frame count for {vid} is not an integer") from None
        videos.append(ManifestEntry(vid, frames, root / cells[2],
                                    {n: root / c for n, c in zip(names, cells[3:])}))
    return DatasetManifest(path, feature_sets, videos)
