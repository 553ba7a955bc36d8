"""Parsers and writers for OFF, PLY, label files, manifests and metrics JSON.

PLY support covers ascii and binary_little_endian with float positions, an
optional integer "label" property and arbitrary extra scalar properties
(mapped to feature columns).  OFF support includes the fused-header variant
("OFF490 518 0" on one line) found in some CAD collections.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, ParseError, ShapeError, UnsupportedFormatError
from .pointcloud import ClassTaxonomy, Mesh, PointCloud

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


# ---------------------------------------------------------------------------
# OFF
# ---------------------------------------------------------------------------

def parse_off(data) -> Mesh:
    """Parse an ASCII OFF mesh; polygon faces are fan-triangulated."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"OFF file is not valid text: {exc}") from None
    else:
        text = data

    # keep original line numbers for error messages
    numbered = [
        (i + 1, line.split("#", 1)[0].strip())
        for i, line in enumerate(text.splitlines())
    ]
    numbered = [(n, l) for n, l in numbered if l]
    if not numbered:
        raise ParseError("empty OFF file", line=1)

    lineno, first = numbered[0]
    if not first.startswith("OFF"):
        raise ParseError("missing OFF header", line=lineno)
    rest = first[3:].strip()
    cursor = 1
    if rest:
        counts_line, counts_no = rest, lineno
    else:
        if len(numbered) < 2:
            raise ParseError("truncated OFF file: no counts line", line=lineno)
        counts_no, counts_line = numbered[1]
        cursor = 2
    parts = counts_line.split()
    if len(parts) < 2:
        raise ParseError(f"bad counts line {counts_line!r}", line=counts_no)
    try:
        n_verts, n_faces = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"bad counts line {counts_line!r}", line=counts_no) from None

    rows = numbered[cursor:]
    if len(rows) < n_verts + n_faces:
        raise ParseError(
            f"truncated OFF file: expected {n_verts} vertices and {n_faces} faces, "
            f"found {len(rows)} data lines",
            line=numbered[-1][0],
        )
    vertices = np.empty((n_verts, 3), dtype=np.float64)
    for i in range(n_verts):
        no, line = rows[i]
        fields = line.split()
        if len(fields) < 3:
            raise ParseError(f"vertex line needs 3 coordinates, got {line!r}", line=no)
        try:
            vertices[i] = [float(fields[0]), float(fields[1]), float(fields[2])]
        except ValueError:
            raise ParseError(f"non-numeric vertex line {line!r}", line=no) from None

    triangles = []
    for i in range(n_faces):
        no, line = rows[n_verts + i]
        fields = line.split()
        try:
            k = int(fields[0])
            idx = [int(f) for f in fields[1 : 1 + k]]
        except (ValueError, IndexError):
            raise ParseError(f"bad face line {line!r}", line=no) from None
        if len(idx) != k or k < 3:
            raise ParseError(f"face line declares {k} vertices, got {len(idx)}", line=no)
        if min(idx) < 0 or max(idx) >= n_verts:
            raise ParseError(f"face index out of range in {line!r}", line=no)
        for j in range(1, k - 1):
            triangles.append((idx[0], idx[j], idx[j + 1]))
    faces = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    return Mesh(vertices, faces)


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

@dataclass
class _PlyElement:
    name: str
    count: int
    properties: list  # (name, dtype) or ("vertex_indices", "list", count_dt, item_dt)


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing ply/end_header)", line=1)
    end_line = data.index(b"\n", end) + 1
    header = data[:end_line].decode("ascii", errors="replace")
    fmt = None
    elements = []
    for lineno, raw in enumerate(header.splitlines(), start=1):
        parts = raw.strip().split()
        if not parts or parts[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if parts[0] == "format":
            if parts[1] == "binary_big_endian":
                raise UnsupportedFormatError("big-endian PLY is not supported", line=lineno)
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unknown PLY format {parts[1]!r}", line=lineno)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"bad element line {raw!r}", line=lineno)
            elements.append(_PlyElement(parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", line=lineno)
            if parts[1] == "list":
                if len(parts) != 5:
                    raise ParseError(f"bad list property {raw!r}", line=lineno)
                elements[-1].properties.append((parts[4], "list", parts[2], parts[3]))
            else:
                if len(parts) != 3:
                    raise ParseError(f"bad property line {raw!r}", line=lineno)
                if parts[1] not in _PLY_DTYPES:
                    raise ParseError(f"unknown property type {parts[1]!r}", line=lineno)
                elements[-1].properties.append((parts[2], _PLY_DTYPES[parts[1]]))
    if fmt is None:
        raise ParseError("PLY header missing format line", line=1)
    return fmt, elements, data[end_line:]


def _vertex_dtype(elem: _PlyElement) -> np.dtype:
    fields = []
    for prop in elem.properties:
        if prop[1] == "list":
            raise ParseError(f"list property {prop[0]!r} not supported on vertices")
        fields.append((prop[0], "<" + prop[1]))
    return np.dtype(fields)


def _read_ascii_table(body_lines, elem: _PlyElement, offset: int):
    dtype = _vertex_dtype(elem)
    rows = np.empty(elem.count, dtype=dtype)
    names = dtype.names
    for i in range(elem.count):
        fields = body_lines[offset + i].split()
        if len(fields) < len(names):
            raise ParseError(
                f"vertex row has {len(fields)} fields, expected {len(names)}"
            )
        for name, value in zip(names, fields):
            rows[name][i] = float(value)
    return rows, offset + elem.count


def parse_ply(data: bytes):
    """Parse a PLY buffer into a PointCloud, or a Mesh when faces are present."""
    fmt, elements, body = _parse_ply_header(data)
    vertex_elem = next((e for e in elements if e.name == "vertex"), None)
    if vertex_elem is None:
        raise ParseError("PLY has no vertex element")
    face_elem = next((e for e in elements if e.name == "face"), None)

    if fmt == "ascii":
        lines = body.decode("ascii", errors="replace").splitlines()
        lines = [l for l in lines if l.strip()]
        offset = 0
        rows = faces_rows = None
        for elem in elements:
            if elem is vertex_elem:
                rows, offset = _read_ascii_table(lines, elem, offset)
            elif elem is face_elem:
                faces_rows = lines[offset : offset + elem.count]
                offset += elem.count
            else:
                offset += elem.count
        faces = None
        if face_elem is not None:
            tri = []
            for line in faces_rows:
                fields = line.split()
                k = int(fields[0])
                idx = [int(f) for f in fields[1 : 1 + k]]
                for j in range(1, k - 1):
                    tri.append((idx[0], idx[j], idx[j + 1]))
            faces = np.array(tri, dtype=np.int64).reshape(-1, 3)
    else:
        dtype = _vertex_dtype(vertex_elem)
        cursor = 0
        rows = None
        faces = None
        for elem in elements:
            if elem is vertex_elem:
                nbytes = dtype.itemsize * elem.count
                if cursor + nbytes > len(body):
                    raise ParseError("truncated PLY vertex data")
                rows = np.frombuffer(body, dtype=dtype, count=elem.count, offset=cursor)
                cursor += nbytes
            elif elem is face_elem:
                tri = []
                count_dt = np.dtype("<" + _PLY_DTYPES[elem.properties[0][2]])
                item_dt = np.dtype("<" + _PLY_DTYPES[elem.properties[0][3]])
                for _ in range(elem.count):
                    k = int(np.frombuffer(body, count_dt, count=1, offset=cursor)[0])
                    cursor += count_dt.itemsize
                    idx = np.frombuffer(body, item_dt, count=k, offset=cursor)
                    cursor += item_dt.itemsize * k
                    for j in range(1, k - 1):
                        tri.append((int(idx[0]), int(idx[j]), int(idx[j + 1])))
                faces = np.array(tri, dtype=np.int64).reshape(-1, 3)
            else:
                raise UnsupportedFormatError(
                    f"cannot skip unknown binary element {elem.name!r}"
                )

    names = rows.dtype.names
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(f"PLY vertex element missing {axis!r} property")
    positions = np.column_stack(
        [rows["x"].astype(np.float64), rows["y"].astype(np.float64), rows["z"].astype(np.float64)]
    )
    if face_elem is not None:
        return Mesh(positions, faces)

    labels = rows["label"].astype(np.int64) if "label" in names else None
    extras = [n for n in names if n not in ("x", "y", "z", "label")]
    features = (
        np.column_stack([rows[n].astype(np.float64) for n in extras]) if extras else None
    )
    return PointCloud(positions, features=features, labels=labels)


def write_ply(
    pc: PointCloud,
    mode: str = "binary_little_endian",
    feature_names: list | None = None,
    comments: list | None = None,
) -> bytes:
    """Serialize a cloud to PLY bytes.

    Positions are float32, labels int32.  When `feature_names` is given, the
    named feature columns are written as float32 properties in order.
    """
    if mode not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormatError(f"unsupported PLY mode {mode!r}")
    feature_names = list(feature_names or [])
    if feature_names and len(feature_names) != pc.features.shape[1]:
        raise ShapeError(
            f"{len(feature_names)} feature names for {pc.features.shape[1]} columns"
        )
    header = ["ply", f"format {mode} 1.0"]
    for comment in comments or []:
        header.append(f"comment {comment}")
    header.append(f"element vertex {pc.count}")
    header += ["property float x", "property float y", "property float z"]
    for name in feature_names:
        header.append(f"property float {name}")
    header.append("property int label")
    header.append("end_header")

    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    fields += [(n, "<f4") for n in feature_names]
    fields.append(("label", "<i4"))
    rows = np.empty(pc.count, dtype=np.dtype(fields))
    rows["x"], rows["y"], rows["z"] = (pc.positions[:, i].astype(np.float32) for i in range(3))
    for j, name in enumerate(feature_names):
        rows[name] = pc.features[:, j].astype(np.float32)
    rows["label"] = pc.labels.astype(np.int32)

    if mode == "binary_little_endian":
        return ("\n".join(header) + "\n").encode("ascii") + rows.tobytes()
    lines = []
    for row in rows:
        cells = [f"{float(row[n]):.9g}" for n, _ in fields[:-1]]
        cells.append(str(int(row["label"])))
        lines.append(" ".join(cells))
    return ("\n".join(header + lines) + "\n").encode("ascii")


# ---------------------------------------------------------------------------
# labels and metrics
# ---------------------------------------------------------------------------

def read_labels(path) -> np.ndarray:
    """Read newline-delimited non-negative integer labels."""
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                value = int(line)
            except ValueError:
                raise ParseError(f"non-integer label {line!r}", line=lineno) from None
            if value < 0:
                raise ParseError(f"negative label {value}", line=lineno)
            labels.append(value)
    return np.array(labels, dtype=np.int64)


def write_metrics(result) -> bytes:
    """Canonical JSON bytes for an EvalResult (sorted keys, trailing newline)."""
    doc = {
        "amap": result.amap,
        "ap": dict(result.ap),
        "counts": dict(result.counts),
        "config_hash": result.config_hash,
        "seed": result.seed,
        "skipped_classes": list(result.skipped_classes),
    }
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    kind: str  # "model" or "scene"
    class_index: int | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Self-describing dataset index: taxonomy plus model/scene file entries."""

    taxonomy: ClassTaxonomy
    entries: tuple

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise DatasetError("manifest paths must be distinct")
        for e in self.entries:
            if e.kind == "model":
                if e.class_index is None or not (
                    0 <= e.class_index < self.taxonomy.num_classes
                ):
                    raise DatasetError(
                        f"model entry {e.path!r} needs a class index "
                        f"in [0, {self.taxonomy.num_classes})"
                    )
            elif e.kind == "scene":
                if e.class_index is not None:
                    raise DatasetError(f"scene entry {e.path!r} must not carry a class")
            else:
                raise DatasetError(f"unknown entry kind {e.kind!r}")
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def num_models(self) -> int:
        return sum(1 for e in self.entries if e.kind == "model")

    @property
    def num_scenes(self) -> int:
        return sum(1 for e in self.entries if e.kind == "scene")

    def models(self):
        return [e for e in self.entries if e.kind == "model"]

    def scenes(self):
        return [e for e in self.entries if e.kind == "scene"]

    def to_json(self) -> bytes:
        doc = {
            "classes": list(self.taxonomy.names),
            "entries": [
                {"path": e.path, "kind": e.kind}
                | ({"class": e.class_index} if e.kind == "model" else {})
                for e in self.entries
            ],
        }
        return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def parse_manifest(data: bytes) -> DatasetManifest:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}") from None
    try:
        taxonomy = ClassTaxonomy(tuple(doc["classes"]))
        entries = tuple(
            ManifestEntry(e["path"], e["kind"], e.get("class"))
            for e in doc["entries"]
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"manifest missing field: {exc}") from None
    return DatasetManifest(taxonomy, entries)


def load_manifest(path) -> DatasetManifest:
    return parse_manifest(Path(path).read_bytes())


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_bytes(manifest.to_json())


def resolve_data_path(manifest_path, entry_path, data_root=None) -> Path:
    """Entry paths resolve against RTLKIT_DATA_ROOT when set, else the manifest dir."""
    p = Path(entry_path)
    if p.is_absolute():
        return p
    root = Path(data_root) if data_root else Path(manifest_path).parent
    return root / p
