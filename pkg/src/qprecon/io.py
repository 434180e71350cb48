"""File formats: Matrix Market observations, dense matrices, configs, instances.

Floats are written with Python's shortest round-trip ``repr`` so every
text format reads back bit-identically.
"""

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .geometry import FactoredPoint
from .linalg import SparseCoord
from .problems import EntrySampling, FullObservation, GaussianSensing, ProblemInstance

__all__ = [
    "FormatError",
    "write_matrix_market",
    "read_matrix_market",
    "write_dense_csv",
    "read_dense_csv",
    "write_dense_binary",
    "read_dense_binary",
    "write_dense",
    "read_dense",
    "read_config",
    "save_instance",
    "load_instance",
]

MM_HEADER = "%%MatrixMarket matrix coordinate real general"
DENSE_MAGIC = b"QPDENSE1"
# dense matrices with more entries than this go to the binary format
CSV_LIMIT = 100_000


class FormatError(ValueError):
    """A malformed input file; the message carries the path and line."""


def write_matrix_market(path, mat):
    """Write a :class:`SparseCoord` as coordinate real general, 1-based."""
    lines = [MM_HEADER, f"{mat.rows} {mat.cols} {mat.nnz}"]
    lines += [
        f"{i + 1} {j + 1} {v!r}"
        for i, j, v in zip(mat.row_idx.tolist(), mat.col_idx.tolist(), mat.values.tolist())
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_market(path):
    """Read a coordinate real general Matrix Market file.

    Raises
    ------
    FormatError
        On a bad header, an out-of-range (e.g. 0-based) index, a duplicate
        entry, or a wrong entry count. Messages give the line number.
    """
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip().lower() != MM_HEADER.lower():
        raise FormatError(f"{path}:1: expected header {MM_HEADER!r}")
    pos = 1
    while pos < len(lines) and (lines[pos].startswith("%") or not lines[pos].strip()):
        pos += 1
    if pos >= len(lines):
        raise FormatError(f"{path}: missing size line")
    try:
        rows, cols, nnz = (int(t) for t in lines[pos].split())
    except ValueError:
        raise FormatError(f"{path}:{pos + 1}: bad size line {lines[pos]!r}") from None
    ii, jj, vv = [], [], []
    seen = set()
    for lineno, line in enumerate(lines[pos + 1 :], start=pos + 2):
        if not line.strip() or line.startswith("%"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'i j value', got {line!r}")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: cannot parse {line!r}") from None
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise FormatError(
                f"{path}:{lineno}: index ({i}, {j}) outside 1..{rows} x 1..{cols} "
                "(indices are 1-based)"
            )
        if (i, j) in seen:
            raise FormatError(f"{path}:{lineno}: duplicate entry ({i}, {j})")
        seen.add((i, j))
        ii.append(i - 1)
        jj.append(j - 1)
        vv.append(v)
    if len(vv) != nnz:
        raise FormatError(f"{path}: header announces {nnz} entries, found {len(vv)}")
    return SparseCoord(rows, cols, np.array(ii, dtype=np.int64), np.array(jj, dtype=np.int64), np.array(vv))


def write_dense_csv(path, A):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    Path(path).write_text("".join(",".join(repr(v) for v in row) + "\n" for row in A.tolist()))


def read_dense_csv(path):
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(t) for t in line.split(",")])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: cannot parse {line!r}") from None
        if len(rows[-1]) != len(rows[0]):
            raise FormatError(f"{path}:{lineno}: ragged row")
    if not rows:
        raise FormatError(f"{path}: empty matrix file")
    return np.array(rows)


def write_dense_binary(path, A):
    """16-byte header (8-byte magic, uint32 rows, uint32 cols), then
    little-endian float64 entries in row-major order."""
    A = np.atleast_2d(np.asarray(A, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(DENSE_MAGIC + struct.pack("<II", *A.shape))
        fh.write(np.ascontiguousarray(A).tobytes())


def read_dense_binary(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != DENSE_MAGIC:
        raise FormatError(f"{path}: not a dense binary matrix (bad magic)")
    rows, cols = struct.unpack("<II", data[8:16])
    if len(data) != 16 + 8 * rows * cols:
        raise FormatError(f"{path}: payload size does not match {rows}x{cols}")
    return np.frombuffer(data, dtype="<f8", offset=16).reshape(rows, cols).astype(np.float64)


def write_dense(path_stem, A):
    """Write CSV for small matrices, binary for large; return the file name."""
    A = np.asarray(A)
    path = Path(path_stem)
    if A.size <= CSV_LIMIT:
        path = path.with_suffix(".csv")
        write_dense_csv(path, A)
    else:
        path = path.with_suffix(".bin")
        write_dense_binary(path, A)
    return path.name


def read_dense(path):
    path = Path(path)
    return read_dense_binary(path) if path.suffix == ".bin" else read_dense_csv(path)


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Returns a dict of strings."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"{path}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_instance(inst, directory, spec=None):
    """Write an instance to ``directory`` and return the manifest dict.

    Files: ``omega.mtx`` (observed entries) or ``phi`` + ``b`` (sensing),
    ``gstar``/``hstar`` ground-truth factors, ``test.mtx`` held-out entries,
    and ``manifest.json`` with dimensions, generator settings and SHA-256
    digests of every file. No timestamps, so identical inputs give
    identical bytes.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    m, n = inst.shape
    files = {}
    op = inst.op
    if isinstance(op, EntrySampling):
        write_matrix_market(d / "omega.mtx", SparseCoord(m, n, op.rows, op.cols, inst.observed))
        files["omega"] = "omega.mtx"
    elif isinstance(op, GaussianSensing):
        files["phi"] = write_dense(d / "phi", op.phi)
        files["b"] = write_dense(d / "b", inst.observed[:, None])
    if inst.mstar is not None:
        files["gstar"] = write_dense(d / "gstar", inst.mstar.G)
        files["hstar"] = write_dense(d / "hstar", inst.mstar.H)
    if inst.test is not None:
        rows, cols, vals = inst.test
        write_matrix_market(d / "test.mtx", SparseCoord(m, n, rows, cols, vals))
        files["test"] = "test.mtx"
    manifest = {
        "format": "qprecon-instance/1",
        "operator": op.kind,
        "m": m,
        "n": n,
        "k": inst.rank,
        "files": files,
        "sha256": {name: _sha256(d / fname) for name, fname in sorted(files.items())},
    }
    if isinstance(op, EntrySampling):
        manifest["omega_size"] = int(op.size)
        manifest["p"] = op.p
    if isinstance(op, GaussianSensing):
        manifest["d"] = op.d
    if spec is not None:
        manifest["generator"] = {k: getattr(spec, k) for k in spec.__dataclass_fields__}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_instance(directory):
    """Inverse of :func:`save_instance`."""
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"no manifest.json in {d}")
    man = json.loads(mpath.read_text())
    m, n, k = man["m"], man["n"], man["k"]
    files = man["files"]
    mstar = None
    if "gstar" in files:
        mstar = FactoredPoint(read_dense(d / files["gstar"]), read_dense(d / files["hstar"]))
    kind = man["operator"]
    observed = None
    if kind == "entry_sampling":
        om = read_matrix_market(d / files["omega"])
        op = EntrySampling(om.row_idx, om.col_idx, (m, n))
        order = np.argsort(om.row_idx * n + om.col_idx, kind="stable")
        observed = om.values[order]
    elif kind == "gaussian_sensing":
        op = GaussianSensing(read_dense(d / files["phi"]), (m, n))
        observed = read_dense(d / files["b"]).ravel()
    elif kind == "full_observation":
        op = FullObservation((m, n))
    else:
        raise FormatError(f"{mpath}: unknown operator kind {kind!r}")
    test = None
    if "test" in files:
        t = read_matrix_market(d / files["test"])
        test = (t.row_idx, t.col_idx, t.values)
    return ProblemInstance(op, mstar=mstar, rank=k, observed=observed, test=test)


def default_output_dir():
    return Path(os.environ.get("QPRECON_OUTPUT_DIR", "qprecon-out"))
