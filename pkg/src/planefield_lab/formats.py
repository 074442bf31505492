"""Text formats: field samples, meshes, jigglings and civilization checkpoints.

All reals are written with 17 significant digits so a read-back is exact.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .triangulation import Jiggling, LatticeComplex

REAL = "%.17g"


def _fmt(values) -> str:
    return " ".join(REAL % v for v in np.asarray(values, dtype=float).ravel())


def _floats(tokens, where: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in tokens], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None


def _ints(tokens, where: str) -> np.ndarray:
    try:
        return np.array([int(t) for t in tokens], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None


def _open_text(target, mode: str):
    if isinstance(target, (str, os.PathLike)):
        return open(target, mode, encoding="utf-8"), True
    return target, False


def _content_lines(source) -> list[tuple[int, str]]:
    fh, own = _open_text(source, "r")
    try:
        text = fh.read()
    finally:
        if own:
            fh.close()
    out = []
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            out.append((no, line))
    return out


def _write(target, text: str) -> None:
    fh, own = _open_text(target, "w")
    try:
        fh.write(text)
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# field samples: "n k" then "x | frame | omega" rows


def format_field_rows(points, frames, omegas) -> list[str]:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    frames = np.asarray(frames, dtype=float).reshape(points.shape[0], -1)
    omegas = np.asarray(omegas, dtype=float).reshape(points.shape[0], -1)
    return [f"{_fmt(x)} | {_fmt(f)} | {_fmt(w)}" for x, f, w in zip(points, frames, omegas)]


def parse_field_row(line: str, n: int, k: int, where: str = "row") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    parts = line.split("|")
    if len(parts) != 3:
        raise FormatError(f"{where}: expected 'x | frame | omega'")
    x = _floats(parts[0].split(), where)
    f = _floats(parts[1].split(), where)
    w = _floats(parts[2].split(), where)
    if x.size != n or f.size != k * n or w.size != n * n:
        raise FormatError(f"{where}: sizes {x.size}, {f.size}, {w.size} do not match n={n}, k={k}")
    return x, f.reshape(k, n), w.reshape(n, n)


def write_field_samples(target, points, frames, omegas) -> None:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    frames = np.asarray(frames, dtype=float)
    n = points.shape[1]
    k = frames.shape[-2] if frames.ndim >= 2 else 0
    lines = [f"{n} {k}"] + format_field_rows(points, frames, omegas)
    _write(target, "\n".join(lines) + "\n")


def read_field_samples(source) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lines = _content_lines(source)
    if not lines:
        raise FormatError("empty field-sample file")
    head = lines[0][1].split()
    if len(head) != 2:
        raise FormatError("header must be 'n k'")
    n, k = (int(v) for v in _ints(head, "header"))
    if n < 1 or not 0 <= k <= n:
        raise FormatError(f"bad header n={n} k={k}")
    xs, fs, ws = [], [], []
    for no, line in lines[1:]:
        x, f, w = parse_field_row(line, n, k, f"line {no}")
        xs.append(x)
        fs.append(f)
        ws.append(w)
    return (np.array(xs).reshape(-1, n), np.array(fs).reshape(-1, k, n), np.array(ws).reshape(-1, n, n))


def sample_pair(pair, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    frames, mats = pair.values(pts)
    return pts, frames, mats


# ---------------------------------------------------------------------------
# meshes and jigglings


def write_mesh(target, complex_: LatticeComplex) -> None:
    lines = [f"DIM {complex_.n}", f"VERTS {complex_.num_vertices}"]
    lines += [_fmt(v) for v in complex_.vertices]
    lines.append(f"CELLS {complex_.num_simplices}")
    lines += [" ".join(str(int(i)) for i in s) for s in complex_.simplices]
    _write(target, "\n".join(lines) + "\n")


def _expect(lines, pos: int, key: str) -> int:
    if pos >= len(lines):
        raise FormatError(f"missing {key} section")
    no, line = lines[pos]
    tok = line.split()
    if len(tok) != 2 or tok[0] != key:
        raise FormatError(f"line {no}: expected '{key} <int>'")
    return int(_ints(tok[1:], f"line {no}")[0])


def read_mesh(source) -> LatticeComplex:
    lines = _content_lines(source)
    n = _expect(lines, 0, "DIM")
    m = _expect(lines, 1, "VERTS")
    if len(lines) < 2 + m:
        raise FormatError("truncated VERTS section")
    verts = np.array([_floats(l.split(), f"line {no}") for no, l in lines[2:2 + m]]).reshape(m, n)
    c = _expect(lines, 2 + m, "CELLS")
    rows = lines[3 + m:3 + m + c]
    if len(rows) != c:
        raise FormatError("truncated CELLS section")
    cells = np.array([_ints(l.split(), f"line {no}") for no, l in rows], dtype=np.int64).reshape(c, n + 1)
    if cells.size and (cells.min() < 0 or cells.max() >= m):
        raise FormatError("cell refers to a missing vertex")
    pts = verts[cells]
    det = np.linalg.det(pts[:, 1:] - pts[:, :1]) if c else np.zeros(0)
    return LatticeComplex(n, verts, cells, np.where(det < 0, -1, 1).astype(np.int64))


def write_jiggling(target, jig: Jiggling) -> None:
    lines = [f"EPSILON {REAL % jig.epsilon}", f"SEED {'-' if jig.seed is None else int(jig.seed)}",
             f"RESAMPLES {jig.resamples}"]
    lines += [f"{i} {_fmt(d)}" for i, d in enumerate(jig.displacement)]
    _write(target, "\n".join(lines) + "\n")


def read_jiggling(source) -> Jiggling:
    lines = _content_lines(source)
    head = {}
    body = []
    for no, line in lines:
        tok = line.split()
        if tok[0] in ("EPSILON", "SEED", "RESAMPLES"):
            head[tok[0]] = tok[1]
        else:
            body.append((no, tok))
    if "EPSILON" not in head:
        raise FormatError("missing EPSILON line")
    idx = np.array([int(t[0]) for _, t in body], dtype=np.int64)
    if idx.size and not np.array_equal(idx, np.arange(idx.size)):
        raise FormatError("displacement rows must list vertices 0..m-1 in order")
    disp = np.array([_floats(t[1:], f"line {no}") for no, t in body])
    seed = head.get("SEED", "-")
    return Jiggling(disp.reshape(idx.size, -1) if idx.size else np.zeros((0, 0)), float(head["EPSILON"]),
                    None if seed == "-" else int(seed), int(head.get("RESAMPLES", 0)))


# ---------------------------------------------------------------------------
# civilization checkpoints


@dataclass
class Checkpoint:
    """Everything needed to replay a civilization run, plus fiber samples to check the replay."""
    mesh: str
    pair: str
    rate: float
    top_ids: tuple
    top_points: np.ndarray
    seed: int
    j: int
    deltas: list
    etas: list
    fibers: list = field(default_factory=list)   # (dim, simplex ids, x, frame, omega)

    @property
    def n(self) -> int:
        return self.top_points.shape[1]


def write_checkpoint(target, ck: Checkpoint) -> None:
    n = ck.n
    k = ck.fibers[0][3].shape[0] if ck.fibers else 0
    lines = ["PLANEFIELD-STATE 1", f"MESH {ck.mesh}", f"PAIR {ck.pair} {REAL % ck.rate}",
             f"DIM {n}", "TOP " + " ".join(str(int(i)) for i in ck.top_ids)]
    lines += ["TOPPOINT " + _fmt(p) for p in ck.top_points]
    lines += [f"SEED {ck.seed}", f"J {ck.j}", "DELTAS " + _fmt(ck.deltas), "ETAS " + _fmt(ck.etas),
              f"FIBERS {len(ck.fibers)} {k}"]
    for dim, ids, x, f, w in ck.fibers:
        lines.append(f"{dim} {' '.join(str(int(i)) for i in ids)} : " + format_field_rows(x, f, w)[0])
    _write(target, "\n".join(lines) + "\n")


def read_checkpoint(source) -> Checkpoint:
    lines = _content_lines(source)
    if not lines or lines[0][1].split() != ["PLANEFIELD-STATE", "1"]:
        raise FormatError("not a version-1 state checkpoint")
    head: dict = {}
    top_pts = []
    fibers = []
    fiber_k = None
    n = None
    for no, line in lines[1:]:
        tok = line.split()
        key = tok[0]
        if fiber_k is not None and ":" in line:
            left, right = line.split(":", 1)
            lt = _ints(left.split(), f"line {no}")
            x, f, w = parse_field_row(right, n, fiber_k, f"line {no}")
            fibers.append((int(lt[0]), tuple(int(i) for i in lt[1:]), x, f, w))
        elif key == "TOPPOINT":
            top_pts.append(_floats(tok[1:], f"line {no}"))
        elif key == "FIBERS":
            if n is None:
                raise FormatError("FIBERS before DIM")
            fiber_k = int(tok[2]) if len(tok) > 2 else 0
            head["FIBERS"] = int(tok[1])
        else:
            head[key] = tok[1:]
            if key == "DIM":
                n = int(tok[1])
    for key in ("MESH", "PAIR", "DIM", "TOP", "SEED", "J", "DELTAS", "ETAS"):
        if key not in head:
            raise FormatError(f"missing {key} line")
    if head.get("FIBERS", 0) != len(fibers):
        raise FormatError(f"expected {head.get('FIBERS', 0)} fiber rows, found {len(fibers)}")
    pts = np.array(top_pts).reshape(-1, n)
    ids = tuple(int(i) for i in head["TOP"])
    if len(ids) != pts.shape[0]:
        raise FormatError("TOP ids and TOPPOINT rows disagree")
    pair = head["PAIR"]
    return Checkpoint(" ".join(head["MESH"]), pair[0], float(pair[1]) if len(pair) > 1 else 0.05, ids, pts,
                      int(head["SEED"][0]), int(head["J"][0]),
                      [float(v) for v in head["DELTAS"]], [float(v) for v in head["ETAS"]], fibers)


def dumps(writer, obj) -> str:
    buf = io.StringIO()
    writer(buf, obj)
    return buf.getvalue()
