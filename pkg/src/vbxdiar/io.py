"""File formats and sub-segmentation.

Embedding files (one recording per file, id taken from the file stem)::

    VBXEMB 1 <R>
    <onset> <offset> <v1> ... <vR>          # one line per embedding

or the binary twin: the ASCII line ``VBXEMBB 1 <R>\\n`` followed by
``2 + R`` little-endian float64 values per embedding.

PLDA model files::

    VBXPLDA 1 <D>
    <mean, D floats>
    <D lines of within-speaker covariance rows>
    <D lines of between-speaker covariance rows>

Space files::

    VBXSPACE 1 <D> <R>
    <mean, D floats>
    <R lines: phi_r followed by column r of the projection (D floats)>

Model floats are written with 17 significant digits; embedding values use
the shortest round-trip representation.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InputError
from .plda import DiarSpace, PLDAModel
from .scoring import Segment, Timeline, WordRecord, to_seconds, to_ticks

EMB_MAGIC = "VBXEMB"
EMB_BIN_MAGIC = "VBXEMBB"
PLDA_MAGIC = "VBXPLDA"
SPACE_MAGIC = "VBXSPACE"
FORMAT_VERSION = "1"

# RTTM record types that may appear in community files but carry no speaker turns
_RTTM_IGNORED = {
    "SPKR-INFO", "SEGMENT", "NOSCORE", "NO_RT_METADATA", "LEXEME", "NON-LEX",
    "NON-SPEECH", "FILLER", "EDITED", "IP", "SU", "CB", "A/P",
}


def _fmt17(v):
    return format(float(v), ".17g")


def _fmt_row(values):
    return " ".join(_fmt17(v) for v in values)


def _floats(tokens, path, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise InputError(f"{path}:{lineno}: {exc}") from None


@dataclass
class EmbeddingSequence:
    recording_id: str
    onsets: np.ndarray
    offsets: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.onsets = np.asarray(self.onsets, dtype=np.float64).reshape(-1)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        n = self.onsets.shape[0]
        if self.vectors.ndim != 2 or self.vectors.shape[0] != n or self.offsets.shape[0] != n:
            raise InputError(
                f"{self.recording_id}: inconsistent shapes onsets={self.onsets.shape} "
                f"offsets={self.offsets.shape} vectors={self.vectors.shape}"
            )
        if n and np.any(np.diff(self.onsets) <= 0):
            bad = int(np.flatnonzero(np.diff(self.onsets) <= 0)[0]) + 1
            raise InputError(f"{self.recording_id}: onsets not strictly increasing at row {bad}")
        if n and np.any(self.offsets <= self.onsets):
            bad = int(np.flatnonzero(self.offsets <= self.onsets)[0])
            raise InputError(f"{self.recording_id}: offset <= onset at row {bad}")

    def __len__(self):
        return self.onsets.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def write_embeddings(path, seq, binary=False):
    path = Path(path)
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"{EMB_BIN_MAGIC} {FORMAT_VERSION} {seq.dim}\n".encode("ascii"))
            block = np.column_stack([seq.onsets, seq.offsets, seq.vectors]).astype("<f8")
            fh.write(block.tobytes())
        return
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{EMB_MAGIC} {FORMAT_VERSION} {seq.dim}\n")
        for a, b, v in zip(seq.onsets, seq.offsets, seq.vectors):
            fh.write(" ".join(repr(float(t)) for t in (a, b, *v)) + "\n")


def _parse_header(line, magic, n_ints, path):
    parts = line.split()
    if len(parts) != 2 + n_ints or parts[0] != magic:
        raise InputError(f"{path}:1: expected header '{magic} {FORMAT_VERSION} ...', got {line.strip()!r}")
    if parts[1] != FORMAT_VERSION:
        raise InputError(f"{path}:1: unsupported format version {parts[1]}")
    try:
        values = [int(p) for p in parts[2:]]
    except ValueError:
        raise InputError(f"{path}:1: malformed header {line.strip()!r}") from None
    if any(v < 1 for v in values):
        raise InputError(f"{path}:1: dimensions must be positive")
    return values


def read_embeddings(path, recording_id=None):
    path = Path(path)
    rec = recording_id or path.name.split(".")[0]
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii", errors="replace")
        if first.startswith(EMB_BIN_MAGIC + " "):
            (dim,) = _parse_header(first, EMB_BIN_MAGIC, 1, path)
            raw = fh.read()
            width = 8 * (2 + dim)
            if len(raw) % width:
                raise InputError(f"{path}: binary payload of {len(raw)} bytes is not a multiple of {width}")
            block = np.frombuffer(raw, dtype="<f8").reshape(-1, 2 + dim).astype(np.float64)
            return EmbeddingSequence(rec, block[:, 0], block[:, 1], block[:, 2:])
        (dim,) = _parse_header(first, EMB_MAGIC, 1, path)
        rows = []
        for lineno, raw in enumerate(fh, start=2):
            line = raw.decode("ascii", errors="replace")
            if not line.strip():
                continue
            vals = _floats(line.split(), path, lineno)
            if len(vals) != dim + 2:
                raise InputError(
                    f"{path}:{lineno}: expected {dim} values after onset/offset, got {len(vals) - 2}"
                )
            if rows and vals[0] <= rows[-1][0]:
                raise InputError(f"{path}:{lineno}: onsets must be strictly increasing")
            if vals[1] <= vals[0]:
                raise InputError(f"{path}:{lineno}: offset must exceed onset")
            rows.append(vals)
    block = np.array(rows, dtype=np.float64).reshape(-1, dim + 2)
    return EmbeddingSequence(rec, block[:, 0], block[:, 1], block[:, 2:])


def read_vad(path):
    """Read ``onset offset speech`` lines into a sorted list of intervals."""
    intervals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[2] != "speech":
                raise InputError(f"{path}:{lineno}: expected 'onset offset speech'")
            a, b = _floats(parts[:2], path, lineno)
            if not b > a or a < 0:
                raise InputError(f"{path}:{lineno}: interval must have 0 <= onset < offset")
            if intervals and a < intervals[-1][1]:
                raise InputError(f"{path}:{lineno}: intervals must be sorted and non-overlapping")
            intervals.append((a, b))
    return intervals


def subsegment(vad, window=1.5, shift=0.25, min_len=0.1):
    """Split speech intervals into overlapping windows.

    Intervals shorter than ``min_len`` are dropped.  An interval no longer
    than ``window`` yields itself.  Longer intervals yield windows starting
    at ``onset + k * shift`` and ending at ``min(start + window, offset)``,
    stopping after the first window that reaches the interval end.
    """
    win, hop, min_t = to_ticks(window), to_ticks(shift), to_ticks(min_len)
    if win <= 0 or hop <= 0:
        raise InputError("window and shift must be positive")
    out = []
    for onset, offset in vad:
        a, b = to_ticks(onset), to_ticks(offset)
        if b - a < min_t:
            continue
        if b - a <= win:
            out.append((to_seconds(a), to_seconds(b)))
            continue
        k = 0
        while True:
            start = a + k * hop
            end = min(start + win, b)
            out.append((to_seconds(start), to_seconds(end)))
            if end >= b:
                break
            k += 1
    return out


def format_rttm(timelines):
    lines = []
    for tl in timelines:
        for s in tl:
            lines.append(
                f"SPEAKER {tl.recording_id} 1 {s.onset:.3f} {s.duration:.3f} "
                f"<NA> <NA> {s.speaker} <NA> <NA>\n"
            )
    return "".join(lines)


def write_rttm(path, timelines):
    if isinstance(timelines, Timeline):
        timelines = [timelines]
    with open(path, "w", newline="\n") as fh:
        fh.write(format_rttm(timelines))


def read_rttm(path):
    """Return ``{recording_id: Timeline}`` from an RTTM file."""
    per_rec = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith(";;"):
                continue
            kind = parts[0]
            if kind in _RTTM_IGNORED:
                continue
            if kind != "SPEAKER":
                raise InputError(f"{path}:{lineno}: unknown RTTM type {kind!r}")
            if len(parts) < 9:
                raise InputError(f"{path}:{lineno}: SPEAKER line needs at least 9 fields")
            onset, dur = _floats(parts[3:5], path, lineno)
            if dur <= 0:
                # zero-length turns occur in some community references and carry no speech
                continue
            try:
                seg = Segment(onset, dur, parts[7])
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            per_rec.setdefault(parts[1], []).append(seg)
    return {rec: Timeline(rec, segs) for rec, segs in per_rec.items()}


def write_plda(path, model):
    d = model.dim
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{PLDA_MAGIC} {FORMAT_VERSION} {d}\n")
        fh.write(_fmt_row(model.mean) + "\n")
        for row in model.within_cov:
            fh.write(_fmt_row(row) + "\n")
        for row in model.between_cov:
            fh.write(_fmt_row(row) + "\n")


def _read_rows(fh, n_rows, n_cols, path, first_lineno):
    rows = []
    for i in range(n_rows):
        line = fh.readline()
        lineno = first_lineno + i
        if not line:
            raise InputError(f"{path}:{lineno}: unexpected end of file")
        vals = _floats(line.split(), path, lineno)
        if len(vals) != n_cols:
            raise InputError(f"{path}:{lineno}: expected {n_cols} values, got {len(vals)}")
        rows.append(vals)
    return np.array(rows, dtype=np.float64)


def read_plda(path):
    with open(path) as fh:
        (d,) = _parse_header(fh.readline(), PLDA_MAGIC, 1, path)
        mean = _read_rows(fh, 1, d, path, 2)[0]
        within = _read_rows(fh, d, d, path, 3)
        between = _read_rows(fh, d, d, path, 3 + d)
    return PLDAModel(mean, within, between)


def write_space(path, space):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{SPACE_MAGIC} {FORMAT_VERSION} {space.source_dim} {space.dim}\n")
        fh.write(_fmt_row(space.mean) + "\n")
        for r in range(space.dim):
            fh.write(_fmt_row([space.phi[r], *space.projection[:, r]]) + "\n")


def read_space(path):
    with open(path) as fh:
        d, r = _parse_header(fh.readline(), SPACE_MAGIC, 2, path)
        if r > d:
            raise InputError(f"{path}:1: R={r} exceeds D={d}")
        mean = _read_rows(fh, 1, d, path, 2)[0]
        block = _read_rows(fh, r, d + 1, path, 3)
    return DiarSpace(mean, block[:, 1:].T.copy(), block[:, 0].copy())


def read_labeled_embeddings(path):
    """Training data for PLDA: one ``<speaker> <v1> ... <vD>`` line per vector."""
    ids, rows = [], []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            vals = _floats(parts[1:], path, lineno)
            if dim is None:
                dim = len(vals)
            if len(vals) != dim or dim == 0:
                raise InputError(f"{path}:{lineno}: expected {dim} values, got {len(vals)}")
            ids.append(parts[0])
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no training vectors")
    return np.array(rows, dtype=np.float64), np.array(ids)


def read_words(path):
    """Word transcripts: ``<recording> <speaker> <start|-> <end|-> <word|vocal_sound>``.

    Returns ``{recording_id: [WordRecord, ...]}`` in file order.
    """
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 5:
                raise InputError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            rec, spk, start, end, kind = parts
            times = [None if t == "-" else t for t in (start, end)]
            try:
                a, b = (None if t is None else float(t) for t in times)
                word = WordRecord(spk, a, b, kind, rec)
            except (ValueError, InputError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            out.setdefault(rec, []).append(word)
    return out


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            cfg[key.replace("-", "_")] = value
    return cfg
