"""Timelines, DER/JER scoring and reference construction from word transcripts.

Times are converted to integer ticks of 100 ns before any arithmetic so
that boundaries compare exactly.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import InputError, UndefinedMetricError

TICKS_PER_SECOND = 10_000_000


def to_ticks(seconds):
    return int(round(float(seconds) * TICKS_PER_SECOND))


def to_seconds(ticks):
    return ticks / TICKS_PER_SECOND


@dataclass(frozen=True, order=True)
class Segment:
    onset: float
    duration: float
    speaker: str
    recording_id: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.onset) and np.isfinite(self.duration)):
            raise InputError("segment times must be finite")
        if self.onset < 0:
            raise InputError(f"negative onset {self.onset}")
        if self.duration <= 0:
            raise InputError(f"segment duration must be positive, got {self.duration}")

    @property
    def offset(self):
        return self.onset + self.duration


class Timeline:
    """Speaker-labelled segments of one recording, kept sorted by onset."""

    def __init__(self, recording_id, segments=()):
        self.recording_id = recording_id
        segs = []
        for seg in segments:
            if seg.recording_id not in ("", recording_id):
                raise InputError(
                    f"segment of {seg.recording_id!r} added to timeline {recording_id!r}"
                )
            segs.append(Segment(seg.onset, seg.duration, seg.speaker, recording_id))
        self.segments = tuple(sorted(segs, key=lambda s: (s.onset, s.speaker, s.duration)))

    @classmethod
    def from_intervals(cls, recording_id, intervals):
        """Build from ``(onset, offset, speaker)`` triples."""
        return cls(recording_id, [Segment(a, b - a, spk) for a, b, spk in intervals])

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __eq__(self, other):
        return (isinstance(other, Timeline) and self.recording_id == other.recording_id
                and self.segments == other.segments)

    def __repr__(self):
        return f"Timeline({self.recording_id!r}, {len(self.segments)} segments)"

    @property
    def speakers(self):
        return sorted({s.speaker for s in self.segments})

    def speaker_ticks(self):
        """Per-speaker activity as merged, disjoint ``[start, end)`` tick intervals."""
        raw = {}
        for seg in self.segments:
            raw.setdefault(seg.speaker, []).append((to_ticks(seg.onset), to_ticks(seg.offset)))
        return {spk: _merge(iv) for spk, iv in sorted(raw.items())}

    def boundaries(self):
        """All segment onsets and offsets, in ticks."""
        return sorted({t for s in self.segments for t in (to_ticks(s.onset), to_ticks(s.offset))})

    def normalized(self):
        """Same timeline with overlapping or touching same-speaker segments merged."""
        out = []
        for spk, ivs in self.speaker_ticks().items():
            out.extend(Segment(to_seconds(a), to_seconds(b - a), spk) for a, b in ivs)
        return Timeline(self.recording_id, out)


def _merge(intervals):
    merged = []
    for a, b in sorted(intervals):
        if b <= a:
            continue
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [tuple(iv) for iv in merged]


def _overlap(a, b):
    """Total tick overlap of two disjoint sorted interval lists."""
    i = j = total = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            total += hi - lo
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return total


def _length(intervals):
    return sum(b - a for a, b in intervals)


@dataclass(frozen=True)
class ScoreSetup:
    collar: float = 0.0
    score_overlap: bool = True

    def __post_init__(self):
        if self.collar < 0:
            raise InputError("collar must be non-negative")

    @classmethod
    def named(cls, name):
        try:
            return SETUPS[name]
        except KeyError:
            raise InputError(f"unknown setup {name!r}; choose from {sorted(SETUPS)}") from None


SETUPS = {
    "forgiving": ScoreSetup(0.25, False),
    "fair": ScoreSetup(0.25, True),
    "full": ScoreSetup(0.0, True),
}


def max_weight_assignment(weights):
    """One-to-one pairing of rows and columns maximizing total weight.

    Pairs with zero weight are dropped, so unmatched rows/columns are allowed.
    Returns ``(row, col)`` index pairs sorted by row.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        return []
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if weights[r, c] > 0]


def optimal_mapping(ref, hyp):
    """Map reference speakers to hypothesis speakers maximizing overlapped time.

    Returns a dict ``{ref_speaker: hyp_speaker}``; speakers without any
    overlap with their would-be partner stay unmapped.
    """
    ref_act, hyp_act = ref.speaker_ticks(), hyp.speaker_ticks()
    ref_spk, hyp_spk = list(ref_act), list(hyp_act)
    weights = np.array(
        [[_overlap(ref_act[r], hyp_act[h]) for h in hyp_spk] for r in ref_spk], dtype=np.float64
    ).reshape(len(ref_spk), len(hyp_spk))
    return {ref_spk[i]: hyp_spk[j] for i, j in max_weight_assignment(weights)}


@dataclass(frozen=True)
class DERResult:
    """Error components in seconds over the scored region."""

    miss: float
    false_alarm: float
    speaker_error: float
    total_speech: float

    @property
    def der(self):
        errors = self.miss + self.false_alarm + self.speaker_error
        if self.total_speech == 0:
            return 0.0 if errors == 0 else float("inf")
        return errors / self.total_speech

    def rate(self, component):
        if self.total_speech == 0:
            return 0.0
        return getattr(self, component) / self.total_speech

    def __add__(self, other):
        return DERResult(self.miss + other.miss, self.false_alarm + other.false_alarm,
                         self.speaker_error + other.speaker_error,
                         self.total_speech + other.total_speech)


def _check_same_recording(ref, hyp):
    if ref.recording_id != hyp.recording_id:
        raise InputError(
            f"recording mismatch: reference {ref.recording_id!r}, hypothesis {hyp.recording_id!r}"
        )


def _active_at(intervals, points):
    if not intervals:
        return np.zeros(len(points), dtype=bool)
    starts = np.array([a for a, _ in intervals], dtype=np.int64)
    ends = np.array([b for _, b in intervals], dtype=np.int64)
    idx = np.searchsorted(starts, points, side="right") - 1
    ok = idx >= 0
    out = np.zeros(len(points), dtype=bool)
    out[ok] = points[ok] < ends[idx[ok]]
    return out


def der(ref, hyp, setup=ScoreSetup(), mapping=None):
    """Diarization error rate of ``hyp`` against ``ref``.

    With a collar ``c``, ``[b - c, b + c)`` around every reference boundary
    ``b`` is not scored; with ``score_overlap=False`` instants where two or
    more reference speakers talk are not scored either.  The speaker mapping
    is computed on the unfiltered timelines.
    """
    _check_same_recording(ref, hyp)
    if mapping is None:
        mapping = optimal_mapping(ref, hyp)
    ref_act, hyp_act = ref.speaker_ticks(), hyp.speaker_ticks()
    collar = to_ticks(setup.collar)
    no_score = _merge([(b - collar, b + collar) for b in ref.boundaries()]) if collar else []

    points = {0}
    for ivs in list(ref_act.values()) + list(hyp_act.values()) + [no_score]:
        for a, b in ivs:
            points.update((a, b))
    points = np.array(sorted(points), dtype=np.int64)
    if points.size < 2:
        return DERResult(0.0, 0.0, 0.0, 0.0)
    left, widths = points[:-1], np.diff(points)

    n_ref = sum(_active_at(ivs, left).astype(np.int64) for ivs in ref_act.values()) \
        if ref_act else np.zeros(left.size, dtype=np.int64)
    n_hyp = sum(_active_at(ivs, left).astype(np.int64) for ivs in hyp_act.values()) \
        if hyp_act else np.zeros(left.size, dtype=np.int64)
    n_correct = np.zeros(left.size, dtype=np.int64)
    for r, h in mapping.items():
        if r in ref_act and h in hyp_act:
            n_correct += _active_at(ref_act[r], left) & _active_at(hyp_act[h], left)

    scored = ~_active_at(no_score, left)
    if not setup.score_overlap:
        scored &= n_ref < 2
    w = np.where(scored, widths, 0)
    miss = int(np.sum(w * np.maximum(n_ref - n_hyp, 0)))
    fa = int(np.sum(w * np.maximum(n_hyp - n_ref, 0)))
    ser = int(np.sum(w * (np.minimum(n_ref, n_hyp) - n_correct)))
    total = int(np.sum(w * n_ref))
    return DERResult(to_seconds(miss), to_seconds(fa), to_seconds(ser), to_seconds(total))


def jer_per_speaker(ref, hyp, mapping=None):
    """Jaccard error of every reference speaker under the optimal mapping."""
    _check_same_recording(ref, hyp)
    ref_act, hyp_act = ref.speaker_ticks(), hyp.speaker_ticks()
    if not ref_act:
        raise UndefinedMetricError(f"JER is undefined for empty reference {ref.recording_id!r}")
    if mapping is None:
        mapping = optimal_mapping(ref, hyp)
    out = {}
    for r, ivs in ref_act.items():
        h = mapping.get(r)
        if h is None:
            out[r] = 1.0
            continue
        inter = _overlap(ivs, hyp_act[h])
        union = _length(ivs) + _length(hyp_act[h]) - inter
        out[r] = 1.0 - inter / union
    return out


def jer(ref, hyp, mapping=None):
    scores = jer_per_speaker(ref, hyp, mapping)
    return float(np.mean(list(scores.values())))


@dataclass(frozen=True)
class WordRecord:
    speaker: str
    start: float = None
    end: float = None
    kind: str = "word"
    recording_id: str = ""

    def __post_init__(self):
        if self.kind not in ("word", "vocal_sound"):
            raise InputError(f"unknown word kind {self.kind!r}")
        if self.has_times and not self.start < self.end:
            raise InputError(f"word of {self.speaker!r} has start >= end ({self.start}, {self.end})")

    @property
    def has_times(self):
        return self.start is not None and self.end is not None


def build_reference(words, recording_id="", include_vocal_sounds=False):
    """Speaker reference from word-level transcripts.

    Vocal sounds are dropped unless ``include_vocal_sounds`` is set; words
    lacking timestamps are skipped with a warning.  Words of one speaker
    that touch (zero gap) or overlap are merged; any positive pause is kept.
    """
    per_speaker = {}
    skipped = 0
    for w in words:
        if w.kind != "word" and not include_vocal_sounds:
            continue
        if not w.has_times:
            skipped += 1
            continue
        per_speaker.setdefault(w.speaker, []).append((to_ticks(w.start), to_ticks(w.end)))
    if skipped:
        warnings.warn(f"skipped {skipped} record(s) without time annotations", stacklevel=2)
    segments = [
        Segment(to_seconds(a), to_seconds(b - a), spk)
        for spk, ivs in sorted(per_speaker.items())
        for a, b in _merge(ivs)
    ]
    return Timeline(recording_id, segments)


@dataclass(frozen=True)
class RecordingScore:
    recording_id: str
    der: DERResult
    jer_by_speaker: dict

    @property
    def jer(self):
        return float(np.mean(list(self.jer_by_speaker.values())))


def score_recording(ref, hyp, setup):
    mapping = optimal_mapping(ref, hyp)
    return RecordingScore(ref.recording_id, der(ref, hyp, setup, mapping),
                          jer_per_speaker(ref, hyp, mapping))


def score_all(refs, hyps, setup):
    """Score every reference recording; a missing hypothesis counts as empty.

    Returns per-recording scores (sorted by id) and the overall score, in
    which DER pools seconds and JER weighs every reference speaker equally.
    """
    scores = []
    for rec_id in sorted(refs):
        hyp = hyps.get(rec_id, Timeline(rec_id))
        scores.append(score_recording(refs[rec_id], hyp, setup))
    total = DERResult(0.0, 0.0, 0.0, 0.0)
    pooled = {}
    for s in scores:
        total = total + s.der
        pooled.update({(s.recording_id, spk): v for spk, v in s.jer_by_speaker.items()})
    return scores, RecordingScore("*** OVERALL ***", total, pooled)


def format_report(scores, overall):
    """Fixed-width text table with percentages to two decimals."""
    width = max([len(s.recording_id) for s in scores] + [len(overall.recording_id), 9])
    head = f"{'RECORDING':<{width}}  {'MISS':>7} {'FA':>7} {'SER':>7} {'DER':>7} {'JER':>7}"
    lines = [head]
    for s in list(scores) + [overall]:
        d = s.der
        lines.append(
            f"{s.recording_id:<{width}}  {100 * d.rate('miss'):7.2f} "
            f"{100 * d.rate('false_alarm'):7.2f} {100 * d.rate('speaker_error'):7.2f} "
            f"{100 * d.der:7.2f} {100 * s.jer:7.2f}"
        )
    return "\n".join(lines) + "\n"
