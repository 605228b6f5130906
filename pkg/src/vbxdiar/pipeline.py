"""End-to-end diarization of one recording's embedding sequence."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import ahc, vbx
from ._validation import relabel_by_first_occurrence
from .plda import length_normalize, project
from .scoring import Segment, Timeline, to_seconds, to_ticks


@dataclass
class DiarizationResult:
    timeline: Timeline
    labels: np.ndarray
    state: vbx.VBxState = None
    init_labels: np.ndarray = None


def labels_to_segments(onsets, offsets, labels, recording_id, prefix="spk"):
    """Turn per-embedding labels into a merged speaker timeline.

    Embedding ``i`` covers ``[onset_i, min(onset_{i+1}, offset_i))``; the last
    one ends at its own offset.  Touching tiles with the same label are
    merged.  Speakers are named ``spk00``, ``spk01``... by first appearance.
    """
    names = relabel_by_first_occurrence(labels)
    on = [to_ticks(t) for t in onsets]
    off = [to_ticks(t) for t in offsets]
    tiles = []
    for i in range(len(on)):
        end = off[i] if i + 1 == len(on) else min(on[i + 1], off[i])
        if tiles and tiles[-1][2] == names[i] and tiles[-1][1] == on[i]:
            tiles[-1][1] = end
        else:
            tiles.append([on[i], end, names[i]])
    segments = [Segment(to_seconds(a), to_seconds(b - a), f"{prefix}{k:02d}") for a, b, k in tiles]
    return Timeline(recording_id, segments)


def diarize_recording(emb, space, ahc_cfg=None, vbx_cfg=None, preprocessed=False,
                      n_init_clusters=None):
    """AHC initialization followed by VBx, producing a speaker timeline.

    Raw embeddings are projected into ``space`` and length-normalized first;
    pass ``preprocessed=True`` when ``emb`` already lives in that space.
    """
    ahc_cfg = ahc_cfg or ahc.AHCConfig()
    vbx_cfg = vbx_cfg or vbx.VBxConfig()
    if len(emb) == 0:
        warnings.warn(f"{emb.recording_id}: no embeddings, returning an empty timeline", stacklevel=2)
        return DiarizationResult(Timeline(emb.recording_id), np.zeros(0, dtype=np.int64))

    x = emb.vectors if preprocessed else length_normalize(project(space, emb.vectors))
    init = ahc.cluster(ahc.cosine_similarity_matrix(x), ahc_cfg.threshold, n_init_clusters)
    state = vbx.run(x, init, space.phi, vbx_cfg)
    labels = state.labels
    timeline = labels_to_segments(emb.onsets, emb.offsets, labels, emb.recording_id)
    return DiarizationResult(timeline, labels, state, init)
