"""Sampling conversations from the VBx generative model.

Randomness comes from numpy's Philox bit generator, a counter-based
generator whose stream is fully determined by the seed on every platform.
Draws happen in a fixed order: speaker vectors, switch decisions, switch
targets, then observation noise.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_vector
from .exceptions import InputError
from .scoring import TICKS_PER_SECOND, Segment, Timeline, to_seconds, to_ticks


@dataclass(frozen=True)
class SynthConfig:
    speakers: int
    duration_steps: int
    phi: tuple
    loop_p: float = 0.99
    pi: object = "uniform"
    step_seconds: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.speakers < 1 or self.duration_steps < 1:
            raise InputError("speakers and duration_steps must be positive")
        if not 0 <= self.loop_p <= 1:
            raise InputError(f"loop_p must lie in [0, 1], got {self.loop_p}")
        if self.step_seconds <= 0:
            raise InputError("step_seconds must be positive")
        phi = check_vector(self.phi, "phi")
        if np.any(phi < 0):
            raise InputError("phi must be non-negative")
        object.__setattr__(self, "phi", tuple(float(p) for p in phi))
        if not isinstance(self.pi, str):
            pi = check_vector(self.pi, "pi", size=self.speakers)
            if np.any(pi < 0) or abs(pi.sum() - 1) > 1e-12:
                raise InputError("pi must be a probability vector")
            object.__setattr__(self, "pi", tuple(float(p) for p in pi))
        elif self.pi != "uniform":
            raise InputError(f"pi must be a vector or 'uniform', got {self.pi!r}")

    @property
    def prior(self):
        if isinstance(self.pi, str):
            return np.full(self.speakers, 1.0 / self.speakers)
        return np.asarray(self.pi)


def make_rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def sample_conversation(cfg):
    """Draw ``(x, z, y)``: observations (T x R), speaker labels, speaker vectors."""
    rng = make_rng(cfg.seed)
    phi = np.asarray(cfg.phi)
    n_steps = cfg.duration_steps
    y = rng.standard_normal((cfg.speakers, phi.size))

    # the chain leaves its state with prob 1 - loop_p and then redraws from
    # pi (possibly the same speaker); step 0 always draws from pi
    switch = rng.random(n_steps) >= cfg.loop_p
    switch[0] = True
    targets = rng.choice(cfg.speakers, size=n_steps, p=cfg.prior)
    last_switch = np.maximum.accumulate(np.where(switch, np.arange(n_steps), 0))
    z = targets[last_switch]

    x = np.sqrt(phi) * y[z] + rng.standard_normal((n_steps, phi.size))
    return x, z, y


def labels_to_timeline(z, step_seconds=0.25, recording_id="synth", prefix="spk"):
    """Tile each label over ``step_seconds`` and merge runs of the same speaker."""
    z = np.asarray(z)
    if z.size == 0:
        raise InputError("labels_to_timeline needs at least one label")
    step = to_ticks(step_seconds)
    change = np.flatnonzero(np.diff(z)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [z.size]])
    segments = [
        Segment(to_seconds(a * step), to_seconds((b - a) * step), f"{prefix}{int(z[a]):02d}")
        for a, b in zip(starts, ends)
    ]
    return Timeline(recording_id, segments)


def step_times(n_steps, step_seconds=0.25):
    """Onsets and offsets of consecutive tiles, computed on exact ticks."""
    step = to_ticks(step_seconds)
    k = np.arange(n_steps + 1, dtype=np.int64) * step
    secs = k / TICKS_PER_SECOND
    return secs[:-1], secs[1:]
