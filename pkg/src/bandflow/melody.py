"""Non-autoregressive note model and duration utilities.

Maps phoneme ids plus a style tag (and an optional timbre vector) to
per-position note-pitch logits and positive durations, one note per
phoneme.  Also houses the NoteSequence line format and the length
regulator shared with the frame-level models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .blocks import FeedForward, positional_encoding, sdp_attention
from .errors import BoundsError, DataError, DimensionError
from .tensor import ParameterStore, Tensor

REST = -1


@dataclass
class NoteSequence:
    pitches: list        # MIDI ints in [0, 127], or REST
    durations: list      # beats, > 0
    tempo: float = None  # beats per minute

    def __post_init__(self):
        if len(self.pitches) != len(self.durations):
            raise DimensionError(
                f"{len(self.pitches)} pitches vs {len(self.durations)} durations")
        for p in self.pitches:
            if p != REST and not 0 <= p <= 127:
                raise DataError(f"pitch {p} outside [0, 127]")
        for d in self.durations:
            if d <= 0:
                raise DataError(f"duration {d} must be positive")

    def __len__(self):
        return len(self.pitches)

    def sounding(self):
        """(pitch, duration) pairs with rests removed."""
        return [(p, d) for p, d in zip(self.pitches, self.durations) if p != REST]

    def total_seconds(self):
        if self.tempo is None:
            raise DataError("tempo required to convert beats to seconds")
        return sum(self.durations) * 60.0 / self.tempo


def save_notes(notes: NoteSequence, path):
    with open(path, "w", encoding="utf-8") as f:
        if notes.tempo is not None:
            f.write(f"tempo={notes.tempo:g}\n")
        for p, d in zip(notes.pitches, notes.durations):
            name = "R" if p == REST else str(p)
            f.write(f"{name},{d:g}\n")


def load_notes(path) -> NoteSequence:
    pitches, durations, tempo = [], [], None
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("tempo="):
                tempo = float(line.split("=", 1)[1])
                continue
            p, d = line.split(",")
            pitches.append(REST if p == "R" else int(p))
            durations.append(float(d))
    return NoteSequence(pitches=pitches, durations=durations, tempo=tempo)


def length_regulate(features, durations):
    """Repeat each phoneme row `durations[i]` times along the frame axis."""
    dur = np.asarray(durations, dtype=np.int64)
    if dur.shape[0] != features.shape[0]:
        raise DimensionError(f"{dur.shape[0]} durations for {features.shape[0]} rows")
    if (dur < 0).any():
        raise DataError("durations must be non-negative integers")
    if dur.sum() == 0:
        raise DataError("length regulation produced an empty output")
    idx = np.repeat(np.arange(features.shape[0]), dur)
    return tt.gather(features, idx)


def log_duration_loss(predicted, target):
    """MSE between predicted log-durations and log(target + 1)."""
    tgt = np.asarray(target, dtype=np.float64)
    if (tgt < 0).any():
        raise DataError("target durations must be non-negative")
    p = predicted if isinstance(predicted, Tensor) else Tensor(predicted)
    if p.shape != tgt.shape:
        raise DimensionError(f"shapes differ: {p.shape} vs {tgt.shape}")
    return tt.mse(p, Tensor(np.log(tgt + 1.0)))


def melody_loss(logits, durations, target: NoteSequence):
    """Summed pitch cross-entropy plus summed squared duration error."""
    tgt_p = np.asarray(target.pitches, dtype=np.int64)
    tgt_d = np.asarray(target.durations, dtype=np.float64)
    if logits.shape[0] != len(target) or durations.shape != tgt_d.shape:
        raise DimensionError("prediction / target length mismatch")
    pitch_term = tt.cross_entropy(logits, tgt_p, reduction="sum")
    diff = tt.sub(durations, Tensor(tgt_d))
    return tt.add(pitch_term, tt.sum_(tt.mul(diff, diff)))


@dataclass
class MelodyBatch:
    phonemes: np.ndarray           # [N] int ids
    tag: int                       # style-tag id
    target: NoteSequence
    timbre: np.ndarray = None      # optional [d_timbre]

    def __post_init__(self):
        if len(self.phonemes) != len(self.target):
            raise DimensionError("one note per phoneme required")


class MelodyModel:
    """Small transformer with cross-attention into style-tag tokens."""

    def __init__(self, n_phonemes, n_tags, rng, n_pitches=128, width=64,
                 layers=2, timbre_dim=0, tag_tokens=2, ffn_hidden=None):
        self.n_phonemes = n_phonemes
        self.n_tags = n_tags
        self.n_pitches = n_pitches
        self.width = width
        self.n_layers = layers
        self.timbre_dim = timbre_dim
        self.tag_tokens = tag_tokens
        self.params = ParameterStore()
        p = self.params
        d = width
        self.phoneme_emb = p.add("melody.phoneme_emb",
                                 rng.standard_normal((n_phonemes, d)) * 0.5)
        self.tag_emb = p.add("melody.tag_emb",
                             rng.standard_normal((n_tags, tag_tokens * d)) * 0.5)
        if timbre_dim:
            self.w_timbre = p.add("melody.w_timbre",
                                  rng.standard_normal((timbre_dim, d)) / np.sqrt(timbre_dim))
        self._layers = []
        for i in range(layers):
            s = 1.0 / np.sqrt(d)
            layer = {
                "gain1": p.add(f"melody.l{i}.gain1", np.ones(d)),
                "gain2": p.add(f"melody.l{i}.gain2", np.ones(d)),
                "gain3": p.add(f"melody.l{i}.gain3", np.ones(d)),
                "wq": p.add(f"melody.l{i}.wq", rng.standard_normal((d, d)) * s),
                "wk": p.add(f"melody.l{i}.wk", rng.standard_normal((d, d)) * s),
                "wv": p.add(f"melody.l{i}.wv", rng.standard_normal((d, d)) * s),
                "wqx": p.add(f"melody.l{i}.wqx", rng.standard_normal((d, d)) * s),
                "ffn": FeedForward(d, ffn_hidden or 2 * d, rng, p, f"melody.l{i}.ffn"),
            }
            self._layers.append(layer)
        self.w_pitch = p.add("melody.w_pitch", rng.standard_normal((d, n_pitches)) / np.sqrt(d))
        self.b_pitch = p.add("melody.b_pitch", np.zeros(n_pitches))
        self.w_dur = p.add("melody.w_dur", rng.standard_normal((d, 1)) / np.sqrt(d))
        self.b_dur = p.add("melody.b_dur", np.zeros(1))

    def forward(self, batch: MelodyBatch):
        """Returns (pitch logits [N, K], durations [N] via softplus head)."""
        ids = np.asarray(batch.phonemes, dtype=np.int64)
        if ids.min(initial=0) < 0 or ids.max(initial=-1) >= self.n_phonemes:
            raise BoundsError(f"phoneme id out of range [0, {self.n_phonemes})")
        if not 0 <= batch.tag < self.n_tags:
            raise BoundsError(f"tag id {batch.tag} out of range [0, {self.n_tags})")
        n = len(ids)
        d = self.width
        h = tt.embedding_lookup(self.phoneme_emb, ids)
        h = tt.add(h, positional_encoding(n, d))
        if self.timbre_dim:
            if batch.timbre is None:
                raise DimensionError("model built with timbre_dim > 0 needs a timbre vector")
            tv = tt.matmul(tt.reshape(Tensor(batch.timbre), (1, self.timbre_dim)), self.w_timbre)
            h = tt.add(h, tv)
        tag_row = tt.gather(self.tag_emb, np.array([batch.tag]))
        z_p = tt.reshape(tag_row, (self.tag_tokens, d))
        for layer in self._layers:
            hn = tt.rmsnorm(h, layer["gain1"])
            h = tt.add(h, sdp_attention(tt.matmul(hn, layer["wq"]),
                                        tt.matmul(hn, layer["wk"]),
                                        tt.matmul(hn, layer["wv"])))
            hn = tt.rmsnorm(h, layer["gain2"])
            h = tt.add(h, sdp_attention(tt.matmul(hn, layer["wqx"]), z_p, z_p))
            h = tt.add(h, layer["ffn"](tt.rmsnorm(h, layer["gain3"])))
        logits = tt.add(tt.matmul(h, self.w_pitch), self.b_pitch)
        dur = tt.softplus(tt.add(tt.matmul(h, self.w_dur), self.b_dur))
        return logits, tt.reshape(dur, (n,))

    def predict(self, batch: MelodyBatch, tempo=None) -> NoteSequence:
        logits, dur = self.forward(batch)
        pitches = logits.data.argmax(axis=1).tolist()
        return NoteSequence(pitches=pitches, durations=dur.data.tolist(),
                            tempo=tempo if tempo is not None else batch.target.tempo)
