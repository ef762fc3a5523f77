"""Toy training pipelines: 2-D flow, style predictor, accompaniment, melody.

Each run is a pure function of (seed, config): data generation, parameter
init, noise draws, and routing noise all come from generators derived from
the seed, so repeated runs produce bitwise-identical checkpoints.
"""

from __future__ import annotations

import csv

import numpy as np

from . import tensor as tt
from .errors import NumericError
from .flow import FlowConfig, FlowSample, MLPEstimator, cfm_loss, euler_sample
from .melody import MelodyBatch, MelodyModel, melody_loss, NoteSequence
from .metrics import evaluate_pair, InvalidMetric, REPORT_COLUMNS
from .models import AccompFlowModel, StylePredictorModel
from .moe import RouterState, TAU_LOW, gate_entropy, tau_schedule
from .optim import Adam
from .synth import gen_flow2d, gen_melody_grammar, gen_style_toy, gen_toy_pairs, tag_transform
from .tensor import Tape, Tensor, backward


def _check_finite(value, step):
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss at step {step}")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# 2-D mixture flow

def train_flow2d(seed=0, steps=1500, batch=256, lr=2e-3, data_n=10000,
                 hidden=64, flow_cfg=None):
    cfg = flow_cfg or FlowConfig(train_timesteps=100, cfg_scale=1.0)
    data = gen_flow2d(seed, data_n)
    rng = np.random.default_rng(seed + 1)
    est = MLPEstimator(2, hidden, rng)
    opt = Adam(est.params, lr=lr)
    losses = []
    for step in range(steps):
        idx = rng.integers(len(data), size=batch)
        x1 = data[idx]
        x0 = rng.standard_normal((batch, 2))
        t = rng.integers(cfg.train_timesteps, size=batch) / cfg.train_timesteps
        xt = (1.0 - t)[:, None] * x0 + t[:, None] * x1
        with Tape():
            v = est(Tensor(xt), t)
            loss = tt.mse(v, Tensor(x1 - x0))
            _check_finite(loss.item(), step)
            backward(loss)
        opt.step()
        opt.zero_grad()
        losses.append(loss.item())
    return est, losses, cfg


def sample_flow2d(est, n, seed=0, flow_cfg=None, trace=None):
    cfg = flow_cfg or FlowConfig(cfg_scale=1.0)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    return euler_sample(est, x, None, cfg, trace=trace).data


def flow2d_mode_stats(samples):
    """Per-mode means and weights, assigning each point to the nearest mode."""
    left = samples[samples[:, 0] < 0]
    right = samples[samples[:, 0] >= 0]
    return {
        "mean_left": left.mean(axis=0) if len(left) else np.zeros(2),
        "mean_right": right.mean(axis=0) if len(right) else np.zeros(2),
        "weight_left": len(left) / len(samples),
        "weight_right": len(right) / len(samples),
    }


# ---------------------------------------------------------------------------
# style predictor

def train_style_predictor(seed=0, steps=200, batch=4, lr=3e-3, n_samples=64,
                          n_tags=4, warmup_steps=0, vocal_drop=0.2, text_drop=0.1,
                          flow_cfg=None):
    cfg = flow_cfg or FlowConfig(train_timesteps=100)
    data = gen_style_toy(seed, n_samples, n_tags=n_tags)
    rng = np.random.default_rng(seed + 1)
    model = StylePredictorModel(rng, n_tags=n_tags, n_phonemes=8,
                                channels=data[0].x1.shape[0])
    opt = Adam(model.params, lr=lr)
    losses = []
    for step in range(steps):
        samples, conds = [], []
        for _ in range(batch):
            s = data[int(rng.integers(len(data)))]
            tag = None if rng.uniform() < text_drop else s.tag
            vocal = rng.uniform() >= vocal_drop
            samples.append(FlowSample(
                x0=rng.standard_normal(s.x1.shape), x1=s.x1,
                t=float(rng.integers(cfg.train_timesteps)) / cfg.train_timesteps))
            conds.append((s.phonemes, tag, vocal))
        with Tape():
            loss = cfm_loss(model, samples, conds)
            _check_finite(loss.item(), step)
            backward(loss)
        if step < warmup_steps:
            opt.step(skip=lambda name: name.startswith("wavenet"))
        else:
            opt.step()
        opt.zero_grad()
        losses.append(loss.item())
    return model, losses, cfg


# ---------------------------------------------------------------------------
# accompaniment flow with the expert groups

def train_accomp(seed=0, steps=300, batch=4, lr=2e-3, n_pairs=96, n_tags=3,
                 T=64, data_dim=16, width=64, experts=4, blocks=2,
                 holdout=16, flow_cfg=None, balance_form="switch"):
    cfg = flow_cfg or FlowConfig(train_timesteps=1000)
    pairs = gen_toy_pairs(seed, n_pairs, n_tags, T=T, d=data_dim)
    train_pairs, held = pairs[:-holdout], pairs[-holdout:]
    rng = np.random.default_rng(seed + 1)
    model = AccompFlowModel(rng, n_tags, data_dim=data_dim, width=width,
                            experts=experts, blocks=blocks, balance_form=balance_form)
    opt = Adam(model.params, lr=lr)
    losses = []
    for step in range(steps):
        tau = tau_schedule(step / max(1, steps - 1))
        model.state = RouterState(tau=tau, mode="dense", rng=rng)
        total = None
        for _ in range(batch):
            pair = train_pairs[int(rng.integers(len(train_pairs)))]
            tag = None if rng.uniform() < cfg.cond_drop_prob else pair.tag
            sample = FlowSample(
                x0=rng.standard_normal(pair.a.shape), x1=pair.a,
                t=float(rng.integers(cfg.train_timesteps)) / cfg.train_timesteps)
            with Tape():
                loss = cfm_loss(model, [sample], [(pair.v, tag)])
                bal = model.balance()
                if bal is not None:
                    loss = tt.add(loss, bal)
                _check_finite(loss.item(), step)
                backward(loss)
            total = loss.item() if total is None else total + loss.item()
        opt.step()
        opt.zero_grad()
        losses.append(total / batch)
    return model, losses, cfg, (train_pairs, held)


def eval_accomp(model, held_pairs, n_tags, seed=0, gamma=1.0, infer_steps=25):
    """Mean Pearson correlation of generated output with the tag-true target."""
    cfg = FlowConfig(infer_steps=infer_steps, cfg_scale=gamma)
    rng = np.random.default_rng(seed)
    model.state = RouterState(tau=TAU_LOW, mode="hard", rng=None)
    corrs = []
    for pair in held_pairs:
        x0 = rng.standard_normal(pair.a.shape)
        null_cond = (pair.v, None) if gamma != 1.0 else None
        gen = euler_sample(model, x0, (pair.v, pair.tag), cfg, null_cond=null_cond)
        target = tag_transform(pair.v, pair.tag, n_tags)
        corrs.append(float(np.corrcoef(gen.data.ravel(), target.ravel())[0, 1]))
    return float(np.mean(corrs)), corrs


def tag_consistency(model, held_pairs, n_tags, seed=0, gamma=1.0, infer_steps=25):
    """Fraction of generations whose nearest tag-transform is the true tag."""
    cfg = FlowConfig(infer_steps=infer_steps, cfg_scale=gamma)
    rng = np.random.default_rng(seed)
    model.state = RouterState(tau=TAU_LOW, mode="hard", rng=None)
    hits = 0
    for pair in held_pairs:
        x0 = rng.standard_normal(pair.a.shape)
        null_cond = (pair.v, None) if gamma != 1.0 else None
        gen = euler_sample(model, x0, (pair.v, pair.tag), cfg, null_cond=null_cond).data
        errs = [np.mean((gen - tag_transform(pair.v, k, n_tags)) ** 2)
                for k in range(n_tags)]
        hits += int(np.argmin(errs) == pair.tag)
    return hits / len(held_pairs)


def route_trace_rows(model, pair, t=0.5, tau=TAU_LOW, mode="hard"):
    """(group, unit, chosen expert, gate entropy, tau, t) rows from one pass."""
    model.state = RouterState(tau=tau, mode=mode, rng=None)
    x = np.zeros(pair.a.shape)
    model(Tensor(x), t, (pair.v, pair.tag))
    rows = []
    for b, moe in enumerate(model.moes):
        for group, gates in sorted(moe.last_gates.items()):
            g = gates.data
            ent = gate_entropy(g)
            for unit in range(g.shape[0]):
                rows.append((f"b{b}.{group}", unit, int(g[unit].argmax()), ent, tau, t))
    return rows


# ---------------------------------------------------------------------------
# melody model

def train_melody(seed=0, steps=400, batch=8, lr=3e-3, n_songs=120, holdout=20,
                 width=64, layers=2):
    songs = gen_melody_grammar(seed, n_songs)
    train_songs, held = songs[:-holdout], songs[-holdout:]
    rng = np.random.default_rng(seed + 1)
    model = MelodyModel(n_phonemes=7, n_tags=12, rng=rng, width=width, layers=layers)
    opt = Adam(model.params, lr=lr)
    losses = []
    for step in range(steps):
        with Tape():
            loss = None
            for _ in range(batch):
                s = train_songs[int(rng.integers(len(train_songs)))]
                mb = MelodyBatch(phonemes=s.phonemes, tag=s.tag, target=s.notes)
                logits, durs = model.forward(mb)
                term = tt.mul(melody_loss(logits, durs, s.notes), 1.0 / len(s.notes))
                loss = term if loss is None else tt.add(loss, term)
            loss = tt.mul(loss, 1.0 / batch)
            _check_finite(loss.item(), step)
            backward(loss)
        opt.step()
        opt.zero_grad()
        losses.append(loss.item())
    return model, losses, (train_songs, held)


def melody_pitch_accuracy(model, songs):
    correct = total = 0
    for s in songs:
        mb = MelodyBatch(phonemes=s.phonemes, tag=s.tag, target=s.notes)
        logits, _ = model.forward(mb)
        pred = logits.data.argmax(axis=1)
        correct += int((pred == np.asarray(s.notes.pitches)).sum())
        total += len(s.notes)
    return correct / total


def melody_report(model, songs):
    """Mean held-out metric row in the standard column order, plus per-song rows."""
    rows = []
    for s in songs:
        mb = MelodyBatch(phonemes=s.phonemes, tag=s.tag, target=s.notes)
        gen = model.predict(mb)
        try:
            rep = evaluate_pair(gen, s.notes, gt_key=(s.tag, "major"))
        except InvalidMetric:
            continue
        rows.append(rep.row())
    mean_row = np.asarray(rows).mean(axis=0).tolist()
    return mean_row, rows


def random_melody_baseline(songs, seed=0):
    """Uniform-random pitch generations over the songs' pitch span."""
    rng = np.random.default_rng(seed)
    out = []
    for s in songs:
        pitches = rng.integers(48, 84, size=len(s.notes)).tolist()
        out.append(NoteSequence(pitches=pitches, durations=list(s.notes.durations),
                                tempo=s.notes.tempo))
    return out


__all__ = [name for name in dir() if not name.startswith("_")]
