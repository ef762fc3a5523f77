"""Command-line surface: data generation, training, sampling, evaluation.

Config files are plain ``key=value`` lines; explicit flags override file
values.  Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import train as tr
from .checkpoint import load_into, save_checkpoint
from .errors import BandflowError, ConfigError
from .flow import FlowConfig, MLPEstimator
from .gradcheck import gradcheck_all
from .melody import load_notes, save_notes
from .metrics import REPORT_COLUMNS, evaluate_pair, f0_frame_error, InvalidMetric
from .synth import gen_flow2d, gen_melody_grammar, gen_style_toy, gen_toy_pairs

TASKS = ("flow2d", "accomp-toy", "melody-grammar", "style-toy")
MODELS = ("flow2d", "style", "accomp", "melody")


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _read_config(path):
    cfg = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line {line!r}; expected key=value")
            key, value = line.split("=", 1)
            cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


class Options:
    """Flag > config-file > default resolution."""

    def __init__(self, args):
        self._args = vars(args)
        self._cfg = _read_config(args.config) if getattr(args, "config", None) else {}

    def get(self, key, default, cast=str):
        v = self._args.get(key)
        if v is not None:
            return v
        if key in self._cfg:
            return cast(self._cfg[key])
        return default


def build_parser():
    parser = _Parser(prog="bandflow")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(p)
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--n", type=int)

    p = sub.add_parser("train", help="run a toy training pipeline")
    common(p)
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--trace", action="store_true", default=None,
                   help="also write a routing/sampling trace CSV")
    p.add_argument("--warmup", type=int)

    p = sub.add_parser("sample", help="Euler-sample a trained 2-D flow model")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--trace", action="store_true", default=None)

    p = sub.add_parser("eval-melody", help="melody metrics for files or directories")
    p.add_argument("generated")
    p.add_argument("reference")
    p.add_argument("--config")
    p.add_argument("--out")

    p = sub.add_parser("eval-f0", help="F0 frame error between two CSV tracks")
    p.add_argument("generated")
    p.add_argument("reference")

    p = sub.add_parser("route-trace", help="dump expert-routing decisions")
    common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--config")
    p.add_argument("--trials", type=int)
    return parser


# ---------------------------------------------------------------------------
# subcommand bodies

def _cmd_gen_data(args):
    opt = Options(args)
    seed = opt.get("seed", 0, int)
    out = Path(opt.get("out", "data", str))
    task = args.task
    out.mkdir(parents=True, exist_ok=True)
    if task == "flow2d":
        n = opt.get("n", 10000, int)
        pts = gen_flow2d(seed, n)
        np.savetxt(out / "flow2d.csv", pts, delimiter=",", header="x,y", comments="")
    elif task == "accomp-toy":
        n = opt.get("n", 96, int)
        pairs = gen_toy_pairs(seed, n, n_tags=3)
        np.savez(out / "accomp_toy.npz",
                 v=np.stack([p.v for p in pairs]),
                 a=np.stack([p.a for p in pairs]),
                 tag=np.array([p.tag for p in pairs]))
    elif task == "melody-grammar":
        n = opt.get("n", 120, int)
        for i, song in enumerate(gen_melody_grammar(seed, n)):
            save_notes(song.notes, out / f"song{i:04d}.notes")
    else:
        n = opt.get("n", 64, int)
        samples = gen_style_toy(seed, n)
        np.savez(out / "style_toy.npz",
                 phonemes=np.stack([s.phonemes for s in samples]),
                 tag=np.array([s.tag for s in samples]),
                 x1=np.stack([s.x1 for s in samples]))
    print(f"wrote {task} dataset to {out}")
    return 0


def _write_losses(path, losses):
    tr.write_csv(path, ["step", "loss"], list(enumerate(losses)))


def _cmd_train(args):
    opt = Options(args)
    seed = opt.get("seed", 0, int)
    out = opt.get("out", f"{args.model}.vbnd", str)
    loss_csv = str(Path(out).with_suffix(".losses.csv"))
    if args.model == "flow2d":
        steps = opt.get("steps", 1500, int)
        est, losses, _ = tr.train_flow2d(seed=seed, steps=steps)
        save_checkpoint(est.params, out)
        _write_losses(loss_csv, losses)
    elif args.model == "style":
        steps = opt.get("steps", 200, int)
        warmup = opt.get("warmup", 0, int)
        model, losses, _ = tr.train_style_predictor(seed=seed, steps=steps,
                                                    warmup_steps=warmup)
        save_checkpoint(model.params, out)
        _write_losses(loss_csv, losses)
    elif args.model == "accomp":
        steps = opt.get("steps", 300, int)
        model, losses, _, (train_pairs, held) = tr.train_accomp(seed=seed, steps=steps)
        save_checkpoint(model.params, out)
        _write_losses(loss_csv, losses)
        gamma = opt.get("gamma", 1.0, float)
        corr, _ = tr.eval_accomp(model, held, n_tags=3, seed=seed, gamma=gamma)
        print(f"held-out correlation (gamma={gamma:g}): {corr:.4f}")
        if opt.get("trace", False, bool):
            rows = tr.route_trace_rows(model, held[0])
            tr.write_csv(str(Path(out).with_suffix(".route.csv")),
                         ["group", "unit", "expert", "entropy", "tau", "t"], rows)
    else:
        steps = opt.get("steps", 400, int)
        model, losses, (train_songs, held) = tr.train_melody(seed=seed, steps=steps)
        save_checkpoint(model.params, out)
        _write_losses(loss_csv, losses)
        acc = tr.melody_pitch_accuracy(model, held)
        mean_row, rows = tr.melody_report(model, held)
        report_csv = str(Path(out).with_suffix(".report.csv"))
        tr.write_csv(report_csv, list(REPORT_COLUMNS), rows + [mean_row])
        print(f"held-out pitch accuracy: {acc:.4f}")
        print("mean report: " + ", ".join(
            f"{c}={v:.4f}" for c, v in zip(REPORT_COLUMNS, mean_row)))
    print(f"checkpoint: {out}")
    return 0


def _cmd_sample(args):
    opt = Options(args)
    seed = opt.get("seed", 0, int)
    n = opt.get("n", 2000, int)
    out = opt.get("out", "samples.csv", str)
    est = MLPEstimator(2, 64, np.random.default_rng(0))
    load_into(est.params, args.ckpt)
    trace = [] if opt.get("trace", False, bool) else None
    samples = tr.sample_flow2d(est, n, seed=seed, trace=trace)
    np.savetxt(out, samples, delimiter=",", header="x,y", comments="")
    if trace is not None:
        tr.write_csv(str(Path(out).with_suffix(".trace.csv")),
                     ["step", "t", "mean_abs_x", "mean_abs_v"], trace)
    print(f"wrote {n} samples to {out}")
    return 0


def _note_files(path):
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob("*.notes"))
    return [p]


def _cmd_eval_melody(args):
    gen_files = _note_files(args.generated)
    ref_files = _note_files(args.reference)
    if len(gen_files) != len(ref_files):
        raise BandflowError(
            f"{len(gen_files)} generated vs {len(ref_files)} reference songs")
    workers = int(os.environ.get("VBND_THREADS", "4"))

    def one(pair):
        g, r = pair
        try:
            return evaluate_pair(load_notes(g), load_notes(r)).row()
        except InvalidMetric:
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        rows = [r for r in ex.map(one, zip(gen_files, ref_files)) if r is not None]
    if not rows:
        raise BandflowError("no valid song pairs")
    summary = np.asarray(rows).mean(axis=0).tolist()
    writer = csv.writer(sys.stdout)
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([f"{v:.6f}" for v in row])
    writer.writerow([f"{v:.6f}" for v in summary])
    if args.out:
        tr.write_csv(args.out, list(REPORT_COLUMNS),
                     [[f"{v:.6f}" for v in r] for r in rows + [summary]])
    return 0


def _read_f0(path):
    track = np.loadtxt(path, delimiter=",", ndmin=2)
    return track[:, 1]


def _cmd_eval_f0(args):
    ffe = f0_frame_error(_read_f0(args.generated), _read_f0(args.reference))
    print(f"FFE={ffe:.6f}")
    return 0


def _cmd_route_trace(args):
    opt = Options(args)
    seed = opt.get("seed", 0, int)
    out = opt.get("out", "route.csv", str)
    model, _, _, (_, held) = tr.train_accomp(seed=seed, steps=5)
    rows = tr.route_trace_rows(model, held[0])
    tr.write_csv(out, ["group", "unit", "expert", "entropy", "tau", "t"], rows)
    print(f"wrote routing trace to {out}")
    return 0


def _cmd_gradcheck(args):
    opt = Options(args)
    trials = opt.get("trials", 20, int)
    worst = gradcheck_all(trials=trials)
    failed = False
    for name in sorted(worst):
        status = "ok" if worst[name] < 1e-4 else "FAIL"
        failed |= status == "FAIL"
        print(f"{name:20s} worst rel err {worst[name]:.3e}  {status}")
    return 2 if failed else 0


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval-melody": _cmd_eval_melody,
    "eval-f0": _cmd_eval_f0,
    "route-trace": _cmd_route_trace,
    "gradcheck": _cmd_gradcheck,
}


def cli_dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except BandflowError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
