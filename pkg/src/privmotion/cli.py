"""Command-line front end.

Settings come from, in increasing precedence: built-in defaults, the
``--config`` file, the ``PRIVMOTION_SEED`` environment variable (seed only),
and ``--set KEY=VALUE`` / ``--seed`` / ``--data-dir`` / ``--out-dir`` flags.
Every command writes ``manifest-<command>.cfg`` into ``out_dir``; passing it
back as ``--config`` repeats the run.

Exit status: 0 success, 2 configuration error, 3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import platform
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .config import (TrainConfig, format_value, parse_assignments, parse_value, read_kv_file,
                     train_config_from, train_config_items)
from .dataset import Recording, SynthSpec, canonicalize, load_recordings, save_recording, synth_generate
from .errors import CheckpointError, ConfigError, FormatError, ParseError
from .evaluation import (baseline_report, build_windows, comparison_curves, emit_curves, emit_loss_curve,
                         emit_report, emit_sweep, evaluate, pk_length_sweep, predict_sequences)
from .preprocess import MotionWindow
from .trainer import STAGES, load_stage, save_stage, train_fp, train_itp, train_psl, train_tp

log = logging.getLogger("privmotion")

SEED_ENV = "PRIVMOTION_SEED"
EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 2, 3, 4


@dataclass(frozen=True)
class RunOptions:
    """Settings beyond TrainConfig; an empty path means the default under out_dir."""

    data_dir: str = "data"
    out_dir: str = "runs"
    target_fps: float = 25.0
    train_stride: int = 1
    eval_stride: int = 0  # 0: n+t+p, i.e. disjoint windows
    itp_checkpoint: str = ""
    checkpoint: str = ""
    psl_weight: float = 0.6
    p_list: str = "0,1,5,10"
    input: str = ""
    joints: int = 11
    synth_frames: int = 60
    synth_train: int = 2
    synth_eval: int = 1


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    run: RunOptions

    @property
    def out(self) -> Path:
        return Path(self.run.out_dir)

    def path_or(self, value: str, default: str) -> Path:
        return Path(value) if value else self.out / default

    def items(self) -> dict[str, str]:
        out = train_config_items(self.train)
        out.update({f.name: format_value(getattr(self.run, f.name)) for f in fields(RunOptions)})
        return out


def build_config(file_values: dict[str, str], overrides: dict[str, str], env=os.environ) -> RunConfig:
    merged = dict(file_values)
    if env.get(SEED_ENV):
        merged["seed"] = env[SEED_ENV]
    merged.update(overrides)
    run_fields = {f.name: f for f in fields(RunOptions)}
    run_changes, train_values = {}, {}
    for key, raw in merged.items():
        if key in run_fields:
            run_changes[key] = parse_value(key, raw, type(getattr(RunOptions(), key)))
        else:
            train_values[key] = raw
    return RunConfig(train_config_from(train_values), dataclasses.replace(RunOptions(), **run_changes))


def write_manifest(cfg: RunConfig, command: str) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    lines = [
        "# privmotion run manifest",
        f"# command: {command}",
        f"# versions: privmotion={__version__} python={platform.python_version()} numpy={np.__version__}",
        f"# rerun: privmotion {command} --config <this file>",
    ]
    lines += [f"{k}={v}" for k, v in cfg.items().items()]
    path = cfg.out / f"manifest-{command}.cfg"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# -------------------------------------------------------------------- data

def _load_split(cfg: RunConfig, split: str) -> list[Recording]:
    path = Path(cfg.run.data_dir) / split
    if not path.is_dir():
        raise ParseError(f"missing data directory (run 'privmotion synth' or add recordings)", path)
    recs = [canonicalize(r, cfg.run.target_fps) for r in load_recordings(path)]
    if not recs:
        raise ParseError("no .mseq recordings found", path)
    return recs


def _windows(cfg: RunConfig, split: str, p: int | None = None) -> list[MotionWindow]:
    t = cfg.train
    p = t.p if p is None else p
    stride = cfg.run.train_stride if split == "train" else (cfg.run.eval_stride or t.n + t.t + p)
    windows = build_windows(_load_split(cfg, split), t.n, t.t, p, stride)
    if not windows:
        raise ParseError(f"no {t.n}-{t.t}-{p} windows fit in the {split} recordings", Path(cfg.run.data_dir) / split)
    return windows


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig) -> None:
    root = Path(cfg.run.data_dir)
    seed = cfg.train.seed
    for split, count, base in (("train", cfg.run.synth_train, 1000), ("eval", cfg.run.synth_eval, 2000)):
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            spec = SynthSpec(joints=cfg.run.joints, frames=cfg.run.synth_frames, fps=cfg.run.target_fps,
                             seed=seed * 10007 + base + i)
            save_recording(d / f"synth_{i:03d}.mseq", synth_generate(spec, f"synth_{i:03d}"))
    log.info("wrote %d + %d recordings under %s", cfg.run.synth_train, cfg.run.synth_eval, root)


def _finish_training(cfg: RunConfig, art, name: str) -> None:
    save_stage(cfg.out / f"{name}.pkck", art)
    emit_loss_curve(art.loss_curve, cfg.out / f"{name}_loss.csv", {"simu": art.simu_curve})
    log.info("%s: loss %.6g -> %.6g", art.stage, art.loss_curve[0], art.loss_curve[-1])


def cmd_train_itp(cfg: RunConfig) -> None:
    _finish_training(cfg, train_itp(_windows(cfg, "train"), cfg.train), "itp")


def cmd_train_fp(cfg: RunConfig) -> None:
    itp = load_stage(cfg.path_or(cfg.run.itp_checkpoint, "itp.pkck"), "ITP")
    _finish_training(cfg, train_fp(_windows(cfg, "train"), itp.params, cfg.train), "fp")


def cmd_train_tp(cfg: RunConfig) -> None:
    tcfg = cfg.train.replace(p=0, c=0)
    windows = [w.with_privileged(0) for w in _windows(cfg, "train")]
    _finish_training(cfg, train_tp(windows, tcfg), "tp")


def cmd_train_psl(cfg: RunConfig) -> None:
    _finish_training(cfg, train_psl(_windows(cfg, "train"), cfg.train, cfg.run.psl_weight), "psl")


def _eval_windows_for(cfg: RunConfig, art) -> list[MotionWindow]:
    c = art.config
    if (c.n, c.t) != (cfg.train.n, cfg.train.t):
        raise ConfigError(f"checkpoint was trained for {c.n}-{c.t}-{c.p}, config asks for "
                          f"{cfg.train.n}-{cfg.train.t}-{cfg.train.p}")
    windows = _windows(cfg, "eval", max(c.p, cfg.train.p))
    return [w.with_privileged(c.p) for w in windows] if windows[0].p != c.p else windows


def cmd_eval(cfg: RunConfig) -> None:
    path = cfg.path_or(cfg.run.checkpoint, "fp.pkck")
    art = load_stage(path, STAGES)
    windows = _eval_windows_for(cfg, art)
    report = evaluate(art, windows, meta={"checkpoint": path.name})
    emit_report(report, cfg.out / f"eval_{art.stage.lower()}.csv")
    # Fig. 4a-style comparison from whatever stages sit in out_dir
    found = {}
    for name in ("itp", "fp", "tp"):
        p = cfg.out / f"{name}.pkck"
        if p.is_file():
            found[name] = load_stage(p, name.upper())
    if found:
        p_max = max(a.config.p for a in found.values())
        base = _windows(cfg, "eval", p_max)
        curves = comparison_curves(base, found.get("itp"), found.get("fp"), found.get("tp"))
        emit_curves(curves, base[0].frame_ms, cfg.out / "curves.csv")
    for ms, err in report.testpoint_errors.items():
        print(f"{ms:>5d} ms  {err:10.4f}  (zero-velocity {report.baseline[ms]:.4f})")


def cmd_predict(cfg: RunConfig) -> None:
    path = cfg.path_or(cfg.run.checkpoint, "fp.pkck")
    art = load_stage(path, ("FP", "TP", "PSL"))
    c = art.config
    if cfg.run.input:
        rec = canonicalize(load_recordings(cfg.run.input)[0], cfg.run.target_fps)
    else:
        rec = _load_split(cfg, "eval")[0]
    if rec.length < c.n:
        raise ParseError(f"needs at least {c.n} frames, found {rec.length}", rec.name)
    observed = rec.frames[:, -c.n:]
    dummy = np.zeros((rec.k, 0))
    window = MotionWindow(observed, np.repeat(observed[:, -1:], c.t, axis=1),
                          np.repeat(observed[:, -1:], c.p, axis=1) if c.p else dummy, rec.frame_ms)
    forecast = predict_sequences(art, [window])[0][:, c.n:c.n + c.t]
    out = cfg.out / "prediction.mseq"
    save_recording(out, Recording(f"{rec.name}_forecast", rec.fps, forecast, rec.kind))
    print(out)


def cmd_sweep(cfg: RunConfig) -> None:
    try:
        p_list = [int(x) for x in cfg.run.p_list.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"p_list must be comma-separated integers, got {cfg.run.p_list!r}") from None
    sweep = pk_length_sweep(_load_split(cfg, "train"), _load_split(cfg, "eval"), cfg.train, p_list,
                            cfg.run.train_stride, cfg.run.eval_stride or None)
    emit_sweep(sweep, cfg.out / "sweep.csv", cfg.train.metric)
    for p, deltas in sweep.deltas.items():
        print(f"P={p:<3d} " + "  ".join(f"{ms}ms {d:+.4f}" for ms, d in deltas.items()))


def cmd_baseline(cfg: RunConfig) -> None:
    report = baseline_report(_windows(cfg, "eval"), cfg.train.metric)
    emit_report(report, cfg.out / "baseline.csv")


COMMANDS: dict[str, tuple[Callable[[RunConfig], None], str]] = {
    "synth": (cmd_synth, "generate a synthetic train/eval dataset under data_dir"),
    "train-itp": (cmd_train_itp, "train the interpolation network"),
    "train-fp": (cmd_train_fp, "train the prediction network against a frozen ITP checkpoint"),
    "train-tp": (cmd_train_tp, "train the prediction network without privileged poses"),
    "train-psl": (cmd_train_psl, "train a single network with a privileged-sequence loss"),
    "eval": (cmd_eval, "evaluate a checkpoint on the eval split"),
    "predict": (cmd_predict, "forecast from the last N frames of a recording"),
    "sweep": (cmd_sweep, "retrain over privileged lengths (p_list) and report deltas"),
    "baseline": (cmd_baseline, "evaluate the zero-velocity baseline"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--data-dir")
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="privmotion", description="Privileged-knowledge motion prediction.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def run(argv=None, env=os.environ) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_kv_file(args.config) if args.config else {}
        overrides = parse_assignments(args.overrides)
        for key, value in (("seed", args.seed), ("data_dir", args.data_dir), ("out_dir", args.out_dir)):
            if value is not None:
                overrides[key] = str(value)
        cfg = build_config(file_values, overrides, env)
        write_manifest(cfg, args.command)
        COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CheckpointError, FormatError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
