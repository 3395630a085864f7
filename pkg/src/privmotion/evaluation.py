"""Per-frame errors, testpoints, the zero-velocity baseline and ablation harnesses."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as tc
from .config import METRICS, TrainConfig
from .dataset import Recording
from .dct import DctBasis, idct_decode
from .errors import ConfigError, ContractError, DimensionError
from .networks import fp_forward, itp_forward
from .preprocess import MotionWindow, encode_windows, make_window_samples, pad_observed
from .trainer import StageArtifacts, train_fp, train_itp, train_psl, train_tp

TESTPOINTS_MS = (80, 160, 320, 400, 560, 1000)


@dataclass
class EvalReport:
    setting: tuple[int, int, int]
    metric: str
    frame_ms: float
    per_frame_error: np.ndarray  # all scored frames, observed ones first
    testpoint_errors: dict[int, float]
    baseline: dict[int, float]
    meta: dict = field(default_factory=dict)

    @property
    def prediction_errors(self) -> np.ndarray:
        """Errors of the forecast frames only (frame 1 follows the last observation)."""
        return self.per_frame_error[self.setting[0]:]


@dataclass
class SweepReport:
    rows: dict[int, EvalReport]  # P -> report
    deltas: dict[int, dict[int, float]]  # P -> ms -> error minus the P=0 error


def error_at_frames(pred: np.ndarray, gt: np.ndarray, metric: str = "mp") -> np.ndarray:
    """Per-frame error: mean joint distance (mp) or mean absolute parameter error (ma).

    A leading batch axis is averaged out.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    if metric not in METRICS:
        raise ContractError(f"unknown metric {metric!r}")
    diff = pred - gt
    if diff.ndim == 2:
        diff = diff[None]
    batch, k, frames = diff.shape
    if metric == "mp":
        if k % 3:
            raise ContractError(f"position metric needs K divisible by 3, got K={k}")
        per = np.sqrt((diff.reshape(batch, k // 3, 3, frames) ** 2).sum(axis=2)).mean(axis=1)
    else:
        per = np.abs(diff).mean(axis=1)
    return per.mean(axis=0)


def frame_index(ms: float, frame_ms: float) -> int:
    """1-based forecast frame at ``ms``; the time must fall exactly on a frame."""
    idx = ms / frame_ms
    nearest = round(idx)
    if nearest < 1 or not math.isclose(idx, nearest, rel_tol=0, abs_tol=1e-9):
        raise ConfigError(f"{ms} ms is not a whole forecast frame at {frame_ms} ms per frame")
    return nearest


def testpoints(per_frame: np.ndarray, frame_ms: float, ms_list: Iterable[int] = TESTPOINTS_MS) -> dict[int, float]:
    """Pick forecast-frame errors at the given times (``per_frame[0]`` is forecast frame 1)."""
    out = {}
    for ms in ms_list:
        idx = frame_index(ms, frame_ms)
        if idx > len(per_frame):
            raise ConfigError(f"{ms} ms (frame {idx}) is beyond the {len(per_frame)}-frame horizon")
        out[ms] = float(per_frame[idx - 1])
    return out


def default_testpoints(t: int, frame_ms: float) -> list[int]:
    return [ms for ms in TESTPOINTS_MS
            if math.isclose(ms / frame_ms, round(ms / frame_ms), abs_tol=1e-9) and 1 <= round(ms / frame_ms) <= t]


def zero_velocity(w: MotionWindow) -> np.ndarray:
    """Forecast repeating the last observed pose T times."""
    return np.repeat(w.observed[:, -1:], w.t, axis=1)


def _frame_ms(windows: Sequence[MotionWindow]) -> float:
    return windows[0].frame_ms


def baseline_errors(windows: Sequence[MotionWindow], metric: str) -> np.ndarray:
    """Per-frame zero-velocity error over the N+T observed and forecast frames."""
    n_t = windows[0].n + windows[0].t
    pred = np.stack([pad_observed(w)[:, :n_t] for w in windows])
    truth = np.stack([w.full()[:, :n_t] for w in windows])
    return error_at_frames(pred, truth, metric)


def predict_sequences(art: StageArtifacts, windows: Sequence[MotionWindow]) -> np.ndarray:
    """Decoded network output over all N+T+P frames, one slice per window (eval mode)."""
    cfg = art.config
    spec = art.spec()
    data = encode_windows(list(windows), spec.coeffs)
    basis = DctBasis.create(windows[0].length, spec.coeffs)
    g = tc.Graph()
    if art.kind == "itp":
        out, _ = itp_forward(g.const(data.h_obs), g.const(data.h_priv), art.params, spec,
                             obs_skip=cfg.obs_skip, priv_skip=cfg.priv_skip)
    else:
        out, _ = fp_forward(g.const(data.h_obs), art.params, spec, skip=cfg.fp_skip)
    return idct_decode(out.value, basis)


def evaluate(art: StageArtifacts, windows: Sequence[MotionWindow], ms_list: Sequence[int] | None = None,
             meta: dict | None = None) -> EvalReport:
    """Average per-frame error of a trained stage; ITP is scored over all N+T+P frames."""
    if not windows:
        raise ContractError("no evaluation windows")
    w0 = windows[0]
    metric = art.config.metric
    pred = predict_sequences(art, windows)
    truth = np.stack([w.full() for w in windows])
    scored = w0.length if art.kind == "itp" else w0.n + w0.t
    per_frame = error_at_frames(pred[..., :scored], truth[..., :scored], metric)
    frame_ms = _frame_ms(windows)
    ms_list = list(ms_list) if ms_list is not None else default_testpoints(w0.t, frame_ms)
    base = baseline_errors(windows, metric)
    info = {"stage": art.stage, "seed": art.config.seed, "windows": len(windows)}
    info.update(meta or {})
    return EvalReport((w0.n, w0.t, w0.p), metric, frame_ms, per_frame,
                      testpoints(per_frame[w0.n:w0.n + w0.t], frame_ms, ms_list),
                      testpoints(base[w0.n:], frame_ms, ms_list), info)


def baseline_report(windows: Sequence[MotionWindow], metric: str = "mp",
                    ms_list: Sequence[int] | None = None) -> EvalReport:
    w0 = windows[0]
    frame_ms = _frame_ms(windows)
    ms_list = list(ms_list) if ms_list is not None else default_testpoints(w0.t, frame_ms)
    base = baseline_errors(windows, metric)
    tp = testpoints(base[w0.n:], frame_ms, ms_list)
    return EvalReport((w0.n, w0.t, w0.p), metric, frame_ms, base, tp, dict(tp),
                      {"stage": "zero-velocity", "windows": len(windows)})


# ------------------------------------------------------------------ ablations

def build_windows(recordings: Sequence[Recording], n: int, t: int, p: int, stride: int) -> list[MotionWindow]:
    """Windows from every recording separately, so no window spans two recordings."""
    out = []
    for rec in recordings:
        out += make_window_samples(rec.frames, n, t, p, stride, rec.frame_ms)
    return out


def pk_length_sweep(train: Sequence[Recording], evaluation: Sequence[Recording], cfg: TrainConfig,
                    p_list: Sequence[int] = (0, 1, 5, 10), stride: int = 1,
                    eval_stride: int | None = None) -> SweepReport:
    """Retrain with each privileged length in ``p_list`` on identical samples and seed.

    Windows are cut once for the longest P and then shortened, so every row
    sees the same observed/target frames in the same order.  P = 0 is
    plain TP training.
    """
    p_list = list(p_list)
    if 0 not in p_list:
        raise ConfigError("p_list must include 0 (the TP reference row)")
    if any(p < 0 for p in p_list):
        raise ConfigError(f"privileged lengths must be non-negative, got {p_list}")
    p_max = max(p_list)
    eval_stride = eval_stride or cfg.n + cfg.t + p_max
    train_w = build_windows(train, cfg.n, cfg.t, p_max, stride)
    eval_w = build_windows(evaluation, cfg.n, cfg.t, p_max, eval_stride)
    if not train_w or not eval_w:
        raise ConfigError("recordings are too short for the longest privileged window")
    rows: dict[int, EvalReport] = {}
    for p in p_list:
        cfg_p = cfg.replace(p=p, c=0 if cfg.c == 0 else min(cfg.c, cfg.n + cfg.t + p))
        tw = [w.with_privileged(p) for w in train_w]
        ew = [w.with_privileged(p) for w in eval_w]
        if p == 0:
            art = train_tp(tw, cfg_p)
        else:
            itp = train_itp(tw, cfg_p)
            art = train_fp(tw, itp.params, cfg_p)
        rows[p] = evaluate(art, ew, meta={"P": p})
    ref = rows[0].testpoint_errors
    deltas = {p: {ms: rep.testpoint_errors[ms] - ref[ms] for ms in ref} for p, rep in rows.items()}
    return SweepReport(rows, deltas)


def psl_baseline(train: Sequence[Recording], evaluation: Sequence[Recording], cfg: TrainConfig,
                 psl_weight: float, stride: int = 1, eval_stride: int | None = None) -> EvalReport:
    """Single network that also forecasts the privileged window, scored with ``psl_weight``."""
    if cfg.p < 1:
        raise ConfigError("the PSL baseline needs p >= 1")
    train_w = build_windows(train, cfg.n, cfg.t, cfg.p, stride)
    eval_w = build_windows(evaluation, cfg.n, cfg.t, cfg.p, eval_stride or cfg.length)
    art = train_psl(train_w, cfg, psl_weight)
    return evaluate(art, eval_w, meta={"psl_weight": psl_weight})


def comparison_curves(windows: Sequence[MotionWindow], itp: StageArtifacts | None = None,
                      fp: StageArtifacts | None = None, tp: StageArtifacts | None = None) -> dict[str, np.ndarray]:
    """Per-frame error curves over the forecast window and beyond.

    ``itp`` spans forecast frames 1..T+P (interpolation error); ``fp``,
    ``tp`` and ``zero_velocity`` span 1..T.
    """
    w0 = windows[0]
    truth = np.stack([w.full() for w in windows])
    metric = next((a.config.metric for a in (itp, fp, tp) if a is not None), "mp")
    curves = {}
    for label, art in (("itp", itp), ("fp", fp), ("tp", tp)):
        if art is None:
            continue
        win = windows if art.kind == "itp" or w0.p == art.config.p else [w.with_privileged(art.config.p)
                                                                        for w in windows]
        pred = predict_sequences(art, win)
        stop = w0.length if art.kind == "itp" else w0.n + w0.t
        curves[label] = error_at_frames(pred[..., w0.n:stop], truth[..., w0.n:stop], metric)
    curves["zero_velocity"] = baseline_errors(windows, metric)[w0.n:]
    return curves


# -------------------------------------------------------------------- output

def _num(x: float) -> str:
    return format(float(x), ".17g")


def _unit(metric: str) -> str:
    return "error_mm" if metric == "mp" else "error_rad"


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    try:
        path.write_text(buf.getvalue(), encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc.strerror}") from exc
    return path


def emit_report(report: EvalReport, path) -> list[Path]:
    """Write the forecast-frame CSV and a ``.testpoints.csv`` companion."""
    path = Path(path)
    unit = _unit(report.metric)
    rows = [(i, _num(i * report.frame_ms), _num(e)) for i, e in enumerate(report.prediction_errors, 1)]
    main = _write_csv(path, ("frame", "ms", unit), rows)
    tp_rows = [(ms, _num(report.testpoint_errors[ms]), _num(report.baseline[ms])) for ms in report.testpoint_errors]
    side = _write_csv(path.with_suffix(".testpoints.csv"), ("ms", unit, "baseline_" + unit.split("_")[1]), tp_rows)
    return [main, side]


def emit_sweep(sweep: SweepReport, path, metric: str = "mp") -> list[Path]:
    """Per-frame CSV with a P column, plus ``.deltas.csv`` of testpoint deltas against P=0."""
    path = Path(path)
    unit = _unit(metric)
    rows, delta_rows = [], []
    for p, rep in sweep.rows.items():
        rows += [(p, i, _num(i * rep.frame_ms), _num(e)) for i, e in enumerate(rep.prediction_errors, 1)]
        delta_rows += [(p, ms, _num(rep.testpoint_errors[ms]), _num(sweep.deltas[p][ms]))
                       for ms in rep.testpoint_errors]
    main = _write_csv(path, ("P", "frame", "ms", unit), rows)
    side = _write_csv(path.with_suffix(".deltas.csv"), ("P", "ms", unit, "delta_" + unit.split("_")[1]), delta_rows)
    return [main, side]


def emit_curves(curves: dict[str, np.ndarray], frame_ms: float, path) -> Path:
    """Wide CSV ``frame,ms,<curve>...``; curves shorter than the longest leave blanks."""
    names = list(curves)
    longest = max((len(c) for c in curves.values()), default=0)
    rows = []
    for i in range(longest):
        rows.append([i + 1, _num((i + 1) * frame_ms)]
                    + [_num(curves[n][i]) if i < len(curves[n]) else "" for n in names])
    return _write_csv(path, ["frame", "ms", *names], rows)


def emit_loss_curve(values: Sequence[float], path, extra: dict[str, Sequence[float]] | None = None) -> Path:
    extra = {k: v for k, v in (extra or {}).items() if len(v)}
    rows = [[i, _num(v)] + [_num(extra[k][i]) for k in extra] for i, v in enumerate(values)]
    return _write_csv(path, ["epoch", "loss", *extra], rows)
