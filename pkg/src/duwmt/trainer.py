"""Mean-teacher training loop.

Each step: Monte-Carlo sample the teacher on every batch item (with input
noise) to get its mean prediction and the batch-averaged double uncertainty,
run the student stochastically on the clean inputs, combine supervised loss
on the labeled rows with the uncertainty-modified consistency loss on all
rows, step the student by SGD and the teacher by EMA.

The teacher is never touched by gradient descent; it starts as a copy of the
student and only ever averages it. Teacher MC passes may run on a thread pool
(capped by the DUWMT_THREADS environment variable) and produce bit-identical
results either way, because every random draw is addressed by (step, item,
pass), not by execution order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import uncertainty as U
from .data import Dataset, SampleRecord, batches
from .errors import ConfigError, NumericError
from .losses import LossConfig
from .metrics import MetricsReport, dice
from .model import McSamples, Model, ModelConfig, NoiseSpec, apply_input_noise, build
from .rng import RngStream
from .tensor import Graph, OpKind, sgd_step

MODES = ("paper", "supervised", "mse_ablation", "no_weight_ablation")


@dataclass
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 4
    labeled_per_batch: int = 2
    lr0: float = 0.01
    lr_period: int = 800
    ema_alpha: float = 0.99
    mc_passes: int = 16
    seed: int = 0
    mode: str = "paper"
    noise_sigma: float = 0.1
    noise_clip: float = 0.2
    student_dropout: bool = True
    normalize_entropy: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.ema_alpha < 1.0:
            raise ConfigError(f"ema_alpha must lie in [0, 1), got {self.ema_alpha}")
        if not 0 <= self.labeled_per_batch <= self.batch_size:
            raise ConfigError("labeled_per_batch must lie in [0, batch_size]")
        if self.mc_passes < 2:
            raise ConfigError(f"mc_passes must be >= 2, got {self.mc_passes}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be >= 1")
        if self.lr_period < 1:
            raise ConfigError(f"lr_period must be >= 1, got {self.lr_period}")

    def noise(self) -> NoiseSpec:
        return NoiseSpec(sigma=self.noise_sigma, clip=self.noise_clip)


@dataclass
class StepLog:
    step: int
    lr: float
    loss_sup: float
    loss_cons: float
    lam: float
    u_s: float
    u_f: float
    teacher_dice: float
    student_dice: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "lr": self.lr,
            "loss_sup": self.loss_sup,
            "loss_cons": self.loss_cons,
            "lambda": self.lam,
            "u_s": self.u_s,
            "u_f": self.u_f,
            "teacher_dice": self.teacher_dice,
            "student_dice": self.student_dice,
        }


@dataclass
class TrainState:
    student: Model
    teacher: Model
    step: int = 0
    logs: list[StepLog] = field(default_factory=list)


@dataclass
class RunReport:
    mode: str
    total_steps: int
    student_test: dict | None
    teacher_test: dict | None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "total_steps": self.total_steps,
            "student_test": self.student_test,
            "teacher_test": self.teacher_test,
        }


def learning_rate(lr0: float, lr_period: int, step: int) -> float:
    return lr0 / (10.0 ** (step // lr_period))


def ema_update(teacher: Model, student: Model, alpha: float) -> None:
    """theta_teacher <- alpha * theta_teacher + (1 - alpha) * theta_student."""
    a = np.float32(alpha)
    b = np.float32(1.0 - alpha)
    for (name_t, pt), (name_s, ps) in zip(teacher.parameters(), student.parameters()):
        if name_t != name_s or pt.data.shape != ps.data.shape:
            raise ConfigError(f"teacher/student parameter mismatch at {name_t}/{name_s}")
        pt.data[...] = a * pt.data + b * ps.data


def _n_threads() -> int:
    raw = os.environ.get("DUWMT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"DUWMT_THREADS must be an integer, got {raw!r}")


def mc_sample_rows(
    model: Model,
    images: np.ndarray,
    t_passes: int,
    item_streams: list[RngStream],
    noise: NoiseSpec,
    n_threads: int = 1,
    chunk: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched Monte-Carlo sampling: (T, N, M, H, W) probs and (T, N, C, H, W) feats.

    Row i of pass t draws from item_streams[i].child(t), matching what a
    per-item mc_sample would draw. Passes run in fixed chunks (stacked into
    one forward each); chunks may execute on a thread pool and reproduce the
    sequential results bit for bit because draws are keyed by (item, pass).
    """
    g = Graph(recording=False)
    n = len(item_streams)

    def one_chunk(ts: range):
        pass_streams = [item_streams[i].child(t) for t in ts for i in range(n)]
        noisy = np.stack([
            apply_input_noise(images[k % n], noise, ps.child(0))
            for k, ps in enumerate(pass_streams)
        ])
        fr = model.forward(noisy, stream=[ps.child(1) for ps in pass_streams], graph=g)
        p = g.apply(OpKind.SOFTMAX_OVER_CHANNEL, [fr.logits])
        new = (len(ts), n)
        return (
            p.data.reshape(new + p.data.shape[1:]),
            fr.feature_tap.data.reshape(new + fr.feature_tap.data.shape[1:]),
        )

    chunks = [range(t0, min(t0 + chunk, t_passes)) for t0 in range(0, t_passes, chunk)]
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one_chunk, chunks))
    else:
        results = [one_chunk(ts) for ts in chunks]
    probs = np.concatenate([r[0] for r in results])
    feats = np.concatenate([r[1] for r in results])
    return probs, feats


def train_step(
    state: TrainState,
    labeled: list[SampleRecord],
    unlabeled: list[SampleRecord],
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    lr: float,
    n_threads: int = 1,
) -> StepLog:
    step = state.step
    mode = train_cfg.mode
    records = list(labeled) + list(unlabeled)
    images = np.stack([r.image for r in records])  # (N, 1, H, W)
    n = len(records)
    step_stream = RngStream(train_cfg.seed).child(2).child(step)

    omega = L.rampup_weight(step, loss_cfg.ramp_len, loss_cfg.omega_max)

    # teacher MC sampling and per-item uncertainty (skipped in supervised mode)
    u_s = u_f = 0.0
    teacher_mean = None
    u_v = None
    if mode != "supervised":
        teacher_base = step_stream.child(0)
        probs, feats = mc_sample_rows(
            state.teacher, images, train_cfg.mc_passes,
            [teacher_base.child(i) for i in range(n)],
            train_cfg.noise(), n_threads=n_threads,
        )
        bundles = [
            U.estimate(
                McSamples(probs=probs[:, i], feats=feats[:, i]),
                normalize_entropy=train_cfg.normalize_entropy,
            )
            for i in range(n)
        ]
        u_s = float(np.mean([b.u_s for b in bundles]))
        u_f = float(np.mean([b.u_f for b in bundles]))
        teacher_mean = np.stack([U.mean_probs(probs[:, i]) for i in range(n)]).astype(np.float32)
        u_v = np.stack([b.u_v_map for b in bundles]).astype(np.float32)

    # student forward on clean inputs
    g = Graph(recording=True)
    student_base = step_stream.child(1)
    stream = None
    if train_cfg.student_dropout and model_cfg.dropout_p > 0:
        stream = [student_base.child(i) for i in range(n)]
    fr = state.student.forward(images, stream=stream, graph=g)
    s_probs = g.apply(OpKind.SOFTMAX_OVER_CHANNEL, [fr.logits])

    # losses
    sup = None
    if labeled:
        targets = {i: rec.mask for i, rec in enumerate(labeled)}
        sup = L.supervised_loss_rows(
            g, s_probs, targets, eps=loss_cfg.eps_u, smooth=loss_cfg.dice_smooth
        )
    elif mode == "supervised":
        raise ConfigError("supervised mode needs labeled samples in every batch")

    cons = None
    lam = 0.0
    if mode == "paper" or mode == "no_weight_ablation":
        t_prime = L.modify_teacher(g, teacher_mean, s_probs, u_v)
        cons = L.consistency_loss(g, t_prime, s_probs, u_v, beta=loss_cfg.beta, eps_u=loss_cfg.eps_u)
        if mode == "paper":
            lam = L.double_uncertainty_weight(omega, u_f, u_s, eps_f=loss_cfg.eps_f, eps_u=loss_cfg.eps_u)
        else:
            lam = omega
    elif mode == "mse_ablation":
        cons = L.mse_consistency(g, s_probs, teacher_mean)
        lam = omega

    total = L.total_loss(g, sup, cons, lam)
    if not math.isfinite(float(total.data)):
        raise NumericError(f"non-finite loss at step {step}")

    g.backward(total)
    sgd_step([p for _, p in state.student.parameters()], lr)
    ema_update(state.teacher, state.student, train_cfg.ema_alpha)

    # train-batch dice on labeled rows, for trend logging
    teacher_dice = student_dice = float("nan")
    if labeled:
        if teacher_mean is None:
            det = state.teacher.forward(images[: len(labeled)])
            t_pred = det.logits.data.argmax(axis=-3)
        else:
            t_pred = teacher_mean[: len(labeled)].argmax(axis=-3)
        s_pred = s_probs.data[: len(labeled)].argmax(axis=-3)
        teacher_dice = float(np.mean(
            [dice(t_pred[i] != 0, rec.mask != 0) for i, rec in enumerate(labeled)]
        ))
        student_dice = float(np.mean(
            [dice(s_pred[i] != 0, rec.mask != 0) for i, rec in enumerate(labeled)]
        ))

    state.step += 1
    log = StepLog(
        step=step,
        lr=lr,
        loss_sup=float(sup.data) if sup is not None else 0.0,
        loss_cons=float(cons.data) if cons is not None else 0.0,
        lam=lam,
        u_s=u_s,
        u_f=u_f,
        teacher_dice=teacher_dice,
        student_dice=student_dice,
    )
    state.logs.append(log)
    return log


def train(
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    dataset: Dataset,
) -> tuple[TrainState, RunReport]:
    model_cfg.validate()
    loss_cfg.validate()
    train_cfg.validate()
    manifest = dataset.manifest
    if not manifest.train_labeled:
        raise ConfigError("training needs at least one labeled sample")

    n_labeled_per_batch = train_cfg.labeled_per_batch
    if train_cfg.mode == "supervised":
        n_labeled_per_batch = train_cfg.batch_size
    n_threads = _n_threads()

    student = build(model_cfg, train_cfg.seed)
    state = TrainState(student=student, teacher=student.copy())
    batch_iter = batches(manifest, train_cfg.batch_size, n_labeled_per_batch, train_cfg.seed)

    for step in range(train_cfg.total_steps):
        lab_ids, unl_ids = next(batch_iter)
        lr = learning_rate(train_cfg.lr0, train_cfg.lr_period, step)
        try:
            train_step(
                state,
                dataset.records(lab_ids),
                dataset.records(unl_ids),
                model_cfg,
                loss_cfg,
                train_cfg,
                lr,
                n_threads=n_threads,
            )
        except NumericError as e:
            raise NumericError(f"step {step}: {e}") from e

    student_test = teacher_test = None
    if manifest.test:
        test_recs = dataset.records(manifest.test)
        student_test = evaluate(state.student, test_recs).to_dict()
        teacher_test = evaluate(state.teacher, test_recs).to_dict()
    report = RunReport(
        mode=train_cfg.mode,
        total_steps=train_cfg.total_steps,
        student_test=student_test,
        teacher_test=teacher_test,
    )
    return state, report


def evaluate(model: Model, records: list[SampleRecord]) -> MetricsReport:
    """Deterministic forward, argmax prediction, metrics vs ground truth."""
    report = MetricsReport()
    for rec in records:
        if rec.mask is None:
            raise ConfigError(f"evaluate needs a mask for sample {rec.id}")
        out = model.forward(rec.image)
        pred = out.logits.data.argmax(axis=0) != 0
        report.add_pair(pred, rec.mask != 0)
    return report
