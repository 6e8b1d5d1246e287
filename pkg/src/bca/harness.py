"""Streaming evaluation: run a labeled stream through an adapter and score it.

One run is strictly sequential with batch size 1; the prediction for sample
i never sees information from later samples, and every prediction uses the
pre-update posterior of its own step (predict, then adapt).  Distinct runs
are independent and can execute in parallel; nothing here is shared.

Four ablation arms mirror the component analysis: Baseline freezes the
state and predicts with the bank alone; LikelihoodOnly adapts embeddings
but leaves priors untouched; PriorOnly adapts priors but leaves embeddings
untouched; Full runs both.  In every arm that fires updates, both counters
advance together so counter coupling holds regardless of the arm.
"""

from __future__ import annotations

import enum
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import core, embio
from .core import AdapterState, PhaseClock, ValidationError

__all__ = [
    "AblationMode",
    "CountBased",
    "MomentumBased",
    "UpdateStrategy",
    "PhaseTimings",
    "SampleLog",
    "RunReport",
    "run_stream",
    "sweep",
    "time_phases",
    "measure_step_latency",
]


class AblationMode(enum.Enum):
    BASELINE = "baseline"
    LIKELIHOOD_ONLY = "la"
    PRIOR_ONLY = "pa"
    FULL = "full"


@dataclass(frozen=True)
class CountBased:
    """The count-weighted running means exactly as written."""


@dataclass(frozen=True)
class MomentumBased:
    """Fixed convex update weight instead of the count ratio.

    An interpretation of the momentum-style variant: new = (1 - alpha) * old
    + alpha * incoming, renormalized for embeddings.  Not used in acceptance
    runs.
    """

    alpha: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError("momentum alpha must lie in (0, 1)")


UpdateStrategy = CountBased | MomentumBased


@dataclass(frozen=True)
class PhaseTimings:
    """Per-step wall times in seconds for the phases one step executes.

    membership = similarities + softmax, mixing = membership x priors,
    update = threshold decision + new-row computation, write = row stores
    and counter bumps.
    """

    membership_median_s: float
    mixing_median_s: float
    update_median_s: float
    write_median_s: float
    membership_mean_s: float
    mixing_mean_s: float
    update_mean_s: float
    write_mean_s: float
    samples: int

    @staticmethod
    def from_clock(clock: PhaseClock) -> "PhaseTimings":
        def _median(values):
            return statistics.median(values) / 1e9 if values else 0.0

        def _mean(values):
            return (sum(values) / len(values)) / 1e9 if values else 0.0

        return PhaseTimings(
            membership_median_s=_median(clock.membership_ns),
            mixing_median_s=_median(clock.mixing_ns),
            update_median_s=_median(clock.update_ns),
            write_median_s=_median(clock.write_ns),
            membership_mean_s=_mean(clock.membership_ns),
            mixing_mean_s=_mean(clock.mixing_ns),
            update_mean_s=_mean(clock.update_ns),
            write_mean_s=_mean(clock.write_ns),
            samples=len(clock),
        )

    def as_dict(self) -> dict:
        return {
            "t2_membership_median_s": self.membership_median_s,
            "t3_mixing_median_s": self.mixing_median_s,
            "t4cal_update_median_s": self.update_median_s,
            "t4rw_write_median_s": self.write_median_s,
            "t2_membership_mean_s": self.membership_mean_s,
            "t3_mixing_mean_s": self.mixing_mean_s,
            "t4cal_update_mean_s": self.update_mean_s,
            "t4rw_write_mean_s": self.write_mean_s,
            "timed_samples": self.samples,
        }


@dataclass
class SampleLog:
    """Per-sample records of one run, column-wise."""

    predicted: np.ndarray
    label: np.ndarray
    correct: np.ndarray
    updated: np.ndarray
    selected: np.ndarray
    selected_prob: np.ndarray

    def __len__(self) -> int:
        return len(self.predicted)


@dataclass
class RunReport:
    """Summary of one streaming run plus its per-sample log."""

    overall_accuracy: float
    last_half_accuracy: float
    windowed_accuracy: tuple[tuple[int, float], ...]
    updates_fired: int
    phase_timings: PhaseTimings
    config: dict
    seed: int | None
    samples: SampleLog

    def summary_dict(self) -> dict:
        out = {
            "overall_accuracy": repr(self.overall_accuracy),
            "last_half_accuracy": repr(self.last_half_accuracy),
            "updates_fired": self.updates_fired,
            "num_samples": len(self.samples),
        }
        if self.seed is not None:
            out["seed"] = self.seed
        for key, value in self.config.items():
            out[f"config.{key}"] = value
        for key, value in self.phase_timings.as_dict().items():
            out[f"timing.{key}"] = value
        for start, acc in self.windowed_accuracy:
            out[f"window.{start}"] = repr(acc)
        return out


def _validated_stream(state: AdapterState, embeddings, labels):
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != state.config.embedding_dim:
        raise ValidationError(
            f"stream shape {emb.shape} does not match embedding_dim "
            f"{state.config.embedding_dim}"
        )
    if labels is None:
        raise ValidationError("evaluation requires a labeled stream")
    lab = np.asarray(labels, dtype=np.int64)
    if lab.shape != (emb.shape[0],):
        raise ValidationError("labels must align one-to-one with embeddings")
    if lab.min(initial=0) < 0:
        raise ValidationError(
            "stream contains unlabeled samples (-1); evaluation needs ground truth"
        )
    if lab.max(initial=0) >= state.config.num_classes:
        raise ValidationError("labels exceed the configured class count")
    norm_err = np.abs(np.linalg.norm(emb, axis=1) - 1.0)
    if norm_err.max(initial=0.0) > core.NORM_REJECT_TOL:
        worst = int(norm_err.argmax())
        raise ValidationError(
            f"stream sample {worst} is not unit-norm "
            f"(norm error {norm_err[worst]:.3g})"
        )
    return emb, lab


def _run_samples(
    state: AdapterState,
    emb: np.ndarray,
    lab: np.ndarray,
    mode: AblationMode,
    strategy: UpdateStrategy,
    clock: PhaseClock | None,
    checkpoint_every: int | None = None,
    checkpoint_dir=None,
) -> SampleLog:
    n = emb.shape[0]
    predicted = np.empty(n, dtype=np.int64)
    updated = np.zeros(n, dtype=bool)
    selected = np.empty(n, dtype=np.int64)
    selected_prob = np.empty(n, dtype=np.float64)

    momentum = strategy.alpha if isinstance(strategy, MomentumBased) else None
    baseline = mode is AblationMode.BASELINE
    if baseline:
        # Frozen arm: same mixture arithmetic, permanently one-hot priors,
        # and no state writes at all.
        onehot = core.one_hot_priors(
            state.config.num_class_embeddings, state.config.num_classes
        )

    for i in range(n):
        if baseline:
            timed = clock is not None
            t0 = time.perf_counter_ns() if timed else 0
            membership = core.membership_probs(state, emb[i])
            t1 = time.perf_counter_ns() if timed else 0
            posterior = membership @ onehot
            t2 = time.perf_counter_ns() if timed else 0
            s = int(np.argmax(membership))
            t3 = time.perf_counter_ns() if timed else 0
            if timed:
                clock.record(t1 - t0, t2 - t1, t3 - t2, 0)
            predicted[i] = int(np.argmax(posterior))
            selected[i] = s
            selected_prob[i] = float(membership[s])
        else:
            outcome = core.step(
                state,
                emb[i],
                adapt_embedding=mode
                in (AblationMode.LIKELIHOOD_ONLY, AblationMode.FULL),
                adapt_prior=mode in (AblationMode.PRIOR_ONLY, AblationMode.FULL),
                momentum=momentum,
                clock=clock,
            )
            predicted[i] = outcome.predicted_class
            updated[i] = outcome.updated
            selected[i] = outcome.selected_index
            selected_prob[i] = outcome.selected_prob
        if checkpoint_every and (i + 1) % checkpoint_every == 0:
            embio.save_state(
                Path(checkpoint_dir) / f"state-{i + 1:08d}.bcas", state
            )

    return SampleLog(
        predicted=predicted,
        label=lab.copy(),
        correct=predicted == lab,
        updated=updated,
        selected=selected,
        selected_prob=selected_prob,
    )


def last_half_start(n: int) -> int:
    """First index of the trailing-half window: ceil(n / 2)."""
    return math.ceil(n / 2)


def summarize(samples: SampleLog, window_size: int) -> tuple[float, float, tuple]:
    n = len(samples)
    overall = float(samples.correct.mean())
    half = float(samples.correct[last_half_start(n):].mean()) if n > 1 else overall
    windows = tuple(
        (start, float(samples.correct[start : start + window_size].mean()))
        for start in range(0, n, window_size)
    )
    return overall, half, windows


def run_stream(
    state: AdapterState,
    embeddings,
    labels,
    *,
    mode: AblationMode = AblationMode.FULL,
    strategy: UpdateStrategy = CountBased(),
    window_size: int = 500,
    seed: int | None = None,
    checkpoint_every: int | None = None,
    checkpoint_dir=None,
) -> RunReport:
    """Stream every sample through the adapter in order and score the run.

    The state is mutated in place except in Baseline mode, which provably
    leaves it untouched.  ``checkpoint_every`` writes a state checkpoint
    into ``checkpoint_dir`` after every that-many samples.
    """
    emb, lab = _validated_stream(state, embeddings, labels)
    if window_size < 1:
        raise ValidationError("window_size must be positive")
    if checkpoint_every is not None:
        if checkpoint_every < 1:
            raise ValidationError("checkpoint_every must be positive")
        if checkpoint_dir is None:
            raise ValidationError("checkpoint_every requires checkpoint_dir")

    clock = PhaseClock()
    samples = _run_samples(
        state, emb, lab, mode, strategy, clock, checkpoint_every, checkpoint_dir
    )
    overall, half, windows = summarize(samples, window_size)
    cfg = state.config
    config_echo = {
        "mode": mode.value,
        "strategy": type(strategy).__name__,
        "num_class_embeddings": cfg.num_class_embeddings,
        "num_classes": cfg.num_classes,
        "embedding_dim": cfg.embedding_dim,
        "tau": cfg.tau,
        "init_count_embedding": cfg.init_count_embedding,
        "init_count_prior": cfg.init_count_prior,
        "temperature": cfg.temperature,
        "window_size": window_size,
    }
    if isinstance(strategy, MomentumBased):
        config_echo["momentum_alpha"] = strategy.alpha
    return RunReport(
        overall_accuracy=overall,
        last_half_accuracy=half,
        windowed_accuracy=windows,
        updates_fired=int(samples.updated.sum()),
        phase_timings=PhaseTimings.from_clock(clock),
        config=config_echo,
        seed=seed,
        samples=samples,
    )


def sweep(
    text_bank,
    embeddings,
    labels,
    *,
    num_classes: int,
    taus,
    n1s,
    n2s,
    temperature: float = 100.0,
    mode: AblationMode = AblationMode.FULL,
    strategy: UpdateStrategy = CountBased(),
    window_size: int = 500,
) -> list[tuple[dict, RunReport]]:
    """One full run per (tau, n1, n2) grid cell over the same stream.

    All cells replay the identical stream, so rows are directly comparable.
    Failures are re-raised annotated with the offending cell.
    """
    cells = [
        {"tau": float(t), "n1": int(a), "n2": int(b)}
        for t in taus
        for a in n1s
        for b in n2s
    ]
    if not cells:
        raise ValidationError("sweep grid is empty")
    bank = np.asarray(text_bank, dtype=np.float64)
    results = []
    for cell in cells:
        try:
            config = core.AdapterConfig(
                num_class_embeddings=bank.shape[0],
                num_classes=num_classes,
                embedding_dim=bank.shape[1],
                tau=cell["tau"],
                init_count_embedding=cell["n1"],
                init_count_prior=cell["n2"],
                temperature=temperature,
            )
            state = core.init_state(bank, config)
            report = run_stream(
                state,
                embeddings,
                labels,
                mode=mode,
                strategy=strategy,
                window_size=window_size,
            )
        except Exception as exc:
            raise type(exc)(f"sweep cell {cell}: {exc}") from exc
        results.append((cell, report))
    return results


def time_phases(
    state: AdapterState, embeddings, repetitions: int, *, min_samples: int = 1000
) -> PhaseTimings:
    """Median per-phase wall times over ``repetitions`` full-mode replays.

    Each repetition runs on a fresh copy of the state; the input stream must
    be long enough for stable medians.
    """
    if repetitions < 1:
        raise ValidationError("repetitions must be positive")
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < min_samples:
        raise ValidationError(
            f"need at least {min_samples} samples for stable medians, "
            f"got {0 if emb.ndim != 2 else emb.shape[0]}"
        )
    clock = PhaseClock()
    dummy_labels = np.zeros(emb.shape[0], dtype=np.int64)
    for _ in range(repetitions):
        _run_samples(
            state.copy(), emb, dummy_labels, AblationMode.FULL, CountBased(), clock
        )
    return PhaseTimings.from_clock(clock)


def measure_step_latency(
    state: AdapterState, embeddings, iterations: int
) -> tuple[float, float]:
    """(median, mean) wall seconds of the untimed full step on a state copy."""
    if iterations < 1:
        raise ValidationError("iterations must be positive")
    emb = np.asarray(embeddings, dtype=np.float64)
    working = state.copy()
    durations = []
    for i in range(iterations):
        f = emb[i % emb.shape[0]]
        t0 = time.perf_counter_ns()
        core.step(working, f)
        durations.append(time.perf_counter_ns() - t0)
    return (
        statistics.median(durations) / 1e9,
        (sum(durations) / len(durations)) / 1e9,
    )
