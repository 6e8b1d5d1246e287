"""Synthetic labeled embedding streams with controllable distribution shift.

Stands in for an encoder + dataset pipeline: class means are random unit
vectors, "text" embeddings are perturbed copies of the means arranged in
template blocks (row m maps to class m % K), and stream samples are noisy
draws around a generating mean chosen per sample.  Three shift mechanisms
can be composed:

* MeanRotation  -- every class mean is rotated by a fixed angle inside a
  random 2-plane before sampling; the text bank keeps the unrotated means,
  so only the likelihood is wrong (a pure likelihood shift).
* ConfusionShift -- a sample labeled y is drawn from the mean of a class
  sampled from row y of a confusion matrix, while the stored label stays y;
  one-hot priors are then systematically wrong (a prior shift).
* LabelSkew     -- class frequencies deviate from uniform.

Reproducibility: every draw comes from the Philox4x64-10 counter-based
generator, keyed as (seed, lane) with one fixed lane per purpose (see the
_LANE_* constants).  Per stream sample the layout is fixed: one uniform for
the label, one uniform for the confusion resolution, then d standard
normals for the noise, whether or not each draw is used.  Identical specs
therefore produce identical streams anywhere.

Generation is pure given a spec; independent specs can run in parallel.
The oracle_* functions are deliberately naive (plain Python loops over
math.*) so they share no code path with the vectorized adapter.

This module also hosts the loop-based ReferenceAdapter used to pre-compute
expected accuracy margins for the directional acceptance experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ValidationError

__all__ = [
    "MeanRotation",
    "ConfusionShift",
    "LabelSkew",
    "ShiftModel",
    "StreamSpec",
    "SeparationError",
    "DEFAULT_MIN_SEPARATION",
    "make_class_means",
    "make_text_embeddings",
    "sample_stream",
    "stream_bundle",
    "cyclic_confusion",
    "oracle_membership",
    "oracle_posterior",
    "oracle_frozen",
    "oracle_running_state",
    "ReferenceAdapter",
]

# Philox key lanes; (seed, lane) selects an independent substream.
_LANE_MEANS = 0
_LANE_TEXT = 1
_LANE_STREAM = 2
_LANE_SHIFT = 3

DEFAULT_MIN_SEPARATION = 0.5


class SeparationError(ValidationError):
    """Requested pairwise separation could not be met within the retry budget."""


def _rng(seed: int, lane: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, lane]))


@dataclass(frozen=True)
class MeanRotation:
    """Rotate every class mean by ``angle`` radians in a random 2-plane."""

    angle: float

    def __post_init__(self):
        if not np.isfinite(self.angle):
            raise ValidationError("rotation angle must be finite")


@dataclass(frozen=True)
class ConfusionShift:
    """Draw the generating class from row y of a row-stochastic matrix."""

    confusion: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        mat = np.asarray(self.confusion, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValidationError("confusion matrix must be square")
        if mat.min(initial=0.0) < 0.0:
            raise ValidationError("confusion entries must be nonnegative")
        if np.abs(mat.sum(axis=1) - 1.0).max(initial=0.0) > 1e-9:
            raise ValidationError("confusion rows must sum to 1 within 1e-9")
        object.__setattr__(self, "confusion", tuple(tuple(row) for row in mat))

    def matrix(self) -> np.ndarray:
        return np.asarray(self.confusion, dtype=np.float64)


@dataclass(frozen=True)
class LabelSkew:
    """Relative class frequencies (any nonnegative weights, sum > 0)."""

    weights: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValidationError("skew weights must be a nonempty vector")
        if w.min(initial=0.0) < 0.0 or not w.sum() > 0.0:
            raise ValidationError("skew weights must be nonnegative with positive sum")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))


ShiftModel = MeanRotation | ConfusionShift | LabelSkew


@dataclass(frozen=True)
class StreamSpec:
    """Declarative description of one synthetic labeled stream."""

    num_classes: int
    embedding_dim: int
    num_samples: int
    templates_per_class: int = 1
    noise_scale: float = 0.0
    text_perturbation: float = 0.0
    shifts: tuple[ShiftModel, ...] = ()
    seed: int = 0
    min_separation: float = DEFAULT_MIN_SEPARATION

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError("num_classes must be at least 2")
        if self.embedding_dim < 2:
            raise ValidationError("embedding_dim must be at least 2")
        if self.num_samples < 1:
            raise ValidationError("num_samples must be positive")
        if self.templates_per_class < 1:
            raise ValidationError("templates_per_class must be positive")
        if self.noise_scale < 0.0 or self.text_perturbation < 0.0:
            raise ValidationError("noise scales must be nonnegative")
        shifts = self.shifts
        if isinstance(shifts, (MeanRotation, ConfusionShift, LabelSkew)):
            shifts = (shifts,)
        shifts = tuple(shifts)
        kinds = [type(s) for s in shifts]
        if len(set(kinds)) != len(kinds):
            raise ValidationError("at most one shift of each kind")
        for s in shifts:
            if isinstance(s, ConfusionShift) and len(s.confusion) != self.num_classes:
                raise ValidationError("confusion matrix size must match num_classes")
            if isinstance(s, LabelSkew) and len(s.weights) != self.num_classes:
                raise ValidationError("skew weight count must match num_classes")
        object.__setattr__(self, "shifts", shifts)

    @property
    def num_embeddings(self) -> int:
        return self.templates_per_class * self.num_classes

    def find(self, kind):
        for s in self.shifts:
            if isinstance(s, kind):
                return s
        return None


def cyclic_confusion(num_classes: int, diagonal: float) -> ConfusionShift:
    """Confusion with ``diagonal`` on class y and the rest on class (y+1) % K.

    The canonical asymmetric context shift: part of every class's samples
    look like the next class while keeping the original label.
    """
    if not (0.0 <= diagonal <= 1.0):
        raise ValidationError("diagonal must lie in [0, 1]")
    mat = np.zeros((num_classes, num_classes))
    idx = np.arange(num_classes)
    mat[idx, idx] = diagonal
    mat[idx, (idx + 1) % num_classes] += 1.0 - diagonal
    return ConfusionShift(tuple(tuple(row) for row in mat))


def make_class_means(
    num_classes: int,
    embedding_dim: int,
    seed: int,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    *,
    max_attempts_per_vector: int = 1000,
) -> np.ndarray:
    """K unit vectors with pairwise cosine <= 1 - min_separation.

    Rejection-samples one vector at a time.  A separation of exactly 2
    (antipodal) has zero measure under sampling, so that case is built
    directly and is only feasible for K <= 2.
    """
    if num_classes < 1 or embedding_dim < 2:
        raise ValidationError("need num_classes >= 1 and embedding_dim >= 2")
    threshold = 1.0 - min_separation
    if threshold < -1.0 - 1e-12:
        raise SeparationError(f"pairwise cosine <= {threshold:.3g} is impossible")
    gen = _rng(seed, _LANE_MEANS)
    if threshold <= -1.0 + 1e-12:
        if num_classes > 2:
            raise SeparationError("only 2 vectors can be mutually antipodal")
        v = gen.standard_normal(embedding_dim)
        v /= np.linalg.norm(v)
        return np.stack([v, -v])[:num_classes]

    means = np.empty((num_classes, embedding_dim))
    placed = 0
    while placed < num_classes:
        for attempt in range(max_attempts_per_vector):
            v = gen.standard_normal(embedding_dim)
            norm = np.linalg.norm(v)
            if norm < 1e-12:
                continue
            v /= norm
            if placed == 0 or float((means[:placed] @ v).max()) <= threshold + 1e-12:
                means[placed] = v
                placed += 1
                break
        else:
            raise SeparationError(
                f"could not place vector {placed + 1} of {num_classes} with "
                f"pairwise cosine <= {threshold:.3g} in {max_attempts_per_vector} tries"
            )
    return means


def make_text_embeddings(
    means: np.ndarray, templates_per_class: int, text_perturbation: float, seed: int
) -> np.ndarray:
    """M = c*K simulated text embeddings in template blocks (row m -> class m % K).

    The perturbation draw lives in the span of the class means: row m is
    normalize(means[m % K] + scale * combo) where combo is a random Gaussian
    combination of all K means (unit-scale on average).  Offsetting templates
    toward other classes rather than into arbitrary directions mirrors how
    prompt templates of varying quality behave in a real embedding space: in
    a high-dimensional ambient space an isotropic offset is almost surely
    orthogonal to every class and merely shrinks similarities uniformly,
    whereas template quality varies along the class manifold.  At large
    scales a fraction of templates lands closer to another class than to
    their own, which is exactly the regime where per-embedding priors are
    systematically wrong.  Draw layout: one standard normal per class mean
    per template row.
    """
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2:
        raise ValidationError("means must be a (K, d) array")
    if templates_per_class < 1:
        raise ValidationError("templates_per_class must be positive")
    if text_perturbation < 0.0:
        raise ValidationError("text_perturbation must be nonnegative")
    if text_perturbation == 0.0:
        return np.tile(means, (templates_per_class, 1))
    gen = _rng(seed, _LANE_TEXT)
    k, d = means.shape
    rows = np.empty((templates_per_class * k, d))
    for m in range(templates_per_class * k):
        combo = (gen.standard_normal(k) @ means) / math.sqrt(k)
        v = means[m % k] + text_perturbation * combo
        rows[m] = v / np.linalg.norm(v)
    return rows


def _rotated_means(means: np.ndarray, angle: float, seed: int) -> np.ndarray:
    # Rotate each mean inside its own random 2-plane through the mean.
    gen = _rng(seed, _LANE_SHIFT)
    out = np.empty_like(means)
    for k, mu in enumerate(means):
        while True:
            z = gen.standard_normal(means.shape[1])
            w = z - (z @ mu) * mu
            norm = np.linalg.norm(w)
            if norm > 1e-9:
                break
        w /= norm
        out[k] = math.cos(angle) * mu + math.sin(angle) * w
    return out


def sample_stream(spec: StreamSpec) -> tuple[np.ndarray, np.ndarray]:
    """Materialize the stream: (num_samples, d) embeddings and int64 labels.

    Labels store the ORIGINAL class y even under ConfusionShift, so the best
    accuracy reachable with one-hot priors is capped by the confusion
    diagonal.  Noise of scale 0 returns the generating means verbatim.
    """
    means = make_class_means(
        spec.num_classes, spec.embedding_dim, spec.seed, spec.min_separation
    )
    rotation = spec.find(MeanRotation)
    gen_means = (
        _rotated_means(means, rotation.angle, spec.seed) if rotation else means
    )
    skew = spec.find(LabelSkew)
    weights = (
        np.asarray(skew.weights, dtype=np.float64)
        if skew
        else np.ones(spec.num_classes)
    )
    cum_labels = np.cumsum(weights / weights.sum())
    confusion = spec.find(ConfusionShift)
    cum_conf = (
        np.cumsum(confusion.matrix(), axis=1) if confusion is not None else None
    )

    gen = _rng(spec.seed, _LANE_STREAM)
    n, d, k = spec.num_samples, spec.embedding_dim, spec.num_classes
    embeddings = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        u_label = gen.random()
        u_conf = gen.random()
        noise = gen.standard_normal(d)
        y = min(int(np.searchsorted(cum_labels, u_label, side="right")), k - 1)
        if cum_conf is not None:
            g = min(int(np.searchsorted(cum_conf[y], u_conf, side="right")), k - 1)
        else:
            g = y
        if spec.noise_scale == 0.0:
            embeddings[i] = gen_means[g]
        else:
            v = gen_means[g] + spec.noise_scale * noise
            embeddings[i] = v / np.linalg.norm(v)
        labels[i] = y
    return embeddings, labels


def stream_bundle(spec: StreamSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(text bank, stream embeddings, labels) with shared class means."""
    means = make_class_means(
        spec.num_classes, spec.embedding_dim, spec.seed, spec.min_separation
    )
    bank = make_text_embeddings(
        means, spec.templates_per_class, spec.text_perturbation, spec.seed
    )
    embeddings, labels = sample_stream(spec)
    return bank, embeddings, labels


# ---------------------------------------------------------------------------
# Naive oracles: plain Python arithmetic only, used as independent references.


def oracle_membership(bank, f, temperature: float) -> list[float]:
    """Double-loop softmax of temperature-scaled dot products."""
    rows = [[float(x) for x in row] for row in bank]
    fv = [float(x) for x in f]
    logits = []
    for row in rows:
        dot = 0.0
        for a, b in zip(row, fv):
            dot += a * b
        logits.append(temperature * dot)
    peak = max(logits)
    weights = [math.exp(v - peak) for v in logits]
    total = math.fsum(weights)
    return [w / total for w in weights]


def oracle_posterior(bank, priors, f, temperature: float) -> list[float]:
    """Naive likelihood-then-prior evaluation of the class posterior."""
    mem = oracle_membership(bank, f, temperature)
    rows = [[float(x) for x in row] for row in priors]
    k = len(rows[0])
    out = []
    for j in range(k):
        out.append(math.fsum(mem[m] * rows[m][j] for m in range(len(rows))))
    return out


def oracle_frozen(bank, f, temperature: float, num_classes: int) -> list[float]:
    """Naive no-adaptation baseline: softmax mass summed per class m % K."""
    mem = oracle_membership(bank, f, temperature)
    out = [0.0] * num_classes
    for m, w in enumerate(mem):
        out[m % num_classes] += w
    return out


def oracle_running_state(
    bank0,
    priors0,
    init_count_embedding: int,
    init_count_prior: int,
    updates,
) -> tuple[list[list[float]], list[list[float]]]:
    """Recompute final bank and priors from the recorded update list.

    ``updates`` is the sequence of (row, embedding, posterior) triples a run
    actually applied.  Each prior row is the exact closed-form weighted mean
    (n2 * row0 + sum of posteriors) / (n2 + count); each bank row is the
    normalized weighted sum n1 * row0 + sum of embeddings, whose direction
    the streaming recurrence tracks.
    """
    bank = [[float(x) for x in row] for row in bank0]
    priors = [[float(x) for x in row] for row in priors0]
    d = len(bank[0])
    k = len(priors[0])

    by_row: dict[int, list[tuple[list[float], list[float]]]] = {}
    for s, f, post in updates:
        by_row.setdefault(int(s), []).append(
            ([float(x) for x in f], [float(x) for x in post])
        )

    for s, items in by_row.items():
        n1 = float(init_count_embedding)
        acc = [n1 * bank[s][j] for j in range(d)]
        for fv, _ in items:
            for j in range(d):
                acc[j] += fv[j]
        norm = math.sqrt(math.fsum(x * x for x in acc))
        bank[s] = [x / norm for x in acc]

        n2 = float(init_count_prior)
        pacc = [n2 * priors[s][j] for j in range(k)]
        for _, post in items:
            for j in range(k):
                pacc[j] += post[j]
        denom = n2 + len(items)
        priors[s] = [x / denom for x in pacc]
    return bank, priors


class ReferenceAdapter:
    """Loop-based reference implementation of the full adaptation loop.

    Used to pre-compute the directional experiment fixtures and to
    cross-check the vectorized engine on short streams.  Pure Python floats
    throughout; deliberately shares no code with the fast path.
    """

    def __init__(self, bank, tau, init_count_embedding, init_count_prior,
                 temperature, num_classes):
        self.bank = [[float(x) for x in row] for row in bank]
        self.num_classes = num_classes
        m = len(self.bank)
        self.priors = [
            [1.0 if j == mm % num_classes else 0.0 for j in range(num_classes)]
            for mm in range(m)
        ]
        self.c1 = [int(init_count_embedding)] * m
        self.c2 = [int(init_count_prior)] * m
        self.tau = float(tau)
        self.temperature = float(temperature)

    def step(self, f, *, adapt_embedding=True, adapt_prior=True):
        """Returns (predicted_class, fired); mirrors the engine's ordering."""
        fv = [float(x) for x in f]
        logits = []
        for row in self.bank:
            dot = 0.0
            for a, b in zip(row, fv):
                dot += a * b
            logits.append(self.temperature * dot)
        peak = max(logits)
        weights = [math.exp(v - peak) for v in logits]
        total = math.fsum(weights)
        mem = [w / total for w in weights]
        post = [0.0] * self.num_classes
        for m, w in enumerate(mem):
            row = self.priors[m]
            for j in range(self.num_classes):
                post[j] += w * row[j]
        s = max(range(len(mem)), key=lambda m: (mem[m], -m))
        fired = mem[s] > self.tau
        if fired:
            if adapt_embedding:
                c = float(self.c1[s])
                blended = [
                    (c * self.bank[s][j] + fv[j]) / (c + 1.0)
                    for j in range(len(fv))
                ]
                norm = math.sqrt(math.fsum(x * x for x in blended))
                if norm >= 1e-12:
                    self.bank[s] = [x / norm for x in blended]
            self.c1[s] += 1
            if adapt_prior:
                c = float(self.c2[s])
                self.priors[s] = [
                    (c * self.priors[s][j] + post[j]) / (c + 1.0)
                    for j in range(self.num_classes)
                ]
            self.c2[s] += 1
        pred = max(range(self.num_classes), key=lambda j: (post[j], -j))
        return pred, fired

    def step_frozen(self, f):
        """Baseline prediction (no state change): class-summed softmax mass."""
        fv = [float(x) for x in f]
        logits = []
        for row in self.bank:
            dot = 0.0
            for a, b in zip(row, fv):
                dot += a * b
            logits.append(self.temperature * dot)
        peak = max(logits)
        weights = [math.exp(v - peak) for v in logits]
        total = math.fsum(weights)
        agg = [0.0] * self.num_classes
        for m, w in enumerate(weights):
            agg[m % self.num_classes] += w / total
        return max(range(self.num_classes), key=lambda j: (agg[j], -j))
