"""State and update rules for streaming Bayesian class adaptation.

The adapter keeps a bank of M unit-norm class embeddings (row m votes for
class m % K), one K-dimensional prior row per embedding, and two update
counters.  Each arriving embedding yields a membership distribution over the
bank (softmax of temperature-scaled cosines), a class posterior (the
membership-weighted mixture of prior rows), and -- when the top membership
clears the threshold -- a count-weighted running-mean update of the matched
embedding and of its prior.

Numerical contract: the bank and prior arrays are float64 but every stored
value is exactly representable in float32, so checkpoints (which are float32
on disk) round-trip losslessly and a resumed run is bit-identical to an
uninterrupted one.  Update arithmetic runs in float64 and is quantized back
to the float32 grid once per update.  The per-update quantization leaves a
small rounding residue in a prior row's sum (order 2e-9 per update to that
row), so row sums track 1 to about 1e-6 over a few hundred updates per row
and drift proportionally beyond that; bank rows are renormalized every
update and hold their unit norm to ~1e-7 indefinitely.

Concurrency: steps on one AdapterState are strictly sequential; each update
changes the state used by the next prediction.  Hand a state across threads
only at step boundaries.  Independent states share nothing.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AdapterConfig",
    "AdapterState",
    "StepOutcome",
    "ValidationError",
    "InvariantViolationError",
    "DegenerateUpdateWarning",
    "init_state",
    "one_hot_priors",
    "membership_probs",
    "posterior_from_membership",
    "select",
    "update_class_embedding",
    "update_prior",
    "step",
    "frozen_posterior",
]

# Inputs whose norm is further than this from 1 are treated as upstream bugs
# and rejected; we never renormalize silently.
NORM_REJECT_TOL = 1e-3
# Loader-side rejection threshold for prior rows (runtime arithmetic keeps
# rows far tighter; see tests).
PRIOR_SUM_REJECT_TOL = 1e-4

_DEGENERATE_NORM = 1e-12


class ValidationError(ValueError):
    """An input violates an operation's preconditions."""


class InvariantViolationError(Exception):
    """A state (typically a loaded checkpoint) violates adapter invariants."""


class DegenerateUpdateWarning(RuntimeWarning):
    """A bank update collapsed to near-zero norm and was skipped."""


def _quantize(a: np.ndarray) -> np.ndarray:
    # Snap to the float32 grid while keeping float64 dtype for fast math.
    return a.astype(np.float32).astype(np.float64)


def _as_embedding(f, dim: int, what: str = "embedding") -> np.ndarray:
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise ValidationError(
            f"{what} must be a length-{dim} vector, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite entries")
    err = abs(float(np.linalg.norm(arr)) - 1.0)
    if err > NORM_REJECT_TOL:
        raise ValidationError(
            f"{what} is not unit-norm (norm error {err:.3g}); "
            "normalize upstream instead of relying on silent repair"
        )
    return arr


@dataclass(frozen=True)
class AdapterConfig:
    """Dimensions and hyperparameters of one adapter.

    ``init_count_embedding`` / ``init_count_prior`` are the virtual initial
    counts that give inertia to the embedding and prior running means; their
    defaults (30000 / 10, with threshold 0.3) are the standard OOD preset.
    ``temperature`` scales cosine logits before the softmax; without it a
    large bank could never reach practical thresholds.
    """

    num_class_embeddings: int
    num_classes: int
    embedding_dim: int
    tau: float = 0.3
    init_count_embedding: int = 30000
    init_count_prior: int = 10
    temperature: float = 100.0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValidationError("num_classes must be positive")
        if self.num_class_embeddings < self.num_classes:
            raise ValidationError(
                f"need at least one embedding per class: "
                f"M={self.num_class_embeddings} < K={self.num_classes}"
            )
        if self.embedding_dim < 1:
            raise ValidationError("embedding_dim must be positive")
        if not (0.0 <= self.tau <= 1.0):
            raise ValidationError(f"tau must lie in [0, 1], got {self.tau}")
        if self.init_count_embedding < 0 or self.init_count_prior < 0:
            raise ValidationError("initial counts must be nonnegative")
        if not (self.temperature > 0.0 and np.isfinite(self.temperature)):
            raise ValidationError("temperature must be positive and finite")


@dataclass
class AdapterState:
    """Full mutable adaptation state: bank U, priors V, counters C1/C2.

    ``bank`` is (M, d) with unit rows, ``priors`` is (M, K) row-stochastic,
    the counters are (M,) int64.  Row m of both matrices belongs to class
    m % K and that mapping never changes.
    """

    config: AdapterConfig
    bank: np.ndarray
    priors: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    def class_of(self, m: int) -> int:
        return m % self.config.num_classes

    def copy(self) -> "AdapterState":
        return AdapterState(
            config=self.config,
            bank=self.bank.copy(),
            priors=self.priors.copy(),
            c1=self.c1.copy(),
            c2=self.c2.copy(),
        )

    def equals(self, other: "AdapterState") -> bool:
        """Bit-level equality of configuration, matrices and counters."""
        return (
            self.config == other.config
            and np.array_equal(self.bank, other.bank)
            and np.array_equal(self.priors, other.priors)
            and np.array_equal(self.c1, other.c1)
            and np.array_equal(self.c2, other.c2)
        )

    def validate(self) -> None:
        """Check all structural invariants; raise InvariantViolationError.

        Uses the loader-side rejection tolerances (norms within 1e-3, prior
        row sums within 1e-4): generous enough for float32 storage, tight
        enough to catch corrupt or foreign data.
        """
        cfg = self.config
        m, k, d = cfg.num_class_embeddings, cfg.num_classes, cfg.embedding_dim
        if self.bank.shape != (m, d):
            raise InvariantViolationError(
                f"bank shape {self.bank.shape} != ({m}, {d})"
            )
        if self.priors.shape != (m, k):
            raise InvariantViolationError(
                f"priors shape {self.priors.shape} != ({m}, {k})"
            )
        if self.c1.shape != (m,) or self.c2.shape != (m,):
            raise InvariantViolationError("counter length != num_class_embeddings")
        if not np.all(np.isfinite(self.bank)):
            raise InvariantViolationError("bank contains non-finite entries")
        if not np.all(np.isfinite(self.priors)):
            raise InvariantViolationError("priors contain non-finite entries")
        norm_err = np.abs(np.linalg.norm(self.bank, axis=1) - 1.0)
        if norm_err.max(initial=0.0) > NORM_REJECT_TOL:
            worst = int(norm_err.argmax())
            raise InvariantViolationError(
                f"bank row {worst} norm error {norm_err[worst]:.3g} "
                f"exceeds {NORM_REJECT_TOL}"
            )
        if self.priors.min(initial=0.0) < -1e-6:
            raise InvariantViolationError("priors contain negative entries")
        sum_err = np.abs(self.priors.sum(axis=1) - 1.0)
        if sum_err.max(initial=0.0) > PRIOR_SUM_REJECT_TOL:
            worst = int(sum_err.argmax())
            raise InvariantViolationError(
                f"prior row {worst} sums to {self.priors[worst].sum():.6g}, "
                f"off by more than {PRIOR_SUM_REJECT_TOL}"
            )
        upd1 = self.c1 - cfg.init_count_embedding
        upd2 = self.c2 - cfg.init_count_prior
        if upd1.min(initial=0) < 0 or upd2.min(initial=0) < 0:
            raise InvariantViolationError("counters below their initial values")
        if not np.array_equal(upd1, upd2):
            raise InvariantViolationError(
                "update counters are decoupled (c1 - n1 != c2 - n2)"
            )


@dataclass(frozen=True)
class StepOutcome:
    """Result of one adaptation step (prediction uses pre-update state)."""

    membership: np.ndarray
    posterior: np.ndarray
    selected_index: int
    selected_prob: float
    updated: bool
    predicted_class: int


def one_hot_priors(num_class_embeddings: int, num_classes: int) -> np.ndarray:
    """The initial prior matrix: row m is one-hot at class m % K."""
    v = np.zeros((num_class_embeddings, num_classes), dtype=np.float64)
    v[np.arange(num_class_embeddings), np.arange(num_class_embeddings) % num_classes] = 1.0
    return v


def init_state(text_embeddings, config: AdapterConfig) -> AdapterState:
    """Build the initial state from M unit-norm text embeddings.

    Row m of the bank is the m-th given embedding and represents class
    m % K; priors start one-hot; counters start at their configured
    initial values.
    """
    m, d = config.num_class_embeddings, config.embedding_dim
    bank = np.asarray(text_embeddings, dtype=np.float64)
    if bank.shape != (m, d):
        raise ValidationError(
            f"expected {m} embeddings of dimension {d}, got shape {bank.shape}"
        )
    if not np.all(np.isfinite(bank)):
        raise ValidationError("text embeddings contain non-finite entries")
    norm_err = np.abs(np.linalg.norm(bank, axis=1) - 1.0)
    if norm_err.max(initial=0.0) > NORM_REJECT_TOL:
        worst = int(norm_err.argmax())
        raise ValidationError(
            f"text embedding {worst} is not unit-norm "
            f"(norm error {norm_err[worst]:.3g}); refusing to renormalize"
        )
    return AdapterState(
        config=config,
        bank=_quantize(bank),
        priors=one_hot_priors(m, config.num_classes),
        c1=np.full(m, config.init_count_embedding, dtype=np.int64),
        c2=np.full(m, config.init_count_prior, dtype=np.int64),
    )


def _softmax_memberships(bank: np.ndarray, f: np.ndarray, temperature: float) -> np.ndarray:
    # Unit vectors: cosine is the plain dot product.
    logits = temperature * (bank @ f)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def membership_probs(state: AdapterState, f) -> np.ndarray:
    """P(embedding m | f): softmax over temperature-scaled cosines."""
    fv = _as_embedding(f, state.config.embedding_dim, "query embedding")
    return _softmax_memberships(state.bank, fv, state.config.temperature)


def posterior_from_membership(membership, priors) -> np.ndarray:
    """Class posterior: the membership-weighted mixture of prior rows."""
    mem = np.asarray(membership, dtype=np.float64)
    pri = np.asarray(priors, dtype=np.float64)
    if mem.ndim != 1 or pri.ndim != 2 or pri.shape[0] != mem.shape[0]:
        raise ValidationError(
            f"membership length {mem.shape} does not match prior rows {pri.shape}"
        )
    if abs(float(mem.sum()) - 1.0) > 1e-6:
        raise ValidationError("membership does not sum to 1 within 1e-6")
    return mem @ pri


def select(membership) -> tuple[int, float]:
    """Most likely bank row and its probability; ties go to the lowest index."""
    mem = np.asarray(membership, dtype=np.float64)
    if mem.ndim != 1 or mem.shape[0] == 0:
        raise ValidationError("membership must be a nonempty vector")
    s = int(np.argmax(mem))
    return s, float(mem[s])


def _check_row_index(state: AdapterState, s: int) -> None:
    if not (0 <= s < state.config.num_class_embeddings):
        raise ValidationError(
            f"row index {s} out of range [0, {state.config.num_class_embeddings})"
        )


def _blend_embedding(
    state: AdapterState, s: int, fv: np.ndarray, momentum: float | None
) -> np.ndarray | None:
    # Returns the new float32-exact row, or None when the blend degenerates.
    if momentum is None:
        c = float(state.c1[s])
        blended = (c * state.bank[s] + fv) / (c + 1.0)
    else:
        blended = (1.0 - momentum) * state.bank[s] + momentum * fv
    norm = float(np.linalg.norm(blended))
    if norm < _DEGENERATE_NORM:
        return None
    return _quantize(blended / norm)


def _blend_prior(
    state: AdapterState, s: int, post: np.ndarray, momentum: float | None
) -> np.ndarray:
    if momentum is None:
        c = float(state.c2[s])
        blended = (c * state.priors[s] + post) / (c + 1.0)
    else:
        blended = (1.0 - momentum) * state.priors[s] + momentum * post
    return _quantize(blended)


def _warn_degenerate(s: int) -> None:
    warnings.warn(
        f"bank row {s} update degenerated to near-zero norm; keeping old row",
        DegenerateUpdateWarning,
        stacklevel=3,
    )


def update_class_embedding(
    state: AdapterState, s: int, f, *, momentum: float | None = None
) -> None:
    """Pull bank row s toward f via the count-weighted running mean.

    The blended vector is renormalized, so only the direction of the
    weighted sum matters.  If the blend degenerates to near-zero norm
    (antipodal inputs at tiny counts) the row is kept, the counter still
    advances, and a DegenerateUpdateWarning is emitted so counter coupling
    survives.

    ``momentum`` switches to a fixed convex weight (the momentum-based
    strategy): new = (1 - a) * old + a * f, renormalized.
    """
    _check_row_index(state, s)
    fv = _as_embedding(f, state.config.embedding_dim, "update embedding")
    new_row = _blend_embedding(state, s, fv, momentum)
    if new_row is None:
        _warn_degenerate(s)
    else:
        state.bank[s] = new_row
    state.c1[s] += 1


def _check_posterior(state: AdapterState, posterior) -> np.ndarray:
    post = np.asarray(posterior, dtype=np.float64)
    if post.shape != (state.config.num_classes,):
        raise ValidationError(
            f"posterior must have length {state.config.num_classes}, "
            f"got shape {post.shape}"
        )
    if not np.all(np.isfinite(post)) or post.min(initial=0.0) < -1e-9:
        raise ValidationError("posterior must be a finite nonnegative vector")
    if abs(float(post.sum()) - 1.0) > 1e-6:
        raise ValidationError("posterior does not sum to 1 within 1e-6")
    return post


def update_prior(
    state: AdapterState, s: int, posterior, *, momentum: float | None = None
) -> None:
    """Blend posterior into prior row s via the count-weighted running mean."""
    _check_row_index(state, s)
    post = _check_posterior(state, posterior)
    state.priors[s] = _blend_prior(state, s, post, momentum)
    state.c2[s] += 1


def step(
    state: AdapterState,
    f,
    *,
    adapt_embedding: bool = True,
    adapt_prior: bool = True,
    momentum: float | None = None,
    clock: "PhaseClock | None" = None,
) -> StepOutcome:
    """One full adaptation step: predict, then conditionally update.

    Membership and posterior are computed before any mutation; the returned
    posterior is the prediction and is the same vector used to update the
    matched prior row.  The update fires only when the top membership
    strictly exceeds the threshold.  When one adaptation side is disabled
    its counter still advances on fire, keeping c1/c2 in lockstep.

    State is untouched if any argument fails validation.
    """
    cfg = state.config
    fv = _as_embedding(f, cfg.embedding_dim, "stream embedding")

    timed = clock is not None
    t0 = time.perf_counter_ns() if timed else 0
    membership = _softmax_memberships(state.bank, fv, cfg.temperature)
    t1 = time.perf_counter_ns() if timed else 0
    posterior = membership @ state.priors
    t2 = time.perf_counter_ns() if timed else 0

    # Update compute: threshold decision plus the blended rows themselves.
    s = int(np.argmax(membership))
    p_s = float(membership[s])
    fired = p_s > cfg.tau
    new_row = new_prior = None
    degenerate = False
    if fired:
        if adapt_embedding:
            new_row = _blend_embedding(state, s, fv, momentum)
            degenerate = new_row is None
        if adapt_prior:
            new_prior = _blend_prior(state, s, posterior, momentum)
    t3 = time.perf_counter_ns() if timed else 0

    # State write: row stores and counter bumps only.
    if fired:
        if new_row is not None:
            state.bank[s] = new_row
        if new_prior is not None:
            state.priors[s] = new_prior
        state.c1[s] += 1
        state.c2[s] += 1
    t4 = time.perf_counter_ns() if timed else 0

    if degenerate:
        _warn_degenerate(s)
    if timed:
        clock.record(t1 - t0, t2 - t1, t3 - t2, t4 - t3)

    return StepOutcome(
        membership=membership,
        posterior=posterior,
        selected_index=s,
        selected_prob=p_s,
        updated=fired,
        predicted_class=int(np.argmax(posterior)),
    )


def frozen_posterior(bank, f, temperature: float, num_classes: int) -> np.ndarray:
    """No-adaptation baseline prediction from the bank alone.

    Equivalent to the posterior under permanently one-hot priors: with
    M == K this is the plain softmax over class cosines; with M > K the
    softmax mass of rows sharing m % K is summed per class.
    """
    bank_arr = np.asarray(bank, dtype=np.float64)
    if bank_arr.ndim != 2:
        raise ValidationError("bank must be a 2-d array")
    m, d = bank_arr.shape
    if m < num_classes:
        raise ValidationError(f"bank has {m} rows but {num_classes} classes")
    fv = _as_embedding(f, d, "query embedding")
    membership = _softmax_memberships(bank_arr, fv, temperature)
    return posterior_from_membership(membership, one_hot_priors(m, num_classes))


class PhaseClock:
    """Accumulates per-step phase durations in nanoseconds.

    Phases: membership (similarities + softmax), mixing (membership x priors),
    update compute, state write.
    """

    __slots__ = ("membership_ns", "mixing_ns", "update_ns", "write_ns")

    def __init__(self):
        self.membership_ns: list[int] = []
        self.mixing_ns: list[int] = []
        self.update_ns: list[int] = []
        self.write_ns: list[int] = []

    def record(self, membership: int, mixing: int, update: int, write: int) -> None:
        self.membership_ns.append(membership)
        self.mixing_ns.append(mixing)
        self.update_ns.append(update)
        self.write_ns.append(write)

    def __len__(self) -> int:
        return len(self.membership_ns)
