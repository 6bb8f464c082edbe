"""Design loops: gradient-based methods, optimizers, and discrete baselines.

Five gradient-based methods share one step loop:

* ``PWM``          -- optimize the softmax relaxation directly,
* ``FAST_PWM``     -- same, with logits normalized first,
* ``SEQPROP``      -- optimize through discrete categorical samples with a
  straight-through estimator,
* ``FAST_SEQPROP`` -- SEQPROP plus logit normalization (the headline method),
* ``GUMBEL_FAST``  -- normalized logits with Gumbel-softmax sampling.

Everything is maximization of an oracle score, implemented as descent on its
negation so one optimizer code path serves all methods. Restarts are
independent: restart k draws from the substream ``master_seed + k``, so runs
are reproducible and embarrassingly parallel.

Two discrete baselines operate on raw one-hot sequences: a strictly greedy
mutation search (:func:`evolution_step`) and simulated annealing with the
Metropolis criterion (:func:`anneal_step`).
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import Alphabet, RngState, decode, one_hot_encode
from .errors import ConfigError, DegenerateInput, DimensionMismatch
from .normalizer import (
    DenomKind,
    GradMode,
    NormMode,
    ScaleOffset,
    backprop_normalize,
    normalize,
)
from .objectives import (
    activity_penalty,
    entropy_penalty,
    likelihood_margin_loss,
    mean_entropy_bits,
    survival_objective,
    test_loss,
)
from .sampler import (
    GumbelConfig,
    StEstimator,
    backprop_st,
    sample_categorical,
    sample_gumbel,
    softmax_backprop,
    softmax_rows,
)

__all__ = [
    "DesignMethod",
    "OptimizerState",
    "optimizer_update",
    "ObjectiveStack",
    "StepSettings",
    "DesignState",
    "TrajectoryRecord",
    "design_step",
    "run_design",
    "RunResult",
    "metropolis_accept",
    "AnnealState",
    "anneal_step",
    "evolution_step",
    "run_anneal",
]


class DesignMethod(Enum):
    PWM = "pwm"
    FAST_PWM = "fast_pwm"
    SEQPROP = "seqprop"
    FAST_SEQPROP = "fast_seqprop"
    GUMBEL_FAST = "gumbel_fast"


_NORMALIZED = {DesignMethod.FAST_PWM, DesignMethod.FAST_SEQPROP, DesignMethod.GUMBEL_FAST}
_RELAXED = {DesignMethod.PWM, DesignMethod.FAST_PWM}


@dataclass
class OptimizerState:
    """SGD (optional momentum) or Adam over one flat parameter vector."""

    kind: str = "adam"
    lr: float = 0.001
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ConfigError("optimizer.lr must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")

    def update(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """One descent step on the loss; returns the updated parameters."""
        params = np.asarray(params, dtype=float)
        grads = np.asarray(grads, dtype=float)
        if params.shape != grads.shape:
            raise DimensionMismatch(f"params {params.shape} vs grads {grads.shape}")
        if self.kind == "sgd":
            if self.momentum:
                if self.m is None:
                    self.m = np.zeros_like(params)
                self.m = self.momentum * self.m + grads
                return params - self.lr * self.m
            return params - self.lr * grads
        self.step += 1
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads**2
        m_hat = self.m / (1.0 - self.beta1**self.step)
        v_hat = self.v / (1.0 - self.beta2**self.step)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def optimizer_update(opt: OptimizerState, params, grads) -> np.ndarray:
    return opt.update(params, grads)


@dataclass
class ObjectiveStack:
    """Penalties composed on top of the fitness term.

    ``survival`` replaces the plain -score term with the uncertainty-aware
    survival objective; the other entries add to it.
    """

    entropy_lam: float = 0.0
    markov_model: object | None = None
    markov_cfg: object | None = None
    survival: object | None = None
    activity: object | None = None


@dataclass(frozen=True)
class StepSettings:
    """Per-method knobs shared by every step of one run."""

    st_estimator: StEstimator = StEstimator.SOFTMAX_ST
    gumbel: GumbelConfig = GumbelConfig(0.1)
    norm_mode: NormMode = NormMode.INSTANCE
    denom: DenomKind = DenomKind.STD
    grad_mode: GradMode = GradMode.PAPER_LITERAL


DEFAULT_SETTINGS = StepSettings()


@dataclass
class DesignState:
    """Trainable state of one restart: logits, scale/offset, optimizer, RNG."""

    logits: np.ndarray
    so: ScaleOffset
    optimizer: OptimizerState
    rng: RngState
    alphabet: Alphabet
    iteration: int = 0
    best_score: float = -np.inf
    best_seq: str = ""
    oracle_calls: int = 0

    def observe(self, score: float, x: np.ndarray):
        if score > self.best_score:
            self.best_score = score
            self.best_seq = decode(x, self.alphabet)


@dataclass
class TrajectoryRecord:
    """One logged snapshot of a restart, streamed to trajectory.csv."""

    iteration: int
    restart: int
    train_loss: float
    test_loss: float
    entropy_bits: float
    penalties: dict[str, float]
    oracle_calls: int
    elapsed_ms: float

    @property
    def penalty_total(self) -> float:
        return float(sum(self.penalties.values()))


def _objective_eval(state: DesignState, oracle, x, stack: ObjectiveStack):
    """Loss, input gradient, and penalty values for one oracle input."""
    ev = oracle.evaluate(x)
    state.oracle_calls += 1
    penalties: dict[str, float] = {}
    if stack.survival is not None:
        if ev.mean_std is None:
            raise ConfigError("survival objective needs an uncertainty-capable oracle")
        value, d_mu, d_eps = survival_objective(ev.mean_std, stack.survival)
        base = value
        grad_x = d_mu * ev.grad
        if ev.grad_std is not None:
            grad_x = grad_x + d_eps * ev.grad_std
    else:
        base = -ev.score
        grad_x = -ev.grad
    if stack.markov_model is not None:
        ll, ll_grad = stack.markov_model.log10_likelihood(x)
        margin = likelihood_margin_loss(ll, stack.markov_model, stack.markov_cfg)
        penalties["markov_margin"] = margin
        if margin > 0:
            grad_x = grad_x - stack.markov_cfg.lam * ll_grad
    if stack.activity is not None:
        penalties["activity"] = activity_penalty(ev.activations or {}, stack.activity)
        for term in stack.activity.terms:
            if ev.activations[term.layer] > term.cap:
                grad_x = grad_x + term.weight * ev.activation_grads[term.layer]
    return base, grad_x, penalties, ev.score


def design_step(
    state: DesignState,
    method: DesignMethod,
    oracle,
    stack: ObjectiveStack | None = None,
    s_avg: int = 1,
    settings: StepSettings = DEFAULT_SETTINGS,
    update: bool = True,
):
    """One forward/backward/update cycle; returns (state, step info dict).

    With ``update=False`` the forward pass and logging happen but parameters
    and the iteration counter stay untouched (used for the iteration-0 row).
    """
    if s_avg < 1:
        raise ConfigError("s_avg must be >= 1")
    stack = stack or ObjectiveStack()
    normalized = method in _NORMALIZED
    if normalized:
        l_scaled, cache = normalize(
            state.logits, state.so, settings.norm_mode, settings.denom,
            settings.grad_mode,
        )
    else:
        l_scaled, cache = state.logits, None
    p = softmax_rows(l_scaled)
    entropy_bits = mean_entropy_bits(p)

    penalties: dict[str, float] = {}
    upstream = np.zeros_like(p)
    if stack.entropy_lam:
        ent_val, ent_grad = entropy_penalty(p, stack.entropy_lam)
        penalties["entropy"] = ent_val
        upstream += softmax_backprop(ent_grad, p)

    def merge(pen: dict[str, float], weight: float):
        for name, value in pen.items():
            penalties[name] = penalties.get(name, 0.0) + weight * value

    if method in _RELAXED:
        base, grad_x, pen, _ = _objective_eval(state, oracle, p, stack)
        upstream += softmax_backprop(grad_x, p)
        merge(pen, 1.0)
        train = base
    elif method is DesignMethod.GUMBEL_FAST:
        train = 0.0
        acc = np.zeros_like(p)
        for _ in range(s_avg):
            relaxed, hard = sample_gumbel(l_scaled, settings.gumbel, state.rng)
            base, grad_x, pen, score = _objective_eval(state, oracle, hard, stack)
            state.observe(score, hard)
            acc += softmax_backprop(grad_x, relaxed) / settings.gumbel.temperature
            merge(pen, 1.0 / s_avg)
            train += base
        train /= s_avg
        upstream += acc / s_avg
    else:
        train = 0.0
        acc = np.zeros_like(p)
        for _ in range(s_avg):
            x = sample_categorical(p, state.rng)
            base, grad_x, pen, score = _objective_eval(state, oracle, x, stack)
            state.observe(score, x)
            acc += backprop_st(grad_x, p, settings.st_estimator)
            merge(pen, 1.0 / s_avg)
            train += base
        train /= s_avg
        upstream += acc / s_avg

    if update:
        if normalized:
            grad_l, grad_gamma, grad_beta = backprop_normalize(
                upstream, cache, state.so
            )
            sizes = (state.logits.size, state.so.gamma.size)
            flat = np.concatenate(
                [state.logits.ravel(), state.so.gamma, state.so.beta]
            )
            grads = np.concatenate([grad_l.ravel(), grad_gamma, grad_beta])
            new = state.optimizer.update(flat, grads)
            state.logits = new[: sizes[0]].reshape(state.logits.shape)
            state.so.gamma = new[sizes[0] : sizes[0] + sizes[1]]
            state.so.beta = new[sizes[0] + sizes[1] :]
        else:
            new = state.optimizer.update(state.logits.ravel(), upstream.ravel())
            state.logits = new.reshape(state.logits.shape)
        state.iteration += 1

    info = {
        "train_loss": float(train),
        "entropy_bits": float(entropy_bits),
        "penalties": penalties,
        "scaled_logits": l_scaled,
    }
    return state, info


@dataclass
class RunResult:
    records: list[TrajectoryRecord]
    finals: list[tuple[str, float]]
    logos: list[np.ndarray]


def scaled_logits(state: DesignState, method: DesignMethod, settings: StepSettings):
    if method in _NORMALIZED:
        out, _ = normalize(
            state.logits, state.so, settings.norm_mode, settings.denom,
            settings.grad_mode,
        )
        return out
    return state.logits


def init_design_state(
    n: int,
    alphabet: Alphabet,
    rng: RngState,
    optimizer: OptimizerState,
    norm_mode: NormMode = NormMode.INSTANCE,
    gamma_init: float = 1.0,
    beta_init: float = 0.0,
) -> DesignState:
    """Fresh restart: logits i.i.d. Uniform(-1, 1), affine at its init values."""
    logits = rng.uniform_in(-1.0, 1.0, (n, alphabet.size))
    so = ScaleOffset.initial(norm_mode, alphabet.size, gamma_init, beta_init)
    return DesignState(logits, so, optimizer, rng, alphabet)


def _worker_count() -> int:
    raw = os.environ.get("SEQGRAD_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def run_design(config, oracle) -> RunResult:
    """Run K independent restarts of a gradient design method.

    ``config`` is a resolved :class:`seqgrad.config.DesignConfig`. Trajectory
    rows are logged at iteration 0, every ``eval_every`` iterations, and at
    the final iteration; each row's test loss samples ``s`` sequences from
    the current softmax. Fully deterministic given the master seed.
    """
    indices = list(range(config.k))
    workers = _worker_count()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda k: _run_restart(config, oracle, k), indices))
    else:
        results = [_run_restart(config, oracle, k) for k in indices]
    records, finals, logos = [], [], []
    for recs, final, logo in results:
        records.extend(recs)
        finals.append(final)
        logos.append(logo)
    return RunResult(records, finals, logos)


def _run_restart(config, oracle, restart: int):
    t0 = time.perf_counter()
    method = DesignMethod(config.method)
    settings = config.step_settings()
    stack = config.objective_stack()
    rng = RngState(config.seed).substream(restart)
    state = init_design_state(
        config.n, config.alphabet, rng, config.make_optimizer(),
        settings.norm_mode, config.gamma_init, config.beta_init,
    )

    records = []

    def log_row(info):
        tl = test_loss(oracle, [info["scaled_logits"]], config.s, state.rng)
        state.oracle_calls += config.s
        records.append(
            TrajectoryRecord(
                iteration=state.iteration,
                restart=restart,
                train_loss=info["train_loss"],
                test_loss=tl,
                entropy_bits=info["entropy_bits"],
                penalties=info["penalties"],
                oracle_calls=state.oracle_calls,
                elapsed_ms=(time.perf_counter() - t0) * 1e3,
            )
        )

    _, info = design_step(
        state, method, oracle, stack, config.s_avg, settings, update=False
    )
    log_row(info)
    for t in range(1, config.iterations + 1):
        _, info = design_step(state, method, oracle, stack, config.s_avg, settings)
        if t % config.eval_every == 0 or t == config.iterations:
            log_row(info)

    logo = softmax_rows(scaled_logits(state, method, settings))
    seq = decode(logo, config.alphabet)
    score = oracle.evaluate(one_hot_encode(seq, config.alphabet)).score
    state.observe(score, one_hot_encode(seq, config.alphabet))
    return records, (seq, float(score)), logo


# ---------------------------------------------------------------------------
# Discrete baselines
# ---------------------------------------------------------------------------


def metropolis_accept(
    current_score: float, candidate_score: float, temperature: float, rng: RngState
) -> bool:
    """Accept with probability min(1, exp(-(current - candidate) / T)).

    Improvements are always accepted. Exactly one uniform is consumed per
    call so acceptance decisions stay reproducible.
    """
    if not temperature > 0:
        raise DegenerateInput("temperature must be > 0")
    u = rng.uniform()
    drop = current_score - candidate_score
    if drop <= 0:
        return True
    return bool(u < np.exp(-drop / temperature))


@dataclass
class AnnealState:
    """Simulated-annealing chain state."""

    x: np.ndarray
    score: float
    temperature: float
    t0: float
    decay: float
    substitutions: int = 1

    def __post_init__(self):
        if not self.temperature > 0:
            raise DegenerateInput("temperature must be > 0")


def _mutate(x: np.ndarray, count: int, rng: RngState) -> np.ndarray:
    """Substitute ``count`` distinct positions with different symbols."""
    n, m = x.shape
    out = x.copy()
    chosen: set[int] = set()
    while len(chosen) < min(count, n):
        pos = rng.integer(n)
        if pos in chosen:
            continue
        chosen.add(pos)
        current = int(np.argmax(out[pos]))
        new = rng.choice_excluding(m, current)
        out[pos] = 0.0
        out[pos, new] = 1.0
    return out


def anneal_step(state: AnnealState, oracle, rng: RngState) -> AnnealState:
    """Propose substitutions, apply the Metropolis rule, cool the temperature."""
    candidate = _mutate(state.x, state.substitutions, rng)
    cand_score = oracle.evaluate(candidate).score
    if metropolis_accept(state.score, cand_score, state.temperature, rng):
        state.x = candidate
        state.score = float(cand_score)
    state.temperature *= state.decay
    return state


def evolution_step(
    x: np.ndarray, score: float, oracle, rng: RngState
) -> tuple[np.ndarray, float]:
    """Greedy mutation search: 1 or (with 50% chance) 2 substitutions,
    accepted only on strict improvement."""
    count = 2 if rng.uniform() < 0.5 else 1
    candidate = _mutate(x, count, rng)
    cand_score = oracle.evaluate(candidate).score
    if cand_score > score:
        return candidate, float(cand_score)
    return x, score


def _random_onehot(n: int, m: int, rng: RngState) -> np.ndarray:
    x = np.zeros((n, m))
    for i in range(n):
        x[i, rng.integer(m)] = 1.0
    return x


def run_anneal(config, oracle) -> RunResult:
    """K independent annealing chains mirroring :func:`run_design` logging.

    Chains are discrete, so entropy is 0 and the test loss equals the train
    loss (the negated current score).
    """
    records, finals, logos = [], [], []
    for restart in range(config.k):
        t0 = time.perf_counter()
        rng = RngState(config.seed).substream(restart)
        x = _random_onehot(config.n, config.alphabet.size, rng)
        score = oracle.evaluate(x).score
        calls = 1
        state = AnnealState(
            x, float(score), config.anneal_t0, config.anneal_t0,
            config.anneal_decay, config.anneal_substitutions,
        )
        best_x, best_score = state.x, state.score

        def log_row(iteration):
            records.append(
                TrajectoryRecord(
                    iteration=iteration,
                    restart=restart,
                    train_loss=-state.score,
                    test_loss=-state.score,
                    entropy_bits=0.0,
                    penalties={},
                    oracle_calls=calls,
                    elapsed_ms=(time.perf_counter() - t0) * 1e3,
                )
            )

        log_row(0)
        for t in range(1, config.iterations + 1):
            anneal_step(state, oracle, rng)
            calls += 1
            if state.score > best_score:
                best_x, best_score = state.x, state.score
            if t % config.eval_every == 0 or t == config.iterations:
                log_row(t)
        finals.append((decode(best_x, config.alphabet), float(best_score)))
        logos.append(best_x.copy())
    return RunResult(records, finals, logos)
