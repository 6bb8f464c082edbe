"""Experiment configuration: strict JSON parsing, defaults, and resolution.

Configs are JSON documents validated against a closed schema: unknown keys
are rejected (a silently ignored typo in a method name would invalidate a
benchmark), every numeric field is range-checked, and all defaults are
materialized so the echoed config is self-contained and round-trips to an
equal :class:`DesignConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .core import Alphabet, RngState
from .engine import DesignMethod, ObjectiveStack, OptimizerState, StepSettings
from .errors import UnknownKey, ValidationError
from .io import read_json
from .normalizer import DenomKind, GradMode, NormMode
from .objectives import (
    ActivityConfig,
    ActivityTerm,
    MarginPenaltyConfig,
    MarkovModel,
    SurvivalConfig,
)
from .oracles import MlpOracle, MotifOracle, QuadraticOracle, load_oracle
from .sampler import GumbelConfig, StEstimator

__all__ = ["DesignConfig", "parse_config", "resolve_oracle"]

_METHODS = {m.value for m in DesignMethod}


@dataclass
class DesignConfig:
    """Fully resolved experiment description (all defaults applied)."""

    oracle_spec: dict | None
    method: str
    alphabet: Alphabet
    n: int
    iterations: int
    seed: int
    k: int = 10
    s: int = 10
    s_avg: int = 1
    eval_every: int = 10
    optimizer: dict = field(default_factory=dict)
    norm_mode: str = "instance"
    denom: str = "std"
    grad_mode: str = "paper_literal"
    gamma_init: float = 1.0
    beta_init: float = 0.0
    st_estimator: str = "softmax"
    gumbel_tau: float = 0.1
    entropy_lambda: float = 0.0
    markov_spec: dict | None = None
    survival_spec: dict | None = None
    activity_spec: tuple = ()
    anneal_t0: float = 1.0
    anneal_decay: float = 0.9995
    anneal_substitutions: int = 1
    structure_spec: dict | None = None
    _markov_model: MarkovModel | None = field(
        default=None, repr=False, compare=False
    )

    # -- engine adapters ----------------------------------------------------

    def make_optimizer(self) -> OptimizerState:
        return OptimizerState(**self.optimizer)

    def step_settings(self) -> StepSettings:
        return StepSettings(
            st_estimator=(
                StEstimator.SOFTMAX_ST
                if self.st_estimator == "softmax"
                else StEstimator.IDENTITY_ST
            ),
            gumbel=GumbelConfig(self.gumbel_tau),
            norm_mode=NormMode(self.norm_mode),
            denom=DenomKind(self.denom),
            grad_mode=GradMode(self.grad_mode),
        )

    def objective_stack(self) -> ObjectiveStack:
        markov_model = markov_cfg = None
        if self.markov_spec is not None:
            if self._markov_model is None:
                self._markov_model = MarkovModel.load(self.markov_spec["file"])
            markov_model = self._markov_model
            markov_cfg = MarginPenaltyConfig(
                self.markov_spec["lambda"], self.markov_spec["rho"]
            )
        survival = None
        if self.survival_spec is not None:
            survival = SurvivalConfig(
                self.survival_spec["q_threshold"], self.survival_spec["q"]
            )
        activity = None
        if self.activity_spec:
            activity = ActivityConfig(
                tuple(
                    ActivityTerm(t["layer"], t["cap"], t["weight"])
                    for t in self.activity_spec
                )
            )
        return ObjectiveStack(
            entropy_lam=self.entropy_lambda,
            markov_model=markov_model,
            markov_cfg=markov_cfg,
            survival=survival,
            activity=activity,
        )

    def to_json(self) -> dict:
        """Fully resolved dict; parsing it back yields an equal config."""
        alphabet = (
            self.alphabet.kind
            if self.alphabet.kind in ("dna", "protein")
            else {"symbols": "".join(self.alphabet.symbols)}
        )
        doc = {
            "oracle": self.oracle_spec,
            "method": self.method,
            "alphabet": alphabet,
            "n": self.n,
            "iterations": self.iterations,
            "seed": self.seed,
            "k": self.k,
            "s": self.s,
            "s_avg": self.s_avg,
            "eval_every": self.eval_every,
            "optimizer": self.optimizer,
            "normalization": {
                "mode": self.norm_mode,
                "denom": self.denom,
                "grad_mode": self.grad_mode,
                "gamma_init": self.gamma_init,
                "beta_init": self.beta_init,
            },
            "st_estimator": self.st_estimator,
            "gumbel_tau": self.gumbel_tau,
            "objective": {
                "entropy_lambda": self.entropy_lambda,
                "markov": self.markov_spec,
                "survival": self.survival_spec,
                "activity": list(self.activity_spec) or None,
            },
            "anneal": {
                "t0": self.anneal_t0,
                "decay": self.anneal_decay,
                "substitutions": self.anneal_substitutions,
            },
            "structure": self.structure_spec,
        }
        return doc


def _require_number(value, path, *, integer=False, minimum=None, exclusive=False,
                    maximum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, "expected a number")
    if integer and int(value) != value:
        raise ValidationError(path, "expected an integer")
    if minimum is not None:
        if exclusive and not value > minimum:
            raise ValidationError(path, f"must be > {minimum}")
        if not exclusive and value < minimum:
            raise ValidationError(path, f"must be >= {minimum}")
    if maximum is not None and value > maximum:
        raise ValidationError(path, f"must be <= {maximum}")
    return int(value) if integer else float(value)


def _check_keys(doc: dict, allowed: set[str], path: str):
    if not isinstance(doc, dict):
        raise ValidationError(path or "<root>", "expected a JSON object")
    for key in doc:
        if key not in allowed:
            raise UnknownKey(f"{path}.{key}" if path else key)


def _parse_alphabet(raw, path: str) -> Alphabet:
    if raw is None:
        return Alphabet.from_name("dna")
    if isinstance(raw, str):
        if raw in ("dna", "protein"):
            return Alphabet.from_name(raw)
        raise ValidationError(path, f"unknown alphabet {raw!r}")
    _check_keys(raw, {"symbols"}, path)
    if "symbols" not in raw or not isinstance(raw["symbols"], str):
        raise ValidationError(f"{path}.symbols", "custom alphabet needs a symbols string")
    return Alphabet.custom(raw["symbols"])


_ORACLE_KINDS = {"motif", "quadratic", "mlp"}
_RANDOM_KEYS = {
    "motif": {"seed", "length", "scale"},
    "quadratic": {"seed", "quad_scale", "linear_scale"},
    "mlp": {"seed", "hidden", "scale", "uncertainty"},
}


def _parse_oracle(raw, path: str) -> dict | None:
    if raw is None:
        return None
    _check_keys(raw, {"kind", "file", "random"}, path)
    kind = raw.get("kind")
    if kind not in _ORACLE_KINDS:
        raise ValidationError(f"{path}.kind", f"expected one of {sorted(_ORACLE_KINDS)}")
    has_file = "file" in raw
    has_random = "random" in raw
    if has_file == has_random:
        raise ValidationError(path, "give exactly one of 'file' or 'random'")
    spec = {"kind": kind}
    if has_file:
        if not isinstance(raw["file"], str):
            raise ValidationError(f"{path}.file", "expected a path string")
        spec["file"] = raw["file"]
        return spec
    rnd = raw["random"]
    _check_keys(rnd, _RANDOM_KEYS[kind], f"{path}.random")
    params = {"seed": _require_number(rnd.get("seed", 0), f"{path}.random.seed",
                                      integer=True, minimum=0)}
    if kind == "motif":
        params["length"] = _require_number(
            rnd.get("length", 8), f"{path}.random.length", integer=True, minimum=1)
        params["scale"] = _require_number(
            rnd.get("scale", 1.0), f"{path}.random.scale", minimum=0, exclusive=True)
    elif kind == "quadratic":
        params["quad_scale"] = _require_number(
            rnd.get("quad_scale", 1.0), f"{path}.random.quad_scale", minimum=0)
        params["linear_scale"] = _require_number(
            rnd.get("linear_scale", 1.0), f"{path}.random.linear_scale", minimum=0)
    else:
        hidden = rnd.get("hidden", [16, 8])
        if (not isinstance(hidden, list) or len(hidden) != 2
                or not all(isinstance(h, int) and h > 0 for h in hidden)):
            raise ValidationError(f"{path}.random.hidden",
                                  "expected two positive integers")
        params["hidden"] = hidden
        params["scale"] = _require_number(
            rnd.get("scale", 1.0), f"{path}.random.scale", minimum=0, exclusive=True)
        uncertainty = rnd.get("uncertainty", False)
        if not isinstance(uncertainty, bool):
            raise ValidationError(f"{path}.random.uncertainty", "expected a boolean")
        params["uncertainty"] = uncertainty
    spec["random"] = params
    return spec


def _parse_optimizer(raw, path: str) -> dict:
    raw = raw or {}
    _check_keys(raw, {"kind", "lr", "momentum", "beta1", "beta2", "eps"}, path)
    kind = raw.get("kind", "adam")
    if kind not in ("sgd", "adam"):
        raise ValidationError(f"{path}.kind", "expected 'sgd' or 'adam'")
    out = {
        "kind": kind,
        "lr": _require_number(raw.get("lr", 0.001 if kind == "adam" else 0.1),
                              f"{path}.lr", minimum=0, exclusive=True),
        "momentum": _require_number(raw.get("momentum", 0.0), f"{path}.momentum",
                                    minimum=0, maximum=1),
        "beta1": _require_number(raw.get("beta1", 0.9), f"{path}.beta1", minimum=0),
        "beta2": _require_number(raw.get("beta2", 0.999), f"{path}.beta2", minimum=0),
        "eps": _require_number(raw.get("eps", 1e-7), f"{path}.eps",
                               minimum=0, exclusive=True),
    }
    for beta in ("beta1", "beta2"):
        if out[beta] >= 1.0:
            raise ValidationError(f"{path}.{beta}", "must be < 1")
    return out


def parse_config(path) -> DesignConfig:
    """Parse and validate a JSON config file, applying all defaults."""
    doc = read_json(path)
    return resolve_config(doc)


def resolve_config(doc: dict) -> DesignConfig:
    """Validate a raw JSON document (strict keys) into a DesignConfig."""
    _check_keys(
        doc,
        {
            "oracle", "method", "alphabet", "n", "iterations", "seed", "k", "s",
            "s_avg", "eval_every", "optimizer", "normalization", "st_estimator",
            "gumbel_tau", "objective", "anneal", "structure",
        },
        "",
    )
    method = doc.get("method")
    if method not in _METHODS:
        raise ValidationError("method", f"expected one of {sorted(_METHODS)}")
    alphabet = _parse_alphabet(doc.get("alphabet"), "alphabet")

    norm = doc.get("normalization") or {}
    _check_keys(norm, {"mode", "denom", "grad_mode", "gamma_init", "beta_init"},
                "normalization")
    default_mode = "instance" if alphabet.size <= 4 else "layer"
    norm_mode = norm.get("mode", default_mode)
    if norm_mode not in ("instance", "layer"):
        raise ValidationError("normalization.mode", "expected 'instance' or 'layer'")
    denom = norm.get("denom", "std")
    if denom not in ("std", "variance"):
        raise ValidationError("normalization.denom", "expected 'std' or 'variance'")
    grad_mode = norm.get("grad_mode", "paper_literal")
    if grad_mode not in ("paper_literal", "stop_grad_stats", "full_chain"):
        raise ValidationError("normalization.grad_mode", "unknown gradient mode")

    st = doc.get("st_estimator", "softmax")
    if st not in ("softmax", "identity"):
        raise ValidationError("st_estimator", "expected 'softmax' or 'identity'")

    objective = doc.get("objective") or {}
    _check_keys(objective, {"entropy_lambda", "markov", "survival", "activity"},
                "objective")
    markov_spec = None
    if objective.get("markov") is not None:
        raw = objective["markov"]
        _check_keys(raw, {"file", "lambda", "rho"}, "objective.markov")
        if not isinstance(raw.get("file"), str):
            raise ValidationError("objective.markov.file", "expected a path string")
        markov_spec = {
            "file": raw["file"],
            "lambda": _require_number(raw.get("lambda", 1.0),
                                      "objective.markov.lambda", minimum=0),
            "rho": _require_number(raw.get("rho", 0.0),
                                   "objective.markov.rho", minimum=0),
        }
    survival_spec = None
    if objective.get("survival") is not None:
        raw = objective["survival"]
        _check_keys(raw, {"q_threshold", "q"}, "objective.survival")
        q = _require_number(raw.get("q", 0.95), "objective.survival.q", minimum=0)
        if not 0.0 < q < 1.0:
            raise ValidationError("objective.survival.q", "must lie in (0, 1)")
        if raw.get("q_threshold") is None:
            raise ValidationError("objective.survival.q_threshold",
                                  "required field missing")
        survival_spec = {
            "q_threshold": _require_number(raw["q_threshold"],
                                           "objective.survival.q_threshold"),
            "q": q,
        }
    activity_spec = []
    if objective.get("activity") is not None:
        raw = objective["activity"]
        if not isinstance(raw, list):
            raise ValidationError("objective.activity", "expected a list")
        for i, term in enumerate(raw):
            at = f"objective.activity[{i}]"
            _check_keys(term, {"layer", "cap", "weight"}, at)
            if not isinstance(term.get("layer"), str):
                raise ValidationError(f"{at}.layer", "expected a layer name")
            activity_spec.append({
                "layer": term["layer"],
                "cap": _require_number(term.get("cap", 0.0), f"{at}.cap"),
                "weight": _require_number(term.get("weight", 1.0), f"{at}.weight",
                                          minimum=0),
            })

    anneal = doc.get("anneal") or {}
    _check_keys(anneal, {"t0", "decay", "substitutions"}, "anneal")

    structure_spec = None
    if doc.get("structure") is not None:
        raw = doc["structure"]
        _check_keys(raw, {"predictor_seed", "scale"}, "structure")
        structure_spec = {
            "predictor_seed": _require_number(
                raw.get("predictor_seed", 0), "structure.predictor_seed",
                integer=True, minimum=0),
            "scale": _require_number(raw.get("scale", 2.0), "structure.scale",
                                     minimum=0, exclusive=True),
        }

    for name in ("n", "iterations", "seed"):
        if doc.get(name) is None:
            raise ValidationError(name, "required field missing")

    return DesignConfig(
        oracle_spec=_parse_oracle(doc.get("oracle"), "oracle"),
        method=method,
        alphabet=alphabet,
        n=_require_number(doc["n"], "n", integer=True, minimum=1),
        iterations=_require_number(doc["iterations"], "iterations",
                                   integer=True, minimum=0),
        seed=_require_number(doc["seed"], "seed", integer=True, minimum=0),
        k=_require_number(doc.get("k", 10), "k", integer=True, minimum=1),
        s=_require_number(doc.get("s", 10), "s", integer=True, minimum=1),
        s_avg=_require_number(doc.get("s_avg", 1), "s_avg", integer=True, minimum=1),
        eval_every=_require_number(doc.get("eval_every", 10), "eval_every",
                                   integer=True, minimum=1),
        optimizer=_parse_optimizer(doc.get("optimizer"), "optimizer"),
        norm_mode=norm_mode,
        denom=denom,
        grad_mode=grad_mode,
        gamma_init=_require_number(norm.get("gamma_init", 1.0),
                                   "normalization.gamma_init"),
        beta_init=_require_number(norm.get("beta_init", 0.0),
                                  "normalization.beta_init"),
        st_estimator=st,
        gumbel_tau=_require_number(doc.get("gumbel_tau", 0.1), "gumbel_tau",
                                   minimum=0, exclusive=True),
        entropy_lambda=_require_number(objective.get("entropy_lambda", 0.0),
                                       "objective.entropy_lambda", minimum=0),
        markov_spec=markov_spec,
        survival_spec=survival_spec,
        activity_spec=tuple(activity_spec),
        anneal_t0=_require_number(anneal.get("t0", 1.0), "anneal.t0",
                                  minimum=0, exclusive=True),
        anneal_decay=_require_number(anneal.get("decay", 0.9995), "anneal.decay",
                                     minimum=0, exclusive=True, maximum=1.0),
        anneal_substitutions=_require_number(
            anneal.get("substitutions", 1), "anneal.substitutions",
            integer=True, minimum=1),
        structure_spec=structure_spec,
    )


def resolve_oracle(config: DesignConfig):
    """Instantiate the oracle a config names (weight file or seeded random)."""
    spec = config.oracle_spec
    if spec is None:
        raise ValidationError("oracle", "this command requires an oracle")
    if "file" in spec:
        oracle = load_oracle(spec["file"])
        if oracle.n != config.n or oracle.alphabet.size != config.alphabet.size:
            raise ValidationError(
                "oracle.file",
                f"oracle is ({oracle.n}, {oracle.alphabet.size}) but config wants "
                f"({config.n}, {config.alphabet.size})",
            )
        return oracle
    params = spec["random"]
    rng = RngState(params["seed"])
    if spec["kind"] == "motif":
        return MotifOracle.random(rng, config.n, params["length"], config.alphabet,
                                  params["scale"])
    if spec["kind"] == "quadratic":
        return QuadraticOracle.random(rng, config.n, config.alphabet,
                                      params["quad_scale"], params["linear_scale"])
    return MlpOracle.random(rng, config.n, config.alphabet,
                            tuple(params["hidden"]), params["scale"],
                            params["uncertainty"])
