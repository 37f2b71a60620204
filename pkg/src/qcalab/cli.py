"""Experiment runner.

Every subcommand reads an :class:`ExperimentConfig` (YAML), runs one
experiment and writes a JSON report.  Reports carry the configuration, the
package version, every tolerance used and a ``warnings`` array; apart from
the ``timestamp`` field they are byte-identical for identical inputs.

Exit codes: 0 success, 2 configuration error, 3 dimension cap, 4 numerical
failure, 5 nonzero index where an index-zero map is required.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import io
import json
import logging
import math
import subprocess
import sys
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from . import __version__
from .alpu_lab import (
    INDEX_DISTANCE,
    TailMethod,
    approximation_sweep,
    decaying_model,
    evolve,
    fit_exponential_tail,
    heisenberg_model,
    jw_model,
    jw_translation_demo,
    lr_constant,
    measure_tails,
    synthesize_hamiltonian,
)
from .algebra_struct import OperatorAlgebra
from .chain_algebra import Automorphism, BlockedModel, Boundary, ChainSpec, limits, random_unitary
from .choi_index import Entropy, cut_spread, index_entropy_diff, index_mi, plateau_onset, window_sweep
from .errors import ConfigError, DimensionCap, EpsilonTooLarge, NonzeroIndex, NumericalFailure, QcaLabError
from .qca import (
    Qca,
    block,
    brickwork_layers,
    circuit_qca,
    compose,
    identity_qca,
    index_dimension,
    random_circuit,
    round_index,
    shift_qca,
)
from .stability import (
    NearHomomorphism,
    commutator_lemma_suite,
    make_inner,
    make_inner_suite,
    rotate_into_suite,
    simultaneous_inclusion_suite,
)

log = logging.getLogger(__name__)

EXPERIMENTS = ("index", "tails", "approximate", "synthesize", "stability", "jw-demo")

DEFAULT_TOLERANCES: dict[str, float] = {
    "index": 1e-8,
    "plateau_flat": 0.02,
    "tail_floor": 1e-12,
    "slow_decay_rate": 0.5,
    "qca_distance": 1e-7,
    "index_distance": INDEX_DISTANCE,
    "synthesis": 1e-6,
    "stability_residual": 1e-8,
    "fock": 1e-8,
}

# the tolerance that --tolerance overrides, per experiment
PRIMARY_TOLERANCE = {
    "index": "index",
    "tails": "tail_floor",
    "approximate": "qca_distance",
    "synthesize": "synthesis",
    "stability": "stability_residual",
    "jw-demo": "fock",
}

EXIT_CONFIG, EXIT_DIMENSION, EXIT_NUMERICAL, EXIT_NONZERO_INDEX = 2, 3, 4, 5

GATES: dict[str, np.ndarray] = {
    "identity": np.eye(4, dtype=complex),
    "swap": np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex),
    "cz": np.diag([1, 1, 1, -1]).astype(complex),
    "cnot": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
    "iswap": np.array([[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]], dtype=complex),
}

MODEL_KINDS = ("identity", "shift", "circuit", "random_circuit", "heisenberg", "decaying", "jw", "compose")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ChainConfig:
    num_sites: int = 8
    local_dim: int | list[int] = 2
    boundary: str = "periodic"

    def spec(self) -> ChainSpec:
        dims = self.local_dim if isinstance(self.local_dim, list) else [self.local_dim] * self.num_sites
        try:
            return ChainSpec(self.num_sites, tuple(int(d) for d in dims), Boundary(self.boundary))
        except (ValueError, QcaLabError) as exc:
            raise ConfigError(f"invalid chain: {exc}") from exc


@dataclass
class ModelConfig:
    """``kind`` selects a constructor; ``params`` are its arguments.

    ``blocking`` groups that many adjacent sites after construction."""

    kind: str = "identity"
    params: dict[str, Any] = field(default_factory=dict)
    blocking: int = 1


@dataclass
class ExperimentConfig:
    experiment: str
    chain: ChainConfig = field(default_factory=ChainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sweep: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None
    out: str | None = None
    max_dim: int | None = None
    tolerances: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        if self.model.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model.kind!r}")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {sorted(unknown)}")
        if self.seed is not None and (not isinstance(self.seed, int) or self.seed < 0 or self.seed >= 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.model.blocking < 1:
            raise ConfigError("blocking must be positive")

    @property
    def randomized(self) -> bool:
        return self.experiment in ("approximate", "stability", "synthesize") or _model_randomized(self.model)

    def tolerance(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def effective_tolerances(self) -> dict[str, float]:
        return {k: self.tolerance(k) for k in DEFAULT_TOLERANCES}

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
        if "experiment" not in data:
            raise ConfigError("configuration needs an 'experiment' key")
        try:
            chain = ChainConfig(**(data.get("chain") or {}))
            model = ModelConfig(**(data.get("model") or {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        rest = {k: v for k, v in data.items() if k not in ("chain", "model")}
        rest["sweep"] = dict(rest.get("sweep") or {})
        rest["tolerances"] = {k: float(v) for k, v in (rest.get("tolerances") or {}).items()}
        return cls(chain=chain, model=model, **rest)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def parse(cls, text: str) -> ExperimentConfig:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"configuration is not valid YAML: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read configuration: {exc}") from exc
        return cls.parse(text)


def _model_randomized(m: ModelConfig) -> bool:
    if m.kind in ("random_circuit", "decaying"):
        return True
    if m.kind == "circuit":
        return any(_layer_gate_names(layer) & {"random"} for layer in m.params.get("layers", []))
    if m.kind == "compose":
        return any(_model_randomized(ModelConfig(**p)) for p in m.params.get("parts", []))
    return False


def _layer_gate_names(layer: Any) -> set[str]:
    if isinstance(layer, dict):
        if "gates" in layer:
            return {g.get("gate", "") for g in layer["gates"]}
        return {layer.get("gate", "")}
    return set()


def default_config(experiment: str) -> ExperimentConfig:
    """Small default experiment for each subcommand."""
    if experiment == "index":
        return ExperimentConfig("index", model=ModelConfig("shift", {"k": 1}))
    if experiment == "tails":
        return ExperimentConfig("tails", model=ModelConfig("heisenberg", {"t": 0.2}), sweep={"methods": ["region"]})
    if experiment == "approximate":
        return ExperimentConfig(
            "approximate",
            model=ModelConfig("decaying", {"rate": 1.0, "t": 0.1}),
            sweep={"js": [1, 2, 4]},
            seed=0,
        )
    if experiment == "synthesize":
        return ExperimentConfig("synthesize", model=ModelConfig("circuit", {"layers": [{"offset": 0, "gate": "swap"}, {"offset": 1, "gate": "swap"}]}), seed=0)
    if experiment == "stability":
        return ExperimentConfig("stability", seed=0)
    if experiment == "jw-demo":
        return ExperimentConfig("jw-demo", model=ModelConfig("jw"), sweep={"tail_time": 0.5})
    raise ConfigError(f"unknown experiment {experiment!r}")


# ---------------------------------------------------------------------------
# building the map under study


@dataclass
class Target:
    auto: Automorphism
    qca: Qca | None
    description: str


def _param(params: dict[str, Any], key: str, default: Any, cast: Callable[[Any], Any]) -> Any:
    try:
        return cast(params.get(key, default))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model parameter {key!r}: {exc}") from exc


def _circuit_layers(chain: ChainSpec, layers: Sequence[Any], rng: np.random.Generator) -> list:
    out = []
    for i, layer in enumerate(layers):
        if not isinstance(layer, dict):
            raise ConfigError(f"layer {i} must be a mapping")
        if "gates" in layer:
            gates = []
            for g in layer["gates"]:
                sites = tuple(int(s) for s in g["sites"])
                gates.append((sites, _gate(g.get("gate", "random"), chain.dim_of(sites), rng)))
            out.append(gates)
            continue
        name = layer.get("gate", "random")
        offset = int(layer.get("offset", i % 2))
        mat = None if name == "random" else _gate(name, 4, rng)
        if mat is not None and chain.uniform_dim != 2:
            raise ConfigError("named two-site gates need qubit chains")
        out += brickwork_layers(chain, [mat], [offset], rng)
    return out


def _gate(name: str, d: int, rng: np.random.Generator) -> np.ndarray:
    if name == "random":
        return random_unitary(d, rng)
    if name not in GATES:
        raise ConfigError(f"unknown gate {name!r}; known: {', '.join(sorted(GATES))}, random")
    if d != 4:
        raise ConfigError(f"gate {name!r} acts on two qubits")
    return GATES[name]


def _build_one(chain: ChainSpec, m: ModelConfig, rng: np.random.Generator, seed: int) -> Target:
    p = m.params
    kind = m.kind
    if kind == "identity":
        q = identity_qca(chain)
        return Target(q.auto, q, "identity")
    if kind == "shift":
        k = _param(p, "k", 1, int)
        q = shift_qca(chain, k)
        return Target(q.auto, q, f"shift k={k}")
    if kind == "circuit":
        q = circuit_qca(chain, _circuit_layers(chain, p.get("layers", []), rng))
        return Target(q.auto, q, f"circuit of {len(p.get('layers', []))} layers")
    if kind == "random_circuit":
        layers = _param(p, "layers", 2, int)
        q = random_circuit(chain, rng, layers)
        return Target(q.auto, q, f"random circuit of {layers} layers")
    if kind == "heisenberg":
        t = _param(p, "t", 0.2, float)
        h = heisenberg_model(chain, _param(p, "coupling", 1.0, float), _param(p, "field", 0.0, float))
        return Target(evolve(h, t), None, f"Heisenberg evolution t={t}")
    if kind == "decaying":
        t = _param(p, "t", 0.1, float)
        max_range = p.get("max_range")
        h = decaying_model(chain, _param(p, "rate", 1.0, float), None if max_range is None else int(max_range), _param(p, "model_seed", seed, int))
        return Target(evolve(h, t), None, f"decaying-interaction evolution t={t}")
    if kind == "jw":
        if chain.uniform_dim != 2 or not chain.periodic:
            raise ConfigError("the fermionic translation needs a qubit ring")
        t = _param(p, "t", 1.0, float)
        return Target(evolve(jw_model(chain.num_sites), t), None, f"fermionic translation evolution t={t}")
    if kind == "compose":
        parts = p.get("parts") or []
        if not parts:
            raise ConfigError("compose needs a nonempty 'parts' list")
        # parts act in list order: the first part is applied first
        built = [_build_one(chain, ModelConfig(**sub), rng, seed) for sub in parts]
        auto = built[0].auto
        qca = built[0].qca
        for b in built[1:]:
            auto = b.auto.after(auto)
            qca = compose(b.qca, qca) if (qca is not None and b.qca is not None) else None
        if qca is not None:
            auto = qca.auto
        return Target(auto, qca, " then ".join(b.description for b in built))
    raise ConfigError(f"unknown model kind {kind!r}")


def build_target(cfg: ExperimentConfig) -> Target:
    chain = cfg.chain.spec()
    seed = cfg.seed if cfg.seed is not None else 0
    rng = np.random.default_rng(seed)
    try:
        t = _build_one(chain, cfg.model, rng, seed)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from exc
    g = cfg.model.blocking
    if g > 1:
        if chain.num_sites % g:
            raise ConfigError(f"blocking {g} does not divide {chain.num_sites} sites")
        if t.qca is not None:
            q = block(t.qca, g)
            return Target(q.auto, q, f"{t.description}, blocked by {g}")
        bchain = chain.block(g)
        return Target(Automorphism(bchain, BlockedModel(bchain, t.auto, g)), None, f"{t.description}, blocked by {g}")
    return t


# ---------------------------------------------------------------------------
# reports


@lru_cache(maxsize=1)
def artifact_version() -> str:
    """``<version>+g<commit>`` inside a git checkout, else the bare version."""
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
        return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return v
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {"real": obj.real, "imag": obj.imag}
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def render_json(payload: dict[str, Any]) -> str:
    return json.dumps(_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


@dataclass
class Report:
    """Payload plus side files (CSV tables, model files, figures)."""

    result: dict[str, Any]
    warnings: list[str] = field(default_factory=list)
    tables: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    attachments: dict[str, dict[str, Any]] = field(default_factory=dict)
    figures: list[tuple[str, Callable[[Path], Path]]] = field(default_factory=list)


def envelope(cfg: ExperimentConfig, report: Report, timestamp: str | None = None) -> dict[str, Any]:
    return {
        "experiment": cfg.experiment,
        "version": artifact_version(),
        "config": cfg.to_dict(),
        "tolerances": cfg.effective_tolerances(),
        "logarithm": "natural",
        "warnings": list(report.warnings),
        "result": report.result,
        "timestamp": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def render_csv(rows: list[dict[str, Any]]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


def _window_default(target: Target, chain: ChainSpec) -> int:
    top = (chain.num_sites - 1) // 2 if chain.periodic else chain.num_sites // 2
    if target.qca is not None:
        return max(1, min(target.qca.radius, top))
    return top


def _ring_warning(chain: ChainSpec, warnings: list[str]) -> None:
    if chain.periodic:
        warnings.append(
            "ring: the index is computed from local windows and pairs of adjacent blocks; "
            "whether this agrees with an intrinsic ring index is not settled"
        )
    else:
        warnings.append("open chain: every automorphism of an open chain has index zero")


def _plotting():
    # matplotlib is loaded only when a figure is actually drawn
    from . import plotting

    return plotting


def cmd_index(cfg: ExperimentConfig) -> Report:
    target = build_target(cfg)
    a = target.auto
    chain = a.chain
    warnings: list[str] = []
    _ring_warning(chain, warnings)
    cut = int(cfg.sweep.get("cut", 0 if chain.periodic else chain.num_sites // 2))
    rows = window_sweep(a, cut, cfg.sweep.get("windows"))
    table = [dataclasses.asdict(r) for r in rows]
    onset = plateau_onset(rows, cfg.tolerance("plateau_flat"))
    window = cfg.sweep.get("window")
    if window is None:
        if target.qca is not None:
            window = _window_default(target, chain)
        else:
            window = rows[-1].window
            warnings.append("no certified radius: the index is read at the largest window of the sweep")
    window = int(window)
    if onset is None:
        warnings.append("the rounded index did not reach a flat plateau over the window sweep")

    primes = chain.primes
    methods: dict[str, Any] = {}
    if target.qca is not None:
        methods["dimension"] = index_dimension(target.qca).as_dict()
    else:
        methods["dimension"] = None
        warnings.append("dimension method skipped: the map is not a certified QCA")
    mi_vn = index_mi(a, cut, window, Entropy.VON_NEUMANN, cfg.tolerance("index"))
    mi_r2 = index_mi(a, cut, window, Entropy.RENYI2, cfg.tolerance("index"))
    ed = index_entropy_diff(a, cut, window)
    methods["mi_vn"] = mi_vn.as_dict()
    methods["mi_renyi2"] = mi_r2.as_dict()
    methods["entropy_diff"] = round_index(ed, primes).as_dict()
    if abs(mi_vn.raw - mi_r2.raw) > cfg.tolerance("index"):
        warnings.append(f"von Neumann and Renyi-2 raw values differ by {abs(mi_vn.raw - mi_r2.raw):.3e}")
    rounded = {m: v["rounded"] for m, v in methods.items() if v is not None}
    if max(rounded.values()) - min(rounded.values()) > 1e-12:
        warnings.append("methods disagree after rounding")
    result = {
        "model": target.description,
        "cut": cut,
        "window": window,
        "methods": methods,
        "rounded": mi_vn.as_dict(),
        "cut_spread": cut_spread(a, window),
        "plateau": {"onset": onset, "table": table},
        "radius": None if target.qca is None else target.qca.radius,
    }
    report = Report(result, warnings)
    report.figures.append(("plateau", lambda p: _plotting().plateau_figure(table, p)))
    return report


def cmd_tails(cfg: ExperimentConfig) -> Report:
    target = build_target(cfg)
    a = target.auto
    warnings: list[str] = []
    methods = cfg.sweep.get("methods", ["region"])
    r_max = cfg.sweep.get("r_max")
    max_len = int(cfg.sweep.get("max_len", 1))
    profiles = {}
    rows = []
    for m in methods:
        try:
            method = TailMethod(m)
        except ValueError as exc:
            raise ConfigError(f"unknown tail method {m!r}") from exc
        prof = measure_tails(a, None if r_max is None else int(r_max), method, max_len, cfg.tolerance("tail_floor"))
        profiles[method.value] = prof
        rows += [{"r": r, "f_hat": v, "method": method.value} for r, v in prof.samples]
    ref = profiles[TailMethod(methods[0]).value]
    c, mu = fit_exponential_tail(ref)
    positive = [v for v in ref.values if v > 0]
    slow = len(positive) >= 2 and mu < cfg.tolerance("slow_decay_rate")
    if slow:
        warnings.append(f"slow decay: fitted rate {mu:.3g} is below {cfg.tolerance('slow_decay_rate'):.3g}")
    result: dict[str, Any] = {
        "model": target.description,
        "profiles": {k: {"radii": p.radii, "raw": p.raw, "values": p.values} for k, p in profiles.items()},
        "fit": {"C": c, "mu": mu, "method": ref.method.value},
        "slow_decay": slow,
    }
    if cfg.sweep.get("lr_constant", False):
        rate = mu if math.isfinite(mu) and mu > 0 else 1.0
        result["lr_constant"] = {"rate": rate, "C": lr_constant(a, lambda x: np.exp(-rate * x))}
    report = Report(result, warnings, tables={"csv": rows})
    samples = {k: p.samples for k, p in profiles.items()}
    report.figures.append(("tails", lambda p: _plotting().tail_figure(samples, p, (c, mu) if math.isfinite(mu) else None)))
    return report


def cmd_approximate(cfg: ExperimentConfig) -> Report:
    target = build_target(cfg)
    a = target.auto
    warnings: list[str] = []
    _ring_warning(a.chain, warnings)
    js = [int(j) for j in cfg.sweep.get("js", [1, 2, 4])]
    sweep = approximation_sweep(a, js, cfg.sweep.get("window"), cfg.seed or 0, int(cfg.sweep.get("restarts", 20)))
    result = sweep.as_dict()
    result["model"] = target.description
    result["qca_input"] = target.qca is not None
    result["index_distance"] = cfg.tolerance("index_distance")
    if target.qca is not None:
        native = sweep.rows[0]
        result["native_distance"] = native.upper
        result["native_exact"] = bool(native.upper <= cfg.tolerance("qca_distance"))
        if not result["native_exact"]:
            warnings.append(f"QCA input is not reproduced at j={native.j}: distance {native.upper:.3e}")
    elif not sweep.decreasing:
        warnings.append("certified distances do not decrease strictly across the sweep")
    if not sweep.agrees:
        warnings.append("the stabilized index does not match the window index of the input")
    report = Report(result, warnings)
    rows = result["rows"]
    report.figures.append(("approximation", lambda p: _plotting().approximation_figure(rows, p)))
    return report


def cmd_synthesize(cfg: ExperimentConfig) -> Report:
    target = build_target(cfg)
    res = synthesize_hamiltonian(target.qca if target.qca is not None else target.auto, cfg.seed or 0, cfg.tolerance("synthesis"))
    result = {
        "model": target.description,
        "residual": res.residual,
        "segments": [[d, list(i)] for d, i in res.model.segments] if res.model.terms else [],
        "terms": res.terms,
        "empty": not res.model.terms,
    }
    return Report(result, attachments={"model": res.model.as_dict()})


def cmd_stability(cfg: ExperimentConfig) -> Report:
    seed = cfg.seed or 0
    s = cfg.sweep
    lemmas = commutator_lemma_suite(int(s.get("draws", 1000)), seed)
    inner = make_inner_suite(int(s.get("inner_instances", 100)), seed, float(s.get("inner_max_eps", 0.3)))
    rot = rotate_into_suite(int(s.get("rotate_instances", 50)), seed, float(s.get("rotate_max_eps", 1 / 64)))
    incl = simultaneous_inclusion_suite(int(s.get("inclusion_instances", 20)), seed)
    warnings: list[str] = []
    tol = cfg.tolerance("stability_residual")
    for name, suite in (("make_inner", inner), ("rotate_into", rot)):
        if suite["max_residual"] > tol:
            warnings.append(f"{name}: residual {suite['max_residual']:.2e} above {tol:.0e}")
    slack = {
        "commutator_powers": {"violations": lemmas["powers"]["violations"], "max_ratio": lemmas["powers"]["max_ratio"]},
        "commutator_polar": {"violations": lemmas["polar"]["violations"], "max_ratio": lemmas["polar"]["max_ratio"]},
        "make_inner": {"violations": inner["violations"], "max_ratio": inner["max_ratio"]},
        "rotate_into": {"violations": rot["violations"], "max_ratio": rot["max_ratio"]},
        "simultaneous_inclusion": {"violations": incl["violations"], "max_ratio": incl["max_ratio"]},
    }
    result = {
        "all_pass": all(v["violations"] == 0 for v in slack.values()) and not warnings,
        "slack": slack,
        "make_inner": {k: v for k, v in inner.items() if k != "rows"},
        "rotate_into": rot,
        "precondition": _precondition_demo(),
    }
    report = Report(result, warnings)
    rows = rot["rows"]
    report.figures.append(("rotation", lambda p: _plotting().rotation_figure(rows, p)))
    return report


def _precondition_demo() -> dict[str, Any]:
    """A homomorphism with deviation at least one, which must be refused."""
    chain = ChainSpec.uniform(1, 2, Boundary.OPEN)
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    h = NearHomomorphism.build([OperatorAlgebra.region(chain, [0])], [lambda a: x @ a @ x])
    try:
        make_inner(h)
    except EpsilonTooLarge as exc:
        return {"eps": h.eps, "error": "EpsilonTooLarge", "message": str(exc)}
    return {"eps": h.eps, "error": None, "message": "accepted"}


def cmd_jw(cfg: ExperimentConfig) -> Report:
    chain = cfg.chain.spec()
    tails = bool(cfg.sweep.get("tails", True))
    rep = jw_translation_demo(chain.num_sites, float(cfg.sweep.get("tail_time", 0.5)), tails, cfg.seed or 0)
    warnings = [rep.note]
    tol = cfg.tolerance("fock")
    if rep.fock_error_even > tol:
        warnings.append(f"Fock-space conjugation error {rep.fock_error_even:.2e} above {tol:.0e}")
    report = Report(rep.as_dict(), warnings)
    scaled = list(rep.scaled_coefficients)
    report.figures.append(("hopping", lambda p: _plotting().hopping_figure(scaled, p)))
    return report


COMMANDS: dict[str, Callable[[ExperimentConfig], Report]] = {
    "index": cmd_index,
    "tails": cmd_tails,
    "approximate": cmd_approximate,
    "synthesize": cmd_synthesize,
    "stability": cmd_stability,
    "jw-demo": cmd_jw,
}


def run(cfg: ExperimentConfig, timestamp: str | None = None) -> tuple[dict[str, Any], Report]:
    """Run one experiment under the configured size caps."""
    if cfg.randomized and cfg.seed is None:
        raise ConfigError(f"experiment {cfg.experiment!r} is randomized and needs a seed")
    with limits(max_dim=cfg.max_dim):
        report = COMMANDS[cfg.experiment](cfg)
    return envelope(cfg, report, timestamp), report


def write_outputs(cfg: ExperimentConfig, payload: dict[str, Any], report: Report, figures: bool = False) -> list[Path]:
    """Write the report and its side files; without ``out`` the report goes to stdout."""
    written: list[Path] = []
    if cfg.out is None:
        sys.stdout.write(render_json(payload))
        base = Path(cfg.experiment)
    else:
        base = Path(cfg.out)
        base.parent.mkdir(parents=True, exist_ok=True)
        base.write_text(render_json(payload), encoding="utf-8")
        written.append(base)
        for name, rows in report.tables.items():
            p = base.with_suffix(f".{name}")
            p.write_text(render_csv(rows), encoding="utf-8")
            written.append(p)
        for name, data in report.attachments.items():
            p = base.with_suffix(f".{name}.json")
            p.write_text(render_json(data), encoding="utf-8")
            written.append(p)
    if figures:
        for name, draw in report.figures:
            written.append(draw(base.with_name(f"{base.stem}_{name}.png")))
    return written


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcalab", description="Index experiments for quantum cellular automata on spin chains.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--seed", type=int, help="random seed (overrides the configuration)")
        p.add_argument("--out", help="report path; side files share its stem")
        p.add_argument("--max-dim", type=int, help="cap on full-chain operator dimension")
        p.add_argument("--tolerance", type=float, help=f"override the '{PRIMARY_TOLERANCE[name]}' tolerance")
        p.add_argument("--figures", action="store_true", help="also render PNG figures next to the report")
        p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else default_config(args.command)
    if cfg.experiment != args.command:
        raise ConfigError(f"configuration is for {cfg.experiment!r}, not {args.command!r}")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.max_dim is not None:
        cfg.max_dim = args.max_dim
    if args.tolerance is not None:
        cfg.tolerances[PRIMARY_TOLERANCE[args.command]] = args.tolerance
    cfg.__post_init__()
    return cfg


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, NonzeroIndex):
        return EXIT_NONZERO_INDEX
    if isinstance(exc, DimensionCap):
        return EXIT_DIMENSION
    if isinstance(exc, NumericalFailure):
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.dump_config:
            sys.stdout.write(cfg.dump())
            return 0
        payload, report = run(cfg)
        for path in write_outputs(cfg, payload, report, args.figures):
            log.info("wrote %s", path)
    except QcaLabError as exc:
        code = exit_code(exc)
        msg = str(exc)
        if isinstance(exc, NonzeroIndex) and exc.index is not None and f"{exc.index:.6f}" not in msg:
            msg = f"{msg} (index {exc.index:.6f})"
        print(f"qcalab: {type(exc).__name__}: {msg}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
