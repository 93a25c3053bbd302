"""YAML scenario configuration: validation, defaults and canonical form.

Types, particles, sets and partitions are 1-based in the document and
converted to 0-based here.  ``parse_config`` returns a :class:`ScenarioConfig`
whose ``resolved`` dict is the canonical document (every default filled in);
``serialize_config`` dumps it back to YAML.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .coalescent import CoalescenceSpec, CoalescentParams, TypedPartition
from .errors import ConfigError, DiceError
from .measures import (
    DEFAULT_EPSILON,
    AtomicMeasure,
    CoordinationMeasure,
    DirichletSplitting,
    HarmonicSplitting,
    InstantExchange,
    MultinomialSplitting,
    StochasticExchange,
    TotallyDependent,
    ZeroMeasure,
)
from .rates import DiceParams
from .stats import resolve_seed

SCHEMA_VERSION = 1

SCENARIOS = (
    "verify-consistency",
    "verify-exchangeability",
    "simulate-dice",
    "frequency-sde",
    "duality-check",
    "convergence-check",
    "coalescent",
    "coalescent-consistency",
)

COMMON_KEYS = {"schema", "scenario", "d", "rates", "measure", "seed", "epsilon", "output"}

# Scenario fields and their defaults; None means "derived from d" or "required".
SCENARIO_FIELDS: dict[str, dict[str, Any]] = {
    "verify-consistency": {"n_max": 3, "n": 3, "m": None},
    "verify-exchangeability": {"n": 3},
    "simulate-dice": {"n": None, "x0": None, "T": 1.0},
    "frequency-sde": {"r0": None, "T": 1.0},
    "duality-check": {"r0": None, "b0": None, "T": 1.0, "paths": 100_000},
    "convergence-check": {"r0": None, "n_list": [10, 100, 1000], "T": 1.0, "paths": 2000},
    "coalescent": {"n": None, "x0": None, "partition": None, "T": 1.0, "coalescence": None},
    "coalescent-consistency": {"n": 4, "m": 2, "x0": None, "T": 1.0, "paths": 20_000,
                               "coalescence": None},
}

MEASURE_KEYS = {
    "zero": set(),
    "atomic": {"atoms"},
    "totally-dependent": {"maps"},
    "stochastic-exchange": {"atoms"},
    "multinomial-splitting": {"eta", "rates"},
    "dirichlet-splitting": {"eta", "rates"},
    "harmonic-splitting": {"eta", "rates"},
    "instant-exchange": {"eta", "kappa", "rates"},
}


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError("expected a mapping", path)
    for key in obj:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError("unknown key", where)


def _require(obj, key, path):
    if key not in obj or obj[key] is None:
        raise ConfigError("required key missing", f"{path}.{key}" if path else key)
    return obj[key]


def _number(v, path, lo=None, hi=None, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", path)
    if integer and int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}", path)
    if lo is not None and v < lo:
        raise ConfigError(f"must be >= {lo}, got {v}", path)
    if hi is not None and v > hi:
        raise ConfigError(f"must be <= {hi}, got {v}", path)
    return int(v) if integer else float(v)


def _vector(v, path, length=None, integer=False, lo=None, hi=None):
    if not isinstance(v, (list, tuple)):
        raise ConfigError("expected a list", path)
    if length is not None and len(v) != length:
        raise ConfigError(f"expected {length} entries, got {len(v)}", path)
    return [_number(x, f"{path}[{k}]", lo=lo, hi=hi, integer=integer) for k, x in enumerate(v)]


def _matrix(v, d, path):
    if not isinstance(v, (list, tuple)) or len(v) != d:
        raise ConfigError(f"expected a {d}x{d} matrix", path)
    return [_vector(row, f"{path}[{k}]", length=d, lo=0.0) for k, row in enumerate(v)]


def _index_set(v, d, path):
    return sorted(set(_vector(v, path, integer=True, lo=1, hi=d)))


def _canonical_measure(m, d, path="measure"):
    """Validate a measure section and return its canonical dict (1-based)."""
    if m is None:
        return {"family": "zero"}
    _check_keys(m, {"family"} | set().union(*MEASURE_KEYS.values()), path)
    family = _require(m, "family", path)
    if family not in MEASURE_KEYS:
        raise ConfigError(f"unknown family {family!r}; expected one of {sorted(MEASURE_KEYS)}",
                          f"{path}.family")
    _check_keys(m, {"family"} | MEASURE_KEYS[family], path)
    out: dict = {"family": family}
    if family == "zero":
        return out
    if family == "atomic":
        atoms = _require(m, "atoms", path)
        out["atoms"] = []
        for k, a in enumerate(atoms):
            p = f"{path}.atoms[{k}]"
            _check_keys(a, {"weight", "matrix"}, p)
            out["atoms"].append({"weight": _number(_require(a, "weight", p), f"{p}.weight", lo=0.0),
                                 "matrix": _matrix(_require(a, "matrix", p), d, f"{p}.matrix")})
    elif family == "totally-dependent":
        out["maps"] = []
        for k, a in enumerate(_require(m, "maps", path)):
            p = f"{path}.maps[{k}]"
            _check_keys(a, {"map", "rate"}, p)
            out["maps"].append({"map": _vector(_require(a, "map", p), f"{p}.map", length=d,
                                               integer=True, lo=1, hi=d),
                                "rate": _number(_require(a, "rate", p), f"{p}.rate", lo=0.0)})
    elif family == "stochastic-exchange":
        out["atoms"] = []
        for k, a in enumerate(_require(m, "atoms", path)):
            p = f"{path}.atoms[{k}]"
            _check_keys(a, {"i", "j", "s", "v", "weight"}, p)
            rec = {key: _number(_require(a, key, p), f"{p}.{key}", integer=True, lo=1, hi=d)
                   for key in ("i", "j")}
            rec.update({key: _number(_require(a, key, p), f"{p}.{key}", lo=0.0, hi=1.0)
                        for key in ("s", "v")})
            rec["weight"] = _number(_require(a, "weight", p), f"{p}.weight", lo=0.0)
            out["atoms"].append(rec)
    else:
        eta = _vector(_require(m, "eta", path), f"{path}.eta", length=d)
        if min(eta) <= 0:
            raise ConfigError("eta entries must be positive", f"{path}.eta")
        out["eta"] = eta
        if family == "instant-exchange":
            out["kappa"] = _number(_require(m, "kappa", path), f"{path}.kappa", lo=0.0)
        out["rates"] = []
        allowed = {"source", "set", "rate"} if family == "harmonic-splitting" else {"set", "rate"}
        for k, a in enumerate(_require(m, "rates", path)):
            p = f"{path}.rates[{k}]"
            _check_keys(a, allowed, p)
            rec = {"set": _index_set(_require(a, "set", p), d, f"{p}.set"),
                   "rate": _number(_require(a, "rate", p), f"{p}.rate", lo=0.0)}
            if family == "harmonic-splitting":
                rec["source"] = _number(_require(a, "source", p), f"{p}.source",
                                        integer=True, lo=1, hi=d)
            out["rates"].append(rec)
    return out


def build_measure(m: dict, d: int) -> CoordinationMeasure:
    """Construct the measure from a canonical measure dict."""
    family = m["family"]
    if family == "zero":
        return ZeroMeasure(d)
    if family == "atomic":
        return AtomicMeasure([(a["weight"], a["matrix"]) for a in m["atoms"] if a["weight"] > 0], d=d)
    if family == "totally-dependent":
        return TotallyDependent({tuple(v - 1 for v in a["map"]): a["rate"] for a in m["maps"]}, d=d)
    if family == "stochastic-exchange":
        return StochasticExchange(d, [(a["i"] - 1, a["j"] - 1, a["s"], a["v"], a["weight"])
                                      for a in m["atoms"]])
    sets = {tuple(j - 1 for j in a["set"]): a["rate"] for a in m["rates"]} \
        if family != "harmonic-splitting" else None
    if family == "multinomial-splitting":
        return MultinomialSplitting(m["eta"], sets)
    if family == "dirichlet-splitting":
        return DirichletSplitting(m["eta"], sets)
    if family == "instant-exchange":
        return InstantExchange(m["eta"], m["kappa"], sets)
    return HarmonicSplitting(m["eta"], {(a["source"] - 1, tuple(j - 1 for j in a["set"])): a["rate"]
                                        for a in m["rates"]})


def measure_to_config(nu: CoordinationMeasure) -> dict:
    """Canonical config dict for a measure (inverse of :func:`build_measure`)."""
    fam = nu.family
    if fam == "zero":
        return {"family": "zero"}
    if fam == "atomic":
        return {"family": "atomic", "atoms": [{"weight": float(w), "matrix": U.tolist()}
                                              for w, U in nu.atoms()]}
    if fam == "totally-dependent":
        return {"family": fam, "maps": [{"map": [v + 1 for v in f], "rate": c}
                                        for f, c in nu.rates.items()]}
    if fam == "stochastic-exchange":
        return {"family": fam, "atoms": [{"i": i + 1, "j": j + 1, "s": s, "v": v, "weight": w}
                                         for i, j, s, v, w in nu.exchange_atoms]}
    out = {"family": fam, "eta": nu.eta.tolist()}
    if fam == "instant-exchange":
        out["kappa"] = nu.kappa
    if fam == "harmonic-splitting":
        out["rates"] = [{"set": [j + 1 for j in J], "rate": c, "source": i + 1}
                        for (i, J), c in nu.rates.items()]
    else:
        out["rates"] = [{"set": [j + 1 for j in J], "rate": c} for J, c in nu.rates.items()]
    return out


def _canonical_coalescence(c, d, path="coalescence"):
    if c is None:
        return {"rho": [0.0] * d, "atoms": []}
    _check_keys(c, {"rho", "atoms"}, path)
    rho = c.get("rho", [0.0] * d)
    if isinstance(rho, list) and rho and isinstance(rho[0], list):
        mat = _matrix(rho, d, f"{path}.rho")
        for i in range(d):
            for k in range(d):
                if i != k and mat[i][k] != 0:
                    raise ConfigError(
                        "rho_ik must be 0 for i != k: a single block changing type is a "
                        "switching event, not a merger", f"{path}.rho[{i}][{k}]")
        rho = [mat[i][i] for i in range(d)]
    else:
        rho = _vector(rho, f"{path}.rho", length=d, lo=0.0)
    atoms = []
    for k, a in enumerate(c.get("atoms") or []):
        p = f"{path}.atoms[{k}]"
        _check_keys(a, {"target", "weight", "u"}, p)
        u = _vector(_require(a, "u", p), f"{p}.u", length=d, lo=0.0, hi=1.0)
        if not any(u):
            raise ConfigError("atoms at the zero vector are not allowed", f"{p}.u")
        atoms.append({"target": _number(_require(a, "target", p), f"{p}.target",
                                        integer=True, lo=1, hi=d),
                      "weight": _number(_require(a, "weight", p), f"{p}.weight", lo=0.0),
                      "u": u})
    return {"rho": rho, "atoms": atoms}


def build_coalescence(c: dict, d: int) -> CoalescenceSpec:
    atoms: dict = {}
    for a in c["atoms"]:
        atoms.setdefault(a["target"] - 1, []).append((a["weight"], a["u"]))
    return CoalescenceSpec(d, tuple(c["rho"]), atoms)


def _simplex(v, d, path):
    r = _vector(v, path, length=d, lo=0.0)
    if abs(sum(r) - 1.0) > 1e-9:
        raise ConfigError(f"entries sum to {sum(r)}, not 1 (not on the simplex)", path)
    return r


@dataclass(eq=False)
class ScenarioConfig:
    scenario: str
    d: int
    params: DiceParams
    seed: int
    epsilon: float
    output: str | None
    fields: dict
    resolved: dict
    coalescence: CoalescenceSpec | None = None
    extra: dict = field(default_factory=dict)

    @property
    def scenario_hash(self) -> str:
        return scenario_hash(self.resolved)

    def coalescent_params(self) -> CoalescentParams:
        return CoalescentParams(self.coalescence, self.params)


def scenario_hash(resolved: dict) -> str:
    body = {k: v for k, v in resolved.items() if k != "output"}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_document(text: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping")
    return doc


def parse_config(text: str | dict, overrides: dict | None = None,
                 scenario: str | None = None) -> ScenarioConfig:
    """Validate a config document; ``overrides`` (CLI flags) win over the document."""
    doc = dict(load_document(text) if isinstance(text, str) else text)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    if scenario is not None:
        if doc.get("scenario", scenario) != scenario:
            raise ConfigError(f"config is for {doc['scenario']!r}, not {scenario!r}", "scenario")
        doc["scenario"] = scenario
    name = _require(doc, "scenario", "")
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {list(SCENARIOS)}", "scenario")
    defaults = SCENARIO_FIELDS[name]
    _check_keys(doc, COMMON_KEYS | set(defaults), "")
    schema = doc.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {schema!r}", "schema")

    d = _number(_require(doc, "d", ""), "d", lo=1, integer=True)
    A = _matrix(doc.get("rates", [[0.0] * d for _ in range(d)]), d, "rates")
    for i in range(d):
        A[i][i] = 0.0
    measure = _canonical_measure(doc.get("measure"), d)
    seed = resolve_seed(None if doc.get("seed") is None else
                        _number(doc["seed"], "seed", lo=0, integer=True))
    epsilon = _number(doc.get("epsilon", DEFAULT_EPSILON), "epsilon")
    if not 0 < epsilon < 1:
        raise ConfigError("epsilon must lie in (0, 1)", "epsilon")
    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("expected a path string", "output")

    try:
        params = DiceParams(np.array(A), build_measure(measure, d))
    except DiceError as exc:
        raise ConfigError(str(exc), "measure") from exc

    f = _scenario_fields(name, doc, defaults, d)
    coalescence = None
    if "coalescence" in defaults:
        f["coalescence"] = _canonical_coalescence(doc.get("coalescence"), d)
        try:
            coalescence = build_coalescence(f["coalescence"], d)
        except DiceError as exc:
            raise ConfigError(str(exc), "coalescence") from exc

    resolved = {"schema": SCHEMA_VERSION, "scenario": name, "d": d, "rates": A,
                "measure": measure, "seed": seed, "epsilon": epsilon, **f}
    if output is not None:
        resolved["output"] = output
    return ScenarioConfig(name, d, params, seed, epsilon, output, f, resolved, coalescence)


def _scenario_fields(name, doc, defaults, d) -> dict:
    f: dict = {}

    def get(key):
        return doc.get(key, defaults[key])
    if "n_max" in defaults:
        f["n_max"] = _number(get("n_max"), "n_max", lo=1, integer=True)
    if "T" in defaults:
        f["T"] = _number(get("T"), "T", lo=0.0)
    if "paths" in defaults:
        f["paths"] = _number(get("paths"), "paths", lo=1, integer=True)
    if "r0" in defaults:
        r0 = get("r0")
        f["r0"] = [1.0 / d] * d if r0 is None else _simplex(r0, d, "r0")
    if "b0" in defaults:
        b0 = get("b0")
        f["b0"] = [1] + [0] * (d - 1) if b0 is None else _vector(b0, "b0", length=d, integer=True, lo=0)
    if "n_list" in defaults:
        f["n_list"] = _vector(get("n_list"), "n_list", integer=True, lo=1)
    if "partition" in defaults and doc.get("partition") is not None:
        text = doc["partition"]
        try:
            pi = TypedPartition.parse(str(text))
        except (DiceError, ValueError) as exc:
            raise ConfigError(str(exc), "partition") from exc
        if pi.types and max(pi.types) >= d:
            raise ConfigError(f"block type exceeds d={d}", "partition")
        f["partition"] = pi.serialize()
        f["n"] = pi.n
        return f
    if "x0" in defaults:
        x0 = doc.get("x0")
        n = doc.get("n", defaults.get("n"))
        if x0 is not None:
            x0 = _vector(x0, "x0", integer=True, lo=1, hi=d)
            if n is not None and _number(n, "n", integer=True, lo=1) != len(x0):
                raise ConfigError(f"n={n} disagrees with len(x0)={len(x0)}", "n")
            n = len(x0)
        else:
            if n is None:
                raise ConfigError("one of n or x0 is required", "n")
            n = _number(n, "n", integer=True, lo=1)
            x0 = [l % d + 1 for l in range(n)]
        f["n"], f["x0"] = n, x0
    elif "n" in defaults:
        f["n"] = _number(get("n"), "n", integer=True, lo=1)
    if "m" in defaults:
        m = get("m")
        if m is not None:
            f["m"] = _number(m, "m", integer=True, lo=1)
            if f["m"] >= f["n"]:
                raise ConfigError(f"m={f['m']} must be smaller than n={f['n']}", "m")
    if name == "coalescent" and "partition" not in f:
        f["partition"] = TypedPartition.singletons([v - 1 for v in f.pop("x0")]).serialize()
    return f


def serialize_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.resolved, sort_keys=True, default_flow_style=None)


def canonicalize(text: str | dict) -> dict:
    return parse_config(text).resolved
