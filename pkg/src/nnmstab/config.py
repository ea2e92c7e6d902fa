"""Scenario configuration: TOML schema, validation and model builders.

A scenario file has these tables (all optional except ``system``)::

    [system]        kind = "gyroscopic" | "chain3" | "duffing" | "linear" | "polynomial"
                    params = { ... }          # keyword arguments of the builder
    [perturbation]  kind = "gyroscopic" | "parametric_square_wave" | "generic" | "none"
                    params = { ... }
    [family]        continuation controls and stop criteria
    [orbit]         which orbits to analyse (target frequency or energies)
    [resonance]     m, l
    [melnikov]      grid_size, nodes, harmonic
    [sweep]         parameter, values, n_theta, nodes, flag_near
    [verify]        epsilon list and Newton controls
    [output]        dir
    [tolerances]    overrides of :class:`nnmstab.tolerances.Tolerances`
    [run]           threads

Unknown keys anywhere are rejected.  ``dumps(loads(text))`` reproduces the
parsed structure exactly.
"""

import copy
import hashlib
import inspect
from pathlib import Path

import tomli
import tomli_w

from . import systems
from .dynsys import zero_perturbation
from .errors import ConfigError
from .tolerances import Tolerances

SYSTEM_BUILDERS = {
    "linear": systems.linear_oscillator,
    "duffing": systems.duffing,
    "gyroscopic": systems.gyroscopic,
    "chain3": systems.chain3,
    "polynomial": systems.polynomial,
}

PERTURBATION_BUILDERS = {
    "gyroscopic": systems.gyroscopic_perturbation,
    "parametric_square_wave": systems.chain3_perturbation,
    "generic": systems.generic_perturbation,
    "none": None,
}

_num = (int, float)

SCHEMA = {
    "system": {"kind": str, "params": dict},
    "perturbation": {"kind": str, "params": dict},
    "family": {
        "mode": int,
        "seed_amplitude": _num,
        "direction": int,
        "step": _num,
        "min_step": _num,
        "max_step": _num,
        "max_steps": int,
        "stop_on_flags": list,
        "h_max": _num,
        "omega_min": _num,
        "omega_max": _num,
        "omega_bar_max": _num,
        "stop_at_period_fold": bool,
    },
    "orbit": {"frequency": _num, "energies": list, "select": (str, list)},
    "resonance": {"m": int, "l": int},
    "melnikov": {"grid_size": int, "nodes": int, "harmonic": int},
    "sweep": {"parameter": str, "values": list, "n_theta": int, "nodes": int, "flag_near": _num, "classify": bool},
    "verify": {
        "epsilon": list,
        "newton_tol": _num,
        "max_iter": int,
        "persistence_radius": _num,
        "override_guard": bool,
    },
    "output": {"dir": str},
    "tolerances": {k: _num for k in Tolerances().as_dict()},
    "run": {"threads": int},
}

DEFAULTS = {
    "family": dict(
        mode=0, seed_amplitude=1e-3, direction=1, step=0.05, min_step=1e-5, max_step=0.2,
        max_steps=200, stop_on_flags=["period-doubling"], stop_at_period_fold=False,
    ),
    "orbit": dict(select="all"),
    "resonance": dict(m=1, l=1),
    "melnikov": dict(grid_size=256, nodes=256, harmonic=1),
    "sweep": dict(n_theta=128, nodes=128, flag_near=2e-2, classify=True),
    "verify": dict(epsilon=[0.01], max_iter=30, persistence_radius=0.25, override_guard=False),
    "output": dict(dir="out"),
    "run": dict(threads=1),
}


def _check_params(builder, params, where, skip=("system",)):
    sig = inspect.signature(builder)
    allowed = [p for p in sig.parameters if p not in skip]
    bad = sorted(set(params) - set(allowed))
    if bad:
        raise ConfigError(f"unknown key(s) {bad} in {where}; allowed: {allowed}")


def validate(cfg):
    """Check ``cfg`` against the schema; raises :class:`ConfigError`."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a table")
    bad = sorted(set(cfg) - set(SCHEMA))
    if bad:
        raise ConfigError(f"unknown section(s) {bad}; allowed: {sorted(SCHEMA)}")
    if "system" not in cfg:
        raise ConfigError("missing [system] table")
    for sec, body in cfg.items():
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        allowed = SCHEMA[sec]
        unknown = sorted(set(body) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown} in [{sec}]; allowed: {sorted(allowed)}")
        for k, v in body.items():
            typ = allowed[k]
            if typ is _num or (isinstance(typ, tuple) and float in typ and int in typ):
                ok = isinstance(v, _num) and not isinstance(v, bool)
            else:
                ok = isinstance(v, typ)
            if not ok:
                raise ConfigError(f"[{sec}].{k} has type {type(v).__name__}, expected {typ}")
    kind = cfg["system"].get("kind")
    if kind not in SYSTEM_BUILDERS:
        raise ConfigError(f"[system].kind must be one of {sorted(SYSTEM_BUILDERS)}, got {kind!r}")
    _check_params(SYSTEM_BUILDERS[kind], cfg["system"].get("params", {}), "[system].params")
    if "perturbation" in cfg:
        pk = cfg["perturbation"].get("kind", "none")
        if pk not in PERTURBATION_BUILDERS:
            raise ConfigError(f"[perturbation].kind must be one of {sorted(PERTURBATION_BUILDERS)}")
        if PERTURBATION_BUILDERS[pk] is not None:
            _check_params(PERTURBATION_BUILDERS[pk], cfg["perturbation"].get("params", {}), "[perturbation].params")
    res = cfg.get("resonance", {})
    for key in ("m", "l"):
        if key in res and res[key] < 1:
            raise ConfigError(f"[resonance].{key} must be positive")
    eps = cfg.get("verify", {}).get("epsilon", [])
    if any(not isinstance(e, _num) or e < 0 for e in eps):
        raise ConfigError("[verify].epsilon must be a list of non-negative numbers")
    sw = cfg.get("sweep")
    if sw is not None:
        if "parameter" not in sw or "values" not in sw:
            raise ConfigError("[sweep] needs 'parameter' and 'values'")
    return cfg


def loads(text):
    try:
        cfg = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return validate(cfg)


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def dumps(cfg):
    return tomli_w.dumps(cfg)


def config_hash(cfg):
    """SHA-256 of the canonical TOML rendering (keys sorted)."""

    def canon(x):
        if isinstance(x, dict):
            return {k: canon(x[k]) for k in sorted(x)}
        if isinstance(x, list):
            return [canon(v) for v in x]
        return x

    return hashlib.sha256(tomli_w.dumps(canon(cfg)).encode()).hexdigest()


def get(cfg, section, key, default=None):
    """Value from ``cfg`` with the schema default as fallback."""
    if key in cfg.get(section, {}):
        return cfg[section][key]
    return DEFAULTS.get(section, {}).get(key, default)


def apply_override(cfg, assignment):
    """Apply ``"a.b.c=value"``; the value is parsed as a TOML value."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form KEY=VALUE")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"empty key in override {assignment!r}")
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()  # bare words are strings
    out = copy.deepcopy(cfg)
    node = out
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r} descends into a non-table")
    node[parts[-1]] = value
    return validate(out)


def tolerances(cfg):
    return Tolerances(**cfg.get("tolerances", {}))


def build_system(cfg):
    sec = cfg["system"]
    try:
        return SYSTEM_BUILDERS[sec["kind"]](**sec.get("params", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot build system {sec['kind']!r}: {exc}") from exc


def perturbation_builder(cfg, system):
    """``overrides -> PerturbationField`` for the configured kind."""
    sec = cfg.get("perturbation", {"kind": "none"})
    kind = sec.get("kind", "none")
    base = dict(sec.get("params", {}))
    fn = PERTURBATION_BUILDERS[kind]

    def build(**overrides):
        if fn is None:
            return zero_perturbation(system)
        kw = {**base, **overrides}
        try:
            return fn(system, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cannot build perturbation {kind!r}: {exc}") from exc

    return build
