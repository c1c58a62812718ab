"""Run configuration: parsing, validation and resolution.

Configs are TOML files (see README for the grammar) or JSON files with the
same nested layout.  A ``meta.json`` written by a run is also accepted: its
``config`` member is the fully resolved configuration and everything else is
ignored, so feeding it back reproduces the run.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from .dtwa import EnsembleConfig, recommended_dt
from .lattice import LatticeSpec, build_coupling_matrix, layer_averaged_coupling, nearest_layer_coupling
from .model import InitialStateSpec, ModelSpec, preset_antialigned_bilayer, preset_xyz_spiral, tms_staggered_field

EXPERIMENTS = ("simulate", "greens", "ed", "sweep", "oracle")
PRESETS = ("antialigned_bilayer", "xyz_spiral", "custom")
OBSERVABLES = ("pair_number", "spin_length_sq", "magnetization", "sq1", "sq2", "asq1", "asq2")
ORACLES = ("tms_pair_number", "tms_variance", "kitaev_commutator", "kitaev_propagator")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending line when known."""


_num = (int, float)
_SCHEMA = {
    "experiment": str,
    "lattice": {
        "L": int, "L_x": int, "L_y": int, "L_z": int, "a_lat": _num, "a_Z": _num,
        "filling": _num, "C_dd": _num, "periodic_z": bool, "seed": int,
    },
    "model": {"J_perp": _num, "J_z": _num, "staggered_h": (int, float, str), "truncation": str},
    "initial": {"preset": str, "directions": list},
    "ensemble": {
        "n_traj": int, "master_seed": int, "dt": (int, float, str), "t_max": _num,
        "n_samples": int, "sample_times": list, "time_unit": str, "chunk_size": int,
        "n_blocks": int,
    },
    "observables": {"names": list},
    "greens": {"source_layer": int, "epsilon": _num, "epsilon_check": bool},
    "sweep": {"L": list, "quadrature": str},
    "ed": {"mode": str, "S": _num},
    "oracle": {
        "name": str, "S": _num, "V": _num, "N": _num, "branch": int, "t_max": _num,
        "n_samples": int, "n_layers": int, "r": list, "kind": str,
    },
    "output": {"dir": str},
}


def _locate(text: str | None, section: str | None, key: str) -> str:
    """``' (line n)'`` for ``key`` inside ``[section]`` of a TOML text, if found."""
    if not text:
        return ""
    current = None
    pat = re.compile(r"^\s*([A-Za-z0-9_\"'-]+)\s*=")
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("["):
            current = s.strip("[] ")
            if section is not None and current == section and key is None:
                return f" (line {n})"
            continue
        m = pat.match(line)
        if m and m.group(1).strip("\"'") == key and current == section:
            return f" (line {n})"
    return ""


def _fail(msg: str, text, section, key):
    raise ConfigError(msg + _locate(text, section, key))


def validate(raw: dict, text: str | None = None) -> dict:
    """Reject unknown sections and keys and wrong value types."""
    for sec, body in raw.items():
        if sec not in _SCHEMA:
            where = _locate(text, sec, None) or _locate(text, None, sec)
            raise ConfigError(f"unknown section or key {sec!r}{where}")
        spec = _SCHEMA[sec]
        if not isinstance(spec, dict):
            if not isinstance(body, spec):
                _fail(f"{sec!r} must be of type {spec.__name__}", text, None, sec)
            continue
        if not isinstance(body, dict):
            _fail(f"[{sec}] must be a table", text, None, sec)
        for key, value in body.items():
            if key not in spec:
                _fail(f"unknown key {key!r} in [{sec}]", text, sec, key)
            want = spec[key]
            allowed = want if isinstance(want, tuple) else (want,)
            if isinstance(value, bool) and bool not in allowed:
                _fail(f"[{sec}] {key} must not be a boolean", text, sec, key)
            if not isinstance(value, want):
                _fail(f"[{sec}] {key} has the wrong type ({type(value).__name__})", text, sec, key)
    return raw


def load(path) -> tuple[dict, str | None]:
    """Parse and validate a TOML or JSON config file; returns (raw dict, source text)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if path.suffix.lower() == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path} (line {exc.lineno}, column {exc.colno}): {exc.msg}")
        if isinstance(raw, dict) and "config" in raw and isinstance(raw["config"], dict):
            raw = raw["config"]
        return validate(raw, None), None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}")
    return validate(raw, text), text


# --------------------------------------------------------------------------
# resolution


@dataclass
class Resolved:
    """Concrete objects plus the fully resolved, re-loadable config dict."""

    config: dict
    experiment: str
    spec: LatticeSpec | None = None
    cm: object = None
    model: ModelSpec | None = None
    init: InitialStateSpec | None = None
    ensemble: EnsembleConfig | None = None
    S: float = 0.0
    V: float = 0.0
    vav: np.ndarray | None = None


def _err(msg, text, sec, key):
    _fail(msg, text, sec, key)


def resolve_lattice(raw: dict, text=None) -> LatticeSpec:
    lat = dict(raw.get("lattice", {}))
    L = lat.pop("L", None)
    if L is not None:
        lat.setdefault("L_x", L)
        lat.setdefault("L_y", L)
    lat.pop("seed", None)
    for k in ("L_x", "L_y", "L_z"):
        if k not in lat:
            _err(f"[lattice] needs {k} (or L for both in-plane sizes)", text, "lattice", None)
    try:
        return LatticeSpec(**{k: (float(v) if isinstance(v, float) else v) for k, v in lat.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[lattice] {exc}{_locate(text, 'lattice', None)}")


def resolve_initial(raw: dict, L_z: int, text=None) -> tuple[str, InitialStateSpec]:
    ini = raw.get("initial", {})
    preset = ini.get("preset", "antialigned_bilayer" if L_z == 2 else "xyz_spiral")
    if preset not in PRESETS:
        _err(f"unknown preset {preset!r}; choose from {PRESETS}", text, "initial", "preset")
    try:
        if preset == "antialigned_bilayer":
            return preset, preset_antialigned_bilayer(L_z)
        if preset == "xyz_spiral":
            return preset, preset_xyz_spiral(L_z)
        if "directions" not in ini:
            _err("custom preset needs directions", text, "initial", "preset")
        return preset, InitialStateSpec(np.array(ini["directions"], dtype=float))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[initial] {exc}{_locate(text, 'initial', 'preset')}")


def source_layer_default(init: InitialStateSpec) -> int:
    """Layer pointing along ``+z`` closest to the middle of the stack."""
    d = init.directions
    cands = [i for i in range(len(d)) if np.allclose(d[i], [0, 0, 1])]
    mid = 0.5 * (len(d) - 1)
    if not cands:
        return int(math.floor(mid))
    return min(cands, key=lambda i: (abs(i - mid), i))


def resolve(raw: dict, experiment: str, text: str | None = None, seed_override=None,
            need_dt: bool = True) -> Resolved:
    """Turn a validated raw config into concrete objects and a resolved dict."""
    raw = copy.deepcopy(raw)
    declared = raw.get("experiment")
    if declared is not None and declared != experiment:
        _err(f"config declares experiment {declared!r} but {experiment!r} was requested",
             text, None, "experiment")
    out: dict = {"experiment": experiment}
    if experiment == "oracle":
        out["oracle"] = resolve_oracle(raw, text)
        return Resolved(out, experiment)

    spec = resolve_lattice(raw, text)
    lat_seed = int(raw.get("lattice", {}).get("seed", 0))
    out["lattice"] = {
        "L_x": spec.L_x, "L_y": spec.L_y, "L_z": spec.L_z, "a_lat": float(spec.a_lat),
        "a_Z": float(spec.a_Z), "filling": float(spec.filling), "C_dd": float(spec.C_dd),
        "periodic_z": bool(spec.periodic_z), "seed": lat_seed,
    }
    mdl = raw.get("model", {})
    truncation = mdl.get("truncation", "full")
    try:
        cm = build_coupling_matrix(spec, rng_seed=lat_seed, truncation=truncation)
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}{_locate(text, 'model', 'truncation')}")
    if np.any(cm.layer_sizes == 0):
        raise ConfigError("a layer has no occupied sites")
    vav = layer_averaged_coupling(cm)
    V = nearest_layer_coupling(vav) if spec.L_z > 1 else 0.0
    S = float(np.mean(cm.layer_sizes)) / 2.0

    preset, init = resolve_initial(raw, spec.L_z, text)
    out["initial"] = {"preset": "custom", "directions": init.directions.tolist()}
    if preset != "custom":
        out["initial"] = {"preset": preset}

    h = mdl.get("staggered_h", "tms" if preset == "antialigned_bilayer" else 0.0)
    if isinstance(h, str):
        if h != "tms":
            _err(f"staggered_h must be a number or \"tms\", got {h!r}", text, "model", "staggered_h")
        try:
            h = tms_staggered_field(cm)
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}{_locate(text, 'model', 'staggered_h')}")
    model = ModelSpec(float(mdl.get("J_perp", 1.0)), float(mdl.get("J_z", 1.0)), float(h), truncation)
    out["model"] = {"J_perp": model.J_perp, "J_z": model.J_z, "staggered_h": model.staggered_h,
                    "truncation": truncation}

    ens = raw.get("ensemble", {})
    unit = ens.get("time_unit", "raw")
    if unit not in ("raw", "sv"):
        _err("time_unit must be \"raw\" or \"sv\"", text, "ensemble", "time_unit")
    scale = 1.0
    if unit == "sv":
        if S * abs(V) == 0:
            _err("time_unit \"sv\" needs a nonzero nearest-layer coupling", text, "ensemble", "time_unit")
        scale = 1.0 / (S * abs(V))
    t_max = float(ens.get("t_max", 1.0)) * scale
    if "sample_times" in ens:
        times = [float(t) * scale for t in ens["sample_times"]]
    else:
        n = int(ens.get("n_samples", 21))
        if n < 1:
            _err("n_samples must be positive", text, "ensemble", "n_samples")
        times = np.linspace(0.0, t_max, n).tolist() if n > 1 else [t_max]
    seed = int(ens.get("master_seed", 0)) if seed_override is None else int(seed_override)
    dt = ens.get("dt", "auto")
    if isinstance(dt, str):
        if dt != "auto":
            _err("dt must be a number or \"auto\"", text, "ensemble", "dt")
        dt = recommended_dt(init, cm, model, seed) if need_dt else 0.01
    try:
        ensemble = EnsembleConfig(
            n_traj=int(ens.get("n_traj", 2000)), master_seed=seed, dt=float(dt), t_max=t_max,
            sample_times=tuple(times), chunk_size=int(ens.get("chunk_size", 250)),
            n_blocks=int(ens.get("n_blocks", 20)),
        )
    except ValueError as exc:
        raise ConfigError(f"[ensemble] {exc}{_locate(text, 'ensemble', None)}")
    out["ensemble"] = {
        "n_traj": ensemble.n_traj, "master_seed": seed, "dt": ensemble.dt, "t_max": ensemble.t_max,
        "sample_times": list(ensemble.sample_times), "time_unit": "raw",
        "chunk_size": ensemble.chunk_size, "n_blocks": ensemble.n_blocks,
    }

    if "observables" in raw:
        names = raw["observables"].get("names", [])
        for nm in names:
            if nm not in OBSERVABLES:
                _err(f"unknown observable {nm!r}; choose from {OBSERVABLES}", text, "observables", "names")
        out["observables"] = {"names": list(names)}
    if experiment == "greens":
        g = raw.get("greens", {})
        src = int(g.get("source_layer", source_layer_default(init)))
        if not 0 <= src < spec.L_z:
            _err(f"source_layer {src} outside 0..{spec.L_z - 1}", text, "greens", "source_layer")
        eps = float(g.get("epsilon", 0.05))
        if not eps > 0:
            _err("epsilon must be positive", text, "greens", "epsilon")
        out["greens"] = {"source_layer": src, "epsilon": eps,
                         "epsilon_check": bool(g.get("epsilon_check", True))}
    if experiment == "sweep":
        sw = raw.get("sweep", {})
        Ls = [int(x) for x in sw.get("L", [6, 8, 10, 12])]
        if spec.L_z != 2:
            _err("sweep runs the bilayer squeezing experiment and needs L_z = 2", text, "lattice", "L_z")
        if unit != "sv":
            _err("sweep needs time_unit = \"sv\" so the time grid follows each size", text,
                 "ensemble", "time_unit")
        q = sw.get("quadrature", "auto")
        if q != "auto" and q not in ("sq1", "sq2", "asq1", "asq2"):
            _err(f"unknown quadrature {q!r}", text, "sweep", "quadrature")
        out["sweep"] = {"L": Ls, "quadrature": q}
        # per-size grids are rebuilt from the dimensionless times
        out["ensemble"]["time_unit"] = "sv"
        out["ensemble"]["t_max"] = float(ens.get("t_max", 1.0))
        out["ensemble"]["sample_times"] = [t / scale for t in times]
        out["ensemble"]["dt"] = ens.get("dt", "auto")
        out["model"]["staggered_h"] = mdl.get(
            "staggered_h", "tms" if preset == "antialigned_bilayer" else 0.0)
    if experiment == "ed":
        e = raw.get("ed", {})
        mode = e.get("mode", "full")
        if mode not in ("full", "collective"):
            _err("ed mode must be \"full\" or \"collective\"", text, "ed", "mode")
        out["ed"] = {"mode": mode}
        if mode == "collective":
            out["ed"]["S"] = float(e.get("S", S))
    return Resolved(out, experiment, spec, cm, model, init, ensemble, S, V, vav)


def resolve_oracle(raw: dict, text=None) -> dict:
    o = dict(raw.get("oracle", {}))
    name = o.get("name")
    if name not in ORACLES:
        _err(f"[oracle] name must be one of {ORACLES}", text, "oracle", "name")
    res = {"name": name, "S": float(o.get("S", 50.0)), "V": float(o.get("V", 1.0)),
           "t_max": float(o.get("t_max", 1.0)), "n_samples": int(o.get("n_samples", 21))}
    if name == "tms_variance":
        res["N"] = float(o.get("N", 2 * res["S"]))
        res["branch"] = int(o.get("branch", -1))
        if res["branch"] not in (1, -1):
            _err("branch must be +1 or -1", text, "oracle", "branch")
    if name in ("kitaev_commutator", "kitaev_propagator"):
        res["n_layers"] = int(o.get("n_layers", 12))
        res["r"] = [int(x) for x in o.get("r", [0, 1, 2, 3])]
        res["kind"] = o.get("kind", "xp")
        if res["kind"] not in ("xp", "px", "xx", "pp"):
            _err("kind must be xp, px, xx or pp", text, "oracle", "kind")
    return res
