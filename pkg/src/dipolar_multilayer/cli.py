"""Command-line entry point ``dipolar-multilayer``.

Subcommands: simulate, greens, oracle, ed, sweep, overlay.  Exit codes: 0 on
success, 2 for invalid configuration or missing inputs, 3 when the numerics
abort (non-finite trajectories).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import ed as edmod
from . import observables as obs
from . import oracle
from .config import ConfigError
from .dtwa import IntegrationError, run_ensemble
from .greens import greens_linear_response

THREADS_ENV = "DIPOLAR_MULTILAYER_THREADS"
AXES = "xyz"


def fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _meta(res, extra=None) -> dict:
    meta = {"code_version": __version__}
    if res.cm is not None:
        meta.update({
            "master_seed": res.ensemble.master_seed,
            "n_sites": int(res.cm.n_sites),
            "layer_sizes": res.cm.layer_sizes.tolist(),
            "S": res.S,
            "V": res.V,
            "V_av": res.vav.tolist(),
        })
    meta.update(extra or {})
    return {"config": res.config, "meta": meta}


def _series_rows(series: obs.ObservableSeries, sv: float, db_ref: float | None = None):
    if db_ref is None:
        return (["time", "value", "stderr", "sv_time"],
                [(t, v, e, sv * t) for t, v, e in zip(series.times, series.values, series.stderr)])
    d = obs.to_db(series, db_ref)
    return (["time", "value", "stderr", "value_db", "stderr_db", "sv_time"],
            [(t, v, e, vd, ed, sv * t) for t, v, e, vd, ed in
             zip(series.times, series.values, series.stderr, d.values, d.stderr)])


def _default_observables(res) -> list[str]:
    names = ["magnetization", "spin_length_sq"]
    if res.init.n_layers == 2:
        names += ["sq1", "sq2", "asq1", "asq2"]
    if res.init.is_antialigned_bilayer():
        names.insert(0, "pair_number")
    return names


def write_observables(acc, res, out: Path, names=None) -> list[str]:
    names = names or res.config.get("observables", {}).get("names") or _default_observables(res)
    sv = res.S * abs(res.V)
    written = []
    for name in names:
        if name == "pair_number":
            s = obs.pair_number(acc)
            write_csv(out / "pair_number.csv", *_series_rows(s, sv))
            written.append("pair_number.csv")
        elif name == "spin_length_sq":
            for layer in range(acc.n_layers):
                s = obs.spin_length_sq(acc, layer)
                fn = f"spin_length_sq_L{layer}.csv"
                write_csv(out / fn, *_series_rows(s, sv))
                written.append(fn)
        elif name == "magnetization":
            rows = []
            for ti, t in enumerate(acc.times):
                for layer in range(acc.n_layers):
                    for ax in AXES:
                        s = obs.layer_magnetization(acc, layer, ax)
                        rows.append((t, layer, ax, s.values[ti], s.stderr[ti], sv * t))
            write_csv(out / "magnetization.csv",
                      ["time", "layer", "axis", "value", "stderr", "sv_time"], rows)
            written.append("magnetization.csv")
        else:
            s = obs.quadrature_variance(acc, name)
            N = float(acc.layer_sizes[0])
            write_csv(out / f"var_{name}.csv", *_series_rows(s, sv, db_ref=N / 2.0))
            written.append(f"var_{name}.csv")
    return written


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(raw, text, args, out: Path) -> dict:
    res = cfgmod.resolve(raw, "simulate", text, args.seed)
    acc = run_ensemble(res.ensemble, res.init, res.cm, res.model, threads=args.threads)
    files = write_observables(acc, res, out)
    write_json(out / "meta.json", _meta(res, {"files": files}))
    return {"files": files}


def cmd_greens(raw, text, args, out: Path) -> dict:
    res = cfgmod.resolve(raw, "greens", text, args.seed)
    g = res.config["greens"]
    gt = greens_linear_response(res.ensemble, res.init, res.cm, res.model, g["source_layer"],
                                g["epsilon"], threads=args.threads, epsilon_check=g["epsilon_check"])
    lam, chi = gt.lambda_max(), gt.chirality()
    sv = res.S * abs(res.V)
    entries = [f"G_{a}{b}" for a in AXES for b in AXES]
    rows, erows = [], []
    for ti, t in enumerate(gt.times):
        for j in range(gt.n_layers):
            rows.append([t, j, *gt.G[ti, j].ravel(), lam[ti, j], chi[ti, j], sv * t])
            erows.append([t, j, *gt.stderr[ti, j].ravel(), sv * t])
    write_csv(out / "greens.csv", ["time", "layer", *entries, "lambda_max", "chirality", "sv_time"],
              rows)
    write_csv(out / "greens_stderr.csv", ["time", "layer", *entries, "sv_time"], erows)
    write_json(out / "meta.json", _meta(res, {"greens": gt.metadata}))
    return gt.metadata


def cmd_ed(raw, text, args, out: Path) -> dict:
    res = cfgmod.resolve(raw, "ed", text, args.seed, need_dt=False)
    times = np.asarray(res.ensemble.sample_times)
    mode = res.config["ed"]["mode"]
    if mode == "full":
        if res.cm.n_sites > edmod.MAX_SPINS:
            raise ConfigError(f"{res.cm.n_sites} spins exceed the exact-evolution cap {edmod.MAX_SPINS}")
        ham = edmod.SpinHalfHamiltonian(res.cm, res.model)
        psi0 = ham.product_state(res.init.directions[res.cm.layer])
    else:
        S = res.config["ed"]["S"]
        try:
            ham = edmod.CollectiveHamiltonian(res.spec.L_z, S, res.vav, res.model)
        except ValueError as exc:
            raise ConfigError(str(exc))
        psi0 = ham.product_state(res.init.directions)
    states = edmod.evolve(ham, psi0, times)
    spins = edmod.spin_expectations(ham, states)
    sv = res.S * abs(res.V)
    rows = [(t, u, *spins[ti, u], sv * t) for ti, t in enumerate(times) for u in range(spins.shape[1])]
    write_csv(out / "ed_spins.csv", ["time", "unit", "sx", "sy", "sz", "sv_time"], rows)
    drift = max(abs(s.norm - 1.0) for s in states)
    write_json(out / "meta.json", _meta(res, {"ed_mode": mode, "norm_drift": drift}))
    return {"norm_drift": drift}


def cmd_sweep(raw, text, args, out: Path) -> dict:
    raw0 = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    lat = raw0.setdefault("lattice", {})
    if "L" not in lat and "L_x" not in lat:
        lat["L"] = int(raw0.get("sweep", {}).get("L", [6])[0])
    base = cfgmod.resolve(raw0, "sweep", text, args.seed, need_dt=False)
    sw = base.config["sweep"]
    rows, Ns, rel = [], [], []
    for L in sw["L"]:
        sub = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()
               if k not in ("sweep", "experiment", "output")}
        sub.setdefault("lattice", {})
        sub["lattice"].pop("L_x", None)
        sub["lattice"].pop("L_y", None)
        sub["lattice"]["L"] = int(L)
        res = cfgmod.resolve(sub, "simulate", None, args.seed)
        q = sw["quadrature"]
        q = obs.squeezed_quadratures(res.V)[0] if q == "auto" else q
        acc = run_ensemble(res.ensemble, res.init, res.cm, res.model, threads=args.threads)
        series = obs.quadrature_variance(acc, q)
        sv = res.S * abs(res.V)
        write_csv(out / f"var_{q}_L{L}.csv", *_series_rows(series, sv, db_ref=res.S))
        scan = obs.min_variance_scan(series)
        N = float(res.cm.layer_sizes[0])
        Ns.append(N)
        rel.append(scan.value / (N / 2.0))
        rows.append((L, N, scan.t_min, sv * scan.t_min, scan.value, scan.value / (N / 2.0),
                     int(scan.at_boundary), q))
    write_csv(out / "min_variance.csv",
              ["L", "N", "t_min", "sv_t_min", "var_min", "rel_var_min", "at_boundary", "quadrature"],
              rows)
    extra = {}
    if len(Ns) >= 2 and all(r > 0 for r in rel):
        extra["power_law_exponent"] = obs.fit_power_law(Ns, rel)[0]
    base.cm = None
    write_json(out / "meta.json", _meta(base, extra))
    return extra


def cmd_oracle(raw, text, args, out: Path) -> dict:
    res = cfgmod.resolve(raw, "oracle", text)
    o = res.config["oracle"]
    t = np.linspace(0.0, o["t_max"], o["n_samples"]) if o["n_samples"] > 1 else np.array([o["t_max"]])
    name = o["name"]
    if name == "tms_pair_number":
        vals = oracle.tms_pair_number(o["S"], o["V"], t)
        write_csv(out / "oracle_tms_pair_number.csv", ["time", "value"], zip(t, vals))
    elif name == "tms_variance":
        vals = oracle.tms_variance(o["N"], o["S"], o["V"], t, o["branch"])
        write_csv(out / "oracle_tms_variance.csv", ["time", "value"], zip(t, vals))
    elif name == "kitaev_commutator":
        rows = []
        for tt in t:
            for r in o["r"]:
                z = oracle.kitaev_commutator(r, o["S"] * o["V"], tt, o["kind"])
                rows.append((tt, r, o["kind"], z.real, z.imag))
        write_csv(out / "oracle_kitaev_commutator.csv", ["time", "r", "kind", "re", "im"], rows)
    else:
        n = o["n_layers"]
        rows = []
        for tt in t:
            T = oracle.kitaev_propagator(n, o["S"] * o["V"], tt)
            rows += [(tt, a, b, T[a, b]) for a in range(2 * n) for b in range(2 * n)]
        write_csv(out / "oracle_kitaev_propagator.csv", ["time", "row", "col", "value"], rows)
    write_json(out / "meta.json", _meta(res))
    return {}


def _read_csv(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_overlay(run_dir: Path, name: str, out: Path) -> dict:
    meta_path = run_dir / "meta.json"
    if not run_dir.is_dir() or not meta_path.exists():
        raise ConfigError(f"{run_dir} is not a completed run directory (no meta.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))["meta"]
    S, V = meta["S"], meta["V"]
    if name == "tms_pair_number":
        path = run_dir / "pair_number.csv"
        if not path.exists():
            raise ConfigError("missing series pair_number.csv")
        rows = []
        for r in _read_csv(path):
            t = float(r["time"])
            o = float(oracle.tms_pair_number(S, V, t))
            rows.append((t, float(r["value"]), float(r["stderr"]), o, float(r["value"]) - o))
        header = ["time", "value", "stderr", "oracle", "residual"]
    elif name == "tms_variance":
        squeezed = obs.squeezed_quadratures(V)
        rows = []
        for q in ("sq1", "sq2", "asq1", "asq2"):
            path = run_dir / f"var_{q}.csv"
            if not path.exists():
                continue
            branch = -1 if q in squeezed else 1
            for r in _read_csv(path):
                t = float(r["time"])
                o = float(oracle.tms_variance(2 * S, S, abs(V), t, branch))
                rows.append((q, t, float(r["value"]), float(r["stderr"]), o, float(r["value"]) - o))
        if not rows:
            raise ConfigError("missing series var_*.csv")
        header = ["quadrature", "time", "value", "stderr", "oracle", "residual"]
    elif name == "kitaev_commutator":
        path = run_dir / "greens.csv"
        if not path.exists():
            raise ConfigError("missing series greens.csv")
        src = json.loads(meta_path.read_text(encoding="utf-8"))["meta"]["greens"]["source_layer"]
        rows = []
        for r in _read_csv(path):
            t, j = float(r["time"]), int(r["layer"])
            d = abs(j - src)
            o = S * (2 * S * abs(V) * t) ** d / math.factorial(d)
            lam = float(r["lambda_max"])
            rows.append((t, j, lam, o, lam - o))
        header = ["time", "layer", "lambda_max", "oracle", "residual"]
    else:
        raise ConfigError(f"no overlay for oracle {name!r}")
    write_csv(out / f"overlay_{name}.csv", header, rows)
    return {}


# --------------------------------------------------------------------------


def _threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get(THREADS_ENV)
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dipolar-multilayer",
                                description="dTWA, exact and closed-form dynamics of dipolar multilayers")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "greens", "oracle", "ed", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML or JSON config (meta.json accepted)")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        sp.add_argument("--seed", type=int, help="override the master seed")
    ov = sub.add_parser("overlay")
    ov.add_argument("--run", required=True, help="completed run directory")
    ov.add_argument("--oracle", required=True,
                    choices=["tms_pair_number", "tms_variance", "kitaev_commutator"])
    ov.add_argument("--out", help="output directory (default: the run directory)")
    return p


COMMANDS = {"simulate": cmd_simulate, "greens": cmd_greens, "oracle": cmd_oracle,
            "ed": cmd_ed, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "overlay":
            run_dir = Path(args.run)
            out = Path(args.out) if args.out else run_dir
            out.mkdir(parents=True, exist_ok=True)
            cmd_overlay(run_dir, args.oracle, out)
            return 0
        args.threads = _threads(args.threads)
        raw, text = cfgmod.load(args.config)
        out = Path(args.out or raw.get("output", {}).get("dir", "run"))
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](raw, text, args, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IntegrationError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
