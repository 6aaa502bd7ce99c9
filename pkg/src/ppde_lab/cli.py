"""Batch driver: ``ppde-lab <command> --config path.json [--out dir] [--threads n] [--seed s]``.

Every run writes ``report.json`` (the resolved config plus results) and
``plotdata.csv``; ``compare`` also writes ``ledger.csv``.  Exit codes: 0 when
every check passes, 1 when a named check fails, 2 on config or precondition
errors.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import comparison as cmp
from .errors import PPDEError
from .frozen_max import left_frozen_maximize, verify_rmax
from .functional import builtin, numeric_derivatives
from .jets import FirstOrderJet, Jet, subjet_test, superjet_test
from .paths import PathStub, SpatialGrid, TimeGrid, lattice_stubs, random_stubs
from .solver import LiftSpec, mc_feynman_kac, read_solution, solve_lattice, solve_lifted
from .viscosity import builtin_generator, is_subsolution, is_supersolution

COMMANDS = ("deriv", "maximize", "jets", "check", "compare", "solve", "oracle")
SCHEMA_VERSION = 1


class ConfigError(Exception):
    pass


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


# config validation --------------------------------------------------------------------

def _field(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "config"


def _describe(err: jsonschema.ValidationError) -> str:
    where = _field(err.absolute_path)
    v = err.validator_value
    if err.validator == "exclusiveMinimum":
        return f"{where} must be > {v}"
    if err.validator == "minimum":
        return f"{where} must be >= {v}"
    if err.validator == "type":
        return f"{where} must be of type {v}"
    if err.validator == "enum":
        return f"{where} must be one of {', '.join(map(str, v))}"
    if err.validator == "const":
        return f"{where} must be {v}"
    if err.validator == "required":
        missing = [k for k in v if k not in err.instance]
        prefix = "" if where == "config" else where + "."
        return "; ".join(f"{prefix}{k} is required" for k in missing)
    if err.validator == "additionalProperties":
        known = err.schema.get("properties", {})
        extra = sorted(k for k in err.instance if k not in known)
        return f"{where}: unknown key(s) {', '.join(extra)}"
    if err.validator == "oneOf":
        return f"{where} must be a number or a list of numbers"
    if err.validator == "minItems":
        return f"{where} must have at least {v} item(s)"
    return f"{where}: {err.message}"


def validate_config(cfg: dict) -> None:
    """Raise ``ConfigError`` listing every schema violation, one per line."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)),
                                                                e.validator))
    if errors:
        raise ConfigError("\n".join(dict.fromkeys(_describe(e) for e in errors)))


def read_config(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


# object construction ------------------------------------------------------------------

class _Context:
    def __init__(self, cfg: dict, base: Path, threads: int):
        g = cfg["grid"]
        self.cfg = cfg
        self.grid = TimeGrid(g["T"], g["N"])
        self.space = SpatialGrid(g["lower"], g["upper"], g["M"])
        self.objects = cfg.get("objects", {})
        self.numeric = cfg.get("numeric", {})
        self.base = base
        self.threads = threads

    def num(self, key, default=None):
        return self.numeric.get(key, default)

    def need(self, key: str):
        if key not in self.objects:
            raise ConfigError(f"objects.{key} is required for command {self.cfg['command']}")
        return self.objects[key]

    def functional(self, key: str):
        return self._functional(self.need(key), f"objects.{key}")

    def _functional(self, spec: dict, where: str):
        if ("name" in spec) == ("solution" in spec):
            raise ConfigError(f"{where} must give exactly one of name or solution")
        if "solution" in spec:
            path = Path(spec["solution"])
            u = read_solution(path if path.is_absolute() else self.base / path)
            if u.grid != self.grid or u.space != self.space:
                raise ConfigError(f"{where}.solution was computed on different grids")
        else:
            params = dict(spec.get("params", {}))
            if spec["name"] == "mc_conditional":
                if "seed" not in params:
                    if "seed" not in self.numeric:
                        raise ConfigError("numeric.seed is required for mc_conditional")
                    params["seed"] = self.numeric["seed"]
                if "payoff" not in params:
                    raise ConfigError(f"{where}.params.payoff is required")
                params["payoff"] = self._functional(params["payoff"], f"{where}.params.payoff")
                params["space"] = self.space
            u = builtin(spec["name"], **params)
        if "scale" in spec:
            u = u * spec["scale"]
        if "offset" in spec:
            u = u + spec["offset"]
        return u

    def generator(self):
        spec = self.need("generator")
        return builtin_generator(spec["name"], **spec.get("params", {}))

    def stub(self) -> PathStub:
        spec = self.need("stub")
        stub = PathStub(self.grid, spec["values"])
        if "k" in spec and spec["k"] != stub.k:
            raise ConfigError(f"objects.stub.k is {spec['k']} but {stub.k + 1} values are given")
        return stub

    def points(self) -> list:
        pts = self.num("points")
        if pts is None:
            return [np.asarray(p) for p in self.space.interior_points]
        return [np.atleast_1d(np.asarray(p, dtype=float)) for p in pts]


# helpers ----------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, PathStub):
        return obj.to_json()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    return obj


def _check(name: str, passed: bool, **info) -> dict:
    return dict(info, name=name, passed=bool(passed))


def _flat(prefix: str, arr) -> dict:
    a = np.atleast_1d(np.asarray(arr, dtype=float))
    out = {}
    for idx in np.ndindex(a.shape):
        out[prefix + "_" + "_".join(map(str, idx))] = float(a[idx])
    return out


def _write_csv(path: Path, rows: list, header: Optional[list] = None) -> None:
    if header is None:
        header = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# commands ----------------------------------------------------------------------------

def _deriv(ctx: _Context):
    u = ctx.functional("functional")
    if "stub" in ctx.objects:
        stubs = [ctx.stub()]
    else:
        stubs = random_stubs(ctx.grid, ctx.space, ctx.num("n_stubs", 100), rng=ctx.num("seed", 0))
    tol = ctx.num("tol", 1e-3)
    rows, worst = [], 0.0
    for i, w in enumerate(stubs):
        der = numeric_derivatives(u, w, ctx.space, ctx.num("h"))
        row = {"stub": i, "k": w.k, "t": w.t, **_flat("x", w.terminal), "dt": der.dt,
               **_flat("dx", der.dx), **_flat("dxx", der.dxx)}
        if u.has_exact:
            ex = u.exact_derivatives(w)
            err = max(float(np.max(np.abs(der.dx - ex.dx))),
                      float(np.max(np.abs(der.dxx - ex.dxx))))
            worst = max(worst, err)
            row.update({"exact_dt": ex.dt, **_flat("exact_dx", ex.dx),
                        **_flat("exact_dxx", ex.dxx), "error": err})
        rows.append(row)
    checks = []
    if u.has_exact:
        checks.append(_check("spatial_derivatives_match_exact", worst <= tol, worst=worst, tol=tol))
    result = {"functional": u.name, "n_stubs": len(stubs), "has_exact": u.has_exact}
    return result, checks, rows, None


def _maximize(ctx: _Context):
    u = ctx.functional("functional")
    kw = {"k_max": ctx.num("k_max"), "cap": ctx.num("cap", 10**6)}
    res = left_frozen_maximize(u, ctx.stub(), ctx.space, slack=ctx.num("slack", 0.0), **kw)
    rmax = verify_rmax(u, res, ctx.space, **kw)
    checks = [_check("gap_halving", res.gap_halving()),
              _check("rmax", rmax.ok, violation=rmax.violation, n_checked=rmax.n_checked)]
    rows = [{"i": i, "m_i": m, "mbar_i": mb} for i, (m, mb) in enumerate(res.certificate)]
    (ctx.out / "maximizer.json").write_text(
        json.dumps(_jsonable(res.maximizer), sort_keys=True, indent=2) + "\n")
    return {"maximization": res.to_dict()}, checks, rows, None


def _jets(ctx: _Context):
    u = ctx.functional("functional")
    spec = ctx.need("jet")
    jet = Jet(spec["a"], spec["p"], spec["X"]) if "X" in spec else FirstOrderJet(spec["a"], spec["p"])
    side = ctx.num("side", "super")
    test = superjet_test if side == "super" else subjet_test
    res = test(u, ctx.stub(), jet, ctx.space, radius=ctx.num("radius"), tol=ctx.num("tol", 1e-8))
    rows = [{"level": i, "margin": m} for i, m in enumerate(res.per_radius)]
    checks = [_check(f"{side}jet", res.passed, margin=res.margin)]
    print(f"{side}jet {'PASS' if res.passed else 'FAIL'} margin={res.margin:.6g} "
          f"per_radius={[float(f'{m:.6g}') for m in res.per_radius]}")
    return {"jet": jet.to_dict(), "side": side, "margin": res.margin,
            "per_radius": res.per_radius, "n_probes": res.n_probes,
            "skipped": res.skipped}, checks, rows, None


def _check_cmd(ctx: _Context):
    u = ctx.functional("functional")
    G = ctx.generator()
    if ctx.num("sampler", "lattice") == "lattice":
        stubs = lattice_stubs(ctx.grid, ctx.space, ctx.num("k_max"))
    else:
        stubs = random_stubs(ctx.grid, ctx.space, ctx.num("n_stubs", 100), rng=ctx.num("seed", 0))
    source = ctx.num("jet_source", "exact")
    sides = [ctx.num("side")] if "side" in ctx.numeric else ["sub", "super"]
    result, checks, rows = {"functional": u.name, "generator": G.name}, [], []
    for side in sides:
        fn = is_subsolution if side == "sub" else is_supersolution
        rep = fn(u, G, stubs, source, tol=ctx.num("tol"), space=ctx.space, h=ctx.num("h"))
        result[f"{side}solution"] = rep.to_dict()
        result[f"{side}solution"]["per_stub"] = [
            {"stub": w.to_json()["values"], "k": w.k, "margin": m}
            for w, m in zip(rep.stubs, rep.margins)]
        checks.append(_check(f"{side}solution", rep.passed, margin=rep.margin))
        rows += [{"side": side, "stub": i, "k": w.k, "t": w.t, **_flat("x", w.terminal),
                  "margin": m} for i, (w, m) in enumerate(zip(rep.stubs, rep.margins))]
    return result, checks, rows, None


def _compare(ctx: _Context):
    u, v, G = ctx.functional("u"), ctx.functional("v"), ctx.generator()
    method = ctx.num("method", "smooth")
    tol = ctx.num("tol", 1e-9)
    if method == "smooth":
        rep = cmp.compare_smooth(u, v, G, ctx.num("delta_bar", 0.1), ctx.grid, ctx.space,
                                 k_max=ctx.num("k_max"), tol=tol,
                                 check_boundary=ctx.num("check_boundary", True), strict=False)
    else:
        rho = ctx.num("rho")
        if rho is None:
            raise ConfigError(f"numeric.rho is required for method {method}")
        conf = cmp.DoublingConfig(
            alpha=ctx.num("alpha"),
            alpha_schedule=tuple(ctx.num("alpha_schedule", (1e2, 1e3, 1e4, 1e5, 1e6))),
            delta_bar=ctx.num("delta_bar", 0.1), C=ctx.num("C"),
            rho=cmp.modulus(rho["kind"], rho.get("scale", 1.0)), a_bar=ctx.num("a_bar"),
            tube=ctx.num("tube"), tol=tol,
            monotonicity_samples=ctx.num("monotonicity_samples", 10_000),
            seed=ctx.num("seed", 0))
        pairs = ctx.num("modulus_pairs", 400)
        if method == "viscosity_2nd":
            rep = cmp.compare_viscosity_2nd(u, v, G, conf, ctx.grid, ctx.space,
                                            k_max=ctx.num("k_max"), strict=False,
                                            modulus_pairs=pairs)
        else:
            rep = cmp.compare_viscosity_1st(u, v, G, conf, ctx.grid, ctx.space, strict=False,
                                            modulus_pairs=pairs)
    ledger = [e.row() for e in rep.ledger]
    checks = [_check(e.name, e.passed, kind=e.kind, margin=e.margin)
              for e in rep.ledger if e.kind != "diagnostic"]
    checks.append(_check("verdict_ordered", rep.verdict == "ordered", verdict=rep.verdict))
    rows = []
    if rep.certificate is not None:
        rows = [{"i": i, "m_i": m, "mbar_i": mb} for i, (m, mb) in enumerate(rep.certificate.certificate)]
    return {"comparison": rep.to_dict(), "method": method}, checks, rows, ledger


def _solve(ctx: _Context):
    G, phi = ctx.generator(), ctx.functional("payoff")
    roots = [PathStub(ctx.grid, [p]) for p in ctx.points()]
    cap = ctx.num("cap", 10**6)
    lift = ctx.objects.get("lift")
    rows = []
    if lift is None:
        sol = solve_lattice(G, phi, ctx.grid, ctx.space, roots, cap)
        if ctx.num("k_max") is not None:
            # store every stub a later ``check`` up to k_max may ask for
            for w in lattice_stubs(ctx.grid, ctx.space, ctx.num("k_max")):
                sol(w)
        sol.to_jsonl(ctx.out / "solution.jsonl")
        meta = sol.meta
    else:
        spec = LiftSpec(lift["kind"], lift.get("axis", 0))
        grid = ctx.grid
        if spec.kind == "none":
            def phi_lift(t, x, a):
                k = int(round(t / grid.dt))
                return phi(PathStub(grid, np.repeat(np.atleast_1d(x)[None, :], k + 1, axis=0)))
        else:
            def phi_lift(t, x, a):
                return a
        sol = solve_lifted(G, phi_lift, spec, grid, ctx.space, roots, phi=phi,
                           seed=ctx.num("seed", 0), cap=cap)
        with open(ctx.out / "lifted.jsonl", "w") as fh:
            for key in sorted(sol.values):
                fh.write(json.dumps({"key": list(key), "value": sol.values[key]}) + "\n")
        meta = {"dt": grid.dt, "h": np.asarray(ctx.space.h).tolist(), "cfl_ratio": sol.cfl_ratio,
                "lift": dataclasses.asdict(spec), "n_values": len(sol.values)}
    for r in roots:
        rows.append({**_flat("x", r.terminal), "u": sol(r)})
    return {"scheme": meta, "values": rows}, [], rows, None


def _oracle(ctx: _Context):
    phi = ctx.functional("payoff")
    sigma = ctx.num("sigma", 1.0)
    n, seed = ctx.num("n_paths", 100_000), ctx.numeric["seed"]
    tol = ctx.num("tol", 0.05)
    lattice = None
    if "generator" in ctx.objects:
        lattice = solve_lattice(ctx.generator(), phi, ctx.grid, ctx.space, None,
                                ctx.num("cap", 10**6))
    elif "u" in ctx.objects:
        lattice = ctx.functional("u")
    rows, worst_ok = [], True
    for p in ctx.points():
        w = PathStub(ctx.grid, [p])
        est, se = mc_feynman_kac(phi, w, sigma, n, seed, ctx.space, threads=ctx.threads)
        row = {**_flat("x", p), "mc": est, "stderr": se}
        if lattice is not None:
            lat = lattice(w)
            bound = max(3 * se, tol)
            row.update({"lattice": lat, "gap": abs(lat - est), "bound": bound,
                        "pass": abs(lat - est) <= bound})
            worst_ok &= abs(lat - est) <= bound
        rows.append(row)
    checks = [] if lattice is None else [_check("mc_vs_lattice", worst_ok)]
    return {"estimates": rows, "sigma": sigma, "n_paths": n}, checks, rows, None


_DISPATCH = {"deriv": _deriv, "maximize": _maximize, "jets": _jets, "check": _check_cmd,
             "compare": _compare, "solve": _solve, "oracle": _oracle}


# driver ------------------------------------------------------------------------------

def run(config: dict, out, threads: int = 1, base: Optional[Path] = None) -> int:
    """Validate ``config``, execute it and write the artifacts into ``out``."""
    validate_config(config)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Context(config, base or Path("."), threads)
    ctx.out = out
    result, checks, rows, ledger = _DISPATCH[config["command"]](ctx)
    failed = [c["name"] for c in checks if not c["passed"]]
    report = {"schema_version": SCHEMA_VERSION, "command": config["command"], "config": config,
              "passed": not failed, "failed": failed, "checks": checks, "result": result}
    (out / "report.json").write_text(
        json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n")
    _write_csv(out / "plotdata.csv", rows)
    if ledger is not None:
        _write_csv(out / "ledger.csv", ledger, ["check_name", "lhs", "rhs", "margin", "pass"])
    if failed:
        print(f"FAIL: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ppde-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="experiment config (JSON)")
    ap.add_argument("--out", default="ppde_out", help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="worker cap for Monte Carlo")
    ap.add_argument("--seed", type=int, default=None, help="overrides numeric.seed")
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = read_config(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        cfg = copy.deepcopy(cfg)
        if cfg.get("command", args.command) != args.command:
            raise ConfigError(f"config command {cfg['command']!r} does not match {args.command!r}")
        cfg["command"] = args.command
        if args.seed is not None:
            cfg.setdefault("numeric", {})["seed"] = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return run(cfg, args.out, args.threads, Path(args.config).resolve().parent)
    except (ConfigError, PPDEError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
