"""Command-line entry point: scenario configs, subcommand dispatch, manifests and reports.

Every run validates its config before computing anything, writes outputs only
after the computation succeeded (temp file + rename), and records a manifest
``<out>.manifest.json`` without timestamps, so identical inputs give
byte-identical artefacts.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import platform
import sys
import typing
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import ConfigError, LabError

SUBCOMMANDS = ("lemma-check", "verify-dichotomy", "solve-admissibility", "robustness-sweep",
               "norm-equivalence", "derive-exponents")


# ---------------------------------------------------------------- scenario schema

@dataclass(frozen=True)
class RateConfig:
    kind: str = "exponential"
    params: tuple = ()


@dataclass(frozen=True)
class DriverConfig:
    kind: str = "irrational_rotation"
    params: tuple = ()


@dataclass(frozen=True)
class FieldConfig:
    kind: str = "constant"
    params: tuple = (1.0,)
    salt: str = "field"


@dataclass(frozen=True)
class SystemConfig:
    """``model`` (constructive example), ``constant`` (fixed matrix ``A``) or ``random`` entries."""

    kind: str = "model"
    P: tuple = ((1.0, 0.0), (0.0, 0.0))
    lam: FieldConfig = FieldConfig("constant", (1.0,))
    D: FieldConfig = FieldConfig("constant", (2.0,))
    K: FieldConfig = FieldConfig("constant", (1.0,))
    profile: str = "alternating"
    A: tuple = ()
    dim: int = 2
    seed: int = 0
    low: float = -1.0
    high: float = 1.0


@dataclass(frozen=True)
class CertificateConfig:
    """``model`` (built-in), ``fit`` (envelope fit on ``P``) or ``identify`` (splitting, then fit)."""

    kind: str = "model"
    P: tuple = ()


@dataclass(frozen=True)
class GridConfig:
    orbits: int = 8
    ell_max: int = 16
    horizon: int = 64
    seed: int = 0


@dataclass(frozen=True)
class LemmaConfig:
    alphas: tuple = (0.5, 1.0, 1.5, 2.0, 3.0)
    s_max: int = 64
    r_max: int = 10_000
    r_count: int = 64


@dataclass(frozen=True)
class AdmissibilityConfig:
    probes: int = 32
    extension: str = "zero"
    tail_eps: float = 1e-10
    j_max: int = 100_000


@dataclass(frozen=True)
class RobustnessConfig:
    rho_margin: float = 0.5
    shape: str = "random"
    direction: tuple = ()
    count: int = 16
    refit: bool = True
    max_iter: int = 200


@dataclass(frozen=True)
class NormConfig:
    nu: RateConfig = RateConfig("logarithmic", (3.0,))
    epsilon: float = 0.1


@dataclass(frozen=True)
class DeriveConfig:
    target_ratio: float = 2.0
    witness_horizon: int = 256
    growth_threshold: float = 0.1
    gap_tol: float = 0.02
    ratio_min: float = 1e3


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 0
    driver: DriverConfig = DriverConfig()
    rate: RateConfig = RateConfig()
    system: SystemConfig = SystemConfig()
    certificate: CertificateConfig = CertificateConfig()
    grid: GridConfig = GridConfig()
    lemma: LemmaConfig = LemmaConfig()
    admissibility: AdmissibilityConfig = AdmissibilityConfig()
    robustness: RobustnessConfig = RobustnessConfig()
    norm: NormConfig = NormConfig()
    derive: DeriveConfig = DeriveConfig()


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def _coerce(tp, value, path: str):
    if dataclasses.is_dataclass(tp):
        return _from_dict(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(path, "expected a finite number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp is tuple:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return _freeze(value)
    raise ConfigError(path, f"unsupported field type {tp!r}")


def _from_dict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            sub = f"{path}.{f.name}" if path else f.name
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], sub)
    return cls(**kwargs)


def _choice(value: str, allowed, path: str) -> None:
    if value not in allowed:
        raise ConfigError(path, f"expected one of {sorted(allowed)}, got {value!r}")


def _matrix(value, path: str, dim: int | None = None) -> np.ndarray:
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a numeric matrix") from None
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.size == 0:
        raise ConfigError(path, "expected a non-empty square matrix")
    if dim is not None and m.shape[0] != dim:
        raise ConfigError(path, f"expected a {dim}x{dim} matrix")
    if not np.all(np.isfinite(m)):
        raise ConfigError(path, "matrix entries must be finite")
    return m


def validate(sc: Scenario) -> Scenario:
    """Semantic checks with field paths; raises ``ConfigError``."""
    _choice(sc.driver.kind, {"cyclic", "irrational_rotation", "bernoulli_window"}, "driver.kind")
    for path, rate in (("rate", sc.rate), ("norm.nu", sc.norm.nu)):
        _choice(rate.kind, {"exponential", "polynomial", "logarithmic", "custom"}, f"{path}.kind")
    s = sc.system
    _choice(s.kind, {"model", "constant", "random"}, "system.kind")
    if s.kind == "model":
        _matrix(s.P, "system.P")
        _choice(s.profile, {"alternating", "flat"}, "system.profile")
        for name in ("lam", "D", "K"):
            fc = getattr(s, name)
            _choice(fc.kind, {"constant", "class_hashed", "point_hashed", "nu_power"},
                    f"system.{name}.kind")
            if name != "K" and fc.kind not in ("constant", "class_hashed"):
                raise ConfigError(f"system.{name}.kind", "must be constant along orbit classes")
    elif s.kind == "constant":
        _matrix(s.A, "system.A")
    elif s.dim < 1:
        raise ConfigError("system.dim", "must be positive")
    _choice(sc.certificate.kind, {"model", "fit", "identify"}, "certificate.kind")
    if sc.certificate.kind == "model" and s.kind != "model":
        raise ConfigError("certificate.kind", "'model' certificates need a model system")
    if sc.certificate.kind == "fit":
        _matrix(sc.certificate.P, "certificate.P")
    g = sc.grid
    for name in ("orbits", "horizon"):
        if getattr(g, name) < 1:
            raise ConfigError(f"grid.{name}", "must be positive")
    if g.ell_max < 0:
        raise ConfigError("grid.ell_max", "must be non-negative")
    if sc.lemma.s_max < 2 or sc.lemma.r_max < sc.lemma.s_max or sc.lemma.r_count < 1:
        raise ConfigError("lemma", "need 2 <= s_max <= r_max and r_count >= 1")
    if any(not (isinstance(a, (int, float)) and a > 0) for a in sc.lemma.alphas):
        raise ConfigError("lemma.alphas", "alphas must be positive numbers")
    _choice(sc.admissibility.extension, {"zero", "hold"}, "admissibility.extension")
    if sc.admissibility.probes < 1:
        raise ConfigError("admissibility.probes", "must be positive")
    r = sc.robustness
    if not 0 < r.rho_margin < 1:
        raise ConfigError("robustness.rho_margin", "must lie in (0, 1)")
    _choice(r.shape, {"random", "directional"}, "robustness.shape")
    if r.shape == "directional":
        _matrix(r.direction, "robustness.direction")
    if sc.norm.epsilon <= 0:
        raise ConfigError("norm.epsilon", "must be positive")
    if sc.derive.target_ratio <= 1:
        raise ConfigError("derive.target_ratio", "must exceed 1")
    return sc


def load_scenario(path: str | os.PathLike, overrides: dict | None = None) -> tuple[Scenario, bytes]:
    """Parse and validate a JSON scenario; returns it with the raw file bytes."""
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise ConfigError("<file>", f"cannot read {path}: {err.strerror}") from None
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise ConfigError("<file>", f"invalid JSON: {err}") from None
    sc = _from_dict(Scenario, data, "")
    overrides = overrides or {}
    if overrides.get("horizon") is not None:
        sc = dataclasses.replace(sc, grid=dataclasses.replace(sc.grid, horizon=overrides["horizon"]))
    if overrides.get("seed") is not None:
        sc = dataclasses.replace(sc, seed=overrides["seed"])
    return validate(sc), raw


def scenario_dict(sc: Scenario) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(sc)))


# ---------------------------------------------------------------- scenario realisation

@dataclass
class Built:
    rate: object
    driver: object
    points: list
    horizon: int
    system: object
    norm: object
    cert: object = None
    extras: dict = field(default_factory=dict)


def _rate(rc: RateConfig):
    from .growth import make_rate
    return make_rate(rc.kind, rc.params)


def _field(fc: FieldConfig, nu=None):
    from .cocycle import FieldSpec
    return FieldSpec(fc.kind, tuple(fc.params), salt=fc.salt, rate=nu)


def _certificate(sc: Scenario, b: Built):
    from .cocycle import ProjectionFamily
    from .dichotomy import fit_certificate, identify_splitting
    kind = sc.certificate.kind
    if kind == "model":
        return b.cert
    if kind == "fit":
        P = ProjectionFamily.constant(_matrix(sc.certificate.P, "certificate.P", b.system.dim))
        return fit_certificate(b.system, P, b.rate, b.norm, b.points, b.horizon)
    d = sc.derive
    split = identify_splitting(b.system, b.norm, b.rate, b.points, b.horizon,
                               growth_threshold=d.growth_threshold, gap_tol=d.gap_tol,
                               ratio_min=d.ratio_min, seed=sc.seed)
    b.extras["splitting"] = split
    return fit_certificate(b.system, split.projections(), b.rate, b.norm, b.points, b.horizon)


def build(sc: Scenario, with_certificate: bool = True) -> Built:
    from .cocycle import build_model, constant_system, euclidean_norm, random_entries_system
    from .driver import make_driver
    from .grid import GridSpec, SampleGrid
    rate = _rate(sc.rate)
    drv = make_driver(sc.driver.kind, sc.driver.params)
    g = sc.grid
    points = SampleGrid.sample(drv, GridSpec(g.orbits, g.ell_max, g.horizon, g.seed)).points()
    s = sc.system
    cert = None
    if s.kind == "model":
        nu = _rate(sc.norm.nu) if s.K.kind == "nu_power" else None
        system, norm, cert = build_model(rate, drv, _matrix(s.P, "system.P"), _field(s.lam),
                                         _field(s.D), _field(s.K, nu), profile=s.profile)
    elif s.kind == "constant":
        system = constant_system(_matrix(s.A, "system.A"), drv)
        norm = euclidean_norm(system.dim)
    else:
        system = random_entries_system(s.dim, drv, s.seed, s.low, s.high)
        norm = euclidean_norm(system.dim)
    b = Built(rate, drv, points, g.horizon, system, norm, cert)
    if with_certificate:
        b.cert = _certificate(sc, b)
    return b


# ---------------------------------------------------------------- output formatting

def fmt(value) -> str:
    """Shortest round-trip text for floats; ``true``/``false`` for booleans."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    return value


def json_text(data) -> str:
    return json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__}
    import scipy
    out["scipy"] = scipy.__version__
    try:
        out["package"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["package"] = "unknown"
    return out


# ---------------------------------------------------------------- subcommands

def run_lemma_check(sc: Scenario, args) -> tuple[str, dict]:
    from .growth import lemma_grid
    rate = _rate(sc.rate)
    lc = sc.lemma
    s_values = list(range(2, lc.s_max + 1))
    r_values = np.unique(np.concatenate([
        np.arange(2, lc.s_max + 1),
        np.round(np.geomspace(lc.s_max, lc.r_max, lc.r_count)).astype(np.int64)]))
    res = lemma_grid(rate, lc.alphas, s_values, r_values)
    rows = [(rate.kind, r.alpha, r.s, r.r, r.log_sum, r.log_lower, r.log_upper, r.holds)
            for r in res]
    cols = ("rate", "alpha", "s", "r", "log_sum", "log_lower", "log_upper", "holds")
    summary = {"cells": len(rows), "all_hold": all(r.holds for r in res), "eta": rate.eta}
    return csv_text(cols, rows), summary


def run_verify(sc: Scenario, args) -> tuple[str, dict]:
    from .dichotomy import REPORT_COLUMNS, verify_dichotomy
    b = build(sc)
    rep = verify_dichotomy(b.system, b.cert, b.rate, b.points, b.horizon)
    summary = {"passed": rep.passed, "worst": rep.worst, "equivariance": rep.equivariance,
               "cells": len(rep.rows)}
    return csv_text(REPORT_COLUMNS, rep.rows), summary


def run_admissibility(sc: Scenario, args) -> tuple[str, dict]:
    from .admissibility import SignalGrid, solve_admissibility
    b = build(sc)
    ac = sc.admissibility
    if args.input:
        try:
            data = json.loads(Path(args.input).read_text())
            y = SignalGrid.from_json(data, b.driver, b.cert.norm)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
            raise ConfigError("--input", f"cannot load signal: {err}") from None
    else:
        y = SignalGrid.random(b.points, b.horizon, b.cert.norm, sc.seed)
    x = solve_admissibility(b.system, b.cert, b.rate, y, tail_eps=ac.tail_eps,
                            extension=ac.extension, j_max=ac.j_max)
    d = x.dim
    cols = (("point_id", "ell", "n") + tuple(f"x{i}" for i in range(d))
            + tuple(f"y{i}" for i in range(d)) + ("residual",))
    rows = []
    for i, p in enumerate(x.points):
        for n in range(x.horizon + 1):
            res = float(x.residuals[i, n - 1]) if n else ""   # recurrence arriving at n
            rows.append((p.key, p.ell, n, *x.values[i, n], *y.values[i, n], res))
    return csv_text(cols, rows), dict(x.info)


def run_sweep(sc: Scenario, args) -> tuple[str, dict]:
    from .admissibility import estimate_T_norm
    from .dichotomy import fit_growth_bound
    from .robustness import SWEEP_COLUMNS, robustness_sweep
    b = build(sc)
    rc = sc.robustness
    T = estimate_T_norm(b.system, b.cert, b.rate, b.points, b.horizon,
                        probe_count=sc.admissibility.probes, seed=sc.seed).estimate
    M = fit_growth_bound(b.system, b.cert.norm, b.rate, b.cert.lam, b.points, b.horizon)
    shape = (("random", sc.seed) if rc.shape == "random"
             else ("directional", _matrix(rc.direction, "robustness.direction", b.system.dim)))
    rows = robustness_sweep(b.system, b.cert, b.rate, b.points, b.horizon, M, T,
                            rho_margin=rc.rho_margin, shape=shape, seed=sc.seed, count=rc.count,
                            refit=rc.refit, max_iter=rc.max_iter)
    summary = {"T_norm": T, "threshold": rows[0].threshold if rows else math.nan,
               "all_sub_threshold_converged": all(r.converged for r in rows
                                                  if r.magnitude <= r.threshold)}
    return csv_text(SWEEP_COLUMNS, [r.as_tuple() for r in rows]), summary


NORM_COLUMNS = ("stage", "point_id", "ell", "n", "side", "lhs", "rhs", "margin", "pass")


def run_norm(sc: Scenario, args) -> tuple[str, dict]:
    from .cocycle import constant
    from .dichotomy import fit_growth_bound
    from .driver import make_driver
    from .grid import GridSpec, SampleGrid
    from .munorm import (build_adapted_norm, extract_munu, munu_model, verify_adapted_bounds,
                         verify_munu)
    direction = args.direction or "roundtrip"
    s = sc.system
    if s.kind != "model":
        raise ConfigError("system.kind", "norm-equivalence needs a model system")
    mu, nu = _rate(sc.rate), _rate(sc.norm.nu)
    drv = make_driver(sc.driver.kind, sc.driver.params)
    g = sc.grid
    points = SampleGrid.sample(drv, GridSpec(g.orbits, g.ell_max, g.horizon, g.seed)).points()
    sys_, cert = munu_model(mu, nu, drv, _matrix(s.P, "system.P"), _field(s.lam), _field(s.D),
                            sc.norm.epsilon, profile=s.profile)
    rows, summary = [], {"direction": direction}

    def add(stage, report_rows):
        rows.extend((stage,) + tuple(r) for r in report_rows)

    source = verify_munu(sys_, cert, mu, points, g.horizon)
    add("source", source.rows)
    summary["source_passed"] = source.passed
    if direction in ("forward", "roundtrip"):
        anorm = build_adapted_norm(sys_, cert, mu, points, g.horizon, seed=sc.seed)
        rep = verify_adapted_bounds(sys_, cert, anorm, mu, points, g.horizon)
        add("adapted", rep.rows)
        summary.update(adapted_passed=rep.passed, adapted_worst=rep.worst,
                       sandwich_worst=rep.sandwich_worst, sup_end=anorm.T_abs)
        if direction == "roundtrip":
            back = extract_munu(sys_, anorm.certificate(), anorm.sandwich, anorm.M,
                                anorm.lambda_bar, mu, points, g.horizon, seed=sc.seed)
            add("extracted", back.report.rows)
            summary.update(extracted_passed=back.report.passed,
                           extracted_worst=back.report.worst)
    if direction == "backward":
        # the model's own random norm nu_ell^eps is sandwiched with Kbar = 1
        from .cocycle import FieldSpec, build_model
        K = FieldSpec("nu_power", (sc.norm.epsilon,), rate=nu)
        msys, mnorm, mcert = build_model(mu, drv, _matrix(s.P, "system.P"), _field(s.lam),
                                         _field(s.D), K, profile=s.profile)
        M = fit_growth_bound(msys, mnorm, mu, mcert.lam, points, g.horizon)
        back = extract_munu(msys, mcert, (constant(1.0), constant(sc.norm.epsilon), nu), M,
                            mcert.lam, mu, points, g.horizon, seed=sc.seed)
        add("extracted", back.report.rows)
        summary.update(extracted_passed=back.report.passed, extracted_worst=back.report.worst)
    return csv_text(NORM_COLUMNS, rows), summary


DERIVE_COLUMNS = ("orbit_class", "lambda", "log_N0", "K0", "a", "b", "D1", "D2", "M2", "L", "m",
                  "log_c", "zeta_min", "projection_bound_max", "max_angle")


def run_derive(sc: Scenario, args) -> tuple[str, dict]:
    from .admissibility import admissibility_constant, estimate_T_norm
    from .dichotomy import derive_exponents, fit_growth_bound, identify_splitting
    from .growth import find_minimal_growth
    b = build(sc)
    d = sc.derive
    split = b.extras.get("splitting") or identify_splitting(
        b.system, b.norm, b.rate, b.points, b.horizon, growth_threshold=d.growth_threshold,
        gap_tol=d.gap_tol, ratio_min=d.ratio_min, seed=sc.seed)
    T = estimate_T_norm(b.system, b.cert, b.rate, b.points, b.horizon,
                        probe_count=sc.admissibility.probes, seed=sc.seed).estimate
    M = fit_growth_bound(b.system, b.norm, b.rate, b.cert.lam, b.points, b.horizon)
    witness = find_minimal_growth(b.rate, d.target_ratio, d.witness_horizon)
    C = lambda p: admissibility_constant(b.cert, b.rate, p)  # noqa: E731
    de = derive_exponents(b.system, split, b.rate, witness, b.norm, M, b.cert.lam, C, T,
                          b.points, b.horizon)
    rows = []
    for g_key in de.a:
        pts = [p for p in b.points if p.orbit_class == g_key]
        rows.append((g_key, float(b.cert.lam(pts[0])), de.log_N0[g_key], de.K0[g_key],
                     de.a[g_key], de.b[g_key], de.D1[g_key], de.D2[g_key], de.M2[g_key],
                     de.L[g_key], de.m[g_key], de.log_c[g_key],
                     min(de.zeta[p.key] for p in pts),
                     max(de.projection_bound[p.key] for p in pts),
                     max(split.angle_to(p, b.cert.P(p)) for p in pts)))
    summary = {"T_norm": T, "L1": witness.L1, "L2": witness.L2, "tail": split.tail,
               "certificate_passed": de.report.passed if de.report else None,
               "certificate_worst": de.report.worst if de.report else None}
    return csv_text(DERIVE_COLUMNS, rows), summary


RUNNERS = {
    "lemma-check": run_lemma_check,
    "verify-dichotomy": run_verify,
    "solve-admissibility": run_admissibility,
    "robustness-sweep": run_sweep,
    "norm-equivalence": run_norm,
    "derive-exponents": run_derive,
}


# ---------------------------------------------------------------- entry point

def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dichotomy-lab",
                                 description="Numerical checks of generalized random dichotomies.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="scenario JSON file")
        sp.add_argument("--out", help="output CSV path (default: <command>.csv)")
        sp.add_argument("--horizon", type=int, help="override grid.horizon")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        if name == "solve-admissibility":
            sp.add_argument("--input", help="signal JSON (default: seeded random signal)")
        if name == "norm-equivalence":
            sp.add_argument("--direction", choices=("forward", "backward", "roundtrip"),
                            default="roundtrip")
    return ap


def run(argv=None) -> int:
    args = parser().parse_args(argv)
    out = Path(args.out or f"{args.command}.csv")
    try:
        sc, raw = load_scenario(args.config, {"horizon": args.horizon, "seed": args.seed})
        text, summary = RUNNERS[args.command](sc, args)
    except LabError as err:
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code
    manifest = {
        "subcommand": args.command,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "scenario": scenario_dict(sc),
        "seeds": {"scenario": sc.seed, "grid": sc.grid.seed, "system": sc.system.seed},
        "options": {k: v for k, v in sorted(vars(args).items())
                    if k in ("horizon", "seed", "direction") and v is not None},
        "input_sha256": (hashlib.sha256(Path(args.input).read_bytes()).hexdigest()
                         if getattr(args, "input", None) else None),
        "versions": _versions(),
        "outputs": {out.name: hashlib.sha256(text.encode()).hexdigest()},
        "summary": summary,
    }
    _atomic_write(out, text)
    _atomic_write(out.with_name(out.name + ".manifest.json"), json_text(manifest))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
