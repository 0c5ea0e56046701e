"""Command-line harness: study configs, convergence sweeps, probes and reports.

Config files are INI-style ``key = value`` lines grouped in ``[study]``,
``[scheme]`` and ``[solver]`` sections; see ``projstab run --help``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .linalg import SolverConfig, SolverError
from .mesh import build_structured_mesh, dump_mesh
from .mms import ErrorReport, estimate_rate, make_case, verify_case, zero_case
from .schemes import (
    ConfigError, ProjectionScheme, SchemeConfig, random_initial_state, run_simulation,
    step_errors,
)

log = logging.getLogger(__name__)

STUDY_KINDS = ("spatial_sweep", "temporal_sweep", "stability_probe",
               "classic_pressure_probe", "single_run")
DT_RULES = ("none", "h", "h2")
ORDER_METRICS = ("l2", "h1", "p")
OUTPUT_ENV = "PROJSTAB_OUTPUT_DIR"

CSV_COLUMNS = ("study", "n", "h", "dt", "delta", "nu", "scheme", "A_L2", "A_H1", "A_H1w", "A_P",
               "l2_final", "h1_final", "p_l2_final", "diverged", "cg_iters_total", "wall_time_s")

EXIT_OK, EXIT_ASSERT, EXIT_ERROR = 0, 1, 2

CONFIG_HELP = """\
config grammar (INI style, '#' or ';' comments, one 'key = value' per line):

[study]
  kind             spatial_sweep | temporal_sweep | stability_probe |
                   classic_pressure_probe | single_run           (required)
  resolutions      comma list of mesh sizes n                    (required)
  dt               comma list of time steps                      (default: none)
  dt_rule          none | h | h2: dt = dt_coefficient * h or * h^2 (default: none)
  dt_coefficient   positive real                                 (default: 1.0)
  dt_ratios        comma list; stability_probe: dt = r * delta,
                   classic_pressure_probe: dt = r * h^2 / nu     (default: 2.5, 0.9 | 1, 0.1, 0.01)
  steps            step count of the stability probe             (default: 200)
  seed             random seed of the stability probe            (default: 0)
  case             taylor_green | zero                           (default: taylor_green)
  amplitude        nonzero real                                  (default: 1.0)
  time_profile     cosine | linear_growth | steady               (default: cosine)
  output           CSV path, relative to $PROJSTAB_OUTPUT_DIR    (default: <kind>.csv)
  min_order_l2, max_order_l2, min_order_h1, max_order_h1,
  min_order_p, max_order_p
                   bounds on the observed orders of the final L2 velocity error,
                   sqrt(A_H1) and sqrt(A_P)                      (default: unchecked)
  expect_diverged  comma list of true/false, one per dt_ratio    (default: unchecked)
  pressure_growth_limit
                   allowed growth of the modified-scheme pressure error
                   along the probe ladder                        (default: 2.0)

[scheme]
  nu = 1.0, T = 1.0, delta_mode = auto (auto | classic | fixed),
  delta (absolute, fixed mode) or delta_scale (delta = delta_scale * h^2 / nu),
  problem = stokes (stokes | navier_stokes),
  init_mode = stokes_projection (interpolant | stokes_projection),
  init_pressure_mode = stokes_projection (zero | from_divergence | stokes_projection),
  rho1 = 1.0, c_M = 1.0, override_stability_guard = false

[solver]
  rel_tolerance = 1e-10, max_iterations = 20000, jacobi = false

Mesh dump format: one 'v x y flag' line per vertex, then one 't i j k'
line per triangle (0-based vertex indices, counterclockwise).
"""

_STUDY_KEYS = {"kind", "resolutions", "dt", "dt_rule", "dt_coefficient", "dt_ratios", "steps",
               "seed", "case", "amplitude", "time_profile", "output", "expect_diverged",
               "pressure_growth_limit"} | {f"{b}_order_{m}" for b in ("min", "max") for m in ORDER_METRICS}
_SCHEME_KEYS = {"nu", "T", "delta_mode", "delta", "delta_scale", "problem", "init_mode",
                "init_pressure_mode", "rho1", "c_M", "override_stability_guard"}
_SOLVER_KEYS = {"rel_tolerance", "max_iterations", "jacobi"}
_SECTIONS = {"study": _STUDY_KEYS, "scheme": _SCHEME_KEYS, "solver": _SOLVER_KEYS}


class ConfigFileError(ConfigError):
    """Problem in a study config file, tagged with a line number when known."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class StudySpec:
    kind: str
    resolutions: tuple
    scheme: SchemeConfig = SchemeConfig()
    dts: tuple = ()
    dt_rule: str = "none"
    dt_coefficient: float = 1.0
    dt_ratios: tuple = ()
    steps: int = 200
    seed: int = 0
    case: str = "taylor_green"
    amplitude: float = 1.0
    time_profile: str = "cosine"
    output: str = ""
    order_bounds: tuple = ()           # ((metric, "min"|"max", value), ...)
    expect_diverged: tuple = ()
    pressure_growth_limit: float = 2.0
    delta_relative: bool = False       # fixed delta given as a multiple of h^2 / nu

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ConfigError(f"kind must be one of {STUDY_KINDS}, got {self.kind!r}")
        if not self.resolutions:
            raise ConfigError("resolutions must not be empty")
        if any(int(n) != n or n < 1 for n in self.resolutions):
            raise ConfigError(f"resolutions must be positive integers, got {self.resolutions}")
        if self.dt_rule not in DT_RULES:
            raise ConfigError(f"dt_rule must be one of {DT_RULES}, got {self.dt_rule!r}")
        if not self.dt_coefficient > 0:
            raise ConfigError(f"dt_coefficient must be positive, got {self.dt_coefficient}")
        if any(not d > 0 for d in self.dts):
            raise ConfigError(f"dt must be positive, got {list(self.dts)}")
        if any(not r > 0 for r in self.dt_ratios):
            raise ConfigError(f"dt_ratios must be positive, got {list(self.dt_ratios)}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not self.pressure_growth_limit > 0:
            raise ConfigError("pressure_growth_limit must be positive")
        if self.dts and self.dt_rule != "none":
            raise ConfigError("give either an explicit dt list or a dt_rule, not both")
        if self.kind in ("spatial_sweep", "temporal_sweep", "single_run") \
                and not self.dts and self.dt_rule == "none":
            raise ConfigError(f"{self.kind} needs a dt list or a dt_rule")
        if self.kind == "spatial_sweep" and len(self.dts) > 1:
            raise ConfigError("spatial_sweep takes a single dt or a dt_rule")
        if self.kind in ("temporal_sweep", "stability_probe", "classic_pressure_probe", "single_run") \
                and len(self.resolutions) != 1:
            raise ConfigError(f"{self.kind} runs on exactly one resolution")
        if self.kind == "single_run" and len(self.dts) > 1:
            raise ConfigError("single_run takes a single dt")
        if self.kind == "stability_probe" and self.scheme.problem != "stokes":
            raise ConfigError("stability_probe runs the unforced transient Stokes scheme")
        if self.expect_diverged and len(self.expect_diverged) != len(self.ratios()):
            raise ConfigError("expect_diverged needs one entry per dt_ratio")
        for metric, side, _ in self.order_bounds:
            if metric not in ORDER_METRICS or side not in ("min", "max"):
                raise ConfigError(f"unknown order bound {side}_order_{metric}")
        make_case(self.case, self.amplitude, self.time_profile)

    def ratios(self) -> tuple:
        if self.dt_ratios:
            return self.dt_ratios
        if self.kind == "stability_probe":
            return (2.5, 0.9)
        if self.kind == "classic_pressure_probe":
            return (1.0, 0.1, 0.01)
        return ()

    def output_path(self) -> Path:
        name = self.output or f"{self.kind}.csv"
        path = Path(name)
        if not path.is_absolute():
            path = Path(os.environ.get(OUTPUT_ENV, ".")) / path
        return path

    def delta_for(self, h: float) -> float | None:
        if self.scheme.delta_mode != "fixed":
            return None
        if self.delta_relative:
            return self.scheme.delta * h**2 / self.scheme.nu
        return self.scheme.delta

    def time_steps(self, h: float) -> list:
        if self.dt_rule == "h":
            return [self.dt_coefficient * h]
        if self.dt_rule == "h2":
            return [self.dt_coefficient * h**2]
        return list(self.dts)

    def scheme_config(self, h: float, dt: float, **overrides) -> SchemeConfig:
        delta = self.delta_for(h)
        cfg = replace(self.scheme, dt=dt, delta=delta if delta is not None else self.scheme.delta,
                      **overrides)
        if cfg.delta_mode != "fixed":
            cfg = replace(cfg, delta=None)
        return cfg


# -- config parsing ------------------------------------------------------------

def _key_lines(text: str) -> dict:
    """Map (section, key) to the 1-based line where the key is set."""
    lines, section = {}, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), lineno)
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip())] = lineno
    return lines


def _floats(value: str):
    return tuple(float(v) for v in value.replace(",", " ").split())


def _ints(value: str):
    out = []
    for v in value.replace(",", " ").split():
        f = float(v)
        if f != int(f):
            raise ValueError(f"{v!r} is not an integer")
        out.append(int(f))
    return tuple(out)


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"{value!r} is not a boolean")


def _bools(value: str):
    return tuple(_bool(v) for v in value.replace(",", " ").split())


_STUDY_PARSERS = {
    "resolutions": _ints, "dt": _floats, "dt_coefficient": float, "dt_ratios": _floats,
    "steps": int, "seed": int, "amplitude": float, "expect_diverged": _bools,
    "pressure_growth_limit": float,
}
_SCHEME_PARSERS = {
    "nu": float, "T": float, "delta": float, "delta_scale": float, "rho1": float, "c_M": float,
    "override_stability_guard": _bool,
}
_SOLVER_PARSERS = {"rel_tolerance": float, "max_iterations": int, "jacobi": _bool}


def parse_config_text(text: str) -> StudySpec:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                       inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigFileError("key outside of any [section]", exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigFileError(str(exc).split(": ", 1)[-1], exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigFileError("malformed line, expected 'key = value'", lineno) from None
    where = _key_lines(text)

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigFileError(f"unknown section [{section}]", where.get((section, None)))
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ConfigFileError(f"unknown key {key!r} in [{section}]", where.get((section, key)))

    study = dict(parser["study"]) if parser.has_section("study") else {}
    missing = [k for k in ("kind", "resolutions") if k not in study]
    if study.get("kind", "").strip() in ("spatial_sweep", "temporal_sweep", "single_run") \
            and "dt" not in study and study.get("dt_rule", "none").strip() == "none":
        missing.append("dt (or dt_rule)")
    if missing:
        raise ConfigFileError("missing mandatory keys in [study]: " + ", ".join(missing))

    def convert(section, key, value, parsers):
        fn = parsers.get(key, str)
        try:
            return fn(value.strip())
        except ValueError as exc:
            raise ConfigFileError(f"[{section}] {key}: {exc}", where.get((section, key))) from None

    st = {k: convert("study", k, v, _STUDY_PARSERS) for k, v in study.items()}
    sc = {k: convert("scheme", k, v, _SCHEME_PARSERS)
          for k, v in (parser["scheme"].items() if parser.has_section("scheme") else [])}
    so = {k: convert("solver", k, v, _SOLVER_PARSERS)
          for k, v in (parser["solver"].items() if parser.has_section("solver") else [])}

    def located(section, key, exc):
        return ConfigFileError(str(exc), where.get((section, key)) if key else None)

    try:
        solver = SolverConfig(**so)
    except ValueError as exc:
        key = next((k for k in so if k in str(exc)), None)
        raise located("solver", key, exc) from None

    delta_relative = "delta_scale" in sc
    if delta_relative and "delta" in sc:
        raise ConfigFileError("give either delta or delta_scale, not both", where.get(("scheme", "delta_scale")))
    if delta_relative:
        sc["delta"] = sc.pop("delta_scale")
    if "dt" in st:
        st["dts"] = st.pop("dt")
    try:
        scheme = SchemeConfig(solver=solver, **sc)
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in sorted(sc, key=len, reverse=True) if msg.startswith(k)), None)
        if key is None and msg.startswith("fixed delta"):
            key = "delta_mode"
        elif key is None and "initial" in msg:
            key = "init_pressure_mode"
        if key == "delta" and delta_relative:
            key = "delta_scale"
        raise located("scheme", key, exc) from None

    bounds = []
    for metric in ORDER_METRICS:
        for side in ("min", "max"):
            key = f"{side}_order_{metric}"
            if key in st:
                bounds.append((metric, side, float(st.pop(key))))
    try:
        return StudySpec(scheme=scheme, order_bounds=tuple(bounds), delta_relative=delta_relative, **st)
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in sorted(study, key=len, reverse=True) if msg.startswith(k)), None)
        raise located("study", key, exc) from None


def parse_config(path) -> StudySpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"config file {str(path)!r} does not exist")
    return parse_config_text(path.read_text())


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    return repr(x)


def _fmt_list(xs) -> str:
    return ", ".join(_fmt(x) for x in xs)


def emit_config(spec: StudySpec) -> str:
    """Serialize a StudySpec; ``parse_config_text(emit_config(s)) == s``."""
    s = spec.scheme
    out = ["[study]", f"kind = {spec.kind}", f"resolutions = {_fmt_list(spec.resolutions)}"]
    if spec.dts:
        out.append(f"dt = {_fmt_list(spec.dts)}")
    out += [f"dt_rule = {spec.dt_rule}", f"dt_coefficient = {spec.dt_coefficient!r}"]
    if spec.dt_ratios:
        out.append(f"dt_ratios = {_fmt_list(spec.dt_ratios)}")
    out += [f"steps = {spec.steps}", f"seed = {spec.seed}", f"case = {spec.case}",
            f"amplitude = {spec.amplitude!r}", f"time_profile = {spec.time_profile}"]
    if spec.output:
        out.append(f"output = {spec.output}")
    for metric, side, value in spec.order_bounds:
        out.append(f"{side}_order_{metric} = {value!r}")
    if spec.expect_diverged:
        out.append(f"expect_diverged = {_fmt_list(spec.expect_diverged)}")
    out.append(f"pressure_growth_limit = {spec.pressure_growth_limit!r}")

    out += ["", "[scheme]", f"nu = {s.nu!r}", f"T = {s.T!r}", f"delta_mode = {s.delta_mode}"]
    if s.delta is not None:
        out.append(f"{'delta_scale' if spec.delta_relative else 'delta'} = {s.delta!r}")
    out += [f"problem = {s.problem}", f"init_mode = {s.init_mode}",
            f"init_pressure_mode = {s.init_pressure_mode}", f"rho1 = {s.rho1!r}",
            f"c_M = {s.c_M!r}", f"override_stability_guard = {_fmt(s.override_stability_guard)}"]
    so = s.solver
    out += ["", "[solver]", f"rel_tolerance = {so.rel_tolerance!r}",
            f"max_iterations = {so.max_iterations}", f"jacobi = {_fmt(so.jacobi)}", ""]
    return "\n".join(out)


# -- running studies -----------------------------------------------------------

def _row(spec, n, h, cfg, scheme_name, report, final_override=None, wall=0.0):
    fin = report.final
    l2, h1, pl2 = (fin.l2_velocity_error, fin.h1_velocity_error, fin.l2_pressure_error) \
        if fin is not None else (math.nan, math.nan, math.nan)
    if final_override is not None:
        l2, h1, pl2 = final_override
    return {
        "study": spec.kind, "n": n, "h": h, "dt": report.dt, "delta": report.delta,
        "nu": cfg.nu, "scheme": scheme_name, "A_L2": report.A_L2, "A_H1": report.A_H1,
        "A_H1w": report.A_H1w, "A_P": report.A_P, "l2_final": l2, "h1_final": h1,
        "p_l2_final": pl2, "diverged": bool(report.diverged), "cg_iters_total": report.cg_iterations,
        "wall_time_s": wall,
    }


def _scheme_name(cfg: SchemeConfig) -> str:
    return "classic" if cfg.delta_mode == "classic" else "modified"


def _mms_point(spec: StudySpec, n: int, dt: float, overrides: dict, override_guard: bool):
    """One manufactured-solution run; returns a CSV row and the report's extra data."""
    t0 = time.perf_counter()
    mesh = build_structured_mesh(n)
    cfg = spec.scheme_config(mesh.h, dt, **overrides)
    if override_guard:
        cfg = replace(cfg, override_stability_guard=True)
    case = make_case(spec.case, spec.amplitude, spec.time_profile)
    report = run_simulation(cfg, case, mesh)
    row = _row(spec, n, mesh.h, cfg, _scheme_name(cfg), report, wall=time.perf_counter() - t0)
    return row, {"warnings": report.warnings, "quasi_uniformity": mesh.quasi_uniformity}


def _stability_point(spec: StudySpec, n: int, ratio: float, override_guard: bool):
    """Unforced transient Stokes from a random state with dt = ratio * delta."""
    t0 = time.perf_counter()
    mesh = build_structured_mesh(n)
    base = spec.scheme_config(mesh.h, spec.scheme.dt)
    delta = base.delta if base.delta_mode == "fixed" else mesh.h**2 / (base.nu * base.rho1**2)
    dt = ratio * delta
    cfg = replace(base, dt=dt, T=spec.steps * dt, delta_mode="fixed", delta=delta,
                  problem="stokes",
                  override_stability_guard=base.override_stability_guard or override_guard)
    scheme = ProjectionScheme(mesh, cfg)
    report = ErrorReport(nu=cfg.nu, delta=scheme.delta, dt=scheme.dt, warnings=list(scheme.warnings))
    state = random_initial_state(scheme, spec.seed)
    v0 = scheme.velocity_norm(state.tilde_v)
    peak, last = v0, v0
    zero = zero_case()
    for _ in range(scheme.n_steps):
        state = scheme.step_transient_stokes(state, None)
        if state.diverged:
            report.diverged, report.diverged_step = True, state.n
            break
        last = scheme.velocity_norm(state.tilde_v)
        peak = max(peak, last)
        report.add(step_errors(mesh, state, zero))
    report.cg_iterations = scheme.stats.iterations
    row = _row(spec, n, mesh.h, cfg, "modified", report, wall=time.perf_counter() - t0)
    extra = {"ratio": ratio, "initial_norm": v0, "peak_norm": peak, "final_norm": last,
             "growth": (math.inf if report.diverged else peak / v0),
             "steps_run": report.diverged_step or scheme.n_steps, "warnings": report.warnings}
    return row, extra


def _points(spec: StudySpec) -> list:
    """Sweep points as (sort key, function name, args)."""
    pts = []
    if spec.kind == "stability_probe":
        n = spec.resolutions[0]
        for i, r in enumerate(spec.ratios()):
            pts.append(((i,), "stability", (n, r)))
        return pts
    if spec.kind == "classic_pressure_probe":
        n = spec.resolutions[0]
        h = build_structured_mesh(n).h
        for i, r in enumerate(spec.ratios()):
            dt = r * h**2 / spec.scheme.nu
            pts.append(((i, 0), "mms", (n, dt, {})))
            pts.append(((i, 1), "mms", (n, dt, {"delta_mode": "classic"})))
        return pts
    for i, n in enumerate(spec.resolutions):
        h = math.sqrt(2.0) / n
        for j, dt in enumerate(spec.time_steps(h)):
            pts.append(((i, j), "mms", (n, dt, {})))
    return pts


def _run_point(spec, kind, args, override_guard):
    if kind == "stability":
        return _stability_point(spec, *args, override_guard)
    return _mms_point(spec, *args, override_guard)


def _evaluate(spec: StudySpec, rows: list, extras: list) -> dict:
    """Observed orders and assertion outcomes."""
    checks, orders = [], {}
    if spec.kind in ("spatial_sweep", "temporal_sweep"):
        param = "h" if spec.kind == "spatial_sweep" else "dt"
        series = {
            "l2": [(r[param], r["l2_final"]) for r in rows],
            "h1": [(r[param], math.sqrt(r["A_H1"])) for r in rows],
            "p": [(r[param], math.sqrt(r["A_P"])) for r in rows],
        }
        if any(r["diverged"] for r in rows):
            checks.append({"name": "no_divergence", "passed": False, "value": None, "bound": None})
        elif len(rows) >= 2:
            for metric, samples in series.items():
                try:
                    orders[metric] = estimate_rate(samples)
                except ValueError:
                    orders[metric] = None
        for metric, side, bound in spec.order_bounds:
            value = orders.get(metric)
            ok = value is not None and (value >= bound if side == "min" else value <= bound)
            checks.append({"name": f"{side}_order_{metric}", "value": value, "bound": bound,
                           "passed": bool(ok)})
    elif spec.kind == "stability_probe":
        for i, (row, ex) in enumerate(zip(rows, extras)):
            if spec.expect_diverged:
                want = spec.expect_diverged[i]
                checks.append({"name": f"diverged[dt={ex['ratio']:g} delta]", "value": row["diverged"],
                               "bound": want, "passed": row["diverged"] == want})
            if ex["ratio"] <= 1.0:
                bounded = (not row["diverged"]) and ex["peak_norm"] <= ex["initial_norm"] * (1 + 1e-6)
                checks.append({"name": f"bounded[dt={ex['ratio']:g} delta]",
                               "value": ex["peak_norm"] / ex["initial_norm"], "bound": 1 + 1e-6,
                               "passed": bool(bounded)})
    elif spec.kind == "classic_pressure_probe":
        modified = [r for r in rows if r["scheme"] == "modified"]
        classic = [r for r in rows if r["scheme"] == "classic"]
        top = modified[0]["p_l2_final"]
        growth = max(r["p_l2_final"] for r in modified) / top
        checks.append({"name": "modified_pressure_growth", "value": growth,
                       "bound": spec.pressure_growth_limit,
                       "passed": bool(growth <= spec.pressure_growth_limit)})
        orders["classic_to_modified_pressure_ratio"] = classic[-1]["p_l2_final"] / modified[-1]["p_l2_final"]
    elif spec.kind == "single_run":
        for row in rows:
            if row["diverged"]:
                checks.append({"name": "no_divergence", "passed": False, "value": True, "bound": False})
    return {"orders": orders, "checks": checks}


def _csv_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, kind: str, rows: list) -> None:
    buf = io.StringIO()
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    buf.write(f"# projstab {kind} generated {stamp}\n")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_value(v) for k, v in row.items()})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def read_csv(path) -> list:
    """Rows of a report CSV as dicts of strings, skipping comment lines."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class StudyResult:
    exit_code: int
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    csv_path: Path | None = None
    json_path: Path | None = None


def run_study(spec: StudySpec, jobs: int = 1, override_stability_guard: bool = False,
              write: bool = True) -> StudyResult:
    """Execute every sweep point, write the CSV and JSON reports, return the outcome."""
    if spec.case != "zero":
        verify_case(make_case(spec.case, spec.amplitude, spec.time_profile), seed=0)
    points = sorted(_points(spec), key=lambda p: p[0])
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_point, spec, kind, args, override_stability_guard)
                       for _, kind, args in points]
            results = [f.result() for f in futures]
    else:
        results = [_run_point(spec, kind, args, override_stability_guard) for _, kind, args in points]
    rows = [r for r, _ in results]
    extras = [e for _, e in results]
    evaluation = _evaluate(spec, rows, extras)
    passed = all(c["passed"] for c in evaluation["checks"])
    summary = {"study": spec.kind, "passed": passed, **evaluation,
               "warnings": sorted({w for e in extras for w in e.get("warnings", [])})}
    if spec.kind == "stability_probe":
        summary["probe"] = [{k: v for k, v in e.items() if k != "warnings"} for e in extras]
    result = StudyResult(EXIT_OK if passed else EXIT_ASSERT, rows, summary)
    if write:
        csv_path = spec.output_path()
        _write_csv(csv_path, spec.kind, rows)
        json_path = csv_path.with_suffix(".json")
        json_path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        result.csv_path, result.json_path = csv_path, json_path
    return result


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- entry point ---------------------------------------------------------------

def _cmd_run(args) -> int:
    try:
        spec = parse_config(args.config)
        result = run_study(spec, jobs=args.jobs, override_stability_guard=args.override_stability_guard)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for name, value in result.summary["orders"].items():
        print(f"order {name}: {value if value is None else f'{value:.3f}'}")
    for c in result.summary["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']} value={c['value']} bound={c['bound']}")
    print(f"wrote {result.csv_path} and {result.json_path}")
    return result.exit_code


def _cmd_check(args) -> int:
    from .checks import run_checks

    failures = 0
    for name, ok, detail in run_checks():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += not ok
    return EXIT_OK if failures == 0 else EXIT_ASSERT


def _cmd_mesh_dump(args) -> int:
    try:
        mesh = build_structured_mesh(args.n)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    dump_mesh(mesh, args.path)
    print(f"wrote {mesh.n_vertices} vertices and {mesh.n_triangles} triangles to {args.path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="projstab", description="Projection-scheme verification harness for P1/P1 flow.",
        epilog=f"Report paths are resolved against ${OUTPUT_ENV} (default: current directory). "
               "Exit status: 0 pass, 1 assertion failure, 2 solver or config error.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log scheme warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a study config", description=CONFIG_HELP,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("config", help="study config file")
    run.add_argument("--jobs", type=int, default=1, help="parallel sweep points (default: 1)")
    run.add_argument("--override-stability-guard", action="store_true",
                     help="allow dt > delta (instability experiments)")
    run.set_defaults(func=_cmd_run)

    check = sub.add_parser("check", help="run the built-in invariant suite")
    check.set_defaults(func=_cmd_check)

    dump = sub.add_parser("mesh-dump", help="write a structured mesh as text",
                          description="One 'v x y flag' line per vertex, then one 't i j k' "
                                      "line per triangle.")
    dump.add_argument("n", type=int, help="cells per side")
    dump.add_argument("path", help="output file")
    dump.set_defaults(func=_cmd_mesh_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
