"""Config files, per-level CSV output, rate fitting and the run manifest.

The config is INI-style with five flat sections::

    [problem]
    kind = p-laplace
    [goal]
    kind = point
    point = -0.9, -0.9
    [algorithm]
    mode = new
    theta = 0.5

Only ``problem.kind`` and ``goal.kind`` are required.
"""
from __future__ import annotations

import configparser
import csv
import json
import math
import re
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .driver import MODE_CONSTANTS, LevelRecord, RunConfig

CSV_COLUMNS = (
    "level", "dofs_primal", "dofs_enriched", "eta_h2", "eta_k", "eta_R", "eta_u2", "eta_z2",
    "eta_total", "J_value", "error", "I_eff_h", "I_eff", "I_eff_R", "z_solves_cum",
    "u_solves_cum", "step_trace",
)
INT_COLUMNS = ("level", "dofs_primal", "dofs_enriched", "z_solves_cum", "u_solves_cum")
PART_NAMES = ("eta_h2", "eta_k", "eta_R", "eta_u2", "eta_z2", "total")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# ----------------------------------------------------------------------
# config

def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    return int(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


def _point(text: str) -> tuple[float, float]:
    parts = [t for t in re.split(r"[,\s]+", text.strip().strip("()")) if t]
    if len(parts) != 2:
        raise ValueError("expected two coordinates")
    return float(parts[0]), float(parts[1])


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}")
        return text
    return parse


# section -> key -> (RunConfig field or output key, converter)
_SCHEMA: dict[str, dict[str, tuple[str, Callable[[str], Any]]]] = {
    "problem": {
        "kind": ("problem", _choice("poisson", "p-laplace")),
        "p": ("p", _float),
        "eps": ("eps", _float),
        "macro_subdivisions": ("macro_subdivisions", _optional(_int)),
    },
    "goal": {
        "kind": ("goal", _choice("mean", "point")),
        "point": ("point", _point),
        "reference": ("reference", _optional(_float)),
        "vertex_only": ("vertex_only", _bool),
    },
    "algorithm": {
        "mode": ("mode", _choice(*MODE_CONSTANTS)),
        "c_u": ("c_u", _float),
        "c_z": ("c_z", _float),
        "tol": ("tol", _float),
        "max_levels": ("max_levels", _int),
        "max_dofs": ("max_dofs", _optional(_int)),
        "theta": ("theta", _float),
        "s_order": ("s_points", _int),
        "reference_path": ("reference_path", _bool),
    },
    "solver": {
        "kappa": ("kappa", _float),
        "newton_max_iter": ("newton_max_iter", _int),
    },
    "output": {
        "csv": ("csv", str),
        "mesh_dump_every": ("mesh_dump_every", _int),
    },
}
REQUIRED = (("problem", "kind"), ("goal", "kind"))


@dataclass
class OutputOptions:
    csv: str | None = None
    mesh_dump_every: int = 0


@dataclass
class ParsedConfig:
    run: RunConfig
    output: OutputOptions = field(default_factory=OutputOptions)


def _line_index(text: str) -> dict[tuple[str | None, str | None], int]:
    """1-based line of each section header and each ``key`` inside it."""
    where: dict[tuple[str | None, str | None], int] = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            where.setdefault((section, None), i)
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m:
            where.setdefault((section, m.group(1).strip().lower()), i)
    return where


def parse_config(text: str) -> ParsedConfig:
    """Parse config text into a run configuration plus output options."""
    lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any section", exc.lineno) from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc), getattr(exc, "lineno", None)) from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}", lines.get((section, key)))
    for section, key in REQUIRED:
        if not parser.has_option(section, key):
            raise ConfigError(f"missing required key {section}.{key}")

    values: dict[str, Any] = {}
    for section in parser.sections():
        for key, raw in parser[section].items():
            name, conv = _SCHEMA[section][key]
            try:
                values[name] = conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}", lines.get((section, key))) from exc

    out = OutputOptions(values.pop("csv", None), values.pop("mesh_dump_every", 0))
    if out.mesh_dump_every < 0:
        raise ConfigError("output.mesh_dump_every must be nonnegative",
                          lines.get(("output", "mesh_dump_every")))
    mode = values.pop("mode", "new")
    c = MODE_CONSTANTS[mode]
    values.setdefault("c_u", c)
    values.setdefault("c_z", c)
    try:
        run = RunConfig(mode=mode, **values)
        run.goal_def()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return ParsedConfig(run, out)


def load_config(path: str | Path) -> ParsedConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)


# ----------------------------------------------------------------------
# CSV

def _fmt(x: float) -> str:
    # %e ignores the locale; 17 significant digits round-trip a double
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.16e" % x


def _trace_json(rec: LevelRecord) -> str:
    steps = [[action, {k: float(getattr(parts, k)) for k in PART_NAMES}]
             for action, parts in rec.step_trace]
    return json.dumps(steps, separators=(",", ":"))


def record_row(rec: LevelRecord) -> dict[str, str]:
    p, e = rec.parts, rec.effectivity
    floats = {
        "eta_h2": p.eta_h2, "eta_k": p.eta_k, "eta_R": p.eta_R, "eta_u2": p.eta_u2,
        "eta_z2": p.eta_z2, "eta_total": p.total, "J_value": rec.J_value, "error": rec.error,
        "I_eff_h": e.I_eff_h, "I_eff": e.I_eff, "I_eff_R": e.I_eff_R,
    }
    row = {k: _fmt(v) for k, v in floats.items()}
    row.update(level=str(rec.level), dofs_primal=str(rec.dofs_primal),
               dofs_enriched=str(rec.dofs_enriched), z_solves_cum=str(rec.z_solves_cum),
               u_solves_cum=str(rec.u_solves_cum), step_trace=_trace_json(rec))
    return row


def emit_csv(records: Sequence[LevelRecord], path: str | Path) -> None:
    """Write one header row and one row per level."""
    if not records:
        raise ValueError("no records to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow(record_row(rec))


def read_csv(path: str | Path) -> list[dict[str, Any]]:
    """Rows with ints, floats and the decoded step trace."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for raw in reader:
            row: dict[str, Any] = {}
            for k in CSV_COLUMNS:
                if k in INT_COLUMNS:
                    row[k] = int(raw[k])
                elif k == "step_trace":
                    row[k] = [(a, parts) for a, parts in json.loads(raw[k])]
                else:
                    row[k] = float(raw[k])
            rows.append(row)
    return rows


# ----------------------------------------------------------------------
# rates and checks

def _column(records: Iterable[Any], name: str) -> np.ndarray:
    out = []
    for r in records:
        if isinstance(r, Mapping):
            out.append(r[name])
        elif name == "eta_total":
            out.append(r.parts.total)
        elif hasattr(r, name):
            out.append(getattr(r, name))
        elif hasattr(r.parts, name):
            out.append(getattr(r.parts, name))
        else:
            out.append(getattr(r.effectivity, name))
    return np.asarray(out, dtype=float)


def fit_rate(records: Sequence[Any], x: str = "dofs_primal", y: str = "error") -> float:
    """Least-squares slope of ``log y`` against ``log x`` over the last half of the levels.

    ``records`` may be LevelRecords or rows from :func:`read_csv`. Nonpositive
    or non-finite ``y`` values are dropped with a warning.
    """
    if len(records) < 4:
        raise ValueError("rate fitting needs at least 4 levels")
    tail = records[len(records) // 2:]
    xs, ys = _column(tail, x), _column(tail, y)
    keep = np.isfinite(ys) & (ys > 0) & np.isfinite(xs) & (xs > 0)
    if not keep.all():
        warnings.warn(f"fit_rate: dropped {int((~keep).sum())} nonpositive values of {y}",
                      RuntimeWarning, stacklevel=2)
    if keep.sum() < 2:
        raise ValueError(f"too few positive values of {y} to fit a rate")
    slope, _ = np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)
    return float(slope)


def check_rows(rows: Sequence[Mapping[str, Any]], rtol: float = 1e-12) -> list[str]:
    """Invariant violations in stored output; empty when everything holds."""
    problems = []
    prev_z = prev_u = 0
    for i, r in enumerate(rows):
        lvl = r["level"]
        if lvl != i + 1:
            problems.append(f"row {i + 1}: level {lvl} out of sequence")
        terms = [r["eta_h2"], -r["eta_k"], r["eta_R"], r["eta_u2"], r["eta_z2"]]
        scale = sum(abs(t) for t in terms)
        if abs(sum(terms) - r["eta_total"]) > rtol * scale + 1e-300:
            problems.append(f"level {lvl}: eta_total does not equal the sum of its parts")
        trace = r["step_trace"]
        if not 1 <= len(trace) <= 4:
            problems.append(f"level {lvl}: {len(trace)} estimator evaluations")
        else:
            last = trace[-1][1]
            if any(last[k] != r[c] for k, c in (("eta_h2", "eta_h2"), ("total", "eta_total"))):
                problems.append(f"level {lvl}: last trace snapshot differs from the row")
        nz = sum(a == "solve-adjoint" for a, _ in trace)
        nu = sum(a == "solve-primal" for a, _ in trace)
        if r["z_solves_cum"] != prev_z + nz or r["u_solves_cum"] != prev_u + nu:
            problems.append(f"level {lvl}: solve counters disagree with the step trace")
        prev_z, prev_u = r["z_solves_cum"], r["u_solves_cum"]
        if r["dofs_enriched"] <= r["dofs_primal"]:
            problems.append(f"level {lvl}: enriched space not larger than primal space")
    return problems


def check_csv(path: str | Path) -> list[str]:
    return check_rows(read_csv(path))


# ----------------------------------------------------------------------
# manifest

@dataclass
class RunManifest:
    config: dict
    version: str
    csv_path: str
    levels: int
    stop_reason: str
    final_J: float
    final_error: float
    slopes: dict[str, float]

    def to_json(self) -> str:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v
        data = asdict(self)
        data["final_J"] = clean(data["final_J"])
        data["final_error"] = clean(data["final_error"])
        data["slopes"] = {k: clean(v) for k, v in data["slopes"].items()}
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


def build_manifest(config: RunConfig, records: Sequence[LevelRecord], csv_path: str | Path) -> RunManifest:
    slopes: dict[str, float] = {}
    if len(records) >= 4:
        mags = [("error", lambda r: abs(r.error)), ("eta_h2", lambda r: abs(r.parts.eta_h2)),
                ("eta_R", lambda r: abs(r.parts.eta_R)), ("eta_total", lambda r: abs(r.parts.total))]
        for name, get in mags:
            rows = [{"dofs_primal": r.dofs_primal, name: get(r)} for r in records]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                try:
                    slopes[name] = fit_rate(rows, "dofs_primal", name)
                except ValueError:
                    slopes[name] = float("nan")
    cfg = {f.name: getattr(config, f.name) for f in fields(config)}
    cfg["point"] = list(cfg["point"])
    last = records[-1]
    return RunManifest(cfg, __version__, str(csv_path), len(records), last.stop_reason,
                       float(last.J_value), float(last.error), slopes)


def manifest_path(csv_path: str | Path) -> Path:
    p = Path(csv_path)
    name = p.name[:-4] if p.name.endswith(".csv") else p.name
    return p.with_name(name + ".manifest.json")
