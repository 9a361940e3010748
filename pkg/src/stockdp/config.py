"""
Run configuration: a single JSON document, plus the artifact writers/readers.

Canonical schema (unbounded a_bar/x_bar are the string "inf"; "horizon" is an
integer N or "inf")::

    {
      "model": {
        "K": 5.0, "c_bar": 1.0, "alpha": 0.9,
        "holding": {"kind": "piecewise-linear", "pieces": [[-4.0, 0.0], [1.0, 0.0]]},
        "demand": [[0, 0.1], [1, 0.4], [2, 0.3], [3, 0.2]],
        "regime": {"kind": "U", "a_bar": "inf", "x_bar": "inf"},
        "shortfall": "backorders"
      },
      "grid": {"x_min": -30, "x_max": 30, "step": 1},
      "solver": {"horizon": "inf", "tol": 1e-6, "v_max": null, "max_iterations": 100000},
      "sim": {"seed": 0, "n_paths": 10000, "horizon_cap": null,
              "discount_tail_epsilon": 1e-6, "start_states": [0]},
      "structure": {"t_max": 2000, "x_probe": -1e6},
      "sweep": {"alpha_star_points": 100, "alpha_points": 100, "horizon": "finite"},
      "outputs": {"dir": "out", "format": "csv"}
    }

A tabulated holding cost uses ``{"kind": "tabulated", "table": [[x, h], ...]}``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import StockDPError
from .model import ConstraintRegime, DemandDistribution, HoldingCost, ModelSpec, Shortfall, validate
from .solver import Grid, GridError, PolicyTable, check_grid


class ConfigError(StockDPError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class ArtifactError(StockDPError):
    """Missing, unreadable or corrupted output artifact."""


FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes | str) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class SolverSettings:
    horizon: int | float = math.inf
    tol: float = 1e-6
    v_max: float | None = None
    max_iterations: int = 100_000


@dataclass(frozen=True)
class SimSettings:
    seed: int = 0
    n_paths: int = 10_000
    horizon_cap: int | None = None
    discount_tail_epsilon: float = 1e-6
    start_states: tuple = (0.0,)


@dataclass(frozen=True)
class StructureSettings:
    t_max: int = 2000
    x_probe: float = -1e6


@dataclass(frozen=True)
class SweepSettings:
    alpha_star_points: int = 100
    alpha_points: int = 100
    horizon: str = "finite"


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "out"
    format: str = "csv"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    grid: Grid
    solver: SolverSettings = field(default_factory=SolverSettings)
    sim: SimSettings = field(default_factory=SimSettings)
    structure: StructureSettings = field(default_factory=StructureSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    outputs: OutputSettings = field(default_factory=OutputSettings)


def _enc(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def _dec(x, what, line_of):
    if x == "inf":
        return math.inf
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x)
    raise ConfigError(f"{what} must be a number or \"inf\", got {x!r}", line_of(what.split(".")[-1]))


def to_dict(cfg: RunConfig) -> dict:
    m = cfg.model
    if m.h.kind == "piecewise-linear":
        holding = {"kind": m.h.kind, "pieces": [list(p) for p in m.h.pieces]}
    else:
        holding = {"kind": m.h.kind, "table": [list(p) for p in m.h.table]}
    return {
        "model": {
            "K": m.K, "c_bar": m.c_bar, "alpha": m.alpha,
            "holding": holding,
            "demand": [list(a) for a in m.demand.atoms],
            "regime": {"kind": m.regime.kind, "a_bar": _enc(m.regime.a_bar), "x_bar": _enc(m.regime.x_bar)},
            "shortfall": m.shortfall.value,
        },
        "grid": {"x_min": cfg.grid.x_min, "x_max": cfg.grid.x_max, "step": cfg.grid.step},
        "solver": {**asdict(cfg.solver), "horizon": _enc(cfg.solver.horizon)},
        "sim": {**asdict(cfg.sim), "start_states": list(cfg.sim.start_states)},
        "structure": asdict(cfg.structure),
        "sweep": asdict(cfg.sweep),
        "outputs": asdict(cfg.outputs),
    }


def canonical_text(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    return f"{fnv1a64(canonical_text(cfg)):016x}"


def _line_finder(text: str):
    def line_of(key: str) -> int | None:
        m = re.search(r'"%s"\s*:' % re.escape(key), text)
        return text.count("\n", 0, m.start()) + 1 if m else None
    return line_of


def from_dict(d: dict, text: str = "") -> RunConfig:
    line_of = _line_finder(text)

    def need(obj, key, where):
        if not isinstance(obj, dict) or key not in obj:
            raise ConfigError(f"missing key {where}.{key}", line_of(where.split(".")[-1]))
        return obj[key]

    try:
        m = need(d, "model", "root")
        hd = need(m, "holding", "model")
        kind = need(hd, "kind", "holding")
        if kind == "piecewise-linear":
            h = HoldingCost.piecewise_linear([tuple(map(float, p)) for p in need(hd, "pieces", "holding")])
        elif kind == "tabulated":
            tab = need(hd, "table", "holding")
            h = HoldingCost.tabulated([p[0] for p in tab], [p[1] for p in tab])
        else:
            raise ConfigError(f"unknown holding kind {kind!r}", line_of("kind"))
        rd = need(m, "regime", "model")
        regime = ConstraintRegime(need(rd, "kind", "regime"),
                                  _dec(rd.get("a_bar", "inf"), "regime.a_bar", line_of),
                                  _dec(rd.get("x_bar", "inf"), "regime.x_bar", line_of))
        spec = ModelSpec(
            K=float(need(m, "K", "model")), c_bar=float(need(m, "c_bar", "model")), h=h,
            demand=DemandDistribution(tuple((float(a), float(b)) for a, b in need(m, "demand", "model"))),
            alpha=float(need(m, "alpha", "model")), regime=regime,
            shortfall=Shortfall(m.get("shortfall", "backorders")),
        )
        gd = need(d, "grid", "root")
        grid = Grid(float(need(gd, "x_min", "grid")), float(need(gd, "x_max", "grid")), float(need(gd, "step", "grid")))
        sd = dict(d.get("solver", {}))
        if "horizon" in sd:
            hz = sd["horizon"]
            sd["horizon"] = math.inf if hz == "inf" else int(hz)
        solver = SolverSettings(**sd)
        simd = dict(d.get("sim", {}))
        if "start_states" in simd:
            simd["start_states"] = tuple(float(x) for x in simd["start_states"])
        sim = SimSettings(**simd)
        cfg = RunConfig(spec, grid, solver, sim, StructureSettings(**d.get("structure", {})),
                        SweepSettings(**d.get("sweep", {})), OutputSettings(**d.get("outputs", {})))
    except ConfigError:
        raise
    except TypeError as exc:
        bad = re.search(r"'(\w+)'", str(exc))
        raise ConfigError(str(exc), line_of(bad.group(1)) if bad else None) from None
    except (ValueError, GridError) as exc:
        raise ConfigError(str(exc)) from None

    violations = validate(cfg.model)
    if violations:
        first = violations[0].split(":")[0].split()[0]
        key = {"h": "holding", "demand": "demand", "regime": "regime"}.get(first, first)
        raise ConfigError("; ".join(violations), line_of(key))
    try:
        check_grid(cfg.model, cfg.grid)
    except GridError as exc:
        raise ConfigError(str(exc), line_of("grid")) from None
    if cfg.outputs.format not in ("csv", "jsonl"):
        raise ConfigError(f"outputs.format must be csv or jsonl, got {cfg.outputs.format!r}", line_of("format"))
    if cfg.sweep.horizon not in ("finite", "infinite"):
        raise ConfigError("sweep.horizon must be finite or infinite", line_of("horizon"))
    return cfg


def loads(text: str) -> RunConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno) from None
    return from_dict(d, text)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text)


def dumps(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def save(cfg: RunConfig, path) -> None:
    atomic_write(path, dumps(cfg))


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "inf" if v == math.inf else repr(v)
    if v is None:
        return ""
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating,)):
        v = float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def render_table(columns: list[str], rows: list, chash: str, fmt: str = "csv", extra_meta: dict | None = None) -> str:
    """CSV (leading ``# key=value`` comment lines, header, rows) or JSON lines."""
    meta = {"config_hash": chash, **(extra_meta or {})}
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows([_fmt(v) for v in r] for r in rows)
        body = buf.getvalue()
        head = "".join(f"# {k}={v}\n" for k, v in meta.items())
        return head + body
    lines = [json.dumps(meta, sort_keys=True)]
    lines += [json.dumps({c: _jsonable(v) for c, v in zip(columns, r)}) for r in rows]
    return "\n".join(lines) + "\n"


def write_table(path, columns, rows, chash, fmt="csv", extra_meta=None) -> Path:
    path = Path(path).with_suffix("." + fmt)
    atomic_write(path, render_table(columns, rows, chash, fmt, extra_meta))
    return path


def write_policy(path, policy: PolicyTable, chash: str, fmt: str = "csv") -> Path:
    """Policy artifact; carries a checksum over the data rows."""
    rows = [(x, a) for x, a in zip(policy.grid.points, policy.order)]
    body = render_table(["x", "order"], rows, chash, fmt)
    data = _data_part(body, fmt)
    grid_meta = f"{_fmt(policy.grid.x_min)},{_fmt(policy.grid.x_max)},{_fmt(policy.grid.step)}"
    return write_table(path, ["x", "order"], rows, chash, fmt,
                       {"grid": grid_meta, "checksum": f"{fnv1a64(data):016x}"})


def _data_part(text: str, fmt: str) -> str:
    lines = text.splitlines(keepends=True)
    if fmt == "csv":
        return "".join(l for l in lines if not l.startswith("#"))
    return "".join(lines[1:])


def read_table(path) -> tuple[dict, list[dict]]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"artifact {path} does not exist")
    text = path.read_text()
    if path.suffix == ".jsonl":
        lines = text.splitlines()
        try:
            meta = json.loads(lines[0])
            rows = [json.loads(l) for l in lines[1:] if l.strip()]
        except (json.JSONDecodeError, IndexError) as exc:
            raise ArtifactError(f"unreadable artifact {path}: {exc}") from None
        return meta, rows
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line:
            body.append(line)
    rows = list(csv.DictReader(body))
    return meta, rows


def read_policy(path) -> PolicyTable:
    path = Path(path)
    meta, rows = read_table(path)
    fmt = "jsonl" if path.suffix == ".jsonl" else "csv"
    data = _data_part(path.read_text(), fmt)
    if "checksum" not in meta or f"{fnv1a64(data):016x}" != meta["checksum"]:
        raise ArtifactError(f"checksum mismatch in policy artifact {path}")
    try:
        x_min, x_max, step = (float(v) for v in meta["grid"].split(","))
        grid = Grid(x_min, x_max, step)
        order = np.array([float(r["order"]) for r in rows])
    except (KeyError, ValueError, GridError) as exc:
        raise ArtifactError(f"malformed policy artifact {path}: {exc}") from None
    if len(order) != grid.n:
        raise ArtifactError(f"policy artifact {path} has {len(order)} rows for a {grid.n}-point grid")
    return PolicyTable(grid, order)
