"""Config parsing, provenance headers, and CSV emission for the CLI.

Every emitted file starts with `# key=value` provenance lines (tool version,
seed, config hash) followed by an RFC-4180 table with a mandatory header
row.  Cells are written with repr round-tripping, so equal inputs produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .validation import ConfigError

TOOL_VERSION = "selfmotion 0.1.0"


def load_config(path, kind: str) -> dict:
    """Parse a YAML config and check its `schema: <kind>/1` tag."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{where}: invalid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    schema = data.get("schema")
    if schema != f"{kind}/1":
        raise ConfigError(
            f"{path}: expected schema '{kind}/1', found {schema!r}")
    return data


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot hash config value of type {type(value).__name__}")


def config_hash(data: dict) -> str:
    """Stable short digest of the canonical JSON form of a config."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"),
                      default=_jsonable)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _format_cell(value) -> str:
    if isinstance(value, (str, np.str_)):
        if "," in value or "\n" in value or '"' in value:
            raise ConfigError(f"cell needs quoting, which reads back poorly: {value!r}")
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, columns, meta) -> None:
    """Write named 1-D columns with a `# key=value` provenance preamble.

    columns: mapping name → array, written in iteration order; meta: mapping
    written before the header row.  Lengths must agree.
    """
    names = list(columns)
    if not names:
        raise ConfigError("write_csv needs at least one column")
    arrays = [np.atleast_1d(np.asarray(columns[k])) for k in names]
    length = arrays[0].shape[0]
    for name, arr in zip(names, arrays):
        if arr.ndim != 1 or arr.shape[0] != length:
            raise ConfigError(f"column {name!r} must be 1-D of length {length}")
    lines = [f"# tool={TOOL_VERSION}"]
    lines += [f"# {k}={v}" for k, v in dict(meta).items()]
    lines.append(",".join(names))
    for i in range(length):
        lines.append(",".join(_format_cell(arr[i]) for arr in arrays))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    """Read back a provenance-tagged CSV → (meta dict, {name: column}).

    Columns parse to float arrays when every cell is numeric and stay
    string arrays otherwise.
    """
    meta = {}
    names = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        cells = line.split(",")
        if names is None:
            names = cells
        else:
            rows.append(cells)
    if names is None:
        raise ConfigError(f"{path}: no header row")
    out = {}
    for j, name in enumerate(names):
        col = [row[j] for row in rows]
        try:
            out[name] = np.asarray(col, float)
        except ValueError:
            out[name] = np.asarray(col)
    return meta, out


def log_to_columns(log) -> dict:
    """Flatten a SimulationLog into named scalar columns for CSV emission."""
    columns = {"time": log.t}
    for j in range(log.q.shape[1]):
        columns[f"q{j + 1}"] = log.q[:, j]
    for j in range(log.qd.shape[1]):
        columns[f"qd{j + 1}"] = log.qd[:, j]
    if log.tau is not None:
        for j in range(log.tau.shape[1]):
            columns[f"tau{j + 1}"] = log.tau[:, j]
    for name, chan in log.extras.items():
        chan = np.asarray(chan)
        if chan.ndim == 1:
            columns[name] = chan
        else:
            for j in range(chan.shape[1]):
                columns[f"{name}{j + 1}"] = chan[:, j]
    return columns
