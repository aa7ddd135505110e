"""File I/O for databases, PMFs, kernels, sample sets, configs and reports."""

import hashlib
import json
import logging
import math
import tomllib
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel

from .composition import BudgetConfig
from .config import settings
from .core import Database, FrameworkConfig, PPFramework, build_framework
from .infotheory import DiscreteKernel, JointPMF
from .models import ConfigError, ValidationError
from .smi import SecretSampleSet, SliceSampleSet

logger = logging.getLogger(__name__)

ROW_FILE = "row_{i}.csv"
SECRET_FILE = "secret_{j}.csv"


# Config files


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a TOML (by suffix) or JSON file into a dict."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".toml":
            with path.open("rb") as fh:
                return tomllib.load(fh)
        with path.open(encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        logger.error(f"Cannot read {path}: {e}")
        raise ConfigError(f"Cannot read {path}: {e}") from e
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        logger.error(f"Cannot parse {path}: {e}")
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a table or object at the top level")
    return data


def load_framework(path: str | Path) -> PPFramework:
    return build_framework(read_config_file(path))


def load_framework_config(path: str | Path) -> FrameworkConfig:
    try:
        return FrameworkConfig(**read_config_file(path))
    except ValueError as e:
        raise ConfigError(f"Malformed framework config {path}: {e}") from e


def load_budget(path: str | Path) -> BudgetConfig:
    try:
        return BudgetConfig(**read_config_file(path))
    except ValueError as e:
        raise ConfigError(f"Malformed budget config {path}: {e}") from e


# CSV tables


def _read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Header names and the (rows, columns) float matrix of a CSV file."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            header = [h.strip() for h in fh.readline().strip().split(",")]
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as e:
        logger.error(f"Cannot read {path}: {e}")
        raise ConfigError(f"Cannot read {path}: {e}") from e
    except ValueError as e:
        logger.error(f"Cannot parse {path}: {e}")
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    if data.size and data.shape[1] != len(header):
        raise ConfigError(f"{path}: {data.shape[1]} columns but {len(header)} header names")
    return header, data


def _write_table(path: str | Path, header: list[str], data: np.ndarray) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(
            path,
            np.atleast_2d(data),
            delimiter=",",
            header=",".join(header),
            comments="",
            fmt="%.17g",
        )
    except OSError as e:
        logger.error(f"Cannot write {path}: {e}")
        raise ConfigError(f"Cannot write {path}: {e}") from e


def _columns(header: list[str], prefix: str) -> list[int]:
    return [i for i, name in enumerate(header) if name.startswith(prefix)]


def read_database_csv(path: str | Path) -> Database:
    """Rows of the file are database rows; header c0, c1, ..."""
    _, data = _read_table(path)
    return Database.from_rows(data.tolist())


def write_database_csv(path: str | Path, x: Database) -> None:
    _write_table(path, [f"c{j}" for j in range(x.k)], np.asarray(x.values))


def read_samples_csv(path: str | Path) -> np.ndarray:
    """n x d sample matrix for mean estimation."""
    _, data = _read_table(path)
    if data.size == 0:
        raise ValidationError(f"{path} holds no samples")
    return data


def read_joint_pmf_csv(path: str | Path) -> JointPMF:
    """Sparse joint PMF: one integer index column per axis, then ``prob``."""
    header, data = _read_table(path)
    if not header or header[-1] != "prob":
        raise ConfigError(f"{path}: last column must be 'prob'")
    index = data[:, :-1].astype(int)
    if np.any(index < 0):
        raise ValidationError(f"{path}: negative axis index")
    shape = tuple(int(s) for s in index.max(axis=0) + 1)
    probs = np.zeros(shape)
    np.add.at(probs, tuple(index.T), data[:, -1])
    return JointPMF.from_array(probs)


def read_kernel_csv(path: str | Path, n: int, k: int) -> DiscreteKernel:
    """Kernel table: cells x0..x{nk-1}, then one ``out:v1;v2`` column per output."""
    header, data = _read_table(path)
    cells = _columns(header, "x")
    outs = _columns(header, "out:")
    if len(cells) != n * k or not outs:
        raise ConfigError(f"{path}: need {n * k} x-columns and at least one out: column")
    outputs = tuple(
        tuple(float(v) for v in header[i].removeprefix("out:").split(";")) for i in outs
    )
    try:
        return DiscreteKernel(
            support=data[:, cells].reshape(-1, n, k),
            outputs=outputs,
            table=data[:, outs],
            name=Path(path).stem,
        )
    except ValueError as e:
        raise ValidationError(f"Invalid kernel in {path}: {e}") from e


# Sample sets


def read_slice_samples(directory: str | Path) -> SliceSampleSet:
    """Slice samples from ``row_0.csv``, ``row_1.csv``, ... with x*, y*, z* columns."""
    directory = Path(directory)
    files = []
    while (candidate := directory / ROW_FILE.format(i=len(files))).exists():
        files.append(candidate)
    if not files:
        raise ConfigError(f"No {ROW_FILE.format(i=0)} in {directory}")
    xs, ys, zs = [], [], []
    for path in files:
        header, data = _read_table(path)
        xs.append(data[:, _columns(header, "x")])
        ys.append(data[:, _columns(header, "y")])
        zs.append(data[:, _columns(header, "z")])
    try:
        return SliceSampleSet.from_arrays(np.stack(xs), np.stack(ys), np.stack(zs))
    except ValueError as e:
        raise ValidationError(f"Inconsistent slice samples in {directory}: {e}") from e


def write_slice_samples(directory: str | Path, samples: SliceSampleSet) -> None:
    directory = Path(directory)
    for i in range(samples.n):
        x, y, z = samples.record(i)
        header = (
            [f"x{j}" for j in range(x.shape[1])]
            + [f"y{j}" for j in range(y.shape[1])]
            + [f"z{j}" for j in range(z.shape[1])]
        )
        _write_table(directory / ROW_FILE.format(i=i), header, np.hstack([x, y, z]))


def read_secret_samples(directory: str | Path) -> SecretSampleSet:
    """Secret samples from ``secret_0.csv``, ... with g*, y* columns; y must agree."""
    directory = Path(directory)
    secrets, releases = [], []
    while (path := directory / SECRET_FILE.format(j=len(secrets))).exists():
        header, data = _read_table(path)
        secrets.append(data[:, _columns(header, "g")])
        releases.append(data[:, _columns(header, "y")])
    if not secrets:
        raise ConfigError(f"No {SECRET_FILE.format(j=0)} in {directory}")
    if any(not np.array_equal(r, releases[0]) for r in releases[1:]):
        raise ValidationError("Secret files disagree on the released samples")
    try:
        return SecretSampleSet(secrets=tuple(secrets), y=releases[0])
    except ValueError as e:
        raise ValidationError(f"Invalid secret samples in {directory}: {e}") from e


def load_samples(directory: str | Path) -> SliceSampleSet | SecretSampleSet:
    """Whichever sample layout the directory holds."""
    if (Path(directory) / SECRET_FILE.format(j=0)).exists():
        return read_secret_samples(directory)
    return read_slice_samples(directory)


# Reports


def _encode(value: Any) -> str:
    if isinstance(value, BaseModel):
        return _encode(value.model_dump())
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, int | np.integer):
        return str(int(value))
    if isinstance(value, float | np.floating):
        v = float(value)
        if math.isnan(v):
            return '"nan"'
        if math.isinf(v):
            return '"inf"' if v > 0 else '"-inf"'
        return format(v, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, Mapping):
        items = (f"{json.dumps(str(key))}: {_encode(v)}" for key, v in value.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(value, np.ndarray):
        return _encode(value.tolist())
    if isinstance(value, list | tuple):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    raise TypeError(f"Cannot encode {type(value).__name__} in a report")


def dumps_report(report: Mapping[str, Any] | BaseModel) -> str:
    """JSON text keeping insertion order, floats written with 17 significant digits."""
    return _encode(report)


def config_digest(params: Mapping[str, Any]) -> str:
    """sha256 of the canonical JSON of the parameters and the effective settings."""
    info = settings.get_config_info()
    info.pop("threads")
    payload = {"params": dict(params), "settings": info}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot write {path}: {e}")
        raise ConfigError(f"Cannot write {path}: {e}") from e
