"""
Run directories and atomic artifact writes.

Files are written to a temporary sibling and moved into place with
os.replace, so a reader never sees a half-written artifact.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal

import numpy as np
import pandas as pd

from apps.core.exceptions import ArtifactIOError
from apps.inference.transition import DensitySurface
from apps.sde.paths import SamplePath
from apps.smoothing.curves import CurveEstimate

logger = logging.getLogger(__name__)

TableFormat = Literal["csv", "json"]


def jsonable(value: Any) -> Any:
    """numpy scalars and arrays, paths and non-finite floats into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        return jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "items"):
        return jsonable(dict(value.items()))
    return value


def _atomic_write(target: Path, writer: Callable[[Path], None]) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    os.close(fd)
    temp = Path(temp_name)
    try:
        writer(temp)
        os.replace(temp, target)
    except OSError as exc:
        temp.unlink(missing_ok=True)
        raise ArtifactIOError(f"cannot write {target}: {exc}", details={"path": str(target)}) from exc
    except BaseException:
        temp.unlink(missing_ok=True)
        raise


def write_json_file(target: Path, payload: Any) -> None:
    text = json.dumps(jsonable(payload), indent=2, sort_keys=True) + "\n"
    _atomic_write(target, lambda p: p.write_text(text, encoding="utf-8"))


def curve_frame(curve: CurveEstimate) -> pd.DataFrame:
    return curve.to_frame()


def curve_plot_frame(curve: CurveEstimate, width: float = 2.0) -> pd.DataFrame:
    """Value with its pointwise band, for redrawing a curve-with-band panel."""
    lower, upper = curve.band(width)
    return pd.DataFrame(
        {"grid": curve.grid, "value": curve.value, "lower": lower, "upper": upper, "reliable": curve.reliable}
    )


def surface_frame(surface: DensitySurface) -> pd.DataFrame:
    """Long form x,y,density (or x,y,cdf)."""
    xx, yy = np.meshgrid(surface.x_grid, surface.y_grid, indexing="ij")
    return pd.DataFrame({"x": xx.ravel(), "y": yy.ravel(), surface.kind: surface.density.ravel()})


def path_frame(path: SamplePath) -> pd.DataFrame:
    return pd.DataFrame({"t": path.times, "x": path.values})


"""
GOAL: Output directory of one run, tracking every artifact written into it.

PARAMETERS:
  root: Path - Output root (RunConfig.output_dir)
  command: str - Command name
  seed: int - Materialized run seed
  table_format: "csv" | "json" - Format for result tables

GUARANTEES:
  - Artifacts live in <root>/<command>-<seed>/
  - artifacts lists file names in write order, each at most once
  - discard() removes every tracked artifact and leaves the manifest to the caller
"""
@dataclass
class RunDirectory:
    root: Path
    command: str
    seed: int
    table_format: TableFormat = "csv"
    artifacts: list[str] = field(default_factory=list)

    @property
    def path(self) -> Path:
        return Path(self.root) / f"{self.command}-{self.seed}"

    def _track(self, name: str) -> Path:
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.path / name

    def table(self, stem: str, frame: pd.DataFrame) -> str:
        name = f"{stem}.{self.table_format}"
        target = self._track(name)
        if self.table_format == "csv":
            _atomic_write(target, lambda p: frame.to_csv(p, index=False))
        else:
            write_json_file(target, frame.to_dict(orient="list"))
        logger.debug("wrote %s (%d rows)", target, len(frame))
        return name

    def json(self, stem: str, payload: Any) -> str:
        name = f"{stem}.json"
        write_json_file(self._track(name), payload)
        return name

    def curve(self, stem: str, curve: CurveEstimate) -> list[str]:
        return [self.table(stem, curve_frame(curve)), self.table(f"plot_{stem}", curve_plot_frame(curve))]

    def discard(self) -> None:
        for name in self.artifacts:
            (self.path / name).unlink(missing_ok=True)
        removed = len(self.artifacts)
        self.artifacts.clear()
        logger.info("removed %d partial artifact(s) from %s", removed, self.path)

    def write_manifest(self, payload: Any) -> Path:
        target = self.path / "manifest.json"
        write_json_file(target, payload)
        return target

    def clear(self) -> None:
        """Remove a stale directory from an earlier run with the same command and seed."""
        if self.path.exists():
            shutil.rmtree(self.path)
