"""Deterministic CSV/JSON writers with provenance headers and an atomic run directory."""
from __future__ import annotations

import json
import math
import shutil
import tempfile
from pathlib import Path

UNITS = "frequencies and rates in units of omega0; times in units of 1/omega0"


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.10g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


class RunWriter:
    """Collects outputs in a staging directory and publishes them on commit.

    Nothing appears under ``out_dir`` unless :meth:`commit` runs, so a run
    that fails half way leaves no partial files behind.
    """

    def __init__(self, out_dir, omega0: float, config_hash: str, version: str):
        self.out_dir = Path(out_dir)
        self.omega0 = omega0
        self.config_hash = config_hash
        self.version = version
        self.files: list[str] = []
        parent = self.out_dir.resolve().parent
        parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".phonon-forge-", dir=parent))

    def header(self) -> list[str]:
        return [f"# omega0_rad_s = {self.omega0:.10g}",
                f"# units: {UNITS}",
                f"# config_hash = {self.config_hash}",
                f"# phonon_forge {self.version}"]

    def csv(self, name: str, columns, rows) -> Path:
        path = self.stage / name
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = self.header() + [",".join(columns)]
        for r in rows:
            vals = r if isinstance(r, (list, tuple)) else [r[c] for c in columns]
            lines.append(",".join(fmt(v) for v in vals))
        path.write_text("\n".join(lines) + "\n")
        self.files.append(name)
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.stage / name
        path.parent.mkdir(parents=True, exist_ok=True)
        body = {"omega0_rad_s": self.omega0, "units": UNITS, "config_hash": self.config_hash, **payload}
        path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")
        self.files.append(name)
        return path

    def path(self, name: str) -> Path:
        """Staged path for a file produced by a third party (figures)."""
        p = self.stage / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def commit(self, manifest: dict) -> Path:
        self.json("manifest.json", {**manifest, "version": self.version, "files": sorted(self.files + ["manifest.json"])})
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name in self.files:
            dest = self.out_dir / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.move(str(self.stage / name), dest)
        shutil.rmtree(self.stage, ignore_errors=True)
        return self.out_dir / "manifest.json"

    def abort(self) -> None:
        shutil.rmtree(self.stage, ignore_errors=True)
