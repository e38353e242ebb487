"""Deterministic run outputs: diagnostics CSV, AGGS snapshots, hashed manifest.

Every file is written to a temporary name and renamed into place, so a
failed run never leaves a truncated file behind.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from typing import Iterable, Sequence

from .diagnostics import DiagnosticsRecord
from .grid import ScalarField, encode_snapshot

MANIFEST = "manifest.json"
CSV_NAME = "diagnostics.csv"


class OutputError(OSError):
    pass


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.remove(tmp)
        except OSError:
            pass
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def diagnostics_csv(series: Iterable[DiagnosticsRecord]) -> str:
    buf = io.StringIO()
    buf.write(",".join(DiagnosticsRecord.columns()) + "\n")
    for rec in series:
        buf.write(",".join(repr(float(v)) for v in rec.row()) + "\n")
    return buf.getvalue()


def read_diagnostics_csv(path: str) -> list[DiagnosticsRecord]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != DiagnosticsRecord.columns():
            raise OutputError(f"{path}: unexpected header {header}")
        return [DiagnosticsRecord(*map(float, line.split(","))) for line in fh if line.strip()]


def write_outputs(series: Sequence[DiagnosticsRecord], snapshots: Sequence[tuple[int, ScalarField]],
                  directory: str, extra: dict[str, bytes] | None = None) -> dict:
    """Write the CSV, snapshots ``snap_<step>.aggs`` and any ``extra`` files;
    return the manifest ``{"files": [{"name", "sha256", "bytes"}, ...]}``."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {directory}: {exc.strerror or exc}") from exc
    files: dict[str, bytes] = {CSV_NAME: diagnostics_csv(series).encode()}
    for step, field in snapshots:
        files[f"snap_{step:08d}.aggs"] = encode_snapshot(field)
    files.update(extra or {})
    entries = []
    for name in sorted(files):
        data = files[name]
        _atomic_write(os.path.join(directory, name), data)
        entries.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    manifest = {"files": entries}
    _atomic_write(os.path.join(directory, MANIFEST), (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return manifest
