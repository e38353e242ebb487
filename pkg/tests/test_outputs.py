import hashlib
import json
import os

import pytest

from aggrosim.diagnostics import DiagnosticsRecord
from aggrosim.grid import GridSpec, decode_snapshot, gaussian_field
from aggrosim.outputs import OutputError, diagnostics_csv, read_diagnostics_csv, write_outputs


def _records(k=3):
    n = len(DiagnosticsRecord.columns())
    return [DiagnosticsRecord(*[float(i) + 0.1 * j + 1e-17 for j in range(n)]) for i in range(k)]


def test_csv_roundtrip(tmp_path):
    """[DERIVED] repr-formatted floats read back bit for bit."""
    recs = _records()
    p = tmp_path / "d.csv"
    p.write_text(diagnostics_csv(recs))
    assert read_diagnostics_csv(str(p)) == recs


def test_csv_header_checked(tmp_path):
    """[TRIVIAL]"""
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(OutputError):
        read_diagnostics_csv(str(p))


def test_manifest_hashes(tmp_path):
    """[DERIVED] each manifest entry is the sha256 and size of the file on disk."""
    g = GridSpec(2, 2.0, 16)
    u = gaussian_field(g)
    manifest = write_outputs(_records(), [(5, u)], str(tmp_path), extra={"config.ini": b"[grid]\n"})
    names = [e["name"] for e in manifest["files"]]
    assert names == sorted(["diagnostics.csv", "snap_00000005.aggs", "config.ini"])
    for e in manifest["files"]:
        data = (tmp_path / e["name"]).read_bytes()
        assert e["sha256"] == hashlib.sha256(data).hexdigest() and e["bytes"] == len(data)
    assert json.loads((tmp_path / "manifest.json").read_text()) == manifest
    back = decode_snapshot((tmp_path / "snap_00000005.aggs").read_bytes())
    assert (back.values == u.values).all()
    assert not [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]


def test_deterministic(tmp_path):
    """[TRIVIAL] identical inputs give identical manifests."""
    a = write_outputs(_records(), [], str(tmp_path / "a"))
    b = write_outputs(_records(), [], str(tmp_path / "b"))
    assert a == b


def test_unwritable_directory(tmp_path):
    """[TRIVIAL]"""
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError):
        write_outputs(_records(), [], str(blocker / "sub"))
