import numpy as np
import pandas as pd
import pytest

from src.data.loader import ArtifactError, load_csv, load_field_binary
from src.data.storage import save_field_binary, save_field_csv, save_node_fields_csv
from src.grid.spatial import build_grid
from src.monitoring.journal import DiagnosticsJournal


def test_binary_snapshot_roundtrip(tmp_path):
    grid = build_grid([[0.0, 1.0], [-1.0, 2.0]], [5, 4])
    u = np.sin(grid.points[:, 0]) * grid.points[:, 1]
    path = save_field_binary(grid, u, tmp_path / "snap" / "u.rbsf")
    loaded_grid, loaded = load_field_binary(path)
    assert loaded_grid.counts == grid.counts
    assert loaded_grid.lower == grid.lower and loaded_grid.upper == grid.upper
    assert np.array_equal(loaded, u)


def test_binary_snapshot_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.rbsf"
    path.write_bytes(b"XXXX" + bytes(32))
    with pytest.raises(ArtifactError, match="bad magic"):
        load_field_binary(path)


def test_binary_snapshot_rejects_truncated_payload(tmp_path):
    grid = build_grid([[0.0, 1.0]], [7])
    path = save_field_binary(grid, np.ones(grid.size), tmp_path / "u.rbsf")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ArtifactError, match="payload"):
        load_field_binary(path)


def test_csv_keeps_full_precision(tmp_path):
    grid = build_grid([[0.0, 1.0]], [9])
    u = np.exp(grid.points[:, 0]) / 3.0
    frame = load_csv(save_field_csv(grid, u, tmp_path / "u.csv"), required=["x1", "value"])
    assert np.array_equal(frame["value"].to_numpy(), u)


def test_node_fields_table(tmp_path):
    grid = build_grid([[0.0, 1.0]], [3])
    levels = [np.zeros((1, 3)), np.arange(6.0).reshape(2, 3)]
    frame = load_csv(save_node_fields_csv(grid, levels, tmp_path / "u.csv", label="u"))
    assert list(frame.columns) == ["level", "node", "x1", "u"]
    assert len(frame) == 9
    assert frame[frame["level"] == 1]["u"].tolist() == list(np.arange(6.0))


def test_load_csv_errors(tmp_path):
    with pytest.raises(ArtifactError, match="no such artifact"):
        load_csv(tmp_path / "missing.csv")
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ArtifactError, match="empty"):
        load_csv(empty)
    header_only = tmp_path / "header.csv"
    header_only.write_text("level,value\n")
    with pytest.raises(ArtifactError, match="empty"):
        load_csv(header_only)
    pd.DataFrame({"a": [1]}).to_csv(tmp_path / "a.csv", index=False)
    with pytest.raises(ArtifactError, match="schema mismatch"):
        load_csv(tmp_path / "a.csv", required=["value"])


def test_journal_appends_rows(tmp_path):
    journal = DiagnosticsJournal(tmp_path / "logs" / "penalization.csv", ["n", "mass"])
    journal.append({"n": 1, "mass": np.float64(0.1)})
    journal.append({"n": 2, "mass": 1.0 / 3.0, "ignored": 5})
    frame = pd.read_csv(journal.path)
    assert frame["n"].tolist() == [1, 2]
    assert frame["mass"].iloc[1] == 1.0 / 3.0
