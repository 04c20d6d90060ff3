# tests/test_run_model.py
import sqlite3

import pytest

from models.run_model import get_runs, initialize_run_db, record_run


@pytest.fixture
def db_file(tmp_path):
    return str(tmp_path / "registry" / "runs.db")


def test_missing_registry_has_no_runs(db_file):
    assert get_runs(db_file=db_file) == []


def test_initialize_is_idempotent(db_file):
    initialize_run_db(db_file)
    initialize_run_db(db_file)
    conn = sqlite3.connect(db_file)
    try:
        tables = conn.execute("SELECT name FROM sqlite_master WHERE type='table'").fetchall()
    finally:
        conn.close()
    assert ("runs",) in tables


def test_record_and_list_runs(db_file):
    first = record_run("fdm", "one_blob", 50, None, 0.1, 40.0, 0, 400, 12.5, db_file=db_file)
    second = record_run("sipf-classical", "two_blob", 100, 20000, 0.1, 40.0, 3, 400, 80.0,
                        out_dir="data/exports/run1", db_file=db_file)
    assert second > first
    runs = get_runs(db_file=db_file)
    assert [r["id"] for r in runs] == [second, first]
    assert runs[0]["particles"] == 20000
    assert runs[0]["out_dir"] == "data/exports/run1"
    assert runs[1]["particles"] is None
    assert runs[1]["seconds"] == 12.5
    assert [r["scenario"] for r in get_runs("fdm", db_file=db_file)] == ["one_blob"]


def test_wide_seeds_are_kept_exactly(db_file):
    seeds = [0, 7, 2 ** 63 - 1, 2 ** 63, 2 ** 64 - 1]
    for seed in seeds:
        record_run("fdm", "one_blob", 50, None, 0.1, 1.0, seed, 10, 1.0, db_file=db_file)
    stored = [r["seed"] for r in reversed(get_runs(db_file=db_file))]
    assert stored == seeds
    assert all(type(s) is int for s in stored)


def test_negative_run_time_is_rejected(db_file):
    with pytest.raises(ValueError):
        record_run("fdm", "one_blob", 50, None, 0.1, 1.0, 0, 10, -1.0, db_file=db_file)
    assert get_runs(db_file=db_file) == []
