# models/run_model.py
"""
SQLite registry of finished runs. Seeds are stored as decimal text because
they span the full unsigned 64-bit range.
"""
import sqlite3
import os
from datetime import datetime

RUNS_DB = "data/runs.db"

COLUMNS = ["id", "started_at", "method", "scenario", "n", "particles",
           "dt", "t_end", "seed", "steps", "seconds", "out_dir"]


def ensure_db_dir(db_file):
    folder = os.path.dirname(db_file)
    if folder and not os.path.exists(folder):
        os.makedirs(folder)


def initialize_run_db(db_file=RUNS_DB):
    """
    Idempotently create the run registry table.
    """
    ensure_db_dir(db_file)
    conn = sqlite3.connect(db_file)
    c = conn.cursor()
    c.execute("""
    CREATE TABLE IF NOT EXISTS runs (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        started_at TEXT NOT NULL,         -- ISO datetime
        method TEXT NOT NULL,             -- fdm | sipf-classical | sipf-neural
        scenario TEXT NOT NULL,
        n INTEGER NOT NULL,
        particles INTEGER,                -- NULL for grid solvers
        dt REAL NOT NULL,
        t_end REAL NOT NULL,
        seed TEXT NOT NULL,               -- decimal, unsigned 64-bit
        steps INTEGER,
        seconds REAL,
        out_dir TEXT
    )
    """)
    conn.commit()
    conn.close()


def record_run(method, scenario, n, particles, dt, t_end, seed, steps, seconds,
               out_dir=None, db_file=RUNS_DB):
    """
    Append one finished run and return its id.
    """
    if seconds is not None and seconds < 0:
        raise ValueError(f"Run time must be non-negative, got {seconds}")
    initialize_run_db(db_file)
    conn = sqlite3.connect(db_file)
    c = conn.cursor()
    try:
        c.execute("""
            INSERT INTO runs (started_at, method, scenario, n, particles, dt, t_end,
                              seed, steps, seconds, out_dir)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        """, (datetime.now().isoformat(timespec="seconds"), method, scenario, int(n),
              None if particles is None else int(particles), float(dt), float(t_end),
              str(int(seed)),
              None if steps is None else int(steps),
              None if seconds is None else float(seconds), out_dir))
        run_id = c.lastrowid
        conn.commit()
    except Exception:
        conn.rollback()
        raise
    finally:
        conn.close()
    return run_id


def get_runs(method=None, db_file=RUNS_DB):
    """
    All registered runs as dicts, newest first, optionally filtered by method.
    """
    if not os.path.exists(db_file):
        return []
    conn = sqlite3.connect(db_file)
    c = conn.cursor()
    try:
        if method:
            c.execute("SELECT * FROM runs WHERE method = ? ORDER BY id DESC", (method,))
        else:
            c.execute("SELECT * FROM runs ORDER BY id DESC")
        rows = c.fetchall()
    finally:
        conn.close()
    runs = []
    for row in rows:
        run = dict(zip(COLUMNS, row))
        run["seed"] = int(run["seed"])
        runs.append(run)
    return runs
