import hashlib
import json
import logging
import sqlite3
from pathlib import Path

from nfimaging import settings

logger = logging.getLogger(__name__)


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class ArtifactManifest:
    """
    Every file a run produces, with its content hash. Backed by a small
    SQLite table next to the outputs; exported as manifest.json.
    """

    def __init__(self, output_dir, db_name="manifest.db"):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.db_path = self.output_dir / db_name
        self._init_db()

    def _connect(self):
        # timeout lets parallel scenario runs wait for locks to clear
        return sqlite3.connect(self.db_path, timeout=30.0)

    def _init_db(self):
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS artifacts (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                path TEXT NOT NULL UNIQUE,
                kind TEXT NOT NULL,
                stage TEXT NOT NULL,
                sha256 TEXT NOT NULL,
                size_bytes INTEGER NOT NULL,
                frequency_hz REAL,
                last_updated TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        ''')
        conn.commit()
        conn.close()

    def _relative(self, path):
        path = Path(path).resolve()
        try:
            return path.relative_to(self.output_dir.resolve()).as_posix()
        except ValueError:
            return path.as_posix()

    def record(self, path, kind, stage, frequency=None):
        """Hash a written file and upsert it."""
        sha = file_sha256(path)
        size = Path(path).stat().st_size
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute('''
            INSERT INTO artifacts (path, kind, stage, sha256, size_bytes, frequency_hz, last_updated)
            VALUES (?, ?, ?, ?, ?, ?, CURRENT_TIMESTAMP)
            ON CONFLICT(path) DO UPDATE SET
                kind = excluded.kind,
                stage = excluded.stage,
                sha256 = excluded.sha256,
                size_bytes = excluded.size_bytes,
                frequency_hz = excluded.frequency_hz,
                last_updated = CURRENT_TIMESTAMP
        ''', (self._relative(path), kind, stage, sha, size, frequency))
        conn.commit()
        conn.close()
        logger.debug(f"Recorded {kind} {path} ({size} bytes)")
        return sha

    def entries(self, kind=None):
        conn = self._connect()
        cursor = conn.cursor()
        query = "SELECT path, kind, stage, sha256, size_bytes, frequency_hz FROM artifacts"
        if kind is None:
            cursor.execute(query + " ORDER BY id")
        else:
            cursor.execute(query + " WHERE kind = ? ORDER BY id", (kind,))
        rows = cursor.fetchall()
        conn.close()
        keys = ("path", "kind", "stage", "sha256", "size_bytes", "frequency_hz")
        return [dict(zip(keys, row)) for row in rows]

    def paths(self, kind):
        return [self.output_dir / entry["path"] for entry in self.entries(kind)]

    def counts(self):
        out = {}
        for entry in self.entries():
            out[entry["kind"]] = out.get(entry["kind"], 0) + 1
        return out

    def verify(self):
        """Paths whose file is missing or whose hash changed."""
        bad = []
        for entry in self.entries():
            path = self.output_dir / entry["path"]
            if not path.is_file() or file_sha256(path) != entry["sha256"]:
                bad.append(entry["path"])
        return bad

    def export_json(self, config_echo=None, status=0, name="manifest.json"):
        path = self.output_dir / name
        payload = {
            "status": status,
            "counts": self.counts(),
            "artifacts": self.entries(),
            "config": config_echo or {},
        }
        with open(path, "w", encoding=settings.EXPORT_ENCODING) as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        return path
