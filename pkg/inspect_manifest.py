import os
import sqlite3
import sys

out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join("outputs", "two_point_wideband")
db_path = os.path.join(out_dir, "manifest.db")

if not os.path.exists(db_path):
    print("Manifest not found at", db_path)
else:
    try:
        conn = sqlite3.connect(db_path)
        cursor = conn.cursor()
        cursor.execute("SELECT path, kind, stage, sha256, size_bytes, frequency_hz FROM artifacts ORDER BY id")
        rows = cursor.fetchall()
        print(f"Found {len(rows)} artifacts:")
        for path, kind, stage, sha, size, frequency in rows:
            print(f"Path: {path}")
            print(f"Kind: {kind} (stage {stage})")
            if frequency is not None:
                print(f"Frequency: {frequency / 1e9:.4f} GHz")
            print(f"Size: {size} bytes, sha256 {sha[:16]}...")
            print("-" * 20)
        conn.close()
    except Exception as e:
        print(f"Error reading manifest: {e}")
