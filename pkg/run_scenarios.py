#!/usr/bin/env python3
"""
Parallel Scenario Runner
Runs each bundled pipeline in its own `python -m nfimaging` subprocess and
collects the solver summaries into one spreadsheet.
"""

import json
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from datetime import datetime

import pandas as pd

SCENARIO_DIR = os.path.join("nfimaging", "scenarios")

# Pipelines to run (aircraft_wideband needs a large machine; add it by hand)
PIPELINES = [
    "single_point_pipeline.cfg",
    "two_point_wideband_pipeline.cfg",
    "two_point_narrowband_pipeline.cfg",
    "ofdm_wifi_pipeline.cfg",
]

OUTPUT_ROOT = os.getenv("NFIMG_OUTPUT_DIR", "outputs")
timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
FINAL_OUTPUT = os.path.join(OUTPUT_ROOT, f"runs_{timestamp}.xlsx")


def _now():
    return datetime.now().strftime("%H:%M:%S")


def run_scenario(pipeline, index):
    """Run one pipeline end to end; returns (pipeline, output dir, exit code)."""
    name = pipeline.replace("_pipeline.cfg", "")
    out_dir = os.path.join(OUTPUT_ROOT, name)
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "run.log")
    verb = "full-ofdm" if "ofdm" in pipeline else "full"

    cmd = [
        sys.executable, "-m", "nfimaging", verb,
        "--config", os.path.join(SCENARIO_DIR, pipeline),
        "--out", out_dir,
    ]
    print(f"[{_now()}] Starting scenario {index + 1}: {name}")

    try:
        with open(log_path, "w", encoding="utf-8") as log:
            result = subprocess.run(
                cmd,
                env={**os.environ, "PYTHONPATH": "nfimaging"},
                stdout=log,
                stderr=subprocess.STDOUT,
                timeout=7200,
            )
    except subprocess.TimeoutExpired:
        print(f"[{_now()}] Scenario {index + 1} timed out: {name}")
        return pipeline, out_dir, None

    if result.returncode == 0:
        print(f"[{_now()}] Completed scenario {index + 1}: {name}")
    else:
        print(f"[{_now()}] Scenario {index + 1} exited with {result.returncode}. See log at: {log_path}")
    return pipeline, out_dir, result.returncode


def _summary_rows(pipeline, out_dir, code):
    summary_path = os.path.join(out_dir, "solver", "summary.json")
    if not os.path.exists(summary_path):
        return [{"pipeline": pipeline, "exit_code": code}]
    with open(summary_path, "r", encoding="utf-8") as f:
        summary = json.load(f)
    rows = []
    for solved in summary.get("solved", []):
        rows.append({"pipeline": pipeline, "exit_code": code, **solved})
    for frequency, message in summary.get("failures", {}).items():
        rows.append({"pipeline": pipeline, "exit_code": code, "frequency_hz": float(frequency), "failure": message})
    return rows


def merge_results(results):
    """One row per (pipeline, frequency) with the solver diagnostics."""
    rows = []
    for pipeline, out_dir, code in results:
        rows.extend(_summary_rows(pipeline, out_dir, code))
    if not rows:
        print("No results collected!")
        return

    df = pd.DataFrame(rows)
    if "frequency_hz" not in df.columns:
        df["frequency_hz"] = float("nan")
    df = df.sort_values(["pipeline", "frequency_hz"], na_position="first")
    os.makedirs(OUTPUT_ROOT, exist_ok=True)
    df.to_excel(FINAL_OUTPUT, index=False)
    print(f"Results saved to {FINAL_OUTPUT}")


def main():
    print(f"\n{'=' * 60}")
    print(f"Parallel Scenario Runner - {len(PIPELINES)} pipelines")
    print(f"{'=' * 60}\n")

    start_time = datetime.now()
    results = []
    # solves are memory hungry; two at a time
    with ProcessPoolExecutor(max_workers=2) as executor:
        futures = {executor.submit(run_scenario, pipeline, i): i for i, pipeline in enumerate(PIPELINES)}
        for future in as_completed(futures):
            results.append(future.result())

    elapsed = (datetime.now() - start_time).total_seconds()
    print(f"\nAll scenarios completed in {elapsed:.1f} seconds")
    merge_results(results)
    return 0 if all(code == 0 for _, _, code in results) else 1


if __name__ == "__main__":
    sys.exit(main())
