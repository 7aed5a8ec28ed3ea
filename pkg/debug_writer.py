"""
Thread-safe JSONL logging of solver runs.

Provides a DebugWriter class that writes one JSON object per line: level snapshots,
run events and errors. Study rows solved on worker threads share one writer.
"""

import json
import os
import sys
import threading
import time

from config import AppConfig


class DebugWriter:
    """Thread-safe JSONL solve log."""

    def __init__(self, enabled=True, log_dir=None):
        """
        Initialize the debug writer.

        Args:
            enabled: If True, creates the log file. If False, all methods are no-ops.
            log_dir: Directory for the log file. Defaults to AppConfig.LOG_DIR.
        """
        self.enabled = enabled
        self._lock = threading.Lock()
        self._file = None
        self.path = None

        if self.enabled:
            log_dir = log_dir or AppConfig.LOG_DIR
            os.makedirs(log_dir, exist_ok=True)
            timestamp = int(time.time())
            pid = os.getpid()
            self.path = os.path.join(log_dir, f"solve_{timestamp}_{pid}.jsonl")
            self._file = open(self.path, "a", buffering=1)

    def _write(self, entry, what):
        with self._lock:
            if self._file is None:
                return
            try:
                self._file.write(json.dumps(entry) + "\n")
            except (IOError, TypeError, ValueError) as e:
                print(f"Error writing {what} log: {e}", file=sys.stderr)

    def log_cycle(self, data):
        """
        Log one solved time level.

        Args:
            data: Dictionary from create_level_snapshot.
        """
        if not self.enabled:
            return
        self._write({"type": "level", "data": data}, "level")

    def log_event(self, event_type, data):
        """
        Log an event entry.

        Args:
            event_type: run_start, run_end, armijo_failure, iteration_limit or study_row
            data: Dictionary with event details
        """
        if not self.enabled:
            return
        self._write(
            {"type": event_type, "timestamp": time.time(), "data": data}, "event"
        )

    def log_error(self, error):
        """Log an error entry."""
        if not self.enabled:
            return
        self._write(
            {
                "type": "error",
                "error": str(error) if not isinstance(error, str) else error,
                "timestamp": time.time(),
            },
            "error",
        )

    def close(self):
        """Close the log file and flush any buffered data."""
        if not self.enabled:
            return

        with self._lock:
            if self._file:
                try:
                    self._file.flush()
                    self._file.close()
                except IOError as e:
                    print(f"Error closing log file: {e}", file=sys.stderr)
                finally:
                    self._file = None


def create_level_snapshot(
    level,
    t,
    iterations,
    initial_stationarity,
    final_stationarity,
    final_cost,
    elongation,
    feasibility,
    wall_ms,
):
    """
    Create a snapshot of one solved time level.

    Args:
        level (int): Index k of the level that produced r_{k+1}
        t (float): Time t_{k+1}
        iterations (int): Projected gradient steps taken
        initial_stationarity (float): Stationarity measure at r_k
        final_stationarity (float): Stationarity measure at r_{k+1}
        final_cost (float): Cost of r_{k+1}
        elongation (float): Length change of r_{k+1}
        feasibility (float): Largest constraint residual of r_{k+1}
        wall_ms (float): Wall-clock time of the level

    Returns:
        dict: JSON-serializable level snapshot
    """
    return {
        "level": int(level),
        "t": float(t),
        "timestamp": int(time.time()),
        "iterations": int(iterations),
        "initial_stationarity": float(initial_stationarity),
        "final_stationarity": float(final_stationarity),
        "final_cost": float(final_cost),
        "elongation": float(elongation),
        "feasibility": float(feasibility),
        "wall_ms": float(wall_ms),
    }
