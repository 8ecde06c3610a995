#!/usr/bin/env python3
"""Thin wrapper around the benchmark CLI (same as `gmgstokes-bench`)."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from gmgstokes.bench import main

if __name__ == "__main__":
    raise SystemExit(main())
