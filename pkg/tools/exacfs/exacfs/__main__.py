#!/usr/bin/env python3
"""
EXACFS class-incremental learning engine

Entry point for the exacfs command. This script delegates to the main
implementation in the exacfs.main module.

Install the command with:
  uv tool install ./tools/exacfs
  # or
  ./scripts/install-tool.sh

For development without installation, use:
  uvx --from ./tools/exacfs exacfs gradcheck
  # or
  uv run -m exacfs run --config experiment.json --out runs/exacfs
"""

from exacfs import main

if __name__ == "__main__":
    main()
