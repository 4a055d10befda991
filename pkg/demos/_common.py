import sys
import tempfile
from pathlib import Path


def output_dir(name):
    """First command-line argument, else a fresh temporary directory."""
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix=f"{name}_"))
    root.mkdir(parents=True, exist_ok=True)
    print(f"writing to {root}")
    return root
