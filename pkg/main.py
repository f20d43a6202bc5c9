"""Top-level entry point for ``python main.py`` and the ``latro`` console script."""

import sys
from pathlib import Path

_ROOT = Path(__file__).resolve().parent
_SRC_PATH = _ROOT / "src"
if _SRC_PATH.exists():
    src_str = str(_SRC_PATH)
    if src_str not in sys.path:
        sys.path.insert(0, src_str)

from src.main import main as cli_main  # noqa: E402

__all__ = ["main"]


def main() -> int:
    """Run the command-line interface with the process arguments."""
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
