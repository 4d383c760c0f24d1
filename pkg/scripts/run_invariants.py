"""Run the algebraic invariant suite and print one line per check."""

import sys

from restyle import verify


if __name__ == "__main__":
    results = verify.run_all(verbose=True)
    sys.exit(0 if all(ok for _, ok, _ in results) else 1)
