"""Per-step read latency and stored templates: fixed K slots vs. append-every-gamma.

    python scripts/complexity_bench.py --T 50 200 500 --out runs/bench
"""

import sys

from stremn.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench", *sys.argv[1:]]))
