#!/usr/bin/env python3
"""Track r1 = sup_boundary(Laplacian u) / (1 + sup|grad u|^2) across a psi family."""

import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("sweep.json", __doc__))
