#!/usr/bin/env python3
"""Solve the manufactured instance at 17^4 and certify eight boundary points.

Pass ``--config configs/certify_pn1.json`` for the log P_{n-1} instance on a
conformal metric.
"""

import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("certify.json", __doc__))
