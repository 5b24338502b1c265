#!/usr/bin/env python3
"""Run the full randomized lemma campaign (growth, refinement, counts,
closed form, structural checks and the weighted eigenvalue inequality)."""

import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("campaign.json", __doc__))
