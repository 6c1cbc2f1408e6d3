#!/usr/bin/env python3
"""Runs the bilevel command line tool from a source checkout."""

import sys

from bilevel.cli import main

if __name__ == '__main__':
    sys.exit(main())
