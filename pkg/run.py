#!/usr/bin/env python
"""Run the rainsar command line from a source checkout."""
import sys

from rainsar.main import main

if __name__ == "__main__":
    sys.exit(main())
