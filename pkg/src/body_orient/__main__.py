"""
Entry point for `python -m body_orient`
"""
import sys

from body_orient.main import main

if __name__ == "__main__":
    sys.exit(main())
