# tcc/main.py
"""
Main entry point.
--------------------------------
Run the command-line interface (``python -m tcc.main run catcc ...``).
"""
import sys

from tcc.cli import main

if __name__ == "__main__":
    sys.exit(main())
