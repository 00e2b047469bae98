# app.py
import sys

from mbmp_sim.cli import main

if __name__ == "__main__":
    sys.exit(main())
