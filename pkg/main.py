# main.py
import sys

from ui.cli import run_scenario_cli

if __name__ == "__main__":
    sys.exit(run_scenario_cli(sys.argv[1:]))
