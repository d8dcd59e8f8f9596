"""Entry point: `python main.py <command> ...` (same as robocell.py)."""

from robocell import run

if __name__ == "__main__":
    raise SystemExit(run())
