#!/usr/bin/env python3
"""Regenerate the bundled review-server fixture tree (fixtures/gerrit/).

Deterministic in the seed; rerunning produces byte-identical fixtures.
"""

import argparse
import shutil
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from revfix.synthetic import make_gerrit_fixture_tree


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("fixtures/gerrit"))
    parser.add_argument("--projects", type=int, default=10)
    parser.add_argument("--changes-per-project", type=int, default=22)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()
    if args.out.exists():
        shutil.rmtree(args.out)
    stats = make_gerrit_fixture_tree(
        args.out, args.projects, args.changes_per_project, args.seed
    )
    print(f"wrote {args.out}: {stats}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
