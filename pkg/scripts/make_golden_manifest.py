#!/usr/bin/env python3
"""Run the full pipeline on the bundled fixtures and record artifact hashes.

The recorded manifest (tests/data/golden_manifest.json) is what the
end-to-end acceptance test reproduces bit-for-bit.
"""

import argparse
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from revfix.pipeline import load_config, run_all
from revfix.storage import sha256_file, write_json


def hash_workdir(workdir: Path) -> dict:
    return {
        str(p.relative_to(workdir)).replace("\\", "/"): sha256_file(p)
        for p in sorted(workdir.rglob("*"))
        if p.is_file()
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--fixtures", type=Path, default=Path("fixtures/gerrit"))
    parser.add_argument("--config", type=Path, default=Path("tests/data/golden_config.json"))
    parser.add_argument("--out", type=Path, default=Path("tests/data/golden_manifest.json"))
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        cfg = load_config(
            args.config,
            {"workdir": str(Path(tmp) / "artifacts"), "fixtures": str(args.fixtures)},
        )
        run_all(cfg)
        manifest = {
            "config_fingerprint": cfg.fingerprint(),
            "artifacts": hash_workdir(cfg.work),
        }
    write_json(args.out, manifest)
    print(f"wrote {args.out}: {len(manifest['artifacts'])} artifacts")
    return 0


if __name__ == "__main__":
    sys.exit(main())
