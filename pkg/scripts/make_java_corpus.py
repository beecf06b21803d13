#!/usr/bin/env python3
"""Regenerate the committed tokenizer stress corpus (tests/data/java_corpus.tar.gz).

The archive is byte-reproducible: fixed member metadata, sorted names,
gzip mtime pinned to zero.
"""

import argparse
import gzip
import io
import sys
import tarfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from revfix.synthetic import make_java_corpus


def write_deterministic_targz(out: Path, members) -> None:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for name, text in sorted(members):
            data = text.encode("utf-8")
            info = tarfile.TarInfo(f"java_corpus/{name}")
            info.size = len(data)
            info.mtime = 0
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            info.mode = 0o644
            tar.addfile(info, io.BytesIO(data))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
            gz.write(buf.getvalue())


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("tests/data/java_corpus.tar.gz"))
    parser.add_argument("--files", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    corpus = make_java_corpus(args.files, args.seed)
    write_deterministic_targz(args.out, corpus)
    total = sum(len(t) for _, t in corpus)
    print(f"wrote {args.out}: {len(corpus)} files, {total} bytes of source")
    return 0


if __name__ == "__main__":
    sys.exit(main())
