import io
import tarfile
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return REPO_ROOT


@pytest.fixture(scope="session")
def gerrit_fixture_root() -> Path:
    root = REPO_ROOT / "fixtures" / "gerrit"
    if not root.is_dir():
        pytest.skip("bundled gerrit fixtures missing; run scripts/make_gerrit_fixtures.py")
    return root


@pytest.fixture(scope="session")
def java_corpus():
    """The committed tokenizer stress corpus as (name, text) pairs."""
    archive = DATA_DIR / "java_corpus.tar.gz"
    if not archive.is_file():
        pytest.skip("java corpus missing; run scripts/make_java_corpus.py")
    out = []
    with tarfile.open(archive, "r:gz") as tar:
        for member in tar.getmembers():
            if member.isfile():
                data = tar.extractfile(member).read()
                out.append((member.name, data.decode("utf-8")))
    return out
