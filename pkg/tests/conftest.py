from __future__ import annotations

import io
import sys
import zipfile
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mtp2skill.aml import AmlDocument, open_mtp  # noqa: E402
from mtp2skill.mapping import ConversionResult, map_document  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
MIXER_AML = FIXTURES / "mixer.aml"
FILLER_AML = FIXTURES / "filler.aml"
MIXER_TTL = FIXTURES / "mixer.ttl"
MIXER_BASE = "http://example.org/mtp/mixer"
FILLER_BASE = "http://example.org/mtp/filler"
MIXER = MIXER_BASE + "#Mixer"
CONTINUOUS = MIXER_BASE + "#Mixer_Mixing_Continuous"
BATCH = MIXER_BASE + "#Mixer_Mixing_Batch"


def zipped(aml: bytes, name: str = "manifest.aml", extra: dict[str, bytes] | None = None) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(name, aml)
        for other, data in (extra or {}).items():
            zf.writestr(other, data)
    return buf.getvalue()


@pytest.fixture(scope="session")
def mixer_bytes() -> bytes:
    return MIXER_AML.read_bytes()


@pytest.fixture(scope="session")
def mixer_doc(mixer_bytes: bytes) -> AmlDocument:
    return open_mtp(mixer_bytes, source_name="mixer.aml")


@pytest.fixture(scope="session")
def filler_doc() -> AmlDocument:
    return open_mtp(FILLER_AML.read_bytes(), source_name="filler.aml")


@pytest.fixture(scope="session")
def mixer_result(mixer_doc: AmlDocument) -> ConversionResult:
    return map_document(mixer_doc, MIXER_BASE)


@pytest.fixture(scope="session")
def filler_result(filler_doc: AmlDocument) -> ConversionResult:
    return map_document(filler_doc, FILLER_BASE)
