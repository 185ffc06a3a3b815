import sys
import textwrap

import numpy as np
import pytest

from dgdetect.embed_adapter import (STDERR_LIMIT, ExtractorSpec, extract_landmarks_via_process,
                                    extract_many, extract_via_process)
from dgdetect.errors import DataFormatError, ExtractionError, ExtractionTimeout


@pytest.fixture
def image(tmp_path):
    p = tmp_path / "face.png"
    p.write_bytes(b"not really a png")
    return p


def stub(tmp_path, body):
    script = tmp_path / "stub.py"
    script.write_text("import sys, time\ninp, out = sys.argv[1], sys.argv[2]\n"
                      + textwrap.dedent(body))
    return f"{sys.executable} {script} {{input}} {{output}}"


def test_zero_vector(tmp_path, image):
    cmd = stub(tmp_path, """
        open(out, "w").write("emb-v1 dim=4\\nimg subj 0 0 0 0\\n")
    """)
    e = extract_via_process(ExtractorSpec(cmd, expected_dim=4), image)
    assert e.values.tolist() == [0, 0, 0, 0]


def test_nonzero_exit_carries_stderr(tmp_path, image):
    cmd = stub(tmp_path, """
        sys.stderr.write("model weights missing")
        sys.exit(1)
    """)
    with pytest.raises(ExtractionError, match="status 1") as exc:
        extract_via_process(ExtractorSpec(cmd, 4), image)
    assert exc.value.stderr == "model weights missing"


def test_stderr_is_truncated(tmp_path, image):
    cmd = stub(tmp_path, """
        sys.stderr.write("x" * 100000)
        sys.exit(2)
    """)
    with pytest.raises(ExtractionError) as exc:
        extract_via_process(ExtractorSpec(cmd, 4), image)
    assert exc.value.stderr.startswith("x" * STDERR_LIMIT)
    assert len(exc.value.stderr) < STDERR_LIMIT + 100


def test_dimension_mismatch(tmp_path, image):
    cmd = stub(tmp_path, """
        open(out, "w").write("emb-v1 dim=511\\nimg subj " + " ".join(["0.1"] * 511) + "\\n")
    """)
    with pytest.raises(DataFormatError, match="dimension mismatch"):
        extract_via_process(ExtractorSpec(cmd, 512), image)


def test_timeout(tmp_path, image):
    cmd = stub(tmp_path, "time.sleep(10)\n")
    with pytest.raises(ExtractionTimeout):
        extract_via_process(ExtractorSpec(cmd, 4, timeout=0.5), image)


def test_missing_output_and_multiple_records(tmp_path, image):
    with pytest.raises(DataFormatError, match="no output"):
        extract_via_process(ExtractorSpec(stub(tmp_path, "pass\n"), 4), image)
    cmd = stub(tmp_path, """
        open(out, "w").write("emb-v1 dim=1\\na s 1\\nb s 2\\n")
    """)
    with pytest.raises(DataFormatError, match="expected 1"):
        extract_via_process(ExtractorSpec(cmd, 1), image)


def test_landmarks(tmp_path, image):
    cmd = stub(tmp_path, """
        open(out, "w").write("lmk-v1 n=2\\nimg 1.5 2 3 4.25\\n")
    """)
    s = extract_landmarks_via_process(ExtractorSpec(cmd), image, count=2)
    assert s.points.tolist() == [[1.5, 2.0], [3.0, 4.25]]


def test_many_preserves_order(tmp_path):
    cmd = stub(tmp_path, """
        import os
        n = len(os.path.basename(inp))
        open(out, "w").write(f"emb-v1 dim=1\\n{os.path.basename(inp)} s {n}\\n")
    """)
    images = []
    for name in ("a.png", "bbbb.png", "cc.png"):
        (tmp_path / name).write_bytes(b"")
        images.append(tmp_path / name)
    out = extract_many(ExtractorSpec(cmd, 1), images, max_workers=3)
    assert [e.image_id for e in out] == ["a.png", "bbbb.png", "cc.png"]
    assert np.array_equal([e.values[0] for e in out], [5, 8, 6])


def test_template_validation(image):
    with pytest.raises(ValueError):
        ExtractorSpec("extract {input}")
    with pytest.raises(ExtractionError, match="does not exist"):
        extract_via_process(ExtractorSpec("true {input} {output}"), image.with_name("nope.png"))
