"""Produce embeddings and landmarks by running an external extractor process.

The command template names the input image as ``{input}`` and the file the
extractor must write as ``{output}``; the output uses the ``emb-v1`` (or
``lmk-v1``) format.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .dataio import Embedding, LandmarkSet, parse_embeddings, parse_landmarks
from .errors import DataFormatError, ExtractionError, ExtractionTimeout

STDERR_LIMIT = 8 * 1024


@dataclass(frozen=True)
class ExtractorSpec:
    command: str
    expected_dim: int = 512
    timeout: float = 60.0

    def __post_init__(self):
        for ph in ("{input}", "{output}"):
            if self.command.count(ph) != 1:
                raise ValueError(f"command template must contain {ph} exactly once")
        if self.expected_dim <= 0:
            raise ValueError("expected_dim must be positive")

    def argv(self, image: Path, output: Path) -> list[str]:
        return [tok.replace("{input}", str(image)).replace("{output}", str(output))
                for tok in shlex.split(self.command)]


def _truncate(data: bytes) -> str:
    text = data[:STDERR_LIMIT].decode("utf-8", errors="replace")
    if len(data) > STDERR_LIMIT:
        text += f"\n[... {len(data) - STDERR_LIMIT} more bytes truncated]"
    return text


def _run(spec: ExtractorSpec, image) -> str:
    image = Path(image)
    if not image.exists():
        raise ExtractionError(f"image {image} does not exist")
    with tempfile.TemporaryDirectory(prefix="dgdetect-") as tmp:
        out = Path(tmp) / "out.txt"
        try:
            proc = subprocess.run(spec.argv(image, out), capture_output=True,
                                  timeout=spec.timeout, check=False)
        except subprocess.TimeoutExpired as exc:
            raise ExtractionTimeout(f"extractor timed out after {spec.timeout}s on {image}",
                                    _truncate(exc.stderr or b"")) from None
        except OSError as exc:
            raise ExtractionError(f"cannot start extractor: {exc}") from None
        if proc.returncode != 0:
            raise ExtractionError(f"extractor exited with status {proc.returncode} on {image}",
                                  _truncate(proc.stderr))
        if not out.exists():
            raise DataFormatError("extractor wrote no output file", image)
        return out.read_text(encoding="utf-8")


def extract_via_process(spec: ExtractorSpec, image) -> Embedding:
    table = parse_embeddings(_run(spec, image), spec.expected_dim, path=f"<extractor:{image}>")
    if len(table) != 1:
        raise DataFormatError(f"extractor produced {len(table)} records, expected 1",
                              f"<extractor:{image}>")
    return table[0]


def extract_landmarks_via_process(spec: ExtractorSpec, image, count: int = 68) -> LandmarkSet:
    table = parse_landmarks(_run(spec, image), count, path=f"<extractor:{image}>")
    if len(table) != 1:
        raise DataFormatError(f"extractor produced {len(table)} records, expected 1",
                              f"<extractor:{image}>")
    return table[0]


def extract_many(spec: ExtractorSpec, images, max_workers: int = 4) -> list[Embedding]:
    """Extract in parallel; output order follows ``images``."""
    images = list(images)
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        return list(pool.map(lambda im: extract_via_process(spec, im), images))
