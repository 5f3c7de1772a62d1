"""Shared fixtures: compiled-kernel warm-up, field builders, sequences."""
from __future__ import annotations

import numpy as np
import pytest

from gravicell.config import PipelineConfig
from gravicell.gravity import GravityKernels, build_kernels, force_field
from gravicell.pipeline import FrameResult, detect_frame, process_frame, track_frames
from gravicell.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def kernels20() -> GravityKernels:
    return build_kernels(20)


@pytest.fixture(scope="session")
def warm_jit(kernels20):
    """Compile every jitted kernel before any timed region runs.

    Timing-sensitive tests must list this fixture so compilation cost
    never lands inside their measured interval.
    """
    from gravicell.basins import drop_of_water_oracle

    small = generate(SynthSpec(frame_count=1, height=96, width=96, blob_count=1))
    cfg = PipelineConfig()
    process_frame(small.frames[0], cfg)
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    img = np.exp(-((xx - 16.0) ** 2 + (yy - 16.0) ** 2) / 18.0)
    drop_of_water_oracle(force_field(img, build_kernels(8)))
    return True


def two_blob_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Two well-separated Gaussian blobs with random centers and widths.

    Separation is at least three times the combined widths so each blob
    owns an unambiguous attraction basin.
    """
    while True:
        c = rng.uniform(14.0, size - 14.0, size=(2, 2))
        s = rng.uniform(2.5, 5.0, size=2)
        a = rng.uniform(0.5, 1.0, size=2)
        if np.hypot(*(c[0] - c[1])) >= 3.0 * (s[0] + s[1]):
            break
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for k in range(2):
        img += a[k] * np.exp(
            -((xx - c[k, 0]) ** 2 + (yy - c[k, 1]) ** 2) / (2.0 * s[k] ** 2)
        )
    return img


@pytest.fixture(scope="session")
def two_blob_field(kernels20):
    """Factory: seeded two-blob attraction field at 64x64."""

    def build(seed: int, size: int = 64):
        img = two_blob_image(np.random.default_rng(seed), size)
        return force_field(img, kernels20)

    return build


@pytest.fixture(scope="session")
def default_cfg() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture(scope="session")
def seq_plain():
    """The reference synthetic sequence (default spec, seed 0)."""
    return generate(SynthSpec())


@pytest.fixture(scope="session")
def seq_mitosis():
    """Same sequence with one division scheduled at mid-sequence."""
    return generate(SynthSpec(mitosis_frame=10, mitosis_parent=1))


def run_in_memory(frames, cfg: PipelineConfig):
    """Per-frame processing plus tracking without touching the filesystem."""
    results: list[FrameResult] = [process_frame(f, cfg) for f in frames]
    graph = track_frames(results, cfg)
    return results, graph


@pytest.fixture(scope="session")
def tracked_plain(seq_plain, default_cfg, warm_jit):
    return run_in_memory(seq_plain.frames, default_cfg)


@pytest.fixture(scope="session")
def tracked_mitosis(seq_mitosis, default_cfg, warm_jit):
    return run_in_memory(seq_mitosis.frames, default_cfg)
