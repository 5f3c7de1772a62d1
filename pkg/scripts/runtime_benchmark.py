"""Single-frame stage timing at production scale.

Builds a dense 1024x1024 synthetic frame, warms the compiled kernels on
a small image so compilation never lands in the timed region, then times
the detection chain stage by stage.  Example:

    python3 scripts/runtime_benchmark.py --size 1024 --blobs 160
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from gravicell.basins import extract_basins, find_critical_points, significant_minima
from gravicell.config import PipelineConfig
from gravicell.gravity import build_kernels, force_field
from gravicell.pipeline import detect_frame
from gravicell.preprocess import kuwahara_anisotropic, log_brighten
from gravicell.synth import SynthSpec, generate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=1024)
    ap.add_argument("--blobs", type=int, default=160)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    cfg = PipelineConfig()

    warm = generate(SynthSpec(frame_count=1, height=96, width=96, blob_count=1))
    detect_frame(warm.frames[0], cfg)

    frame = generate(
        SynthSpec(
            frame_count=1,
            height=args.size,
            width=args.size,
            blob_count=args.blobs,
            seed=args.seed,
        )
    ).frames[0]

    t0 = time.perf_counter()
    smooth = kuwahara_anisotropic(
        log_brighten(frame, cfg.preprocess.log_gain), cfg.kuwahara_params()
    )
    t1 = time.perf_counter()
    force = force_field(smooth, build_kernels(cfg.gravity.radius, cfg.gravity.softening_eps))
    t2 = time.perf_counter()
    points = find_critical_points(force)
    t3 = time.perf_counter()
    extraction = extract_basins(
        force, points, cfg.integrator_config(), stagnation_tol=cfg.basins.stagnation_tol
    )
    t4 = time.perf_counter()
    kept = significant_minima(extraction, cfg.basin_min_area())
    t5 = time.perf_counter()

    kinds = sorted({p.kind for p in points})
    counts = {k: sum(p.kind == k for p in points) for k in kinds}
    print(f"frame {args.size}x{args.size}, {args.blobs} blobs, seed {args.seed}")
    print(f"  preprocess        {t1 - t0:6.2f} s")
    print(f"  force field       {t2 - t1:6.2f} s")
    print(f"  critical points   {t3 - t2:6.2f} s   {counts}")
    print(f"  basin extraction  {t4 - t3:6.2f} s")
    print(f"  minima culling    {t5 - t4:6.2f} s   kept {len(kept)}")
    print(f"  total detection   {t5 - t0:6.2f} s")

    rerun = detect_frame(frame, cfg)
    same = np.array_equal(rerun[2].labels, extraction.labels)
    print(f"  deterministic rerun matches: {same}")


if __name__ == "__main__":
    main()
