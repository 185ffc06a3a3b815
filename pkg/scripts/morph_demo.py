"""Morph two synthetic "faces" and write the inputs and result as PNGs.

The faces are coloured ellipses with landmarks on their outline and a few
inner features, enough to see the warp, the blend and the feathered
composite.

    python3 scripts/morph_demo.py --out-dir morph_demo --warp 0.5 --blend 0.5
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from dgdetect.dataio import ImageBuffer, LandmarkSet, save_image, write_landmarks
from dgdetect.morphgen import MorphParams, generate_doppelganger_pair


def synthetic_face(size: int, cx: float, cy: float, rx: float, ry: float, skin, seed: int):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size, 3))
    img[:] = 40 + 30 * rng.random(3)  # background
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1
    shade = 0.85 + 0.15 * np.cos((xx - cx) / rx * math.pi / 2)
    img[inside] = (np.asarray(skin) * shade[inside, None])
    eyes = [(cx - 0.4 * rx, cy - 0.2 * ry), (cx + 0.4 * rx, cy - 0.2 * ry)]
    for ex, ey in eyes:
        img[(xx - ex) ** 2 + (yy - ey) ** 2 <= (0.12 * rx) ** 2] = (30, 30, 60)
    mouth = (np.abs(yy - (cy + 0.45 * ry)) <= 0.05 * ry) & (np.abs(xx - cx) <= 0.35 * rx)
    img[mouth] = (150, 40, 50)
    ang = np.linspace(0, 2 * math.pi, 16, endpoint=False)
    outline = np.column_stack([cx + 0.95 * rx * np.cos(ang), cy + 0.95 * ry * np.sin(ang)])
    inner = np.array([*eyes, (cx, cy), (cx - 0.35 * rx, cy + 0.45 * ry),
                      (cx + 0.35 * rx, cy + 0.45 * ry)])
    pts = np.vstack([outline, inner])
    return ImageBuffer(np.clip(np.rint(img), 0, 255).astype(np.uint8)), pts


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=Path("morph_demo"))
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--warp", type=float, default=0.5)
    ap.add_argument("--blend", type=float, default=0.5)
    ap.add_argument("--feather", type=int, default=None)
    args = ap.parse_args(argv)

    s = args.size
    target, tp = synthetic_face(s, 0.5 * s, 0.5 * s, 0.30 * s, 0.40 * s, (225, 180, 150), 1)
    source, sp = synthetic_face(s, 0.52 * s, 0.47 * s, 0.36 * s, 0.36 * s, (170, 120, 90), 2)
    res = generate_doppelganger_pair(target, LandmarkSet("target", tp), source,
                                     LandmarkSet("source", sp),
                                     MorphParams(args.warp, args.blend, args.feather),
                                     "target", "source")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_image(args.out_dir / "target.png", target)
    save_image(args.out_dir / "source.png", source)
    save_image(args.out_dir / "morph.png", res.image)
    write_landmarks(args.out_dir / "landmarks.lmk",
                    [LandmarkSet("target", tp), LandmarkSet("source", sp), res.landmarks],
                    len(tp), [f"# {k}={v}" for k, v in res.provenance.items()])
    print(f"wrote target.png, source.png, morph.png and landmarks.lmk to {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
