"""Regenerate the shared stroke test vectors from the Python engine.

Run from the repository root:  python3 frontend/tools/make_fixtures.py
The UI's serializer and rasterizer must reproduce these bytes and cells
exactly; tests/test_fixture_sync.py keeps the Python side honest too.
"""
import json
from pathlib import Path

from ivos.core import ScribbleSet, ScribbleStroke, rasterize_scribbles, scribbles_to_json

CASES = [
    {
        "name": "two_point_horizontal",
        "frame": 2,
        "height": 12,
        "width": 12,
        "strokes": [
            {"object": 1, "polarity": "pos", "radius": 0, "points": [[2, 4], [6, 4]]},
        ],
    },
    {
        "name": "diagonal_with_radius",
        "frame": 0,
        "height": 16,
        "width": 16,
        "strokes": [
            {"object": 1, "polarity": "pos", "radius": 1, "points": [[1, 1], [9, 6]]},
            {"object": 2, "polarity": "neg", "radius": 0, "points": [[14, 2], [10, 9], [12, 12]]},
        ],
    },
    {
        "name": "background_and_multiobject",
        "frame": 5,
        "height": 20,
        "width": 24,
        "strokes": [
            {"object": 0, "polarity": "pos", "radius": 0, "points": [[0, 0], [23, 0]]},
            {"object": 1, "polarity": "pos", "radius": 2, "points": [[4, 10], [4, 10]]},
            {"object": 2, "polarity": "pos", "radius": 0, "points": [[18, 14], [12, 18], [18, 18]]},
            {"object": 1, "polarity": "neg", "radius": 1, "points": [[20, 4], [22, 8]]},
        ],
    },
]


def build():
    out = {"cases": []}
    for case in CASES:
        strokes = tuple(
            ScribbleStroke(s["object"], s["polarity"],
                           tuple((x, y) for x, y in s["points"]), s["radius"])
            for s in case["strokes"]
        )
        scribbles = ScribbleSet(case["frame"], strokes)
        grids = rasterize_scribbles(scribbles, case["height"], case["width"])
        rasters = []
        for obj in sorted(grids):
            for polarity in ("pos", "neg"):
                grid = grids[obj][polarity]
                if not grid.any():
                    continue
                cells = [[int(y), int(x)] for y, x in zip(*grid.nonzero())]
                rasters.append({
                    "object": obj,
                    "polarity": polarity,
                    "cells": cells,
                })
        out["cases"].append({
            "name": case["name"],
            "frame": case["frame"],
            "height": case["height"],
            "width": case["width"],
            "strokes": case["strokes"],
            "json": scribbles_to_json(scribbles),
            "rasters": rasters,
        })
    target = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "stroke_roundtrip.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(out, indent=2))
    print(f"wrote {target}")


if __name__ == "__main__":
    build()
