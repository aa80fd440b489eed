"""Shared fixtures: a synthetic multi-source dataset with real image files.

The dataset is built once per session: four sources, ~65 images, ~485
annotations. Image files are written at their declared sizes so code that
opens them (trace overlays, the review image endpoint) works against them.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from guicurate.geometry import BBox, ImageDims
from guicurate.records import GroundingRecord, write_records

SOURCE_LAYOUT = {
    # source: (image count, annotations per image, dims, platform)
    "AriaUI-Desktop": (32, 10, (1120, 700), "desktop"),
    "AriaUI-Mobile": (10, 6, (392, 840), "mobile"),
    "AriaUI-Web": (10, 6, (1288, 812), "web"),
    "ShowUI-Desktop": (15, 3, (1568, 896), "desktop"),
}


def _make_records(root: Path) -> dict[str, list[GroundingRecord]]:
    rng = np.random.default_rng(12345)
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    per_source: dict[str, list[GroundingRecord]] = {}
    for source, (n_images, per_image, (width, height), platform) in \
            SOURCE_LAYOUT.items():
        records: list[GroundingRecord] = []
        for img_idx in range(n_images):
            name = f"{source.lower()}-{img_idx:03d}.png"
            path = images_dir / name
            shade = int(rng.integers(40, 216))
            Image.new("RGB", (width, height), (shade, shade, 255 - shade)).save(path)
            for ann_idx in range(per_image):
                bw = int(rng.integers(36, 130))
                bh = int(rng.integers(28, 90))
                x1 = int(rng.integers(0, width - bw))
                y1 = int(rng.integers(0, height - bh))
                elem = "text" if (ann_idx + img_idx) % 2 == 0 else "icon"
                records.append(GroundingRecord(
                    id=f"{source}-{img_idx:03d}-{ann_idx:02d}",
                    image_ref=str(path),
                    dims=ImageDims(width, height),
                    instruction=(
                        f"Activate control {ann_idx} in panel {img_idx} "
                        f"of {source}"
                    ),
                    gt_box=BBox(x1, y1, x1 + bw, y1 + bh),
                    source=source,
                    platform=platform,
                    elem_type=elem,
                ))
        per_source[source] = records
    return per_source


@pytest.fixture(scope="session")
def dataset(tmp_path_factory: pytest.TempPathFactory) -> dict:
    root = tmp_path_factory.mktemp("dataset")
    per_source = _make_records(root)
    paths = {}
    for source, records in per_source.items():
        path = root / f"{source.lower()}.jsonl"
        write_records(path, records)
        paths[source] = path
    return {
        "root": root,
        "paths": paths,
        "records": {source: list(records) for source, records in per_source.items()},
        "all_records": [rec for records in per_source.values() for rec in records],
    }


def write_pipeline_config(dataset: dict, out_dir: Path, *, seed: int = 7,
                          hit_rate: float = 0.5, positive_rate: float = 0.8,
                          garble_rate: float = 0.04, ratio: float = 0.1,
                          downsample: float | None = 0.5,
                          review_token: str | None = None) -> Path:
    """Write a mock-backed config over the session dataset."""
    sources: dict[str, dict] = {}
    for source, path in dataset["paths"].items():
        entry: dict = {"path": str(path)}
        if source.startswith("AriaUI"):
            entry["cluster"] = True
        if source == "AriaUI-Desktop" and downsample is not None:
            entry["downsample"] = downsample
        sources[source] = entry
    doc = {
        "seed": seed,
        "output_dir": str(out_dir),
        "sources": sources,
        "client": {"model": "mock-vlm", "max_inflight": 2},
        "mock": {
            "hit_rate": hit_rate,
            "positive_rate": positive_rate,
            "garble_rate": garble_rate,
            "embed_dim": 24,
        },
        "diversity": {"ratio": ratio, "target_dim": 16},
        "eligibility": {
            "default": 1,
            "thresholds": {
                "AriaUI-Desktop": 5, "AriaUI-Mobile": 5, "AriaUI-Web": 5,
                "ShowUI-Desktop": 1,
            },
        },
    }
    if review_token is not None:
        doc["review"] = {"token": review_token}
    config_path = out_dir.parent / f"config-{out_dir.name}.json"
    config_path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return config_path
