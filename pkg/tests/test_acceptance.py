"""Acceptance gate: one test per top-level guarantee, at stated tolerance.

Run `pytest tests/test_acceptance.py -v` for one pass/fail line per
criterion. Two checks that need real benchmark annotation files skip with a
reason unless GUICURATE_SCREENSPOT_FILE / GUICURATE_OSWORLDG_FILE point at
them.
"""

from __future__ import annotations

import json
import os
import random
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from guicurate.diversity import (
    EmbeddingMatrix,
    fit_pca_project,
    nearest_to_centroids,
    run_kmeans,
    select_diverse,
)
from guicurate.geometry import BBox, ImageDims, center_hit, smart_resize
from guicurate.jsonl import canonical_dumps
from guicurate.metrics import macro_average
from guicurate.pipeline import load_config, run_pipeline
from guicurate.ranker import (
    EligibilityRule,
    build_training_triplets,
    expand_benchmark_binary,
    negative_fraction,
)
from guicurate.records import GroundingRecord, group_by_image, load_records, write_records
from guicurate.rewards import RewardConfig, reward_breakdown


def _report(line: str) -> None:
    print(f"\n  {line}")


class TestCenterHitOracle:
    def test_matches_brute_force_on_10k_pairs(self):
        rng = np.random.default_rng(20240817)
        start = time.perf_counter()
        for _ in range(10_000):
            gx1, gy1 = rng.uniform(0, 500, 2)
            gt = BBox(gx1, gy1, gx1 + rng.uniform(1, 400), gy1 + rng.uniform(1, 400))
            px1, py1 = rng.uniform(0, 900, 2)
            pred = BBox(px1, py1, px1 + rng.uniform(1, 400),
                        py1 + rng.uniform(1, 400))
            # oracle: spell out the center-containment arithmetic
            cx = (pred.x1 + pred.x2) / 2.0
            cy = (pred.y1 + pred.y2) / 2.0
            expected = (gt.x1 <= cx <= gt.x2) and (gt.y1 <= cy <= gt.y2)
            assert center_hit(pred, gt) == expected
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0, f"10k hit tests took {elapsed:.2f}s"
        _report(f"center-hit oracle: 10,000/10,000 exact in {elapsed:.3f}s")


class TestMacroRecomputation:
    def test_published_macro_rows(self):
        first = macro_average([97.4, 78.2, 93.8, 65.0, 89.1, 69.9])
        second = macro_average([99.2, 84.3, 95.0, 69.0, 91.4, 71.7])
        assert abs(first - 82.2) <= 0.05, f"macro {first:.4f} != 82.2"
        assert abs(second - 85.1) <= 0.05, f"macro {second:.4f} != 85.1"
        _report(f"macro rows: {first:.4f} vs 82.2, {second:.4f} vs 85.1")


def _benchmark_group(image: str, size: int, source: str = "other",
                     dims: ImageDims = ImageDims(1000, 1000)):
    records = []
    for idx in range(size):
        records.append(GroundingRecord(
            id=f"{image}-{idx:03d}", image_ref=f"{image}.png", dims=dims,
            instruction=f"target {idx} on {image}",
            gt_box=BBox(10 * idx, 20, 10 * idx + 8, 40),
            source=source, platform="web",
        ))
    return records


class TestBenchmarkBinaryCombinatorics:
    def test_exact_counts_for_random_multisets(self):
        rng = random.Random(99)
        for trial in range(25):
            sizes = [rng.randint(1, 9) for _ in range(rng.randint(1, 12))]
            records = []
            for g, size in enumerate(sizes):
                records.extend(_benchmark_group(f"t{trial}-g{g}", size))
            triplets, duplicates = expand_benchmark_binary(
                group_by_image(records))
            expected = sum(n + n * (n - 1) for n in sizes)
            assert duplicates == 0
            assert len(triplets) == expected
            fraction = negative_fraction(triplets)
            want = sum(n * (n - 1) for n in sizes) / sum(n * n for n in sizes)
            assert fraction == pytest.approx(want, abs=1e-12)
        _report("benchmark expansion: n + n(n-1) exact over 25 random multisets")

    @pytest.mark.parametrize("env_var,target", [
        ("GUICURATE_SCREENSPOT_FILE", 0.557),
        ("GUICURATE_OSWORLDG_FILE", 0.715),
    ])
    def test_real_file_negative_fraction(self, env_var, target):
        path = os.environ.get(env_var)
        if not path:
            pytest.skip(f"set {env_var} to a real annotation JSONL to run this")
        triplets, _ = expand_benchmark_binary(group_by_image(load_records(path)))
        fraction = negative_fraction(triplets)
        assert abs(fraction - target) <= 0.005, (
            f"negative fraction {fraction:.4f} vs {target:.3f}"
        )
        _report(f"{env_var}: negative fraction {fraction:.4f}")


class TestRankerSamplerStatistics:
    DIMS = ImageDims(1200, 800)

    def _group(self, gi: int, size: int, source: str = "AriaUI-Desktop"):
        records = []
        for ri in range(size):
            records.append(GroundingRecord(
                id=f"g{gi:04d}-r{ri}", image_ref=f"grp-{gi}.png",
                dims=self.DIMS,
                instruction=f"press widget {ri} of panel {gi}",
                gt_box=BBox(30 * ri + 5, 50, 30 * ri + 25, 90),
                source=source, platform="desktop",
            ))
        return records

    def test_positive_fraction_and_negative_integrity(self):
        records = []
        for gi in range(2000):
            records.extend(self._group(gi, 5))
        assert len(records) == 10_000
        outcomes = {rec.id: "easy" for rec in records}
        triplets = build_training_triplets(records, outcomes, seed=424242)
        assert len(triplets) == 10_000
        positives = sum(1 for t in triplets if t.label == "positive")
        fraction = positives / len(triplets)
        assert abs(fraction - 0.5) <= 0.02, f"positive fraction {fraction:.4f}"
        originals = {rec.id: rec.gt_box for rec in records}
        group_boxes: dict[str, set[tuple]] = {}
        for rec in records:
            group_boxes.setdefault(rec.image_ref, set()).add(
                tuple(rec.gt_box.as_list()))
        swapped_onto_own = 0
        for t in triplets:
            if t.label == "negative":
                assert tuple(t.box.as_list()) in group_boxes[t.image_ref]
                if t.box == originals[t.id]:
                    swapped_onto_own += 1
        assert swapped_onto_own == 0
        _report(f"sampler: positive fraction {fraction:.4f} over 10,000 draws, "
                f"0 self-negatives")

    def test_eligibility_thresholds_exact(self):
        rule = EligibilityRule.standard()
        below = self._group(0, 4)                      # AriaUI needs 5
        at = self._group(1, 5)
        single = self._group(2, 1, source="ShowUI-Desktop")  # needs 1
        records = below + at + single
        outcomes = {rec.id: "easy" for rec in records}
        triplets = build_training_triplets(records, outcomes, rule, seed=7)
        produced = {t.id for t in triplets}
        assert produced.isdisjoint({rec.id for rec in below})
        assert {rec.id for rec in at} <= produced
        assert {rec.id for rec in single} <= produced
        singleton = next(t for t in triplets if t.id == single[0].id)
        assert singleton.label == "positive"
        _report("eligibility: size-4 group dropped, size-5 kept, "
                "singleton kept positive (thresholds 5/1)")


class TestDiversityStage:
    def _records_with_embeddings(self, n: int, d: int, seed: int):
        rng = np.random.default_rng(seed)
        dims = ImageDims(800, 600)
        records = [
            GroundingRecord(
                id=f"d{idx:05d}", image_ref=f"d{idx:05d}.png", dims=dims,
                instruction=f"pick item {idx}",
                gt_box=BBox(5, 5, 50, 40), source="other", platform="web",
            )
            for idx in range(n)
        ]
        matrix = EmbeddingMatrix(
            ids=[rec.id for rec in records],
            rows=rng.standard_normal((n, d)),
        )
        return records, matrix

    def test_keep_counts_are_exact_ceil(self):
        for n in (37, 40, 100):
            records, matrix = self._records_with_embeddings(n, 12, seed=n)
            selected = select_diverse(records, matrix, ratio=0.1, seed=3)
            assert len(selected) == -(-n // 10), f"n={n}"
        _report("diversity: ceil(0.1 n) exact for n in {37, 40, 100}")

    def test_nearest_to_centroid_by_exhaustive_scan(self):
        rng = np.random.default_rng(5151)
        points = rng.standard_normal((600, 8))
        ids = [f"p{idx:04d}" for idx in range(600)]
        clustering = run_kmeans(points, 60, seed=11, ids=ids)
        chosen = nearest_to_centroids(clustering, ids, points)
        assert len(chosen) == 60
        by_cluster: dict[int, list[int]] = {}
        for row, rec_id in enumerate(ids):
            by_cluster.setdefault(clustering.assignment[rec_id], []).append(row)
        for cluster, rows in sorted(by_cluster.items()):
            centroid = clustering.centroids[cluster]
            dists = {row: float(np.sum((points[row] - centroid) ** 2))
                     for row in rows}
            dmin = min(dists.values())
            chosen_row = ids.index(chosen[cluster])
            assert chosen_row in dists, "selection left its own cluster"
            # exact equidistance happens (a two-member cluster straddles its
            # centroid), so compare against the minimum with float slack
            assert dists[chosen_row] <= dmin + dmin * 1e-9 + 1e-12
        _report("diversity: every kept record attains its cluster's minimum "
                "centroid distance (exhaustive scan, n=600)")

    def test_pca_orthonormal_and_runs_byte_identical(self):
        records, matrix = self._records_with_embeddings(200, 64, seed=8)
        projection, _ = fit_pca_project(matrix, target_dim=16)
        gram = projection.components @ projection.components.T
        assert np.max(np.abs(gram - np.eye(16))) < 1e-8
        first = select_diverse(records, matrix, ratio=0.1, seed=21)
        second = select_diverse(records, matrix, ratio=0.1, seed=21)
        blob_a = canonical_dumps([rec.to_row() for rec in first]).encode()
        blob_b = canonical_dumps([rec.to_row() for rec in second]).encode()
        assert blob_a == blob_b
        _report("diversity: PCA gram max deviation < 1e-8, "
                "repeat run byte-identical")

    def test_runtime_budget_10k_by_256(self):
        records, matrix = self._records_with_embeddings(10_000, 256, seed=77)
        start = time.perf_counter()
        selected = select_diverse(records, matrix, ratio=0.1, seed=5)
        elapsed = time.perf_counter() - start
        assert len(selected) == 1000
        assert elapsed < 30.0, f"selection took {elapsed:.1f}s"
        _report(f"diversity: n=10,000 d=256 -> k=1,000 in {elapsed:.1f}s "
                "(budget 30s)")


FRAGMENTS = [
    "<think>", "</think>", "<answer>", "</answer>", "[1,2,3,4]",
    "[10, 20, 30, 40]", "click", "the icon", "\n", "  ", "[[5,6]]",
    "x" * 400, "answer", "<think></think>", "[1,2,3]", "[9,9,99,99] extra",
    "éé", "1,2,3,4", "][", "<answer>[0,0,1,1]</answer>",
]


class TestRewardEngine:
    GT = BBox(440, 1000, 520, 1060)

    def test_three_canonical_examples(self):
        full = reward_breakdown(
            "<think>To play the next song, I should click on the right arrow "
            "icon.</think><answer>[445,1016,508,1053]</answer>", self.GT)
        assert (full.format, full.solution, full.length, full.total) \
            == (1, 1, 1, 3)
        refusal = reward_breakdown("click here", self.GT)
        assert (refusal.format, refusal.solution, refusal.length,
                refusal.total) == (0, 0, 1, 1)
        overlong = reward_breakdown(
            "<think>" + "word " * 120 + "</think><answer>[0,0,2,2]</answer>",
            BBox(10, 10, 20, 20))
        assert (overlong.format, overlong.solution, overlong.length,
                overlong.total) == (1, 0, 0, 1)
        _report("rewards: canonical examples score 3 / 1 / 1")

    def test_total_equals_sum_on_100k_fuzzed_inputs(self):
        rng = random.Random(31337)
        config = RewardConfig()
        failures = 0
        for _ in range(100_000):
            text = "".join(rng.choices(FRAGMENTS, k=rng.randint(1, 5)))
            result = reward_breakdown(text, self.GT, config)
            if result.total != result.format + result.solution + result.length:
                failures += 1
            if not all(v in (0, 1) for v in
                       (result.format, result.solution, result.length)):
                failures += 1
        assert failures == 0
        _report("rewards: total == sum on 100,000 fuzzed inputs, 0 failures")

    def test_throughput_over_10k_per_second(self):
        config = RewardConfig()
        rollout = ("<think>The settings entry sits in the sidebar, third row "
                   "from the top, next to the gear glyph.</think>"
                   "<answer>[445,1016,508,1053]</answer>")
        count = 30_000
        start = time.perf_counter()
        for _ in range(count):
            reward_breakdown(rollout, self.GT, config)
        elapsed = time.perf_counter() - start
        rate = count / elapsed
        assert rate >= 10_000, f"throughput {rate:.0f}/s"
        _report(f"rewards: {rate:,.0f} rewards/s single-threaded "
                "(floor 10,000/s)")


PIPELINE_SOURCES = {
    # source: (record count, dims)
    "AriaUI-Desktop": (200, (1120, 700)),
    "AriaUI-Mobile": (100, (392, 840)),
    "AriaUI-Web": (100, (1288, 812)),
    "ShowUI-Desktop": (100, (1568, 896)),
}


def _pipeline_fixture(root: Path) -> dict[str, Path]:
    rng = np.random.default_rng(600613)
    paths = {}
    for source, (count, (width, height)) in PIPELINE_SOURCES.items():
        records = []
        for idx in range(count):
            bw = int(rng.integers(36, 130))
            bh = int(rng.integers(28, 90))
            x1 = int(rng.integers(0, width - bw))
            y1 = int(rng.integers(0, height - bh))
            records.append(GroundingRecord(
                id=f"{source}-{idx:04d}",
                image_ref=str(root / "img" / f"{source}-{idx // 5:03d}.png"),
                dims=ImageDims(width, height),
                instruction=f"open entry {idx} of {source}",
                gt_box=BBox(x1, y1, x1 + bw, y1 + bh),
                source=source,
                platform="desktop" if "Desktop" in source else "web",
            ))
        path = root / f"{source.lower()}.jsonl"
        write_records(path, records)
        paths[source] = path
    return paths


def _pipeline_config(root: Path, paths: dict[str, Path], out_name: str) -> Path:
    doc = {
        "seed": 1234,
        "output_dir": str(root / out_name),
        "sources": {
            source: {
                "path": str(path),
                "cluster": source.startswith("AriaUI"),
                **({"downsample": 0.5} if source == "AriaUI-Desktop" else {}),
            }
            for source, path in paths.items()
        },
        "client": {"model": "mock-vlm", "max_inflight": 2},
        "mock": {"hit_rate": 0.5, "positive_rate": 0.8, "garble_rate": 0.02,
                 "embed_dim": 24},
        "diversity": {"ratio": 0.1, "target_dim": 16},
        "cache_dir": str(root / f"cache-{out_name}"),
    }
    config_path = root / f"config-{out_name}.json"
    config_path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return config_path


class TestPipelineDeterminism:
    def test_500_record_runs_are_reproducible_and_cached(self, tmp_path):
        paths = _pipeline_fixture(tmp_path)
        total = sum(count for count, _ in PIPELINE_SOURCES.values())
        assert total == 500
        start = time.perf_counter()
        first = run_pipeline(load_config(_pipeline_config(tmp_path, paths, "a")))
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"cold run took {elapsed:.1f}s"
        second = run_pipeline(load_config(_pipeline_config(tmp_path, paths, "b")))
        digests_a = [(row.name, row.content_digest) for row in first.rows]
        digests_b = [(row.name, row.content_digest) for row in second.rows]
        assert digests_a == digests_b
        previous: set[str] | None = None
        for row in first.rows:
            ids = {rec.id for rec in
                   load_records(tmp_path / "a" / f"{row.name}.jsonl")}
            if previous is not None:
                assert ids <= previous, f"stage {row.name} grew its input"
            previous = ids
        warm = run_pipeline(load_config(_pipeline_config(tmp_path, paths, "a")))
        assert warm.client.calls == {"ground": 0, "embed": 0, "judge": 0,
                                     "complete": 0}
        assert all(row.reused for row in warm.rows if row.name != "review")
        _report(f"pipeline: 500 records, twin-run digests identical, "
                f"warm run 0 requests, cold run {elapsed:.1f}s (budget 60s)")


class TestSmartResize:
    def test_random_dims_land_in_window(self):
        rng = np.random.default_rng(112233)
        checked = 0
        for _ in range(1000):
            dims = ImageDims(int(rng.integers(1, 4000)),
                             int(rng.integers(1, 4000)))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                out = smart_resize(dims)
            assert out.width % 28 == 0 and out.height % 28 == 0
            if not caught:  # a degenerate side had to be forced up to one patch
                assert 3136 <= out.area <= 846720, f"{dims} -> {out}"
                checked += 1
        assert checked > 900  # degenerate draws are rare at these ranges
        assert smart_resize(ImageDims(1920, 1080)) == ImageDims(1204, 672)
        _report(f"smart resize: {checked}/1000 feasible dims in window, "
                "(1920,1080) -> (1204,672) exact")
