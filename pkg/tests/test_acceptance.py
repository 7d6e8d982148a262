"""Acceptance suite: one test per release criterion, at stated tolerances.

The fixture scenario is the bundled 26-week single-station script
(~1.7M frames at 0.3 fps). Criteria 1, 2, 7, and 8 run the full pipeline
end to end against the analytic oracle; 3, 4, 5, 6 verify the numerical
kernels against independent brute-force oracles.
"""

import csv
import itertools
import json
import math
import random
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capacon.config import AnalyticsParams, RunConfig
from capacon.evalkit import average_precision, build_pr_curve, map_suite
from capacon.ingest import DetectionBox, ObjectClass, Scope, StationConfig
from capacon.pipeline import analyze_run
from capacon.simgen import NoiseModel, paper_fixture, write_scenario
from capacon.statemach import PresenceFlags, StationStatus, classify
from capacon.tracker import initiate_state, kf_predict, kf_update, solve_assignment

pytestmark = pytest.mark.acceptance

SHARE_KEYS = ("productive", "unproductive", "downtime", "idle")


def _analyze(stream_path, calendar, out_dir, **kwargs):
    config = RunConfig(
        stations=(StationConfig("C"),),
        calendar=calendar,
        analytics=AnalyticsParams(**kwargs),
    )
    start = time.perf_counter()
    manifest = analyze_run(config, [stream_path], out_dir)
    elapsed = time.perf_counter() - start
    report = json.loads((out_dir / "report.json").read_text())
    return manifest, report, elapsed


@pytest.fixture(scope="module")
def noiseless_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("fixture26w")
    script = paper_fixture()
    stream_path, oracle_path = write_scenario(script, base / "sim")
    oracle = json.loads(oracle_path.read_text())
    manifest, report, elapsed = _analyze(stream_path, script.calendar, base / "out")
    return {
        "base": base,
        "script": script,
        "stream": stream_path,
        "oracle": oracle,
        "manifest": manifest,
        "report": report,
        "analyze_seconds": elapsed,
        "out": base / "out",
    }


class TestCriterion1OracleRoundTrip:
    def test_shares_and_runtime(self, noiseless_run):
        report = noiseless_run["report"]
        oracle = noiseless_run["oracle"]
        frames = noiseless_run["manifest"].used_records
        shares = report["shares"]["C"]["all"]["all"]["pct_of_in_shift"]

        assert frames == pytest.approx(1_700_000, rel=0.05)  # ~1.7M frames
        # fixture-encoded headline split, within one frame-quantization step
        assert abs(shares["productive"] - 70.6) <= 0.1
        assert abs(shares["unproductive"] - 27.9) <= 0.1
        # and against the analytic oracle itself
        for key in SHARE_KEYS:
            assert abs(shares[key] - oracle["shares"][key]) <= 0.1
        elapsed = noiseless_run["analyze_seconds"]
        assert elapsed < 30.0, f"analyze took {elapsed:.1f}s on {frames} frames"
        print(
            f"\n[criterion 1] PASS shares P={shares['productive']:.3f} "
            f"U={shares['unproductive']:.3f} vs 70.6/27.9 "
            f"(oracle {oracle['shares']['productive']:.3f}/"
            f"{oracle['shares']['unproductive']:.3f}); "
            f"analyze {elapsed:.1f}s for {frames} frames"
        )


class TestCriterion2CycleTimeRecovery:
    def test_weekly_medians_exact_and_filter(self, noiseless_run):
        report = noiseless_run["report"]
        weekly = report["weekly_box"]["C"]
        assert len(weekly) == 26
        for week, stats in weekly.items():
            wk_no = int(week.split("-W")[1])
            expected = 7.5 if wk_no % 2 == 0 else 5.0
            assert stats["median_min"] == expected, (week, stats["median_min"])
        assert weekly["2023-W42"]["median_min"] == 7.5

        # the scripted 90 s chair visits exist in the oracle but never
        # survive the two-minute filter into cycles.csv
        oracle_cycles = noiseless_run["oracle"]["cycles"]
        ghosts = [c for c in oracle_cycles if c["duration_s"] == 90.0]
        assert len(ghosts) == 26  # one per week
        with open(noiseless_run["out"] / "cycles.csv") as fh:
            rows = list(csv.DictReader(fh))
        durations = [float(r["duration_s"]) for r in rows]
        assert min(durations) >= 120.0
        assert len(rows) == 26 * 35  # 21 short + 14 long per week
        print(
            f"\n[criterion 2] PASS 26 weekly medians exactly 5.0/7.5 min "
            f"(week 42 = 7.5); {len(ghosts)} scripted 90s visits filtered"
        )


class TestCriterion3AssignmentOracle:
    @staticmethod
    def _perm_oracle_cost(cost):
        n = len(cost)
        arr = np.asarray(cost)
        perms = np.array(list(itertools.permutations(range(n))))
        totals = arr[np.arange(n), perms].sum(axis=1)
        return float(totals.min())

    def test_thousand_matrices_per_size(self):
        rng = np.random.default_rng(20230703)
        mismatches = 0
        for n in range(1, 8):
            for _ in range(1000):
                cost = rng.uniform(0.0, 1.0, size=(n, n))
                pairs = solve_assignment(cost.tolist())
                got = sum(cost[i, j] for i, j in pairs)
                want = self._perm_oracle_cost(cost)
                if abs(got - want) > 1e-9 or len(pairs) != n:
                    mismatches += 1
        assert mismatches == 0
        print("\n[criterion 3] PASS 7000 random matrices (1000 per size 1-7), zero mismatches")


class TestCriterion4ApOracle:
    @staticmethod
    def _corpus(rng):
        frames = rng.randint(1, 4)
        gts = {}
        preds = {}
        budget = rng.randint(1, 25)
        for f in range(frames):
            key = ("C", f)
            gts[key] = [
                (rng.uniform(0, 60), rng.uniform(0, 60),
                 rng.uniform(5, 30), rng.uniform(5, 30))
                for _ in range(rng.randint(0, 3))
            ]
            n = min(budget, rng.randint(0, 9))
            budget -= n
            row = []
            for _ in range(n):
                if gts[key] and rng.random() < 0.6:
                    gx, gy, gw, gh = gts[key][rng.randrange(len(gts[key]))]
                    row.append(DetectionBox(
                        ObjectClass.WORKER,
                        (max(gx + rng.uniform(-4, 4), 0.0),
                         max(gy + rng.uniform(-4, 4), 0.0),
                         gw * rng.uniform(0.7, 1.3), gh * rng.uniform(0.7, 1.3)),
                        round(rng.random(), 3),
                    ))
                else:
                    row.append(DetectionBox(
                        ObjectClass.WORKER,
                        (rng.uniform(0, 60), rng.uniform(0, 60),
                         rng.uniform(5, 30), rng.uniform(5, 30)),
                        round(rng.random(), 3),
                    ))
            preds[key] = row
        return preds, gts

    @staticmethod
    def _oracle_ap(preds, gts, iou_t):
        from capacon.evalkit import match_frame

        n_gt = sum(len(v) for v in gts.values())
        cuts = sorted({d.confidence for dets in preds.values() for d in dets})
        points = []
        for cut in cuts:
            tp = fp = 0
            keys = set(preds) | set(gts)
            for key in keys:
                kept = [d for d in preds.get(key, []) if d.confidence >= cut]
                flags, _ = match_frame(kept, gts.get(key, []), iou_t)
                tp += sum(flags)
                fp += len(flags) - sum(flags)
            if tp + fp:
                points.append((tp / (tp + fp), tp / n_gt))
        total = 0.0
        for k in range(101):
            r = k / 100.0
            candidates = [p for p, rec in points if rec >= r]
            total += max(candidates) if candidates else 0.0
        return total / 101.0

    def test_two_hundred_corpora(self):
        rng = random.Random(424242)
        checked = 0
        attempts = 0
        while checked < 200:
            attempts += 1
            assert attempts < 2000
            preds, gts = self._corpus(rng)
            if sum(len(v) for v in gts.values()) == 0:
                continue
            gt_boxes = {k: [g for g in v] for k, v in gts.items()}
            for iou_t in (0.5, 0.75, 0.95):
                got = average_precision(build_pr_curve(preds, gt_boxes, iou_t))
                want = self._oracle_ap(preds, gt_boxes, iou_t)
                assert abs(got - want) <= 1e-9
            gt_dets = {
                k: [DetectionBox(ObjectClass.WORKER, g) for g in v]
                for k, v in gts.items()
            }
            summary = map_suite(preds, gt_dets)
            if summary.map50 is not None:
                assert summary.map50 >= summary.map50_95 - 1e-12
            checked += 1
        print(f"\n[criterion 4] PASS {checked} corpora match the exhaustive-threshold oracle within 1e-9")


class TestCriterion5TableExhaustive:
    def test_all_four_rows(self):
        table = {
            (True, True): StationStatus.PRODUCTIVE,
            (False, True): StationStatus.UNPRODUCTIVE,
            (True, False): StationStatus.DOWNTIME,
            (False, False): StationStatus.IDLE,
        }
        for (worker, chair), expected in table.items():
            got = classify(PresenceFlags("C", 0, worker, chair), Scope.IN_SHIFT)
            assert got is expected
        print("\n[criterion 5] PASS presence table matches on all 4 combinations")

    @given(st.booleans(), st.booleans(), st.sampled_from(list(Scope)),
           st.integers(min_value=0, max_value=2**62))
    @settings(max_examples=200)
    def test_total_over_scope_and_flags(self, worker, chair, scope, ts):
        out = classify(PresenceFlags("C", ts, worker, chair), scope)
        assert isinstance(out, StationStatus)
        if scope is not Scope.IN_SHIFT:
            assert out is StationStatus.EXCLUDED


class TestCriterion6KalmanNumerics:
    def test_ten_thousand_cycles(self):
        rng = random.Random(1234)
        state = initiate_state((400.0, 300.0, 0.7, 150.0))
        max_asym = 0.0
        min_eig = 0.0
        for i in range(10_000):
            state = kf_predict(state, rng.uniform(0.1, 10.0))
            z = (
                state.mean[0] + rng.gauss(0, 15),
                state.mean[1] + rng.gauss(0, 15),
                max(abs(state.mean[2]) + rng.gauss(0, 0.1), 0.05),
                max(abs(state.mean[3]) + rng.gauss(0, 20), 1.0),
            )
            state = kf_update(state, z)
            if i % 50 == 0 or i > 9_900:
                p = state.covariance
                max_asym = max(max_asym, float(np.abs(p - p.T).max()))
                min_eig = min(min_eig, float(np.linalg.eigvalsh(p).min()))
        assert max_asym < 1e-9
        assert min_eig >= -1e-6

        # zero innovation leaves the predicted position untouched
        pred = kf_predict(initiate_state((10.0, 20.0, 0.5, 40.0)), 1.0)
        post = kf_update(pred, tuple(pred.mean[:4]))
        assert np.array_equal(post.mean[:4], pred.mean[:4])
        print(
            f"\n[criterion 6] PASS 10k cycles: max asymmetry {max_asym:.2e}, "
            f"eigenvalue floor {min_eig:.2e}"
        )


class TestCriterion7NoiseRobustness:
    def test_shares_within_two_points(self, tmp_path_factory, noiseless_run):
        # 10% detector misses with the default window-3 debounce; tolerance
        # of 2 percentage points is sized for this noise level
        base = tmp_path_factory.mktemp("fixture_noisy")
        script = paper_fixture(noise=NoiseModel(miss_prob=0.1, seed=97))
        stream_path, oracle_path = write_scenario(script, base / "sim")
        oracle = json.loads(oracle_path.read_text())
        _, report, _ = _analyze(
            stream_path, script.calendar, base / "out", debounce_window=3
        )
        shares = report["shares"]["C"]["all"]["all"]["pct_of_in_shift"]
        for key in SHARE_KEYS:
            assert abs(shares[key] - oracle["shares"][key]) <= 2.0, key
        print(
            "\n[criterion 7] PASS miss_prob=0.1 shares within 2pp of oracle: "
            + ", ".join(
                f"{k} {shares[k] - oracle['shares'][k]:+.3f}" for k in SHARE_KEYS
            )
        )


class TestCriterion8Determinism:
    def test_byte_identical_outputs(self, noiseless_run):
        rerun_dir = noiseless_run["base"] / "out_rerun"
        _analyze(noiseless_run["stream"], noiseless_run["script"].calendar, rerun_dir)
        for name in ("shares.csv", "cycles.csv", "weekly_box.csv", "report.json"):
            a = (noiseless_run["out"] / name).read_bytes()
            b = (rerun_dir / name).read_bytes()
            assert a == b, f"{name} differs between runs"
        # track ids, as carried by cycles.csv, are identical
        with open(noiseless_run["out"] / "cycles.csv") as fh:
            ids_a = [r["track_id"] for r in csv.DictReader(fh)]
        with open(rerun_dir / "cycles.csv") as fh:
            ids_b = [r["track_id"] for r in csv.DictReader(fh)]
        assert ids_a == ids_b
        print("\n[criterion 8] PASS two runs byte-identical; tracker ids identical")
