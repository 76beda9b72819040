"""End-to-end acceptance checks, one test per criterion (C1..C10).

Each test records a PASS/FAIL line (shown in the pytest terminal summary) and
then asserts, so a failing criterion fails its test without stopping the rest.
"""
import itertools
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from trafficast.cli import main
from trafficast.deepcluster import (DeepClusterConfig, cluster_network, rand_index,
                                    sample_triplet_array)
from trafficast.neuralnet import (LSTM, Activation, AvgPool2D, Conv2D, Dense, Flatten, L2Normalize,
                                  MaxPool2D, Sequential, batch_triplet_loss, build_embedder,
                                  build_predictor, mse)
from trafficast.neuralnet.gradcheck import check_model_gradients
from trafficast.predict import PredictConfig, aggregate_metrics, evaluate_models, train_gm, train_im
from trafficast.raster import derasterize, grid_images, rasterize
from trafficast.series import acf, input_length, mean_acf, select_interval, split_periodic
from trafficast.synth import SynthSpec, generate

pytestmark = pytest.mark.acceptance


# -- C1 ------------------------------------------------------------------------

def test_c1_shape_and_parameter_laws(verdict):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    checked = mismatches = 0
    while checked < 200:
        h, w, d = (int(v) for v in rng.integers(1, 40, 3))
        kh, kw = (int(v) for v in rng.integers(1, 8, 2))
        s = int(rng.integers(1, 4))
        if kh > h or kw > w:
            continue
        expect_hw = ((h - kh) // s + 1, (w - kw) // s + 1)
        nk = int(rng.integers(1, 10))
        conv = Conv2D(d, nk, (kh, kw), s)
        pools = [MaxPool2D((kh, kw), s), AvgPool2D((kh, kw), s)]
        got = [conv.output_shape((h, w, d)), *(p.output_shape((h, w, d)) for p in pools)]
        want = [(*expect_hw, nk), (*expect_hw, d), (*expect_hw, d)]
        counts = [conv.param_count(), pools[0].param_count(), pools[1].param_count()]
        want_counts = [(kh * kw * d + 1) * nk, 0, 0]
        if got != want or counts != want_counts:
            mismatches += 1
        if checked < 20:  # the forward pass must agree with the declared shape too
            x = rng.normal(size=(1, h, w, d))
            conv.init_params(rng)
            if conv.forward(x).shape[1:] != want[0] or pools[0].forward(x).shape[1:] != want[1]:
                mismatches += 1
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 1.0
    verdict("C1", ok, f"{checked} conv/pool specs, {mismatches} mismatches, {elapsed:.2f}s (< 1 s)")
    assert ok


# -- C2 ------------------------------------------------------------------------

def _random_biases(model, rng, scale=0.1):
    p = model.params()
    for k in p:
        if k.endswith(".b"):
            p[k] = rng.normal(0.0, scale, p[k].shape)
    model.set_params(p)


def test_c2_gradient_oracle(verdict):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    cases = {
        "conv": (Sequential([Conv2D(2, 3, (3, 3), 2, "tanh")], (7, 7, 2)), (7, 7, 2)),
        "conv_relu": (Sequential([Conv2D(1, 2, (2, 2), 1, "relu")], (5, 5, 1)), (5, 5, 1)),
        "maxpool": (Sequential([MaxPool2D((2, 2), 2)], (6, 6, 2)), (6, 6, 2)),
        "avgpool": (Sequential([AvgPool2D((3, 3), 1)], (5, 5, 1)), (5, 5, 1)),
        "flatten_dense": (Sequential([Flatten(), Dense(18, 4, "sigmoid")], (3, 3, 2)), (3, 3, 2)),
        "activation": (Sequential([Activation("tanh")], (6,)), (6,)),
        "l2norm": (Sequential([Dense(5, 4), L2Normalize()], (5,)), (5,)),
        "lstm_seq": (Sequential([LSTM(2, 4, True)], (6, 2)), (6, 2)),
        "lstm_last": (Sequential([LSTM(3, 4, False)], (5, 3)), (5, 3)),
    }
    worst = {}
    for name, (model, shape) in cases.items():
        model.init_params(rng)
        _random_biases(model, rng)
        x = rng.normal(size=(3, *shape))
        target = rng.normal(size=(3, *model.output_shape))
        errs = check_model_gradients(model, lambda y, t=target: mse(y, t), x, rng=rng)
        worst[name] = max(errs.values())

    emb = build_embedder(64).init_params(rng)
    _random_biases(emb, rng)
    # three real day rasters, scaled exactly as the embedder receives them
    series, _ = generate(SynthSpec(seed=0, segments_per_archetype=1, days=3))
    images = np.stack([grid_images(split_periodic(s).rows, 64)[0] for s in series])
    images = images[..., None].astype(np.float64) / 255.0
    trip = np.array([[0, 1, 2]])
    # relu and max-pool make the loss piecewise smooth; a central difference that
    # straddles a switch has no derivative to match, so those entries are dropped
    stats = {}
    errs = check_model_gradients(emb, lambda y: batch_triplet_loss(y, trip, 4.0), images,
                                 max_per_param=12, rng=rng, skip_kinks=True, stats=stats)
    worst["embedder"] = max(errs.values())
    kept = stats["checked"] / (stats["checked"] + stats["skipped"])

    pred = build_predictor(58).init_params(rng)
    _random_biases(pred, rng)
    x = rng.random((4, 58, 1))
    y = rng.random((4, 1))
    errs = check_model_gradients(pred, lambda out: mse(out, y), x, max_per_param=25, rng=rng)
    worst["predictor"] = max(errs.values())

    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    ok = top <= 1e-4 and elapsed < 120 and kept >= 0.75
    verdict("C2", ok, f"max relative error {top:.2e} over {len(worst)} checks "
                      f"(worst: {max(worst, key=worst.get)}), embedder compared "
                      f"{stats['checked']} entries, {stats['skipped']} straddled a kink, "
                      f"{elapsed:.1f}s (< 120 s)")
    assert ok, worst


# -- C3 ------------------------------------------------------------------------

def test_c3_rasterization(verdict):
    rng = np.random.default_rng(3)
    R = 64
    t0 = time.perf_counter()
    bad_cols = worst_rt = flips = flip_bad = 0
    worst_rt = 0.0
    for i in range(10_000):
        n = R if i % 2 == 0 else int(rng.integers(2, 300))
        x = rng.random(n)
        img = rasterize(x, R)
        px = img.pixels.astype(np.int64)
        if not (np.all(px.sum(axis=0) == 255) and np.all((px == 0) | (px == 255))):
            bad_cols += 1
        if n == R:
            worst_rt = max(worst_rt, float(np.max(np.abs(derasterize(img) - x))))
            if not np.any(np.abs(R * x - np.round(R * x)) < 1e-9):
                flips += 1
                if not np.array_equal(rasterize(1.0 - x, R).pixels, img.pixels[::-1]):
                    flip_bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad_cols == 0 and worst_rt <= 1 / R and flip_bad == 0 and elapsed < 30
    verdict("C3", ok, f"10^4 images, {bad_cols} bad columns, max round-trip error {worst_rt:.4f} "
                      f"(<= {1 / R:.4f}), {flip_bad}/{flips} flip failures, {elapsed:.1f}s (< 30 s)")
    assert ok


# -- C4 ------------------------------------------------------------------------

def test_c4_triplet_constraints(verdict):
    t0 = time.perf_counter()
    counts = np.full(27, 60)
    trip = sample_triplet_array(counts, 100_000, np.random.default_rng(4))
    violations = int(np.sum(trip[:, 0] == trip[:, 3]) + np.sum(trip[:, 1] == trip[:, 2])
                     + np.sum(trip[:, [1, 2]] >= 60) + np.sum(trip[:, 4] >= 60))
    brute = {(a, i, j, 1 - a, k) for a in (0, 1) for i, j in itertools.permutations((0, 1))
             for k in (0, 1)}
    seen = {tuple(map(int, t)) for t in sample_triplet_array([2, 2], 2000, np.random.default_rng(5))}
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and seen == brute and elapsed < 30
    verdict("C4", ok, f"{len(trip)} triplets, {violations} violations; 2x2 space "
                      f"{len(seen)}/{len(brute)} matches brute force; {elapsed:.1f}s (< 30 s)")
    assert ok


# -- C5 ------------------------------------------------------------------------

def test_c5_clustering_recovery(verdict):
    t0 = time.perf_counter()
    hits, notes = 0, []
    for seed in range(10):
        series, labels = generate(SynthSpec(seed=seed))
        res = cluster_network([split_periodic(s) for s in series], DeepClusterConfig(seed=seed))
        ri = rand_index(res.clustering.labels, [labels[s] for s in res.segment_ids])
        good = res.clustering.k == 3 and ri >= 0.95
        hits += good
        notes.append(f"s{seed}:K={res.clustering.k},RI={ri:.2f}")
    elapsed = time.perf_counter() - t0
    ok = hits >= 8 and elapsed < 1800
    verdict("C5", ok, f"K=3 and RI>=0.95 on {hits}/10 seeds (need 8); {elapsed / 60:.1f} min "
                      f"(< 30 min); " + " ".join(notes))
    assert ok


# -- C6 ------------------------------------------------------------------------

C6_STRIDES = (7, 5, 3, 1)
C6_CONFIG = dict(epochs=30, sample_stride=8)


def test_c6_interval_selection(verdict):
    t0 = time.perf_counter()
    strides = []
    for seed in range(5):
        series, _ = generate(SynthSpec(seed=seed))
        prof = mean_acf([acf(s.values, 20) for s in series])
        strides.append(select_interval(prof, 0.8))
    stable = len(set(strides)) == 1

    # stride sweep on one archetype group (9 segments x 60 days), one shared model per stride
    series, _ = generate(SynthSpec(seed=0))
    group = series[:9]
    assign = {s.segment_id: 0 for s in group}
    train, test = {}, {}
    for l in C6_STRIDES:
        cfg = PredictConfig(seed=0, **C6_CONFIG)
        gm = train_gm(group, input_length(288, l), l, 1, cfg)
        g = evaluate_models([gm], assign).groups[0]
        train[l], test[l] = g.train_mre, g.mre
    ordered = [train[l] for l in C6_STRIDES]
    train_ok = all(b <= a for a, b in zip(ordered, ordered[1:]))
    test_ok = test[3] <= test[7] and test[5] <= test[7]
    elapsed = time.perf_counter() - t0
    ok = stable and train_ok and test_ok and elapsed < 3600
    table = " ".join(f"l={l}:train={100 * train[l]:.2f}%/test={100 * test[l]:.2f}%" for l in C6_STRIDES)
    verdict("C6", ok, f"strides over 5 seeds {strides}; train non-increasing as l falls: {train_ok}; "
                      f"test(l=3,5) <= test(l=7): {test_ok}; {table}; {elapsed / 60:.1f} min (< 60 min)")
    assert ok


# -- C7 ------------------------------------------------------------------------

C7_CONFIG = dict(epochs=30, sample_stride=3)


def test_c7_gm_vs_im_gap(verdict):
    t0 = time.perf_counter()
    wins, notes = 0, []
    for seed in range(10):
        series, _ = generate(SynthSpec(seed=seed, days=15))
        arch = seed % 3
        group = series[9 * arch:9 * arch + 9]
        assign = {s.segment_id: 0 for s in group}
        l = 5
        cfg = PredictConfig(seed=seed, **C7_CONFIG)
        gm = train_gm(group, input_length(288, l), l, 1, cfg)
        gm_gap = evaluate_models([gm], assign).groups[0].gap
        im_gaps = []
        for i, s in enumerate(group):
            im = train_im(s, input_length(288, l), l, 1, cfg, group_index=i)
            im_gaps.append(evaluate_models([im], {s.segment_id: i}).groups[i].gap)
        win = gm_gap < float(np.mean(im_gaps))
        wins += win
        notes.append(f"s{seed}:GM={100 * gm_gap:+.2f}%/IM={100 * np.mean(im_gaps):+.2f}%")
    elapsed = time.perf_counter() - t0
    ok = wins >= 8 and elapsed < 3600
    verdict("C7", ok, f"GM gap < mean IM gap on {wins}/10 seeds (need 8); {elapsed / 60:.1f} min "
                      f"(< 60 min); " + " ".join(notes))
    assert ok


# -- C8 and C10 share two full pipeline runs ----------------------------------------

PIPELINE_INI = """\
[run]
seed = 0
[data]
exclude_weekends = false
[cluster]
epochs = 4
[predict]
epochs = 2
sample_stride = 48
horizons = 1
include_im = false
"""


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "pipeline.ini"
    cfg.write_text(PIPELINE_INI, encoding="utf-8")
    t0 = time.perf_counter()
    assert main(["synth", "--config", str(cfg), "--out-dir", str(root / "data")]) == 0
    outs = []
    for name in ("run1", "run2"):
        code = main(["pipeline", "--config", str(cfg), "--input", str(root / "data" / "speeds.csv"),
                     "--out-dir", str(root / name)])
        assert code == 0
        outs.append(root / name)
    return outs, time.perf_counter() - t0


def test_c8_model_count_reduction(pipeline_runs, verdict):
    (run, _), _ = pipeline_runs
    report = json.loads((run / "report.json").read_text())
    k = report["k"]
    n_models = len(list((run / "models").glob("h1_gm_*.ckpt")))
    reduction = report["model_reduction"]
    ok = (report["n_segments"] == 27 and n_models == k == 3 and reduction == (27 - 3) / 27
          and report["gm_models_per_horizon"] == {"1/GM": 3})
    verdict("C8", ok, f"27 segments -> K={k}, {n_models} group models trained, "
                      f"reported reduction {reduction:.4f} (expect {(27 - 3) / 27:.4f})")
    assert ok


def test_c10_determinism(pipeline_runs, verdict):
    (a, b), elapsed = pipeline_runs
    names = ["report.json", "clusters.json", "embedder.ckpt"]
    names += sorted(p.relative_to(a).as_posix() for p in (a / "models").glob("*.ckpt"))
    same = [n for n in names if (a / n).read_bytes() == (b / n).read_bytes()]
    ok = len(same) == len(names) and len(names) > 3
    verdict("C10", ok, f"{len(same)}/{len(names)} artefacts byte-identical across two pipeline runs "
                       f"({elapsed / 60:.1f} min for both)")
    assert ok


# -- C9 ------------------------------------------------------------------------

def _naive_aggregates(table, assign):
    """Exact rational arithmetic, rounded once per mean."""
    def mean(vals):
        total = sum((Fraction(v) for v in vals), Fraction(0))
        return float(total) / len(vals)
    seg = {s: mean([v for v in re if not math.isnan(v)]) for s, re in table.items()}
    out = {}
    for g in sorted(set(assign.values())):
        members = [s for s in table if assign[s] == g]
        vals = [seg[s] for s in members]
        largest = smallest = vals[0]
        for v in vals:
            largest = v if v > largest else largest
            smallest = v if v < smallest else smallest
        out[g] = (mean(vals), largest, smallest)
    return seg, out


def test_c9_metric_oracle(verdict):
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    mismatches = order_bad = 0
    for _ in range(100):
        n_seg = int(rng.integers(1, 30))
        table = {}
        for i in range(n_seg):
            re = rng.exponential(0.06, int(rng.integers(1, 200)))
            re[rng.random(len(re)) < 0.02] = np.nan
            if np.isnan(re).all():
                re[0] = 0.05
            table[f"s{i}"] = re
        assign = {s: int(rng.integers(0, 4)) for s in table}
        rep = aggregate_metrics(table, assign)
        seg, groups = _naive_aggregates(table, assign)
        if rep.segment_mre != seg:
            mismatches += 1
        for g, (mre, mare, mire) in groups.items():
            m = rep.groups[g]
            if (m.mre, m.mare, m.mire) != (mre, mare, mire):
                mismatches += 1
            if not m.mire <= m.mre <= m.mare:
                order_bad += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and order_bad == 0 and elapsed < 5
    verdict("C9", ok, f"100 random tables, {mismatches} mismatches vs exact recomputation, "
                      f"{order_bad} MIRE<=MRE<=MARE violations, {elapsed:.2f}s (< 5 s)")
    assert ok
