"""Release gate: one end-to-end test per numbered acceptance criterion.

Each test computes its quantities, then records a single PASS/FAIL line
through the `acceptance` fixture; the collected lines are printed as a
summary section at the end of the pytest run. Unlike the unit suites,
several of these train real models on synthetic scenarios, so the module
takes minutes rather than seconds.
"""

import hashlib
import itertools
import json
import struct
import time

import numpy as np
import pytest

from addressee.charts import render_bar_chart
from addressee.cli import main
from addressee.core import AddresseeClass, Estimate, FormatError
from addressee.dataio import read_dataset
from addressee.evaluate import (GRANULARITIES, aggregate_utterance,
                                confusion_matrix, evaluate, f1_scores)
from addressee.nn import (Model, ModelConfig, TrainConfig, init_weights,
                          load_weights, save_weights, train)
from addressee.nn.train import evaluate_loss
from addressee.pipeline import PipelineConfig, run_replay
from addressee.sequencer import StreamState, window_utterance
from addressee.synthgen import ScenarioConfig, Utterance, generate

# Narrow architecture for the pure-protocol criteria (9, 10), where model
# quality is irrelevant and training time is not.
TINY = ModelConfig(face_size=24, conv_channels=(2,), face_embed=8,
                   n_keypoints=18, pose_hidden=(8,), fused_dim=8, lstm_hidden=8)
TINY_JSON = {"face_size": 24, "conv_channels": [2], "face_embed": 8,
             "n_keypoints": 18, "pose_hidden": [8], "fused_dim": 8,
             "lstm_hidden": 8}


def scenario(n, seed, yaw=5.0, dropout=0.05, glance=0.3, len_ms=(800, 2400)):
    return ScenarioConfig(n_utterances=n, seed=seed, yaw_noise_deg=yaw,
                          keypoint_dropout=dropout, object_glance_prob=glance,
                          utterance_len_ms=len_ms)


def split_utterances(utts, seed):
    """15% held-out test; 10% of the remainder for early stopping."""
    rng = np.random.Generator(np.random.PCG64([seed, 1]))
    order = rng.permutation(len(utts))
    n_test = int(round(0.15 * len(utts)))
    n_val = max(1, int(round(0.10 * (len(utts) - n_test))))
    test = [utts[i] for i in order[:n_test]]
    val = [utts[i] for i in order[n_test:n_test + n_val]]
    rest = [utts[i] for i in order[n_test + n_val:]]
    return rest, val, test


def accuracy(report):
    return float(np.trace(report.confusion)) / float(report.confusion.sum())


def probs_estimate(probs, t_emit_ms=0):
    p = np.maximum(np.asarray(probs, dtype=np.float64), 1e-300)
    return Estimate.from_logp(np.log(p), t_emit_ms=t_emit_ms)


def reference_f1(pairs):
    """Scorer straight from the definitions, sharing no library code."""
    per, support = [], []
    n = len(pairs)
    for c in range(3):
        tp = sum(1 for t, p in pairs if t == c and p == c)
        fp = sum(1 for t, p in pairs if t != c and p == c)
        fn = sum(1 for t, p in pairs if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        per.append(2.0 * prec * rec / (prec + rec) if prec + rec > 0.0 else 0.0)
        support.append(tp + fn)
    macro = sum(per) / 3.0
    weighted = sum(s / n * f for s, f in zip(support, per))
    return per, macro, weighted


def sequence_digest(seq):
    h = hashlib.sha256()
    h.update(seq.utterance_id.encode())
    h.update(struct.pack("<i?", seq.index, seq.padded))
    for fr in seq.frames:
        h.update(struct.pack("<q", fr.t_ms))
        h.update(fr.face.pixels.tobytes())
        h.update(fr.pose.points.tobytes())
    return h.digest()


def test_c01_gradient_check_every_parameter(micro_config, acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    model = Model(micro_config, init_weights(micro_config, rng))
    faces = rng.random((2, 10, 4, 4))
    poses = 0.5 * rng.standard_normal((2, 10, 6))
    labels = np.array([1, 2])
    _, grads = model.loss_and_grads(faces, poses, labels)

    eps = 1e-5
    worst = 0.0
    n_params = 0
    for name, grad in grads.items():
        flat = model.weights[name].ravel()
        gflat = grad.ravel()
        for pos in range(flat.size):
            orig = flat[pos]
            flat[pos] = orig + eps
            up, _ = evaluate_loss(model, faces, poses, labels)
            flat[pos] = orig - eps
            down, _ = evaluate_loss(model, faces, poses, labels)
            flat[pos] = orig
            num = (up - down) / (2 * eps)
            rel = abs(gflat[pos] - num) / max(abs(gflat[pos]), abs(num), 1e-6)
            worst = max(worst, rel)
            n_params += 1
    elapsed = time.perf_counter() - t0
    acceptance(1, worst < 1e-4 and elapsed < 30.0,
               f"max relative gradient error {worst:.2e} (< 1e-4) over "
               f"{n_params} parameters in {elapsed:.1f} s (< 30 s)")


def test_c02_output_normalization(micro_config, acceptance):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        model = Model(micro_config, init_weights(micro_config, rng))
        faces = rng.random((1, 10, 4, 4))
        poses = rng.standard_normal((1, 10, 6))
        logp = model.forward_batch(faces, poses)[0]
        worst = max(worst, abs(float(np.exp(logp).sum()) - 1.0))
    acceptance(2, worst < 1e-6,
               f"max |sum(exp(logp)) - 1| = {worst:.2e} (< 1e-6) over 1000 draws")


def test_c03_learnability(acceptance):
    t0 = time.perf_counter()
    easy = list(generate(scenario(600, 42, yaw=5.0, dropout=0.05)))
    tr, val, test = split_utterances(easy, 42)
    model, _ = train(tr, val, ModelConfig(), TrainConfig(seed=42))
    easy_f1 = evaluate(model, test)["sequence"].weighted_f1
    easy_s = time.perf_counter() - t0

    hard = list(generate(scenario(600, 42, yaw=15.0, dropout=0.2, glance=0.5)))
    tr, val, test = split_utterances(hard, 42)
    model, _ = train(tr, val, ModelConfig(), TrainConfig(seed=42))
    reports = evaluate(model, test)
    hard_f1 = reports["sequence"].weighted_f1
    svg = render_bar_chart("Weighted F1 by granularity", list(GRANULARITIES),
                           [reports[g].weighted_f1 for g in GRANULARITIES])
    by_gran = "/".join(f"{reports[g].weighted_f1:.3f}" for g in GRANULARITIES)
    ok = (easy_f1 >= 0.90 and easy_s < 300.0 and hard_f1 >= 0.60
          and all(g in svg for g in GRANULARITIES))
    acceptance(3, ok,
               f"easy sequence F1 {easy_f1:.3f} (>= 0.90) in {easy_s:.0f} s "
               f"(< 300 s); hard {hard_f1:.3f} (>= 0.60), "
               f"seq/utt/first {by_gran}")


def test_c04_aggregation_beats_sequences(acceptance):
    seq_acc, utt_acc = [], []
    for seed in range(5):
        utts = list(generate(scenario(250, 100 + seed, yaw=15.0, dropout=0.2,
                                      glance=0.5)))
        tr, val, test = split_utterances(utts, seed)
        model, _ = train(tr, val, ModelConfig(), TrainConfig(epochs=10, seed=seed))
        reports = evaluate(model, test)
        seq_acc.append(accuracy(reports["sequence"]))
        utt_acc.append(accuracy(reports["utterance"]))
    mean_seq = float(np.mean(seq_acc))
    mean_utt = float(np.mean(utt_acc))

    # Invariant: aggregating estimates that all pick one class keeps it,
    # exhaustively over a probability grid in steps of 0.2.
    grid = [(a / 5, b / 5, (5 - a - b) / 5)
            for a in range(6) for b in range(6 - a)]
    unanimous = True
    checked = 0
    for cls in AddresseeClass:
        vecs = [p for p in grid
                if all(p[cls.value] > p[j] for j in range(3) if j != cls.value)]
        for r in (1, 2, 3):
            for combo in itertools.product(vecs, repeat=r):
                ests = [probs_estimate(p, t_emit_ms=80 * (t + 1))
                        for t, p in enumerate(combo)]
                for method in ("mean", "confidence_weighted"):
                    agg = aggregate_utterance(ests, method=method)
                    checked += 1
                    if agg.predicted != cls:
                        unanimous = False
    acceptance(4, mean_utt >= mean_seq and unanimous,
               f"5-seed mean accuracy: utterance {mean_utt:.3f} >= sequence "
               f"{mean_seq:.3f}; unanimity held on {checked} constructed cases")


def test_c05_metric_oracle(acceptance):
    rng = np.random.default_rng(5150)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 41))
        pairs = [(int(t), int(p)) for t, p in rng.integers(0, 3, size=(n, 2))]
        per, macro, weighted = f1_scores(confusion_matrix(pairs))
        rper, rmacro, rweighted = reference_f1(pairs)
        if not (list(per) == rper and macro == rmacro and weighted == rweighted):
            mismatches += 1

    worked = [[5, 5, 0], [0, 10, 0], [0, 0, 10]]
    pairs = [(t, p) for t, row in enumerate(worked)
             for p, count in enumerate(row) for _ in range(count)]
    _, _, wf1 = f1_scores(confusion_matrix(pairs))
    acceptance(5, mismatches == 0 and abs(wf1 - 0.8222) <= 1e-4,
               f"{mismatches} mismatches vs reference over 1000 multisets; "
               f"worked example weighted F1 {wf1:.6f} (0.8222 +- 1e-4)")


def test_c06_windowing_counts_and_stream_equality(acceptance):
    src = list(generate(ScenarioConfig(n_utterances=1, seed=31,
                                       utterance_len_ms=(16000, 16000))))[0]
    assert len(src.frames) == 200
    bad_counts = []
    bad_streams = []
    for n in range(1, 201):
        utt = Utterance(id=src.id, label=src.label, speaker_id=src.speaker_id,
                        frames=src.frames[:n])
        batch = window_utterance(utt)
        if len(batch) != max(1, n // 10):
            bad_counts.append(n)
        state = StreamState()
        streamed = [s for fr in utt.frames if (s := state.push_frame(fr)) is not None]
        tail = state.flush()
        if tail is not None:
            streamed.append(tail)
        if [sequence_digest(s) for s in streamed] != [sequence_digest(s) for s in batch]:
            bad_streams.append(n)
    acceptance(6, not bad_counts and not bad_streams,
               f"n=1..200: sequence counts all max(1, n // 10) "
               f"({len(bad_counts)} wrong); stream output byte-identical to "
               f"batch ({len(bad_streams)} mismatched)")


def test_c07_stream_check_zero_diffs(acceptance, tmp_path):
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(json.dumps({"n_utterances": 100, "seed": 5,
                                    "utterance_len_ms": [800, 2400]}))
    data = tmp_path / "data"
    rc_gen = main(["gen", "--config", str(cfg_path), "--out", str(data)])
    weights = tmp_path / "weights.aew"
    save_weights(Model.initialize(ModelConfig(), 3), weights)
    out = tmp_path / "run"
    rc = main(["stream", "--check", "--data", str(data),
               "--weights", str(weights), "--out", str(out)])
    eq = json.loads((out / "equivalence.json").read_text())
    ok = (rc_gen == 0 and rc == 0 and eq["matched"] is True
          and eq["diffs"] == [] and eq["n_utterances"] == 100)
    acceptance(7, ok,
               f"stream --check: {len(eq['diffs'])} diffs over "
               f"{eq['n_sequences']} sequences in {eq['n_utterances']} utterances")


def test_c08_realtime_latency(acceptance):
    utts = list(generate(ScenarioConfig(n_utterances=12, seed=21,
                                        utterance_len_ms=(1000, 2000))))
    model = Model.initialize(ModelConfig(), 3)
    res = run_replay(model, utts, PipelineConfig(mode="realtime"))
    s = res.summary
    first = s["first_estimate_latency_ms"]
    ok = (first["count"] == 12 and first["p95"] <= 1000.0
          and first["min"] >= 800.0 and s["frames_dropped"] == 0)
    acceptance(8, ok,
               f"first-estimate latency p95 {first['p95']:.1f} ms (<= 1000), "
               f"min {first['min']:.1f} ms (>= 800), "
               f"{s['frames_dropped']} frames dropped (= 0)")


def test_c09_determinism_and_persistence(acceptance, tmp_path):
    scen = tmp_path / "scenario.json"
    scen.write_text(json.dumps({"n_utterances": 30, "seed": 13,
                                "utterance_len_ms": [800, 2000]}))
    mc = tmp_path / "model.json"
    mc.write_text(json.dumps(TINY_JSON))
    tc = tmp_path / "train.json"
    tc.write_text(json.dumps({"epochs": 3, "batch_size": 8, "seed": 1}))

    rcs = []
    artifacts = {}
    for tag in ("a", "b"):
        data = tmp_path / f"data_{tag}"
        weights = tmp_path / f"weights_{tag}.aew"
        rep = tmp_path / f"eval_{tag}"
        rcs.append(main(["gen", "--config", str(scen), "--out", str(data)]))
        rcs.append(main(["train", "--data", str(data), "--model-config", str(mc),
                         "--train-config", str(tc), "--out", str(weights)]))
        rcs.append(main(["eval", "--data", str(data), "--weights", str(weights),
                         "--out", str(rep)]))
        artifacts[tag] = ((data / "dataset.jsonl").read_bytes(),
                          weights.read_bytes(),
                          (rep / "report.json").read_bytes())
    identical = all(x == y for x, y in zip(artifacts["a"], artifacts["b"]))

    w1 = tmp_path / "weights_a.aew"
    m1 = load_weights(w1, TINY)
    w3 = tmp_path / "resaved.aew"
    save_weights(m1, w3)
    m2 = load_weights(w3, TINY)
    roundtrip = (w3.read_bytes() == w1.read_bytes()
                 and all(np.array_equal(m1.weights[k], m2.weights[k])
                         for k in m1.weights))
    try:
        load_weights(w1, ModelConfig())
        refused = False
    except FormatError:
        refused = True

    ok = all(rc == 0 for rc in rcs) and identical and roundtrip and refused
    acceptance(9, ok,
               f"reruns byte-identical (dataset/weights/report: {identical}); "
               f"weights round-trip bit-exact ({roundtrip}); "
               f"config-hash mismatch refused ({refused})")


def test_c10_crossval_protocol(acceptance, tmp_path):
    scen = tmp_path / "scenario.json"
    scen.write_text(json.dumps({"n_utterances": 40, "seed": 17,
                                "utterance_len_ms": [800, 2400]}))
    mc = tmp_path / "model.json"
    mc.write_text(json.dumps(TINY_JSON))
    tc = tmp_path / "train.json"
    tc.write_text(json.dumps({"epochs": 2, "batch_size": 8, "seed": 0}))
    data = tmp_path / "data"
    out = tmp_path / "cv"
    rc_gen = main(["gen", "--config", str(scen), "--out", str(data)])
    rc = main(["crossval", "--data", str(data), "--model-config", str(mc),
               "--train-config", str(tc), "--k", "10", "--out", str(out)])

    fold_of = json.loads((out / "fold_assignments.json").read_text())["fold_of"]
    ids = [u.id for u in read_dataset(data / "dataset.jsonl")]
    sizes = sorted(list(fold_of.values()).count(f) for f in range(10))
    partition = (set(fold_of) == set(ids) and len(fold_of) == 40
                 and sizes == [4] * 10)

    summary = json.loads((out / "crossval.json").read_text())["summary"]
    stats_ok = all(np.isfinite(summary[g]["weighted_f1"]["mean"])
                   and summary[g]["weighted_f1"]["sd"] >= 0.0
                   for g in GRANULARITIES)
    svg = (out / "f1_granularities.svg").read_text()
    plain = render_bar_chart("Weighted F1 by granularity", list(GRANULARITIES),
                             [summary[g]["weighted_f1"]["mean"] for g in GRANULARITIES])
    whiskers = svg.count("<line") > plain.count("<line")

    ok = rc_gen == 0 and rc == 0 and partition and stats_ok and whiskers
    mean_sd = ", ".join(
        f"{g} {summary[g]['weighted_f1']['mean']:.3f}+-{summary[g]['weighted_f1']['sd']:.3f}"
        for g in GRANULARITIES)
    acceptance(10, ok,
               f"10-fold partition exact over 40 utterances ({partition}); "
               f"mean+-SD charted with whiskers ({whiskers}): {mean_sd}")
