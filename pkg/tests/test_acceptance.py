"""Acceptance suite: one test per criterion, one PASS/FAIL line per criterion.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines;
the heavyweight end-to-end runs (three seeded trainings at the default
configuration) are shared by the criteria that need them.
"""

import json
import threading
import time
from contextlib import contextmanager

import numpy as np
import pytest
import requests

from qshield import ops, vocab
from qshield.cli import main as cli_main
from qshield.data import generate_family, generate_synthetic, stratified_split
from qshield.gateway import Gateway, ServiceConfig
from qshield.labels import CLASSES
from qshield.metrics import evaluate, evaluate_model
from qshield.model import (
    BadMagicError,
    ChecksumMismatchError,
    HeaderError,
    ModelConfig,
    VocabMismatchError,
    embedding_distance,
    forward,
    init_params,
    load_model,
    predict,
    save_model,
)
from qshield.server import GatewayServer
from qshield.training import TrainConfig, compute_loss_and_grads, train

from test_metrics import make_corpus

TABLE1_COUNTS = {"benign": 2000, "sqli": 472, "xss": 720, "rfi": 599, "dt": 511}
END_TO_END_SEEDS = (47, 101, 303)

SMALL = ModelConfig(k=8, filter_heights=(2, 3), filters_per_height=4, max_seq_len=24, seed=5)


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] FAIL: {name}", flush=True)
        raise
    print(f"\n[ACCEPTANCE] PASS: {name}", flush=True)


def small_params(seed=5, use_bias=False, version=0):
    config = ModelConfig(
        k=8, filter_heights=(2, 3), filters_per_height=4, max_seq_len=24,
        seed=seed, use_bias=use_bias,
    )
    params = init_params(config)
    params.version = version
    return params


# -- shared heavyweight fixture --------------------------------------------------


@pytest.fixture(scope="module")
def end_to_end_runs():
    """Three seeded default-config trainings on the Table-1-shaped corpus."""
    runs = []
    started = time.monotonic()
    for seed in END_TO_END_SEEDS:
        corpus = generate_synthetic(TABLE1_COUNTS, seed=seed)
        train_set, test_set = stratified_split(corpus, 0.2, seed=seed)
        params = init_params(ModelConfig(seed=seed))
        final, history = train(params, train_set, TrainConfig(epochs=5, seed=seed))
        report = evaluate_model(final, test_set)
        runs.append(
            {
                "seed": seed,
                "params": final,
                "history": history,
                "report": report,
                "train_size": len(train_set),
            }
        )
    return {"runs": runs, "elapsed": time.monotonic() - started}


# -- criteria ---------------------------------------------------------------------


def test_gradient_integrity():
    with criterion("gradient integrity (< 1e-4 rel error, bias on and off, < 10 s)"):
        started = time.monotonic()
        for use_bias in (False, True):
            params = small_params(use_bias=use_bias)
            if use_bias:
                rng = np.random.default_rng(3)
                params.conv_bias[:] = rng.normal(0, 0.1, params.conv_bias.shape)
                params.output_bias[:] = rng.normal(0, 0.1, params.output_bias.shape)
            seq = vocab.encode_normalized("uid=3&file=..%2f..%2fetc", 24)
            names = [n for n, _ in params.tensor_items()]

            def rebuild(arrays):
                p = params.copy()
                for name, arr in zip(names, arrays):
                    if name == "embedding":
                        p.embedding = arr
                    elif name.startswith("filters/h"):
                        p.filters[int(name.split("h")[1])] = arr
                    elif name == "output_weights":
                        p.output_weights = arr
                    elif name == "conv_bias":
                        p.conv_bias = arr
                    else:
                        p.output_bias = arr
                return p

            def loss_fn(arrays):
                ce, penalty, _ = compute_loss_and_grads(
                    rebuild(arrays), [seq], [3], 1e-4, mode="eval"
                )
                return ce + penalty

            def grad_fn(arrays):
                _, _, grads = compute_loss_and_grads(
                    rebuild(arrays), [seq], [3], 1e-4, mode="eval"
                )
                return [grads[n] for n in names]

            base = [t.copy() for _, t in params.tensor_items()]
            report = ops.finite_diff_check(
                loss_fn, grad_fn, base, epsilon=1e-5, tolerance=1e-4
            )
            assert report.passed, (
                f"use_bias={use_bias}: max rel error {report.max_rel_error:.3e} "
                f"at tensor {report.worst_tensor}"
            )
            print(
                f"  use_bias={use_bias}: {report.coords_checked} coords, "
                f"max rel err {report.max_rel_error:.2e}"
            )
        elapsed = time.monotonic() - started
        assert elapsed < 10.0, f"gradient check took {elapsed:.1f} s"


def test_conv_pool_oracle_equivalence():
    with criterion("conv/pool oracle equivalence (1000 instances, 1e-12)"):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            k = int(rng.integers(1, 5))
            L = int(rng.integers(1, n + 1))
            X = rng.normal(size=(n, k))
            F = rng.normal(size=(L, k))
            _, pre = ops.conv_full_width(X, F)
            reference = np.zeros(n - L + 1)
            for i in range(n - L + 1):
                acc = 0.0
                for r in range(L):
                    for c in range(k):
                        acc += F[r, c] * X[i + r, c]
                reference[i] = acc
            assert np.max(np.abs(pre - reference)) <= 1e-12

            y = np.maximum(pre, 0.0)
            _, argmax = ops.max_pool(y)
            grad = ops.max_pool_backward(float(rng.normal()), len(y), argmax)
            nonzero = np.nonzero(grad)[0]
            assert len(nonzero) <= 1
            if len(nonzero) == 1:
                assert nonzero[0] == argmax


def test_probability_normalization():
    with criterion("probability normalization (10,000 random-weight forwards)"):
        config = ModelConfig(k=6, filter_heights=(2, 3), filters_per_height=3, max_seq_len=16)
        master = np.random.default_rng(99)
        checked = 0
        for round_idx in range(100):
            params = init_params(
                ModelConfig(**{**config.__dict__, "seed": int(master.integers(0, 2**31))})
            )
            scale = 10.0 ** master.integers(-1, 3)
            params.output_weights *= scale  # stress the softmax with large logits
            for _ in range(100):
                length = int(master.integers(0, 30))
                text = "".join(chr(c) for c in master.integers(32, 127, size=length))
                verdict, _ = forward(params, vocab.encode(text, 16))
                assert abs(verdict.probs.sum() - 1.0) <= 1e-6
                assert (verdict.probs >= 0).all()
                assert verdict.predicted_class == CLASSES[int(np.argmax(verdict.probs))]
                checked += 1
        assert checked == 10000


def test_synthetic_end_to_end(end_to_end_runs):
    with criterion("synthetic end-to-end (accuracy >= 99%, FPR <= 1%, 3 seeds, <= 10 min)"):
        for run in end_to_end_runs["runs"]:
            report = run["report"]
            print(
                f"  seed {run['seed']}: accuracy {report.accuracy * 100:.2f}% "
                f"FPR {report.fpr * 100:.2f}%"
            )
            assert report.accuracy >= 0.99, f"seed {run['seed']}: accuracy {report.accuracy}"
            assert report.fpr <= 0.01, f"seed {run['seed']}: FPR {report.fpr}"
            # canonical attack example classifies as sqli after training
            assert predict(run["params"], "id=1' OR '1'='1").predicted_class == "sqli"
        assert end_to_end_runs["elapsed"] <= 600, f"took {end_to_end_runs['elapsed']:.0f} s"


def test_first_epoch_loss_decrease(end_to_end_runs):
    with criterion("first-epoch loss decrease (last 10% of steps below first 10%, 3 seeds)"):
        for run in end_to_end_runs["runs"]:
            steps_per_epoch = int(np.ceil(run["train_size"] / 64))
            epoch1 = run["history"].total[:steps_per_epoch]
            head = max(1, steps_per_epoch // 10)
            first = float(np.mean(epoch1[:head]))
            last = float(np.mean(epoch1[-head:]))
            assert last < first, f"seed {run['seed']}: {first:.4f} -> {last:.4f}"


def test_separator_embedding_semantics(end_to_end_runs):
    with criterion("separator embedding semantics (d('=','&') < d('a','&') in >= 2 of 3 seeds)"):
        wins = 0
        for run in end_to_end_runs["runs"]:
            d_sep = embedding_distance(run["params"], "=", "&")
            d_letter = embedding_distance(run["params"], "a", "&")
            print(f"  seed {run['seed']}: d('=','&')={d_sep:.3f} d('a','&')={d_letter:.3f}")
            if d_sep < d_letter:
                wins += 1
        assert wins >= 2, f"directional inequality held in only {wins} of 3 seeds"


def test_relearning_efficacy(tmp_path, capsys):
    with criterion("re-learning efficacy (capture, 50 labels via CLI, auto retrain, recall up)"):
        started = time.monotonic()
        held_family = ("dt", "double_encoded")

        corpus = generate_synthetic(
            TABLE1_COUNTS, seed=101, exclude_families=[":".join(held_family)]
        )
        train_set, test_set = stratified_split(corpus, 0.2, seed=101)
        initial = init_params(ModelConfig(seed=101))
        trained, _ = train(initial, train_set, TrainConfig(epochs=3, seed=101))
        pre_report = evaluate_model(trained, test_set)

        config = ServiceConfig(
            data_dir=str(tmp_path / "gwdata"),
            confidence_threshold=0.95,
            sampling_rate=1.0,
            retrain_trigger_count=50,
            auto_retrain=True,
            retrain_epochs=3,
            retrain_seed=101,
        )
        gateway = Gateway(config, params=trained, seed_corpus=train_set)
        server = GatewayServer(gateway, port=0).start()
        try:
            stream = generate_family(*held_family, count=80, seed=555)
            for sample in stream:
                resp = requests.post(f"{server.url}/v1/classify", json={"text": sample.text})
                assert resp.status_code == 200

            pending = requests.get(f"{server.url}/v1/review/pending?limit=100").json()["items"]
            assert len(pending) >= 50, f"only {len(pending)} captures appeared"
            assert all(item["confidence"] < 0.95 for item in pending)
            print(f"  captured {len(pending)} of 80 streamed samples")

            eval_family = generate_family(*held_family, count=100, seed=556)
            pre_recall = float(
                np.mean([predict(trained, s.text).predicted_class == "dt" for s in eval_family])
            )

            # label 50 through the headless review CLI; the 50th firing the retrain
            assert cli_main(["review", "list", "--server", server.url, "--limit", "50", "--json"]) == 0
            page = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
            assert len(page["items"]) == 50
            for item in page["items"]:
                code = cli_main(
                    ["review", "label", "--server", server.url, "--id", item["id"], "--label", "dt"]
                )
                assert code == 0
            capsys.readouterr()

            gateway.wait_for_retrain(timeout=480)
            status = requests.get(f"{server.url}/v1/admin/status").json()
            assert status["retrain"]["status"] == "idle", status["retrain"]
            assert status["model_version"] == trained.version + 1

            post_preds = []
            for s in eval_family:
                body = requests.post(f"{server.url}/v1/classify", json={"text": s.text}).json()
                assert body["model_version"] == trained.version + 1
                post_preds.append(body["class"])
            post_recall = float(np.mean([p == "dt" for p in post_preds]))
            print(f"  held-out family recall: {pre_recall:.2f} -> {post_recall:.2f}")
            assert post_recall > pre_recall

            new_params = load_model(tmp_path / "gwdata" / "model.ccnn")
            post_report = evaluate_model(new_params, test_set)
            for label in CLASSES:
                drop = pre_report.recall[label] - post_report.recall[label]
                assert drop <= 0.02 + 1e-9, f"{label} recall dropped {drop * 100:.1f}pp"
        finally:
            server.stop()
        elapsed = time.monotonic() - started
        print(f"  elapsed {elapsed:.0f} s")
        assert elapsed <= 600


def test_hot_swap_atomicity(tmp_path):
    with criterion("hot-swap atomicity (1000 concurrent classifications across a swap)"):
        old = small_params(seed=5, version=0)
        new = small_params(seed=6, version=1)
        config = ServiceConfig(data_dir=str(tmp_path / "swap"), sampling_rate=0.0)
        gateway = Gateway(config, params=old)
        by_version = {0: old, 1: new}

        results = []
        results_lock = threading.Lock()
        barrier = threading.Barrier(9)

        def worker(worker_id):
            barrier.wait()
            for i in range(125):
                text = f"w{worker_id}-{i}=v"
                resp = gateway.classify(text)
                with results_lock:
                    results.append((text, resp))

        def swapper():
            barrier.wait()
            time.sleep(0.01)
            gateway.swap_model(new)

        threads = [threading.Thread(target=worker, args=(w,)) for w in range(8)]
        threads.append(threading.Thread(target=swapper))
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        assert len(results) == 1000
        versions = {resp["model_version"] for _, resp in results}
        assert versions <= {0, 1}
        assert 1 in versions
        for text, resp in results:
            replayed = predict(by_version[resp["model_version"]], text)
            assert np.array_equal(np.asarray(resp["probs"]), replayed.probs), (
                f"response for {text!r} inconsistent with stamped version"
            )
        print(f"  versions observed mid-burst: {sorted(versions)}")


def test_determinism(tmp_path):
    with criterion("determinism (train, gen-data, balance, split bit-identical)"):
        def cli(args):
            assert cli_main([str(a) for a in args]) == 0

        outputs = {}
        for tag in ("one", "two"):
            d = tmp_path / tag
            d.mkdir()
            cli(["gen-data", "--counts", "benign=40,sqli=20,xss=20", "--seed", 9, "-o", d / "c.jsonl"])
            cli(["balance", "-i", d / "c.jsonl", "-o", d / "b.jsonl", "--threshold", 30, "--seed", 9])
            cli([
                "split", "-i", d / "b.jsonl", "--train-out", d / "tr.jsonl",
                "--test-out", d / "te.jsonl", "--test-fraction", "0.25", "--seed", 9,
            ])
            cli([
                "train", "--corpus", d / "tr.jsonl", "-o", d / "m.ccnn", "--seed", 9,
                "--epochs", "2", "--batch-size", "16",
                "--k", "4", "--filter-heights", "2,3", "--filters-per-height", "2",
                "--max-seq-len", "16",
            ])
            outputs[tag] = {
                name: (d / name).read_bytes()
                for name in ("c.jsonl", "b.jsonl", "tr.jsonl", "te.jsonl", "m.ccnn")
            }
        for name in outputs["one"]:
            assert outputs["one"][name] == outputs["two"][name], f"{name} differs between runs"


def test_metrics_definitions():
    with criterion("metrics definitions (hand-built confusion fixtures exact)"):
        # 1000 benign with 2 false alarms -> FPR exactly 0.2%
        spec = [("benign", "benign")] * 998 + [("benign", "sqli"), ("benign", "dt")]
        corpus, classify = make_corpus(spec)
        report = evaluate(corpus, classify)
        assert report.fpr == 0.002

        # two-class fixture [[8,2],[1,9]]
        spec = (
            [("benign", "benign")] * 8
            + [("benign", "sqli")] * 2
            + [("sqli", "benign")]
            + [("sqli", "sqli")] * 9
        )
        corpus, classify = make_corpus(spec)
        report = evaluate(corpus, classify)
        assert report.precision["benign"] == 8 / 9
        assert report.recall["benign"] == 0.8
        assert report.fpr == 0.2

        # CNN and baseline reports share one schema
        from qshield.baseline import BaselineConfig, baseline_train_eval
        from qshield.data import LabeledSample

        train_corpus = [
            LabeledSample(id=f"a{i}", text=f"id={i}&q=ok", label="benign") for i in range(10)
        ] + [
            LabeledSample(id=f"b{i}", text=f"id={i}' OR '1'='1", label="sqli") for i in range(10)
        ]
        baseline_report = baseline_train_eval(train_corpus, train_corpus, BaselineConfig(epochs=2))
        cnn_report = evaluate(corpus, classify)
        assert set(baseline_report.to_dict()) == set(cnn_report.to_dict())


def test_model_file_round_trip(tmp_path):
    with criterion("model file round trip (1e-5 probs, distinct corruption errors)"):
        params = small_params(seed=12)
        path = tmp_path / "model.ccnn"
        save_model(params, path)
        loaded = load_model(path)
        rng = np.random.default_rng(0)
        for _ in range(100):
            text = "".join(chr(c) for c in rng.integers(32, 127, size=int(rng.integers(1, 48))))
            a = predict(params, text).probs
            b = predict(loaded, text).probs
            assert np.max(np.abs(a - b)) <= 1e-5

        raw = path.read_bytes()

        truncated = tmp_path / "truncated.ccnn"
        truncated.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(ChecksumMismatchError):
            load_model(truncated)

        flipped = bytearray(raw)
        flipped[len(flipped) // 2] ^= 0x5A
        corrupt = tmp_path / "corrupt.ccnn"
        corrupt.write_bytes(bytes(flipped))
        with pytest.raises(ChecksumMismatchError):
            load_model(corrupt)

        bad_magic = bytearray(raw)
        bad_magic[:4] = b"WXYZ"
        magic_path = tmp_path / "magic.ccnn"
        magic_path.write_bytes(bytes(bad_magic))
        with pytest.raises(BadMagicError):
            load_model(magic_path)

        other_vocab = params.copy()
        other_vocab.vocab_hash = "deadbeefdeadbeef"
        vocab_path = tmp_path / "vocab.ccnn"
        save_model(other_vocab, vocab_path)
        with pytest.raises(VocabMismatchError):
            load_model(vocab_path)

        import zlib

        garbled = bytearray(raw)
        header_len = int.from_bytes(garbled[8:12], "little")
        garbled[12 : 12 + header_len] = b"\x00" * header_len
        garbled[-4:] = (zlib.crc32(bytes(garbled[:-4])) & 0xFFFFFFFF).to_bytes(4, "little")
        header_path = tmp_path / "header.ccnn"
        header_path.write_bytes(bytes(garbled))
        with pytest.raises(HeaderError):
            load_model(header_path)
