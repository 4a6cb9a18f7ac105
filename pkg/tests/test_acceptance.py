"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary,
so they appear in the log even when output capture is on. Run directly with
``python3 -m pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import math
import shutil
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import brute_force_mv, central_difference, grid_modes, random_bank, same_partition, tiny_encoder
from mml.cli import main as cli_main
from mml.data import (BINARY_NLI_CLASSES, NLI_CLASSES, binarize_stsb, collapse_nli_labels, load_toy, load_tsv,
                      native_spec, separation_for_bayes, synth_gaussian, toy_path)
from mml.encoder import encode_backward, encode_batch
from mml.evaluation import evaluate
from mml.meanshift import mean_shift_1d, min_centroid_members
from mml.multiverse import (HeadBank, TaskKind, aggregate_inference, aggregate_logits, mean_off_diagonal,
                            multiverse_loss, orthogonality_tables, total_loss)
from mml.numerics import make_rng, softmax
from mml.trainer import Trainer, TrainerConfig
from reference_trainer import reference_trajectory

FIXTURES = Path(__file__).parent / "fixtures"
RESULTS: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


# --- gradient correctness -------------------------------------------------------------------------

def test_gradient_correctness():
    rng = make_rng(2024)
    start = time.perf_counter()
    worst, n_instances = 0.0, 24
    for trial in range(n_instances):
        d = int(rng.integers(2, 17))
        m = int(rng.integers(1, 9))
        c = int(rng.integers(2, 4))
        n = int(rng.integers(1, 5))
        lam = float(rng.choice([0.005, 0.1, 1.0]))
        enc = tiny_encoder(rng, feature_dim=int(rng.integers(3, 9)), hidden=(int(rng.integers(2, 7)),), out=d)
        active = rng.random(m) < 0.75
        active[rng.integers(m)] = True
        bank = random_bank(rng, m, d, c, active)
        X = rng.normal(size=(n, enc.feature_dim))
        y = rng.integers(0, c, size=n)
        kind = TaskKind.classification(c)

        def loss():
            Z, _ = encode_batch(enc, X)
            return total_loss(bank, Z, y, kind, lam).total

        Z, cache = encode_batch(enc, X)
        res = total_loss(bank, Z, y, kind, lam)
        enc_grads, _ = encode_backward(enc, cache, res.grad_coding)
        pairs = [(res.grad_weights, bank.weights), (res.grad_biases, bank.biases)]
        pairs += [(enc_grads[k], p) for k, p in enc.parameters().items()]
        for analytic, param in pairs:
            numeric = central_difference(loss, param)
            err = np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)))
            worst = max(worst, float(err))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 30
    assert record("gradient correctness", ok,
                  f"{n_instances} instances, max rel err {worst:.2e} (<= 1e-4), {elapsed:.1f}s (< 30s)")


# --- orthogonality-loss oracle --------------------------------------------------------------------

def test_orthogonality_oracle():
    rng = make_rng(77)
    worst_loss = worst_table = 0.0
    for _ in range(100):
        m, d, c = int(rng.integers(1, 10)), int(rng.integers(1, 12)), int(rng.integers(1, 4))
        bank = random_bank(rng, m, d, c, rng.random(m) < 0.7)
        oracle = brute_force_mv(bank.weights, bank.beta)
        got = multiverse_loss(bank)
        tables = orthogonality_tables(bank)
        active = bank.active
        upper = math.fsum(tables[k, r, s] for k in range(c) for r in active for s in active if r < s)
        scale = max(1.0, abs(oracle))
        worst_loss = max(worst_loss, abs(got - oracle) / scale)
        worst_table = max(worst_table, abs(upper - oracle) / scale)
    ok = worst_loss <= 1e-12 and worst_table <= 1e-12
    assert record("orthogonality-loss oracle", ok,
                  f"100 banks, loss err {worst_loss:.1e}, table upper-triangle err {worst_table:.1e} (<= 1e-12)")


# --- MeanShift oracle -----------------------------------------------------------------------------

def test_meanshift_oracle():
    rng = make_rng(31)
    matched = selected = 0
    for _ in range(50):
        k = int(rng.integers(1, 6))
        bw = float(rng.uniform(0.005, 0.5))
        centers = np.cumsum(rng.uniform(10.5, 15, size=k)) * bw
        truth = np.repeat(np.arange(k), rng.integers(1, 7, size=k))
        values = centers[truth] + rng.uniform(-bw / 8, bw / 8, size=truth.size)
        perm = rng.permutation(values.size)
        values, truth = values[perm], truth[perm]

        result = mean_shift_1d(values, bw)
        oracle, modes = grid_modes(values, bw)
        if result.n_clusters == len(modes) == k and same_partition(result.assignment, oracle):
            matched += 1
        # exhaustive min-centroid check: the chosen members are exactly those whose oracle mode is lowest
        ids = rng.permutation(1000)[:values.size]
        chosen = set(min_centroid_members(result, ids).tolist())
        expected = {int(ids[i]) for i in range(values.size) if oracle[i] == 0}
        selected += chosen == expected
    ok = matched == 50 and selected == 50
    assert record("MeanShift oracle", ok, f"partition match {matched}/50, min-centroid selection {selected}/50")


# --- head-pruning dynamics -------------------------------------------------------------------------

DYN = dict(m=32, K=50, threshold=5, alpha=1e-2, lam=0.005, batch_size=16, epochs=20,
           feature_dim=1024, hidden_dims=(64,), coding_dim=32)


def synthetic(seed, sample_seed=0, n=400):
    return synth_gaussian(n, 16, 2, separation_for_bayes(0.9), 1.0, seed=seed, informative=3,
                          sample_seed=sample_seed)


def test_pruning_dynamics():
    start = time.perf_counter()
    monotone = frozen = True
    seeds_with_elims = 0
    details = []
    for seed in range(5):
        snaps = {}

        def watch(tr, rec):
            snaps[rec.step] = (tr.model.bank.weights.copy(), tr.model.bank.biases.copy())

        res = Trainer(TrainerConfig(seed=seed, **DYN), synthetic(seed), on_step=watch).run()
        steps = res.trace.steps
        for prev, cur in zip(steps, steps[1:]):
            if cur.active_heads > prev.active_heads or (cur.active_heads < prev.active_heads and cur.step % 50):
                monotone = False
        events = [(p.step, j) for p in res.trace.prunes for j in p.eliminated]
        seeds_with_elims += bool(events)
        for step, j in events:
            W, b = snaps[step]
            frozen &= all(np.array_equal(snaps[s][0][j], W[j]) and np.array_equal(snaps[s][1][j], b[j])
                          for s in snaps if s >= step)
        details.append(f"{steps[-1].active_heads}")
    elapsed = time.perf_counter() - start
    ok = monotone and frozen and seeds_with_elims >= 4 and elapsed < 120
    assert record("head-pruning dynamics", ok,
                  f"monotone at multiples of K: {monotone}; eliminations on {seeds_with_elims}/5 seeds (>= 4); "
                  f"frozen bitwise: {frozen}; final heads {'/'.join(details)}; {elapsed:.1f}s (< 120s)")


# --- degenerate equivalence -----------------------------------------------------------------------

def test_degenerate_equivalence():
    cfg = TrainerConfig(m=1, lam=0.0, prune_enabled=False, alpha=1e-2, batch_size=16, epochs=50, max_steps=500,
                        seed=11, feature_dim=512, hidden_dims=(32,), coding_dim=16)
    ds = load_toy()
    ours = []
    Trainer(cfg, ds, on_step=lambda tr, rec: ours.append(
        (tr.model.encoder.flatten(), tr.model.bank.weights[0].copy(), tr.model.bank.biases[0].copy()))).run()
    ref = [(e.flatten(), W.copy(), b.copy()) for _, e, W, b in reference_trajectory(cfg, ds, 500)]
    identical = sum(all(np.array_equal(a, b) for a, b in zip(x, y)) for x, y in zip(ours, ref))
    ok = len(ours) == len(ref) == 500 and identical == 500
    assert record("degenerate equivalence", ok, f"{identical}/500 steps bitwise identical to the reference trainer")


# --- multiverse benefit ---------------------------------------------------------------------------

def test_multiverse_benefit():
    mml_acc, base_acc, reductions, single = [], [], [], 0
    for seed in range(10):
        train_ds, dev = synthetic(seed), synthetic(seed, sample_seed=1, n=1000)
        mml = Trainer(TrainerConfig(seed=seed, **DYN), train_ds).run()
        base = Trainer(TrainerConfig(seed=seed, **(DYN | dict(m=1, lam=0.0, prune_enabled=False))), train_ds).run()
        mml_acc.append(evaluate(mml.model, dev).value)
        base_acc.append(evaluate(base.model, dev).value)
        survivors = mml.model.bank.active
        if survivors.size < 2:
            single += 1
            continue
        before = mean_off_diagonal(orthogonality_tables(mml.initial_bank), survivors)
        after = mean_off_diagonal(orthogonality_tables(mml.model.bank), survivors)
        reductions.append(1.0 - after / before)
    mean_mml, mean_base = float(np.mean(mml_acc)), float(np.mean(base_acc))
    ok = mean_mml >= mean_base and reductions and min(reductions) >= 0.5
    assert record("multiverse benefit", bool(ok),
                  f"mean dev acc MML {mean_mml:.4f} vs baseline {mean_base:.4f}; survivor orthogonality reduced "
                  f"{100 * min(reductions):.0f}%..{100 * max(reductions):.0f}% (>= 50%) on {len(reductions)} seeds "
                  f"with >= 2 survivors ({single} seeds kept a single head)")


# --- label transforms -----------------------------------------------------------------------------

def test_label_transform_golden():
    nli = load_tsv(FIXTURES / "nli12.tsv", native_spec("nli12", TaskKind.classification(3), NLI_CLASSES))
    collapsed = collapse_nli_labels(nli)
    raw = {e.id: NLI_CLASSES[e.label] for e in nli.examples}
    want = {i: "entailment" if v == "entailment" else "not_entailment" for i, v in raw.items()}
    got = {e.id: BINARY_NLI_CLASSES[e.label] for e in collapsed.examples}
    nli_ok = got == want and len(collapsed) == 12

    sts = load_tsv(FIXTURES / "stsb12.tsv", native_spec("stsb12", TaskKind.regression()))
    binary = binarize_stsb(sts)
    sts_got = {e.id: e.label for e in binary.examples}
    sts_want = {"s1": 0, "s2": 0, "s3": 0, "s12": 0, "s9": 1, "s10": 1, "s11": 1}
    sts_ok = sts_got == sts_want and set(binary.dropped) == {"s4", "s5", "s6", "s7", "s8"}
    assert record("label-transform golden tests", nli_ok and sts_ok,
                  f"collapse-nli 12/12 {'exact' if nli_ok else 'MISMATCH'}; binarize-stsb kept {len(binary)}, "
                  f"dropped {len(binary.dropped)} from the (2,4) band {'exact' if sts_ok else 'MISMATCH'}")


# --- reproducibility ------------------------------------------------------------------------------

def test_reproducibility_from_manifest(tmp_path):
    for name in ("toy.tsv", "toy_dev.tsv", "toy.ini"):
        shutil.copy(toy_path().with_name(name), tmp_path / name)
    ini = (tmp_path / "toy.ini").read_text().replace("epochs = 20", "epochs = 5")
    (tmp_path / "toy.ini").write_text(ini)
    assert cli_main(["train", "--config", str(tmp_path / "toy.ini"), "--out", str(tmp_path / "seed_run")]) == 0
    manifest = tmp_path / "seed_run" / "run_manifest.json"
    for out in ("a", "b"):
        assert cli_main(["train", "--config", str(manifest), "--out", str(tmp_path / out)]) == 0
    names = ["trace.csv", "prunes.csv", "prune_ema.csv", "checkpoint.bin", "best.bin"]
    same = [n for n in names if (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()]
    assert record("reproducibility", same == names, f"{len(same)}/{len(names)} artifacts byte-identical "
                                                     f"across two runs of one manifest")


# --- inference aggregation ------------------------------------------------------------------------

def test_inference_aggregation():
    rng = make_rng(8)
    worst, permuted_ok = 0.0, True
    for _ in range(50):
        m, d, c = int(rng.integers(2, 9)), int(rng.integers(1, 9)), int(rng.integers(2, 5))
        bank = random_bank(rng, m, d, c)
        z = rng.normal(size=d)
        j = int(rng.integers(m))
        solo = HeadBank(bank.weights, bank.biases, np.arange(m) == j)
        p = aggregate_inference(solo, z, TaskKind.classification(c)).probabilities
        worst = max(worst, float(np.max(np.abs(p - softmax(z @ bank.weights[j] + bank.biases[j])))))

        bank.beta = rng.random(m) < 0.6
        bank.beta[0] = True
        Z = rng.normal(size=(5, d))
        perm = rng.permutation(m)
        shuffled = HeadBank(bank.weights[perm], bank.biases[perm], bank.beta[perm])
        a, b = aggregate_logits(bank, Z), aggregate_logits(shuffled, Z)
        permuted_ok &= np.array_equal(a, b) and np.array_equal(np.argmax(a, 1), np.argmax(b, 1))
    ok = worst <= 1e-12 and permuted_ok
    assert record("inference aggregation", bool(ok),
                  f"single head vs its softmax max err {worst:.1e} (<= 1e-12); permutation invariant: {permuted_ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
