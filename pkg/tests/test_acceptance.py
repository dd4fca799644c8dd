"""Acceptance suite: one PASS/FAIL line per criterion.

The lines are printed in the pytest terminal summary (see conftest.py) and
also when the module is run directly with ``python3 tests/test_acceptance.py``.
"""

import hashlib
import math
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from defraudnet import attention, densenet, ops
from defraudnet.attention import AttentionConfig
from defraudnet.densenet import DenseNetConfig
from defraudnet.errors import FormatError
from defraudnet.evaluation import (
    ConfusionCounts,
    DatasetManifest,
    compute_ace,
    default_loader,
    evaluate,
    run_protocol,
)
from defraudnet.gradcheck import check_model
from defraudnet.model import build_model, desk_config, full_config, fuse_patches, model_param_count, submodule
from defraudnet.preproc import GaborConfig, assemble_channels, gabor_kernel, gabor_response, lbp_codes
from defraudnet.synthetic import SynthConfig, generate_dataset, generate_sample
from defraudnet.tensor import ParamStore, Tensor
from defraudnet.training import (
    TrainConfig,
    checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint,
    sample_loss,
    save_checkpoint,
    train,
    write_epoch_log,
)

from helpers import StubModel
from oracles import (
    conv2d_loops,
    correlate_reflect_loops,
    gabor_kernel_loops,
    linear_loops,
    pool_loops,
    reduce_channels_loops,
)

RESULTS: dict[int, list[tuple[bool, str]]] = {}
TITLES = {
    1: "gradient correctness (h=1e-3)",
    2: "operator oracles",
    3: "attention invariants",
    4: "LBP suite",
    5: "parameter-count anchor",
    6: "end-to-end learning",
    7: "overfit sanity",
    8: "protocol harness",
    9: "determinism and persistence",
}
# joint 8-image steps keep Network-1 norm statistics meaningful in eval mode
E2E_STEP = 8
E2E_BUDGET_S = 600.0


def record(n: int, ok: bool, detail: str):
    RESULTS.setdefault(n, []).append((bool(ok), detail))
    print(summary_line(n))
    assert ok, summary_line(n)


def summary_line(n: int) -> str:
    parts = RESULTS.get(n)
    if not parts:
        return f"criterion {n} {TITLES[n]}: NOT RUN"
    verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
    return f"criterion {n} {TITLES[n]}: {verdict} ({'; '.join(d for _, d in parts)})"


def synth_image(seed=0, cls="fake"):
    return assemble_channels(generate_sample(SynthConfig(), cls, np.random.default_rng(seed)))


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------- 1

def test_criterion_1_gradient_check():
    model = build_model(desk_config(), seed=0)
    t0 = time.perf_counter()
    rep = check_model(model, synth_image(1), 1, n_coords=500, h=1e-3, seed=0)
    elapsed = time.perf_counter() - t0
    covered = rep.submodules() == {submodule(n) for n in model.params}
    frac = rep.pass_fraction(1e-2)
    ok = frac >= 0.99 and covered and elapsed <= 300
    record(1, ok, f"{frac:.1%} of 500 coords within rel err 1e-2, need 99%; "
                  f"all submodules sampled: {covered}; {elapsed:.0f}s")


def test_gradient_check_small_step_supplementary():
    """Same check at h=1e-6: the analytic gradients agree once steps stop crossing ReLU kinks."""
    model = build_model(desk_config(), seed=0)
    rep = check_model(model, synth_image(1), 1, n_coords=500, h=1e-6, seed=0)
    assert rep.pass_fraction(1e-2) >= 0.99


# ---------------------------------------------------------------- 2

def test_criterion_2_operator_oracles():
    rng = np.random.default_rng(2)
    worst = {}

    def track(name, got, want):
        worst[name] = max(worst.get(name, 0.0), float(np.max(np.abs(got - want))))

    for _ in range(50):
        c, o, k = (int(v) for v in rng.integers(1, 4, size=3))
        h, w = (int(v) for v in rng.integers(k + 2, 17, size=2))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x, wt, b = rng.normal(size=(c, h, w)), rng.normal(size=(o, c, k, k)), rng.normal(size=o)
        track("conv", ops.conv2d(T(x), T(wt), T(b), stride, pad).data, conv2d_loops(x, wt, b, stride, pad))

        win, st = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        for kind in ("max", "avg"):
            track("pool", ops.pool2d(T(x), kind, win, st).data, pool_loops(x, kind, win, st))

        d, m = int(rng.integers(1, 17)), int(rng.integers(1, 17))
        v, W, bb = rng.normal(size=d), rng.normal(size=(m, d)), rng.normal(size=m)
        track("linear", ops.fully_connected(T(v), T(W), T(bb)).data, linear_loops(v, W, bb))

        for kind in ("avg", "max"):
            track("channel-reduce", ops.reduce_channels(T(x), kind).data, reduce_channels_loops(x, kind))

        gcfg = GaborConfig(kernel_size=int(rng.choice([3, 5, 7])), theta=float(rng.uniform(0, math.pi)),
                           sigma=float(rng.uniform(1, 3)), lambd=float(rng.uniform(3, 8)), gamma=float(rng.uniform(0.3, 1)))
        img = rng.uniform(size=(int(rng.integers(8, 17)), int(rng.integers(8, 17))))
        kern = gabor_kernel(gcfg)
        track("gabor-kernel", kern, gabor_kernel_loops(gcfg.kernel_size, gcfg.theta, gcfg.sigma, gcfg.lambd,
                                                       gcfg.gamma, gcfg.psi))
        track("gabor", gabor_response(img, gcfg), correlate_reflect_loops(img, kern))
    ok = all(v <= 1e-5 for v in worst.values())
    record(2, ok, "50 cases each, max abs err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# ---------------------------------------------------------------- 3

def attn_store(c, n, cfg, seed=0, zero=False):
    store = ParamStore()
    attention.init_params(store, "a", c, n, cfg, np.random.default_rng(seed))
    store = store.astype(np.float64)
    if zero:
        attention.zero_init(store, "a")
    return store


def test_criterion_3_attention_invariants():
    rng = np.random.default_rng(3)
    cfg0 = desk_config()
    c, n = densenet.plan_network(cfg0.net2).out_channels, cfg0.n_patches
    half = True
    for mode in ("cross", "shared"):
        cfg = AttentionConfig(patch_mode=mode)
        store = attn_store(c, n, cfg, zero=True)
        for _ in range(5):
            _, pw, cw, sm = attention.attend_patches(T(rng.normal(size=(n, c, 4, 4))), store, "a", cfg)
            half &= all(np.all(t.data == 0.5) for t in (pw, cw, sm))

    cfg = AttentionConfig()
    store = attn_store(c, n, cfg, seed=1)
    inside = True
    for _ in range(1000):
        f = rng.normal(scale=rng.uniform(0.1, 3), size=(n, c, 3, 3))
        _, pw, cw, sm = attention.attend_patches(T(f), store, "a", cfg)
        inside &= all(np.all((t.data > 0) & (t.data < 1)) for t in (pw, cw, sm))

    scfg = AttentionConfig(patch_mode="shared")
    sstore = attn_store(c, n, scfg, seed=2)
    equi = True
    for _ in range(50):
        f = rng.normal(size=(n, c, 4, 4))
        perm = rng.permutation(n)
        _, w, _, _ = attention.attend_patches(T(f), sstore, "a", scfg)
        _, wp, _, _ = attention.attend_patches(T(f[perm]), sstore, "a", scfg)
        equi &= np.array_equal(w.data[perm], wp.data)

    exact, general = True, 0.0
    for _ in range(50):
        pooled, w = rng.normal(size=(n, 5)), rng.uniform(0.05, 1, size=n)
        base = fuse_patches(T(pooled), T(w)).data
        for s in (0.125, 0.5, 2.0, 1024.0):
            exact &= np.array_equal(fuse_patches(T(pooled), T(s * w)).data, base)
        s = float(rng.uniform(0.01, 100))
        general = max(general, float(np.max(np.abs(fuse_patches(T(pooled), T(s * w)).data - base) / np.abs(base))))
    ok = half and inside and equi and exact
    record(3, ok, f"zero-init all 0.5: {half}; 1000 inputs inside (0,1): {inside}; "
                  f"shared-mode equivariance exact: {equi}; fusion scaling exact for power-of-two factors: {exact}, "
                  f"max rel dev for arbitrary factors {general:.1e}")


# ---------------------------------------------------------------- 4

def test_criterion_4_lbp_suite():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, size=(64, 64)).astype(np.uint8)
    codes = lbp_codes(img)
    ten = sorted(np.unique(codes).tolist()) == list(range(10))

    remap_ok = 0
    for _ in range(20):
        knots = np.sort(rng.choice(np.arange(1, 255), 6, replace=False))
        xs = np.concatenate([[0], knots, [255]])
        ys = np.maximum.accumulate(np.concatenate([[0], np.sort(rng.uniform(0, 255, 6)), [255]]) + np.arange(8) * 1e-3)
        remap_ok += np.array_equal(codes, lbp_codes(np.interp(img.astype(np.float64), xs, ys)))

    const = lbp_codes(np.full((9, 9), 128, np.uint8))
    const_ok = np.all(const[1:-1, 1:-1] == 8) and np.all(const[0] == 9) and np.all(const[-1] == 9)
    imp = np.zeros((9, 9), np.uint8)
    imp[4, 4] = 255
    imp_codes = lbp_codes(imp)
    impulse_ok = imp_codes[4, 4] == 0 and all(imp_codes[4 + dy, 4 + dx] != 0 for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                                               if dy or dx)
    ok = ten and remap_ok == 20 and const_ok and impulse_ok
    record(4, ok, f"10 distinct codes: {ten}; monotone remaps equal {remap_ok}/20; "
                  f"constant fixture: {bool(const_ok)}; impulse fixture: {bool(impulse_ok)}")


# ---------------------------------------------------------------- 5

def test_criterion_5_param_count_anchor():
    bc = densenet.param_count(densenet.plan_network(DenseNetConfig(100, 12, bottleneck=True, input_size=32,
                                                                   num_classes=10)))
    full = model_param_count(full_config())
    ok = abs(bc - 0.8e6) / 0.8e6 <= 0.05 and abs(full - 2.74e6) / 2.74e6 <= 0.25
    record(5, ok, f"DenseNet-BC(100,12) {bc:,} ({(bc - 0.8e6) / 0.8e6:+.1%} vs 0.8M); "
                  f"full-size DeFraudNet {full:,} ({(full - 2.74e6) / 2.74e6:+.1%} vs 2.74M, informational)")


# ---------------------------------------------------------------- 6

def end_to_end(tmp_path, delta):
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        generate_dataset(SynthConfig(count=64, delta=delta, seed=0), tmp_path, splits=("train", "test"))
        man = DatasetManifest.load(tmp_path / "manifest.jsonl")
        load = default_loader()
        tr = man.split("train")
        data = [(load(tr.resolve(e)), e.label_index) for e in tr.entries]
        res = train(build_model(desk_config(), seed=0), data,
                    TrainConfig(epochs=50, seed=0, fingerprints_per_step=E2E_STEP))
        report = evaluate(res.model, man, "test", loader=load)
    return report, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_6_end_to_end_delta_one(tmp_path):
    report, elapsed = end_to_end(tmp_path, 1.0)
    ok = report.ace < 10 and elapsed <= E2E_BUDGET_S
    record(6, ok, f"delta=1 test ACE {report.ace:.2f} (need < 10) in {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_6_end_to_end_delta_zero(tmp_path):
    report, elapsed = end_to_end(tmp_path, 0.0)
    ok = 40 <= report.ace <= 60 and elapsed <= E2E_BUDGET_S
    record(6, ok, f"delta=0 test ACE {report.ace:.2f} (need 40-60) in {elapsed:.0f}s")


# ---------------------------------------------------------------- 7

def test_criterion_7_overfit_sanity():
    m0 = build_model(desk_config(zero_init_head=True), seed=0)
    loss0, _ = sample_loss(m0, synth_image(7), 1)
    init_ok = abs(loss0.item() - math.log(2)) <= 0.01

    rng = np.random.default_rng(7)
    cfg = SynthConfig(delta=1.0)
    data = [(assemble_channels(generate_sample(cfg, cls, rng)), lbl)
            for _ in range(16) for cls, lbl in (("live", 0), ("fake", 1))]
    res = train(build_model(desk_config(), seed=0), data, TrainConfig(epochs=200, seed=0),
                stop_when=lambda r: r["loss"] < 0.05)
    final = res.log[-1]["loss"]
    ok = init_ok and final < 0.05
    record(7, ok, f"initial loss {loss0.item():.6f} vs ln2 {math.log(2):.6f}; "
                  f"32-sample loss {final:.4f} after {len(res.log)} epochs (need < 0.05 within 200)")


# ---------------------------------------------------------------- 8

def test_criterion_8_protocol_harness(tmp_path):
    generate_dataset(SynthConfig(count=2, seed=8), tmp_path, sensors=("synA", "synB"),
                     materials=("gelatin", "latex"), years=("2015", "2017"), splits=("train", "test"))
    full = DatasetManifest.load(tmp_path / "manifest.jsonl")

    def pick(sensor, year, material, split):
        return DatasetManifest([e for e in full.entries if e.sensor == sensor and e.year == year and e.split == split
                                and e.material in ("live", material)], full.root)

    cells = [(s, y, m) for s in ("synA", "synB") for y in ("2015", "2017") for m in ("gelatin", "latex")]
    wrong = 0
    for tc in cells:
        train_man = pick(*tc, "train")
        tests = [pick(*c, "test") for c in cells]
        reports = run_protocol(StubModel(lambda img: 0), train_man, tests, loader=lambda p: np.zeros(1))
        for c, r in zip(cells, reports):
            same_s, same_y, same_m = c[0] == tc[0], c[1] == tc[1], c[2] == tc[2]
            want = ("intra-same-material" if same_m else "intra-cross-material") if same_s and same_y else (
                "cross-sensor" if same_y else "cross-dataset" if same_s else "other")
            wrong += r.protocol != want
    pairings = len(cells) ** 2

    fixtures = [
        (ConfusionCounts(100, 2, 100, 4), (2.0, 4.0, 3.0)),
        (ConfusionCounts(10, 0, 10, 0), (0.0, 0.0, 0.0)),
        (ConfusionCounts(10, 10, 10, 10), (100.0, 100.0, 100.0)),
        (ConfusionCounts(50, 0, 50, 50), (0.0, 100.0, 50.0)),
        (ConfusionCounts(8, 1, 4, 1), (12.5, 25.0, 18.75)),
    ]
    ace_ok = all((r.f_errlive, r.f_errfake, r.ace) == want for r, want in
                 ((compute_ace(cc), w) for cc, w in fixtures))
    ok = wrong == 0 and ace_ok
    record(8, ok, f"{pairings - wrong}/{pairings} train/test pairings labelled as the metadata rules dictate; "
                  f"ACE fixtures exact: {ace_ok}")


# ---------------------------------------------------------------- 9

def test_criterion_9_determinism_and_persistence(tmp_path):
    rng = np.random.default_rng(9)
    data = [(assemble_channels(generate_sample(SynthConfig(), cls, rng)), lbl)
            for _ in range(3) for cls, lbl in (("live", 0), ("fake", 1))]
    blobs, logs = [], []
    for run in range(2):
        res = train(build_model(desk_config(), seed=5), data, TrainConfig(epochs=2, seed=5))
        path = tmp_path / f"run{run}.ckpt"
        save_checkpoint(path, res.model, res.state, len(res.log), res.rng_state)
        write_epoch_log(res.log, tmp_path / f"run{run}.jsonl")
        blobs.append(path.read_bytes())
        logs.append((tmp_path / f"run{run}.jsonl").read_bytes())
    same_runs = blobs[0] == blobs[1] and logs[0] == logs[1]

    ck = load_checkpoint(tmp_path / "run0.ckpt")
    preds_equal = all(
        res.model.forward(x).logits.tobytes() == ck.model.forward(x).logits.tobytes()
        and res.model.forward(x).patch_weights.tobytes() == ck.model.forward(x).patch_weights.tobytes()
        for x, _ in data
    )
    resaved = checkpoint_bytes(ck.model, ck.state, ck.epoch, ck.rng_state, ck.meta) == blobs[1]

    buf = blobs[0]
    positions = sorted(set(rng.integers(0, len(buf), size=200).tolist()) | {0, 9, 13, len(buf) - 1})
    detected = 0
    for pos in positions:
        bad = bytearray(buf)
        bad[pos] ^= 0xFF
        try:
            parse_checkpoint(bytes(bad))
        except FormatError:
            detected += 1
    digest = hashlib.sha256(buf).hexdigest()[:12]
    ok = same_runs and preds_equal and resaved and detected == len(positions)
    record(9, ok, f"seeded runs bitwise identical: {same_runs} (sha256 {digest}); round-trip predictions bitwise: "
                  f"{preds_equal}; single-byte corruptions detected {detected}/{len(positions)}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
