"""Acceptance suite: one marker per criterion, summarised as PASS/FAIL lines at the end of the run.

The slow criteria (learnability, complementarity) train real models and take several minutes.
"""
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_model
from master_seg import experiments
from master_seg import numerics as nx
from master_seg.cli import main
from master_seg.config import RunConfig
from master_seg.dataio import SceneSpec, generate_scene, load_dataset, write_dataset
from master_seg.evaluation import ConfusionMatrix, IoUReport, format_report, iou, miou, reference_reports, top3
from master_seg.fusion import FusionConfig, assemble, fuse, init_fusion_params, tokenize
from master_seg.model import forward, init_params
from master_seg.numerics import Rng, Tensor
from master_seg.training import TrainConfig, evaluate, fit, load_checkpoint, save_checkpoint, seg_loss
from test_evaluation import brute_counts, brute_iou, grid_pair
from test_numerics import OPS, _case, weighted
from test_report import EXPECTED_TOP3, _row


# ---------------------------------------------------------------------------
# 1. gradcheck suite


@pytest.mark.criterion(1, "gradcheck suite (ops, MLP, end-to-end) < 1e-4 at float64 in < 60 s")
def test_gradcheck_suite(prompt_ids, tiny_data):
    t0 = time.perf_counter()
    worst = {}
    for name in OPS:
        for seed in range(20):
            rng = Rng(seed).child(name)
            inputs, op = _case(name, rng)
            w = rng.normal(size=op(*inputs).shape)
            err = nx.gradcheck(lambda xs: weighted(op(*xs), w), inputs)
            worst[name] = max(worst.get(name, 0.0), err)

    rng = Rng(11)
    x = Tensor(rng.normal(size=(5, 4)))
    ws = [Tensor(rng.normal(size=s), requires_grad=True) for s in [(4, 8), (8,), (8, 8), (8,), (8, 3), (3,)]]

    def mlp(ps):
        h = nx.gelu(nx.add(nx.matmul(x, ps[0]), ps[1]))
        h = nx.gelu(nx.add(nx.matmul(h, ps[2]), ps[3]))
        out = nx.add(nx.matmul(h, ps[4]), ps[5])
        return nx.mean(nx.mul(out, out))

    worst["mlp"] = nx.gradcheck(mlp, ws)

    cfg = tiny_model()
    params = init_params(cfg, 0, "float64")
    s = tiny_data[0]

    def loss():
        return seg_loss(forward(params, cfg, s.rgb, s.thermal, prompt_ids), s.labels, TrainConfig())

    nx.backward(loss())
    names = sorted(params)
    pick = Rng(1)
    e2e = 0.0
    for i in pick.gen.choice(len(names), size=5, replace=False):
        p = params[names[i]]
        idx = tuple(int(pick.integers(0, d)) for d in p.shape)
        num = nx.numerical_grad(lambda: loss().item(), p.data, idx)
        e2e = max(e2e, nx.rel_error(p.grad[idx], num))
    worst["end_to_end"] = e2e
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    assert not bad, bad
    assert elapsed < 60, f"{elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 2. metric oracle equivalence


@pytest.mark.criterion(2, "streaming IoU/mIoU equals a brute-force counting oracle; pinned 7/12 case")
def test_pinned_case():
    cm = ConfusionMatrix().accumulate(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]))
    assert abs(miou(cm) - 7 / 12) <= 1e-15


@pytest.mark.criterion(2, "streaming IoU/mIoU equals a brute-force counting oracle; pinned 7/12 case")
@settings(max_examples=120, deadline=None)
@given(grid_pair())
def test_oracle_equivalence(pair):
    labels, preds = pair
    cm = ConfusionMatrix().accumulate(labels, preds)
    counts, ignored = brute_counts(labels, preds)
    assert cm.counts.tolist() == counts and cm.pixels_ignored == ignored
    ref = brute_iou(counts)
    for r, g in zip(ref, iou(cm)):
        assert np.isnan(g) if r is None else abs(g - float(r)) <= 1e-12
    defined = [r for r in ref if r is not None]
    if defined:
        assert abs(miou(cm) - float(sum(defined) / len(defined))) <= 1e-12


# ---------------------------------------------------------------------------
# 3. aggregation semantics


@pytest.mark.criterion(3, "merged-count mIoU equals full-dataset mIoU; per-split mean differs")
@settings(max_examples=60, deadline=None)
@given(st.lists(grid_pair(), min_size=2, max_size=8), st.data())
def test_merge_equals_full_dataset(pairs, data):
    cut = data.draw(st.integers(1, len(pairs) - 1))
    a = b = ConfusionMatrix()
    for l, p in pairs[:cut]:
        a = a.accumulate(l, p)
    for l, p in pairs[cut:]:
        b = b.accumulate(l, p)
    full = ConfusionMatrix()
    for l, p in pairs:
        full = full.accumulate(l, p)
    np.testing.assert_array_equal(a.merge(b).counts, full.counts)
    assert miou(a.merge(b)) == miou(full)


@pytest.mark.criterion(3, "merged-count mIoU equals full-dataset mIoU; per-split mean differs")
def test_split_counterexample():
    la, pa = np.array([1] * 10 + [0] * 10), np.array([1] * 10 + [0] * 10)
    lb, pb = np.array([1, 0, 0, 0]), np.array([0, 0, 0, 1])
    a, b = ConfusionMatrix().accumulate(la, pa), ConfusionMatrix().accumulate(lb, pb)
    full = miou(a.merge(b))
    assert full == pytest.approx((12 / 14 + 10 / 12) / 2, abs=1e-15)
    assert abs((miou(a) + miou(b)) / 2 - full) > 0.1


# ---------------------------------------------------------------------------
# 4. fusion contract


def _random_fusion(seed):
    g = np.random.default_rng(seed)
    heads = int(g.integers(1, 5))
    d = heads * int(g.integers(4, 9))
    n_rgb = int(g.integers(1, 7))
    n_txt = int(g.integers(0, 5))
    n_code = int(g.integers(9, 13))
    causal = bool(g.integers(0, 2))
    cfg = FusionConfig(d_model=d, depth=int(g.integers(1, 3)), heads=heads, mlp_ratio=2, n_code=n_code,
                       max_len=2 * n_rgb + n_txt + n_code, causal=causal)
    params = init_fusion_params(cfg, 8, Rng(seed))
    parts = [Tensor(g.normal(size=(n, d))) for n in (n_rgb, n_rgb, n_txt)] + [params["codebook.C_seg"]]
    return cfg, params, parts


def _fuse(cfg, params, parts):
    return fuse(assemble(*parts, max_len=cfg.max_len, causal=cfg.causal), params, cfg).data


@pytest.mark.criterion(4, "fusion returns N_code x D_llm, causal flip-tests, every segment influences C_out")
@pytest.mark.parametrize("seed", range(50))
def test_fusion_contract(seed):
    cfg, params, parts = _random_fusion(seed)
    nudge = np.random.default_rng(1000 + seed).normal(scale=0.5, size=cfg.d_model)  # uniform shifts vanish in LN
    base = _fuse(cfg, params, parts)
    assert base.shape == (cfg.n_code, cfg.d_model)
    # every non-empty modality segment moves C_out
    for k in range(3):
        if parts[k].shape[0] == 0:
            continue
        moved = list(parts)
        arr = parts[k].data.copy()
        arr[-1] += nudge
        moved[k] = Tensor(arr)
        assert np.abs(_fuse(cfg, params, moved) - base).max() > 0, f"segment {k}"
    # flip test on the codebook: row i perturbed
    for i in (0, cfg.n_code // 2, cfg.n_code - 1):
        code = parts[3].data.copy()
        code[i] += nudge
        out = _fuse(cfg, params, parts[:3] + [Tensor(code)])
        assert np.abs(out[i:] - base[i:]).max() > 0
        if cfg.causal:
            np.testing.assert_array_equal(out[:i], base[:i])
        elif i > 0:
            assert np.abs(out[:i] - base[:i]).max() > 0


# ---------------------------------------------------------------------------
# 5. learnability (plus prompt sensitivity, which reuses the trained model)


@pytest.fixture(scope="module")
def learned():
    return experiments.learnability(seed=0, steps=2000)


@pytest.mark.slow
@pytest.mark.criterion(5, "8 day scenes, default config, seed 0: train mIoU >= 0.90 within 2000 steps, < 10 min")
def test_learnability(learned):
    print(f"train mIoU {learned['miou']:.4f} in {learned['seconds']:.1f}s")
    assert learned["miou"] >= 0.90
    assert learned["seconds"] < 600


@pytest.mark.slow
@pytest.mark.criterion(5, "8 day scenes, default config, seed 0: train mIoU >= 0.90 within 2000 steps, < 10 min")
def test_unknown_prompt_degrades(learned):
    cfg = learned["config"]
    unknown = tokenize("segment: " + " ".join(["zzz"] * 9), cfg.vocabulary())
    assert len(unknown) == len(cfg.text_ids())
    worse = miou(evaluate(learned["state"].params, cfg.model, learned["data"], unknown))
    assert worse < learned["miou"]


# ---------------------------------------------------------------------------
# 6. complementarity


@pytest.mark.slow
@pytest.mark.criterion(6, "night data: eval --zero-thermal below unablated and below --zero-rgb, 3 seeds")
@pytest.mark.parametrize("seed", experiments.COMPLEMENT_SEEDS)
def test_complementarity(seed, tmp_path_factory):
    r = experiments.complementarity(seed, tmp_path_factory.mktemp("night"))
    print(r)
    assert r["zero_thermal"] is not None
    assert r["zero_thermal"] < r["unablated"]
    assert r["zero_thermal"] < r["zero_rgb"]


# ---------------------------------------------------------------------------
# 7. table formatter


@pytest.mark.criterion(7, "literature table: MASTER row, MFNet Guardrail 0.0, top-3 bolding")
def test_table():
    reports = reference_reports()
    text = format_report(reports)
    assert _row(text, "MASTER") == ["86.9", "59.4", "66.4", "44.1", "47.1", "49.4", "53.6", "57.8", "62.5"]
    assert _row(text, "MFNet")[5] == "0.0"
    names = [n for n, _ in reports]
    for col, marked in enumerate(top3(reports)):
        assert {names[i] for i in marked} == list(EXPECTED_TOP3.values())[col]
    for line in text.splitlines()[2:]:
        name, cells = line.split()[0], line.split()[1:]
        for col, cell in enumerate(cells):
            assert cell.startswith("**") == (names.index(name) in top3(reports)[col])


# ---------------------------------------------------------------------------
# 8. determinism and round-trips


TINY_ARGS = ["--set", "encoder.height=16", "--set", "encoder.width=16", "--set", "scene.height=16",
             "--set", "scene.width=16", "--set", "scene.min_size=4", "--set", "scene.max_size=12",
             "--set", "encoder.depth=1", "--set", "fusion.depth=1"]


@pytest.mark.criterion(8, "fixed-seed loss CSVs identical; checkpoint and dataset round-trips exact")
def test_train_csv_deterministic(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-data", "--seed", "1", "--count", "4", "--out", str(data), *TINY_ARGS]) == 0
    logs = []
    for i in range(2):
        ck = tmp_path / f"m{i}.ckpt"
        assert main(["train", "--seed", "1", "--steps", "5", "--data", str(data), "--out", str(ck), *TINY_ARGS]) == 0
        logs.append((tmp_path / f"m{i}.loss.csv").read_bytes())
    assert logs[0] == logs[1] and len(logs[0].splitlines()) == 6
    assert (tmp_path / "m0.ckpt").read_bytes() == (tmp_path / "m1.ckpt").read_bytes()


@pytest.mark.criterion(8, "fixed-seed loss CSVs identical; checkpoint and dataset round-trips exact")
def test_checkpoint_preserves_eval(tmp_path, tiny_data, prompt_ids):
    model = tiny_model()
    cfg = RunConfig(encoder=model.encoder, fusion=model.fusion, decoder=model.decoder)
    state, _ = fit(model, TrainConfig(steps=4), tiny_data, prompt_ids)
    save_checkpoint(tmp_path / "c.ckpt", state, cfg.to_dict())
    loaded, echo = load_checkpoint(tmp_path / "c.ckpt")
    assert RunConfig.from_dict(echo).to_dict() == cfg.to_dict() and loaded.step == state.step
    for s in tiny_data:
        a = forward(state.params, model, s.rgb, s.thermal, prompt_ids).data
        b = forward(loaded.params, model, s.rgb, s.thermal, prompt_ids).data
        np.testing.assert_array_equal(a, b)
    ra = IoUReport.from_matrix(evaluate(state.params, model, tiny_data, prompt_ids)).to_dict()
    rb = IoUReport.from_matrix(evaluate(loaded.params, model, tiny_data, prompt_ids)).to_dict()
    assert ra == rb


@pytest.mark.criterion(8, "fixed-seed loss CSVs identical; checkpoint and dataset round-trips exact")
def test_dataset_round_trip(tmp_path):
    samples = [generate_scene(SceneSpec(seed=i, illumination="night" if i % 2 else "day"), f"{i:05d}")
               for i in range(4)]
    write_dataset(samples, tmp_path, "train")
    back = load_dataset(tmp_path, "train")
    assert [s.name for s in back] == [s.name for s in samples]
    for a, b in zip(samples, back):
        np.testing.assert_array_equal(a.labels, b.labels)
        assert np.abs(a.rgb - b.rgb).max() <= 0.5 / 255 + 1e-12
        assert np.abs(a.thermal - b.thermal).max() <= 0.5 / 255 + 1e-12
