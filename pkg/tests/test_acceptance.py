"""Acceptance criteria, one test each. The terminal summary prints a pass/fail line per criterion."""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from heatcast.dataset import (
    SampleSet,
    ScalingMode,
    SplitConfig,
    dump_cache,
    load_cache,
    make_windows,
    scale,
    split,
    stack_batch,
)
from heatcast.engine import (
    Tensor,
    conv2d,
    dense,
    dump_params,
    global_avg_pool,
    grad_check,
    load_params,
    max_pool2d,
    selu,
    sigmoid,
    softmax,
    tanh,
)
from heatcast.evaluate import MetricsReport, ReportRow, blank_metrics, evaluate, metrics_from_predictions
from heatcast.ingest import parse_incidents, preset_schema
from heatcast.models import TEST_ARCH, ConvLSTMCellParams, Module, arch_for, build_model, convlstm_cell_step, make_cell
from heatcast.raster import GaussianSpec, HeatMap, export_pgm, import_pgm, make_kernel, smooth
from heatcast.synthetic import synthetic_heatmaps
from heatcast.training import TrainConfig, critic_loss, generator_loss, l1_loss, mse_loss, train_model

UNIT, SYM = ScalingMode.UNIT, ScalingMode.SYMMETRIC
KINDS = ["convlstm", "att-convlstm", "td-enc-dec", "gan"]


def detail(record_property, text: str) -> None:
    record_property("detail", text)


# -- 1 ------------------------------------------------------------------------


@pytest.mark.criterion(1, "gradient suite: ops 1e-4, end-to-end 1e-3, losses 1e-6, < 60 s")
def test_gradient_suite(record_property):
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    t = lambda *shape: Tensor(rng.standard_normal(shape))  # noqa: E731

    def away_from_zero(shape):
        x = rng.standard_normal(shape)
        x[np.abs(x) < 1e-3] = 0.5
        return Tensor(x)

    ops = {
        "conv2d": grad_check(lambda x, w: conv2d(x, w), [t(2, 5, 5), t(3, 2, 3, 3)], eps=1e-4),
        "conv2d strided": grad_check(lambda x, w, b: conv2d(x, w, b, stride=2, padding=1), [t(2, 6, 6), t(3, 2, 3, 3), t(3)]),
        "max_pool2d": grad_check(max_pool2d, t(1, 4, 4)),
        "selu": grad_check(selu, away_from_zero((3, 4, 4))),
        "sigmoid": grad_check(sigmoid, t(3, 4, 4)),
        "tanh": grad_check(tanh, t(3, 4, 4)),
        "softmax": grad_check(softmax, t(7)),
        "dense": grad_check(dense, [t(4), t(3, 4), t(3)]),
        "global_avg_pool": grad_check(global_avg_pool, t(3, 4, 5)),
    }
    cell = make_cell(Module(), "cell", rng, 1, 2)

    def step(x, h, c, wx, wh, b):
        h_t, c_t = convlstm_cell_step(x, h, c, ConvLSTMCellParams(wx, wh, b))
        return h_t + c_t

    ops["convlstm cell"] = grad_check(step, [t(1, 4, 4), t(2, 4, 4), t(2, 4, 4), cell.wx, cell.wh, cell.b])

    models = {}
    for kind in ["att-convlstm", "td-enc-dec", "gan", "convlstm"]:
        model = build_model(kind, TEST_ARCH, seed=0)
        lo, hi = model.mode.bounds
        x = Tensor(rng.uniform(lo, hi, (2, 1, 8, 8)))
        models[kind] = grad_check(
            lambda x, *ps: model(x), [x] + model.generator_parameters(), eps=1e-5, max_coords=6, one_sided_fallback=True
        )
    critic = build_model("gan", TEST_ARCH, seed=0).critic
    ops["critic"] = grad_check(lambda x, *ps: critic(x), [Tensor(rng.uniform(-1, 1, (2, 1, 8, 8)))] + critic.parameters(), max_coords=8)

    pred, truth, scores = t(2, 1, 3, 3), rng.standard_normal((2, 1, 3, 3)), t(4)
    losses = {
        "l1": grad_check(lambda p: l1_loss(p, truth), pred, eps=1e-6),
        "mse": grad_check(lambda p: mse_loss(p, truth), pred, eps=1e-6),
        "critic": grad_check(lambda r, f: critic_loss(r, f), [scores, t(4)], eps=1e-6),
        "generator": grad_check(lambda s, p: generator_loss(s, p, truth, 100.0), [scores, pred], eps=1e-6),
    }
    elapsed = time.perf_counter() - started
    detail(
        record_property,
        f"worst op {max(ops.values()):.1e}, model {max(models.values()):.1e}, loss {max(losses.values()):.1e}, {elapsed:.1f}s",
    )
    assert all(v <= 1e-4 for v in ops.values()), ops
    assert all(v <= 1e-3 for v in models.values()), models
    assert all(v <= 1e-6 for v in losses.values()), losses
    assert elapsed < 60


# -- 2 ------------------------------------------------------------------------


def quadruple_loop(grid, kernel):
    h, w = grid.shape
    r = kernel.shape[0] // 2
    out = np.zeros_like(grid)
    for i in range(h):
        for j in range(w):
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    if 0 <= i - di < h and 0 <= j - dj < w:
                        out[i, j] += grid[i - di, j - dj] * kernel[di + r, dj + r]
    return out


@pytest.mark.criterion(2, "raster oracle: 50 grids within 1e-9, kernel sum, impulse ratio e^(1/2)")
def test_raster_oracle(record_property):
    rng = np.random.default_rng(99)
    spec = GaussianSpec(1.5)
    kernel = make_kernel(spec)
    worst = 0.0
    for _ in range(50):
        grid = rng.uniform(0, 255, (8, 8)) * (rng.uniform(size=(8, 8)) < 0.5)
        fast = smooth(HeatMap(1, grid), spec, rescale=False).grid
        worst = max(worst, float(np.max(np.abs(fast - quadruple_loop(grid, kernel)))))
    kernel_err = abs(make_kernel(GaussianSpec(1.0)).sum() - 1.0)
    impulse = np.zeros((11, 11))
    impulse[5, 5] = 255.0
    out = smooth(HeatMap(1, impulse), GaussianSpec(1.0)).grid
    ratios = [out[5, 5] / out[r, c] for r, c in [(4, 5), (6, 5), (5, 4), (5, 6)]]
    ratio_err = max(abs(q - math.exp(0.5)) for q in ratios)
    detail(record_property, f"oracle diff {worst:.1e}, kernel sum err {kernel_err:.1e}, ratio err {ratio_err:.1e}")
    assert worst <= 1e-9
    assert kernel_err <= 1e-9
    assert ratio_err <= 1e-9


# -- 3 ------------------------------------------------------------------------


@pytest.mark.criterion(3, "windowing law for n in 2..8, |HM'| in n+1..n+20 (chronological overlap)")
def test_windowing_law(record_property):
    rng = np.random.default_rng(3)
    checked = 0
    for n in range(2, 9):
        for days in range(n + 1, n + 21):
            maps = [HeatMap(d + 1, rng.uniform(0, 255, (2, 2))) for d in range(days)]
            samples = make_windows(maps, n)
            assert len(samples) == days - n
            for a, b in zip(samples, samples[1:]):
                # label of window t is the newest slab of window t+1; see the decisions ledger
                assert np.array_equal(a.label, b.inputs[n - 1])
                assert np.array_equal(a.inputs[1:], b.inputs[:-1])
            checked += 1
    detail(record_property, f"{checked} (n, |HM'|) combinations")


# -- 4 ------------------------------------------------------------------------


@pytest.mark.criterion(4, "default TrainConfig: lr 0.00005, 1500 epochs, batch 8, RMSProp")
def test_default_hyperparameters(record_property):
    cfg = TrainConfig()
    detail(record_property, f"lr {cfg.learning_rate}, epochs {cfg.epochs}, batch {cfg.batch_size}, {cfg.optimizer}")
    assert cfg.learning_rate == 0.00005
    assert cfg.epochs == 1500
    assert cfg.batch_size == 8
    assert cfg.optimizer == "rmsprop"


# -- 5 ------------------------------------------------------------------------

# Pilot-validated settings for the 12-day memorization fixture (see the decisions ledger).
MEMORIZE_GAN = dict(learning_rate=3e-3, batch_size=1, epochs=200, seed=7)
MEMORIZE_SUPERVISED = dict(learning_rate=1e-3, batch_size=8, epochs=200, seed=7)


def memorization_fixture(mode):
    maps = synthetic_heatmaps(12, size=16, seed=7)
    samples = make_windows(maps, 6)
    train, _ = split(samples, SplitConfig(6).resolve(12))
    return [scale(x, mode) for x in train]


@pytest.mark.slow
@pytest.mark.criterion(5, "memorization: GAN train L1 < 0.05 on [-1,1]; Att-ConvLSTM train MSE < 0.01; < 5 min")
def test_memorization(record_property):
    started = time.perf_counter()
    arch = arch_for("test", 6, 16, 16)
    gan_train = memorization_fixture(SYM)
    gan = build_model("gan", arch, seed=7)
    train_model(gan, gan_train, TrainConfig(**MEMORIZE_GAN))
    inputs, labels = stack_batch(gan_train)
    gan_l1 = float(np.mean(np.abs(gan.predict(inputs) - labels)))

    att_train = memorization_fixture(UNIT)
    att = build_model("att-convlstm", arch, seed=7)
    train_model(att, att_train, TrainConfig(**MEMORIZE_SUPERVISED))
    att_mse, _ = evaluate(att, att_train, UNIT)
    elapsed = time.perf_counter() - started
    detail(record_property, f"GAN L1 {gan_l1:.4f}, Att-ConvLSTM MSE {att_mse:.4f}, {elapsed:.0f}s")
    assert gan_l1 < 0.05
    assert att_mse < 0.01
    assert elapsed < 300


# -- 6 ------------------------------------------------------------------------

BLANK_RUN = {
    "convlstm": dict(learning_rate=1e-3, batch_size=8, epochs=30, seed=0),
    "att-convlstm": dict(learning_rate=1e-3, batch_size=8, epochs=30, seed=0),
    "td-enc-dec": dict(learning_rate=1e-3, batch_size=8, epochs=30, seed=0),
    "gan": dict(learning_rate=1e-3, batch_size=8, epochs=30, seed=0),
}


@pytest.mark.slow
@pytest.mark.criterion(6, "better than blank: every model's test MSE <= 0.8 x all-zero MSE on 120 synthetic days")
def test_better_than_blank(record_property):
    maps = synthetic_heatmaps(120, size=16, seed=11)
    samples = make_windows(maps, 6)
    s = SplitConfig(6).resolve(len(maps))
    arch = arch_for("test", 6, 16, 16)
    ratios = {}
    for kind in KINDS:
        model = build_model(kind, arch, seed=0)
        train, test = split([scale(x, model.mode) for x in samples], s)
        train_model(model, train, TrainConfig(**BLANK_RUN[kind]))
        mse, _ = evaluate(model, test, model.mode)
        blank, _ = blank_metrics(test, model.mode)
        ratios[kind] = mse / blank
    detail(record_property, ", ".join(f"{k} {v:.2f}" for k, v in ratios.items()) + " (MSE / blank MSE)")
    for kind, ratio in ratios.items():
        assert ratio <= 0.8, f"{kind}: {ratio:.3f}"


# -- 7 ------------------------------------------------------------------------


@pytest.mark.criterion(7, "determinism: two pipeline runs give byte-identical checkpoints and reports")
def test_pipeline_determinism(tmp_path, record_property):
    from test_cli import KINDS as CLI_KINDS, digest, pipeline

    a, b = tmp_path / "a", tmp_path / "b"
    pipeline(a)
    pipeline(b)
    files = [Path("models") / f"{k}.ckpt" for k in CLI_KINDS] + [Path("report/report.txt"), Path("report/report.csv")]
    same = [digest(a / f) == digest(b / f) for f in files]
    detail(record_property, f"{sum(same)}/{len(files)} files identical")
    assert all(same)


# -- 8 ------------------------------------------------------------------------


def two_pass_oracle(preds, truths):
    per_sq, per_abs = [], []
    for p, t in zip(preds, truths):
        flat_p, flat_t = np.ravel(p).tolist(), np.ravel(t).tolist()
        per_sq.append(sum((a - b) ** 2 for a, b in zip(flat_p, flat_t)) / len(flat_p))
        per_abs.append(sum(abs(a - b) for a, b in zip(flat_p, flat_t)) / len(flat_p))
    return sum(per_sq) / len(per_sq), sum(per_abs) / len(per_abs)


@pytest.mark.criterion(8, "metric oracle within 1e-12 on 100 fixtures; MAE <= sqrt(MSE) on every row")
def test_metric_oracle(record_property):
    rng = np.random.default_rng(8)
    worst = 0.0
    rows = []
    for k in range(100):
        count, size = int(rng.integers(1, 8)), int(rng.integers(2, 9))
        truth = rng.uniform(0, 1, (count, size, size))
        pred = np.clip(truth + rng.normal(0, rng.uniform(0.01, 0.5), truth.shape), 0, 1)
        mse, mae = metrics_from_predictions(pred, truth)
        o_mse, o_mae = two_pass_oracle(pred, truth)
        worst = max(worst, abs(mse - o_mse), abs(mae - o_mae))
        rows.append(ReportRow(f"fixture {k}", mse, mae))
    MetricsReport(rows)  # rejects any row with MAE > sqrt(MSE)
    jensen = all(r.mae <= math.sqrt(r.mse) for r in rows)

    samples = [scale(x, UNIT) for x in make_windows(synthetic_heatmaps(10, size=8, seed=1), 2)]
    model = build_model("att-convlstm", TEST_ARCH, seed=0)
    got = evaluate(model, samples, UNIT)
    inputs, labels = stack_batch(samples)
    expected = two_pass_oracle(model.predict(inputs)[:, 0], labels[:, 0])
    worst = max(worst, abs(got[0] - expected[0]), abs(got[1] - expected[1]))
    detail(record_property, f"worst diff {worst:.1e}")
    assert worst <= 1e-12
    assert jensen


# -- 9 ------------------------------------------------------------------------


@pytest.mark.criterion(9, "round trips: PGM within 0.5, checkpoint and dataset cache bit-exact")
def test_round_trips(record_property):
    rng = np.random.default_rng(9)
    pgm_err = 0.0
    for _ in range(20):
        grid = rng.uniform(0, 255, (int(rng.integers(1, 20)), int(rng.integers(1, 20))))
        back = import_pgm(export_pgm(HeatMap(3, grid)))
        pgm_err = max(pgm_err, float(np.max(np.abs(back.grid - grid))))

    model = build_model("gan", TEST_ARCH, seed=4)
    blob = dump_params(model.state_dict(), model.header())
    _, arrays = load_params(blob)
    ckpt_ok = all(arrays[k].tobytes() == v.tobytes() for k, v in model.state_dict().items())
    ckpt_ok = ckpt_ok and dump_params(arrays, model.header()) == blob

    samples = [scale(x, SYM) for x in make_windows(synthetic_heatmaps(14, size=8, seed=2), 6)]
    cache = dump_cache(SampleSet(samples, SYM, 5))
    loaded = load_cache(cache)
    cache_ok = dump_cache(loaded) == cache and all(
        a.inputs.tobytes() == b.inputs.tobytes() and a.label.tobytes() == b.label.tobytes() and a.t == b.t
        for a, b in zip(samples, loaded.samples)
    )
    detail(record_property, f"PGM max err {pgm_err:.3f}, checkpoint exact {ckpt_ok}, cache exact {cache_ok}")
    assert pgm_err <= 0.5
    assert ckpt_ok and cache_ok


# -- 10 -----------------------------------------------------------------------

LIVE_CSV = os.environ.get("HEATCAST_CINCINNATI_CSV")


@pytest.mark.live
@pytest.mark.skipif(not LIVE_CSV, reason="set HEATCAST_CINCINNATI_CSV to a pinned snapshot of the Cincinnati CSV")
@pytest.mark.criterion(10, "live Cincinnati snapshot: 1235 days, 7191 records modulo documented skips")
def test_live_cincinnati(record_property):
    schema = preset_schema("cincinnati")
    with open(LIVE_CSV, newline="", encoding="utf-8") as fh:
        records, skipped = parse_incidents(fh, schema, max_skip_fraction=1.0)
    documented = skipped.total - skipped.out_of_range_date
    detail(record_property, f"{schema.num_days} days, {len(records)} records, {documented} in-range rows skipped")
    assert schema.num_days == 1235
    assert abs(len(records) - 7191) <= documented
