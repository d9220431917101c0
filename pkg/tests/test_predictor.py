import numpy as np
import pytest
import torch

from fsdrive.predictor import (
    ForecastModel,
    ModelConfig,
    PlainRecurrentBaseline,
    TrainConfig,
    TrajectorySeries,
    WindowSet,
    build_windows,
    decompose,
    evaluate,
    forecast,
    load_model,
    moving_average,
    read_dataset,
    save_model,
    split_windows,
    train,
    write_dataset,
)


# ---------------------------------------------------------------------------
# decomposition


def test_moving_average_hand_values():
    out = moving_average(np.array([1.0, 2.0, 3.0, 4.0]), 3)
    assert np.allclose(out, [4 / 3, 2.0, 3.0, 11 / 3])


def test_moving_average_constant_unchanged():
    x = np.full((10, 2), 3.7)
    assert np.allclose(moving_average(x, 5), x)


def test_moving_average_linear_interior():
    x = np.arange(20.0)
    out = moving_average(x, 5)
    assert np.allclose(out[2:-2], x[2:-2])


def test_moving_average_rejects_bad_kernels():
    x = np.zeros(10)
    with pytest.raises(ValueError):
        moving_average(x, 4)
    with pytest.raises(ValueError):
        moving_average(x, 11)
    with pytest.raises(ValueError):
        moving_average(x, 1)


def test_moving_average_linearity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(15, 2))
    y = rng.normal(size=(15, 2))
    a, b = 2.3, -0.7
    assert np.allclose(
        moving_average(a * x + b * y, 7),
        a * moving_average(x, 7) + b * moving_average(y, 7),
        atol=1e-12,
    )


def test_decompose_constant_series():
    x = np.full((12, 2), 5.0)
    dec = decompose(x, (3, 5))
    assert np.allclose(dec.trend, x)
    assert np.allclose(dec.remainder, 0.0)


def test_decompose_hand_values():
    dec = decompose(np.array([1.0, 2.0, 3.0, 4.0]), (3,))
    assert np.allclose(dec.trend, [4 / 3, 2.0, 3.0, 11 / 3])
    assert np.allclose(dec.remainder, [-1 / 3, 0.0, 0.0, 1 / 3])


def test_decompose_identity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.normal(size=(rng.integers(12, 40), 2))
        dec = decompose(x, (3, 7, 11))
        assert np.max(np.abs(dec.trend + dec.remainder - x)) <= 1e-12


# ---------------------------------------------------------------------------
# model forward behavior


def small_cfg(**kwargs):
    defaults = dict(kernels=(3, 5), t_in=12, n_out=6, n_features=2, hidden=8)
    defaults.update(kwargs)
    return ModelConfig(**defaults)


def test_zero_projection_predicts_last_position():
    torch.manual_seed(0)
    model = ForecastModel(small_cfg())
    with torch.no_grad():
        for branch in (model.trend_net, model.remainder_net):
            branch.proj.weight.zero_()
            branch.proj.bias.zero_()
    hist = TrajectorySeries(np.cumsum(np.ones((12, 2)) * 0.3, axis=0))
    pred = forecast(model, hist)
    assert np.allclose(pred, np.tile(hist.values[-1], (6, 1)), atol=1e-6)


def test_forecast_determinism_and_length_check():
    torch.manual_seed(1)
    model = ForecastModel(small_cfg())
    hist = TrajectorySeries(np.random.default_rng(2).normal(size=(12, 2)))
    p1 = forecast(model, hist)
    p2 = forecast(model, hist)
    assert np.array_equal(p1, p2)
    with pytest.raises(ValueError):
        forecast(model, TrajectorySeries(np.zeros((9, 2))))


def test_shift_equivariance():
    torch.manual_seed(3)
    model = ForecastModel(small_cfg())
    rng = np.random.default_rng(4)
    hist = rng.normal(size=(12, 2))
    shift = np.array([123.4, -77.1])
    base = forecast(model, TrajectorySeries(hist))
    moved = forecast(model, TrajectorySeries(hist + shift))
    assert np.allclose(moved, base + shift, atol=1e-3)


def test_model_decomposition_matches_numpy_path():
    cfg = small_cfg()
    rng = np.random.default_rng(5)
    win = rng.normal(size=(1, cfg.t_in, 2))
    x = torch.as_tensor(win, dtype=torch.float64)
    from fsdrive.predictor.model import _torch_moving_average

    torch_trend = torch.stack(
        [_torch_moving_average(x, k) for k in cfg.kernels]
    ).mean(dim=0)[0].numpy()
    np_trend = decompose(win[0], cfg.kernels).trend
    assert np.allclose(torch_trend, np_trend, atol=1e-12)


def test_gradient_check_vs_finite_differences():
    # double precision, tiny net, central differences over a sample of weights
    torch.manual_seed(7)
    cfg = small_cfg(kernels=(3,), t_in=8, n_out=3, hidden=4)
    model = ForecastModel(cfg).double()
    rng = np.random.default_rng(8)
    x = torch.as_tensor(rng.normal(size=(2, 8, 2)))
    y = torch.as_tensor(rng.normal(size=(2, 3, 2)))

    def loss_value():
        return torch.mean((model(x) - y) ** 2)

    loss = loss_value()
    loss.backward()
    h = 1e-6
    # atol+rtol form: near-zero gradients judged on the absolute floor
    worst = 0.0
    rng2 = np.random.default_rng(9)
    for name, param in model.named_parameters():
        grad = param.grad
        flat = param.data.view(-1)
        for idx in rng2.choice(flat.numel(), size=min(6, flat.numel()), replace=False):
            orig = flat[idx].item()
            flat[idx] = orig + h
            up = loss_value().item()
            flat[idx] = orig - h
            dn = loss_value().item()
            flat[idx] = orig
            fd = (up - dn) / (2 * h)
            an = grad.view(-1)[idx].item()
            rel = (abs(an - fd) - 1e-7) / max(1e-12, abs(fd), abs(an))
            worst = max(worst, rel)
    assert worst <= 1e-4


# ---------------------------------------------------------------------------
# training and evaluation


def constant_windows(n=40, t_in=12, n_out=6):
    rng = np.random.default_rng(11)
    xs, ys, eps = [], [], []
    for i in range(n):
        pos = rng.uniform(-50, 50, size=2)
        xs.append(np.tile(pos, (t_in, 1)))
        ys.append(np.tile(pos, (n_out, 1)))
        eps.append(f"ep{i % 8}")
    return WindowSet(np.stack(xs), np.stack(ys), np.array(eps))


def linear_windows(n=60, t_in=12, n_out=6, dt=0.05):
    rng = np.random.default_rng(12)
    xs, ys, eps = [], [], []
    for i in range(n):
        pos = rng.uniform(-50, 50, size=2)
        vel = rng.uniform(-8, 8, size=2)
        t = np.arange(t_in + n_out)[:, None] * dt
        track = pos + vel * t
        xs.append(track[:t_in])
        ys.append(track[t_in:])
        eps.append(f"ep{i % 10}")
    return WindowSet(np.stack(xs), np.stack(ys), np.array(eps))


def test_train_memorizes_single_sample():
    win = constant_windows(n=1)
    cfg = TrainConfig(model=small_cfg(), epochs=60, lr=5e-3, seed=0)
    model, history = train(win, win, cfg)
    assert history[-1] < 1e-4


def test_train_constant_tracks_predicts_constant():
    win = constant_windows()
    train_set, val_set, _ = split_windows(win, seed=0)
    cfg = TrainConfig(model=small_cfg(), epochs=80, lr=5e-3, seed=0)
    model, _ = train(train_set, val_set, cfg)
    hist = TrajectorySeries(np.tile([7.0, -3.0], (12, 1)))
    pred = forecast(model, hist)
    assert np.max(np.abs(pred - [7.0, -3.0])) < 0.05


def test_train_linear_tracks_extrapolate():
    win = linear_windows()
    train_set, val_set, _ = split_windows(win, seed=0)
    cfg = TrainConfig(model=small_cfg(hidden=16), epochs=250, lr=8e-3, seed=0)
    model, _ = train(train_set, val_set, cfg)
    vel = np.array([5.0, -2.0])
    t = np.arange(18)[:, None] * 0.05
    track = np.array([3.0, 4.0]) + vel * t
    pred = forecast(model, TrajectorySeries(track[:12]))
    assert np.max(np.abs(pred - track[12:])) < 0.1


def test_train_loss_decreases_in_smoothed_windows():
    win = linear_windows()
    train_set, val_set, _ = split_windows(win, seed=0)
    cfg = TrainConfig(model=small_cfg(), epochs=40, lr=3e-3, seed=1)
    _, history = train(train_set, val_set, cfg)
    smoothed = np.convolve(history, np.ones(5) / 5, mode="valid")
    # allow small plateaus; smoothed curve must trend down
    assert smoothed[-1] < smoothed[0]
    assert np.all(np.diff(np.minimum.accumulate(smoothed)) <= 1e-12)


def test_train_determinism():
    win = linear_windows(n=20)
    train_set, val_set, _ = split_windows(win, seed=0)
    cfg = TrainConfig(model=small_cfg(), epochs=5, seed=42)
    m1, h1 = train(train_set, val_set, cfg)
    m2, h2 = train(train_set, val_set, cfg)
    assert h1 == h2
    for (k1, v1), (k2, v2) in zip(m1.state_dict().items(), m2.state_dict().items()):
        assert k1 == k2
        assert torch.equal(v1, v2)


def test_train_rejects_empty_and_divergent():
    empty = WindowSet(np.zeros((0, 12, 2)), np.zeros((0, 6, 2)), np.array([]))
    with pytest.raises(ValueError):
        train(empty, empty, TrainConfig(model=small_cfg()))
    win = linear_windows(n=10)
    win.X[0, 0, 0] = np.nan  # poisoned sample drives the loss non-finite
    with pytest.raises(RuntimeError, match="diverged"):
        train(win, win, TrainConfig(model=small_cfg(), epochs=2, batch_size=len(win), seed=0))


def test_evaluate_perfect_predictor():
    win = constant_windows(n=10)

    class Persistence(ForecastModel):
        def forward(self, history):
            return history[:, -1:, :].repeat(1, self.cfg.n_out, 1)

    model = Persistence(small_cfg())
    metrics = evaluate(model, win, timing_calls=5)
    assert metrics.mse == 0.0
    assert metrics.rmse == 0.0
    assert metrics.mae == 0.0
    assert metrics.inference_ms_per_batch > 0.0


def test_baseline_uses_single_branch():
    torch.manual_seed(0)
    model = PlainRecurrentBaseline(small_cfg())
    hist = TrajectorySeries(np.random.default_rng(3).normal(size=(12, 2)))
    pred = forecast(model, hist)
    assert pred.shape == (6, 2)


# ---------------------------------------------------------------------------
# dataset plumbing


def test_dataset_roundtrip(tmp_path):
    rows = []
    for ep in ("a", "b"):
        for ent in (1, 2):
            for t in range(5):
                rows.append((ep, ent, "vehicle", t * 0.05, float(t), float(ent)))
    path = tmp_path / "data.csv"
    write_dataset(rows, path)
    tracks = read_dataset(path)
    assert len(tracks) == 4
    assert np.allclose(tracks[("a", "1")][:, 0], np.arange(5.0))


def test_build_windows_and_split(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for ep in range(10):
        for t in range(40):
            rows.append((f"ep{ep}", 1, "vehicle", t * 0.05, rng.normal(), rng.normal()))
    path = tmp_path / "d.csv"
    write_dataset(rows, path)
    tracks = read_dataset(path)
    windows = build_windows(tracks, t_in=12, n_out=6, stride=3)
    train_set, val_set, test_set = split_windows(windows, seed=1)
    train_eps = set(train_set.episodes)
    assert train_eps.isdisjoint(set(val_set.episodes))
    assert train_eps.isdisjoint(set(test_set.episodes))
    assert len(train_set) + len(val_set) + len(test_set) == len(windows)


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(5)
    model = ForecastModel(small_cfg())
    model.set_normalization(np.array([2.0, 3.0]))
    path = tmp_path / "model.npz"
    save_model(model, path)
    loaded = load_model(path)
    hist = TrajectorySeries(np.random.default_rng(6).normal(size=(12, 2)))
    assert np.array_equal(forecast(model, hist), forecast(loaded, hist))
