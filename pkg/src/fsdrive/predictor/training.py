"""Training and evaluation for the trajectory forecaster."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from fsdrive.predictor.data import WindowSet
from fsdrive.predictor.model import ForecastModel, ModelConfig

__all__ = ["TrainConfig", "PredictorMetrics", "PlainRecurrentBaseline", "train", "evaluate"]


@dataclass
class TrainConfig:
    model: ModelConfig | None = None
    epochs: int = 40
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    scale_floor: float = 1e-3


@dataclass
class PredictorMetrics:
    mse: float
    rmse: float
    mae: float
    inference_ms_per_batch: float


class PlainRecurrentBaseline(ForecastModel):
    """Same recurrent capacity without the trend/remainder decomposition.

    The normalized window feeds a single branch; used to check that the
    decomposed model does not lose accuracy against a plain forecaster.
    """

    def forward(self, history: torch.Tensor) -> torch.Tensor:
        if history.shape[1] != self.cfg.t_in:
            raise ValueError(f"history length {history.shape[1]} != t_in {self.cfg.t_in}")
        anchor = history[:, -1:, :]
        norm = (history - anchor - self.offset) / self.scale
        pred = self.trend_net(norm)
        return pred * self.scale + self.offset + anchor


def _fit_scale(X: np.ndarray, floor: float) -> np.ndarray:
    offsets = X - X[:, -1:, :]
    return np.maximum(offsets.std(axis=(0, 1)), floor)


def train(
    train_set: WindowSet,
    val_set: WindowSet,
    config: TrainConfig | None = None,
    model_cls: type[ForecastModel] = ForecastModel,
) -> tuple[ForecastModel, list[float]]:
    """Minimize mean squared prediction error; return the best-validation model.

    Seeded and single-threaded so identical inputs give identical weights.
    Returns (model, per-epoch validation MSE history).
    """
    config = config or TrainConfig()
    if len(train_set) == 0:
        raise ValueError("empty training set")
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    model = model_cls(config.model or ModelConfig())
    want = (model.cfg.t_in, model.cfg.n_out, model.cfg.n_features)
    got = (train_set.X.shape[1], train_set.Y.shape[1], train_set.X.shape[2])
    if want != got:
        raise ValueError(f"window shapes {got} do not match model (t_in, n_out, f) {want}")
    model.set_normalization(_fit_scale(train_set.X, config.scale_floor))
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    loss_fn = nn.MSELoss()
    x_train = torch.as_tensor(train_set.X, dtype=torch.float32)
    y_train = torch.as_tensor(train_set.Y, dtype=torch.float32)
    x_val = torch.as_tensor(val_set.X, dtype=torch.float32)
    y_val = torch.as_tensor(val_set.Y, dtype=torch.float32)
    rng = np.random.default_rng(config.seed)

    best_state = None
    best_val = float("inf")
    history: list[float] = []
    for _ in range(config.epochs):
        model.train()
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            loss = loss_fn(model(x_train[idx]), y_train[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(f"training diverged: loss={loss.item()}")
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            val_mse = float(loss_fn(model(x_val), y_val)) if len(x_val) else float(loss)
        history.append(val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


def evaluate(
    model: ForecastModel,
    test_set: WindowSet,
    timing_calls: int = 1000,
    timing_batch: int = 64,
) -> PredictorMetrics:
    """MSE/RMSE/MAE over all predicted coordinates plus batched inference time."""
    model.eval()
    x = torch.as_tensor(test_set.X, dtype=torch.float32)
    y = torch.as_tensor(test_set.Y, dtype=torch.float32)
    with torch.no_grad():
        pred = model(x)
        err = (pred - y).numpy()
    mse = float(np.mean(err**2))
    mae = float(np.mean(np.abs(err)))

    batch = x[: min(timing_batch, len(x))]
    if len(batch) < timing_batch:
        reps = int(np.ceil(timing_batch / max(len(batch), 1)))
        batch = batch.repeat(reps, 1, 1)[:timing_batch]
    with torch.no_grad():
        model(batch)  # warm-up
        times = []
        for _ in range(timing_calls):
            t0 = time.perf_counter()
            model(batch)
            times.append(time.perf_counter() - t0)
    return PredictorMetrics(
        mse=mse,
        rmse=float(np.sqrt(mse)),
        mae=mae,
        inference_ms_per_batch=float(np.median(times) * 1e3),
    )
