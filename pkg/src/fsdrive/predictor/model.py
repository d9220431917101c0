"""Two-branch recurrent forecaster over decomposed trajectory windows.

The input window is shifted by its last observed position and scaled by
per-feature constants, split into trend and remainder by the multi-kernel
moving average, forecast by one recurrent branch per component, summed, and
shifted back. The per-window shift makes the whole pipeline exactly
equivariant to constant offsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

__all__ = ["ModelConfig", "TrajectorySeries", "ForecastModel", "forecast", "save_model", "load_model"]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrajectorySeries:
    """Observed (x, y) track at a fixed sampling interval."""

    values: np.ndarray  # (T, F)
    dt: float = 0.05

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError("series needs shape (T, F) with T >= 2")
        if not np.all(np.isfinite(v)):
            raise ValueError("series values must be finite")
        object.__setattr__(self, "values", v)


@dataclass
class ModelConfig:
    kernels: tuple[int, ...] = (3, 7, 11)
    t_in: int = 30
    n_out: int = 25
    n_features: int = 2
    hidden: int = 32

    def __post_init__(self) -> None:
        self.kernels = tuple(int(k) for k in self.kernels)
        if any(k % 2 == 0 or k < 3 for k in self.kernels):
            raise ValueError("kernels must be odd and >= 3")


def _torch_moving_average(x: torch.Tensor, k: int) -> torch.Tensor:
    """Replicate-padded window mean over the time axis of (B, T, F)."""
    pad = (k - 1) // 2
    xt = x.transpose(1, 2)  # (B, F, T)
    xt = nn.functional.pad(xt, (pad, pad), mode="replicate")
    return nn.functional.avg_pool1d(xt, kernel_size=k, stride=1).transpose(1, 2)


class _Branch(nn.Module):
    """Single-component recurrent stack with a projection head."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.rnn = nn.LSTM(cfg.n_features, cfg.hidden, batch_first=True)
        self.proj = nn.Linear(cfg.hidden, cfg.n_out * cfg.n_features)
        self.n_out = cfg.n_out
        self.n_features = cfg.n_features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out, _ = self.rnn(x)
        last = out[:, -1, :]
        return self.proj(last).view(-1, self.n_out, self.n_features)


class ForecastModel(nn.Module):
    """Decomposition + trend/remainder branches + per-feature normalization."""

    def __init__(self, cfg: ModelConfig | None = None) -> None:
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.trend_net = _Branch(self.cfg)
        self.remainder_net = _Branch(self.cfg)
        self.register_buffer("scale", torch.ones(self.cfg.n_features))
        self.register_buffer("offset", torch.zeros(self.cfg.n_features))

    def set_normalization(self, scale: np.ndarray, offset: np.ndarray | None = None) -> None:
        self.scale.copy_(torch.as_tensor(scale, dtype=self.scale.dtype))
        if offset is not None:
            self.offset.copy_(torch.as_tensor(offset, dtype=self.offset.dtype))

    def forward(self, history: torch.Tensor) -> torch.Tensor:
        """Raw windows (B, T_in, F) to raw predictions (B, N_out, F)."""
        if history.shape[1] != self.cfg.t_in:
            raise ValueError(f"history length {history.shape[1]} != t_in {self.cfg.t_in}")
        anchor = history[:, -1:, :]
        norm = (history - anchor - self.offset) / self.scale
        trend = torch.stack(
            [_torch_moving_average(norm, k) for k in self.cfg.kernels]
        ).mean(dim=0)
        remainder = norm - trend
        pred = self.trend_net(trend) + self.remainder_net(remainder)
        return pred * self.scale + self.offset + anchor


def forecast(model: ForecastModel, history: TrajectorySeries) -> np.ndarray:
    """Deterministic (N_out, F) prediction for one history window."""
    if history.values.shape[0] != model.cfg.t_in:
        raise ValueError(
            f"history has {history.values.shape[0]} steps, model expects {model.cfg.t_in}"
        )
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            dtype = next(model.parameters()).dtype
            x = torch.as_tensor(history.values, dtype=dtype)[None]
            return model(x)[0].numpy().astype(float)
    finally:
        model.train(was_training)


def save_model(model: ForecastModel, path) -> None:
    """Versioned container: JSON config header plus named weight tensors."""
    header = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "kernels": list(model.cfg.kernels),
            "t_in": model.cfg.t_in,
            "n_out": model.cfg.n_out,
            "n_features": model.cfg.n_features,
            "hidden": model.cfg.hidden,
        },
    }
    arrays = {name: tensor.numpy() for name, tensor in model.state_dict().items()}
    np.savez(path, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_model(path) -> ForecastModel:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        cfg = ModelConfig(**{**header["config"], "kernels": tuple(header["config"]["kernels"])})
        model = ForecastModel(cfg)
        state = {k: torch.as_tensor(data[k]) for k in data.files if k != "__header__"}
    model.load_state_dict(state)
    model.eval()
    return model
