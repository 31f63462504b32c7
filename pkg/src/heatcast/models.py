"""Next-day heatmap forecasters built on the numpy engine.

All models map an input volume ``[B, n, 1, H, W]`` (or unbatched ``[n, 1, H, W]``)
to ``[B, 1, H, W]``. The final activation is sigmoid for UNIT-scaled data and tanh
for SYMMETRIC-scaled data.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .dataset import ScalingMode
from .engine import (
    Parameter,
    Tensor,
    concat,
    conv2d,
    dense,
    glorot_uniform,
    global_avg_pool,
    max_pool2d,
    no_grad,
    selu,
    sigmoid,
    softmax,
    stack,
    tanh,
    upsample2x,
)


@dataclass(frozen=True)
class ArchConfig:
    n: int = 6
    height: int = 64
    width: int = 64
    channels: tuple[int, int, int] = (64, 128, 256)
    critic_channels: tuple[int, ...] = (16, 32, 64, 128)

    def __post_init__(self):
        if self.height % 4 or self.width % 4:
            raise ValueError(f"grid {self.height}x{self.width} must be divisible by 4 (two 2x2 pools)")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ValueError("channels must be three positive widths")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["channels"] = list(self.channels)
        out["critic_channels"] = list(self.critic_channels)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ArchConfig":
        raw = dict(raw)
        raw["channels"] = tuple(raw["channels"])
        raw["critic_channels"] = tuple(raw["critic_channels"])
        return cls(**raw)


PAPER_ARCH = ArchConfig()
TEST_ARCH = ArchConfig(n=2, height=8, width=8, channels=(4, 8, 16), critic_channels=(4, 8, 16, 32))
NAMED_ARCHS = {"paper": PAPER_ARCH, "test": TEST_ARCH}


def arch_for(width: str, n: int, height: int, width_px: int) -> ArchConfig:
    """A named channel configuration resized to a concrete window length and grid."""
    return replace(NAMED_ARCHS[width], n=n, height=height, width=width_px)


class Module:
    """Owns an ordered set of named parameters drawn from one seeded generator."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, values: np.ndarray) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(values, name=name)
        self._params[name] = p
        return p

    def adopt(self, prefix: str, other: "Module") -> None:
        for name, p in other._params.items():
            full = f"{prefix}.{name}"
            p.name = full
            self._params[full] = p

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in self._params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)
            p.accumulator = np.zeros_like(p.data)
            p.grad = None


def conv_param(module: Module, name: str, rng, c_out: int, c_in: int, k: int = 3):
    w = module.add(f"{name}.w", glorot_uniform(rng, (c_out, c_in, k, k)))
    b = module.add(f"{name}.b", np.zeros(c_out))
    return w, b


# -- ConvLSTM ---------------------------------------------------------------


@dataclass
class ConvLSTMCellParams:
    """Gate order along the first kernel axis: input, forget, cell, output."""

    wx: Parameter  # [4*C_out, C_in, 3, 3]
    wh: Parameter  # [4*C_out, C_out, 3, 3]
    b: Parameter  # [4*C_out]

    @property
    def hidden(self) -> int:
        return self.wh.shape[1]


def make_cell(module: Module, name: str, rng, c_in: int, c_out: int) -> ConvLSTMCellParams:
    wx = np.concatenate([glorot_uniform(rng, (c_out, c_in, 3, 3)) for _ in range(4)])
    wh = np.concatenate([glorot_uniform(rng, (c_out, c_out, 3, 3)) for _ in range(4)])
    b = np.zeros(4 * c_out)
    b[c_out : 2 * c_out] = 1.0  # forget gate
    return ConvLSTMCellParams(
        module.add(f"{name}.wx", wx), module.add(f"{name}.wh", wh), module.add(f"{name}.b", b)
    )


def _advance(gates: Tensor, c_prev: Tensor | None, hidden: int) -> tuple[Tensor, Tensor]:
    i = sigmoid(gates[:, :hidden])
    f = sigmoid(gates[:, hidden : 2 * hidden])
    g = tanh(gates[:, 2 * hidden : 3 * hidden])
    o = sigmoid(gates[:, 3 * hidden :])
    c = i * g if c_prev is None else f * c_prev + i * g
    return o * tanh(c), c


def convlstm_cell_step(
    x_t: Tensor, h_prev: Tensor, c_prev: Tensor, params: ConvLSTMCellParams
) -> tuple[Tensor, Tensor]:
    """One ConvLSTM step on ``[C_in, H, W]`` or ``[B, C_in, H, W]`` inputs.

    i, f, o = sigmoid(.), g = tanh(.) over W_x*x + W_h*h + b;
    c_t = f*c_prev + i*g ; h_t = o*tanh(c_t)
    """
    unbatched = x_t.ndim == 3
    if unbatched:
        x_t, h_prev, c_prev = (t.reshape((1,) + t.shape) for t in (x_t, h_prev, c_prev))
    hidden = params.hidden
    if h_prev.shape[1] != hidden or c_prev.shape != h_prev.shape:
        raise ValueError("hidden/cell state shape does not match the cell parameters")
    if h_prev.shape[2:] != x_t.shape[2:]:
        raise ValueError("state and input spatial extents differ")
    gates = conv2d(x_t, params.wx, params.b, padding=1) + conv2d(h_prev, params.wh, padding=1)
    h, c = _advance(gates, c_prev, hidden)
    if unbatched:
        return h.reshape(h.shape[1:]), c.reshape(c.shape[1:])
    return h, c


def run_convlstm(seq: Tensor, params: ConvLSTMCellParams) -> Tensor:
    """Unroll a cell over ``[B, n, C_in, H, W]`` from zero state; returns all hidden states."""
    b, n, c_in, h, w = seq.shape
    hidden = params.hidden
    # input-to-state convolutions for all timesteps in one call
    xconv = conv2d(seq.reshape(b * n, c_in, h, w), params.wx, params.b, padding=1)
    xconv = xconv.reshape(b, n, 4 * hidden, h, w)
    states = []
    h_t = c_t = None
    for t in range(n):
        gates = xconv[:, t]
        if h_t is not None:
            gates = gates + conv2d(h_t, params.wh, padding=1)
        h_t, c_t = _advance(gates, c_t, hidden)
        states.append(h_t)
    return stack(states, axis=1)


def time_distributed(fn, seq: Tensor) -> Tensor:
    """Apply a per-frame map with shared weights to every timestep of ``[B, n, ...]``."""
    b, n = seq.shape[:2]
    out = fn(seq.reshape((b * n,) + seq.shape[2:]))
    return out.reshape((b, n) + out.shape[1:])


def attention_pool(features: Tensor, score_w: Tensor, score_b: Tensor) -> tuple[Tensor, Tensor]:
    """Softmax-weighted sum over timesteps.

    ``features`` is ``[B, n, C, H, W]``; each timestep scores as
    ``dense(global_avg_pool(feature))``. Returns ``(pooled [B, C, H, W], weights [B, n])``.
    """
    b, n, c = features.shape[:3]
    pooled = global_avg_pool(features).reshape(b * n, c)
    scores = dense(pooled, score_w, score_b).reshape(b, n)
    weights = softmax(scores, axis=1)
    mixed = (features * weights.reshape(b, n, 1, 1, 1)).sum(axis=1)
    return mixed, weights


def _batch_input(x) -> tuple[Tensor, bool]:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 4:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 5:
        raise ValueError(f"expected input [n,1,H,W] or [B,n,1,H,W], got {x.shape}")
    return x, False


class Forecaster(Module):
    kind = ""

    def __init__(self, arch: ArchConfig, mode: ScalingMode, seed: int = 0):
        super().__init__()
        self.arch = arch
        self.mode = mode
        self.seed = seed

    def output_activation(self, x: Tensor) -> Tensor:
        return sigmoid(x) if self.mode is ScalingMode.UNIT else tanh(x)

    def _check_input(self, x: Tensor) -> None:
        _, n, c, h, w = x.shape
        if c != 1 or (h, w) != (self.arch.height, self.arch.width):
            raise ValueError(f"input frames {c}x{h}x{w} do not match the {self.arch.height}x{self.arch.width} grid")
        if n != self.arch.n:
            raise ValueError(f"model expects {self.arch.n} timesteps, got {n}")

    def __call__(self, x) -> Tensor:
        xb, squeeze = _batch_input(x)
        self._check_input(xb)
        out = self.forward(xb)
        return out.reshape(out.shape[1:]) if squeeze else out

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        with no_grad():
            return self(Tensor(inputs)).data

    def header(self) -> dict:
        return {"kind": self.kind, "mode": self.mode.value, "seed": self.seed, "arch": self.arch.to_dict()}

    def generator_parameters(self) -> list[Parameter]:
        return self.parameters()


class _RecurrentStack(Forecaster):
    """Shared three-stage ConvLSTM encoder plus upsampling head."""

    def __init__(self, arch: ArchConfig, mode: ScalingMode, seed: int = 0):
        super().__init__(arch, mode, seed)
        rng = np.random.default_rng(seed)
        c1, c2, c3 = arch.channels
        self.cells = [
            make_cell(self, "stage1", rng, 1, c1),
            make_cell(self, "stage2", rng, c1, c2),
            make_cell(self, "stage3", rng, c2, c3),
        ]
        self._init_temporal(rng, c3)
        self.up1 = conv_param(self, "head.up1", rng, c2, c3)
        self.up2 = conv_param(self, "head.up2", rng, c1, c2)
        self.out = conv_param(self, "head.out", rng, 1, c1)

    def _init_temporal(self, rng, channels: int) -> None:
        pass

    def encode(self, x: Tensor) -> Tensor:
        """Per-timestep features ``[B, n, C3, H/4, W/4]``."""
        seq = x
        for k, cell in enumerate(self.cells):
            seq = selu(run_convlstm(seq, cell))
            if k < 2:
                seq = time_distributed(max_pool2d, seq)
        return seq

    def aggregate(self, features: Tensor) -> Tensor:
        raise NotImplementedError

    def decode(self, pooled: Tensor) -> Tensor:
        y = selu(conv2d(upsample2x(pooled), *self.up1, padding=1))
        y = selu(conv2d(upsample2x(y), *self.up2, padding=1))
        return self.output_activation(conv2d(y, *self.out, padding=1))

    def forward(self, x: Tensor) -> Tensor:
        return self.decode(self.aggregate(self.encode(x)))


class ConvLSTMForecaster(_RecurrentStack):
    """Baseline: the last timestep's hidden features feed the head directly."""

    kind = "convlstm"

    def aggregate(self, features: Tensor) -> Tensor:
        return features[:, -1]


class AttConvLSTM(_RecurrentStack):
    """Stacked ConvLSTM whose per-timestep features are merged by softmax attention."""

    kind = "att-convlstm"

    def _init_temporal(self, rng, channels: int) -> None:
        self.score_w = self.add("attention.w", glorot_uniform(rng, (1, channels)))
        self.score_b = self.add("attention.b", np.zeros(1))

    def attend(self, features: Tensor) -> tuple[Tensor, Tensor]:
        return attention_pool(features, self.score_w, self.score_b)

    def aggregate(self, features: Tensor) -> Tensor:
        return self.attend(features)[0]


class TDEncDec(Forecaster):
    """Time-distributed depth-2 nested-skip encoder-decoder with temporal average pooling.

    Per frame: X00 -> pool -> X10 -> pool -> X20 on the encoder path, nested nodes
    X01 = conv[X00, up X10], X11 = conv[X10, up X20], X02 = conv[X00, X01, up X11].
    The n X02 maps are averaged over time and projected to one channel.
    """

    kind = "td-enc-dec"

    def __init__(self, arch: ArchConfig, mode: ScalingMode, seed: int = 0):
        super().__init__(arch, mode, seed)
        rng = np.random.default_rng(seed)
        c1, c2, c3 = arch.channels
        self.x00 = conv_param(self, "enc.x00", rng, c1, 1)
        self.x10 = conv_param(self, "enc.x10", rng, c2, c1)
        self.x20 = conv_param(self, "enc.x20", rng, c3, c2)
        self.x01 = conv_param(self, "nest.x01", rng, c1, c1 + c2)
        self.x11 = conv_param(self, "nest.x11", rng, c2, c2 + c3)
        self.x02 = conv_param(self, "nest.x02", rng, c1, 2 * c1 + c2)
        self.out = conv_param(self, "head.out", rng, 1, c1)

    def frame_features(self, frames: Tensor) -> Tensor:
        """``[N, 1, H, W] -> [N, C1, H, W]`` with weights shared across all frames."""
        def block(x, params):
            return selu(conv2d(x, *params, padding=1))

        x00 = block(frames, self.x00)
        x10 = block(max_pool2d(x00), self.x10)
        x20 = block(max_pool2d(x10), self.x20)
        x01 = block(concat([x00, upsample2x(x10)], axis=1), self.x01)
        x11 = block(concat([x10, upsample2x(x20)], axis=1), self.x11)
        return block(concat([x00, x01, upsample2x(x11)], axis=1), self.x02)

    def timestep_features(self, x: Tensor) -> Tensor:
        return time_distributed(self.frame_features, x)

    def forward(self, x: Tensor) -> Tensor:
        merged = self.timestep_features(x).mean(axis=1)
        return self.output_activation(conv2d(merged, *self.out, padding=1))


class Critic(Module):
    """Strided-conv Wasserstein critic: one unbounded score per ``[1, H, W]`` heatmap."""

    def __init__(self, arch: ArchConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.convs = []
        c_in = 1
        for k, c_out in enumerate(arch.critic_channels):
            self.convs.append(conv_param(self, f"conv{k + 1}", rng, c_out, c_in))
            c_in = c_out
        self.head_w = self.add("head.w", glorot_uniform(rng, (1, c_in)))
        self.head_b = self.add("head.b", np.zeros(1))

    def __call__(self, heatmaps) -> Tensor:
        x = heatmaps if isinstance(heatmaps, Tensor) else Tensor(heatmaps)
        single = x.ndim == 3
        if single:
            x = x.reshape((1,) + x.shape)
        for w, b in self.convs:
            x = selu(conv2d(x, w, b, stride=2, padding=1))
        score = dense(global_avg_pool(x), self.head_w, self.head_b).reshape(x.shape[0])
        return score.reshape(()) if single else score


def critic_forward(heatmap, critic: Critic) -> float:
    with no_grad():
        return float(critic(heatmap).data)


class AdversarialForecaster(Forecaster):
    """Attention ConvLSTM generator (tanh head) paired with a convolutional critic."""

    kind = "gan"

    def __init__(self, arch: ArchConfig, mode: ScalingMode = ScalingMode.SYMMETRIC, seed: int = 0):
        super().__init__(arch, mode, seed)
        self.generator = AttConvLSTM(arch, mode, seed)
        self.critic = Critic(arch, seed + 1)
        self.adopt("generator", self.generator)
        self.adopt("critic", self.critic)

    def forward(self, x: Tensor) -> Tensor:
        return self.generator.forward(x)

    def generator_parameters(self) -> list[Parameter]:
        return self.generator.parameters()

    def critic_parameters(self) -> list[Parameter]:
        return self.critic.parameters()


MODEL_KINDS: dict[str, type[Forecaster]] = {
    cls.kind: cls for cls in (ConvLSTMForecaster, AttConvLSTM, TDEncDec, AdversarialForecaster)
}
DISPLAY_NAMES = {
    "convlstm": "ConvLSTM",
    "att-convlstm": "Att-ConvLSTM",
    "td-enc-dec": "TD-Conv-Enc-Dec",
    "gan": "Adversarial Att-ConvLSTM",
}


def default_mode(kind: str) -> ScalingMode:
    return ScalingMode.SYMMETRIC if kind == "gan" else ScalingMode.UNIT


def build_model(kind: str, arch: ArchConfig, seed: int = 0, mode: ScalingMode | None = None) -> Forecaster:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}")
    return MODEL_KINDS[kind](arch, mode or default_mode(kind), seed)


def model_from_checkpoint(header: dict, arrays: dict[str, np.ndarray]) -> Forecaster:
    model = build_model(
        header["kind"], ArchConfig.from_dict(header["arch"]), header.get("seed", 0), ScalingMode(header["mode"])
    )
    model.load_state_dict(arrays)
    return model
