"""Super-resolution model family: dense residual network and an RCAN-style
sibling, built from declarative configs with hand-written backward passes.

Both architectures share conv/attention/upsampler building blocks.  A
forward pass in training mode records every layer input in an explicit
cache dict; ``Model.backward`` consumes the cache in reverse, accumulating
into each Parameter's ``grad``.  The layer set is closed, so no taping or
graph machinery is involved.
"""

import json
import math

import numpy as np

from . import ops
from .errors import InvalidArgumentError, WeightsFormatError
from .tensor import Parameter, as_nchw
from .weights import read_tensor_file, write_tensor_file

_KIND_CODES = {"drn": 0, "rcan": 1}


# ---------------------------------------------------------------------------
# Configs
# ---------------------------------------------------------------------------

class DrnConfig:
    """Dense residual network: F features, D blocks of L double-conv stages."""

    kind = "drn"

    def __init__(self, features, depth, block_size, scale, attention_reduction=16):
        self.features = int(features)
        self.depth = int(depth)
        self.block_size = int(block_size)
        self.scale = int(scale)
        self.attention_reduction = int(attention_reduction)
        if self.features < 1 or self.depth < 1 or self.block_size < 1:
            raise InvalidArgumentError(f"invalid DRN config: {self.to_dict()}")
        if self.scale not in (2, 3, 4):
            raise InvalidArgumentError(f"scale must be in {{2,3,4}}, got {self.scale}")
        if self.attention_reduction < 1 or self.features % self.attention_reduction:
            raise InvalidArgumentError(
                f"attention_reduction {self.attention_reduction} must divide features {self.features}"
            )

    def to_dict(self):
        return {"features": self.features, "depth": self.depth,
                "block_size": self.block_size, "scale": self.scale,
                "attention_reduction": self.attention_reduction}

    def __eq__(self, other):
        return isinstance(other, DrnConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"DrnConfig({self.to_dict()})"


class RcanConfig:
    """Residual groups of channel-attention blocks with a long skip."""

    kind = "rcan"

    def __init__(self, features, groups, blocks_per_group, scale, attention_reduction=16):
        self.features = int(features)
        self.groups = int(groups)
        self.blocks_per_group = int(blocks_per_group)
        self.scale = int(scale)
        self.attention_reduction = int(attention_reduction)
        if self.features < 1 or self.groups < 1 or self.blocks_per_group < 1:
            raise InvalidArgumentError(f"invalid RCAN config: {self.to_dict()}")
        if self.scale not in (2, 3, 4):
            raise InvalidArgumentError(f"scale must be in {{2,3,4}}, got {self.scale}")
        if self.attention_reduction < 1 or self.features % self.attention_reduction:
            raise InvalidArgumentError(
                f"attention_reduction {self.attention_reduction} must divide features {self.features}"
            )

    def to_dict(self):
        return {"features": self.features, "groups": self.groups,
                "blocks_per_group": self.blocks_per_group, "scale": self.scale,
                "attention_reduction": self.attention_reduction}

    def __eq__(self, other):
        return isinstance(other, RcanConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"RcanConfig({self.to_dict()})"


def config_from_dict(kind, d):
    if kind == "drn":
        return DrnConfig(**d)
    if kind == "rcan":
        return RcanConfig(**d)
    raise InvalidArgumentError(f"unknown model kind {kind!r}")


def preset_config(name, scale):
    """Named architecture presets (tiny variants are for desk-scale runs)."""
    presets = {
        "drn-star": lambda: DrnConfig(128, 18, 3, scale),
        "drn-tiny": lambda: DrnConfig(16, 2, 2, scale, attention_reduction=4),
        "rcan-star": lambda: RcanConfig(128, 5, 10, scale),
        "rcan": lambda: RcanConfig(64, 10, 20, scale),
        "rcan-tiny": lambda: RcanConfig(16, 2, 2, scale, attention_reduction=4),
    }
    if name not in presets:
        raise InvalidArgumentError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    return presets[name]()


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Conv2d:
    """3x3 or 1x1 convolution layer with same-padding and bias."""

    def __init__(self, name, c_in, c_out, ksize, rng, dtype=np.float32):
        fan_in = c_in * ksize * ksize
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(c_out, c_in, ksize, ksize))
        self.name = name
        self.pad = ksize // 2
        self.weight = Parameter(f"{name}.weight", w.astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros((1, c_out, 1, 1), dtype=dtype))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, cache=None):
        if cache is not None:
            cache[self.name] = x
        return ops.conv2d(x, self.weight, self.bias, stride=1, padding=self.pad)

    def backward(self, gy, cache):
        x = cache.pop(self.name)
        gx, _, _ = ops.conv2d_backward(gy, x, self.weight, self.bias,
                                       stride=1, padding=self.pad)
        return gx


class ChannelAttention:
    """Squeeze (global pool) -> bottleneck 1x1 convs -> sigmoid gate."""

    def __init__(self, name, channels, reduction, rng, dtype=np.float32):
        self.name = name
        self.down = Conv2d(f"{name}.down", channels, channels // reduction, 1, rng, dtype)
        self.up = Conv2d(f"{name}.up", channels // reduction, channels, 1, rng, dtype)

    def params(self):
        return self.down.params() + self.up.params()

    def forward(self, x, cache=None):
        pooled = ops.global_avg_pool(x)
        d = self.down.forward(pooled, cache)
        r = ops.relu(d)
        u = self.up.forward(r, cache)
        gate = ops.sigmoid(u)
        if cache is not None:
            cache[f"{self.name}.x"] = x
            cache[f"{self.name}.d"] = d
            cache[f"{self.name}.gate"] = gate
        return x * gate

    def backward(self, gy, cache):
        x = cache.pop(f"{self.name}.x")
        d = cache.pop(f"{self.name}.d")
        gate = cache.pop(f"{self.name}.gate")
        gx = gy * gate
        g_gate = (gy * x).sum(axis=(2, 3), keepdims=True)
        g_u = ops.sigmoid_backward(g_gate, gate)
        g_r = self.up.backward(g_u, cache)
        g_d = ops.relu_backward(g_r, d)
        g_pooled = self.down.backward(g_d, cache)
        gx += ops.global_avg_pool_backward(g_pooled, x.shape)
        return gx


class DenseResidualBlock:
    """L stages of double convs with dense concat fusion, attention, and skips.

    Stage inputs chain; the previous block's *input* tensor (``prev``) is
    added into the inputs of the first two stages.  Stage outputs are
    concatenated, fused back to F channels with a 1x1 conv, gated by channel
    attention, and the block input is added back.
    """

    def __init__(self, name, features, block_size, reduction, rng, dtype=np.float32):
        self.name = name
        self.block_size = block_size
        self.stages = []
        for j in range(block_size):
            conv_a = Conv2d(f"{name}.stage{j}.a", features, features, 3, rng, dtype)
            conv_b = Conv2d(f"{name}.stage{j}.b", features, features, 3, rng, dtype)
            self.stages.append((conv_a, conv_b))
        self.fuse = Conv2d(f"{name}.fuse", features * block_size, features, 1, rng, dtype)
        self.attention = ChannelAttention(f"{name}.att", features, reduction, rng, dtype)

    def params(self):
        out = []
        for conv_a, conv_b in self.stages:
            out += conv_a.params() + conv_b.params()
        return out + self.fuse.params() + self.attention.params()

    def forward(self, x, prev, cache=None):
        outs = []
        cur = x
        for j, (conv_a, conv_b) in enumerate(self.stages):
            inp = cur + prev if j < 2 else cur
            h1 = conv_a.forward(inp, cache)
            r1 = ops.relu(h1)
            h2 = conv_b.forward(r1, cache)
            r2 = ops.relu(h2)
            if cache is not None:
                cache[f"{self.name}.stage{j}.h1"] = h1
                cache[f"{self.name}.stage{j}.h2"] = h2
            outs.append(r2)
            cur = r2
        fused = self.fuse.forward(ops.concat_channels(outs), cache)
        gated = self.attention.forward(fused, cache)
        return gated + x

    def backward(self, gy, cache):
        gx = gy.copy()
        g_fused = self.attention.backward(gy, cache)
        g_cat = self.fuse.backward(g_fused, cache)
        per_stage = ops.concat_channels_backward(
            g_cat, [gy.shape[1]] * self.block_size
        )
        g_prev = np.zeros_like(gy)
        g_cur = None
        for j in range(self.block_size - 1, -1, -1):
            conv_a, conv_b = self.stages[j]
            g_r2 = per_stage[j] if g_cur is None else per_stage[j] + g_cur
            h2 = cache.pop(f"{self.name}.stage{j}.h2")
            g_h2 = ops.relu_backward(g_r2, h2)
            g_r1 = conv_b.backward(g_h2, cache)
            h1 = cache.pop(f"{self.name}.stage{j}.h1")
            g_h1 = ops.relu_backward(g_r1, h1)
            g_inp = conv_a.backward(g_h1, cache)
            if j < 2:
                g_prev += g_inp
            if j == 0:
                gx += g_inp
                g_cur = None
            else:
                g_cur = g_inp
        return gx, g_prev


class ResidualAttentionBlock:
    """conv-ReLU-conv + channel attention + identity skip."""

    def __init__(self, name, features, reduction, rng, dtype=np.float32):
        self.name = name
        self.conv1 = Conv2d(f"{name}.conv1", features, features, 3, rng, dtype)
        self.conv2 = Conv2d(f"{name}.conv2", features, features, 3, rng, dtype)
        self.attention = ChannelAttention(f"{name}.att", features, reduction, rng, dtype)

    def params(self):
        return self.conv1.params() + self.conv2.params() + self.attention.params()

    def forward(self, x, cache=None):
        h1 = self.conv1.forward(x, cache)
        r1 = ops.relu(h1)
        h2 = self.conv2.forward(r1, cache)
        if cache is not None:
            cache[f"{self.name}.h1"] = h1
        return x + self.attention.forward(h2, cache)

    def backward(self, gy, cache):
        g_h2 = self.attention.backward(gy, cache)
        g_r1 = self.conv2.backward(g_h2, cache)
        h1 = cache.pop(f"{self.name}.h1")
        g_h1 = ops.relu_backward(g_r1, h1)
        return gy + self.conv1.backward(g_h1, cache)


class Upsampler:
    """conv -> pixel shuffle -> ReLU, cascaded twice for x4."""

    def __init__(self, name, features, scale, rng, dtype=np.float32):
        self.name = name
        steps = [2, 2] if scale == 4 else [scale]
        self.stages = []
        for i, s in enumerate(steps):
            conv = Conv2d(f"{name}.stage{i}.conv", features, features * s * s, 3, rng, dtype)
            self.stages.append((conv, s))

    def params(self):
        out = []
        for conv, _ in self.stages:
            out += conv.params()
        return out

    def forward(self, x, cache=None):
        for i, (conv, s) in enumerate(self.stages):
            h = conv.forward(x, cache)
            u = ops.pixel_shuffle(h, s)
            if cache is not None:
                cache[f"{self.name}.stage{i}.u"] = u
            x = ops.relu(u)
        return x

    def backward(self, gy, cache):
        for i in range(len(self.stages) - 1, -1, -1):
            conv, s = self.stages[i]
            u = cache.pop(f"{self.name}.stage{i}.u")
            g_u = ops.relu_backward(gy, u)
            g_h = ops.pixel_shuffle_backward(g_u, s)
            gy = conv.backward(g_h, cache)
        return gy


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class Model:
    """Shared surface: ordered parameters, forward/backward, (de)serialization."""

    def __init__(self, config):
        self.config = config
        self.parameters = []

    def _register(self, *layers):
        for layer in layers:
            self.parameters.extend(layer.params())
        names = [p.name for p in self.parameters]
        assert len(names) == len(set(names)), "duplicate parameter names"

    def param_count(self):
        return sum(p.value.size for p in self.parameters)

    def zero_grads(self):
        for p in self.parameters:
            p.zero_grad()

    def astype(self, dtype):
        for p in self.parameters:
            p.astype(dtype)
        return self

    @property
    def scale(self):
        return self.config.scale

    def forward(self, x):
        """Raw (unclamped) forward; use predict() for inference output."""
        y, _ = self._run(as_nchw(x, "model input", channels=3), cache=None)
        return y

    def forward_train(self, x):
        """(raw output, activation cache) for a subsequent backward()."""
        cache = {}
        y, cache = self._run(as_nchw(x, "model input", channels=3), cache=cache)
        return y, cache

    def predict(self, x):
        return np.clip(self.forward(x), 0.0, 1.0)

    def backward(self, grad_out, cache):
        raise NotImplementedError

    def _run(self, x, cache):
        raise NotImplementedError


class Drn(Model):
    def __init__(self, config, seed, dtype=np.float32):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        f = config.features
        self.conv_in = Conv2d("input_conv", 3, f, 3, rng, dtype)
        self.blocks = [
            DenseResidualBlock(f"block{i:02d}", f, config.block_size,
                               config.attention_reduction, rng, dtype)
            for i in range(config.depth)
        ]
        self.upsampler = Upsampler("upsampler", f, config.scale, rng, dtype)
        self.conv_out = Conv2d("output_conv", f, 3, 3, rng, dtype)
        self._register(self.conv_in, *self.blocks, self.upsampler, self.conv_out)

    def _run(self, x, cache):
        shallow = self.conv_in.forward(x, cache)
        prev = shallow  # missing predecessor of the first block
        cur = shallow
        for block in self.blocks:
            nxt = block.forward(cur, prev, cache)
            prev, cur = cur, nxt
        up = self.upsampler.forward(cur, cache)
        return self.conv_out.forward(up, cache), cache

    def backward(self, grad_out, cache):
        g = self.conv_out.backward(grad_out, cache)
        g = self.upsampler.backward(g, cache)
        # grads[j] is d loss / d t_j where t_0 is the shallow tensor and t_i
        # the output of block i; block i reads t_{i-1} and (as its IBSC
        # predecessor) t_{max(i-2, 0)}.
        depth = len(self.blocks)
        grads = {depth: g}

        def add(j, value):
            if j in grads:
                grads[j] += value
            else:
                grads[j] = value

        for i in range(depth, 0, -1):
            gx, g_prev = self.blocks[i - 1].backward(grads.pop(i), cache)
            add(i - 1, gx)
            add(max(i - 2, 0), g_prev)
        return self.conv_in.backward(grads.pop(0), cache)


class Rcan(Model):
    def __init__(self, config, seed, dtype=np.float32):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        f = config.features
        self.conv_in = Conv2d("input_conv", 3, f, 3, rng, dtype)
        self.groups = [
            [ResidualAttentionBlock(f"group{g:02d}.block{b:02d}", f,
                                    config.attention_reduction, rng, dtype)
             for b in range(config.blocks_per_group)]
            for g in range(config.groups)
        ]
        self.upsampler = Upsampler("upsampler", f, config.scale, rng, dtype)
        self.conv_out = Conv2d("output_conv", f, 3, 3, rng, dtype)
        flat = [b for grp in self.groups for b in grp]
        self._register(self.conv_in, *flat, self.upsampler, self.conv_out)

    def _run(self, x, cache):
        shallow = self.conv_in.forward(x, cache)
        cur = shallow
        for group in self.groups:
            group_in = cur
            for block in group:
                cur = block.forward(cur, cache)
            cur = cur + group_in
        cur = cur + shallow  # long skip
        up = self.upsampler.forward(cur, cache)
        return self.conv_out.forward(up, cache), cache

    def backward(self, grad_out, cache):
        g = self.conv_out.backward(grad_out, cache)
        g = self.upsampler.backward(g, cache)
        g_shallow = g.copy()  # long skip
        for group in reversed(self.groups):
            g_group_in = g.copy()  # group skip
            for block in reversed(group):
                g = block.backward(g, cache)
            g += g_group_in
        g_shallow += g
        return self.conv_in.backward(g_shallow, cache)


def build_drn(config, seed, dtype=np.float32):
    return Drn(config, seed, dtype)


def build_rcan(config, seed, dtype=np.float32):
    return Rcan(config, seed, dtype)


def build_model(config, seed, dtype=np.float32):
    if config.kind == "drn":
        return build_drn(config, seed, dtype)
    return build_rcan(config, seed, dtype)


def build_preset(name, scale, seed, dtype=np.float32):
    return build_model(preset_config(name, scale), seed, dtype)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_weights(model, path):
    """Write config + parameters to the binary weights container."""
    tensors = [(p.name, p.value) for p in model.parameters]
    write_tensor_file(path, _KIND_CODES[model.config.kind],
                      json.dumps(model.config.to_dict(), sort_keys=True), tensors)


def load_weights(path):
    """Rebuild the model described by ``path`` and fill in its parameters."""
    kind_code, config_json, tensors = read_tensor_file(
        path, expected_kinds=tuple(_KIND_CODES.values())
    )
    kind = {v: k for k, v in _KIND_CODES.items()}[kind_code]
    config = config_from_dict(kind, json.loads(config_json))
    model = build_model(config, seed=0)
    by_name = dict(tensors)
    if len(by_name) != len(model.parameters):
        raise WeightsFormatError(
            f"{path}: file has {len(by_name)} tensors, model needs {len(model.parameters)}",
            code="count",
        )
    for p in model.parameters:
        if p.name not in by_name:
            raise WeightsFormatError(f"{path}: missing tensor {p.name!r}", code="name")
        value = by_name[p.name]
        if value.shape != p.value.shape:
            raise WeightsFormatError(
                f"{path}: tensor {p.name!r} has shape {value.shape}, expected {p.value.shape}",
                code="shape",
            )
        p.value = value.astype(np.float32)
        p.grad = np.zeros_like(p.value)
    return model
