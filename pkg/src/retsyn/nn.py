"""Small neural-net layer library over the autodiff engine."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Container tracking parameters, buffers and submodules by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_mods", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._mods[name] = value
        elif isinstance(value, np.ndarray):
            self._buffers[name] = value
        else:
            object.__setattr__(self, name, value)

    def __getattr__(self, name):
        for store in ("_params", "_buffers", "_mods"):
            d = object.__getattribute__(self, store)
            if name in d:
                return d[name]
        raise AttributeError(f"{type(self).__name__} has no attribute {name!r}")

    def named_parameters(self, prefix=""):
        for k, v in self._params.items():
            yield prefix + k, v
        for k, m in self._mods.items():
            yield from m.named_parameters(prefix + k + "/")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for _, p in self.named_parameters() if p.requires_grad]

    def named_buffers(self, prefix=""):
        for k, v in self._buffers.items():
            yield prefix + k, v
        for k, m in self._mods.items():
            yield from m.named_buffers(prefix + k + "/")

    def set_buffer(self, name, value):
        self._buffers[name] = value

    def train(self, mode=True):
        object.__setattr__(self, "training", mode)
        for m in self._mods.values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"p:{k}": v.data for k, v in self.named_parameters()}
        out.update({f"b:{k}": v for k, v in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        params = dict(self.named_parameters())
        for key, arr in state.items():
            kind, name = key.split(":", 1)
            tgt = params[name].data if kind == "p" else dict(self.named_buffers())[name]
            if tgt.shape != arr.shape:
                raise ValueError(
                    f"array {name!r}: expected shape {tgt.shape}, file has {arr.shape}"
                )
            tgt[...] = arr.astype(tgt.dtype)

    def copy_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_dict().items()}


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        for i, m in enumerate(mods):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._mods.values())

    def __getitem__(self, i):
        return self._mods[str(i)]

    def __len__(self):
        return len(self._mods)

    def append(self, m):
        setattr(self, str(len(self._mods)), m)


def param(rng, shape, std, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, std, shape).astype(dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, fan_in, fan_out, rng, std=None, dtype=np.float32):
        super().__init__()
        std = np.sqrt(2.0 / fan_in) if std is None else std
        self.w = param(rng, (fan_in, fan_out), std, dtype)
        self.b = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)


class Conv2d(Module):
    """k x k convolution via im2col; weight layout (C_in*k*k, C_out)."""

    def __init__(self, cin, cout, k, rng, stride=1, pad=None, std=None, dtype=np.float32):
        super().__init__()
        self.k, self.stride = k, stride
        self.pad = (k - 1) // 2 if pad is None else pad
        std = np.sqrt(2.0 / (cin * k * k)) if std is None else std
        self.w = param(rng, (cin * k * k, cout), std, dtype)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        b, c, h, w = x.shape
        if self.k == 1 and self.stride == 1 and self.pad == 0:
            xt = ad.reshape(ad.transpose(x, (0, 2, 3, 1)), (b * h * w, c))
            y = ad.add(ad.matmul(xt, self.w), self.b)
            return ad.transpose(ad.reshape(y, (b, h, w, -1)), (0, 3, 1, 2))
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        cols = ad.im2col(x, self.k, self.stride, self.pad)
        y = ad.add(ad.matmul(cols, self.w), self.b)
        y = ad.reshape(y, (b, oh, ow, -1))
        return ad.transpose(y, (0, 3, 1, 2))


class BatchNorm(Module):
    """Batch normalization over all axes except `channel_axis` (which is 1 for
    NCHW maps and -1/1 for (B,F) vectors)."""

    def __init__(self, num_features, ndim, rng=None, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps, self.ndim = momentum, eps, ndim
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)

    def __call__(self, x):
        axes = tuple(i for i in range(self.ndim) if i != 1)
        shape = tuple(-1 if i == 1 else 1 for i in range(self.ndim))
        if self.training:
            mu = ad.mean(x, axis=axes, keepdims=True)
            var = ad.mean(ad.pow_const(ad.sub(x, mu), 2), axis=axes, keepdims=True)
            self.running_mean *= 1 - self.momentum
            self.running_mean += self.momentum * mu.data.reshape(-1).astype(self.running_mean.dtype)
            self.running_var *= 1 - self.momentum
            self.running_var += self.momentum * var.data.reshape(-1).astype(self.running_var.dtype)
        else:
            mu = Tensor(self.running_mean.reshape(shape))
            var = Tensor(self.running_var.reshape(shape))
        xn = ad.mul(ad.sub(x, mu), ad.safe_recip(ad.sqrt(ad.add(var, self.eps))))
        return ad.add(
            ad.mul(xn, ad.reshape(self.gamma, shape)), ad.reshape(self.beta, shape)
        )


def dropout(x, p, rng, training):
    if not training or p <= 0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return ad.mul(x, Tensor(mask))


def global_avg_pool(x):
    return ad.mean(x, axis=(2, 3))


def global_max_pool(x):
    return ad.max_(ad.max_(x, axis=3), axis=2)


def softmax(logits: np.ndarray, axis=-1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    shift = ad.sub(x, Tensor(x.data.max(axis=axis, keepdims=True)))
    lse = ad.log(ad.sum_(ad.exp(shift), axis=axis, keepdims=True))
    return ad.sub(shift, lse)


class Adam:
    """Adam with bias correction; operates in-place on parameter data."""

    def __init__(self, params, lr=1e-3, beta1=0.0, beta2=0.99, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            gd = g.data if isinstance(g, Tensor) else g
            m *= b1
            m += (1 - b1) * gd
            v *= b2
            v += (1 - b2) * gd * gd
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)
