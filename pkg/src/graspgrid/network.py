"""Fully convolutional grasp reward model, plain numpy.

Six valid 3x3 convolutions with dilations (1, 1, 2, 3, 4, 4) give a 31 px
receptive field, so one dense pass over a 110 px map yields an 80 px output
grid and a 32 px grasp window maps to the single dense cell centered on its
grasp pixel. Hidden layers use leaky ReLU, per-channel feature normalization
with running statistics (batch stats in training, frozen in eval so the dense
and window paths agree exactly), and dropout. The linear head emits one reward
logit per stroke primitive plus three auxiliary regressions (the executed tilt
angles and the final jaw width). The head starts at zero so an untrained model
predicts probability one half everywhere.

Training: per-sample BCE on the executed primitive's logit only, positive
samples weighted per primitive by the global-to-primitive success ratio, plus
a small MSE term on the auxiliary head. Adam with bias correction.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

MAGIC = b"GGRID1\n"
LEAKY = 0.2
NORM_EPS = 1e-5
BCE_EPS = 1e-7
CLASS_W_EPS = 0.05
ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    channels: tuple = (2, 8, 12, 16, 16, 24, 7)
    dilations: tuple = (1, 1, 2, 3, 4, 4)
    kernel: int = 3
    n_primitives: int = 4
    dropout: float = 0.1
    momentum: float = 0.1        # running-stat update rate

    def __post_init__(self):
        if len(self.channels) != len(self.dilations) + 1:
            raise ValueError("channels must have one more entry than dilations")
        if self.channels[-1] != self.n_primitives + 3:
            raise ValueError("head must emit n_primitives + 3 channels")

    @property
    def n_layers(self) -> int:
        return len(self.dilations)

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel - 1) * sum(self.dilations)

    def param_count(self) -> int:
        n = 0
        for i in range(self.n_layers):
            n += self.channels[i + 1] * (self.channels[i] * self.kernel ** 2 + 1)
            if i < self.n_layers - 1:
                n += 2 * self.channels[i + 1]
        return n


def tiny_spec() -> ModelSpec:
    """Two-layer model for numeric gradient checks."""
    return ModelSpec(channels=(2, 6, 7), dilations=(1, 1), dropout=0.0)


def _im2col(x: np.ndarray, k: int, d: int):
    b, c, h, w = x.shape
    ho = h - (k - 1) * d
    wo = w - (k - 1) * d
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (b, c, k, k, ho, wo), (s0, s1, s2 * d, s3 * d, s2, s3))
    cols = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3))
    return cols.reshape(b * ho * wo, c * k * k), ho, wo


def conv_forward(x, weight, bias, dilation):
    c_out, c_in, k, _ = weight.shape
    cols, ho, wo = _im2col(x, k, dilation)
    out = cols @ weight.reshape(c_out, -1).T + bias
    out = out.reshape(x.shape[0], ho, wo, c_out).transpose(0, 3, 1, 2)
    return out, cols


def conv_backward(dout, x_shape, cols, weight, dilation):
    b, c_in, h, w = x_shape
    c_out, _, k, _ = weight.shape
    dflat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, c_out)
    dw = (dflat.T @ cols).reshape(weight.shape)
    db = dflat.sum(axis=0)
    pad = (k - 1) * dilation
    dpad = np.pad(dout, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    wflip = np.ascontiguousarray(
        weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))  # (c_in, c_out, k, k)
    cols2, ho2, wo2 = _im2col(dpad, k, dilation)
    dx = cols2 @ wflip.reshape(c_in, -1).T
    dx = dx.reshape(b, ho2, wo2, c_in).transpose(0, 3, 1, 2)
    return dx, dw, db


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce(prob, target):
    p = np.clip(prob, BCE_EPS, 1.0 - BCE_EPS)
    return -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))


def class_weights(primitives, rewards, n_primitives) -> np.ndarray:
    """Positive-sample weight per primitive: global success over its own."""
    primitives = np.asarray(primitives)
    rewards = np.asarray(rewards, dtype=np.float64)
    mean_all = rewards.mean() if rewards.size else 0.0
    w = np.ones(n_primitives)
    for m in range(n_primitives):
        sel = primitives == m
        mean_m = rewards[sel].mean() if np.any(sel) else 0.0
        w[m] = (mean_all + CLASS_W_EPS) / (mean_m + CLASS_W_EPS)
    return w


class RewardModel:
    def __init__(self, spec: ModelSpec | None = None, seed: int = 0,
                 dtype=np.float32):
        self.spec = spec if spec is not None else ModelSpec()
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_t = 0
        rng = np.random.default_rng(seed)
        k = self.spec.kernel
        for i in range(self.spec.n_layers):
            c_in, c_out = self.spec.channels[i], self.spec.channels[i + 1]
            if i == self.spec.n_layers - 1:
                w = np.zeros((c_out, c_in, k, k))  # head at zero: p = 0.5
            else:
                scale = math.sqrt(2.0 / (c_in * k * k))
                w = rng.normal(0.0, scale, (c_out, c_in, k, k))
            self.params[f"W{i}"] = w.astype(self.dtype)
            self.params[f"b{i}"] = np.zeros(c_out, dtype=self.dtype)
            if i < self.spec.n_layers - 1:
                self.params[f"g{i}"] = np.ones(c_out, dtype=self.dtype)
                self.params[f"beta{i}"] = np.zeros(c_out, dtype=self.dtype)
                self.buffers[f"rm{i}"] = np.zeros(c_out, dtype=self.dtype)
                self.buffers[f"rv{i}"] = np.ones(c_out, dtype=self.dtype)
        for name, p in self.params.items():
            self.adam_m[name] = np.zeros_like(p)
            self.adam_v[name] = np.zeros_like(p)

    # -- forward / backward --------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None, cache: list | None = None):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        for i in range(self.spec.n_layers):
            w, b = self.params[f"W{i}"], self.params[f"b{i}"]
            x_in_shape = x.shape
            x, cols = conv_forward(x, w, b, self.spec.dilations[i])
            layer = {"cols": cols, "x_shape": x_in_shape, "conv_out": x}
            if i < self.spec.n_layers - 1:
                pre = x
                x = np.where(pre > 0, pre, self.dtype.type(LEAKY) * pre)
                layer["pre_act"] = pre
                x, norm_ctx = self._norm_forward(i, x, train)
                layer["norm"] = norm_ctx
                if train and self.spec.dropout > 0.0:
                    if rng is None:
                        raise ValueError("training forward needs an rng for dropout")
                    keep = (rng.random(x.shape) >= self.spec.dropout)
                    x = x * keep / (1.0 - self.spec.dropout)
                    layer["drop"] = keep
                x = x.astype(self.dtype, copy=False)
            if cache is not None:
                cache.append(layer)
        return x

    def _norm_forward(self, i, x, train):
        g = self.params[f"g{i}"]
        beta = self.params[f"beta{i}"]
        if train:
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            mom = self.spec.momentum
            self.buffers[f"rm{i}"] = ((1 - mom) * self.buffers[f"rm{i}"]
                                      + mom * mu).astype(self.dtype)
            self.buffers[f"rv{i}"] = ((1 - mom) * self.buffers[f"rv{i}"]
                                      + mom * var).astype(self.dtype)
        else:
            mu = self.buffers[f"rm{i}"]
            var = self.buffers[f"rv{i}"]
        inv = 1.0 / np.sqrt(var + NORM_EPS)
        xn = (x - mu[None, :, None, None]) * inv[None, :, None, None]
        out = g[None, :, None, None] * xn + beta[None, :, None, None]
        return out, {"xn": xn, "inv": inv, "x": x, "mu": mu, "train": train}

    def backward(self, dout: np.ndarray, cache: list) -> dict:
        grads = {}
        dx = dout
        for i in reversed(range(self.spec.n_layers)):
            layer = cache[i]
            if i < self.spec.n_layers - 1:
                if "drop" in layer:
                    dx = dx * layer["drop"] / (1.0 - self.spec.dropout)
                dx, dg, dbeta = self._norm_backward(i, dx, layer["norm"])
                grads[f"g{i}"] = dg
                grads[f"beta{i}"] = dbeta
                pre = layer["pre_act"]
                dx = dx * np.where(pre > 0, 1.0, LEAKY)
            dx, dw, db = conv_backward(dx, layer["x_shape"], layer["cols"],
                                       self.params[f"W{i}"],
                                       self.spec.dilations[i])
            grads[f"W{i}"] = dw
            grads[f"b{i}"] = db
        return grads

    def _norm_backward(self, i, dout, ctx):
        g = self.params[f"g{i}"]
        xn, inv = ctx["xn"], ctx["inv"]
        dg = (dout * xn).sum(axis=(0, 2, 3))
        dbeta = dout.sum(axis=(0, 2, 3))
        dxn = dout * g[None, :, None, None]
        if not ctx["train"]:
            return dxn * inv[None, :, None, None], dg, dbeta
        x, mu = ctx["x"], ctx["mu"]
        n = x.shape[0] * x.shape[2] * x.shape[3]
        xc = x - mu[None, :, None, None]
        dvar = (dxn * xc).sum(axis=(0, 2, 3)) * -0.5 * inv ** 3
        dmu = (-(dxn.sum(axis=(0, 2, 3)) * inv)
               + dvar * (-2.0 / n) * xc.sum(axis=(0, 2, 3)))
        dx = (dxn * inv[None, :, None, None]
              + dvar[None, :, None, None] * 2.0 / n * xc
              + dmu[None, :, None, None] / n)
        return dx, dg, dbeta

    # -- inference helpers ----------------------------------------------------

    def forward_dense(self, image: np.ndarray) -> np.ndarray:
        """(2, H, W) -> (n_primitives + 3, H - rf + 1, W - rf + 1), eval mode."""
        out = self.forward(image[None])
        return out[0]

    def forward_window(self, window: np.ndarray) -> np.ndarray:
        """(2, >=rf, >=rf) -> head vector for the window's grasp cell."""
        rf = self.spec.receptive_field
        out = self.forward(window[None, :, :rf, :rf])
        return out[0, :, 0, 0]

    # -- training -------------------------------------------------------------

    def loss_and_grads(self, x, primitives, rewards, aux_targets,
                       rng: np.random.Generator, aux_on: bool = True,
                       class_w: np.ndarray | None = None,
                       aux_weight: float = 0.1):
        """Mean loss and parameter grads for one batch of window inputs."""
        n = x.shape[0]
        if class_w is None:
            class_w = np.ones(self.spec.n_primitives)
        cache: list = []
        out = self.forward(x, train=True, rng=rng, cache=cache)
        vec = out[:, :, 0, 0]                       # (B, n_prim + 3)
        idx = np.arange(n)
        z = vec[idx, primitives].astype(np.float64)
        p = sigmoid(z)
        r = rewards.astype(np.float64)
        w_s = np.where(r > 0.5, class_w[primitives], 1.0)
        loss_cls = float(np.mean(w_s * bce(p, r)))
        dvec = np.zeros_like(vec, dtype=np.float64)
        dvec[idx, primitives] = w_s * (p - r) / n

        loss_aux = 0.0
        if aux_on:
            ah = vec[:, self.spec.n_primitives:].astype(np.float64)
            diff = ah - aux_targets
            loss_aux = float(np.mean(diff ** 2))
            dvec[:, self.spec.n_primitives:] += aux_weight * 2.0 * diff / diff.size

        dout = np.zeros_like(out, dtype=self.dtype)
        dout[:, :, 0, 0] = dvec.astype(self.dtype)
        grads = self.backward(dout, cache)
        return loss_cls + aux_weight * loss_aux, grads

    def adam_step(self, grads: dict, lr: float):
        self.adam_t += 1
        bc1 = 1.0 - ADAM_B1 ** self.adam_t
        bc2 = 1.0 - ADAM_B2 ** self.adam_t
        for name, g in grads.items():
            g = g.astype(self.params[name].dtype, copy=False)
            m = self.adam_m[name]
            v = self.adam_v[name]
            m *= ADAM_B1
            m += (1 - ADAM_B1) * g
            v *= ADAM_B2
            v += (1 - ADAM_B2) * g * g
            self.params[name] -= (lr * (m / bc1)
                                  / (np.sqrt(v / bc2) + ADAM_EPS)).astype(
                                      self.params[name].dtype)

    def train_epoch(self, x, primitives, rewards, aux_targets,
                    rng: np.random.Generator, lr: float = 1e-4,
                    batch_size: int = 64, aux_on: bool = True,
                    class_w: np.ndarray | None = None,
                    aux_weight: float = 0.1) -> float:
        n = x.shape[0]
        if class_w is None:
            class_w = class_weights(primitives, rewards, self.spec.n_primitives)
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            loss, grads = self.loss_and_grads(
                x[sel], primitives[sel], rewards[sel], aux_targets[sel],
                rng, aux_on=aux_on, class_w=class_w, aux_weight=aux_weight)
            self.adam_step(grads, lr)
            total += loss * sel.size
            seen += sel.size
        return total / max(seen, 1)

    def validation_bce(self, x, primitives, rewards,
                       batch_size: int = 256) -> float:
        """Unweighted BCE of the executed-primitive probability, eval mode."""
        n = x.shape[0]
        total = 0.0
        for start in range(0, n, batch_size):
            xs = x[start:start + batch_size]
            out = self.forward(xs)
            vec = out[:, :, 0, 0]
            idx = np.arange(xs.shape[0])
            p = sigmoid(vec[idx, primitives[start:start + batch_size]]
                        .astype(np.float64))
            total += float(np.sum(bce(p, rewards[start:start + batch_size]
                                      .astype(np.float64))))
        return total / max(n, 1)

    # -- serialization ---------------------------------------------------------

    def save(self, path: str, include_optimizer: bool = True) -> None:
        arrays: list[tuple[str, np.ndarray]] = []
        for name, arr in self.params.items():
            arrays.append((f"p/{name}", arr))
        for name, arr in self.buffers.items():
            arrays.append((f"buf/{name}", arr))
        if include_optimizer:
            for name, arr in self.adam_m.items():
                arrays.append((f"m/{name}", arr))
            for name, arr in self.adam_v.items():
                arrays.append((f"v/{name}", arr))
        manifest = [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)}
                    for n, a in arrays]
        header = json.dumps({
            "spec": asdict(self.spec), "dtype": self.dtype.str,
            "adam_t": self.adam_t, "arrays": manifest,
        }, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            for _, a in arrays:
                f.write(np.ascontiguousarray(a).tobytes())

    @staticmethod
    def load(path: str) -> "RewardModel":
        with open(path, "rb") as f:
            raw = f.read()
        if not raw.startswith(MAGIC):
            raise ModelFormatError("bad magic, not a model file")
        off = len(MAGIC)
        (hlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
        off += hlen
        spec_d = header["spec"]
        spec = ModelSpec(channels=tuple(spec_d["channels"]),
                         dilations=tuple(spec_d["dilations"]),
                         kernel=spec_d["kernel"],
                         n_primitives=spec_d["n_primitives"],
                         dropout=spec_d["dropout"],
                         momentum=spec_d["momentum"])
        model = RewardModel(spec, dtype=np.dtype(header["dtype"]))
        model.adam_t = header["adam_t"]
        for entry in header["arrays"]:
            dt = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            nbytes = dt.itemsize * int(np.prod(shape)) if shape else dt.itemsize
            arr = np.frombuffer(raw, dtype=dt, count=int(np.prod(shape)),
                                offset=off).reshape(shape).copy()
            off += nbytes
            group, name = entry["name"].split("/", 1)
            target = {"p": model.params, "buf": model.buffers,
                      "m": model.adam_m, "v": model.adam_v}[group]
            if name not in target:
                raise ModelFormatError(f"unexpected array {entry['name']}")
            target[name] = arr
        return model


def input_from_values(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Stack (heights with unknown as zero, unknown indicator) as channels."""
    filled = np.where(mask, 0.0, values).astype(np.float32)
    return np.stack([filled, mask.astype(np.float32)], axis=0)
