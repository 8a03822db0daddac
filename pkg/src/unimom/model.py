"""Multi-gate mixture-of-experts network for multi-horizon momentum scores.

Shared LSTM experts read each asset's feature sequence (shared weights, one
pass per asset row, so the model is permutation-equivariant over assets).
Three task gates map the asset's last-step features to a convex combination
of expert states, and three task heads turn the mixtures into per-asset
position scores in (-1, 1) via tanh.  A fourth gate, fed the cross-sectional
mean of the last-step features, weights pooled summaries of the three score
vectors; the allocation head maps those to simplex weights over the three
sub-portfolios.

All rows of a forward call share one date-major layout: inputs of shape
(n_dates * n_assets, seq_len, n_features) are processed in a single pass and
reshaped back to (n_dates, n_assets) at the head outputs.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["N_FEATURES", "TASKS", "GRID_DOMAINS", "MmoeConfig", "MmoeModel",
           "init_model", "validate_grid_config", "save_model", "load_model"]

N_FEATURES = 7
TASKS = ("fast", "medium", "slow")

GRID_DOMAINS = {
    "lstm_layers": (1, 2, 3),
    "lstm_hidden": (64, 126, 252, 512),
    "n_experts": (3, 6, 9, 12),
    "task_layers": (2, 3, 4),
    "task_hidden": (64, 126, 252, 512),
}

CHECKPOINT_VERSION = 1


def lstm_sequence(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """One LSTM layer swept over a whole sequence as a single taped op.

    ``x`` is (steps, rows, in_dim); the result is the hidden sequence
    (steps, rows, hidden), starting from zero state.  Gate order in the
    packed weight matrices is input, forget, cell, output.  The backward pass
    is the standard truncated-nothing BPTT recursion over the cached gate
    activations; fusing the sweep keeps the tape short, which matters because
    every entry costs Python dispatch.
    """
    steps, rows, _ = x.data.shape
    hid = w_hh.data.shape[0]
    xd, wi, wh, b = x.data, w_ih.data, w_hh.data, bias.data

    gates = np.empty((steps, rows, 4 * hid))
    cells = np.empty((steps, rows, hid))
    tanh_c = np.empty((steps, rows, hid))
    hidden = np.empty((steps, rows, hid))
    h = np.zeros((rows, hid))
    c = np.zeros((rows, hid))
    for t in range(steps):
        z = xd[t] @ wi + h @ wh + b
        z[:, :hid] = 1.0 / (1.0 + np.exp(-z[:, :hid]))
        z[:, hid:2 * hid] = 1.0 / (1.0 + np.exp(-z[:, hid:2 * hid]))
        z[:, 2 * hid:3 * hid] = np.tanh(z[:, 2 * hid:3 * hid])
        z[:, 3 * hid:] = 1.0 / (1.0 + np.exp(-z[:, 3 * hid:]))
        gates[t] = z
        c = z[:, hid:2 * hid] * c + z[:, :hid] * z[:, 2 * hid:3 * hid]
        cells[t] = c
        tanh_c[t] = np.tanh(c)
        h = z[:, 3 * hid:] * tanh_c[t]
        hidden[t] = h

    def backward(g_out):
        dwi = np.zeros_like(wi)
        dwh = np.zeros_like(wh)
        db = np.zeros_like(b)
        dx = np.empty_like(xd)
        dh_carry = np.zeros((rows, hid))
        dc = np.zeros((rows, hid))
        for t in range(steps - 1, -1, -1):
            i_g = gates[t, :, :hid]
            f_g = gates[t, :, hid:2 * hid]
            g_g = gates[t, :, 2 * hid:3 * hid]
            o_g = gates[t, :, 3 * hid:]
            dh = g_out[t] + dh_carry
            dc = dc + dh * o_g * (1.0 - tanh_c[t] * tanh_c[t])
            c_prev = cells[t - 1] if t > 0 else np.zeros((rows, hid))
            dz = np.empty((rows, 4 * hid))
            dz[:, :hid] = dc * g_g * i_g * (1.0 - i_g)
            dz[:, hid:2 * hid] = dc * c_prev * f_g * (1.0 - f_g)
            dz[:, 2 * hid:3 * hid] = dc * i_g * (1.0 - g_g * g_g)
            dz[:, 3 * hid:] = dh * tanh_c[t] * o_g * (1.0 - o_g)
            h_prev = hidden[t - 1] if t > 0 else np.zeros((rows, hid))
            dwi += xd[t].T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[t] = dz @ wi.T
            dh_carry = dz @ wh.T
            dc = dc * f_g
        return dx, dwi, dwh, db

    return ad.custom_op(hidden, (x, w_ih, w_hh, bias), backward)


@dataclass(frozen=True)
class MmoeConfig:
    n_experts: int
    lstm_layers: int
    lstm_hidden: int
    task_layers: int
    task_hidden: int
    sequence_length: int = 63
    seed: int = 0


def validate_grid_config(config: MmoeConfig):
    """Reject configs outside the hyperparameter search domains."""
    for field, domain in GRID_DOMAINS.items():
        value = getattr(config, field)
        if value not in domain:
            raise ValueError(f"{field}={value} outside search domain {domain}")


class MmoeModel:
    """Parameter container plus the forward pass."""

    def __init__(self, config: MmoeConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for name, arr in snap.items():
            self.params[name].data[...] = arr

    # ----- forward -----

    def _lstm_features(self, expert: int, seq: np.ndarray) -> Tensor:
        """Final top-layer hidden state for every row of ``seq``."""
        cfg = self.config
        x = Tensor(np.ascontiguousarray(seq.transpose(1, 0, 2)))  # (T, rows, in)
        for layer in range(cfg.lstm_layers):
            x = lstm_sequence(x,
                              self.params[f"expert{expert}.layer{layer}.w_ih"],
                              self.params[f"expert{expert}.layer{layer}.w_hh"],
                              self.params[f"expert{expert}.layer{layer}.bias"])
        return x[x.data.shape[0] - 1]

    def _head(self, prefix: str, x: Tensor, out_dim: int) -> Tensor:
        cfg = self.config
        z = x
        for j in range(cfg.task_layers - 1):
            w = self.params[f"{prefix}.layer{j}.w"]
            b = self.params[f"{prefix}.layer{j}.b"]
            z = ad.tanh(ad.add(ad.matmul(z, w), b))
        w = self.params[f"{prefix}.out.w"]
        b = self.params[f"{prefix}.out.b"]
        return ad.add(ad.matmul(z, w), b)

    def forward_group(self, seq: np.ndarray, n_dates: int, n_assets: int,
                      score_override: dict | None = None):
        """Scores and allocation weights for a rectangular block of dates.

        ``seq`` is (n_dates * n_assets, seq_len, 7), date-major.  Returns a
        dict task -> Tensor (n_dates, n_assets) of position scores and a
        Tensor (n_dates, 3) of simplex allocation weights.  With
        ``score_override`` the per-task score arrays are replaced by the
        given constants, freezing the task pathways so gradient reaches only
        the allocation gate and head.
        """
        if n_assets < 1:
            raise ValueError("zero active assets")
        if seq.shape[0] != n_dates * n_assets or seq.shape[2] != N_FEATURES:
            raise ValueError(f"bad input block shape {seq.shape}")
        cfg = self.config
        last_feats = Tensor(np.ascontiguousarray(seq[:, -1, :]))

        scores = {}
        if score_override is not None:
            for task in TASKS:
                scores[task] = Tensor(np.asarray(score_override[task], dtype=np.float64))
        else:
            expert_states = [self._lstm_features(e, seq) for e in range(cfg.n_experts)]
            for task in TASKS:
                gw = self.params[f"gate.{task}.w"]
                gb = self.params[f"gate.{task}.b"]
                alpha = ad.softmax(ad.add(ad.matmul(last_feats, gw), gb))
                mix = None
                for e, state in enumerate(expert_states):
                    weighted = ad.mul(ad.repeat_cols(alpha[:, e:e + 1], cfg.lstm_hidden), state)
                    mix = weighted if mix is None else ad.add(mix, weighted)
                y = ad.tanh(self._head(f"head.{task}", mix, 1))
                scores[task] = ad.reshape(y, (n_dates, n_assets))

        # allocation path: gate on the cross-sectional mean of the raw
        # last-step features (a constant w.r.t. parameters)
        date_feats = Tensor(seq[:, -1, :].reshape(n_dates, n_assets, N_FEATURES).mean(axis=1))
        beta = ad.softmax(ad.add(ad.matmul(date_feats, self.params["gate.alloc.w"]),
                                 self.params["gate.alloc.b"]))
        pieces = []
        for k, task in enumerate(TASKS):
            y = scores[task]
            pool = ad.concat([
                ad.mean(y, axis=1, keepdims=True),
                ad.std(y, axis=1, keepdims=True),
                ad.mean(ad.absolute(y), axis=1, keepdims=True),
            ], axis=1)
            pieces.append(ad.mul(ad.repeat_cols(beta[:, k:k + 1], 3), pool))
        pieces.append(beta)
        alloc_in = ad.concat(pieces, axis=1)
        weights = ad.softmax(self._head("alloc", alloc_in, 3))
        return scores, weights

    def predict(self, seq: np.ndarray, n_dates: int, n_assets: int):
        """Inference helper: plain arrays, no tape required."""
        scores, weights = self.forward_group(seq, n_dates, n_assets)
        return ({task: t.data.copy() for task, t in scores.items()},
                weights.data.copy())


def _glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(config: MmoeConfig, strict: bool = True) -> MmoeModel:
    """Build a model with Glorot-uniform affine weights.

    LSTM forget-gate biases start at 1, every other bias at 0.  Parameter
    creation order is fixed, so a seed pins every weight bit-for-bit.  With
    ``strict`` the config must come from the search domains; tests use
    ``strict=False`` to build deliberately tiny networks.
    """
    if strict:
        validate_grid_config(config)
    for field in ("n_experts", "lstm_layers", "lstm_hidden", "task_layers",
                  "task_hidden", "sequence_length"):
        if getattr(config, field) < 1:
            raise ValueError(f"{field} must be positive")

    rng = np.random.default_rng(config.seed)
    hid = config.lstm_hidden
    params: dict[str, Tensor] = {}

    def param(name, arr):
        params[name] = Tensor(arr, requires_grad=True)

    for e in range(config.n_experts):
        in_dim = N_FEATURES
        for layer in range(config.lstm_layers):
            param(f"expert{e}.layer{layer}.w_ih",
                  _glorot(rng, in_dim, 4 * hid, (in_dim, 4 * hid)))
            param(f"expert{e}.layer{layer}.w_hh",
                  _glorot(rng, hid, 4 * hid, (hid, 4 * hid)))
            bias = np.zeros(4 * hid)
            bias[hid:2 * hid] = 1.0
            param(f"expert{e}.layer{layer}.bias", bias)
            in_dim = hid

    for task in TASKS:
        param(f"gate.{task}.w",
              _glorot(rng, N_FEATURES, config.n_experts, (N_FEATURES, config.n_experts)))
        param(f"gate.{task}.b", np.zeros(config.n_experts))
    param("gate.alloc.w", _glorot(rng, N_FEATURES, len(TASKS), (N_FEATURES, len(TASKS))))
    param("gate.alloc.b", np.zeros(len(TASKS)))

    def head_params(prefix, in_dim, out_dim):
        dim = in_dim
        for j in range(config.task_layers - 1):
            param(f"{prefix}.layer{j}.w",
                  _glorot(rng, dim, config.task_hidden, (dim, config.task_hidden)))
            param(f"{prefix}.layer{j}.b", np.zeros(config.task_hidden))
            dim = config.task_hidden
        param(f"{prefix}.out.w", _glorot(rng, dim, out_dim, (dim, out_dim)))
        param(f"{prefix}.out.b", np.zeros(out_dim))

    for task in TASKS:
        head_params(f"head.{task}", hid, 1)
    head_params("alloc", 3 * len(TASKS) + 3, len(TASKS))

    return MmoeModel(config, params)


def save_model(model: MmoeModel, path):
    """Versioned npz checkpoint; float64 arrays round-trip bit-exactly."""
    header = json.dumps({"version": CHECKPOINT_VERSION,
                         "config": asdict(model.config)}, sort_keys=True)
    arrays = {name: p.data for name, p in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(header.encode(), dtype=np.uint8),
                 **arrays)


def load_model(path) -> MmoeModel:
    with np.load(path) as blob:
        header = json.loads(bytes(blob["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        config = MmoeConfig(**header["config"])
        model = init_model(config, strict=False)
        for name, p in model.params.items():
            p.data[...] = blob[name]
    return model
