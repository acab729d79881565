"""From-scratch 3-layer GRU with activity and presence heads.

The cell follows the standard recurrence: update gate z and reset gate r
are sigmoids of W.[h, x] + b; the candidate state is tanh of
W.[r*h, x] + b; the new state is the convex mix (1-z)*h + z*h_candidate
with h0 = 0.  Layers stack (each layer consumes the hidden sequence of
the one below) and two linear heads read the final hidden state of the
top layer: a 7-way activity head and a 2-way presence head.

Training is plain reverse-mode differentiation through the unrolled
recurrence (BPTT) with an Adam update; the batched forward keeps a full
gate trace so the backward pass never recomputes activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .errors import (
    DimensionError,
    DivergenceError,
    IndexRangeError,
    StaleTraceError,
)
from .labels import ACTIVITIES, NO_PERSON_ID

PRESENCE_PERSON = 0  # presence head class 0: someone in the scene
PRESENCE_EMPTY = 1


@dataclass(frozen=True)
class GruConfig:
    feature_count: int = 49
    hidden: int = 64
    layers: int = 3
    activity_classes: int = len(ACTIVITIES)
    presence_classes: int = 2


@dataclass(frozen=True)
class GruLayerParams:
    """One layer: gate weights of shape (hidden, hidden + input) and biases.

    Column layout matches the concatenation order [h_prev, x].
    """

    wz: np.ndarray
    wr: np.ndarray
    w: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.bz.size

    @property
    def input_size(self) -> int:
        return self.wz.shape[1] - self.bz.size


@dataclass(frozen=True)
class GruNetwork:
    layers: tuple
    w_activity: np.ndarray
    b_activity: np.ndarray
    w_presence: np.ndarray
    b_presence: np.ndarray
    feature_count: int
    hidden: int
    seed: int
    version: int = 0

    @property
    def dtype(self):
        return self.w_activity.dtype

    def tensors(self) -> dict:
        """Named parameter tensors in a stable order."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.wz"] = layer.wz
            out[f"layer{i}.wr"] = layer.wr
            out[f"layer{i}.w"] = layer.w
            out[f"layer{i}.bz"] = layer.bz
            out[f"layer{i}.br"] = layer.br
            out[f"layer{i}.b"] = layer.b
        out["head.activity.w"] = self.w_activity
        out["head.activity.b"] = self.b_activity
        out["head.presence.w"] = self.w_presence
        out["head.presence.b"] = self.b_presence
        return out

    def with_tensors(self, tensors: dict) -> "GruNetwork":
        layers = []
        for i in range(len(self.layers)):
            layers.append(
                GruLayerParams(
                    wz=tensors[f"layer{i}.wz"],
                    wr=tensors[f"layer{i}.wr"],
                    w=tensors[f"layer{i}.w"],
                    bz=tensors[f"layer{i}.bz"],
                    br=tensors[f"layer{i}.br"],
                    b=tensors[f"layer{i}.b"],
                )
            )
        return replace(
            self,
            layers=tuple(layers),
            w_activity=tensors["head.activity.w"],
            b_activity=tensors["head.activity.b"],
            w_presence=tensors["head.presence.w"],
            b_presence=tensors["head.presence.b"],
            version=self.version + 1,
        )


def init_params(config: GruConfig, seed: int, dtype=np.float32) -> GruNetwork:
    """Deterministic init: weights uniform(-1/sqrt(hidden), +), biases zero."""
    rng = np.random.default_rng(seed)
    h = config.hidden
    bound = 1.0 / np.sqrt(h)

    def uniform(shape):
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    layers = []
    for i in range(config.layers):
        in_size = config.feature_count if i == 0 else h
        layers.append(
            GruLayerParams(
                wz=uniform((h, h + in_size)),
                wr=uniform((h, h + in_size)),
                w=uniform((h, h + in_size)),
                bz=np.zeros(h, dtype=dtype),
                br=np.zeros(h, dtype=dtype),
                b=np.zeros(h, dtype=dtype),
            )
        )
    return GruNetwork(
        layers=tuple(layers),
        w_activity=uniform((config.activity_classes, h)),
        b_activity=np.zeros(config.activity_classes, dtype=dtype),
        w_presence=uniform((config.presence_classes, h)),
        b_presence=np.zeros(config.presence_classes, dtype=dtype),
        feature_count=config.feature_count,
        hidden=h,
        seed=seed,
    )


def count_params(net: GruNetwork) -> int:
    return int(sum(t.size for t in net.tensors().values()))


@dataclass(frozen=True)
class Gates:
    z: np.ndarray
    r: np.ndarray
    h_candidate: np.ndarray


def cell_forward(params: GruLayerParams, h_prev, x):
    """One literal cell step; returns (h_new, Gates)."""
    h_prev = np.asarray(h_prev)
    x = np.asarray(x)
    if h_prev.shape != (params.hidden,):
        raise DimensionError(
            f"h_prev shape {h_prev.shape} != ({params.hidden},)"
        )
    if x.shape != (params.input_size,):
        raise DimensionError(f"x shape {x.shape} != ({params.input_size},)")
    hx = np.concatenate([h_prev, x])
    z = expit(params.wz @ hx + params.bz)
    r = expit(params.wr @ hx + params.br)
    rhx = np.concatenate([r * h_prev, x])
    h_candidate = np.tanh(params.w @ rhx + params.b)
    h_new = (1.0 - z) * h_prev + z * h_candidate
    return h_new, Gates(z=z, r=r, h_candidate=h_candidate)


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, batched (B first)."""

    inputs: tuple  # per layer: (B, T, input_size)
    z: tuple  # per layer: (B, T, hidden)
    r: tuple
    h_candidate: tuple
    h: tuple
    activity_logits: np.ndarray  # (B, activity_classes)
    presence_logits: np.ndarray  # (B, presence_classes)
    version: int

    @property
    def seq_len(self) -> int:
        return self.z[0].shape[1]


def _layer_forward(params: GruLayerParams, x_seq, keep_trace: bool):
    b, t_len, _ = x_seq.shape
    h_dim = params.hidden
    wz_h, wz_x = params.wz[:, :h_dim], params.wz[:, h_dim:]
    wr_h, wr_x = params.wr[:, :h_dim], params.wr[:, h_dim:]
    wc_h, wc_x = params.w[:, :h_dim], params.w[:, h_dim:]
    # input projections for all timesteps in one pass
    ax_z = x_seq @ wz_x.T + params.bz
    ax_r = x_seq @ wr_x.T + params.br
    ax_c = x_seq @ wc_x.T + params.b

    h = np.zeros((b, h_dim), dtype=x_seq.dtype)
    h_seq = np.empty((b, t_len, h_dim), dtype=x_seq.dtype)
    if keep_trace:
        z_seq = np.empty_like(h_seq)
        r_seq = np.empty_like(h_seq)
        c_seq = np.empty_like(h_seq)
    for t in range(t_len):
        z = expit(ax_z[:, t] + h @ wz_h.T)
        r = expit(ax_r[:, t] + h @ wr_h.T)
        hc = np.tanh(ax_c[:, t] + (r * h) @ wc_h.T)
        h = (1.0 - z) * h + z * hc
        h_seq[:, t] = h
        if keep_trace:
            z_seq[:, t] = z
            r_seq[:, t] = r
            c_seq[:, t] = hc
    if keep_trace:
        return h_seq, z_seq, r_seq, c_seq
    return h_seq, None, None, None


def _forward_batch(net: GruNetwork, windows, keep_trace: bool = True):
    """Run (B, features, T) windows through the stack.

    Returns a ForwardTrace; gate sequences are None when keep_trace is
    False (inference-only path).
    """
    windows = np.asarray(windows, dtype=net.dtype)
    if windows.ndim != 3 or windows.shape[1] != net.feature_count:
        raise DimensionError(
            f"windows shape {windows.shape} incompatible with "
            f"feature count {net.feature_count}"
        )
    x_seq = np.ascontiguousarray(windows.transpose(0, 2, 1))
    inputs, zs, rs, cs, hs = [], [], [], [], []
    for params in net.layers:
        inputs.append(x_seq)
        h_seq, z_seq, r_seq, c_seq = _layer_forward(params, x_seq, keep_trace)
        hs.append(h_seq)
        zs.append(z_seq)
        rs.append(r_seq)
        cs.append(c_seq)
        x_seq = h_seq
    h_final = x_seq[:, -1]
    activity = h_final @ net.w_activity.T + net.b_activity
    presence = h_final @ net.w_presence.T + net.b_presence
    return ForwardTrace(
        inputs=tuple(inputs),
        z=tuple(zs),
        r=tuple(rs),
        h_candidate=tuple(cs),
        h=tuple(hs),
        activity_logits=activity,
        presence_logits=presence,
        version=net.version,
    )


def network_forward(net: GruNetwork, window):
    """Single-window forward pass.

    ``window`` is (feature_count, T); returns (activity logits, presence
    logits, trace).
    """
    window = np.asarray(window)
    if window.ndim != 2 or window.shape[0] != net.feature_count:
        raise DimensionError(
            f"window shape {window.shape} != ({net.feature_count}, T)"
        )
    trace = _forward_batch(net, window[None])
    return trace.activity_logits[0], trace.presence_logits[0], trace


def forward_logits(net: GruNetwork, windows, batch_size: int = 256):
    """(B, F, T) -> (activity logits, presence logits), no trace kept."""
    windows = np.asarray(windows)
    acts, press = [], []
    for start in range(0, windows.shape[0], batch_size):
        tr = _forward_batch(net, windows[start : start + batch_size], keep_trace=False)
        acts.append(tr.activity_logits)
        press.append(tr.presence_logits)
    return np.concatenate(acts), np.concatenate(press)


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, target: int):
    """Stabilised softmax + cross-entropy; gradient is softmax - one_hot."""
    logits = np.asarray(logits)
    if logits.ndim != 1:
        raise DimensionError("softmax_cross_entropy expects a logit vector")
    if not 0 <= target < logits.size:
        raise IndexRangeError(f"target {target} out of range for {logits.size} classes")
    p = softmax(logits)
    loss = -np.log(p[target])
    grad = p.copy()
    grad[target] -= 1.0
    return float(loss), grad.astype(logits.dtype, copy=False)


def _batch_ce(logits, targets):
    """Per-row CE losses and gradients for (B, C) logits."""
    p = softmax(logits)
    rows = np.arange(logits.shape[0])
    losses = -np.log(p[rows, targets])
    grads = p
    grads[rows, targets] -= 1.0
    return losses, grads.astype(logits.dtype, copy=False)


def batch_loss(net: GruNetwork, windows, labels, loss_weights=(1.0, 1.0)):
    """Joint loss over a labelled batch.

    Activity CE is averaged over occupied-scene windows only (the 7-way
    head has no target when nobody is present); presence CE is averaged
    over the whole batch.  Returns (loss, dlogits_activity,
    dlogits_presence, trace).
    """
    labels = np.asarray(labels)
    trace = _forward_batch(net, windows)
    b = labels.size
    w_act, w_pres = loss_weights

    d_act = np.zeros_like(trace.activity_logits)
    act_loss = 0.0
    person = labels < NO_PERSON_ID
    n_person = int(person.sum())
    if n_person and w_act != 0.0:
        losses, grads = _batch_ce(
            trace.activity_logits[person], labels[person].astype(np.int64)
        )
        act_loss = float(losses.mean())
        d_act[person] = grads * (w_act / n_person)

    presence_targets = np.where(person, PRESENCE_PERSON, PRESENCE_EMPTY)
    pres_loss = 0.0
    d_pres = np.zeros_like(trace.presence_logits)
    if w_pres != 0.0:
        losses, grads = _batch_ce(trace.presence_logits, presence_targets)
        pres_loss = float(losses.mean())
        d_pres = grads * (w_pres / b)

    loss = w_act * act_loss + w_pres * pres_loss
    return loss, d_act, d_pres, trace


def _layer_backward(params: GruLayerParams, x_seq, z, r, hc, h, dout, grads, prefix):
    b, t_len, h_dim = z.shape
    wz_h, wz_x = params.wz[:, :h_dim], params.wz[:, h_dim:]
    wr_h, wr_x = params.wr[:, :h_dim], params.wr[:, h_dim:]
    wc_h, wc_x = params.w[:, :h_dim], params.w[:, h_dim:]

    h_prev = np.concatenate(
        [np.zeros((b, 1, h_dim), dtype=h.dtype), h[:, :-1]], axis=1
    )
    daz = np.empty_like(z)
    dar = np.empty_like(z)
    dac = np.empty_like(z)
    carry = np.zeros((b, h_dim), dtype=h.dtype)
    for t in range(t_len - 1, -1, -1):
        dh = dout[:, t] + carry
        zt, rt, ct, hp = z[:, t], r[:, t], hc[:, t], h_prev[:, t]
        dz = dh * (ct - hp)
        d_c = dh * zt
        dhp = dh * (1.0 - zt)
        da_c = d_c * (1.0 - ct * ct)
        drh = da_c @ wc_h
        dhp += drh * rt
        dr = drh * hp
        da_r = dr * rt * (1.0 - rt)
        da_z = dz * zt * (1.0 - zt)
        dhp += da_r @ wr_h + da_z @ wz_h
        daz[:, t] = da_z
        dar[:, t] = da_r
        dac[:, t] = da_c
        carry = dhp

    hx = np.concatenate([h_prev, x_seq], axis=2)
    flat_hx = hx.reshape(-1, hx.shape[2])
    rh_x = np.concatenate([r * h_prev, x_seq], axis=2).reshape(-1, hx.shape[2])
    grads[f"{prefix}.wz"] = daz.reshape(-1, h_dim).T @ flat_hx
    grads[f"{prefix}.wr"] = dar.reshape(-1, h_dim).T @ flat_hx
    grads[f"{prefix}.w"] = dac.reshape(-1, h_dim).T @ rh_x
    grads[f"{prefix}.bz"] = daz.sum(axis=(0, 1))
    grads[f"{prefix}.br"] = dar.sum(axis=(0, 1))
    grads[f"{prefix}.b"] = dac.sum(axis=(0, 1))
    return daz @ wz_x + dar @ wr_x + dac @ wc_x


def backward_bptt(net: GruNetwork, trace: ForwardTrace, dlogits_activity, dlogits_presence):
    """Gradients of the batch loss wrt every parameter tensor.

    ``trace`` must come from a forward pass on the same parameter version,
    otherwise the stored activations are stale.
    """
    if trace.version != net.version:
        raise StaleTraceError(
            f"trace built for parameter version {trace.version}, "
            f"network is at {net.version}"
        )
    d_act = np.asarray(dlogits_activity, dtype=net.dtype)
    d_pres = np.asarray(dlogits_presence, dtype=net.dtype)
    grads: dict = {}
    h_final = trace.h[-1][:, -1]
    grads["head.activity.w"] = d_act.T @ h_final
    grads["head.activity.b"] = d_act.sum(axis=0)
    grads["head.presence.w"] = d_pres.T @ h_final
    grads["head.presence.b"] = d_pres.sum(axis=0)

    b, t_len, h_dim = trace.h[-1].shape
    dh_final = d_act @ net.w_activity + d_pres @ net.w_presence
    dout = np.zeros((b, t_len, h_dim), dtype=net.dtype)
    dout[:, -1] = dh_final
    for i in range(len(net.layers) - 1, -1, -1):
        dout = _layer_backward(
            net.layers[i],
            trace.inputs[i],
            trace.z[i],
            trace.r[i],
            trace.h_candidate[i],
            trace.h[i],
            dout,
            grads,
            f"layer{i}",
        )
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(tensors: dict, grads: dict, state: AdamState):
    """One Adam step; returns (new tensors, advanced state)."""
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, state.step + 1)
    t = new_state.step
    out = {}
    for name, theta in tensors.items():
        g = grads[name].astype(theta.dtype, copy=False)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        out[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_state.m[name] = m
        new_state.v[name] = v
    return out, new_state


def train_step(net: GruNetwork, windows, labels, opt: AdamState, loss_weights=(1.0, 1.0)):
    """One optimizer step on a labelled batch; returns (net, opt, loss)."""
    loss, d_act, d_pres, trace = batch_loss(net, windows, labels, loss_weights)
    if not np.isfinite(loss):
        raise DivergenceError(
            f"non-finite loss at optimizer step {opt.step + 1}: {loss!r} "
            f"(lr={opt.lr}, batch={np.asarray(labels).size})"
        )
    grads = backward_bptt(net, trace, d_act, d_pres)
    tensors, opt2 = adam_update(net.tensors(), grads, opt)
    return net.with_tensors(tensors), opt2, loss


def evaluate_network(net: GruNetwork, windows, labels):
    """Per-class activity accuracy plus presence accuracy.

    Activity accuracy for each class is measured on that class's windows
    with the 7-way head; presence accuracy is measured on all windows.
    Returns a dict: per-class accuracies (None when a class has no
    windows), 'presence', and 'mean' over classes that appeared.
    """
    labels = np.asarray(labels)
    act_logits, pres_logits = forward_logits(net, windows)
    act_pred = act_logits.argmax(axis=1)
    pres_pred = pres_logits.argmax(axis=1)
    person = labels < NO_PERSON_ID

    per_class = {}
    accs = []
    for class_id, name in enumerate(ACTIVITIES):
        mask = labels == class_id
        if not mask.any():
            per_class[name] = None
            continue
        acc = float((act_pred[mask] == class_id).mean())
        per_class[name] = acc
        accs.append(acc)
    presence_target = np.where(person, PRESENCE_PERSON, PRESENCE_EMPTY)
    presence_acc = float((pres_pred == presence_target).mean())
    return {
        "per_class": per_class,
        "presence": presence_acc,
        "mean": float(np.mean(accs)) if accs else None,
    }
