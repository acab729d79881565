"""INT8 post-training quantization and the quantized inference path.

Weights are quantized symmetrically per tensor (scale = max|x|/127, zero
point 0); activations at layer boundaries use asymmetric per-tensor
ranges observed on a calibration set.  Rounding is half-away-from-zero
everywhere so independent implementations agree bit-exactly.  The
quantized forward pass accumulates 8-bit by 8-bit products in wide
integers and applies the gate nonlinearities in real arithmetic after
rescaling; it is a single numba kernel, which is also what makes the
INT8 path cheaper per window than the BLAS float path on small hidden
sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (
    DimensionError,
    HalfRangeError,
    NumericInputError,
    UncalibratedError,
)
from .gru import GruNetwork, _forward_batch

QMAX = 127


@dataclass(frozen=True)
class QuantTensor:
    values: np.ndarray  # int8
    scale: float
    zero_point: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.int8)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class ActQuant:
    scale: float
    zero_point: int


@dataclass(frozen=True)
class CalibrationSet:
    """Sample windows (N, features, T) used to observe activation ranges."""

    windows: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=np.float32)
        if w.ndim != 3 or w.shape[0] == 0:
            raise DimensionError("calibration set must be a non-empty (N, F, T) array")
        object.__setattr__(self, "windows", w)


def _round_half_away(x):
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def quantize_tensor(x, mode: str = "symmetric") -> QuantTensor:
    """Symmetric per-tensor quantization to int8 in [-127, 127]."""
    if mode != "symmetric":
        raise ValueError(f"unsupported mode {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericInputError("quantize_tensor: non-finite entry")
    amax = float(np.max(np.abs(x))) if x.size else 0.0
    scale = amax / QMAX if amax > 0.0 else 1.0
    q = np.clip(_round_half_away(x / scale), -QMAX, QMAX).astype(np.int8)
    return QuantTensor(values=q, scale=scale, zero_point=0)


def dequantize(qt: QuantTensor) -> np.ndarray:
    return (qt.values.astype(np.float64) - qt.zero_point) * qt.scale


def _act_quant(lo: float, hi: float) -> ActQuant:
    lo = min(float(lo), 0.0)
    hi = max(float(hi), 0.0)
    if hi == lo:
        return ActQuant(scale=1.0, zero_point=0)
    scale = (hi - lo) / (2 * QMAX)
    zp = int(np.clip(round(-QMAX - lo / scale), -QMAX, QMAX))
    return ActQuant(scale=scale, zero_point=zp)


@dataclass(frozen=True)
class QuantGruLayer:
    wz: QuantTensor
    wr: QuantTensor
    w: QuantTensor
    bz: np.ndarray
    br: np.ndarray
    b: np.ndarray
    x_q: ActQuant | None = None
    h_q: ActQuant | None = None
    rh_q: ActQuant | None = None


@dataclass(frozen=True)
class QuantGruNetwork:
    layers: tuple
    w_activity: QuantTensor
    b_activity: np.ndarray
    w_presence: QuantTensor
    b_presence: np.ndarray
    head_q: ActQuant | None
    feature_count: int
    hidden: int
    seed: int

    @property
    def calibrated(self) -> bool:
        return self.head_q is not None and all(
            layer.x_q is not None for layer in self.layers
        )

    def weight_payload_bytes(self) -> int:
        total = 0
        for layer in self.layers:
            total += layer.wz.values.size + layer.wr.values.size + layer.w.values.size
        total += self.w_activity.values.size + self.w_presence.values.size
        return total  # one byte per int8 weight

    def stored_tensors(self) -> dict:
        out: dict = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.wz"] = layer.wz
            out[f"layer{i}.wr"] = layer.wr
            out[f"layer{i}.w"] = layer.w
            out[f"layer{i}.bz"] = layer.bz
            out[f"layer{i}.br"] = layer.br
            out[f"layer{i}.b"] = layer.b
            if layer.x_q is not None:
                out[f"layer{i}.act"] = np.array(
                    [
                        [layer.x_q.scale, layer.x_q.zero_point],
                        [layer.h_q.scale, layer.h_q.zero_point],
                        [layer.rh_q.scale, layer.rh_q.zero_point],
                    ],
                    dtype=np.float32,
                )
        out["head.activity.w"] = self.w_activity
        out["head.activity.b"] = self.b_activity
        out["head.presence.w"] = self.w_presence
        out["head.presence.b"] = self.b_presence
        if self.head_q is not None:
            out["head.act_in"] = np.array(
                [[self.head_q.scale, self.head_q.zero_point]], dtype=np.float32
            )
        return out

    @classmethod
    def from_stored(cls, tensors: dict, feature_count: int, hidden: int, layer_count: int, seed: int):
        def qt(name):
            arr, scale, zp = tensors[name]
            return QuantTensor(arr, float(scale), int(zp))

        def f32(name):
            arr, _, _ = tensors[name]
            return arr.astype(np.float32)

        layers = []
        for i in range(layer_count):
            x_q = h_q = rh_q = None
            key = f"layer{i}.act"
            if key in tensors:
                act = f32(key)
                x_q = ActQuant(float(act[0, 0]), int(act[0, 1]))
                h_q = ActQuant(float(act[1, 0]), int(act[1, 1]))
                rh_q = ActQuant(float(act[2, 0]), int(act[2, 1]))
            layers.append(
                QuantGruLayer(
                    wz=qt(f"layer{i}.wz"),
                    wr=qt(f"layer{i}.wr"),
                    w=qt(f"layer{i}.w"),
                    bz=f32(f"layer{i}.bz"),
                    br=f32(f"layer{i}.br"),
                    b=f32(f"layer{i}.b"),
                    x_q=x_q,
                    h_q=h_q,
                    rh_q=rh_q,
                )
            )
        head_q = None
        if "head.act_in" in tensors:
            arr = f32("head.act_in")
            head_q = ActQuant(float(arr[0, 0]), int(arr[0, 1]))
        return cls(
            layers=tuple(layers),
            w_activity=qt("head.activity.w"),
            b_activity=f32("head.activity.b"),
            w_presence=qt("head.presence.w"),
            b_presence=f32("head.presence.b"),
            head_q=head_q,
            feature_count=feature_count,
            hidden=hidden,
            seed=seed,
        )


def quantize_network(net: GruNetwork, calibration: CalibrationSet | None = None) -> QuantGruNetwork:
    """Quantize weights; with a calibration set, also fix activation ranges.

    Without calibration the result cannot run quant_forward (state error);
    it can still be saved and inspected.
    """
    act_ranges = None
    head_range = None
    if calibration is not None:
        act_ranges, head_range = _observe_ranges(net, calibration)

    layers = []
    for i, layer in enumerate(net.layers):
        x_q = h_q = rh_q = None
        if act_ranges is not None:
            x_q = _act_quant(*act_ranges[i]["x"])
            h_q = _act_quant(*act_ranges[i]["h"])
            rh_q = _act_quant(*act_ranges[i]["rh"])
        layers.append(
            QuantGruLayer(
                wz=quantize_tensor(layer.wz),
                wr=quantize_tensor(layer.wr),
                w=quantize_tensor(layer.w),
                bz=layer.bz.astype(np.float32),
                br=layer.br.astype(np.float32),
                b=layer.b.astype(np.float32),
                x_q=x_q,
                h_q=h_q,
                rh_q=rh_q,
            )
        )
    return QuantGruNetwork(
        layers=tuple(layers),
        w_activity=quantize_tensor(net.w_activity),
        b_activity=net.b_activity.astype(np.float32),
        w_presence=quantize_tensor(net.w_presence),
        b_presence=net.b_presence.astype(np.float32),
        head_q=_act_quant(*head_range) if head_range is not None else None,
        feature_count=net.feature_count,
        hidden=net.hidden,
        seed=net.seed,
    )


def _observe_ranges(net: GruNetwork, calibration: CalibrationSet):
    """Min/max of each quantized activation over the calibration windows."""
    ranges = []
    trace = _forward_batch(net, calibration.windows, keep_trace=True)
    for i in range(len(net.layers)):
        x = trace.inputs[i]
        h = trace.h[i]
        b, t_len, hidden = h.shape
        h_prev = np.concatenate(
            [np.zeros((b, 1, hidden), dtype=h.dtype), h[:, :-1]], axis=1
        )
        rh = trace.r[i] * h_prev
        ranges.append(
            {
                "x": (float(x.min()), float(x.max())),
                "h": (min(float(h.min()), 0.0), max(float(h.max()), 0.0)),
                "rh": (float(rh.min()), float(rh.max())),
            }
        )
    h_final = trace.h[-1][:, -1]
    head_range = (float(h_final.min()), float(h_final.max()))
    return ranges, head_range


@njit(cache=True, inline="always")
def _qscalar(v, scale, zp):
    q = v / scale
    if q >= 0.0:
        qi = int(q + 0.5)
    else:
        qi = -int(-q + 0.5)
    qi += zp
    if qi > 127:
        qi = 127
    elif qi < -127:
        qi = -127
    return qi


@njit(cache=True)
def _quant_forward_kernel(
    window,  # (T, F) float64, time-major
    wz_t,
    wr_t,
    wc_t,  # tuples of (H, H+i) int8 per layer
    bz_t,
    br_t,
    bc_t,  # tuples of (H,) float64 per layer
    w_scales,  # (L, 3) float64: scales for wz, wr, wc
    act_q,  # (L, 3, 2) float64: rows x, h, rh; cols scale, zero_point
    wa,
    ba,
    wa_scale,
    wp,
    bp,
    wp_scale,
    head_q,  # (2,) float64: scale, zero_point
):
    n_layers = len(wz_t)
    t_len = window.shape[0]
    x_cur = window
    for l in range(n_layers):
        wz = wz_t[l]
        wr = wr_t[l]
        wc = wc_t[l]
        h_dim = bz_t[l].size
        in_size = wz.shape[1] - h_dim
        sx = act_q[l, 0, 0]
        zx = int(act_q[l, 0, 1])
        sh = act_q[l, 1, 0]
        zh = int(act_q[l, 1, 1])
        srh = act_q[l, 2, 0]
        zrh = int(act_q[l, 2, 1])
        swz = w_scales[l, 0]
        swr = w_scales[l, 1]
        swc = w_scales[l, 2]

        # row sums let the zero-point term leave the inner loop
        rs = np.zeros((3, 2, h_dim), np.int64)
        for i in range(h_dim):
            for j in range(h_dim):
                rs[0, 0, i] += wz[i, j]
                rs[1, 0, i] += wr[i, j]
                rs[2, 0, i] += wc[i, j]
            for j in range(in_size):
                rs[0, 1, i] += wz[i, h_dim + j]
                rs[1, 1, i] += wr[i, h_dim + j]
                rs[2, 1, i] += wc[i, h_dim + j]

        qx = np.empty((t_len, in_size), np.int32)
        for t in range(t_len):
            for j in range(in_size):
                qx[t, j] = _qscalar(x_cur[t, j], sx, zx)

        h = np.zeros(h_dim, np.float64)
        h_new = np.empty(h_dim, np.float64)
        zv = np.empty(h_dim, np.float64)
        rv = np.empty(h_dim, np.float64)
        qh = np.empty(h_dim, np.int32)
        qrh = np.empty(h_dim, np.int32)
        h_seq = np.empty((t_len, h_dim), np.float64)
        for t in range(t_len):
            for i in range(h_dim):
                qh[i] = _qscalar(h[i], sh, zh)
            for i in range(h_dim):
                acc_h = 0
                acc_x = 0
                for j in range(h_dim):
                    acc_h += wz[i, j] * qh[j]
                for j in range(in_size):
                    acc_x += wz[i, h_dim + j] * qx[t, j]
                pre = (
                    swz * sh * (acc_h - zh * rs[0, 0, i])
                    + swz * sx * (acc_x - zx * rs[0, 1, i])
                    + bz_t[l][i]
                )
                zv[i] = 1.0 / (1.0 + math.exp(-pre))
            for i in range(h_dim):
                acc_h = 0
                acc_x = 0
                for j in range(h_dim):
                    acc_h += wr[i, j] * qh[j]
                for j in range(in_size):
                    acc_x += wr[i, h_dim + j] * qx[t, j]
                pre = (
                    swr * sh * (acc_h - zh * rs[1, 0, i])
                    + swr * sx * (acc_x - zx * rs[1, 1, i])
                    + br_t[l][i]
                )
                rv[i] = 1.0 / (1.0 + math.exp(-pre))
            for i in range(h_dim):
                qrh[i] = _qscalar(rv[i] * h[i], srh, zrh)
            for i in range(h_dim):
                acc_h = 0
                acc_x = 0
                for j in range(h_dim):
                    acc_h += wc[i, j] * qrh[j]
                for j in range(in_size):
                    acc_x += wc[i, h_dim + j] * qx[t, j]
                pre = (
                    swc * srh * (acc_h - zrh * rs[2, 0, i])
                    + swc * sx * (acc_x - zx * rs[2, 1, i])
                    + bc_t[l][i]
                )
                hc = math.tanh(pre)
                h_new[i] = (1.0 - zv[i]) * h[i] + zv[i] * hc
            for i in range(h_dim):
                h[i] = h_new[i]
                h_seq[t, i] = h[i]
        x_cur = h_seq

    h_dim = x_cur.shape[1]
    shq = head_q[0]
    zhq = int(head_q[1])
    qh_final = np.empty(h_dim, np.int32)
    for i in range(h_dim):
        qh_final[i] = _qscalar(x_cur[t_len - 1, i], shq, zhq)
    act = np.empty(wa.shape[0], np.float64)
    for c in range(wa.shape[0]):
        acc = 0
        row_sum = 0
        for i in range(h_dim):
            acc += wa[c, i] * qh_final[i]
            row_sum += wa[c, i]
        act[c] = wa_scale * shq * (acc - zhq * row_sum) + ba[c]
    pres = np.empty(wp.shape[0], np.float64)
    for c in range(wp.shape[0]):
        acc = 0
        row_sum = 0
        for i in range(h_dim):
            acc += wp[c, i] * qh_final[i]
            row_sum += wp[c, i]
        pres[c] = wp_scale * shq * (acc - zhq * row_sum) + bp[c]
    return act, pres


def quant_forward(qnet: QuantGruNetwork, window):
    """Quantized inference on one (feature_count, T) window."""
    if not qnet.calibrated:
        raise UncalibratedError(
            "network has no activation scales; quantize with a calibration set"
        )
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] != qnet.feature_count:
        raise DimensionError(
            f"window shape {window.shape} != ({qnet.feature_count}, T)"
        )
    n_layers = len(qnet.layers)
    wz_t = tuple(layer.wz.values for layer in qnet.layers)
    wr_t = tuple(layer.wr.values for layer in qnet.layers)
    wc_t = tuple(layer.w.values for layer in qnet.layers)
    bz_t = tuple(layer.bz.astype(np.float64) for layer in qnet.layers)
    br_t = tuple(layer.br.astype(np.float64) for layer in qnet.layers)
    bc_t = tuple(layer.b.astype(np.float64) for layer in qnet.layers)
    w_scales = np.array(
        [[layer.wz.scale, layer.wr.scale, layer.w.scale] for layer in qnet.layers],
        dtype=np.float64,
    )
    act_q = np.array(
        [
            [
                [layer.x_q.scale, layer.x_q.zero_point],
                [layer.h_q.scale, layer.h_q.zero_point],
                [layer.rh_q.scale, layer.rh_q.zero_point],
            ]
            for layer in qnet.layers
        ],
        dtype=np.float64,
    ).reshape(n_layers, 3, 2)
    act, pres = _quant_forward_kernel(
        np.ascontiguousarray(window.T),
        wz_t,
        wr_t,
        wc_t,
        bz_t,
        br_t,
        bc_t,
        w_scales,
        act_q,
        qnet.w_activity.values,
        qnet.b_activity.astype(np.float64),
        qnet.w_activity.scale,
        qnet.w_presence.values,
        qnet.b_presence.astype(np.float64),
        qnet.w_presence.scale,
        np.array([qnet.head_q.scale, qnet.head_q.zero_point], dtype=np.float64),
    )
    return act, pres


def fp16_roundtrip(net: GruNetwork) -> GruNetwork:
    """Round every parameter through IEEE half precision; compute stays fp32."""
    tensors = net.tensors()
    out = {}
    overflowed = []
    for name, tensor in tensors.items():
        with np.errstate(over="ignore"):
            half = tensor.astype(np.float16)
        if np.any(np.isinf(half) & np.isfinite(tensor)):
            overflowed.append(name)
        out[name] = half.astype(np.float32)
    if overflowed:
        raise HalfRangeError(
            "values overflow half precision in: " + ", ".join(overflowed)
        )
    return net.with_tensors(out)


def predict_logits(model, window):
    """Activity/presence logits from either network flavour, one window."""
    if isinstance(model, QuantGruNetwork):
        return quant_forward(model, window)
    from .gru import network_forward

    act, pres, _ = network_forward(model, np.asarray(window, dtype=model.dtype))
    return np.asarray(act, dtype=np.float64), np.asarray(pres, dtype=np.float64)


def _weight_payload_bytes(model) -> int:
    if isinstance(model, QuantGruNetwork):
        return model.weight_payload_bytes()
    total = 0
    for layer in model.layers:
        total += layer.wz.size + layer.wr.size + layer.w.size
    total += model.w_activity.size + model.w_presence.size
    return total * model.dtype.itemsize


def _arch_fields(model):
    if isinstance(model, QuantGruNetwork):
        return (
            model.feature_count,
            model.hidden,
            model.w_activity.values.shape[0],
            model.w_presence.values.shape[0],
            len(model.layers),
        )
    return (
        model.feature_count,
        model.hidden,
        model.w_activity.shape[0],
        model.w_presence.shape[0],
        len(model.layers),
    )


@dataclass(frozen=True)
class ClassAgreement:
    class_id: int
    name: str
    count: int
    agreement: float | None
    logit_mad: float | None


@dataclass(frozen=True)
class AgreementReport:
    """Argmax agreement between a reference and a candidate network.

    One row per activity class (grouped by the reference prediction) plus
    an overall summary, with the weight payload sizes of both models.
    """

    rows: tuple
    overall_agreement: float
    presence_agreement: float
    overall_logit_mad: float
    reference_weight_bytes: int
    candidate_weight_bytes: int

    @property
    def storage_ratio(self) -> float:
        return self.candidate_weight_bytes / self.reference_weight_bytes

    def to_records(self) -> list:
        records = [
            {
                "class_id": row.class_id,
                "class": row.name,
                "windows": row.count,
                "agreement": row.agreement,
                "logit_mad": row.logit_mad,
            }
            for row in self.rows
        ]
        records.append(
            {
                "class": "summary",
                "windows": sum(r.count for r in self.rows),
                "agreement": self.overall_agreement,
                "presence_agreement": self.presence_agreement,
                "logit_mad": self.overall_logit_mad,
                "reference_weight_bytes": self.reference_weight_bytes,
                "candidate_weight_bytes": self.candidate_weight_bytes,
                "storage_ratio": self.storage_ratio,
            }
        )
        return records

    def format_text(self) -> str:
        from .labels import HUMAN_NAMES

        lines = [f"{'class':<12}{'windows':>8}{'agree':>9}{'logit mad':>11}"]
        for row in self.rows:
            agree = f"{100.0 * row.agreement:.2f}%" if row.agreement is not None else "-"
            mad = f"{row.logit_mad:.4f}" if row.logit_mad is not None else "-"
            lines.append(
                f"{HUMAN_NAMES.get(row.name, row.name):<12}{row.count:>8}{agree:>9}{mad:>11}"
            )
        lines.append(
            f"{'overall':<12}{sum(r.count for r in self.rows):>8}"
            f"{100.0 * self.overall_agreement:>8.2f}%{self.overall_logit_mad:>11.4f}"
        )
        lines.append(f"presence agreement: {100.0 * self.presence_agreement:.2f}%")
        lines.append(
            f"weight payload: reference {self.reference_weight_bytes} B, "
            f"candidate {self.candidate_weight_bytes} B "
            f"(ratio {self.storage_ratio:.3f})"
        )
        return "\n".join(lines)


def agreement_report(reference, candidate, windows) -> AgreementReport:
    """Compare argmax decisions and logits of two networks over windows."""
    from .labels import ACTIVITIES

    if _arch_fields(reference) != _arch_fields(candidate):
        raise DimensionError(
            f"architecture mismatch: {_arch_fields(reference)} vs {_arch_fields(candidate)}"
        )
    windows = np.asarray(windows)
    n = windows.shape[0]
    ref_act = np.empty((n, len(ACTIVITIES)))
    cand_act = np.empty_like(ref_act)
    ref_pres = np.empty((n, 2))
    cand_pres = np.empty_like(ref_pres)
    for i in range(n):
        ref_act[i], ref_pres[i] = predict_logits(reference, windows[i])
        cand_act[i], cand_pres[i] = predict_logits(candidate, windows[i])

    ref_cls = ref_act.argmax(axis=1)
    same = ref_cls == cand_act.argmax(axis=1)
    mad = np.abs(ref_act - cand_act).mean(axis=1)
    rows = []
    for class_id, name in enumerate(ACTIVITIES):
        mask = ref_cls == class_id
        count = int(mask.sum())
        rows.append(
            ClassAgreement(
                class_id=class_id,
                name=name,
                count=count,
                agreement=float(same[mask].mean()) if count else None,
                logit_mad=float(mad[mask].mean()) if count else None,
            )
        )
    presence_same = ref_pres.argmax(axis=1) == cand_pres.argmax(axis=1)
    return AgreementReport(
        rows=tuple(rows),
        overall_agreement=float(same.mean()),
        presence_agreement=float(presence_same.mean()),
        overall_logit_mad=float(mad.mean()),
        reference_weight_bytes=_weight_payload_bytes(reference),
        candidate_weight_bytes=_weight_payload_bytes(candidate),
    )
