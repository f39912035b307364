"""Turn masked sparsity into physically smaller layers.

Row mode removes whole filters (conv) or output neurons (dense).  Removing a
filter shrinks the next weighted layer's input side too: the following conv
loses input channels, and a dense layer fed by the last conv loses the
feature block that channel occupied after flattening.  Column mode removes
unrolled input positions of one layer at a time and never propagates; the
compact layer gathers the surviving positions at inference, and that gather
is deliberately part of the compact model's runtime cost.

The classifier head is never a pruning target: removing its rows would
change the label space, so a keep mask on the final dense layer is rejected.

Binary model format (PRCM1, all little-endian):

    magic          8 bytes   b"PRCM1\\x00\\x00\\x00"
    input shape    3 x u32   C, H, W
    layer count    u32
    per layer:
      kind         u8        0 conv, 1 relu, 2 maxpool, 3 dense
      name         u16 length + utf-8 bytes
      conv:        u32 in_ch, out_ch, kernel, stride, pad
                   u8 gathered; if 1: u32 n + n x i64 patch-row indices
                   u32 weight count + f32 data, u32 bias count + f32 data
      maxpool:     u32 kernel, u32 stride
      dense:       u32 in_features, out_features
                   u8 gathered; if 1: u32 n + n x i64 feature indices
                   u32 weight count + f32 data, u32 bias count + f32 data
      relu:        nothing
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, FormatError
from .groups import GroupType, weight_matrix
from .nn.layers import Conv2D, Dense, MaxPool2D, ReLU
from .nn.network import Network

MAGIC = b"PRCM1\x00\x00\x00"


@dataclass
class CompactPlan:
    gtype: GroupType
    kept: dict[str, tuple[int, int]] = field(default_factory=dict)
    params_before: int = 0
    params_after: int = 0


def _check_alive(name: str, keep: np.ndarray) -> None:
    if not keep.any():
        raise ContractViolation(
            f"layer {name} lost every group; the network cannot compute anything"
        )


def build_compact(
    network: Network, keep_map: dict[str, np.ndarray], gtype: GroupType
) -> tuple[Network, CompactPlan]:
    """Physically remove pruned groups; returns a new inference network."""
    if network.layers and isinstance(network.layers[-1], Dense):
        last = network.layers[-1].name
        if gtype is GroupType.ROW and last in keep_map and not keep_map[last].all():
            raise ContractViolation(f"refusing to remove classifier outputs ({last})")
    plan = CompactPlan(gtype=gtype, params_before=network.param_count())
    if gtype is GroupType.ROW:
        net = _compact_rows(network, keep_map, plan)
    else:
        net = _compact_columns(network, keep_map, plan)
    plan.params_after = net.param_count()
    return net, plan


def _compact_rows(network, keep_map, plan) -> Network:
    new_layers = []
    shape = network.input_shape
    carry: np.ndarray | None = None  # kept channels (conv domain) or features (dense domain)
    carry_is_channels = True
    for layer in network.layers:
        out_shape = layer.output_shape(shape)
        if isinstance(layer, Conv2D):
            in_keep = carry if carry is not None else np.ones(layer.in_channels, bool)
            keep = keep_map.get(layer.name, np.ones(layer.out_channels, bool))
            _check_alive(layer.name, keep)
            new = Conv2D(
                layer.name,
                in_channels=int(in_keep.sum()),
                out_channels=int(keep.sum()),
                kernel=layer.kh,
                stride=layer.stride,
                pad=layer.pad,
                dtype=layer.weights.dtype,
            )
            new.weights[...] = layer.weights[keep][:, in_keep, :, :]
            new.bias[...] = layer.bias[keep]
            carry, carry_is_channels = keep, True
            plan.kept[layer.name] = (int(keep.sum()), len(keep))
        elif isinstance(layer, Dense):
            flat = int(np.prod(shape))
            if carry is None:
                col_keep = np.ones(flat, bool)
            elif carry_is_channels:
                # flatten order is channel-major: each kept channel keeps a
                # contiguous block of H*W features
                col_keep = np.repeat(carry, flat // len(carry))
            else:
                col_keep = carry
            keep = keep_map.get(layer.name, np.ones(layer.out_features, bool))
            _check_alive(layer.name, keep)
            new = Dense(
                layer.name,
                in_features=int(col_keep.sum()),
                out_features=int(keep.sum()),
                dtype=layer.weights.dtype,
            )
            new.weights[...] = layer.weights[keep][:, col_keep]
            new.bias[...] = layer.bias[keep]
            carry, carry_is_channels = keep, False
            plan.kept[layer.name] = (int(keep.sum()), len(keep))
        elif isinstance(layer, MaxPool2D):
            new = MaxPool2D(layer.name, layer.kernel, layer.stride)
        else:
            new = ReLU(layer.name)
        new_layers.append(new)
        shape = out_shape
    return Network(new_layers, network.input_shape)


def _compact_columns(network, keep_map, plan) -> Network:
    new_layers = []
    for layer in network.layers:
        if isinstance(layer, Conv2D) and layer.name in keep_map:
            keep = keep_map[layer.name]
            _check_alive(layer.name, keep)
            idx = np.flatnonzero(keep).astype(np.int64)
            new = Conv2D(
                layer.name,
                in_channels=layer.in_channels,
                out_channels=layer.out_channels,
                kernel=layer.kh,
                stride=layer.stride,
                pad=layer.pad,
                dtype=layer.weights.dtype,
                patch_rows=idx,
            )
            new.weights[...] = weight_matrix(layer.weights)[:, idx].reshape(new.weights.shape)
            new.bias[...] = layer.bias
            plan.kept[layer.name] = (len(idx), len(keep))
        elif isinstance(layer, Dense) and layer.name in keep_map:
            keep = keep_map[layer.name]
            _check_alive(layer.name, keep)
            idx = np.flatnonzero(keep).astype(np.int64)
            new = Dense(
                layer.name,
                in_features=len(idx),
                out_features=layer.out_features,
                dtype=layer.weights.dtype,
                in_index=idx,
            )
            new.weights[...] = layer.weights[:, idx]
            new.bias[...] = layer.bias
            plan.kept[layer.name] = (len(idx), len(keep))
        elif isinstance(layer, Conv2D):
            new = _copy_conv(layer)
        elif isinstance(layer, Dense):
            new = _copy_dense(layer)
        elif isinstance(layer, MaxPool2D):
            new = MaxPool2D(layer.name, layer.kernel, layer.stride)
        else:
            new = ReLU(layer.name)
        new_layers.append(new)
    return Network(new_layers, network.input_shape)


def _copy_conv(layer: Conv2D) -> Conv2D:
    new = Conv2D(layer.name, layer.in_channels, layer.out_channels, layer.kh,
                 layer.stride, layer.pad, dtype=layer.weights.dtype,
                 patch_rows=layer.patch_rows)
    new.weights[...] = layer.weights
    new.bias[...] = layer.bias
    return new


def _copy_dense(layer: Dense) -> Dense:
    new = Dense(layer.name, layer.in_features, layer.out_features,
                dtype=layer.weights.dtype, in_index=layer.in_index)
    new.weights[...] = layer.weights
    new.bias[...] = layer.bias
    return new


def equivalence_check(ref: Network, compact: Network, inputs: np.ndarray) -> float:
    """Max absolute logit difference between the masked and compact nets."""
    a = ref.forward(inputs)
    b = compact.forward(inputs)
    return float(np.max(np.abs(a - b)))


# -- serialization -----------------------------------------------------------


def _pack_array(a: np.ndarray) -> bytes:
    data = np.ascontiguousarray(a, dtype="<f4")
    return struct.pack("<I", data.size) + data.tobytes()


def _pack_index(idx: np.ndarray | None) -> bytes:
    if idx is None:
        return struct.pack("<B", 0)
    data = np.ascontiguousarray(idx, dtype="<i8")
    return struct.pack("<BI", 1, data.size) + data.tobytes()


def save_compact(net: Network, path: str) -> None:
    chunks = [MAGIC, struct.pack("<3I", *net.input_shape)]
    chunks.append(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        name = layer.name.encode()
        if isinstance(layer, Conv2D):
            chunks.append(struct.pack("<BH", 0, len(name)) + name)
            chunks.append(struct.pack("<5I", layer.in_channels, layer.out_channels,
                                      layer.kh, layer.stride, layer.pad))
            chunks.append(_pack_index(layer.patch_rows))
            chunks.append(_pack_array(layer.weights))
            chunks.append(_pack_array(layer.bias))
        elif isinstance(layer, ReLU):
            chunks.append(struct.pack("<BH", 1, len(name)) + name)
        elif isinstance(layer, MaxPool2D):
            chunks.append(struct.pack("<BH", 2, len(name)) + name)
            chunks.append(struct.pack("<2I", layer.kernel, layer.stride))
        elif isinstance(layer, Dense):
            chunks.append(struct.pack("<BH", 3, len(name)) + name)
            chunks.append(struct.pack("<2I", layer.in_features, layer.out_features))
            chunks.append(_pack_index(layer.in_index))
            chunks.append(_pack_array(layer.weights))
            chunks.append(_pack_array(layer.bias))
        else:
            raise FormatError(f"cannot serialize layer type {type(layer).__name__}")
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise FormatError("model file truncated")
        vals = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return vals

    def take_bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("model file truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def take_f32(self) -> np.ndarray:
        (n,) = self.take("<I")
        return np.frombuffer(self.take_bytes(4 * n), dtype="<f4").copy()

    def take_index(self) -> np.ndarray | None:
        (flag,) = self.take("<B")
        if not flag:
            return None
        (n,) = self.take("<I")
        return np.frombuffer(self.take_bytes(8 * n), dtype="<i8").copy()


def load_compact(path: str) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take_bytes(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path} is not a compact model file (bad magic)")
    input_shape = tuple(int(v) for v in r.take("<3I"))
    (n_layers,) = r.take("<I")
    layers = []
    for _ in range(n_layers):
        kind, name_len = r.take("<BH")
        name = r.take_bytes(name_len).decode()
        if kind == 0:
            in_ch, out_ch, kernel, stride, pad = r.take("<5I")
            idx = r.take_index()
            layer = Conv2D(name, in_ch, out_ch, kernel, stride, pad, patch_rows=idx)
            w, b = r.take_f32(), r.take_f32()
            if w.size != layer.weights.size or b.size != layer.bias.size:
                raise FormatError(f"layer {name}: parameter counts do not match header")
            layer.weights[...] = w.reshape(layer.weights.shape)
            layer.bias[...] = b
        elif kind == 1:
            layer = ReLU(name)
        elif kind == 2:
            kernel, stride = r.take("<2I")
            layer = MaxPool2D(name, kernel, stride)
        elif kind == 3:
            in_f, out_f = r.take("<2I")
            idx = r.take_index()
            layer = Dense(name, in_f, out_f, in_index=idx)
            w, b = r.take_f32(), r.take_f32()
            if w.size != layer.weights.size or b.size != layer.bias.size:
                raise FormatError(f"layer {name}: parameter counts do not match header")
            layer.weights[...] = w.reshape(layer.weights.shape)
            layer.bias[...] = b
        else:
            raise FormatError(f"unknown layer kind {kind}")
        layers.append(layer)
    if r.pos != len(blob):
        raise FormatError(f"{len(blob) - r.pos} trailing bytes after last layer")
    return Network(layers, input_shape)
