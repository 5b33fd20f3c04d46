"""Receptive-field propagation through convolutional layer chains.

Tracks three quantities per axis while folding over a layer chain:

* ``n`` -- feature-map extent,
* ``j`` -- jump (spacing, in input pixels, between adjacent output features),
* ``r`` -- receptive-field extent in input pixels.

The per-layer transitions are::

    n_out = floor((n_in + 2p - k) / s) + 1
    j_out = j_in * s
    r_out = r_in + (k - 1) * j_in

Activation and normalization layers are receptive-field neutral. The final
``r`` of the Embedder sets the lower bound for admissible watermark sizes,
the final ``r`` of the Detector the upper bound.

Everything here is pure and immutable; safe to call from concurrent workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

LAYER_KINDS = ("conv", "pool", "activation", "norm", "dense")
_RF_NEUTRAL = ("activation", "norm")


class RFError(ValueError):
    """Invalid layer chain or receptive-field state."""


def _per_axis(value: int | Sequence[int], axes: int, what: str) -> tuple[int, ...]:
    """Broadcast an int (or validate a sequence) to one entry per axis."""
    if isinstance(value, int):
        return (value,) * axes
    vals = tuple(int(v) for v in value)
    if len(vals) != axes:
        raise RFError(f"{what} has {len(vals)} entries, expected {axes}")
    return vals


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a chain: conv/pool carry kernel geometry, the rest are neutral.

    ``kernel``/``stride``/``padding`` may be ints (square) or per-axis tuples.
    """

    name: str
    kind: str = "conv"
    kernel: int | tuple[int, ...] = 1
    stride: int | tuple[int, ...] = 1
    padding: int | tuple[int, ...] = 0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise RFError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        for field, low in (("kernel", 1), ("stride", 1), ("padding", 0)):
            value = getattr(self, field)
            vals = value if isinstance(value, tuple) else (value,)
            if any(not isinstance(v, int) or v < low for v in vals):
                raise RFError(f"layer {self.name!r}: {field} must be >= {low}, got {value}")
        if self.kind in _RF_NEUTRAL:
            if self._collapsed() != (1, 1, 0):
                raise RFError(
                    f"layer {self.name!r}: {self.kind} layers must have k=1, s=1, p=0"
                )

    def _collapsed(self) -> tuple[int, int, int]:
        def one(v: int | tuple[int, ...]) -> int:
            return v if isinstance(v, int) else max(v)

        return one(self.kernel), one(self.stride), one(self.padding)

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        def tup(v):
            return tuple(v) if isinstance(v, (list, tuple)) else v

        return cls(
            name=d["name"],
            kind=d.get("kind", "conv"),
            kernel=tup(d.get("kernel", 1)),
            stride=tup(d.get("stride", 1)),
            padding=tup(d.get("padding", 0)),
        )

    def to_dict(self) -> dict:
        def plain(v):
            return list(v) if isinstance(v, tuple) else v

        return {
            "name": self.name,
            "kind": self.kind,
            "kernel": plain(self.kernel),
            "stride": plain(self.stride),
            "padding": plain(self.padding),
        }


@dataclass(frozen=True)
class RFState:
    """Per-axis (n, j, r) state. Fresh state: n = input size, j = 1, r = 1."""

    n: tuple[int, ...]
    j: tuple[int, ...]
    r: tuple[int, ...]

    @classmethod
    def initial(cls, input_size: int | Sequence[int]) -> "RFState":
        n = (input_size,) if isinstance(input_size, int) else tuple(int(v) for v in input_size)
        if not n or any(v < 1 for v in n):
            raise RFError(f"invalid input size {input_size!r}")
        return cls(n=n, j=(1,) * len(n), r=(1,) * len(n))

    @property
    def axes(self) -> int:
        return len(self.n)


def layer_transition(state: RFState, layer: LayerSpec) -> RFState:
    """Advance (n, j, r) through one layer; RF-neutral kinds return state unchanged."""
    if layer.kind in _RF_NEUTRAL:
        return state
    if layer.kind == "dense":
        raise RFError(f"layer {layer.name!r}: dense layers do not propagate a receptive field")
    k = _per_axis(layer.kernel, state.axes, f"layer {layer.name!r} kernel")
    s = _per_axis(layer.stride, state.axes, f"layer {layer.name!r} stride")
    p = _per_axis(layer.padding, state.axes, f"layer {layer.name!r} padding")
    n_out, j_out, r_out = [], [], []
    for axis in range(state.axes):
        span = state.n[axis] + 2 * p[axis] - k[axis]
        if span < 0:
            raise RFError(
                f"layer {layer.name!r}: kernel {k[axis]} exceeds padded extent "
                f"{state.n[axis] + 2 * p[axis]} on axis {axis}"
            )
        n_out.append(span // s[axis] + 1)
        j_out.append(state.j[axis] * s[axis])
        r_out.append(state.r[axis] + (k[axis] - 1) * state.j[axis])
    return RFState(n=tuple(n_out), j=tuple(j_out), r=tuple(r_out))


@dataclass(frozen=True)
class RFReportRow:
    index: int
    name: str
    n: tuple[int, ...]
    j: tuple[int, ...]
    r: tuple[int, ...]


@dataclass(frozen=True)
class RFReport:
    """Layer-by-layer RF table; row 0 is the input state.

    ``network_rf`` is the receptive field of the last RF-bearing layer.
    Trailing dense layers are listed but excluded from propagation.
    """

    rows: tuple[RFReportRow, ...]
    network_rf: int
    input_size: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "network_rf": self.network_rf,
            "rows": [
                {"index": row.index, "name": row.name, "n": list(row.n),
                 "j": list(row.j), "r": list(row.r)}
                for row in self.rows
            ],
        }

    def format_table(self) -> str:
        header = ("Layer", "Layer name", "Map size", "Jump", "RF")
        body = [
            (str(row.index), row.name, _fmt_axes(row.n), _fmt_axes(row.j), _fmt_axes(row.r))
            for row in self.rows
        ]
        widths = [max(len(col[i]) for col in [header] + body) for i in range(len(header))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body]
        lines.append(f"network RF: {self.network_rf}")
        return "\n".join(lines)


def _fmt_axes(vals: tuple[int, ...]) -> str:
    if len(set(vals)) == 1:
        return str(vals[0])
    return "[" + ", ".join(str(v) for v in vals) + "]"


def chain_rf(layers: Iterable[LayerSpec], input_size: int | Sequence[int]) -> RFReport:
    """Fold :func:`layer_transition` over a chain, collecting the per-layer table."""
    layers = list(layers)
    if not layers:
        raise RFError("empty layer chain")
    state = RFState.initial(input_size)
    rows = [RFReportRow(0, "Input", state.n, state.j, state.r)]
    seen_dense = False
    last_rf_state = state
    for idx, layer in enumerate(layers, start=1):
        if layer.kind == "dense":
            seen_dense = True
            rows.append(RFReportRow(idx, layer.name, last_rf_state.n, last_rf_state.j,
                                    last_rf_state.r))
            continue
        if seen_dense:
            raise RFError(f"layer {idx} ({layer.name!r}): RF-bearing layer after dense head")
        try:
            state = layer_transition(state, layer)
        except RFError as err:
            raise RFError(f"layer {idx}: {err}") from err
        rows.append(RFReportRow(idx, layer.name, state.n, state.j, state.r))
        last_rf_state = state
    rf = last_rf_state.r
    if len(set(rf)) != 1:
        raise RFError(f"per-axis receptive fields differ: {rf}")
    return RFReport(rows=tuple(rows), network_rf=rf[0], input_size=RFState.initial(input_size).n)


@dataclass(frozen=True)
class SizeRange:
    """Admissible watermark extents: lower <= size <= upper (both inclusive)."""

    lower: int
    upper: int

    def contains(self, size: int | Sequence[int]) -> bool:
        dims = (size,) if isinstance(size, int) else tuple(size)
        return all(self.lower <= d <= self.upper for d in dims)


def valid_watermark_range(embedder: RFReport, detector: RFReport) -> SizeRange:
    """Watermark-size window: [embedder RF, detector RF].

    The watermark must out-span any single Embedder neuron's view while still
    fitting inside one Detector neuron's view.
    """
    if embedder.input_size != detector.input_size:
        raise RFError(
            f"reports computed on different input sizes: "
            f"{embedder.input_size} vs {detector.input_size}"
        )
    lower, upper = embedder.network_rf, detector.network_rf
    if lower > upper:
        raise RFError(
            f"embedder RF {lower} exceeds detector RF {upper}: no admissible watermark size"
        )
    return SizeRange(lower=lower, upper=upper)


def load_chain(path: str | Path) -> list[LayerSpec]:
    """Read a layer chain from a JSON array of {name, kind, kernel, stride, padding}."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise RFError(f"{path}: expected a JSON array of layer objects")
    return [LayerSpec.from_dict(entry) for entry in data]


def save_chain(layers: Iterable[LayerSpec], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([layer.to_dict() for layer in layers], fh, indent=2)
        fh.write("\n")
