"""Network descriptions and the ``.net`` text format.

One layer per line::

    name mode h w c_in c_out stride qw

``h`` and ``w`` are the input dimensions. ``mode`` is one of ``dense3x3``,
``dw3x3`` or ``pw1x1``. Everything after ``#`` is a comment.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .calibration import ParseError
from .qnn import LayerSpec, Mode

MODE_TOKENS = {Mode.DENSE3X3: "dense3x3", Mode.DEPTHWISE3X3: "dw3x3", Mode.POINTWISE1X1: "pw1x1"}


@dataclass(frozen=True)
class NetLayer:
    name: str
    spec: LayerSpec
    h: int
    w: int

    @property
    def out_dims(self) -> tuple[int, int]:
        return self.spec.out_dims(self.h, self.w)

    @property
    def weight_params(self) -> int:
        return self.spec.weight_count

    @property
    def weight_bytes(self) -> int:
        return -(-self.spec.weight_count * self.spec.qw // 8)

    @property
    def macs(self) -> int:
        return self.spec.macs(self.h, self.w)


@dataclass(frozen=True)
class NetworkDesc:
    name: str
    layers: tuple[NetLayer, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("duplicate layer names")

    @property
    def weight_params(self) -> int:
        return sum(l.weight_params for l in self.layers)

    @property
    def weight_bytes(self) -> int:
        return sum(l.weight_bytes for l in self.layers)

    @property
    def macs(self) -> int:
        return sum(l.macs for l in self.layers)

    def __len__(self):
        return len(self.layers)

    def conv_layers(self) -> list[NetLayer]:
        """Layers with spatial extent; the 1x1-input classifier is excluded."""
        return [l for l in self.layers if (l.h, l.w) != (1, 1)]

    def check_composition(self) -> None:
        """Consecutive layers must chain; a 1x1 input may follow global pooling."""
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.spec.c_in != prev.spec.c_out:
                raise ValueError(f"{cur.name}: c_in {cur.spec.c_in} != {prev.name} c_out {prev.spec.c_out}")
            if (cur.h, cur.w) != prev.out_dims and (cur.h, cur.w) != (1, 1):
                raise ValueError(f"{cur.name}: input {cur.h}x{cur.w} != {prev.name} output {prev.out_dims}")


def parse_network(text: str, name: str = "network", source=None) -> NetworkDesc:
    layers = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 8:
            raise ParseError(f"expected 8 fields, got {len(tok)}", n, source)
        lname, mode_tok = tok[0], tok[1]
        try:
            mode = Mode.parse(mode_tok)
        except ValueError:
            raise ParseError(f"unknown mode {mode_tok!r}", n, source) from None
        try:
            h, w, c_in, c_out, stride, qw = (int(t) for t in tok[2:])
        except ValueError:
            raise ParseError("dimensions must be integers", n, source) from None
        if min(h, w, c_in, c_out) <= 0:
            raise ParseError("dimensions must be positive", n, source)
        try:
            spec = LayerSpec(mode, c_in, c_out, qw, stride)
        except ValueError as e:
            raise ParseError(str(e), n, source) from None
        if any(l.name == lname for l in layers):
            raise ParseError(f"duplicate layer name {lname!r}", n, source)
        layers.append(NetLayer(lname, spec, h, w))
    return NetworkDesc(name, tuple(layers))


def load_network(path) -> NetworkDesc:
    p = Path(path)
    return parse_network(p.read_text(encoding="utf-8"), p.stem, source=p)


def emit_network(net: NetworkDesc, path=None) -> str:
    lines = [f"# {net.name}", "# name mode h w c_in c_out stride qw"]
    for l in net.layers:
        s = l.spec
        lines.append(f"{l.name} {MODE_TOKENS[s.mode]} {l.h} {l.w} {s.c_in} {s.c_out} {s.stride} {s.qw}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# (expansion t, output channels c, repeats n, first stride s) per stage
MOBILENET_V2_STAGES = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                       (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]


def mobilenet_v2(qw: int = 8, resolution: int = 224, classes: int = 1000) -> NetworkDesc:
    """MobileNet-V2 1.0 as a chain of accelerator layers, classifier as a 1x1 layer."""
    L = []

    def add(name, mode, h, c_in, c_out, stride=1):
        L.append(NetLayer(name, LayerSpec(mode, c_in, c_out, qw, stride), h, h))
        return L[-1].out_dims[0]

    h = add("conv1", Mode.DENSE3X3, resolution, 3, 32, 2)
    c = 32
    for stage, (t, c_out, n, s) in enumerate(MOBILENET_V2_STAGES, 1):
        for rep in range(1, n + 1):
            stride = s if rep == 1 else 1
            hidden = c * t
            tag = f"bn{stage}_{rep}"
            if t != 1:
                add(f"{tag}_expand", Mode.POINTWISE1X1, h, c, hidden)
            h = add(f"{tag}_dw", Mode.DEPTHWISE3X3, h, hidden, hidden, stride)
            add(f"{tag}_project", Mode.POINTWISE1X1, h, hidden, c_out)
            c = c_out
    add("conv_last", Mode.POINTWISE1X1, h, c, 1280)
    add("classifier", Mode.POINTWISE1X1, 1, 1280, classes)
    return NetworkDesc(f"mobilenet_v2_1.0_{resolution}", tuple(L))


def stage_of(layer_name: str) -> int | None:
    """Bottleneck stage index encoded in a MobileNet-V2 layer name."""
    if layer_name.startswith("bn"):
        return int(layer_name[2:].split("_", 1)[0])
    return None


def shipped_network_path() -> Path:
    return Path(str(resources.files("nvmsim") / "data" / "mobilenet_v2_1.0_224.net"))


def shipped_mobilenet_v2() -> NetworkDesc:
    return load_network(shipped_network_path())
