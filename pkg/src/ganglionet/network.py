"""Recurrent-convolutional segmentation network with multi-level decoding.

The encoder stacks one recurrent convolutional unit (RCU) per width with 2x
max pooling in between. Each of the deepest ``n_decode_levels`` encoder
outputs feeds its own decoding stream of upsample+RCU stages back to full
resolution; the streams are fused by elementwise addition and reduced to a
single sigmoid probability channel by a 1x1 convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import (
    conv2d_backward,
    conv2d_forward,
    he_init,
    maxpool2_backward,
    maxpool2_forward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    upsample2_backward,
    upsample2_nearest,
)
from .params import ParamStore


@dataclass(frozen=True)
class RcuSpec:
    """Channel contract of one recurrent convolutional unit."""

    in_channels: int
    out_channels: int
    t_steps: int = 2

    def __post_init__(self):
        if self.t_steps < 1:
            raise ValueError(f"t_steps must be >= 1, got {self.t_steps}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")


@dataclass(frozen=True)
class NablaArchitecture:
    """Width map of the network; defaults give the full-size model."""

    encoder_widths: tuple[int, ...] = (16, 32, 64, 128, 256, 512)
    decoder_widths: tuple[int, ...] = (256, 128, 64, 32, 16)
    n_decode_levels: int = 3
    input_channels: int = 3
    output_channels: int = 1
    patch_side: int = 128
    t_steps: int = 2

    def __post_init__(self):
        enc = tuple(self.encoder_widths)
        dec = tuple(self.decoder_widths)
        object.__setattr__(self, "encoder_widths", enc)
        object.__setattr__(self, "decoder_widths", dec)
        if dec != tuple(reversed(enc[:-1])):
            raise ValueError(
                f"decoder widths {dec} must mirror encoder widths {enc} below the bottleneck"
            )
        if not 1 <= self.n_decode_levels <= len(enc):
            raise ValueError(f"n_decode_levels {self.n_decode_levels} out of range")
        if self.t_steps < 1:
            raise ValueError(f"t_steps must be >= 1, got {self.t_steps}")
        if self.patch_side % (1 << (len(enc) - 1)) != 0:
            raise ValueError(
                f"patch_side {self.patch_side} must be divisible by {1 << (len(enc) - 1)}"
            )

    def stream_origins(self) -> list[int]:
        """0-based encoder level index feeding each decoding stream, shallow first."""
        top = len(self.encoder_widths) - 1
        return [top - self.n_decode_levels + 1 + k for k in range(self.n_decode_levels)]

    def stream_widths(self, origin: int) -> tuple[int, ...]:
        """Output widths of the upsample+RCU chain for a stream starting at *origin*."""
        return self.decoder_widths[len(self.decoder_widths) - origin:]


def _rcu_param_names(prefix: str) -> tuple[str, str, str, str]:
    return (f"{prefix}.fwd.w", f"{prefix}.fwd.b", f"{prefix}.rec.w", f"{prefix}.rec.b")


def rcu_forward(
    x: np.ndarray,
    spec: RcuSpec,
    fwd_w: np.ndarray,
    fwd_b: np.ndarray,
    rec_w: np.ndarray,
    rec_b: np.ndarray,
    cache: dict | None = None,
) -> np.ndarray:
    """One recurrent convolutional unit.

    z_0 = relu(conv_f(x)); z_k = relu(conv_f(x) + conv_r(z_{k-1})) for
    k = 1..t_steps. conv_f is evaluated once and its response reused;
    the recurrent kernel is shared across steps.
    """
    if x.shape[3] != spec.in_channels:
        raise ValueError(
            f"rcu channel mismatch: input has {x.shape[3]} channels, unit expects {spec.in_channels}"
        )
    f = conv2d_forward(x, fwd_w, fwd_b)
    zs = [relu(f)]
    for _ in range(spec.t_steps):
        zs.append(relu(f + conv2d_forward(zs[-1], rec_w, rec_b)))
    if cache is not None:
        cache["x"] = x
        cache["zs"] = zs
    return zs[-1]


def rcu_backward(
    grad_out: np.ndarray,
    spec: RcuSpec,
    rec_w: np.ndarray,
    fwd_w: np.ndarray,
    cache: dict,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Adjoint of rcu_forward. Returns (grad_x, grads for the four tensors)."""
    x, zs = cache["x"], cache["zs"]
    dz = grad_out
    df = np.zeros_like(zs[0])
    g_rec_w = np.zeros_like(rec_w)
    g_rec_b = np.zeros(rec_w.shape[3], dtype=rec_w.dtype)
    for k in range(spec.t_steps, 0, -1):
        da = relu_backward(dz, zs[k])
        df += da
        dz_prev, gw, gb = conv2d_backward(da, zs[k - 1], rec_w)
        g_rec_w += gw
        g_rec_b += gb
        dz = dz_prev
    df += relu_backward(dz, zs[0])
    grad_x, g_fwd_w, g_fwd_b = conv2d_backward(df, x, fwd_w)
    return grad_x, {"fwd.w": g_fwd_w, "fwd.b": g_fwd_b, "rec.w": g_rec_w, "rec.b": g_rec_b}


def build_network(arch: NablaArchitecture, seed: int) -> ParamStore:
    """Initialize all weights (He) in a deterministic order keyed by *seed*.

    Inside an RCU the recurrent step activates on conv_f(x) + conv_r(z), so
    both kernels are drawn with the fan-in of that sum (3*3*(cin+cout)).
    Plain per-kernel fan-in would triple the preactivation variance at every
    unit and saturate the sigmoid head at initialization.
    """
    store = ParamStore()
    counter = 0

    def add(name: str, shape: tuple[int, ...], fan_in: int | None = None) -> None:
        nonlocal counter
        store.add(
            name,
            he_init(shape, np.random.SeedSequence(entropy=seed, spawn_key=(counter,)), fan_in),
        )
        counter += 1

    def add_rcu(prefix: str, cin: int, cout: int) -> None:
        joint = 9 * (cin + cout)
        add(f"{prefix}.fwd.w", (3, 3, cin, cout), joint)
        add(f"{prefix}.fwd.b", (cout,))
        add(f"{prefix}.rec.w", (3, 3, cout, cout), joint)
        add(f"{prefix}.rec.b", (cout,))

    cin = arch.input_channels
    for i, width in enumerate(arch.encoder_widths, start=1):
        add_rcu(f"enc{i}", cin, width)
        cin = width
    for k, origin in enumerate(arch.stream_origins(), start=1):
        cin = arch.encoder_widths[origin]
        for j, width in enumerate(arch.stream_widths(origin)):
            add_rcu(f"dec{k}.s{j}", cin, width)
            cin = width
    add("head.w", (1, 1, arch.decoder_widths[-1], arch.output_channels))
    add("head.b", (arch.output_channels,))
    return store


def expected_param_shapes(arch: NablaArchitecture) -> dict[str, tuple[int, ...]]:
    """Name -> shape map the architecture requires of a ParamStore."""
    shapes: dict[str, tuple[int, ...]] = {}

    def add_rcu(prefix: str, cin: int, cout: int) -> None:
        shapes[f"{prefix}.fwd.w"] = (3, 3, cin, cout)
        shapes[f"{prefix}.fwd.b"] = (cout,)
        shapes[f"{prefix}.rec.w"] = (3, 3, cout, cout)
        shapes[f"{prefix}.rec.b"] = (cout,)

    cin = arch.input_channels
    for i, width in enumerate(arch.encoder_widths, start=1):
        add_rcu(f"enc{i}", cin, width)
        cin = width
    for k, origin in enumerate(arch.stream_origins(), start=1):
        cin = arch.encoder_widths[origin]
        for j, width in enumerate(arch.stream_widths(origin)):
            add_rcu(f"dec{k}.s{j}", cin, width)
            cin = width
    shapes["head.w"] = (1, 1, arch.decoder_widths[-1], arch.output_channels)
    shapes["head.b"] = (arch.output_channels,)
    return shapes


def check_store_matches(store: ParamStore, arch: NablaArchitecture) -> None:
    """Reject a parameter store whose names or shapes do not fit *arch*."""
    expected = expected_param_shapes(arch)
    names = set(store.names())
    if names != set(expected):
        missing = sorted(set(expected) - names)
        extra = sorted(names - set(expected))
        raise ValueError(f"store does not match architecture: missing={missing}, extra={extra}")
    for name, shape in expected.items():
        actual = tuple(store[name].shape)
        if actual != shape:
            raise ValueError(
                f"store does not match architecture: {name} has shape {actual}, expected {shape}"
            )


def _unit_params(store: ParamStore, prefix: str):
    fw, fb, rw, rb = _rcu_param_names(prefix)
    return store[fw], store[fb], store[rw], store[rb]


def network_forward(
    store: ParamStore,
    arch: NablaArchitecture,
    batch: np.ndarray,
    caches: dict | None = None,
) -> np.ndarray:
    """Forward pass over a (B, patch, patch, Cin) batch; probabilities in (0, 1).

    Pass a dict as *caches* to retain the intermediates network_backward needs.
    """
    s = arch.patch_side
    if batch.ndim != 4 or batch.shape[1] != s or batch.shape[2] != s:
        raise ValueError(
            f"network input must be (B, {s}, {s}, {arch.input_channels}), got {batch.shape}"
        )
    if batch.shape[3] != arch.input_channels:
        raise ValueError(
            f"network input has {batch.shape[3]} channels, expected {arch.input_channels}"
        )

    def unit_cache(name: str) -> dict | None:
        if caches is None:
            return None
        c: dict = {}
        caches[name] = c
        return c

    enc_outs = []
    h = batch
    cin = arch.input_channels
    for i, width in enumerate(arch.encoder_widths, start=1):
        if i > 1:
            h, idx = maxpool2_forward(h)
            if caches is not None:
                caches[f"pool{i}"] = idx
        spec = RcuSpec(cin, width, arch.t_steps)
        h = rcu_forward(h, spec, *_unit_params(store, f"enc{i}"), cache=unit_cache(f"enc{i}"))
        enc_outs.append(h)
        cin = width

    fused = None
    for k, origin in enumerate(arch.stream_origins(), start=1):
        h = enc_outs[origin]
        cin = arch.encoder_widths[origin]
        for j, width in enumerate(arch.stream_widths(origin)):
            h = upsample2_nearest(h)
            spec = RcuSpec(cin, width, arch.t_steps)
            h = rcu_forward(
                h, spec, *_unit_params(store, f"dec{k}.s{j}"), cache=unit_cache(f"dec{k}.s{j}")
            )
            cin = width
        fused = h if fused is None else fused + h

    logits = conv2d_forward(fused, store["head.w"], store["head.b"])
    # Clamp keeps probabilities strictly inside (0, 1) in float32; with the
    # same clamp in the BCE gradient the chained logit gradient stays exact
    # even when the sigmoid saturates.
    prob = np.clip(sigmoid(logits), 1e-7, 1.0 - 1e-7)
    if caches is not None:
        caches["fused"] = fused
        caches["prob"] = prob
    return prob


def network_backward(
    store: ParamStore,
    arch: NablaArchitecture,
    caches: dict,
    grad_prob: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss wrt every parameter, given d(loss)/d(prob)."""
    grads: dict[str, np.ndarray] = {}

    def rcu_back(prefix: str, spec: RcuSpec, grad_out: np.ndarray) -> np.ndarray:
        fw, fb, rw, rb = _rcu_param_names(prefix)
        gx, g = rcu_backward(grad_out, spec, store[rw], store[fw], caches[prefix])
        for suffix, name in (("fwd.w", fw), ("fwd.b", fb), ("rec.w", rw), ("rec.b", rb)):
            if name in grads:
                grads[name] += g[suffix]
            else:
                grads[name] = g[suffix]
        return gx

    dlogits = sigmoid_backward(grad_prob, caches["prob"])
    dfused, g_hw, g_hb = conv2d_backward(dlogits, caches["fused"], store["head.w"])
    grads["head.w"] = g_hw
    grads["head.b"] = g_hb

    n_enc = len(arch.encoder_widths)
    d_enc = [None] * n_enc
    for k, origin in enumerate(arch.stream_origins(), start=1):
        widths = arch.stream_widths(origin)
        chain_in = [arch.encoder_widths[origin], *widths[:-1]]
        d = dfused
        for j in range(len(widths) - 1, -1, -1):
            spec = RcuSpec(chain_in[j], widths[j], arch.t_steps)
            d = rcu_back(f"dec{k}.s{j}", spec, d)
            d = upsample2_backward(d)
        d_enc[origin] = d if d_enc[origin] is None else d_enc[origin] + d

    cin_list = [arch.input_channels, *arch.encoder_widths[:-1]]
    for i in range(n_enc, 0, -1):
        d = d_enc[i - 1]
        if d is None:
            raise RuntimeError(f"encoder level {i} received no gradient")
        spec = RcuSpec(cin_list[i - 1], arch.encoder_widths[i - 1], arch.t_steps)
        dx = rcu_back(f"enc{i}", spec, d)
        if i > 1:
            dx = maxpool2_backward(dx, caches[f"pool{i}"])
            d_enc[i - 2] = dx if d_enc[i - 2] is None else d_enc[i - 2] + dx
    return grads
