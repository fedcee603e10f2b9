"""Network container: ordered layers, deterministic and MC-dropout execution.

A network is immutable after construction.  Deterministic forward treats
dropout layers as identity; MC execution samples an inverted-dropout mask per
dropout layer from an :class:`~dropforge.rng.RngStream`, so the same stream
always reproduces the same stochastic pass.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Dense, Dropout, Layer, Softmax
from .rng import RngStream
from .tensor import check_finite

__all__ = ["Network", "with_mc_dropout"]


class Network:
    """Ordered layer stack ending in softmax over ``class_count`` classes."""

    def __init__(self, layers: list[Layer], class_count: int, input_shape: tuple[int, ...]):
        if not layers:
            raise ConfigError("network needs at least one layer")
        if not isinstance(layers[-1], Softmax):
            raise ConfigError("last layer must be softmax")
        self.layers = list(layers)
        self.class_count = int(class_count)
        self.input_shape = tuple(int(d) for d in input_shape)

        # propagate shapes once; this is where incompatible layers are caught
        self.layer_in_shapes: list[tuple[int, ...]] = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            self.layer_in_shapes.append(shape)
            try:
                shape = layer.out_shape(shape)
            except ShapeError as err:
                raise ShapeError(f"layer {self._name(i)}: {err}") from None
        if shape != (self.class_count,):
            raise ShapeError(
                f"network produces shape {shape}, expected ({self.class_count},) class probabilities"
            )
        self.dropout_indices = [i for i, l in enumerate(self.layers) if isinstance(l, Dropout)]

    def _name(self, index: int) -> str:
        return f"{self.layers[index].kind}[{index}]"

    @property
    def has_dropout(self) -> bool:
        return bool(self.dropout_indices)

    def copy(self, dtype=None) -> "Network":
        return Network([l.copy(dtype) for l in self.layers], self.class_count, self.input_shape)

    def astype(self, dtype) -> "Network":
        return self.copy(dtype=dtype)

    # ------------------------------------------------------------------ runs

    def _check_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs)
        if tuple(xs.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"input shape {tuple(xs.shape[1:])} does not match network input {self.input_shape}"
            )
        check_finite(xs, "network input")
        return xs

    def run_batch(self, xs: np.ndarray, masks: dict[int, np.ndarray] | None = None,
                  ctxs: list[dict] | None = None) -> np.ndarray:
        """Forward a batch; ``masks`` maps dropout layer index -> scaled mask."""
        x = self._check_batch(xs)
        for i, layer in enumerate(self.layers):
            ctx = None if ctxs is None else {}
            if isinstance(layer, Dropout):
                mask = None if masks is None else masks.get(i)
                x = layer.forward(x, ctx, mask=mask)
            else:
                x = layer.forward(x, ctx)
            if ctxs is not None:
                ctxs.append(ctx)
            check_finite(x, f"activation after layer {self._name(i)}")
        return x

    def forward_batch(self, xs: np.ndarray) -> np.ndarray:
        """Deterministic probabilities for a batch (dropout = identity)."""
        return self.run_batch(xs)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Deterministic probability vector for a single input."""
        return self.forward_batch(np.asarray(x)[None])[0]

    def logits_batch(self, xs: np.ndarray) -> np.ndarray:
        """Pre-softmax activations (input of the final softmax layer)."""
        x = self._check_batch(xs)
        for i, layer in enumerate(self.layers[:-1]):
            x = layer.forward(x) if not isinstance(layer, Dropout) else layer.forward(x, mask=None)
            check_finite(x, f"activation after layer {self._name(i)}")
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.logits_batch(np.asarray(x)[None])[0]

    def predict_label(self, x: np.ndarray) -> int:
        """Deterministic class decision; ties break to the lowest index."""
        return int(np.argmax(self.forward(x)))

    def predict_label_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward_batch(xs), axis=1)

    # --------------------------------------------------------------- MC mode

    def _require_dropout(self):
        if not self.has_dropout:
            raise ConfigError(
                "MC execution needs at least one dropout layer; "
                "use with_mc_dropout() to insert one"
            )

    def sample_masks(self, generator: np.random.Generator, n: int,
                     forced_masks: dict[int, np.ndarray] | None = None) -> dict[int, np.ndarray]:
        """Draw ``n`` passes of dropout masks in canonical (pass-major) order.

        ``forced_masks`` is test instrumentation: it substitutes a fixed
        per-layer mask (e.g. all-keep) for every pass of that layer.
        """
        self._require_dropout()
        out = {i: np.empty((n,) + self.layer_in_shapes[i], dtype=np.float32)
               for i in self.dropout_indices}
        for k in range(n):
            for i in self.dropout_indices:
                layer = self.layers[i]
                if forced_masks is not None and i in forced_masks:
                    out[i][k] = forced_masks[i]
                else:
                    out[i][k] = layer.sample_mask(self.layer_in_shapes[i], generator)
        return out

    def forward_mc(self, x: np.ndarray, rng: RngStream,
                   forced_masks: dict[int, np.ndarray] | None = None) -> np.ndarray:
        """One stochastic pass; identical output for identical (net, x, rng)."""
        masks = self.sample_masks(rng.generator(), 1, forced_masks)
        return self.run_batch(np.asarray(x)[None], masks=masks)[0]

    def forward_mc_batch(self, xs: np.ndarray, masks: dict[int, np.ndarray]) -> np.ndarray:
        return self.run_batch(xs, masks=masks)

    # -------------------------------------------------------------- backward

    def backward(self, x: np.ndarray, true_label: int) -> np.ndarray:
        """Gradient of cross-entropy(net(x), true_label) w.r.t. the input.

        Deterministic mode only.  Softmax and cross-entropy are fused: the
        gradient at the logits is ``p - onehot``.
        """
        if not 0 <= int(true_label) < self.class_count:
            raise ShapeError(f"true_label {true_label} out of range for {self.class_count} classes")
        ctxs: list[dict] = []
        probs = self.run_batch(np.asarray(x)[None], ctxs=ctxs)
        dlogits = probs.copy()
        dlogits[0, int(true_label)] -= 1.0
        dx, _ = self.backprop_logits(dlogits, ctxs)
        check_finite(dx, "input gradient")
        return dx[0]

    def backprop_logits(self, dlogits: np.ndarray, ctxs: list[dict]):
        """Propagate a gradient at the logits back to the input.

        Returns ``(dx, grads)`` with ``grads`` mapping layer index to that
        layer's parameter gradients.  The final softmax layer is skipped
        because callers supply the fused softmax+cross-entropy gradient.
        """
        dy = dlogits
        grads: dict[int, list[np.ndarray]] = {}
        for i in range(len(self.layers) - 2, -1, -1):
            dy, g = self.layers[i].backward(dy, ctxs[i])
            if g:
                grads[i] = g
        return dy, grads


def scale_logits(net: Network, factor: float) -> Network:
    """Multiply the final pre-softmax layer's weights and bias by ``factor``.

    An inverse-temperature recalibration: decisions, label rankings and MC
    flip statistics are unchanged (argmax is scale invariant and mask noise
    scales with the margins), only softmax confidence sharpens or flattens.
    """
    if factor <= 0:
        raise ConfigError(f"logit scale must be positive, got {factor}")
    layers = [l.copy() for l in net.layers]
    dense_positions = [i for i, l in enumerate(layers) if l.params()]
    if not dense_positions:
        raise ConfigError("cannot scale logits: network has no parametric layer")
    last = layers[dense_positions[-1]]
    last.set_params([p * np.float32(factor) for p in last.params()])
    return Network(layers, net.class_count, net.input_shape)


def with_mc_dropout(net: Network, rate: float = 0.5) -> Network:
    """Return an MC-capable network, inserting dropout before the final dense
    layer when the model has none (the deterministic pass is unchanged)."""
    if net.has_dropout:
        return net
    dense_positions = [i for i, l in enumerate(net.layers) if isinstance(l, Dense)]
    if not dense_positions:
        raise ConfigError("cannot auto-insert dropout: network has no dense layer")
    layers = [l.copy() for l in net.layers]
    layers.insert(dense_positions[-1], Dropout(rate))
    return Network(layers, net.class_count, net.input_shape)
