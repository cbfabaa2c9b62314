"""Minimal differentiable MLP with exact reverse-mode gradients.

Every learned object in this package (policy, critics, discriminator) is an
``Mlp``. Parameters live in one flat float64 buffer; per-layer weight and bias
arrays are views into it, which keeps the Adam update a handful of vector ops
and makes serialization a straight memory dump.

Snapshot format (little-endian):
    uint32              number of layer sizes L
    uint32 * L          layer sizes
    uint8               hidden activation code (0=relu, 1=tanh, 2=leaky_relu)
    uint8               output activation code (0=identity, 1=tanh, 2=clip)
    [float64 * 2]       clip bounds (lo, hi), present only for clip output
    float64 * P         parameters: per layer, weight matrix (in, out)
                        row-major, then bias vector
"""

import struct

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh", "leaky_relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "clip")
LEAKY_SLOPE = 0.01

_MAGIC_HIDDEN = {name: i for i, name in enumerate(HIDDEN_ACTIVATIONS)}
_MAGIC_OUTPUT = {name: i for i, name in enumerate(OUTPUT_ACTIVATIONS)}


class NonFiniteError(FloatingPointError):
    """A parameter or gradient became NaN/Inf."""


def _act(name, z, clip_bounds=None, out=None):
    if name == "relu":
        return np.maximum(z, 0.0, out=out)
    if name == "tanh":
        return np.tanh(z, out=out)
    if name == "leaky_relu":
        if out is None:
            return np.where(z > 0.0, z, LEAKY_SLOPE * z)
        np.multiply(z, LEAKY_SLOPE, out=out)
        return np.maximum(z, out, out=out)   # z > 0.01*z iff z > 0
    if name == "identity":
        if out is None:
            return z
        out[:] = z
        return out
    if name == "clip":
        return np.clip(z, clip_bounds[0], clip_bounds[1], out=out)
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv(name, z, clip_bounds=None, out=None):
    if name == "relu":
        return np.heaviside(z, 0.0, out=out)   # strict: zero slope at z <= 0
    if name == "tanh":
        t = np.tanh(z, out=out)
        if out is None:
            return 1.0 - t * t
        np.multiply(out, out, out=out)
        return np.subtract(1.0, out, out=out)
    if name == "leaky_relu":
        h = np.heaviside(z, 0.0, out=out)
        np.multiply(h, 1.0 - LEAKY_SLOPE, out=h)
        h += LEAKY_SLOPE
        return h
    if name == "identity":
        if out is None:
            return np.ones_like(z)
        out[:] = 1.0
        return out
    if name == "clip":
        # zero slope strictly outside the bounds, unit slope strictly inside
        inside = ((z > clip_bounds[0]) & (z < clip_bounds[1])).astype(np.float64)
        if out is None:
            return inside
        out[:] = inside
        return out
    raise ValueError(f"unknown activation {name!r}")


def _act_second_deriv(name, z):
    # only tanh has a nonzero second derivative; kinks are measure zero
    if name == "tanh":
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    return np.zeros_like(z)


class GradTape:
    """Gradients mirroring an Mlp: flat buffer plus per-layer views."""

    def __init__(self, net):
        self.flat = np.zeros(net.n_params)
        self.weight_grads = []
        self.bias_grads = []
        off = 0
        for n_in, n_out in zip(net.layer_sizes[:-1], net.layer_sizes[1:]):
            self.weight_grads.append(self.flat[off:off + n_in * n_out].reshape(n_in, n_out))
            off += n_in * n_out
            self.bias_grads.append(self.flat[off:off + n_out])
            off += n_out
        self.input_gradient = None

    def zero(self):
        self.flat[:] = 0.0
        self.input_gradient = None
        return self


class Mlp:
    """Fully connected network with chained layer sizes.

    Hidden activation is one of relu/tanh/leaky_relu; the output activation is
    identity, tanh, or a hard clip to ``clip_bounds``. All arithmetic is
    float64 and deterministic for fixed parameters.
    """

    def __init__(self, layer_sizes, hidden_activation="relu",
                 output_activation="identity", clip_bounds=None, rng=None):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
            raise ValueError(f"layer_sizes must be >=2 positive ints, got {layer_sizes}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        if output_activation == "clip":
            if clip_bounds is None:
                raise ValueError("clip output requires clip_bounds")
            lo, hi = float(clip_bounds[0]), float(clip_bounds[1])
            if not lo < hi:
                raise ValueError(f"clip_bounds must satisfy lower < upper, got {(lo, hi)}")
            clip_bounds = (lo, hi)
        elif clip_bounds is not None:
            raise ValueError("clip_bounds only valid with clip output activation")

        self.layer_sizes = layer_sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.clip_bounds = clip_bounds

        self.n_params = sum(i * o + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))
        self.params = np.zeros(self.n_params)
        self.weights = []
        self.biases = []
        off = 0
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            self.weights.append(self.params[off:off + n_in * n_out].reshape(n_in, n_out))
            off += n_in * n_out
            self.biases.append(self.params[off:off + n_out])
            off += n_out

        if rng is None:
            rng = np.random.default_rng(0)
        for w in self.weights:
            n_in, n_out = w.shape
            bound = np.sqrt(6.0 / (n_in + n_out))
            w[:] = rng.uniform(-bound, bound, size=w.shape)
        # biases start at zero
        self._workspace = {}

    def rebind_params(self, flat_view):
        """Re-home parameters onto a caller-owned 1-D buffer (e.g. one row of
        a stacked twin-network array); existing values are copied in."""
        if flat_view.shape != (self.n_params,):
            raise ValueError("rebind buffer has the wrong length")
        flat_view[:] = self.params
        self.params = flat_view
        self.weights = []
        self.biases = []
        off = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.params[off:off + n_in * n_out].reshape(n_in, n_out))
            off += n_in * n_out
            self.biases.append(self.params[off:off + n_out])
            off += n_out
        return self

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def _layer_act(self, layer_index):
        if layer_index == len(self.weights) - 1:
            return self.output_activation
        return self.hidden_activation

    def _buffers(self, batch):
        bufs = self._workspace.get(batch)
        if bufs is None:
            bufs = {
                "pre": [np.empty((batch, n)) for n in self.layer_sizes[1:]],
                "act": [np.empty((batch, n)) for n in self.layer_sizes[1:]],
                "deriv": [np.empty((batch, n)) for n in self.layer_sizes[1:]],
                "gin": [np.empty((batch, n)) for n in self.layer_sizes[:-1]],
            }
            self._workspace[batch] = bufs
        return bufs

    def _run(self, x_batch):
        """Forward pass keeping pre-activations and activations per layer.

        Returns views into per-net reusable buffers: valid until the next
        ``_run`` call with the same batch size on this net. Public callers go
        through ``forward_batch``, which copies.
        """
        bufs = self._buffers(x_batch.shape[0])
        pre = []
        acts = [x_batch]
        a = x_batch
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = bufs["pre"][i]
            np.matmul(a, w, out=z)
            z += b
            pre.append(z)
            a = _act(self._layer_act(i), z, self.clip_bounds, out=bufs["act"][i])
            acts.append(a)
        return pre, acts

    def forward_batch(self, x_batch):
        x_batch = np.asarray(x_batch, dtype=np.float64)
        if x_batch.ndim != 2 or x_batch.shape[1] != self.in_dim:
            raise ValueError(
                f"expected input of shape (B, {self.in_dim}), got {x_batch.shape}")
        return self._run(x_batch)[1][-1].copy()

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ValueError(f"expected input of shape ({self.in_dim},), got {x.shape}")
        return self.forward_batch(x[None, :])[0]

    def backward_batch(self, x_batch, cotangents, cache=None):
        """Reverse-mode pass for a batch.

        Returns a GradTape whose parameter gradients are summed over the batch
        and whose ``input_gradient`` has one row per sample; these are exact
        gradients of ``sum_b cotangents[b] . output[b]``.
        """
        x_batch = np.asarray(x_batch, dtype=np.float64)
        cot = np.asarray(cotangents, dtype=np.float64)
        if cot.shape != (x_batch.shape[0], self.out_dim):
            raise ValueError(
                f"cotangent shape {cot.shape} does not match (B, {self.out_dim})")
        pre, acts = cache if cache is not None else self._run(x_batch)
        bufs = self._buffers(x_batch.shape[0])
        tape = GradTape(self)
        g = cot
        for i in range(len(self.weights) - 1, -1, -1):
            dz = _act_deriv(self._layer_act(i), pre[i], self.clip_bounds,
                            out=bufs["deriv"][i])
            np.multiply(g, dz, out=dz)
            np.matmul(acts[i].T, dz, out=tape.weight_grads[i])
            np.sum(dz, axis=0, out=tape.bias_grads[i])
            g = np.matmul(dz, self.weights[i].T, out=bufs["gin"][i])
        tape.input_gradient = g.copy()
        return tape

    def backward(self, x, output_cotangent):
        """Gradients of ``output_cotangent . output`` for a single input."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ValueError(f"expected input of shape ({self.in_dim},), got {x.shape}")
        cot = np.asarray(output_cotangent, dtype=np.float64)
        if cot.shape != (self.out_dim,):
            raise ValueError(
                f"cotangent length {cot.shape} does not match output dim {self.out_dim}")
        tape = self.backward_batch(x[None, :], cot[None, :])
        tape.input_gradient = tape.input_gradient[0]
        return tape

    def input_grad_batch(self, x_batch, cotangents, cache=None):
        """Per-sample input gradients only (parameters untouched)."""
        x_batch = np.asarray(x_batch, dtype=np.float64)
        pre, _ = cache if cache is not None else self._run(x_batch)
        bufs = self._buffers(x_batch.shape[0])
        g = np.asarray(cotangents, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            dz = _act_deriv(self._layer_act(i), pre[i], self.clip_bounds,
                            out=bufs["deriv"][i])
            np.multiply(g, dz, out=dz)
            g = np.matmul(dz, self.weights[i].T, out=bufs["gin"][i])
        return g.copy()

    def grad_of_input_grad(self, x_batch, directions):
        """Parameter gradients of ``J = sum_b directions[b] . grad_x f(x_b)``.

        Scalar-output networks only. ``directions`` is held constant; this is
        the double-backward needed for input-gradient penalties.
        """
        if self.out_dim != 1:
            raise ValueError("grad_of_input_grad requires a scalar-output network")
        x_batch = np.asarray(x_batch, dtype=np.float64)
        c = np.asarray(directions, dtype=np.float64)
        if c.shape != x_batch.shape:
            raise ValueError(f"directions shape {c.shape} != input shape {x_batch.shape}")
        pre, acts = self._run(x_batch)
        n_layers = len(self.weights)
        derivs = [_act_deriv(self._layer_act(i), pre[i], self.clip_bounds)
                  for i in range(n_layers)]

        # forward tangent sweep: t = d(output)/dx . c
        tangents_in = []   # U_l: tangent of pre-activation z_l
        tangents = [c]     # T_l: tangent of each activation
        t = c
        for i in range(n_layers):
            u = t @ self.weights[i]
            tangents_in.append(u)
            t = derivs[i] * u
            tangents.append(t)

        tape = GradTape(self)
        # reverse sweep through the tangent graph; dz_extra collects the
        # cotangents that the tangent path injects into the primal graph
        dz_extra = [None] * n_layers
        dt = np.ones((x_batch.shape[0], 1))
        for i in range(n_layers - 1, -1, -1):
            du = derivs[i] * dt
            s2 = _act_second_deriv(self._layer_act(i), pre[i])
            dz_extra[i] = s2 * tangents_in[i] * dt
            tape.weight_grads[i][:] += tangents[i].T @ du
            dt = du @ self.weights[i].T

        # reverse sweep through the primal graph with the injected cotangents
        da = np.zeros_like(acts[-1])
        for i in range(n_layers - 1, -1, -1):
            dz = dz_extra[i] + da * derivs[i]
            tape.weight_grads[i][:] += acts[i].T @ dz
            tape.bias_grads[i][:] += dz.sum(axis=0)
            da = dz @ self.weights[i].T
        return tape

    def finite_diff_input_grad(self, x, h=1e-5):
        """Central-difference d(output)/d(input) for a scalar-output net."""
        if h <= 0:
            raise ValueError(f"h must be positive, got {h}")
        if self.out_dim != 1:
            raise ValueError("finite_diff_input_grad requires a scalar-output network")
        x = np.asarray(x, dtype=np.float64)
        grad = np.zeros_like(x)
        for i in range(x.shape[0]):
            xp = x.copy()
            xp[i] += h
            xm = x.copy()
            xm[i] -= h
            grad[i] = (self.forward(xp)[0] - self.forward(xm)[0]) / (2.0 * h)
        return grad

    def check_finite(self):
        if not np.all(np.isfinite(self.params)):
            raise NonFiniteError("network parameters contain NaN/Inf")

    def clone(self):
        other = Mlp.__new__(Mlp)
        other.layer_sizes = list(self.layer_sizes)
        other.hidden_activation = self.hidden_activation
        other.output_activation = self.output_activation
        other.clip_bounds = self.clip_bounds
        other.n_params = self.n_params
        other.params = self.params.copy()
        other.weights = []
        other.biases = []
        off = 0
        for n_in, n_out in zip(other.layer_sizes[:-1], other.layer_sizes[1:]):
            other.weights.append(other.params[off:off + n_in * n_out].reshape(n_in, n_out))
            off += n_in * n_out
            other.biases.append(other.params[off:off + n_out])
            off += n_out
        other._workspace = {}
        return other

    def copy_params_from(self, other):
        if other.layer_sizes != self.layer_sizes:
            raise ValueError("cannot copy parameters between differently shaped nets")
        self.params[:] = other.params

    # --- snapshot serialization ---

    def dumps(self):
        head = struct.pack("<I", len(self.layer_sizes))
        head += struct.pack(f"<{len(self.layer_sizes)}I", *self.layer_sizes)
        head += struct.pack("<BB", _MAGIC_HIDDEN[self.hidden_activation],
                            _MAGIC_OUTPUT[self.output_activation])
        if self.output_activation == "clip":
            head += struct.pack("<dd", *self.clip_bounds)
        body = self.params.astype("<f8").tobytes()
        return head + body

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.dumps())

    @classmethod
    def loads(cls, data):
        (n_sizes,) = struct.unpack_from("<I", data, 0)
        off = 4
        sizes = list(struct.unpack_from(f"<{n_sizes}I", data, off))
        off += 4 * n_sizes
        h_code, o_code = struct.unpack_from("<BB", data, off)
        off += 2
        clip_bounds = None
        output_activation = OUTPUT_ACTIVATIONS[o_code]
        if output_activation == "clip":
            clip_bounds = struct.unpack_from("<dd", data, off)
            off += 16
        net = cls(sizes, hidden_activation=HIDDEN_ACTIVATIONS[h_code],
                  output_activation=output_activation, clip_bounds=clip_bounds)
        flat = np.frombuffer(data, dtype="<f8", count=net.n_params, offset=off)
        net.params[:] = flat
        return net

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.loads(f.read())


class Adam:
    """Standard Adam with bias correction, acting on an Mlp's flat buffer."""

    def __init__(self, net, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.first_moment = np.zeros(net.n_params)
        self.second_moment = np.zeros(net.n_params)
        self.step_count = 0

    def step(self, net, tape):
        """One descent step along ``tape``; rejects non-finite gradients."""
        g = tape.flat
        if g.shape != net.params.shape:
            raise ValueError("gradient shape does not match parameter shape")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("gradient contains NaN/Inf")
        self.step_count += 1
        self.first_moment += (1.0 - self.beta1) * (g - self.first_moment)
        self.second_moment += (1.0 - self.beta2) * (g * g - self.second_moment)
        m_hat = self.first_moment / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.second_moment / (1.0 - self.beta2 ** self.step_count)
        net.params -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
        net.check_finite()
