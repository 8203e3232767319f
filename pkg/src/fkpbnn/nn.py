"""Dense feed-forward networks with one stochastic layer.

The parameters of the network are split in two flat vectors: ``psi`` holds
every weight and bias of the deterministic layers, ``phi`` those of the single
stochastic layer. All routines accept a *stack* of stochastic parameters
``phi`` of shape ``(J, d)`` so that a whole particle ensemble is evaluated in
one pass. The layers below the stochastic one (the "trunk") do not depend on
``phi`` and are evaluated once, which is what makes particle evaluation cheap.

Gradients are computed by hand-written reverse-mode accumulation.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit, log_expit, logsumexp

from .exceptions import NonFiniteError

_LOG_2PI = float(np.log(2.0 * np.pi))
_GELU_C = float(np.sqrt(2.0 / np.pi))


class Activation(str, enum.Enum):
    GELU = "GELU"
    RELU = "RELU"
    SIGMOID = "SIGMOID"
    SOFTMAX = "SOFTMAX"
    NONE = "NONE"


class LikelihoodKind(str, enum.Enum):
    GAUSSIAN_UNIT_VAR = "GAUSSIAN_UNIT_VAR"
    BERNOULLI_FROM_PROB = "BERNOULLI_FROM_PROB"
    CATEGORICAL_FROM_PROBS = "CATEGORICAL_FROM_PROBS"


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    activation: Activation = Activation.NONE

    def __post_init__(self):
        if int(self.in_dim) < 1 or int(self.out_dim) < 1:
            raise ValueError(f"layer dimensions must be positive, got {self.in_dim}->{self.out_dim}")
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def n_params(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


@dataclass(frozen=True)
class NetworkSpec:
    """Layer list plus the 0-based index of the stochastic layer.

    ``gelu_approximate`` selects the tanh form of GELU (default) over the
    exact erf form.
    """

    layers: tuple
    stochastic_layer: int
    gelu_approximate: bool = True

    def __post_init__(self):
        layers = tuple(l if isinstance(l, Dense) else Dense(*l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].out_dim != layers[k + 1].in_dim:
                raise ValueError(
                    f"layer {k} outputs {layers[k].out_dim} but layer {k + 1} expects {layers[k + 1].in_dim}"
                )
            if layers[k].activation is Activation.SOFTMAX:
                raise ValueError(f"SOFTMAX is only allowed on the output layer (found on layer {k})")
        if not 0 <= self.stochastic_layer < len(layers):
            raise ValueError(f"stochastic_layer {self.stochastic_layer} out of range for {len(layers)} layers")

    @classmethod
    def mlp(cls, sizes, activation="GELU", output_activation="NONE", stochastic_layer=0, **kwargs):
        """Build a chain ``sizes[0] -> sizes[1] -> ... -> sizes[-1]``."""
        n = len(sizes) - 1
        layers = [
            Dense(sizes[k], sizes[k + 1], output_activation if k == n - 1 else activation)
            for k in range(n)
        ]
        return cls(tuple(layers), stochastic_layer, **kwargs)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dim_phi(self) -> int:
        return self.layers[self.stochastic_layer].n_params

    @property
    def dim_psi(self) -> int:
        return sum(l.n_params for k, l in enumerate(self.layers) if k != self.stochastic_layer)

    def layout(self) -> dict:
        """Map layer index to ``(vector_name, offset, (in_dim, out_dim))``.

        Within its slot a layer stores the row-major weight matrix followed by
        the bias.
        """
        out, off = {}, 0
        for k, l in enumerate(self.layers):
            if k == self.stochastic_layer:
                out[k] = ("phi", 0, (l.in_dim, l.out_dim))
            else:
                out[k] = ("psi", off, (l.in_dim, l.out_dim))
                off += l.n_params
        return out

    def to_dict(self) -> dict:
        return {
            "layers": [[l.in_dim, l.out_dim, l.activation.value] for l in self.layers],
            "stochastic_layer": self.stochastic_layer,
            "gelu_approximate": self.gelu_approximate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = tuple(Dense(int(a), int(b), Activation(str(act).upper())) for a, b, act in d["layers"])
        return cls(layers, int(d["stochastic_layer"]), bool(d.get("gelu_approximate", True)))


@dataclass
class ParamSplit:
    psi: np.ndarray
    phi: np.ndarray
    layout: dict = field(repr=False)

    def layer(self, k: int):
        """Return views ``(W, b)`` of layer ``k``."""
        name, off, (i, o) = self.layout[k]
        vec = self.psi if name == "psi" else self.phi
        return vec[off:off + i * o].reshape(i, o), vec[off + i * o:off + i * o + o]

    @classmethod
    def from_layers(cls, spec: NetworkSpec, weights) -> "ParamSplit":
        """Inverse of :meth:`to_layers`."""
        layout = spec.layout()
        psi = np.zeros(spec.dim_psi)
        phi = np.zeros(spec.dim_phi)
        for k, (W, b) in enumerate(weights):
            name, off, (i, o) = layout[k]
            vec = psi if name == "psi" else phi
            vec[off:off + i * o] = np.asarray(W, dtype=float).reshape(-1)
            vec[off + i * o:off + i * o + o] = b
        return cls(psi, phi, layout)

    def to_layers(self):
        return [tuple(a.copy() for a in self.layer(k)) for k in range(len(self.layout))]


def init_params(spec: NetworkSpec, seed=None) -> ParamSplit:
    """LeCun-normal weights (std ``1/sqrt(fan_in)``) and zero biases."""
    rng = np.random.default_rng(seed)
    weights = [
        (rng.normal(0.0, 1.0 / np.sqrt(l.in_dim), size=(l.in_dim, l.out_dim)), np.zeros(l.out_dim))
        for l in spec.layers
    ]
    return ParamSplit.from_layers(spec, weights)


# --- activations ----------------------------------------------------------------

def _gelu(z, approximate):
    if approximate:
        return 0.5 * z * (1.0 + np.tanh(_GELU_C * z * (1.0 + 0.044715 * z * z)))
    return 0.5 * z * (1.0 + erf(z / np.sqrt(2.0)))


def _gelu_grad(z, approximate):
    if approximate:
        z2 = z * z
        t = np.tanh(_GELU_C * z * (1.0 + 0.044715 * z2))
        z2 *= 3 * 0.044715 * _GELU_C
        z2 += _GELU_C
        z2 *= z
        g = np.multiply(t, t)
        np.subtract(1.0, g, out=g)
        g *= z2
        g += t
        g += 1.0
        g *= 0.5
        return g
    return 0.5 * (1.0 + erf(z / np.sqrt(2.0))) + z * np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def activate(z, act: Activation, gelu_approximate=True):
    if act is Activation.GELU:
        return _gelu(z, gelu_approximate)
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.SIGMOID:
        return expit(z)
    if act is Activation.SOFTMAX:
        return np.exp(z - logsumexp(z, axis=-1, keepdims=True))
    return z


def _activation_grad(z, act, gelu_approximate):
    # elementwise derivative; SOFTMAX never reaches here (output layer only)
    if act is Activation.GELU:
        return _gelu_grad(z, gelu_approximate)
    if act is Activation.RELU:
        return (z > 0).astype(z.dtype)
    if act is Activation.SIGMOID:
        s = expit(z)
        return s * (1.0 - s)
    return np.ones_like(z)


# --- parameter unpacking --------------------------------------------------------

def _psi_layer(spec, psi, k):
    _, off, (i, o) = spec.layout()[k]
    return psi[off:off + i * o].reshape(i, o), psi[off + i * o:off + i * o + o]


def _phi_layer(spec, phi):
    l = spec.layers[spec.stochastic_layer]
    i, o = l.in_dim, l.out_dim
    return phi[:, :i * o].reshape(-1, i, o), phi[:, i * o:]


def _as_2d(phi):
    phi = np.asarray(phi, dtype=float)
    return phi[None, :] if phi.ndim == 1 else phi


def _check_finite(a, layer):
    """Raise on NaN/inf; stacked ``(J, B, o)`` arrays also report the first bad particle."""
    if not np.all(np.isfinite(a)):
        particle = None
        if a.ndim == 3:
            particle = int(np.flatnonzero(~np.all(np.isfinite(a), axis=(1, 2)))[0])
        raise NonFiniteError(f"non-finite values at layer {layer}", layer=layer, particle=particle)


# --- trunk: layers below the stochastic one -------------------------------------

@dataclass
class Trunk:
    """Cached forward pass of the deterministic layers below the stochastic one.

    ``inputs[k]`` is the input to layer ``k`` and ``pre[k]`` its
    pre-activation, for ``k < stochastic_layer``; ``out`` feeds the stochastic
    layer.
    """

    inputs: list
    pre: list
    out: np.ndarray

    def take(self, idx) -> "Trunk":
        return Trunk([a[idx] for a in self.inputs], [a[idx] for a in self.pre], self.out[idx])


def trunk_forward(spec: NetworkSpec, psi, x) -> Trunk:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ValueError(f"expected input of shape (batch, {spec.in_dim}), got {x.shape}")
    h, inputs, pre = x, [], []
    for k in range(spec.stochastic_layer):
        W, b = _psi_layer(spec, psi, k)
        z = h @ W + b
        _check_finite(z, k)
        inputs.append(h)
        pre.append(z)
        h = activate(z, spec.layers[k].activation, spec.gelu_approximate)
    return Trunk(inputs, pre, h)


def trunk_backward(spec: NetworkSpec, psi, trunk: Trunk, dh) -> np.ndarray:
    """Backpropagate ``dh`` (gradient w.r.t. ``trunk.out``) into the trunk.

    Returns the gradient w.r.t. ``psi`` (zero outside the trunk slots).
    """
    g = np.zeros(spec.dim_psi)
    layout = spec.layout()
    for k in reversed(range(spec.stochastic_layer)):
        dz = dh * _activation_grad(trunk.pre[k], spec.layers[k].activation, spec.gelu_approximate)
        _, off, (i, o) = layout[k]
        g[off:off + i * o] = (trunk.inputs[k].T @ dz).reshape(-1)
        g[off + i * o:off + i * o + o] = dz.sum(axis=0)
        _check_finite(g[off:off + i * o + o], k)
        if k > 0:
            W, _ = _psi_layer(spec, psi, k)
            dh = dz @ W.T
    return g


# --- head: the stochastic layer and everything above ---------------------------

def _head_forward(spec, psi, phi, h):
    s = spec.stochastic_layer
    inputs, pre = [], []
    for k in range(s, len(spec.layers)):
        if k == s:
            W, b = _phi_layer(spec, phi)
            z = np.matmul(h, W) + b[:, None, :]
        else:
            W, b = _psi_layer(spec, psi, k)
            z = h @ W + b
        _check_finite(z, k)
        inputs.append(h)
        pre.append(z)
        h = activate(z, spec.layers[k].activation, spec.gelu_approximate)
    return inputs, pre, h


def _check_likelihood(spec, lik):
    act = spec.layers[-1].activation
    if lik is LikelihoodKind.BERNOULLI_FROM_PROB and act is not Activation.SIGMOID:
        raise ValueError("BERNOULLI_FROM_PROB needs a SIGMOID output layer")
    if lik is LikelihoodKind.CATEGORICAL_FROM_PROBS and act is not Activation.SOFTMAX:
        raise ValueError("CATEGORICAL_FROM_PROBS needs a SOFTMAX output layer")
    if lik is LikelihoodKind.GAUSSIAN_UNIT_VAR and act is Activation.SOFTMAX:
        raise ValueError("GAUSSIAN_UNIT_VAR cannot be used with a SOFTMAX output layer")


def _output_terms(spec, lik, z, a, y):
    """Per-point log-likelihood ``(J, B)`` and its gradient w.r.t. the output pre-activation."""
    if lik is LikelihoodKind.GAUSSIAN_UNIT_VAR:
        r = y - a
        ll = -0.5 * _LOG_2PI * y.shape[-1] - 0.5 * np.sum(r * r, axis=-1)
        dz = r * _activation_grad(z, spec.layers[-1].activation, spec.gelu_approximate)
    elif lik is LikelihoodKind.BERNOULLI_FROM_PROB:
        # evaluated from logits for stability; identical to y log p + (1-y) log(1-p)
        ll = np.sum(y * log_expit(z) + (1.0 - y) * log_expit(-z), axis=-1)
        dz = y - a
    else:
        logp = z - logsumexp(z, axis=-1, keepdims=True)
        ll = np.sum(y * logp, axis=-1)
        dz = y - a
    return ll, dz


def head_value_and_grad(spec, psi, phi, h, y, lik, weights=None, need_phi=False):
    """Log-likelihood of each particle and its weighted gradients.

    Parameters
    ----------
    h : ndarray (B, n_in)
        Trunk output (input of the stochastic layer).
    y : ndarray (B, d_y)
    weights : ndarray (J,), optional
        Multipliers for the per-particle log-likelihoods; defaults to ones.

    Returns
    -------
    ll : ndarray (J,)
        Unweighted per-particle log-likelihoods summed over the batch.
    g_psi : ndarray (dim_psi,)
        ``sum_j weights[j] * grad_psi ll[j]`` restricted to the head layers.
    g_phi : ndarray (J, dim_phi) or None
        ``weights[j] * grad_phi ll[j]``.
    dh : ndarray (B, n_in)
        Weighted gradient w.r.t. the trunk output, summed over particles.
    """
    lik = LikelihoodKind(lik)
    _check_likelihood(spec, lik)
    phi = _as_2d(phi)
    J = phi.shape[0]
    w = np.ones(J) if weights is None else np.asarray(weights, dtype=float)
    y = np.asarray(y, dtype=float)
    s = spec.stochastic_layer
    inputs, pre, a = _head_forward(spec, psi, phi, h)
    ll_pts, dz = _output_terms(spec, lik, pre[-1], a, y)
    ll = ll_pts.sum(axis=1)
    if not np.all(np.isfinite(ll)):
        bad = int(np.flatnonzero(~np.isfinite(ll))[0])
        raise NonFiniteError("non-finite log-likelihood", layer=len(spec.layers) - 1, particle=bad)
    dz = dz * w[:, None, None]

    g_psi = np.zeros(spec.dim_psi)
    g_phi = None
    layout = spec.layout()
    for k in reversed(range(s, len(spec.layers))):
        hin = inputs[k - s]
        i, o = spec.layers[k].in_dim, spec.layers[k].out_dim
        if k > s:
            _, off, _ = layout[k]
            g_psi[off:off + i * o] = (hin.reshape(-1, i).T @ dz.reshape(-1, o)).reshape(-1)
            g_psi[off + i * o:off + i * o + o] = dz.sum(axis=(0, 1))
            _check_finite(g_psi[off:off + i * o + o], k)
            W, _ = _psi_layer(spec, psi, k)
            dh = dz @ W.T
        else:
            if need_phi:
                gW = np.matmul(hin.T, dz)
                g_phi = np.concatenate([gW.reshape(J, -1), dz.sum(axis=1)], axis=1)
                _check_finite(g_phi, k)
            W, _ = _phi_layer(spec, phi)
            dh = np.matmul(dz, np.swapaxes(W, -1, -2)).sum(axis=0) if s > 0 else None
        if k > s:
            dz = dh * _activation_grad(pre[k - s - 1], spec.layers[k - 1].activation, spec.gelu_approximate)
    return ll, g_psi, g_phi, dh


# --- public entry points ----------------------------------------------------------

def forward_particles(spec: NetworkSpec, psi, phi, x, trunk: Trunk | None = None) -> np.ndarray:
    """Network output for every particle: shape ``(J, B, d_out)``."""
    if trunk is None:
        trunk = trunk_forward(spec, psi, x)
    _, _, a = _head_forward(spec, np.asarray(psi, dtype=float), _as_2d(phi), trunk.out)
    return a


def forward(spec: NetworkSpec, params: ParamSplit, x) -> np.ndarray:
    """Network output ``(B, d_out)`` for a single parameter setting."""
    return forward_particles(spec, params.psi, params.phi, x)[0]


def log_likelihood(spec: NetworkSpec, psi, phi, x, y, lik, trunk: Trunk | None = None) -> np.ndarray:
    """Per-particle ``sum_n log p(y_n | phi_j; psi)``, shape ``(J,)``."""
    lik = LikelihoodKind(lik)
    _check_likelihood(spec, lik)
    if trunk is None:
        trunk = trunk_forward(spec, psi, x)
    _, pre, a = _head_forward(spec, np.asarray(psi, dtype=float), _as_2d(phi), trunk.out)
    ll, _ = _output_terms(spec, lik, pre[-1], a, np.asarray(y, dtype=float))
    return ll.sum(axis=1)


def value_and_grad(spec: NetworkSpec, psi, phi, x, y, lik, weights=None, need_phi=False):
    """Per-particle log-likelihoods with weighted gradients w.r.t. ``psi`` (and ``phi``).

    ``g_psi = sum_j weights[j] grad_psi log p(y | phi_j; psi)``; with
    ``need_phi`` also ``g_phi[j] = weights[j] grad_phi log p(y | phi_j; psi)``.
    """
    psi = np.asarray(psi, dtype=float)
    trunk = trunk_forward(spec, psi, x)
    ll, g_psi, g_phi, dh = head_value_and_grad(spec, psi, phi, trunk.out, y, lik, weights, need_phi)
    if spec.stochastic_layer > 0:
        g_psi = g_psi + trunk_backward(spec, psi, trunk, dh)
    return ll, g_psi, g_phi


def grad_psi_loglik(spec: NetworkSpec, params: ParamSplit, x, y, lik) -> np.ndarray:
    """Gradient of ``sum_n log p(y_n | phi; psi)`` w.r.t. ``psi``, ``phi`` held fixed."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    _, g, _ = value_and_grad(spec, params.psi, params.phi, x, y, lik)
    return g
