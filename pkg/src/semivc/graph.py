"""Minimal reverse-mode differentiable computation core.

Tensors wrap float64 numpy arrays and record a tape of parent links so a
single backward() call propagates gradients to every parameter. The ops
implemented here are exactly the ones the sequence models need: affine maps,
elementwise nonlinearities, a bidirectional gated recurrent layer,
reparameterized Gaussian sampling, the Gaussian KL to a standard normal,
and an adaptive-moment optimizer.
"""

import numpy as np


def _unbroadcast(grad, shape):
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """A node in the computation tape.

    `values` is a float64 ndarray; `grad` is allocated lazily and always
    shape-matches `values`. Leaf tensors created with requires_grad=True are
    the trainable parameters.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, parents=(), backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        if requires_grad and not np.all(np.isfinite(self.values)):
            raise ValueError("tensor values must be finite")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    def _ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into .grad of every reachable tensor."""
        if seed is None:
            if self.values.size != 1:
                raise ValueError("backward() without seed requires a scalar")
            seed = np.ones_like(self.values)
        self._ensure_grad()
        self.grad = self.grad + seed

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.values + other.values, parents=(self, other))

        def bwd(g):
            self._ensure_grad()
            self.grad += _unbroadcast(g, self.values.shape)
            other._ensure_grad()
            other.grad += _unbroadcast(g, other.values.shape)

        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.values, parents=(self,))

        def bwd(g):
            self._ensure_grad()
            self.grad += -g

        out._backward = bwd
        return out

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other):
        return Tensor(other) + (-self)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.values * other.values, parents=(self, other))

        def bwd(g):
            self._ensure_grad()
            self.grad += _unbroadcast(g * other.values, self.values.shape)
            other._ensure_grad()
            other.grad += _unbroadcast(g * self.values, other.values.shape)

        out._backward = bwd
        return out

    __rmul__ = __mul__

    def matmul(self, other):
        out = Tensor(self.values @ other.values, parents=(self, other))

        def bwd(g):
            self._ensure_grad()
            self.grad += g @ other.values.T
            other._ensure_grad()
            other.grad += self.values.T @ g

        out._backward = bwd
        return out

    __matmul__ = matmul

    # -- elementwise --------------------------------------------------------

    def tanh(self):
        y = np.tanh(self.values)
        out = Tensor(y, parents=(self,))

        def bwd(g):
            self._ensure_grad()
            self.grad += g * (1.0 - y * y)

        out._backward = bwd
        return out

    def sigmoid(self):
        y = 0.5 * (1.0 + np.tanh(0.5 * self.values))
        out = Tensor(y, parents=(self,))

        def bwd(g):
            self._ensure_grad()
            self.grad += g * y * (1.0 - y)

        out._backward = bwd
        return out

    def exp(self):
        y = np.exp(self.values)
        out = Tensor(y, parents=(self,))

        def bwd(g):
            self._ensure_grad()
            self.grad += g * y

        out._backward = bwd
        return out

    def square(self):
        out = Tensor(self.values ** 2, parents=(self,))

        def bwd(g):
            self._ensure_grad()
            self.grad += g * 2.0 * self.values

        out._backward = bwd
        return out

    def clamp(self, lo, hi):
        """Clip values; gradient passes through only inside [lo, hi]."""
        mask = (self.values >= lo) & (self.values <= hi)
        out = Tensor(np.clip(self.values, lo, hi), parents=(self,))

        def bwd(g):
            self._ensure_grad()
            self.grad += g * mask

        out._backward = bwd
        return out

    def sum(self):
        out = Tensor(self.values.sum(), parents=(self,))

        def bwd(g):
            self._ensure_grad()
            self.grad += g * np.ones_like(self.values)

        out._backward = bwd
        return out

    def rows(self, start, stop):
        """Row slice [start:stop] with gradient routing."""
        out = Tensor(self.values[start:stop], parents=(self,))

        def bwd(g):
            self._ensure_grad()
            self.grad[start:stop] += g

        out._backward = bwd
        return out

    def item(self):
        return float(self.values)


def concat_rows(tensors):
    """Stack a list of row tensors along axis 0."""
    vals = np.concatenate([t.values for t in tensors], axis=0)
    out = Tensor(vals, parents=tuple(tensors))
    sizes = [t.values.shape[0] for t in tensors]

    def bwd(g):
        off = 0
        for t, n in zip(tensors, sizes):
            t._ensure_grad()
            t.grad += g[off:off + n]
            off += n

    out._backward = bwd
    return out


def concat_cols(a, b):
    """Concatenate two matrices along axis 1."""
    out = Tensor(np.concatenate([a.values, b.values], axis=1), parents=(a, b))
    na = a.values.shape[1]

    def bwd(g):
        a._ensure_grad()
        a.grad += g[:, :na]
        b._ensure_grad()
        b.grad += g[:, na:]

    out._backward = bwd
    return out


def affine(x, W, b):
    """y = x W + b for x of shape T×I, W of shape I×O, b of shape O."""
    if x.values.ndim != 2 or W.values.ndim != 2 or x.values.shape[1] != W.values.shape[0]:
        raise ValueError("affine shape mismatch: x %s, W %s"
                         % (x.values.shape, W.values.shape))
    if b.values.shape != (W.values.shape[1],):
        raise ValueError("affine bias shape mismatch")
    return x @ W + b


class ParamSet:
    """Named trainable tensors with deterministic iteration order."""

    def __init__(self):
        self._params = {}

    def add(self, name, values):
        if name in self._params:
            raise ValueError("duplicate parameter name %r" % name)
        t = Tensor(values, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return list(self._params.items())

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def merge(self, other, prefix=""):
        for name, t in other._params.items():
            key = prefix + name
            if key in self._params:
                raise ValueError("duplicate parameter name %r" % key)
            self._params[key] = t

    def copy_values_from(self, other):
        for name, t in self._params.items():
            t.values = other._params[name].values.copy()

    def state_dict(self):
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_state_dict(self, state):
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.values.shape:
                raise ValueError("shape mismatch for %r" % name)
            t.values = arr.copy()


class RngState:
    """Seedable counter-based random stream (Philox)."""

    def __init__(self, seed):
        self._gen = np.random.Generator(np.random.Philox(seed))

    def normal(self, shape):
        return self._gen.standard_normal(shape)

    def uniform(self):
        return self._gen.random()

    def shuffle(self, items):
        self._gen.shuffle(items)

    def integers(self, low, high):
        return int(self._gen.integers(low, high))


# -- recurrent layer --------------------------------------------------------

def init_gru_params(params, prefix, input_dim, hidden, rng):
    """Create bidirectional GRU parameters under `prefix` in `params`."""
    scale_x = 1.0 / np.sqrt(input_dim)
    scale_h = 1.0 / np.sqrt(hidden)
    for d in ("fw", "bw"):
        params.add("%s.%s.Wx" % (prefix, d),
                   rng.normal((input_dim, 3 * hidden)) * scale_x)
        params.add("%s.%s.Wh" % (prefix, d),
                   rng.normal((hidden, 3 * hidden)) * scale_h)
        params.add("%s.%s.b" % (prefix, d), np.zeros(3 * hidden))


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _gru_direction(x_proj, Wh, b, hidden, reverse):
    """One GRU direction as a single fused tape node.

    x_proj is T×3H (input already multiplied by Wx); gate layout is
    [reset | update | candidate]. The backward closure runs the
    backprop-through-time recursion in plain numpy, which keeps the tape
    small for long sequences.
    """
    Xp = x_proj.values
    Whv = Wh.values
    bv = b.values
    T = Xp.shape[0]
    H = hidden
    order = range(T - 1, -1, -1) if reverse else range(T)

    pre = Xp + bv
    h_prev = np.empty((T, H))
    R = np.empty((T, H))
    U = np.empty((T, H))
    C = np.empty((T, H))
    HPc = np.empty((T, H))
    out = np.empty((T, H))
    h = np.zeros(H)
    first = True
    for t in order:
        hp = h @ Whv
        r = _sigmoid(pre[t, :H] + hp[:H])
        u = _sigmoid(pre[t, H:2 * H] + hp[H:2 * H])
        if first:
            # warm-start: full update on the boundary frame, so the zero
            # initial state never leaks into the outputs
            u = np.zeros(H)
            first = False
        hpc = hp[2 * H:]
        c = np.tanh(pre[t, 2 * H:] + r * hpc)
        h_prev[t] = h
        R[t], U[t], C[t], HPc[t] = r, u, c, hpc
        h = u * h + (1.0 - u) * c
        out[t] = h

    node = Tensor(out, parents=(x_proj, Wh, b))
    WhT = Whv.T

    def bwd(g):
        dXp = np.empty_like(Xp)
        dHp = np.empty_like(Xp)  # gradient w.r.t. h_prev @ Wh per step
        dh = np.zeros(H)
        for t in reversed(list(order)):
            dht = g[t] + dh
            r, u, c, hpc, hp0 = R[t], U[t], C[t], HPc[t], h_prev[t]
            dpre_u = dht * (hp0 - c) * u * (1.0 - u)
            dpre_c = dht * (1.0 - u) * (1.0 - c * c)
            dpre_r = dpre_c * hpc * r * (1.0 - r)
            row = dHp[t]
            row[:H] = dpre_r
            row[H:2 * H] = dpre_u
            row[2 * H:] = dpre_c * r
            dXp[t, :H] = dpre_r
            dXp[t, H:2 * H] = dpre_u
            dXp[t, 2 * H:] = dpre_c
            dh = dht * u + row @ WhT
        x_proj._ensure_grad()
        x_proj.grad += dXp
        Wh._ensure_grad()
        Wh.grad += h_prev.T @ dHp
        b._ensure_grad()
        b.grad += dXp.sum(axis=0)

    node._backward = bwd
    return node


def birnn(x, params, hidden, prefix):
    """Bidirectional gated recurrent layer: T×I -> T×2H.

    Every output frame depends on the whole input sequence (forward pass
    carries the past, backward pass carries the future).
    """
    if x.values.ndim != 2 or x.values.shape[0] < 1:
        raise ValueError("birnn input must be T×I with T >= 1")
    fw = _gru_direction(x @ params["%s.fw.Wx" % prefix],
                        params["%s.fw.Wh" % prefix],
                        params["%s.fw.b" % prefix], hidden, reverse=False)
    bw = _gru_direction(x @ params["%s.bw.Wx" % prefix],
                        params["%s.bw.Wh" % prefix],
                        params["%s.bw.b" % prefix], hidden, reverse=True)
    return concat_cols(fw, bw)


# -- stochastic pieces ------------------------------------------------------

LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 6.0


def gaussian_sample(mean, log_var, rng):
    """Reparameterized sample mean + exp(log_var/2) * eps, eps ~ N(0, I).

    Gradients flow to mean and log_var; eps is treated as a constant.
    """
    if mean.values.shape != log_var.values.shape:
        raise ValueError("gaussian_sample shape mismatch")
    lv = log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
    eps = Tensor(rng.normal(mean.values.shape))
    return mean + (lv * 0.5).exp() * eps


def kl_to_standard_normal(mean, log_var):
    """KL(N(mean, diag exp(log_var)) || N(0, I)), summed over all entries."""
    if mean.values.shape != log_var.values.shape:
        raise ValueError("kl_to_standard_normal shape mismatch")
    lv = log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
    return ((lv.exp() + mean.square() - 1.0 - lv) * 0.5).sum()


# -- optimizer --------------------------------------------------------------

class AdamState:
    """Adaptive-moment optimizer state for one ParamSet."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=5.0):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.skip_count = 0
        self.m = {name: np.zeros_like(t.values) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.values) for name, t in params.items()}


def sgd_step(params, opt_state, lr):
    """One optimizer step over all parameters; zeroes gradients after.

    Applies a global-norm clip at opt_state.clip_norm first; a non-finite
    gradient skips the whole step and bumps skip_count.
    """
    grads = {}
    sq_norm = 0.0
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.values)
        if not np.all(np.isfinite(g)):
            opt_state.skip_count += 1
            params.zero_grad()
            return
        grads[name] = g
        sq_norm += float((g * g).sum())
    norm = np.sqrt(sq_norm)
    if norm > opt_state.clip_norm:
        scale = opt_state.clip_norm / norm
        grads = {name: g * scale for name, g in grads.items()}

    opt_state.step_count += 1
    b1, b2 = opt_state.beta1, opt_state.beta2
    t = opt_state.step_count
    for name, p in params.items():
        g = grads[name]
        opt_state.m[name] = b1 * opt_state.m[name] + (1 - b1) * g
        opt_state.v[name] = b2 * opt_state.v[name] + (1 - b2) * g * g
        m_hat = opt_state.m[name] / (1 - b1 ** t)
        v_hat = opt_state.v[name] / (1 - b2 ** t)
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + opt_state.eps)
    params.zero_grad()
