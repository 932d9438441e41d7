"""GCN / SGC / APPNP forward passes and training.

Everything here is the reference path: dense float64 numpy, written for
auditability rather than speed.  The attack loop re-verifies its results
through these functions, while its inner iterations run on the kernel
backends (see :mod:`mibtack.gradients`).

Forward conventions:

* GCN: L-1 graph-conv ReLU layers, one linear graph-conv layer, softmax.
* SGC: softmax(S^K X W).
* APPNP: H = MLP(X), then K damped power-iteration steps
  Z <- (1 - tau) * S Z + tau * H, then softmax.

S is the symmetrically normalized adjacency with self-loops where degrees
are weighted: dt_u = 1 + sum_w A'_uw, which stays well-defined when a row
carries fractional (relaxed) entries.
"""

import json
import os
import tempfile
from dataclasses import dataclass, asdict

import numpy as np

ARCHS = ("gcn", "sgc", "appnp")

# hidden width / propagation depth / teleport / weight decay per arch
ARCH_DEFAULTS = {
    "gcn": {"hidden_dim": 16, "prop_depth": 2, "teleport": 0.0, "weight_decay": 5e-4},
    "sgc": {"hidden_dim": 0, "prop_depth": 2, "teleport": 0.0, "weight_decay": 5e-6},
    "appnp": {"hidden_dim": 64, "prop_depth": 10, "teleport": 0.1, "weight_decay": 5e-6},
}


class NonFiniteError(RuntimeError):
    """A forward pass or training step produced NaN/inf.

    ``layer`` is the 0-based index of the stage that first went non-finite,
    or None when the location is not layer-shaped (e.g. the training loss).
    """

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.5
    max_epochs: int = 200
    patience: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")


def default_train_config(arch, seed=0):
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}")
    return TrainConfig(weight_decay=ARCH_DEFAULTS[arch]["weight_decay"], seed=seed)


@dataclass(frozen=True)
class AdjacencyRow:
    """One (possibly relaxed) adjacency row, applied symmetrically.

    ``values[owner]`` must be 0 (no self-loop through the perturbation) and
    all entries lie in [0, 1]; fractional values are legal and contribute
    their value to the weighted degrees of both endpoints.
    """

    owner: int
    values: np.ndarray


@dataclass(frozen=True)
class GnnModel:
    arch: str
    weights: tuple
    prop_depth: int = 2
    teleport: float = 0.0
    train_config: TrainConfig = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}")
        if not self.weights:
            raise ValueError("model needs at least one weight matrix")
        for i, w in enumerate(self.weights):
            if w.ndim != 2:
                raise ValueError(f"weight {i} is not a matrix")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"weight {i} contains non-finite entries")
        for wa, wb in zip(self.weights, self.weights[1:]):
            if wa.shape[1] != wb.shape[0]:
                raise ValueError("weight shapes do not chain")

    @property
    def num_classes(self):
        return self.weights[-1].shape[1]

    @property
    def num_features(self):
        return self.weights[0].shape[0]


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Dense normalized operator S and the weighted degrees behind it."""

    operator: np.ndarray
    degree_vector: np.ndarray
    owner: int = None


@dataclass(frozen=True)
class ForwardTrace:
    operator: NormalizedAdjacency
    preactivations: tuple
    activations: tuple
    probs: np.ndarray


def normalize_adjacency(base, overlay=None):
    """Build the self-loop-normalized operator, optionally with one row replaced.

    The overlay row is applied symmetrically (row and column of its owner),
    and degrees are recomputed as weighted sums, so relaxed entries in
    [0, 1] are handled exactly.
    """
    a = base.adjacency.toarray().astype(np.float64)
    owner = None
    if overlay is not None:
        owner = int(overlay.owner)
        vals = np.asarray(overlay.values, dtype=np.float64)
        if not 0 <= owner < base.num_nodes:
            raise ValueError("overlay owner out of range")
        if vals.shape != (base.num_nodes,):
            raise ValueError("overlay row has wrong length")
        if vals[owner] != 0.0:
            raise ValueError("overlay must not create a self-loop")
        if not np.all(np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0:
            raise ValueError("overlay entries must lie in [0, 1]")
        a[owner, :] = vals
        a[:, owner] = vals
    return _normalize_dense(a, owner)


def _normalize_dense(a, owner=None):
    # shared with the finite-difference oracle, which must evaluate slightly
    # outside the [0,1] box and therefore skips overlay validation
    dt = 1.0 + a.sum(axis=1)
    r = 1.0 / np.sqrt(dt)
    ap = a.copy()
    ap.flat[:: a.shape[0] + 1] += 1.0
    s = ap * r[:, None]
    s *= r[None, :]
    s.flags.writeable = False
    dt.flags.writeable = False
    return NormalizedAdjacency(operator=s, degree_vector=dt, owner=owner)


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _check_finite(z, layer):
    if not np.all(np.isfinite(z)):
        raise NonFiniteError(f"non-finite activation at layer {layer}", layer=layer)


def forward(model, na, x):
    """Full-graph forward pass returning a ForwardTrace (no dropout)."""
    s = na.operator
    if x.shape[0] != s.shape[0]:
        raise ValueError("feature matrix does not match operator size")
    if x.shape[1] != model.num_features:
        raise ValueError("feature width does not match model")
    pres = []
    acts = [x]
    if model.arch == "gcn":
        h = x
        nlayers = len(model.weights)
        for l, w in enumerate(model.weights):
            z = s @ (h @ w)
            _check_finite(z, l)
            pres.append(z)
            h = np.maximum(z, 0.0) if l < nlayers - 1 else z
            acts.append(h)
        logits = h
    elif model.arch == "sgc":
        (w,) = model.weights
        t = x
        for k in range(model.prop_depth):
            t = s @ t
            _check_finite(t, k)
            acts.append(t)
        logits = t @ w
        _check_finite(logits, model.prop_depth)
        pres.append(logits)
    elif model.arch == "appnp":
        w1, w2 = model.weights
        h1 = np.maximum(x @ w1, 0.0)
        hout = h1 @ w2
        _check_finite(hout, 0)
        acts.extend([h1, hout])
        z = hout
        tau = model.teleport
        for k in range(model.prop_depth):
            z = (1.0 - tau) * (s @ z) + tau * hout
            _check_finite(z, k + 1)
            pres.append(z)
        logits = z
    else:  # unreachable, GnnModel validates arch
        raise ValueError(model.arch)
    probs = _softmax_rows(logits)
    return ForwardTrace(operator=na, preactivations=tuple(pres), activations=tuple(acts), probs=probs)


def predict_probs(model, g):
    """Softmax outputs on the clean graph."""
    return forward(model, normalize_adjacency(g), g.features).probs


# ---------------------------------------------------------------------------
# training

def _init_weight(rng, shape):
    bound = 1.0 / np.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape)


def _log_softmax_rows(z):
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def _dropout_mask(rng, shape, p):
    if p == 0.0:
        return None
    return (rng.random(shape) >= p) / (1.0 - p)


def _apply_mask(h, mask):
    return h if mask is None else h * mask


def _ce_loss_and_seed(logits, y0, idx):
    """Mean cross-entropy over idx, and dL/dlogits (zero off-split)."""
    logp = _log_softmax_rows(logits)
    loss = -logp[idx, y0[idx]].mean()
    seed = np.zeros_like(logits)
    p = np.exp(logp[idx])
    p[np.arange(idx.size), y0[idx]] -= 1.0
    seed[idx] = p / idx.size
    return loss, seed


def train(arch, g, config=None):
    """Train a model; returns the weights of the best validation epoch."""
    model, _ = train_with_history(arch, g, config)
    return model


def train_with_history(arch, g, config=None):
    """Like train, also returns {"train_loss": [...], "val_accuracy": [...]}."""
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}")
    if g.splits.train.size == 0 or g.splits.validation.size == 0:
        raise ValueError("training requires nonempty train and validation splits")
    tc = config if config is not None else default_train_config(arch)
    defaults = ARCH_DEFAULTS[arch]
    rng = np.random.default_rng(tc.seed)

    s = normalize_adjacency(g).operator
    x = g.features
    y0 = g.labels - 1
    n, c = g.num_nodes, g.num_classes
    tr, va = g.splits.train, g.splits.validation

    if arch == "gcn":
        shapes = [(x.shape[1], defaults["hidden_dim"]), (defaults["hidden_dim"], c)]
    elif arch == "sgc":
        shapes = [(x.shape[1], c)]
    else:
        shapes = [(x.shape[1], defaults["hidden_dim"]), (defaults["hidden_dim"], c)]
    weights = [_init_weight(rng, sh) for sh in shapes]

    t_prop = x
    if arch == "sgc":
        for _ in range(defaults["prop_depth"]):
            t_prop = s @ t_prop

    # Adam with bias correction; weight decay enters through the gradient
    mom = [np.zeros_like(w) for w in weights]
    vel = [np.zeros_like(w) for w in weights]
    b1, b2, eps = 0.9, 0.999, 1e-8

    best_acc = -1.0
    best_weights = [w.copy() for w in weights]
    since_best = 0
    history = {"train_loss": [], "val_accuracy": []}

    for epoch in range(tc.max_epochs):
        loss, grads = _loss_and_grads(arch, s, x, y0, tr, weights, defaults, tc, rng, t_prop)
        if not np.isfinite(loss):
            raise NonFiniteError(f"training loss non-finite at epoch {epoch}")
        history["train_loss"].append(float(loss))

        step = epoch + 1
        for i, w in enumerate(weights):
            gr = grads[i] + tc.weight_decay * w
            mom[i] = b1 * mom[i] + (1.0 - b1) * gr
            vel[i] = b2 * vel[i] + (1.0 - b2) * gr * gr
            mhat = mom[i] / (1.0 - b1 ** step)
            vhat = vel[i] / (1.0 - b2 ** step)
            w -= tc.learning_rate * mhat / (np.sqrt(vhat) + eps)

        probs = _infer(arch, s, x, weights, defaults, t_prop)
        val_acc = float((probs[va].argmax(axis=1) == y0[va]).mean())
        history["val_accuracy"].append(val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best_weights = [w.copy() for w in weights]
            since_best = 0
        else:
            since_best += 1
            if since_best >= tc.patience:
                break

    for w in best_weights:
        w.flags.writeable = False
    model = GnnModel(
        arch=arch,
        weights=tuple(best_weights),
        prop_depth=defaults["prop_depth"],
        teleport=defaults["teleport"],
        train_config=tc,
    )
    return model, history


def _loss_and_grads(arch, s, x, y0, tr, weights, defaults, tc, rng, t_prop):
    if arch == "gcn":
        w1, w2 = weights
        z1 = s @ (x @ w1)
        h1 = np.maximum(z1, 0.0)
        mask = _dropout_mask(rng, h1.shape, tc.dropout)
        h1d = _apply_mask(h1, mask)
        logits = s @ (h1d @ w2)
        loss, seed = _ce_loss_and_seed(logits, y0, tr)
        db2 = s @ seed
        dw2 = h1d.T @ db2
        dh1 = _apply_mask(db2 @ w2.T, mask)
        dz1 = dh1 * (z1 > 0.0)
        dw1 = x.T @ (s @ dz1)
        return loss, [dw1, dw2]
    if arch == "sgc":
        (w,) = weights
        mask = _dropout_mask(rng, t_prop.shape, tc.dropout)
        td = _apply_mask(t_prop, mask)
        logits = td @ w
        loss, seed = _ce_loss_and_seed(logits, y0, tr)
        return loss, [td.T @ seed]
    # appnp
    w1, w2 = weights
    tau, depth = defaults["teleport"], defaults["prop_depth"]
    b1 = x @ w1
    h1 = np.maximum(b1, 0.0)
    mask = _dropout_mask(rng, h1.shape, tc.dropout)
    h1d = _apply_mask(h1, mask)
    hout = h1d @ w2
    z = hout
    for _ in range(depth):
        z = (1.0 - tau) * (s @ z) + tau * hout
    loss, seed = _ce_loss_and_seed(z, y0, tr)
    dhout = np.zeros_like(seed)
    tmp = seed
    for _ in range(depth):
        dhout += tau * tmp
        tmp = (1.0 - tau) * (s @ tmp)
    dhout += tmp
    dw2 = h1d.T @ dhout
    dh1 = _apply_mask(dhout @ w2.T, mask)
    db1 = dh1 * (b1 > 0.0)
    return loss, [x.T @ db1, dw2]


def _infer(arch, s, x, weights, defaults, t_prop):
    if arch == "gcn":
        w1, w2 = weights
        return _softmax_rows(s @ (np.maximum(s @ (x @ w1), 0.0) @ w2))
    if arch == "sgc":
        return _softmax_rows(t_prop @ weights[0])
    w1, w2 = weights
    tau, depth = defaults["teleport"], defaults["prop_depth"]
    hout = np.maximum(x @ w1, 0.0) @ w2
    z = hout
    for _ in range(depth):
        z = (1.0 - tau) * (s @ z) + tau * hout
    return _softmax_rows(z)


# ---------------------------------------------------------------------------
# checkpoints

def save_model(model, path):
    """Write an npz checkpoint; float64 payloads round-trip bit-exact."""
    arrays = {f"weight_{i}": np.asarray(w) for i, w in enumerate(model.weights)}
    meta = {
        "arch": model.arch,
        "prop_depth": model.prop_depth,
        "teleport": model.teleport,
        "num_weights": len(model.weights),
        "train_config": asdict(model.train_config) if model.train_config else None,
    }
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".npz")
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, __meta__=json.dumps(meta, sort_keys=True), **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path):
    with np.load(path) as npz:
        meta = json.loads(str(npz["__meta__"].item()))
        weights = []
        for i in range(meta["num_weights"]):
            w = npz[f"weight_{i}"]
            w.flags.writeable = False
            weights.append(w)
    tc = TrainConfig(**meta["train_config"]) if meta["train_config"] else None
    return GnnModel(
        arch=meta["arch"],
        weights=tuple(weights),
        prop_depth=meta["prop_depth"],
        teleport=meta["teleport"],
        train_config=tc,
    )
