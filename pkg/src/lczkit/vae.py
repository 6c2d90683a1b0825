"""Stage 1: variational autoencoder compressing raster stacks to latent codes.

Two interchangeable architectures: "mlp" (flatten, two hidden layers) for
desk-scale grids, and "patch" (two strided patchwise-affine layers, then a
flatten and an affine head) for larger grids. Both expose the same
encode/decode contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DivergenceError, UsageError
from .rasterizer import RasterStack


@dataclass
class KldSchedule:
    """Linear warm-up of the KL weight: 0 to lambda_max over ramp_epochs."""

    ramp_epochs: int = 50
    lambda_max: float = 1e-5


def kld_weight(schedule: KldSchedule, epoch: int) -> float:
    if epoch < 0:
        raise UsageError("epoch must be >= 0")
    if schedule.ramp_epochs <= 0:
        return schedule.lambda_max
    return schedule.lambda_max * min(1.0, epoch / schedule.ramp_epochs)


@dataclass
class VaeConfig:
    latent_dim: int = 64
    hidden: int = 256          # mlp hidden width
    arch: str = "mlp"          # "mlp" | "patch"
    patch_features: tuple = (32, 64)
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    schedule: KldSchedule = field(default_factory=KldSchedule)
    seed: int = 0


@dataclass
class VaeModel:
    params: dict               # name -> Tensor, insertion-ordered
    input_shape: tuple         # (C, H, W)
    latent_dim: int
    arch: str
    hidden: int
    patch_features: tuple = (32, 64)

    PATCH_SIZES = (4, 2)

    def param_list(self):
        return list(self.params.values())


def _he(rng, fan_in, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def init_vae(input_shape, config: VaeConfig, rng) -> VaeModel:
    c, h, w = input_shape
    n, hid = config.latent_dim, config.hidden
    params = {}
    if config.arch == "mlp":
        d = c * h * w
        params["enc/W1"] = Tensor(_he(rng, d, (d, hid)), requires_grad=True)
        params["enc/b1"] = Tensor(np.zeros(hid), requires_grad=True)
        params["enc/W2"] = Tensor(_he(rng, hid, (hid, hid)), requires_grad=True)
        params["enc/b2"] = Tensor(np.zeros(hid), requires_grad=True)
        params["enc/Wmu"] = Tensor(_he(rng, hid, (hid, n)) * 0.5, requires_grad=True)
        params["enc/bmu"] = Tensor(np.zeros(n), requires_grad=True)
        params["enc/Wlv"] = Tensor(_he(rng, hid, (hid, n)) * 0.1, requires_grad=True)
        params["enc/blv"] = Tensor(np.zeros(n), requires_grad=True)
        params["dec/W1"] = Tensor(_he(rng, n, (n, hid)), requires_grad=True)
        params["dec/b1"] = Tensor(np.zeros(hid), requires_grad=True)
        params["dec/W2"] = Tensor(_he(rng, hid, (hid, hid)), requires_grad=True)
        params["dec/b2"] = Tensor(np.zeros(hid), requires_grad=True)
        params["dec/W3"] = Tensor(_he(rng, hid, (hid, d)) * 0.5, requires_grad=True)
        params["dec/b3"] = Tensor(np.zeros(d), requires_grad=True)
    elif config.arch == "patch":
        p1, p2 = VaeModel.PATCH_SIZES
        if h % (p1 * p2) or w % (p1 * p2):
            raise UsageError(f"patch arch needs H and W divisible by {p1 * p2}, got {h}x{w}")
        f1, f2 = config.patch_features
        grid = (h // (p1 * p2)) * (w // (p1 * p2))
        params["enc/P1"] = Tensor(_he(rng, c * p1 * p1, (p1 * p1 * c, f1)), requires_grad=True)
        params["enc/pb1"] = Tensor(np.zeros(f1), requires_grad=True)
        params["enc/P2"] = Tensor(_he(rng, f1 * p2 * p2, (p2 * p2 * f1, f2)), requires_grad=True)
        params["enc/pb2"] = Tensor(np.zeros(f2), requires_grad=True)
        params["enc/Wmu"] = Tensor(_he(rng, grid * f2, (grid * f2, n)) * 0.5, requires_grad=True)
        params["enc/bmu"] = Tensor(np.zeros(n), requires_grad=True)
        params["enc/Wlv"] = Tensor(_he(rng, grid * f2, (grid * f2, n)) * 0.1, requires_grad=True)
        params["enc/blv"] = Tensor(np.zeros(n), requires_grad=True)
        params["dec/W"] = Tensor(_he(rng, n, (n, grid * f2)), requires_grad=True)
        params["dec/b"] = Tensor(np.zeros(grid * f2), requires_grad=True)
        params["dec/U2"] = Tensor(_he(rng, f2, (f2, p2 * p2 * f1)), requires_grad=True)
        params["dec/ub2"] = Tensor(np.zeros(p2 * p2 * f1), requires_grad=True)
        params["dec/U1"] = Tensor(_he(rng, f1, (f1, p1 * p1 * c)) * 0.5, requires_grad=True)
        params["dec/ub1"] = Tensor(np.zeros(p1 * p1 * c), requires_grad=True)
    else:
        raise UsageError(f"unknown vae arch {config.arch!r}")
    return VaeModel(params, tuple(input_shape), n, config.arch, hid, tuple(config.patch_features))


def _patchify(x: Tensor, p: int, channels_first: bool) -> Tensor:
    """(B,C,H,W) or (B,H,W,F) -> (B*Hp*Wp, p*p*C) rows of flattened patches."""
    if channels_first:
        b, c, h, w = x.shape
        x = ad.reshape(x, (b, c, h // p, p, w // p, p))
        x = ad.transpose(x, (0, 2, 4, 3, 5, 1))  # (B,Hp,Wp,p,p,C)
        return ad.reshape(x, (b * (h // p) * (w // p), p * p * c))
    b, h, w, f = x.shape
    x = ad.reshape(x, (b, h // p, p, w // p, p, f))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))  # (B,Hp,Wp,p,p,F)
    return ad.reshape(x, (b * (h // p) * (w // p), p * p * f))


def _unpatchify(rows: Tensor, b, hp, wp, p, f, channels_first: bool) -> Tensor:
    """Inverse of _patchify for rows shaped (B*hp*wp, p*p*f)."""
    x = ad.reshape(rows, (b, hp, wp, p, p, f))
    if channels_first:
        x = ad.transpose(x, tuple(np.argsort((0, 2, 4, 3, 5, 1))))
        return ad.reshape(x, (b, f, hp * p, wp * p))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b, hp * p, wp * p, f))


def encode_graph(model: VaeModel, x: Tensor):
    """Build (mu, logvar) graph from a (B, C, H, W) input tensor."""
    b = x.shape[0]
    c, h, w = model.input_shape
    pr = model.params
    if model.arch == "mlp":
        flat = ad.reshape(x, (b, c * h * w))
        h1 = ad.relu(ad.affine(flat, pr["enc/W1"], pr["enc/b1"]))
        h2 = ad.relu(ad.affine(h1, pr["enc/W2"], pr["enc/b2"]))
    else:
        p1, p2 = VaeModel.PATCH_SIZES
        f1, f2 = model.patch_features
        rows = _patchify(x, p1, channels_first=True)
        l1 = ad.relu(ad.affine(rows, pr["enc/P1"], pr["enc/pb1"]))
        grid1 = ad.reshape(l1, (b, h // p1, w // p1, f1))
        rows2 = _patchify(grid1, p2, channels_first=False)
        l2 = ad.relu(ad.affine(rows2, pr["enc/P2"], pr["enc/pb2"]))
        h2 = ad.reshape(l2, (b, (h // (p1 * p2)) * (w // (p1 * p2)) * f2))
    mu = ad.affine(h2, pr["enc/Wmu"], pr["enc/bmu"])
    logvar = ad.affine(h2, pr["enc/Wlv"], pr["enc/blv"])
    return mu, logvar


def decode_graph(model: VaeModel, code: Tensor) -> Tensor:
    """Build the (B, C, H, W) reconstruction graph from (B, n) codes."""
    b = code.shape[0]
    c, h, w = model.input_shape
    pr = model.params
    if model.arch == "mlp":
        h1 = ad.relu(ad.affine(code, pr["dec/W1"], pr["dec/b1"]))
        h2 = ad.relu(ad.affine(h1, pr["dec/W2"], pr["dec/b2"]))
        out = ad.affine(h2, pr["dec/W3"], pr["dec/b3"])
        return ad.reshape(out, (b, c, h, w))
    p1, p2 = VaeModel.PATCH_SIZES
    f1, f2 = model.patch_features
    h2g, w2g = h // (p1 * p2), w // (p1 * p2)
    base = ad.relu(ad.affine(code, pr["dec/W"], pr["dec/b"]))
    rows2 = ad.reshape(base, (b * h2g * w2g, f2))
    up2 = ad.relu(ad.affine(rows2, pr["dec/U2"], pr["dec/ub2"]))
    grid1 = _unpatchify(up2, b, h2g, w2g, p2, f1, channels_first=False)
    rows1 = ad.reshape(grid1, (b * (h // p1) * (w // p1), f1))
    up1 = ad.affine(rows1, pr["dec/U1"], pr["dec/ub1"])
    return _unpatchify(up1, b, h // p1, w // p1, p1, c, channels_first=True)


def _as_batch_array(s) -> np.ndarray:
    if isinstance(s, RasterStack):
        s = s.channels
    arr = np.asarray(s, dtype=float)
    if arr.ndim == 3:
        arr = arr[None]
    return arr


def encode(model: VaeModel, s):
    """Encode one normalized stack; returns (mu, logvar) as n-vectors."""
    arr = _as_batch_array(s)
    if arr.shape[1:] != model.input_shape:
        raise UsageError(f"encode: expected shape {model.input_shape}, got {arr.shape[1:]}")
    mu, logvar = encode_graph(model, Tensor(arr))
    if not (np.all(np.isfinite(mu.value)) and np.all(np.isfinite(logvar.value))):
        raise DivergenceError("encoder produced non-finite outputs")
    if arr.shape[0] == 1:
        return mu.value[0].copy(), logvar.value[0].copy()
    return mu.value.copy(), logvar.value.copy()


def encode_mean(model: VaeModel, s) -> np.ndarray:
    return encode(model, s)[0]


def reparameterize(mu, logvar, epsilon) -> np.ndarray:
    """c = mu + exp(logvar / 2) * epsilon."""
    mu, logvar, epsilon = (np.asarray(a, dtype=float) for a in (mu, logvar, epsilon))
    if not (mu.shape == logvar.shape == epsilon.shape):
        raise UsageError("reparameterize: shape mismatch")
    return mu + np.exp(0.5 * logvar) * epsilon


def decode(model: VaeModel, code) -> np.ndarray:
    """Decode a latent n-vector (or (B, n) batch) to stack-shaped output."""
    arr = np.asarray(code, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None]
    if arr.shape[1] != model.latent_dim:
        raise UsageError(f"decode: expected latent dim {model.latent_dim}, got {arr.shape[1]}")
    out = decode_graph(model, Tensor(arr)).value
    return out[0].copy() if single else out.copy()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))


def elbo_loss(s, s_hat, mu, logvar, lam) -> Tensor:
    """Mean squared reconstruction error plus lam * KLD.

    KLD = -1/2 sum_i (1 + logvar_i - mu_i^2 - exp(logvar_i)), summed over
    latent dims and averaged over the batch (a lone vector counts as a
    batch of one).
    """
    if lam < 0:
        raise UsageError("lambda must be >= 0")
    s, s_hat, mu, logvar = _as_tensor(s), _as_tensor(s_hat), _as_tensor(mu), _as_tensor(logvar)
    rec = ad.mean_all(ad.square(ad.sub(s_hat, s)))
    inner = ad.sub(ad.sub(ad.shift(logvar, 1.0), ad.square(mu)), ad.exp(logvar))
    batch = mu.shape[0] if mu.value.ndim == 2 else 1
    kld = ad.scale(ad.sum_all(inner), -0.5 / batch)
    return ad.add(rec, ad.scale(kld, lam))


def train_vae(corpus, config: VaeConfig):
    """Train on a corpus of normalized stacks; returns (model, loss_history).

    Seed-deterministic: initialization, shuffling, and reparameterization
    noise all derive from config.seed.
    """
    data = np.stack([_as_batch_array(s)[0] for s in corpus]) if len(corpus) else None
    if data is None or data.shape[0] == 0:
        raise UsageError("train_vae: empty corpus")
    n_samples = data.shape[0]
    rng = np.random.default_rng(config.seed)
    model = init_vae(data.shape[1:], config, rng)
    opt = ad.Adam(model.param_list(), config.lr)
    history = []
    for epoch in range(config.epochs):
        lam = kld_weight(config.schedule, epoch)
        perm = rng.permutation(n_samples)
        total, seen = 0.0, 0
        for start in range(0, n_samples, config.batch_size):
            idx = perm[start:start + config.batch_size]
            x = Tensor(data[idx])
            eps = rng.standard_normal((len(idx), config.latent_dim))
            mu, logvar = encode_graph(model, x)
            std = ad.exp(ad.scale(logvar, 0.5))
            code = ad.add(mu, ad.mul(std, Tensor(eps)))
            s_hat = decode_graph(model, code)
            loss = elbo_loss(x, s_hat, mu, logvar, lam)
            if not np.isfinite(loss.value):
                raise DivergenceError("vae loss non-finite", epoch=epoch)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            total += float(loss.value) * len(idx)
            seen += len(idx)
        history.append(total / seen)
    return model, history


def reconstruction_loss(model: VaeModel, stacks) -> float:
    """Mean per-cell MSE of decode(encode_mean(s)) over a corpus."""
    data = np.stack([_as_batch_array(s)[0] for s in stacks])
    mu, _ = encode_graph(model, Tensor(data))
    s_hat = decode_graph(model, Tensor(mu.value))
    return float(np.mean((s_hat.value - data) ** 2))


_ARCH_CODES = {"mlp": 0, "patch": 1}


def vae_tensors(model: VaeModel):
    meta = np.array(
        [*model.input_shape, model.latent_dim, _ARCH_CODES[model.arch],
         model.hidden, *model.patch_features]
    )
    tensors = [("vae/meta", meta)]
    tensors += [(f"vae/{name}", t.value) for name, t in model.params.items()]
    return tensors


def vae_from_tensors(tensors) -> VaeModel:
    by_name = dict(tensors)
    meta = np.asarray(by_name["vae/meta"], dtype=float)
    c, h, w, n, arch_code, hidden, f1, f2 = (int(round(v)) for v in meta)
    arch = {v: k for k, v in _ARCH_CODES.items()}[arch_code]
    config = VaeConfig(latent_dim=n, hidden=hidden, arch=arch, patch_features=(f1, f2))
    model = init_vae((c, h, w), config, np.random.default_rng(0))
    for name, tensor in model.params.items():
        key = f"vae/{name}"
        if key not in by_name:
            raise UsageError(f"missing tensor {key}")
        tensor.value = np.asarray(by_name[key], dtype=float).reshape(tensor.shape)
    return model
