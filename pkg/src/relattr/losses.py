"""Loss terms: least-squares adversarial, triplet matching, interpolation
regression, cycle/self reconstruction, orthogonal regularization, and a
one-centered gradient penalty.

Conventions: discriminator score maps are reduced to one scalar per image
by spatial mean before entering any quadratic form; batch reduction is the
mean of per-image terms. Every function returns differentiable 0-dim
tensors when fed tensors.
"""
from __future__ import annotations

import json

import numpy as np
import torch
from torch import nn

from .data import TripletBatch
from .networks import Discriminator, Generator, image_to_tensor
from .types import ImageBatch, InterpolationCoefficient, RangeError, RelativeAttributes

LOSS_TERMS = (
    "real_D", "real_G", "match_D", "match_G", "interp_D", "interp_G",
    "cycle", "self", "ortho", "gp_real", "gp_match",
)
LOSS_KEYS = LOSS_TERMS + ("total_D", "total_G")

DEFAULT_WEIGHTS = {
    "weight_match": 1.0,
    "weight_interp": 10.0,
    "weight_cycle": 10.0,
    "weight_self": 10.0,
    "weight_ortho": 1e-6,
    "weight_gp": 10.0,
}


class NonFiniteLossError(RuntimeError):
    """A loss term became NaN or infinite; names the offending term."""

    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is non-finite: {value}")
        self.term = term


def _scalar(value) -> float:
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


def _check_finite(term: str, value):
    v = _scalar(value)
    if not np.isfinite(v):
        raise NonFiniteLossError(term, v)
    return value


class LossReport(dict):
    """Flat term -> scalar map with the full key set; JSON-serializable.

    Takes the mapping positionally because "self" is one of the keys.
    """

    def __init__(self, values):
        missing = set(LOSS_KEYS) - set(values)
        extra = set(values) - set(LOSS_KEYS)
        if missing or extra:
            raise ValueError(f"bad LossReport keys: missing={sorted(missing)} extra={sorted(extra)}")
        floats = {k: float(values[k]) for k in LOSS_KEYS}
        for k, v in floats.items():
            if not np.isfinite(v):
                raise NonFiniteLossError(k, v)
        super().__init__(floats)

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    def to_json(self, **extra) -> str:
        record = {k: self[k] for k in LOSS_KEYS}
        record.update(extra)
        return json.dumps(record)


def reduce_scores(scores: torch.Tensor) -> torch.Tensor:
    """Spatial (and channel) mean: score map -> one scalar per image."""
    if scores.dim() <= 1:
        return scores
    return scores.mean(dim=tuple(range(1, scores.dim())))


def _mean_sq(t, shift=0.0):
    if isinstance(t, torch.Tensor):
        return ((t - shift) ** 2).mean()
    return float(np.mean((np.asarray(t, dtype=np.float64) - shift) ** 2))


def real_losses(d_scores_real, d_scores_fake):
    """Least-squares adversarial pair: D pulls real to 1 / fake to 0, G pulls fake to 1.

    Score maps are averaged to one scalar per image before squaring, the
    same reduction the matching head uses.
    """
    s_real = reduce_scores(d_scores_real)
    s_fake = reduce_scores(d_scores_fake)
    _check_finite("real_D", _mean_sq(s_real))
    _check_finite("real_D", _mean_sq(s_fake))
    loss_d = _mean_sq(s_real, 1.0) + _mean_sq(s_fake, 0.0)
    loss_g = _mean_sq(s_fake, 1.0)
    return loss_d, loss_g


def match_losses_from_scores(s_real, s_fake, s_wrong):
    """Matching-loss arithmetic given already-computed per-image scores.

    ``s_wrong`` is the sequence of the four wrong-triplet scores. The caller
    controls which graph each score carries (detached fake for the D side).
    """
    if len(s_wrong) != 4:
        raise ValueError(f"expected exactly 4 wrong-triplet scores, got {len(s_wrong)}")
    loss_d = _mean_sq(s_real, 1.0) + _mean_sq(s_fake, 0.0)
    for s in s_wrong:
        loss_d = loss_d + _mean_sq(s, 0.0)
    loss_g = _mean_sq(s_fake, 1.0)
    return loss_d, loss_g


def _labels_to_tensor(arr, dtype, device):
    return torch.as_tensor(np.asarray(arr, dtype=np.float64), dtype=dtype, device=device)


def match_losses(generator: Generator, disc: Discriminator, triplet: TripletBatch):
    """Reference matching loss on one triplet batch.

    Builds v12 = a2-a1, v32 = a2-a3, v13 = a3-a1 and scores the one real
    triplet, the generated triplet, and the four mismatched ones. The
    generator gradient reaches only the generated-triplet G score.
    """
    p = next(disc.parameters())
    a1, a2, a3 = triplet.label_arrays()
    v12 = _labels_to_tensor(a2 - a1, p.dtype, p.device)
    v32 = _labels_to_tensor(a2 - a3, p.dtype, p.device)
    v13 = _labels_to_tensor(a3 - a1, p.dtype, p.device)
    x1 = image_to_tensor(triplet.x1, p.dtype, p.device)
    x2 = image_to_tensor(triplet.x2, p.dtype, p.device)
    x3 = image_to_tensor(triplet.x3, p.dtype, p.device)

    fake = generator(x1, v12)
    b = x1.shape[0]
    feats = disc.features(torch.cat([x1, x2, x3, fake.detach()], dim=0))
    f1, f2, f3, f_fake_d = feats[:b], feats[b:2 * b], feats[2 * b:3 * b], feats[3 * b:]

    s_real = reduce_scores(disc.match_score(f1, v12, f2))
    s_fake_d = reduce_scores(disc.match_score(f1, v12, f_fake_d))
    s_wrong = (
        reduce_scores(disc.match_score(f3, v12, f2)),
        reduce_scores(disc.match_score(f1, v32, f2)),
        reduce_scores(disc.match_score(f1, v13, f2)),
        reduce_scores(disc.match_score(f1, v12, f3)),
    )
    loss_d, _ = match_losses_from_scores(s_real, s_fake_d, s_wrong)

    s_fake_g = reduce_scores(disc.match_score(f1, v12, disc.features(fake)))
    _, loss_g = match_losses_from_scores(s_real.detach(), s_fake_g, [s.detach() for s in s_wrong])
    _check_finite("match_D", loss_d)
    _check_finite("match_G", loss_g)
    return loss_d, loss_g


def _alpha_rows(alpha, batch_size: int, dtype, device) -> torch.Tensor:
    if isinstance(alpha, InterpolationCoefficient):
        arr = np.full(batch_size, alpha.alpha, dtype=np.float64)
    else:
        arr = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (batch_size,)).copy()
    if (arr < 0).any() or (arr > 1).any():
        raise RangeError(f"interpolation coefficients must lie in [0, 1], got {arr}")
    return torch.as_tensor(arr, dtype=dtype, device=device)


def interp_losses(generator: Generator, disc: Discriminator, x, v, alpha):
    """Interpolation-degree regression loss.

    Per row: the discriminator pushes the endpoint image's score to 0 and
    the in-between image's score to min(alpha, 1-alpha); the generator
    pushes the in-between score to 0. ``alpha`` may be a scalar coefficient
    or one value per batch row.
    """
    p = next(disc.parameters())
    xt = x if isinstance(x, torch.Tensor) else image_to_tensor(x, p.dtype, p.device)
    b = xt.shape[0]
    if isinstance(v, RelativeAttributes):
        vt = _labels_to_tensor(np.tile(v.values, (b, 1)), p.dtype, p.device)
    elif isinstance(v, torch.Tensor):
        vt = v
    else:
        vt = _labels_to_tensor(v, p.dtype, p.device)
    a = _alpha_rows(alpha, b, p.dtype, p.device)

    zero = generator(xt, torch.zeros_like(vt))
    full = generator(xt, vt)
    mid = generator(xt, a.view(b, 1) * vt)

    low = (a <= 0.5).view(b, 1, 1, 1)
    ref = torch.where(low, zero, full).detach()
    degree = torch.minimum(a, 1.0 - a)

    y_ref = disc.interp_score(disc.features(ref))
    y_mid_d = disc.interp_score(disc.features(mid.detach()))
    loss_d = (y_ref ** 2).mean() + ((y_mid_d - degree) ** 2).mean()

    y_mid_g = disc.interp_score(disc.features(mid))
    loss_g = (y_mid_g ** 2).mean()
    _check_finite("interp_D", loss_d)
    _check_finite("interp_G", loss_g)
    return loss_d, loss_g


def _callable_forward(generator, xt: torch.Tensor, vt: torch.Tensor) -> torch.Tensor:
    return generator(xt, vt)


def _image_and_v(generator, x, v):
    if isinstance(generator, nn.Module):
        p = next(generator.parameters())
        dtype, device = p.dtype, p.device
    elif isinstance(x, torch.Tensor):
        dtype, device = x.dtype, x.device
    else:
        dtype, device = torch.float32, None
    xt = x if isinstance(x, torch.Tensor) else image_to_tensor(x, dtype, device)
    if v is None:
        return xt, None
    if isinstance(v, RelativeAttributes):
        vt = _labels_to_tensor(np.tile(v.values, (xt.shape[0], 1)), dtype, device)
    elif isinstance(v, torch.Tensor):
        vt = v
    else:
        vt = _labels_to_tensor(v, dtype, device)
    return xt, vt


def cycle_loss(generator, x, v):
    """L1 distance between G(G(x, v), -v) and x."""
    xt, vt = _image_and_v(generator, x, v)
    there = _callable_forward(generator, xt, vt)
    back = _callable_forward(generator, there, -vt)
    return _check_finite("cycle", (back - xt).abs().mean())


def self_loss(generator, x, n_attributes: int | None = None):
    """L1 distance between G(x, 0) and x."""
    xt, _ = _image_and_v(generator, x, None)
    if n_attributes is None:
        n_attributes = generator.config.n_attributes
    zeros = torch.zeros(xt.shape[0], n_attributes, dtype=xt.dtype, device=xt.device)
    out = _callable_forward(generator, xt, zeros)
    return _check_finite("self", (out - xt).abs().mean())


def ortho_reg(source):
    """Off-diagonal Gram penalty over conv kernels, rows = output units.

    Accepts a module (all conv/deconv kernels are penalized; biases and
    normalization parameters are not) or an iterable of weight tensors.
    """
    if isinstance(source, nn.Module):
        weights = [
            m.weight
            for m in source.modules()
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d))
        ]
    else:
        weights = list(source)
    if not weights:
        return torch.zeros(())
    total = None
    for w in weights:
        m = w.reshape(w.shape[0], -1)
        gram = m @ m.t()
        off = gram - torch.diag_embed(torch.diagonal(gram))
        term = (off ** 2).sum()
        total = term if total is None else total + term
    return _check_finite("ortho", total)


def gradient_penalty(score_fn, real: torch.Tensor, fake: torch.Tensor, u) -> torch.Tensor:
    """One-centered gradient penalty on convex combinations of real and fake.

    ``u`` holds one mixing coefficient per row; ``score_fn`` maps an image
    tensor to per-image scalars (maps are reduced by spatial mean).
    """
    if real.shape != fake.shape:
        raise ValueError(f"real/fake shapes differ: {tuple(real.shape)} vs {tuple(fake.shape)}")
    ut = torch.as_tensor(np.asarray(u, dtype=np.float64), dtype=real.dtype, device=real.device)
    ut = ut.view(-1, 1, 1, 1)
    anchor = (ut * real.detach() + (1.0 - ut) * fake.detach()).requires_grad_(True)
    scores = reduce_scores(score_fn(anchor))
    grads = torch.autograd.grad(scores.sum(), anchor, create_graph=True)[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return _check_finite("gradient_penalty", ((norms - 1.0) ** 2).mean())


def total_losses(terms: dict, *, weight_match=1.0, weight_interp=10.0,
                 weight_cycle=10.0, weight_self=10.0, weight_ortho=1e-6,
                 weight_gp=10.0) -> dict:
    """Weighted sums for the two players; returns terms plus total_D/total_G."""
    missing = set(LOSS_TERMS) - set(terms)
    if missing:
        raise ValueError(f"missing loss terms: {sorted(missing)}")
    out = dict(terms)
    out["total_D"] = (
        terms["real_D"]
        + weight_match * terms["match_D"]
        + weight_interp * terms["interp_D"]
        + weight_gp * (terms["gp_real"] + terms["gp_match"])
    )
    out["total_G"] = (
        terms["real_G"]
        + weight_match * terms["match_G"]
        + weight_interp * terms["interp_G"]
        + weight_cycle * terms["cycle"]
        + weight_self * terms["self"]
        + weight_ortho * terms["ortho"]
    )
    return out
