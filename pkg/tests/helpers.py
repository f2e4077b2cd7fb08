"""Shared test fixtures: tiny models, random bundles and a finite-difference oracle."""

import torch
from torch.func import functional_call, vmap

from motionlatent.conditions import ConditionBundle
from motionlatent.denoiser import ArchConfig, init_params
from motionlatent.emotion import wire_stage2

TINY = ArchConfig(num_keypoints=2, feature_dim=4, width=16, blocks=2, heads=2, kernel=3, window=4, prev=2,
                  emotion_blocks=2, num_emotions=3)


def tiny_model(seed=0, randomize=True, stage2=True, arch=TINY):
    model = init_params(arch, seed)
    if randomize:
        g = torch.Generator().manual_seed(seed + 1000)
        with torch.no_grad():
            for p in model.parameters():
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.3)
    wire_stage2(model, stage2)
    return model


def random_bundle(arch=TINY, B=3, seed=0, emotion=True, prev=True):
    g = torch.Generator().manual_seed(seed)
    r = lambda *s: torch.randn(*s, generator=g, dtype=torch.float64)
    prev_mask = torch.ones(B, arch.prev, dtype=torch.bool)
    prev_mask[0, 0] = False
    if B > 2:
        prev_mask[2] = False
    return ConditionBundle(
        identity=r(B, arch.id_dim), audio=r(B, arch.window, arch.feature_dim),
        audio_mask=torch.tensor([True, False] + [True] * (B - 2)),
        emotion=torch.arange(B) % arch.num_emotions if emotion else None,
        emotion_mask=torch.tensor([True, True] + [False] * (B - 2)) if emotion else None,
        prev=r(B, arch.prev, arch.motion_dim) if prev else None, prev_mask=prev_mask if prev else None)


def fixed_loss_inputs(arch=TINY, B=3, seed=0):
    g = torch.Generator().manual_seed(seed + 7)
    m_t = torch.randn(B, arch.window, arch.motion_dim, generator=g, dtype=torch.float64)
    eps = torch.randn(B, arch.window, arch.motion_dim, generator=g, dtype=torch.float64)
    t = torch.randint(1, 1001, (B,), generator=g)
    return m_t, t, eps


def finite_difference_grads(model, loss_of_output, inputs, h=1e-5, chunk=512):
    """Central differences of ``loss_of_output(model(*inputs))`` for every parameter entry."""
    base = {n: p.detach().clone() for n, p in model.named_parameters()}

    def loss(params):
        return loss_of_output(functional_call(model, params, inputs))

    grads = {}
    for name, p in base.items():
        flat = p.reshape(-1)
        out = torch.empty_like(flat)
        for start in range(0, flat.numel(), chunk):
            idx = torch.arange(start, min(start + chunk, flat.numel()))
            onehot = torch.zeros(len(idx), flat.numel(), dtype=p.dtype)
            onehot[torch.arange(len(idx)), idx] = h

            def one(delta):
                return loss({**base, name: (flat + delta).reshape(p.shape)})

            with torch.no_grad():
                plus = vmap(one)(onehot)
                minus = vmap(one)(-onehot)
            out[idx] = (plus - minus) / (2 * h)
        grads[name] = out.reshape(p.shape)
    return grads


def relative_error(a, n):
    scale = max(float(a.abs().max()), float(n.abs().max()))
    return 0.0 if scale == 0 else float((a - n).abs().max()) / scale
