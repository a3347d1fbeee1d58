import pytest
import torch

from rotaseg.backbone import BackboneSpec
from rotaseg.decoder import DecoderConfig
from rotaseg.pipeline import ModelConfig
from rotaseg.refine import RefineConfig
from rotaseg.rotsim import OrientationConfig


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def tiny_model_config(d_f=32, patch=8, embed_dim=16, orientations=(0, 1, 2, 3),
                      repeats=1, num_stages=2, window=8, heads=4, backbone="mock"):
    return ModelConfig(
        backbone=backbone,
        backbone_spec=BackboneSpec(embed_dim=embed_dim, patch_size=patch),
        orientations=OrientationConfig(tuple(orientations)),
        refine=RefineConfig(repeats=repeats, window_size=window, heads=heads, d_f=d_f),
        decoder=DecoderConfig(num_stages=num_stages, d_f=d_f),
        d_f=d_f,
    )


def finite_difference_grads(loss_fn, params, eps=1e-5):
    """Central-difference gradient of loss_fn() w.r.t. each parameter tensor."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = loss_fn().item()
                flat[i] = orig - eps
                lo = loss_fn().item()
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * eps)
            grads.append(g)
    return grads


def max_relative_grad_error(loss_fn, params, eps=1e-5):
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    numeric = finite_difference_grads(loss_fn, params, eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = torch.maximum(a.abs().maximum(n.abs()), torch.tensor(1e-4, dtype=a.dtype))
        worst = max(worst, ((a - n).abs() / denom).max().item())
    return worst
