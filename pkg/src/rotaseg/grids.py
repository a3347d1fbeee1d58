"""Grid primitives: quarter-turn rotation, bilinear resize, cosine similarity.

Layout convention throughout the package: spatial axes come first,
channel/category axes trail. An image is (H, W, 3), a feature grid is
(h, w, d), a semantic map stack is (h, w, N_C, d_F). Batched variants
put the batch axis in front and pass ``spatial_dims=(1, 2)``.
"""

import torch
import torch.nn.functional as F

COS_EPS = 1e-8


def check_square(grid, spatial_dims=(0, 1)):
    h, w = grid.shape[spatial_dims[0]], grid.shape[spatial_dims[1]]
    if h != w:
        raise ValueError(f"rotation needs a square spatial grid, got {h}x{w}")


def rotate_grid(grid, turns, spatial_dims=(0, 1)):
    """Rotate the spatial axes counter-clockwise by 90 deg * turns.

    Pure permutation of entries (no interpolation); trailing channel or
    category axes are untouched. The grid must be spatially square so the
    shape is preserved for any number of turns.
    """
    check_square(grid, spatial_dims)
    turns = turns % 4
    if turns == 0:
        return grid.clone() if isinstance(grid, torch.Tensor) else grid
    return torch.rot90(grid, k=turns, dims=spatial_dims)


def inverse_rotation(turns):
    """The quarter-turn count that undoes ``turns``: (4 - turns) mod 4."""
    if turns not in (0, 1, 2, 3):
        raise ValueError(f"turns must be in 0..3, got {turns}")
    return (4 - turns) % 4


def cosine_similarity(a, b, eps=COS_EPS):
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Norms are floored at ``eps`` so zero vectors degrade to similarity ~0
    instead of dividing by zero.
    """
    a = torch.as_tensor(a, dtype=torch.get_default_dtype()) if not isinstance(a, torch.Tensor) else a
    b = torch.as_tensor(b, dtype=a.dtype) if not isinstance(b, torch.Tensor) else b
    na = torch.clamp(a.norm(), min=eps)
    nb = torch.clamp(b.norm(), min=eps)
    return torch.clamp((a * b).sum() / (na * nb), -1.0, 1.0)


def cosine_map(tokens, vectors, eps=COS_EPS):
    """Batched cosine similarity: tokens (..., d) x vectors (N, d) -> (..., N)."""
    tn = torch.clamp(tokens.norm(dim=-1, keepdim=True), min=eps)
    vn = torch.clamp(vectors.norm(dim=-1, keepdim=True), min=eps)
    sims = (tokens / tn) @ (vectors / vn).transpose(0, 1)
    return torch.clamp(sims, -1.0, 1.0)


def argmax_lowest(t, dim=-1):
    """Argmax with ties broken toward the lowest index (documented tie rule)."""
    n = t.shape[dim]
    maxv = t.max(dim=dim, keepdim=True).values
    idx = torch.arange(n, device=t.device)
    shape = [1] * t.dim()
    shape[dim] = n
    idx = idx.view(shape).expand_as(t)
    return torch.where(t == maxv, idx, n).min(dim=dim).values


def bilinear_resize(grid, out_h, out_w, spatial_dims=(0, 1)):
    """Bilinear resize of the spatial axes (align_corners=False semantics).

    Identity when the size already matches. All non-spatial axes are
    treated as channels and resized independently.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    d0, d1 = spatial_dims
    if grid.shape[d0] == out_h and grid.shape[d1] == out_w:
        return grid.clone()
    # move spatial axes to the end, flatten the rest into a channel axis
    perm = [i for i in range(grid.dim()) if i not in (d0, d1)] + [d0, d1]
    moved = grid.permute(perm)
    lead = moved.shape[:-2]
    flat = moved.reshape(1, -1, grid.shape[d0], grid.shape[d1])
    out = F.interpolate(flat, size=(out_h, out_w), mode="bilinear", align_corners=False)
    out = out.reshape(*lead, out_h, out_w)
    # invert the permutation
    inv = [0] * grid.dim()
    for pos, axis in enumerate(perm):
        inv[axis] = pos
    return out.permute(inv)
