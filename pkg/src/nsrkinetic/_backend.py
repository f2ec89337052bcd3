"""Tiny numpy/torch dispatch so tensor algebra runs on either array type."""
import numpy as np

try:
    import torch
except ImportError:  # pragma: no cover
    torch = None


def is_torch(a):
    return torch is not None and isinstance(a, torch.Tensor)


def concat(arrays, axis=-1):
    if any(is_torch(a) for a in arrays):
        ref = next(a for a in arrays if is_torch(a))
        return torch.cat([as_like(a, ref) for a in arrays], dim=axis)
    return np.concatenate(arrays, axis=axis)


def stack(arrays, axis=-1):
    if any(is_torch(a) for a in arrays):
        ref = next(a for a in arrays if is_torch(a))
        return torch.stack([as_like(a, ref) for a in arrays], dim=axis)
    return np.stack(arrays, axis=axis)


def einsum(expr, *ops):
    if any(is_torch(a) for a in ops):
        ref = next(a for a in ops if is_torch(a))
        return torch.einsum(expr, *[as_like(a, ref) for a in ops])
    return np.einsum(expr, *ops, optimize=True)


def as_like(a, ref):
    """Convert ``a`` to the array type (and dtype, device) of ``ref``."""
    if is_torch(ref):
        if is_torch(a):
            return a.to(dtype=ref.dtype, device=ref.device)
        a = np.asarray(a)
        if not a.flags.writeable:
            a = a.copy()
        return torch.as_tensor(a, dtype=ref.dtype, device=ref.device)
    return np.asarray(a)


def exp(a):
    return torch.exp(a) if is_torch(a) else np.exp(a)


def sqrt(a):
    return torch.sqrt(a) if is_torch(a) else np.sqrt(a)


def log1p(a):
    return torch.log1p(a) if is_torch(a) else np.log1p(a)


def zeros_like_shape(ref, shape):
    if is_torch(ref):
        return torch.zeros(shape, dtype=ref.dtype, device=ref.device)
    return np.zeros(shape, dtype=np.result_type(ref, np.float64))


def to_numpy(a):
    if is_torch(a):
        return a.detach().cpu().numpy()
    return np.asarray(a)
