"""Shared numerical helpers for the test suite."""
import torch


def directional_gradcheck(net, x, eps=1e-6, seed=0):
    """Compare autograd with central differences along random directions.

    One direction per parameter tensor plus one joint direction.  Returns
    ``(worst_relative_error, n_checked)``; directions whose derivative is
    numerically zero are skipped (e.g. conv biases feeding a norm).
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        probe = torch.randn(net(x).shape, generator=gen, dtype=x.dtype)

    def loss():
        return (net(x) * probe).sum()

    params = [p for p in net.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss(), params)
    dirs = []
    for i, p in enumerate(params):
        d = [torch.zeros_like(q) for q in params]
        d[i] = torch.randn(p.shape, generator=gen, dtype=p.dtype)
        dirs.append(d)
    dirs.append([torch.randn(q.shape, generator=gen, dtype=q.dtype) for q in params])

    worst, checked = 0.0, 0
    for d in dirs:
        norm = torch.sqrt(sum((t * t).sum() for t in d))
        d = [t / norm for t in d]
        analytic = float(sum((g * t).sum() for g, t in zip(grads, d)))
        with torch.no_grad():
            for p, t in zip(params, d):
                p.add_(t, alpha=eps)
            up = float(loss())
            for p, t in zip(params, d):
                p.add_(t, alpha=-2 * eps)
            down = float(loss())
            for p, t in zip(params, d):
                p.add_(t, alpha=eps)
        numeric = (up - down) / (2 * eps)
        scale = max(abs(analytic), abs(numeric))
        if scale < 1e-8:
            continue
        worst = max(worst, abs(analytic - numeric) / scale)
        checked += 1
    return worst, checked
