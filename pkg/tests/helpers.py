"""Shared test helpers: central finite-difference oracle and the acceptance log."""

import torch

# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def fd_relative_error(fn, tensors, eps: float = 1e-6) -> float:
    """Max over ``tensors`` of ``|g_autograd - g_fd| / max(|g_autograd|, |g_fd|)`` (vector 2-norms).

    ``fn`` maps the (double precision) tensors to a scalar.
    """
    tensors = [t.detach().clone().requires_grad_(True) for t in tensors]
    out = fn(*tensors)
    analytic = torch.autograd.grad(out, tensors, allow_unused=True)
    worst = 0.0
    for i, t in enumerate(tensors):
        fd = torch.zeros_like(t)
        flat = t.detach().view(-1)
        for j in range(flat.numel()):
            args = [x.detach().clone() for x in tensors]
            a = args[i].view(-1)
            a[j] = flat[j] + eps
            up = fn(*args).item()
            a[j] = flat[j] - eps
            down = fn(*args).item()
            fd.view(-1)[j] = (up - down) / (2 * eps)
        g = analytic[i] if analytic[i] is not None else torch.zeros_like(t)
        scale = max(g.norm().item(), fd.norm().item(), 1e-12)
        worst = max(worst, (g - fd).norm().item() / scale)
    return worst


def module_fd_error(module: torch.nn.Module, loss_fn, eps: float = 1e-6) -> float:
    """Finite-difference check of ``loss_fn()`` over all parameters of ``module`` as one vector.

    Some parameters have an identically zero gradient (a key bias shifts every score equally),
    so the error is measured on the concatenated gradient rather than per tensor.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    loss_fn().backward()
    analytic, numeric = [], []
    for p in params:
        analytic.append(p.grad.detach().clone().view(-1))
        fd = torch.zeros(p.numel(), dtype=p.dtype)
        with torch.no_grad():
            flat = p.view(-1)
            for j in range(flat.numel()):
                old = flat[j].item()
                flat[j] = old + eps
                up = loss_fn().item()
                flat[j] = old - eps
                down = loss_fn().item()
                flat[j] = old
                fd[j] = (up - down) / (2 * eps)
        numeric.append(fd)
    g, fd = torch.cat(analytic), torch.cat(numeric)
    scale = max(g.norm().item(), fd.norm().item(), 1e-12)
    return (g - fd).norm().item() / scale
