"""Central finite-difference gradient checks in float64."""

import torch


def rel_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_input_grad(fn, inputs, h=1e-4, n_probe=8, seed=0):
    """Max relative error between autograd and central differences for a scalar fn of inputs."""
    inputs = [x.detach().double().requires_grad_(True) for x in inputs]
    grads = torch.autograd.grad(fn(*inputs), inputs)
    g = torch.Generator().manual_seed(seed)
    worst = 0.0
    for x, gx in zip(inputs, grads):
        flat = x.detach().view(-1)
        for k in torch.randperm(flat.numel(), generator=g)[:n_probe].tolist():
            old = float(flat[k])
            with torch.no_grad():
                flat[k] = old + h
                up = float(fn(*[y.detach() for y in inputs]))
                flat[k] = old - h
                down = float(fn(*[y.detach() for y in inputs]))
                flat[k] = old
            worst = max(worst, rel_error(float(gx.view(-1)[k]), (up - down) / (2 * h)))
    return worst


def probe_loss(out, weights):
    if isinstance(out, dict):
        return sum((out[k] * weights[k]).sum() for k in sorted(out))
    return (out * weights).sum()


def check_component_grad(comp, x, h=1e-6, n_probe=4, seed=0):
    """Max relative error of parameter gradients of a fixed random probe loss (eval mode)."""
    comp = comp.double().eval()
    x = x.double()
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        out = comp(x)
    if isinstance(out, dict):
        weights = {k: torch.randn(v.shape, generator=g, dtype=torch.float64) for k, v in out.items()}
    else:
        weights = torch.randn(out.shape, generator=g, dtype=torch.float64)
    params = [p for p in comp.parameters()]
    grads = torch.autograd.grad(probe_loss(comp(x), weights), params)
    worst = 0.0
    for p, gp in zip(params, grads):
        flat = p.data.view(-1)
        for k in torch.randperm(flat.numel(), generator=g)[:n_probe].tolist():
            old = float(flat[k])
            with torch.no_grad():
                flat[k] = old + h
                up = float(probe_loss(comp(x), weights))
                flat[k] = old - h
                down = float(probe_loss(comp(x), weights))
                flat[k] = old
            worst = max(worst, rel_error(float(gp.view(-1)[k]), (up - down) / (2 * h), 1e-6))
    return worst
