import numpy as np

from listenhead import autodiff as ad
from listenhead.fdcheck import fd_gradient, relative_error


def fd_check_params(build_loss, named_params, tol=1e-4, step=1e-5):
    """Analytic grads of build_loss() vs central FD, per parameter block.

    named_params maps name -> leaf Tensor; build_loss re-reads the same
    tensors each call, so in-place perturbation by fd_gradient is seen.
    """
    tensors = list(named_params.values())
    for t in tensors:
        t.grad = None
    out = build_loss()
    ad.backward(out)

    def f(*arrays):
        with ad.no_grad():
            return build_loss().item()

    fd = fd_gradient(f, [t.data for t in tensors], step=step)
    worst = {}
    for (name, tensor), g in zip(named_params.items(), fd):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        worst[name] = relative_error(analytic, g)
    failures = {k: v for k, v in worst.items() if v >= tol}
    assert not failures, f"gradient mismatches: {failures}"
    return worst
