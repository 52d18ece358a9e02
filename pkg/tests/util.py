"""Shared test helpers: finite-difference oracles and model checking."""

import numpy as np

_PRE_ACTIVATION_SUFFIXES = (".h1", ".h2", ".u", ".d")


def conv2d_oracle(x, w, b, stride, padding):
    """Direct six-loop cross-correlation, independent of the library kernels."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((n, ci, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for bi in range(n):
        for o in range(co):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for c in range(ci):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += w[o, c, dy, dx] * xp[bi, c, oy * stride + dy, ox * stride + dx]
                    out[bi, o, oy, ox] = acc
    if b is not None:
        out += np.asarray(b, dtype=np.float64).reshape(1, -1, 1, 1)
    return out


def fd_gradient(fn, x, eps=1e-4):
    """Central finite differences of scalar fn over every entry of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = fn(x)
        x[idx] = orig - eps
        fm = fn(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
        it.iternext()
    return grad


def max_rel_error(analytic, reference, floor=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(reference)), floor)
    return float((np.abs(analytic - reference) / denom).max())


def _activation_masks(cache):
    return [(k, cache[k] > 0) for k in sorted(cache)
            if k.endswith(_PRE_ACTIVATION_SUFFIXES)]


def _same_masks(a, b):
    return len(a) == len(b) and all(
        ka == kb and ma.shape == mb.shape and (ma == mb).all()
        for (ka, ma), (kb, mb) in zip(a, b)
    )


def nudge_biases(model, rng, lo=0.05, hi=0.15):
    """Move biases off zero so activations avoid exact ReLU kinks."""
    for p in model.parameters:
        if p.name.endswith("bias"):
            p.value += (rng.uniform(lo, hi, p.value.shape)
                        * rng.choice([-1.0, 1.0], p.value.shape))


def fd_check_model(model, x, loss_fn, loss_grad_fn, eps=1e-4, probes_per_param=None,
                   probe_seed=0):
    """Compare model parameter gradients against central finite differences.

    ``loss_fn(out) -> float`` and ``loss_grad_fn(out) -> (float, grad)``.
    Probes whose +/-eps evaluations flip any ReLU activation pattern are
    skipped (the function is not differentiable across the kink, so a
    central difference there is meaningless).  Returns (worst_rel_error,
    checked, skipped).
    """
    model.zero_grads()
    out, cache = model.forward_train(x)
    _, grad = loss_grad_fn(out)
    model.backward(grad, cache)

    def loss_and_masks():
        o, c = model.forward_train(x)
        return loss_fn(o), _activation_masks(c)

    probe = np.random.default_rng(probe_seed)
    worst, checked, skipped = 0.0, 0, 0
    for p in model.parameters:
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        if probes_per_param is None or probes_per_param >= flat.size:
            indices = range(flat.size)
        else:
            indices = probe.choice(flat.size, size=probes_per_param, replace=False)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            fp, masks_p = loss_and_masks()
            flat[i] = orig - eps
            fm, masks_m = loss_and_masks()
            flat[i] = orig
            if not _same_masks(masks_p, masks_m):
                skipped += 1
                continue
            fd = (fp - fm) / (2 * eps)
            denom = max(abs(fd), abs(gflat[i]), 1e-6)
            worst = max(worst, abs(fd - gflat[i]) / denom)
            checked += 1
    return worst, checked, skipped


def offset_target(pred, rng, lo=0.3, hi=0.7):
    """A target far from pred everywhere, so L1 has no kinks near it."""
    signs = rng.choice([-1.0, 1.0], pred.shape)
    return pred + signs * rng.uniform(lo, hi, pred.shape)
