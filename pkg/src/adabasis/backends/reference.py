"""NumPy reference implementation of the layer-sweep kernels.

Both backends expose the same two functions operating on packed parameter
arrays:

``forward(kind, act, W1, Wr, b, X, need_jac, need_cache)``
    Sweeps the hidden layers over a batch, optionally carrying the input
    jacobian of every unit and optionally caching per-layer activations for
    a later reverse sweep.

``backward(kind, act, W1, Wr, X, S, H, J, Gphi, Gjac)``
    Reverse sweep: accumulates parameter gradients from cotangents on the
    final basis values (``Gphi``) and, optionally, on the final input
    jacobian (``Gjac``).

Packed layout (all C-contiguous float64):

* ``W1``: (w, d) first-layer weights, ``Wr``: (L-1, w, w) remaining layers,
  ``b``: (L, w) biases.
* Per-layer caches ``S`` (post-activation) and ``H`` (layer output) are
  (L, N, w); jacobians are (L, d, N, w) so each input-component slice is a
  contiguous (N, w) matrix.

``kind``: 0 = plain feed-forward; 1 = residual with skips from layer 2 on;
2 = residual with a skip on every layer (requires d == w, used when a
sub-range of layers of a residual network is swept on its own).
``act``: 0 = ReLU (derivative 0 at 0), 1 = tanh.
"""

from __future__ import annotations

import numpy as np

KIND_PLAIN = 0
KIND_RESNET = 1
KIND_RESNET_ALL = 2
ACT_RELU = 0
ACT_TANH = 1


def _has_skip(kind, layer):
    return (kind == KIND_RESNET and layer >= 2) or kind == KIND_RESNET_ALL


def _activate(act, Z):
    if act == ACT_RELU:
        return np.maximum(Z, 0.0)
    return np.tanh(Z)


def _activate_prime(act, S):
    # Derivative recovered from the post-activation value: ReLU' = [S > 0]
    # (so the derivative at a kink is 0), tanh' = 1 - S^2.
    if act == ACT_RELU:
        return (S > 0.0).astype(np.float64)
    return 1.0 - S * S


def forward(kind, act, W1, Wr, b, X, need_jac, need_cache):
    """Forward sweep; returns ``(phi, S, H, J)``.

    ``S`` and ``H`` are None unless ``need_cache``.  ``J`` is None unless
    ``need_jac``; its shape is (L, d, N, w) with caching and (d, N, w)
    (final layer only) without.
    """
    N, d = X.shape
    w = W1.shape[0]
    L = b.shape[0]

    S = np.empty((L, N, w)) if need_cache else None
    H = np.empty((L, N, w)) if need_cache else None
    J = None
    if need_jac and need_cache:
        J = np.empty((L, d, N, w))

    cur = X
    jac = None
    for layer in range(1, L + 1):
        W = W1 if layer == 1 else Wr[layer - 2]
        Z = cur @ W.T + b[layer - 1]
        Sl = _activate(act, Z)
        Hl = Sl + cur if _has_skip(kind, layer) else Sl
        if need_jac:
            D = _activate_prime(act, Sl)
            if layer == 1:
                # dZ/dx_c is the broadcast weight column; with a first-layer
                # skip the identity jacobian of the input is added on top.
                jac_new = D[None, :, :] * W1.T[:, None, :]
                if _has_skip(kind, 1):
                    for c in range(d):
                        jac_new[c, :, c] += 1.0
            else:
                A = (jac.reshape(d * N, w) @ W.T).reshape(d, N, w)
                jac_new = D[None, :, :] * A
                if _has_skip(kind, layer):
                    jac_new += jac
            jac = jac_new
            if need_cache:
                J[layer - 1] = jac
        if need_cache:
            S[layer - 1] = Sl
            H[layer - 1] = Hl
        cur = Hl

    if need_jac and not need_cache:
        J = jac
    return cur, S, H, J


def backward(kind, act, W1, Wr, X, S, H, J, Gphi, Gjac):
    """Reverse sweep; returns packed gradients ``(dW1, dWr, db)``.

    ``Gjac`` may be None when no jacobian cotangent is present; otherwise the
    full per-layer jacobian cache ``J`` is required.
    """
    N, d = X.shape
    w = W1.shape[0]
    L = S.shape[0]

    dW1 = np.zeros((w, d))
    dWr = np.zeros((max(L - 1, 0), w, w))
    db = np.zeros((L, w))

    Xbar = np.array(Gphi, dtype=np.float64, copy=True)
    Jbar = None if Gjac is None else np.array(Gjac, dtype=np.float64, copy=True)

    for layer in range(L, 0, -1):
        li = layer - 1
        Sl = S[li]
        D = _activate_prime(act, Sl)
        Xl = X if layer == 1 else H[li - 1]

        if Jbar is not None:
            if layer == 1:
                A = np.broadcast_to(W1.T[:, None, :], (d, N, w))
            else:
                Jprev = J[li - 1]
                A = (Jprev.reshape(d * N, w) @ (Wr[li - 1]).T).reshape(d, N, w)
            Abar = Jbar * D[None, :, :]
            Zbar = Xbar * D
            if act == ACT_TANH:
                # Second derivative of tanh expressed through S: -2 S (1-S^2).
                Zbar += (-2.0 * Sl * D) * np.sum(Jbar * A, axis=0)
        else:
            Abar = None
            Zbar = Xbar * D

        db[li] += Zbar.sum(axis=0)
        if layer >= 2:
            W = Wr[li - 1]
            dWr[li - 1] += Zbar.T @ Xl
            if Jbar is not None:
                dWr[li - 1] += Abar.reshape(-1, w).T @ J[li - 1].reshape(-1, w)
                Jnext = (Abar.reshape(-1, w) @ W).reshape(d, N, w)
                if _has_skip(kind, layer):
                    Jnext += Jbar
                Jbar = Jnext
            Xnext = Zbar @ W
            if _has_skip(kind, layer):
                Xnext += Xbar
            Xbar = Xnext
        else:
            dW1 += Zbar.T @ Xl
            if Abar is not None:
                dW1 += Abar.sum(axis=1).T

    return dW1, dWr, db
