"""Pure-numpy conv kernels: same-padded 2D cross-correlation on channels-last
batches, forward plus both backward passes.

im2col formulation: one (B*S*Q, Cin*kh*kw) patch matrix per call turns the
convolution into a single GEMM, which is where numpy is fast.  Patch columns
are ordered (ci, di, dj) so the patch matrix reshapes straight out of
sliding_window_view without a transpose of the big operand.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, ph, pw):
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def _cols(xpad, S, Q, kh, kw):
    # (B, S, Q, Cin, kh, kw) view over the padded input, copied contiguous
    v = sliding_window_view(xpad, (kh, kw), axis=(1, 2))
    B = xpad.shape[0]
    Cin = xpad.shape[3]
    return np.ascontiguousarray(v).reshape(B * S * Q, Cin * kh * kw)


def _kernel2d(kernel):
    # (kh, kw, Cin, Cout) -> (Cin*kh*kw, Cout) matching the (ci, di, dj) order
    kh, kw, Cin, Cout = kernel.shape
    return np.ascontiguousarray(kernel.transpose(2, 0, 1, 3)).reshape(Cin * kh * kw, Cout)


def conv2d_forward(x, kernel, bias):
    """x (B,S,Q,Cin), kernel (kh,kw,Cin,Cout), bias (Cout) -> (B,S,Q,Cout)."""
    B, S, Q, Cin = x.shape
    kh, kw, Cin_k, Cout = kernel.shape
    if Cin_k != Cin:
        raise ValueError(f"kernel expects {Cin_k} input channels, got {Cin}")
    ph, pw = kh // 2, kw // 2
    cols = _cols(_pad(x, ph, pw), S, Q, kh, kw)
    y = cols @ _kernel2d(kernel) + bias
    return y.reshape(B, S, Q, Cout)


def conv2d_backward(x, kernel, grad_out):
    """Gradients of conv2d_forward: returns (dx, dkernel, dbias)."""
    B, S, Q, Cin = x.shape
    kh, kw, _, Cout = kernel.shape
    ph, pw = kh // 2, kw // 2
    g2d = grad_out.reshape(B * S * Q, Cout)
    cols = _cols(_pad(x, ph, pw), S, Q, kh, kw)

    dk2d = cols.T @ g2d
    dk = dk2d.reshape(Cin, kh, kw, Cout).transpose(1, 2, 0, 3).copy()
    db = g2d.sum(axis=0)

    gcols = (g2d @ _kernel2d(kernel).T).reshape(B, S, Q, Cin, kh, kw)
    dxpad = np.zeros((B, S + 2 * ph, Q + 2 * pw, Cin), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            dxpad[:, di : di + S, dj : dj + Q, :] += gcols[:, :, :, :, di, dj]
    dx = dxpad[:, ph : ph + S, pw : pw + Q, :]
    return np.ascontiguousarray(dx), dk, db
