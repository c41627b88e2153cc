"""
Compiled cell loops behind the three hidden-state backends.

Note:
- All kernels accumulate the input projection in ascending s and the recurrence in
  ascending k, so every backend produces the same bits for the same cell
- Kernels release the GIL and only ever write their own H cells, which is what
  lets the block dispatcher run them on plain threads
"""

import numpy as np
from numba import njit

from app.architectures import (
    ELMAN,
    FULLY_CONNECTED,
    GRU,
    JORDAN,
    LSTM,
    NARMAX,
    elman_cell,
    fully_connected_cell,
    gru_cell,
    jordan_cell,
    lstm_cell,
    narmax_cell,
)


@njit(cache=True, nogil=True)
def _advance(
    kind, t, col, proj, bias, gate_u, alpha2, alpha3, w_out, w_err, signal, errors,
    history, c_prev, acts,
):
    # col indexes the column-wise weight arrays, which may be block staging copies
    if kind == LSTM:
        h_prev = history[t - 2] if t > 1 else 0.0
        return lstm_cell(
            proj[0], proj[1], proj[2], proj[3], gate_u, bias, col, h_prev, c_prev, acts
        )
    if kind == GRU:
        h_prev = history[t - 2] if t > 1 else 0.0
        return gru_cell(proj[0], proj[1], proj[2], gate_u, bias, col, h_prev, acts), 0.0
    pre = proj[0] + bias[0, col]
    if kind == ELMAN:
        h = elman_cell(pre, alpha2, col, history, t, acts[0])
    elif kind == JORDAN:
        h = jordan_cell(pre, alpha2, col, signal, t, acts[0])
    elif kind == NARMAX:
        h = narmax_cell(pre, w_out, w_err, col, signal, errors, t, acts[0])
    else:
        h = fully_connected_cell(pre, alpha3, col, history, t, acts[0])
    return h, 0.0


@njit(cache=True, nogil=True)
def _cell_program(
    kind, i, j, X, in_W, in_b, gate_u, alpha2, alpha3, w_out, w_err, teacher,
    errors, acts, proj, history, H,
):
    Q = H.shape[2]
    c = 0.0
    for t in range(1, Q + 1):
        for g in range(in_W.shape[0]):
            proj[g] = 0.0
        # x[s] is loaded once per step and shared by the gates
        for s in range(in_W.shape[1]):
            x = X[i, s, t - 1]
            for g in range(in_W.shape[0]):
                proj[g] += in_W[g, s, j] * x
        h, c = _advance(
            kind, t, j, proj, in_b, gate_u, alpha2, alpha3, w_out, w_err,
            teacher[i], errors, history, c, acts,
        )
        history[t - 1] = h
        H[i, j, t - 1] = h


@njit(cache=True, nogil=True)
def hidden_sequential(
    kind, X, in_W, in_b, gate_u, alpha2, alpha3, w_out, w_err, teacher, errors,
    acts, H,
):
    """Row, then column, then time: the reference evaluation order."""
    proj = np.empty(in_W.shape[0])
    history = np.empty(H.shape[2])
    for i in range(H.shape[0]):
        for j in range(H.shape[1]):
            _cell_program(
                kind, i, j, X, in_W, in_b, gate_u, alpha2, alpha3, w_out, w_err,
                teacher, errors, acts, proj, history, H,
            )


@njit(cache=True, nogil=True)
def hidden_blocks(
    first, last, bs, kind, X, in_W, in_b, gate_u, alpha2, alpha3, w_out, w_err,
    teacher, errors, acts, H,
):
    """One work item per cell over blocks [first, last) of a bs x bs grid."""
    n, M = H.shape[0], H.shape[1]
    col_blocks = (M + bs - 1) // bs
    proj = np.empty(in_W.shape[0])
    history = np.empty(H.shape[2])
    for block in range(first, last):
        r0 = (block // col_blocks) * bs
        c0 = (block % col_blocks) * bs
        for tx in range(bs):
            row = r0 + tx
            if row >= n:
                break
            for ty in range(bs):
                col = c0 + ty
                if col >= M:
                    break
                _cell_program(
                    kind, row, col, X, in_W, in_b, gate_u, alpha2, alpha3, w_out,
                    w_err, teacher, errors, acts, proj, history, H,
                )


@njit(cache=True, nogil=True)
def hidden_tiled_blocks(
    first, last, tw, kind, X, in_W, in_b, gate_u, alpha2, alpha3, w_out, w_err,
    teacher, errors, acts, H,
):
    """Cooperative tw x tw blocks with staged weights and cell-local history.

    Per block: biases, diagonal gate weights, feedback weights and teacher rows
    are staged once. Per step t: the input projection runs in ceil(S/tw) phases
    over staged W and X tiles, and the recurrence weights are staged in
    ceil(lags/tw) phases before the cells consume them. History lives in h_loc;
    the global H is only written.
    """
    n, M, Q = H.shape[0], H.shape[1], H.shape[2]
    G, S = in_W.shape[0], in_W.shape[1]
    lags_alpha = max(alpha2.shape[1], alpha3.shape[2])
    col_blocks = (M + tw - 1) // tw
    num_tiles = (S + tw - 1) // tw

    w_sh = np.zeros((G, tw, tw))
    x_sh = np.zeros((tw, tw))
    b_sh = np.zeros((G, tw))
    u_sh = np.zeros((gate_u.shape[0], tw))
    a2_sh = np.zeros((tw, alpha2.shape[1]))
    a3_sh = np.zeros((tw, alpha3.shape[1], alpha3.shape[2]))
    wo_sh = np.zeros((tw, w_out.shape[1]))
    we_sh = np.zeros((tw, w_err.shape[1]))
    y_sh = np.zeros((tw, Q))
    h_loc = np.zeros((tw, tw, Q))
    c_loc = np.zeros((tw, tw))
    acc = np.zeros((tw, tw, G))
    proj = np.empty(G)

    for block in range(first, last):
        r0 = (block // col_blocks) * tw
        c0 = (block % col_blocks) * tw
        rows = min(tw, n - r0)
        cols = min(tw, M - c0)

        for cj in range(cols):
            for g in range(G):
                b_sh[g, cj] = in_b[g, c0 + cj]
            for g in range(gate_u.shape[0]):
                u_sh[g, cj] = gate_u[g, c0 + cj]
            for l in range(w_out.shape[1]):
                wo_sh[cj, l] = w_out[c0 + cj, l]
            for l in range(w_err.shape[1]):
                we_sh[cj, l] = w_err[c0 + cj, l]
        for ri in range(rows):
            for tau in range(Q):
                y_sh[ri, tau] = teacher[r0 + ri, tau]
        c_loc[:, :] = 0.0

        for t in range(1, Q + 1):
            acc[:, :, :] = 0.0
            for tile in range(num_tiles):
                s0 = tile * tw
                # staging phase: thread (tx, ty) loads one W and one X element
                for tx in range(tw):
                    for ty in range(tw):
                        s_w = s0 + tx
                        s_x = s0 + ty
                        for g in range(G):
                            if s_w < S and ty < cols:
                                w_sh[g, tx, ty] = in_W[g, s_w, c0 + ty]
                            else:
                                w_sh[g, tx, ty] = 0.0
                        if tx < rows and s_x < S:
                            x_sh[tx, ty] = X[r0 + tx, s_x, t - 1]
                        else:
                            x_sh[tx, ty] = 0.0
                # barrier, then partial dot products over this tile
                width = min(tw, S - s0)
                for ri in range(rows):
                    for cj in range(cols):
                        for g in range(G):
                            a = acc[ri, cj, g]
                            for q in range(width):
                                a += w_sh[g, q, cj] * x_sh[ri, q]
                            acc[ri, cj, g] = a

            lags = min(t - 1, lags_alpha)
            for phase in range((lags + tw - 1) // tw):
                k0 = phase * tw
                for tx in range(min(tw, lags - k0)):
                    for cj in range(cols):
                        if alpha2.shape[1] > 0:
                            a2_sh[cj, k0 + tx] = alpha2[c0 + cj, k0 + tx]
                        for l in range(alpha3.shape[1]):
                            a3_sh[cj, l, k0 + tx] = alpha3[c0 + cj, l, k0 + tx]

            for ri in range(rows):
                for cj in range(cols):
                    for g in range(G):
                        proj[g] = acc[ri, cj, g]
                    h, c = _advance(
                        kind, t, cj, proj, b_sh, u_sh, a2_sh, a3_sh, wo_sh, we_sh,
                        y_sh[ri], errors, h_loc[ri, cj], c_loc[ri, cj], acts,
                    )
                    c_loc[ri, cj] = c
                    h_loc[ri, cj, t - 1] = h
                    H[r0 + ri, c0 + cj, t - 1] = h
