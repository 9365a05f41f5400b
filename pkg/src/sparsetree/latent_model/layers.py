"""Differentiable building blocks with hand-written reverse passes.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the cache and the output gradient, adds parameter gradients into a
:class:`GradientTape` and returns the gradient for its input (if any).
"""

from __future__ import annotations

import numpy as np

from .._cholesky import NumericalError
from ..structures import ArcScores, ContractError, DepTree, legal_arc_mask
from .params import GradientTape, ModelParams


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


# -- encoder -----------------------------------------------------------------

def _rnn_pass(X, Wx, Wh, b):
    H = np.zeros((X.shape[0], Wh.shape[0]))
    h = np.zeros(Wh.shape[0])
    for t in range(X.shape[0]):
        h = np.tanh(Wx @ X[t] + Wh @ h + b)
        H[t] = h
    return H


def _rnn_backward(X, H, Wx, Wh, dH):
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(Wh.shape[0])
    dX = np.zeros_like(X)
    dh_next = np.zeros(Wh.shape[0])
    for t in range(X.shape[0] - 1, -1, -1):
        dz = (dH[t] + dh_next) * (1.0 - H[t] ** 2)
        h_prev = H[t - 1] if t > 0 else np.zeros_like(H[t])
        dWx += np.outer(dz, X[t])
        dWh += np.outer(dz, h_prev)
        db += dz
        dX[t] = Wx.T @ dz
        dh_next = Wh.T @ dz
    return dX, dWx, dWh, db


def encode_forward(token_ids, params: ModelParams, prefix: str = ""):
    cfg = params.config
    ids = np.asarray(token_ids, dtype=int)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError("token_ids must be a non-empty sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ContractError(f"token id out of vocabulary (size {cfg.vocab_size})")
    X = params[prefix + "emb"][ids]
    p = prefix + "rnn_"
    if p + "fw_Wx" not in params:
        return X.copy(), (prefix, ids, X, None, None)
    Hf = _rnn_pass(X, params[p + "fw_Wx"], params[p + "fw_Wh"], params[p + "fw_b"])
    Hb = _rnn_pass(X[::-1], params[p + "bw_Wx"], params[p + "bw_Wh"], params[p + "bw_b"])[::-1]
    return np.hstack([Hf, Hb]), (prefix, ids, X, Hf, Hb)


def encode_backward(cache, dV, params: ModelParams, tape: GradientTape):
    prefix, ids, X, Hf, Hb = cache
    if Hf is None:
        dX = dV
    else:
        p = prefix + "rnn_"
        d = Hf.shape[1]
        dXf, dWx, dWh, db = _rnn_backward(X, Hf, params[p + "fw_Wx"], params[p + "fw_Wh"], dV[:, :d])
        tape.add(p + "fw_Wx", dWx)
        tape.add(p + "fw_Wh", dWh)
        tape.add(p + "fw_b", db)
        dXb, dWx, dWh, db = _rnn_backward(
            X[::-1], Hb[::-1], params[p + "bw_Wx"], params[p + "bw_Wh"], dV[::-1, d:]
        )
        tape.add(p + "bw_Wx", dWx)
        tape.add(p + "bw_Wh", dWh)
        tape.add(p + "bw_b", db)
        dX = dXf + dXb[::-1]
    np.add.at(tape.arrays[prefix + "emb"], ids, dX)


# -- arc scorer --------------------------------------------------------------

def score_arcs_forward(V, params: ModelParams):
    """s(h, m) = w2 . tanh(W_head v_h + W_mod v_m + b1) + b2, with v_0 the root vector."""
    n = V.shape[0]
    Vext = np.vstack([params["arc_root"], V])
    A = Vext @ params["arc_W_head"].T
    B = V @ params["arc_W_mod"].T
    hid = np.tanh(A[:, None, :] + B[None, :, :] + params["arc_b1"])
    s = hid @ params["arc_w2"] + params["arc_b2"][0]
    mask = legal_arc_mask(n)
    s = np.where(mask, s, 0.0)
    if not np.all(np.isfinite(s)):
        raise NumericalError("arc scorer produced non-finite scores")
    return ArcScores(s), (Vext, hid, mask)


def score_arcs_backward(cache, ds, params: ModelParams, tape: GradientTape):
    Vext, hid, mask = cache
    ds = np.where(mask, ds, 0.0)
    tape.add("arc_w2", np.einsum("hm,hmk->k", ds, hid))
    tape.add("arc_b2", np.array([ds.sum()]))
    dpre = ds[:, :, None] * params["arc_w2"] * (1.0 - hid ** 2)
    tape.add("arc_b1", dpre.sum(axis=(0, 1)))
    dA = dpre.sum(axis=1)
    dB = dpre.sum(axis=0)
    tape.add("arc_W_head", dA.T @ Vext)
    tape.add("arc_W_mod", dB.T @ Vext[1:])
    dVext = dA @ params["arc_W_head"]
    tape.add("arc_root", dVext[0])
    return dVext[1:] + dB @ params["arc_W_mod"]


# -- child-sum tree LSTM ------------------------------------------------------

def _post_order(tree: DepTree) -> tuple[list[int], list[list[int]]]:
    kids = tree.children()
    order, stack = [], [0]
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(kids[j])
    return order[::-1], kids


def compose_forward(tree: DepTree, V, params: ModelParams, child_order=None):
    """Child-Sum TreeLSTM over ``tree``; returns the root node's hidden state.

    ``child_order`` optionally permutes each node's child list (the result is
    invariant to it).
    """
    if not isinstance(tree, DepTree):
        tree = DepTree(tree)
    n = tree.n
    if V.shape[0] != n:
        raise ContractError(f"tree has {n} tokens but {V.shape[0]} vectors were given")
    order, kids = _post_order(tree)
    if child_order is not None:
        kids = [child_order(list(k)) for k in kids]
    P = params.arrays
    dl = P["lstm_b_i"].shape[0]
    X = np.vstack([P["lstm_root_x"], V])
    # input projections of every node for gates i, o, u, f in one product
    W = np.vstack([P["lstm_W_i"], P["lstm_W_o"], P["lstm_W_u"], P["lstm_W_f"]])
    b = np.concatenate([P["lstm_b_i"], P["lstm_b_o"], P["lstm_b_u"], P["lstm_b_f"]])
    XP = X @ W.T + b
    U_iou = np.vstack([P["lstm_U_i"], P["lstm_U_o"], P["lstm_U_u"]])
    U_f = P["lstm_U_f"]

    h = np.zeros((n + 1, dl))
    c = np.zeros((n + 1, dl))
    h_sum = np.zeros((n + 1, dl))
    iou = np.zeros((n + 1, 3 * dl))
    tc = np.zeros((n + 1, dl))
    fgate = np.zeros((n + 1, dl))  # forget gate of each node's edge to its parent
    for j in order:
        ch = kids[j]
        pre = XP[j, :3 * dl].copy()
        if ch:
            h_sum[j] = h[ch].sum(axis=0)
            pre += U_iou @ h_sum[j]
            fgate[ch] = sigmoid(XP[j, 3 * dl:] + h[ch] @ U_f.T)
        g = np.concatenate([sigmoid(pre[:2 * dl]), np.tanh(pre[2 * dl:])])
        iou[j] = g
        cj = g[:dl] * g[2 * dl:]
        if ch:
            cj = cj + (fgate[ch] * c[ch]).sum(axis=0)
        c[j] = cj
        tc[j] = np.tanh(cj)
        h[j] = g[dl:2 * dl] * tc[j]
    return h[0].copy(), (order, kids, X, h, c, h_sum, iou, tc, fgate)


def compose_backward(cache, dh_root, params: ModelParams, tape: GradientTape):
    """Returns the gradient with respect to the token vectors V."""
    order, kids, X, h, c, h_sum, iou, tc, fgate = cache
    P = params.arrays
    dl = P["lstm_b_i"].shape[0]
    U_iou = np.vstack([P["lstm_U_i"], P["lstm_U_o"], P["lstm_U_u"]])
    U_f = P["lstm_U_f"]
    dh = np.zeros_like(h)
    dc = np.zeros_like(c)
    dh[0] = dh_root
    dz_iou = np.zeros_like(iou)
    dz_f = np.zeros_like(h)  # indexed by child node
    parent = np.zeros(len(h), dtype=int)
    for j in reversed(order):
        i, o, u = iou[j, :dl], iou[j, dl:2 * dl], iou[j, 2 * dl:]
        do = dh[j] * tc[j]
        dcj = dc[j] + dh[j] * o * (1.0 - tc[j] ** 2)
        dz = np.concatenate([dcj * u * i * (1.0 - i), do * o * (1.0 - o), dcj * i * (1.0 - u ** 2)])
        dz_iou[j] = dz
        ch = kids[j]
        if ch:
            f = fgate[ch]
            dzf = dcj * c[ch] * f * (1.0 - f)
            dz_f[ch] = dzf
            parent[ch] = j
            dh[ch] += U_iou.T @ dz + dzf @ U_f
            dc[ch] += dcj * f

    nodes = np.arange(1, len(h))
    tape.add("lstm_W_i", dz_iou[:, :dl].T @ X)
    tape.add("lstm_W_o", dz_iou[:, dl:2 * dl].T @ X)
    tape.add("lstm_W_u", dz_iou[:, 2 * dl:].T @ X)
    tape.add("lstm_U_i", dz_iou[:, :dl].T @ h_sum)
    tape.add("lstm_U_o", dz_iou[:, dl:2 * dl].T @ h_sum)
    tape.add("lstm_U_u", dz_iou[:, 2 * dl:].T @ h_sum)
    bsum = dz_iou.sum(axis=0)
    tape.add("lstm_b_i", bsum[:dl])
    tape.add("lstm_b_o", bsum[dl:2 * dl])
    tape.add("lstm_b_u", bsum[2 * dl:])
    dzf = dz_f[nodes]
    tape.add("lstm_W_f", dzf.T @ X[parent[nodes]])
    tape.add("lstm_U_f", dzf.T @ h[nodes])
    tape.add("lstm_b_f", dzf.sum(axis=0))

    W_iou = np.vstack([P["lstm_W_i"], P["lstm_W_o"], P["lstm_W_u"]])
    dX = dz_iou @ W_iou
    np.add.at(dX, parent[nodes], dzf @ P["lstm_W_f"])
    tape.add("lstm_root_x", dX[0])
    return dX[1:]


# -- output heads --------------------------------------------------------------

def classify_forward(hvec, params: ModelParams):
    p = softmax(params["out_W"] @ hvec + params["out_b"])
    return p, (hvec, p)


def classify_backward(cache, dp, params: ModelParams, tape: GradientTape):
    hvec, p = cache
    dz = p * (dp - dp @ p)
    tape.add("out_W", np.outer(dz, hvec))
    tape.add("out_b", dz)
    return params["out_W"].T @ dz


def pair_head_forward(a, b, params: ModelParams):
    feat = np.concatenate([a, b, a - b, a * b])
    z = np.tanh(params["pair_W"] @ feat + params["pair_b"])
    p = softmax(params["out_W"] @ z + params["out_b"])
    return p, (a, b, feat, z, p)


def pair_head_backward(cache, dp, params: ModelParams, tape: GradientTape):
    a, b, feat, z, p = cache
    dlog = p * (dp - dp @ p)
    tape.add("out_W", np.outer(dlog, z))
    tape.add("out_b", dlog)
    dpre = (params["out_W"].T @ dlog) * (1.0 - z ** 2)
    tape.add("pair_W", np.outer(dpre, feat))
    tape.add("pair_b", dpre)
    dfeat = params["pair_W"].T @ dpre
    d = a.shape[0]
    d1, d2, d3, d4 = dfeat[:d], dfeat[d:2 * d], dfeat[2 * d:3 * d], dfeat[3 * d:]
    return d1 + d3 + d4 * b, d2 - d3 + d4 * a


def project_forward(hvec, params: ModelParams):
    """Affine projection rescaled to unit Euclidean norm."""
    r = params["proj_W"] @ hvec + params["proj_b"]
    norm = np.linalg.norm(r)
    if not norm > 0:
        raise FloatingPointError("cannot normalize a zero representation")
    y = r / norm
    return y, (hvec, y, norm)


def project_backward(cache, dy, params: ModelParams, tape: GradientTape):
    hvec, y, norm = cache
    dr = (dy - y * (y @ dy)) / norm
    tape.add("proj_W", np.outer(dr, hvec))
    tape.add("proj_b", dr)
    return params["proj_W"].T @ dr
