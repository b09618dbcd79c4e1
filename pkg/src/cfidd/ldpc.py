"""LDPC codes: PEG construction, alist I/O, systematic encoding and box-plus SPA decoding."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConstructionFailure, ContractViolation

#: Decoder messages are clipped to this magnitude.
MSG_CLIP = 60.0
# Padding value for check nodes of lower degree; box_plus(x, _PAD) == x.
_PAD = 1e30


def gf2_rref(H):
    """Reduced row echelon form of a binary matrix over GF(2).

    Returns
    -------
    R : ndarray of bool, shape (rank, n)
    pivots : list of int
        Pivot column of each row of ``R``.
    """
    R = np.array(H, dtype=bool)
    m, n = R.shape
    pivots = []
    row = 0
    for col in range(n):
        if row == m:
            break
        nz = np.flatnonzero(R[row:, col])
        if nz.size == 0:
            continue
        p = row + nz[0]
        if p != row:
            R[[row, p]] = R[[p, row]]
        hit = R[:, col].copy()
        hit[row] = False
        R[hit] ^= R[row]
        pivots.append(col)
        row += 1
    return R[:row], pivots


def gf2_rank(H):
    return len(gf2_rref(H)[1])


def peg_regular(n, m, dv, dc, rng):
    """Progressive edge growth for a (dv, dc)-regular Tanner graph.

    Each new edge of a variable node goes to an eligible check node that is
    as far as possible from it in the current graph (unreachable first),
    breaking ties by lowest check degree and then at random.  A check is
    eligible while its degree is below ``dc`` and it is not yet connected
    to the variable.  Returns ``None`` if the greedy fill gets stuck.
    """
    if n * dv != m * dc:
        raise ContractViolation(f"n*dv = {n * dv} must equal m*dc = {m * dc}")
    H = np.zeros((m, n), dtype=bool)
    deg = np.zeros(m, dtype=int)
    for v in range(n):
        for e in range(dv):
            eligible = (deg < dc) & ~H[:, v]
            if not eligible.any():
                return None
            if e == 0:
                cand = eligible
            else:
                depth = _check_depths(H, v)
                far = depth[eligible].max()
                cand = eligible & (depth == far)
            idx = np.flatnonzero(cand)
            idx = idx[deg[idx] == deg[idx].min()]
            c = idx[rng.integers(idx.size)] if idx.size > 1 else idx[0]
            H[c, v] = True
            deg[c] += 1
    return H.astype(np.uint8)


def _check_depths(H, v):
    """Hop distance (in variable->check steps) from variable ``v`` to every check.

    Unreachable checks get ``np.inf``.
    """
    m = H.shape[0]
    depth = np.full(m, np.inf)
    frontier = H[:, v].copy()
    seen = frontier.copy()
    level = 1
    while frontier.any():
        depth[frontier] = level
        vars_ = H[frontier].any(axis=0)
        nxt = H[:, vars_].any(axis=1) & ~seen
        seen |= nxt
        frontier = nxt
        level += 1
    return depth


class LinearCode:
    """Binary LDPC code with a systematic encoder and SPA decoder tables.

    Parameters
    ----------
    H : array_like, shape (M, N)
        Full-rank binary parity-check matrix.
    """

    def __init__(self, H):
        H = np.asarray(H, dtype=np.uint8) & 1
        if H.ndim != 2 or H.shape[0] >= H.shape[1]:
            raise ContractViolation(f"parity-check matrix must be M x N with M < N, got {H.shape}")
        R, pivots = gf2_rref(H)
        if len(pivots) != H.shape[0]:
            raise ConstructionFailure(f"parity-check matrix has rank {len(pivots)} < {H.shape[0]}")
        self.H = H
        self.H.setflags(write=False)
        m, n = H.shape
        self.parity_positions = np.array(pivots)
        self.info_positions = np.setdiff1d(np.arange(n), self.parity_positions)
        self.parity_map = R[:, self.info_positions].astype(np.uint8)
        self._prepare_decoder()

    n = property(lambda self: self.H.shape[1])
    m = property(lambda self: self.H.shape[0])
    k = property(lambda self: self.H.shape[1] - self.H.shape[0])

    @property
    def rate(self):
        return self.k / self.n

    def _prepare_decoder(self):
        rows, cols = np.nonzero(self.H)  # row-major: edges grouped by check
        self.edge_check = rows
        self.edge_var = cols
        n_edges = rows.size
        row_deg = np.bincount(rows, minlength=self.m)
        if row_deg.min() < 2:
            raise ContractViolation("every check must involve at least two bits")
        dc = int(row_deg.max())
        slot = np.arange(n_edges) - np.repeat(np.cumsum(row_deg) - row_deg, row_deg)
        check_edges = np.full((self.m, dc), n_edges)
        check_edges[rows, slot] = np.arange(n_edges)
        self.check_edges = check_edges
        self._valid_slots = np.flatnonzero(check_edges.ravel() < n_edges)
        self._var_sum = sp.csr_matrix(
            (np.ones(n_edges), (np.arange(n_edges), cols)), shape=(n_edges, self.n))
        self._Hs = sp.csr_matrix(self.H, dtype=np.int64)

    def syndrome(self, bits):
        """``H c`` over GF(2) for one word (N,) or a batch (B, N)."""
        bits = np.asarray(bits)
        return (self._Hs @ bits.T).T % 2

    @classmethod
    def from_alist(cls, path):
        return cls(read_alist(path))

    def to_alist(self, path):
        write_alist(self.H, path)


def has_four_cycle(H):
    """True if two checks share more than one variable."""
    H = np.asarray(H, dtype=np.int64)
    overlap = H @ H.T
    np.fill_diagonal(overlap, 0)
    return bool(overlap.max(initial=0) > 1)


def build_code(n=256, m=128, seed=0, dv=3, retries=50):
    """Seeded PEG construction of a full-rank (dv, dv*n/m)-regular code.

    The greedy fill can be forced into a 4-cycle near the end, when few
    checks still have free sockets; such draws are rejected like
    rank-deficient ones.
    """
    if not 0 < m < n:
        raise ContractViolation(f"need 0 < M < N, got N={n}, M={m}")
    if (n * dv) % m:
        raise ContractViolation(f"column weight {dv} does not give an integer row weight for N={n}, M={m}")
    dc = n * dv // m
    rng = np.random.default_rng(seed)
    for _ in range(retries):
        H = peg_regular(n, m, dv, dc, rng)
        if H is not None and not has_four_cycle(H) and gf2_rank(H) == m:
            return LinearCode(H)
    raise ConstructionFailure(f"no full-rank, 4-cycle-free ({dv},{dc}) code after {retries} attempts (seed {seed})")


def encode(code, message):
    """Systematic encoding of one message (K,) or a batch (B, K) of message bits."""
    message = np.asarray(message, dtype=np.uint8)
    if message.shape[-1] != code.k:
        raise ContractViolation(f"message length {message.shape[-1]} != {code.k}")
    cw = np.zeros(message.shape[:-1] + (code.n,), dtype=np.uint8)
    cw[..., code.info_positions] = message
    cw[..., code.parity_positions] = (message.astype(np.int64) @ code.parity_map.T.astype(np.int64)) % 2
    return cw


def extract_message(code, codeword):
    return np.asarray(codeword)[..., code.info_positions]


def box_plus(a, b):
    """LLR of the XOR of two bits with LLRs ``a`` and ``b``.

    Uses the min-plus-correction form, which stays finite for large inputs.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = (np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))
           + np.log1p(np.exp(-np.abs(a + b))) - np.log1p(np.exp(-np.abs(a - b))))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DecodeResult:
    """Decoder output; arrays have a leading batch axis when the input did."""

    posterior: np.ndarray
    extrinsic: np.ndarray
    hard: np.ndarray
    parity_ok: np.ndarray
    iterations: np.ndarray
    messages: np.ndarray = None


def _check_update(code, v2c):
    """Exact box-plus extrinsic messages from checks to variables."""
    B = v2c.shape[0]
    padded = np.concatenate([v2c, np.full((B, 1), _PAD)], axis=1)
    x = padded[:, code.check_edges]  # (B, M, dc)
    dc = x.shape[-1]
    fwd = [x[..., 0]]
    for i in range(1, dc - 1):
        fwd.append(box_plus(fwd[-1], x[..., i]))
    bwd = [x[..., dc - 1]]
    for i in range(dc - 2, 0, -1):
        bwd.append(box_plus(x[..., i], bwd[-1]))
    bwd.reverse()  # bwd[i] combines x[i+1:]
    out = np.empty_like(x)
    out[..., 0] = bwd[0]
    out[..., dc - 1] = fwd[dc - 2]
    for i in range(1, dc - 1):
        out[..., i] = box_plus(fwd[i - 1], bwd[i])
    out = out.reshape(B, -1)[:, code._valid_slots]
    return np.clip(out, -MSG_CLIP, MSG_CLIP)


def decode(code, llr, max_iter=10, early_exit=True, c2v_init=None):
    """Flooding sum-product decoding with exact box-plus check updates.

    Parameters
    ----------
    code : LinearCode
    llr : array_like, shape (N,) or (B, N)
        Channel (detector) LLRs, positive favouring bit 0.
    max_iter : int
    early_exit : bool
        Stop a word as soon as its hard decisions satisfy all checks.
        Words in a batch stop independently, so batching never changes
        the result for a given word.
    c2v_init : ndarray, optional
        Check-to-variable messages to resume from (``result.messages`` of
        an earlier call); fresh all-zero messages by default.

    Returns
    -------
    DecodeResult
        ``extrinsic`` is the sum of incoming check messages, so that
        ``posterior = llr + extrinsic``.
    """
    llr = np.asarray(llr, dtype=float)
    single = llr.ndim == 1
    llr = np.atleast_2d(llr)
    if llr.shape[-1] != code.n:
        raise ContractViolation(f"got {llr.shape[-1]} LLRs for a length-{code.n} code")
    if max_iter < 1:
        raise ContractViolation("max_iter must be >= 1")
    B = llr.shape[0]
    lch = np.clip(llr, -MSG_CLIP, MSG_CLIP)
    c2v_all = np.zeros((B, code.edge_var.size))
    if c2v_init is not None:
        c2v_all[:] = c2v_init
    v2c = np.clip(lch[:, code.edge_var] - c2v_all
                  + ((code._var_sum.T @ c2v_all.T).T)[:, code.edge_var], -MSG_CLIP, MSG_CLIP)
    ext = np.zeros_like(llr)
    iters = np.zeros(B, dtype=int)
    ok = np.zeros(B, dtype=bool)
    active = np.arange(B)
    for it in range(1, max_iter + 1):
        c2v = _check_update(code, v2c[active])
        c2v_all[active] = c2v
        e = (code._var_sum.T @ c2v.T).T
        ext[active] = e
        post = llr[active] + e
        v2c[active] = np.clip(post[:, code.edge_var] - c2v, -MSG_CLIP, MSG_CLIP)
        sat = ~code.syndrome((post < 0).astype(np.int64)).any(axis=1)
        ok[active] = sat
        iters[active] = it
        if early_exit:
            active = active[~sat]
            if active.size == 0:
                break
    post = llr + ext
    res = DecodeResult(posterior=post, extrinsic=ext, hard=(post < 0).astype(np.uint8),
                       parity_ok=ok, iterations=iters, messages=c2v_all)
    if single:
        res = DecodeResult(posterior=post[0], extrinsic=ext[0], hard=res.hard[0],
                           parity_ok=bool(ok[0]), iterations=int(iters[0]), messages=c2v_all[0])
    return res


def read_alist(path):
    """Parse a parity-check matrix in MacKay's alist format."""
    tokens = Path(path).read_text().split()
    try:
        vals = [int(t) for t in tokens]
    except ValueError as exc:
        raise ContractViolation(f"{path}: non-integer token in alist file") from exc
    n, m = vals[0], vals[1]
    max_col, max_row = vals[2], vals[3]
    pos = 4
    col_w = vals[pos:pos + n]
    pos += n
    row_w = vals[pos:pos + m]
    pos += m
    H = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        entries = vals[pos:pos + max_col]
        pos += max_col
        rows = [r - 1 for r in entries if r > 0]
        if len(rows) != col_w[j]:
            raise ContractViolation(f"{path}: column {j} lists {len(rows)} entries, header says {col_w[j]}")
        H[rows, j] = 1
    if len(vals) >= pos + m * max_row:
        for i in range(m):
            entries = vals[pos:pos + max_row]
            pos += max_row
            cols = sorted(c - 1 for c in entries if c > 0)
            if cols != list(np.flatnonzero(H[i])) or len(cols) != row_w[i]:
                raise ContractViolation(f"{path}: row {i} disagrees with the column lists")
    return H


def write_alist(H, path):
    """Write ``H`` in alist format (zero-padded to the maximum weights)."""
    H = np.asarray(H, dtype=np.uint8)
    m, n = H.shape
    col_w = H.sum(axis=0)
    row_w = H.sum(axis=1)
    max_col, max_row = int(col_w.max()), int(row_w.max())
    lines = [f"{n} {m}", f"{max_col} {max_row}",
             " ".join(map(str, col_w)), " ".join(map(str, row_w))]
    for j in range(n):
        idx = list(np.flatnonzero(H[:, j]) + 1)
        lines.append(" ".join(map(str, idx + [0] * (max_col - len(idx)))))
    for i in range(m):
        idx = list(np.flatnonzero(H[i]) + 1)
        lines.append(" ".join(map(str, idx + [0] * (max_row - len(idx)))))
    Path(path).write_text("\n".join(lines) + "\n")
