"""Recurrent units (LSTM, GRU) and dropout.

Cells serve double duty: they are run over short word windows by the
convolution filters, and over whole sentences as baseline RNNs.  Every
step method accepts either single vectors (shape ``(k,)``) or a batch of
rows (shape ``(B, k)``), so a set of independent windows can advance in
lock-step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

DROPOUT_SITES = ("embedding", "pooling", "rnn_input", "rnn_recurrent")


@dataclass(frozen=True)
class DropoutSpec:
    """Dropout rate attached to one of the four sites it can apply to."""

    rate: float
    applied_at: str

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.applied_at not in DROPOUT_SITES:
            raise ValueError(f"unknown dropout site {self.applied_at!r}; expected one of {DROPOUT_SITES}")


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.05) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def orthogonal_init(rng: np.random.Generator, n: int) -> np.ndarray:
    """Orthogonal matrix from the QR decomposition of a Gaussian draw."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability rate, survivors scaled by 1/(1-rate)."""
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def apply_dropout(t: Tensor, spec: DropoutSpec, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Apply inverted dropout in train mode; identity in eval mode or at rate 0."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or spec.rate == 0.0:
        return t
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    return ad.mul(t, Tensor(dropout_mask(t.shape, spec.rate, rng)))


def _check_input(x: Tensor, k: int, who: str) -> None:
    if x.data.shape[-1] != k or x.data.ndim not in (1, 2):
        raise DimensionError(f"{who}: input shape {x.data.shape} incompatible with input_size {k}")


def _mask_tensor(mask: np.ndarray | None, like: Tensor) -> Tensor | None:
    # Per-sentence masks are 1-D; tile to match a batch of rows.
    if mask is None:
        return None
    if like.data.ndim == 2 and mask.ndim == 1:
        return Tensor(np.tile(mask, (like.data.shape[0], 1)))
    return Tensor(mask)


def _affine(w: Tensor, u: Tensor, b: Tensor, x: Tensor, h: Tensor) -> Tensor:
    """W x + U h + b, where x/h may be single vectors or batches of rows."""
    if x.data.ndim == 1:
        return ad.matmul(w, x) + ad.matmul(u, h) + b
    rows = x.data.shape[0]
    return ad.matmul(x, ad.transpose(w)) + ad.matmul(h, ad.transpose(u)) + ad.broadcast_rows(b, rows)


class LstmCell:
    """Standard LSTM: no peepholes, forget-gate bias initialized to 1."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator | None = None):
        if input_size < 1 or hidden_size < 1:
            raise ValueError("input_size and hidden_size must be positive")
        rng = rng if rng is not None else np.random.default_rng()
        self.input_size = input_size
        self.hidden_size = hidden_size
        k, d = input_size, hidden_size
        for gate in "ifoc":
            setattr(self, f"w_{gate}", Tensor(uniform_init(rng, (d, k)), requires_grad=True))
            setattr(self, f"u_{gate}", Tensor(orthogonal_init(rng, d), requires_grad=True))
            setattr(self, f"b_{gate}", Tensor(np.zeros(d), requires_grad=True))
        self.b_f.data[:] = 1.0

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{kind}_{gate}": getattr(self, f"{kind}_{gate}") for gate in "ifoc" for kind in ("w", "u", "b")}

    def step(
        self,
        h_prev: Tensor,
        c_prev: Tensor,
        x: Tensor,
        input_mask: np.ndarray | None = None,
        recurrent_mask: np.ndarray | None = None,
    ) -> tuple[Tensor, Tensor]:
        """One LSTM step; returns the new (h, c)."""
        _check_input(x, self.input_size, "lstm_step")
        if h_prev.data.shape != c_prev.data.shape or h_prev.data.shape[-1] != self.hidden_size:
            raise DimensionError(f"lstm_step: state shapes {h_prev.data.shape}/{c_prev.data.shape} "
                                 f"incompatible with hidden_size {self.hidden_size}")
        im = _mask_tensor(input_mask, x)
        rm = _mask_tensor(recurrent_mask, h_prev)
        x_in = ad.mul(x, im) if im is not None else x
        h_in = ad.mul(h_prev, rm) if rm is not None else h_prev
        i = ad.sigmoid(_affine(self.w_i, self.u_i, self.b_i, x_in, h_in))
        f = ad.sigmoid(_affine(self.w_f, self.u_f, self.b_f, x_in, h_in))
        o = ad.sigmoid(_affine(self.w_o, self.u_o, self.b_o, x_in, h_in))
        g = ad.tanh(_affine(self.w_c, self.u_c, self.b_c, x_in, h_in))
        c = ad.mul(f, c_prev) + ad.mul(i, g)
        h = ad.mul(o, ad.tanh(c))
        return h, c

    # uniform state protocol shared with GruCell
    def initial_state(self, batch: int | None = None) -> tuple[Tensor, Tensor]:
        shape = (self.hidden_size,) if batch is None else (batch, self.hidden_size)
        return Tensor(np.zeros(shape)), Tensor(np.zeros(shape))

    def advance(self, state, x, input_mask=None, recurrent_mask=None):
        return self.step(state[0], state[1], x, input_mask, recurrent_mask)

    @staticmethod
    def state_output(state) -> Tensor:
        return state[0]


class GruCell:
    """GRU with the reset gate applied before the recurrent matmul."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator | None = None):
        if input_size < 1 or hidden_size < 1:
            raise ValueError("input_size and hidden_size must be positive")
        rng = rng if rng is not None else np.random.default_rng()
        self.input_size = input_size
        self.hidden_size = hidden_size
        k, d = input_size, hidden_size
        for gate in "zrh":
            setattr(self, f"w_{gate}", Tensor(uniform_init(rng, (d, k)), requires_grad=True))
            setattr(self, f"u_{gate}", Tensor(orthogonal_init(rng, d), requires_grad=True))
            setattr(self, f"b_{gate}", Tensor(np.zeros(d), requires_grad=True))

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{kind}_{gate}": getattr(self, f"{kind}_{gate}") for gate in "zrh" for kind in ("w", "u", "b")}

    def step(
        self,
        h_prev: Tensor,
        x: Tensor,
        input_mask: np.ndarray | None = None,
        recurrent_mask: np.ndarray | None = None,
    ) -> Tensor:
        """One GRU step; returns the new hidden state."""
        _check_input(x, self.input_size, "gru_step")
        if h_prev.data.shape[-1] != self.hidden_size:
            raise DimensionError(f"gru_step: state shape {h_prev.data.shape} "
                                 f"incompatible with hidden_size {self.hidden_size}")
        im = _mask_tensor(input_mask, x)
        rm = _mask_tensor(recurrent_mask, h_prev)
        x_in = ad.mul(x, im) if im is not None else x
        h_in = ad.mul(h_prev, rm) if rm is not None else h_prev
        z = ad.sigmoid(_affine(self.w_z, self.u_z, self.b_z, x_in, h_in))
        r = ad.sigmoid(_affine(self.w_r, self.u_r, self.b_r, x_in, h_in))
        cand = ad.tanh(_affine(self.w_h, self.u_h, self.b_h, x_in, ad.mul(r, h_in)))
        return ad.mul(1.0 - z, h_prev) + ad.mul(z, cand)

    def initial_state(self, batch: int | None = None) -> tuple[Tensor]:
        shape = (self.hidden_size,) if batch is None else (batch, self.hidden_size)
        return (Tensor(np.zeros(shape)),)

    def advance(self, state, x, input_mask=None, recurrent_mask=None):
        return (self.step(state[0], x, input_mask, recurrent_mask),)

    @staticmethod
    def state_output(state) -> Tensor:
        return state[0]


def lstm_step(cell: LstmCell, h_prev: Tensor, c_prev: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
    return cell.step(h_prev, c_prev, x)


def gru_step(cell: GruCell, h_prev: Tensor, x: Tensor) -> Tensor:
    return cell.step(h_prev, x)


def run_rnn(
    cell,
    inputs: Tensor,
    h0: Tensor | None = None,
    input_mask: np.ndarray | None = None,
    recurrent_mask: np.ndarray | None = None,
) -> Tensor:
    """Run a cell over a whole (n, k) sequence; returns all n hidden states.

    The masks, when given, are per-sequence (variational): the same mask
    is reused at every time step.
    """
    if inputs.data.ndim != 2:
        raise DimensionError(f"run_rnn: expected an (n, k) sequence, got shape {inputs.data.shape}")
    n = inputs.data.shape[0]
    if n < 1:
        raise ValueError("run_rnn: empty sequence")
    state = cell.initial_state(batch=1)
    if h0 is not None:
        state = (ad.reshape(h0, (1, cell.hidden_size)),) + state[1:]
    states = []
    for t in range(n):
        x_t = ad.slice_rows(inputs, t, t + 1)
        state = cell.advance(state, x_t, input_mask, recurrent_mask)
        states.append(cell.state_output(state))
    return ad.concat(states, axis=0)
