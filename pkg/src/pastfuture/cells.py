"""Recurrent cell updates: GRU, the subtractive Future variants, and the Past update."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

INIT_SCALE = 0.08


class ConfigurationError(ValueError):
    """Model configuration and supplied parameters/states disagree."""


class FutureCellKind(str, enum.Enum):
    GRU = "gru"
    GRU_O = "gru-o"
    GRU_I = "gru-i"


def uniform(rng: np.random.Generator, shape, scale: float = INIT_SCALE) -> Tensor:
    return T.parameter(rng.uniform(-scale, scale, size=shape))


def orthogonal(rng: np.random.Generator, n: int) -> Tensor:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return T.parameter(q * np.sign(np.diag(r)))


def zeros(*shape) -> Tensor:
    return T.parameter(np.zeros(shape))


@dataclass
class GruParams:
    U: Tensor
    W: Tensor
    b: Tensor
    U_r: Tensor
    W_r: Tensor
    b_r: Tensor
    U_u: Tensor
    W_u: Tensor
    b_u: Tensor

    @property
    def state_dim(self) -> int:
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, m: int) -> "GruParams":
        return cls(
            U=orthogonal(rng, d), W=uniform(rng, (d, m)), b=zeros(d),
            U_r=orthogonal(rng, d), W_r=uniform(rng, (d, m)), b_r=zeros(d),
            U_u=orthogonal(rng, d), W_u=uniform(rng, (d, m)), b_u=zeros(d),
        )


@dataclass
class GruOParams:
    gru: GruParams
    U_m: Tensor
    W_m: Tensor
    b_m: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, m: int) -> "GruOParams":
        # the inner GRU consumes M, which lives in the state space
        return cls(GruParams.init(rng, d, d), orthogonal(rng, d), uniform(rng, (d, m)), zeros(d))


@dataclass
class GruIParams:
    """GRU-i weights plus an optional context projection when ``m != d``."""

    gru: GruParams
    W_c: Tensor | None = None

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, m: int) -> "GruIParams":
        proj = uniform(rng, (d, m)) if m != d else None
        return cls(GruParams.init(rng, d, d), proj)


def _check(p: GruParams, s_prev: Tensor, x: Tensor, input_dim: int | None = None) -> None:
    d = p.state_dim
    m = p.input_dim if input_dim is None else input_dim
    if s_prev.shape[-1] != d or x.shape[-1] != m:
        raise DimensionError(
            f"cell expects state dim {d} and input dim {m}, got {s_prev.shape} and {x.shape}"
        )


def _sig(a: np.ndarray) -> np.ndarray:
    return 0.5 + 0.5 * np.tanh(0.5 * a)


def _gru_kernel(p: GruParams, s_prev: Tensor, x: Tensor, inside_minus: bool) -> Tensor:
    """One fused GRU update with its hand-derived backward rule.

    Standard:  cand = tanh(U (r*s) + W x + b)
    Inside minus (GRU-i):  cand = tanh(U s - W (r*x) + b)
    Both:  s' = u*s + (1-u)*cand with r, u = sigmoid(U_* s + W_* x + b_*).
    """
    lead = s_prev.shape[:-1]
    d, m = p.state_dim, p.input_dim
    s = s_prev.data.reshape(-1, d)
    xx = x.data.reshape(-1, m)
    if s.shape[0] != xx.shape[0]:
        raise DimensionError(f"cell state {s_prev.shape} and input {x.shape} disagree on batch shape")
    U, W = p.U.data, p.W.data
    r = _sig(s @ p.U_r.data.T + xx @ p.W_r.data.T + p.b_r.data)
    u = _sig(s @ p.U_u.data.T + xx @ p.W_u.data.T + p.b_u.data)
    if inside_minus:
        rx = r * xx
        cand = np.tanh(s @ U.T - rx @ W.T + p.b.data)
    else:
        rs = r * s
        cand = np.tanh(rs @ U.T + xx @ W.T + p.b.data)
    out = u * s + (1.0 - u) * cand

    def backward(g):
        g = g.reshape(-1, d)
        da_c = g * (1.0 - u) * (1.0 - cand * cand)
        da_u = g * (s - cand) * u * (1.0 - u)
        ds = g * u + da_u @ p.U_u.data
        dx = da_u @ p.W_u.data
        if inside_minus:
            dU = da_c.T @ s
            ds = ds + da_c @ U
            drx = -(da_c @ W)
            dW = -(da_c.T @ rx)
            dr = drx * xx
            dx = dx + drx * r
        else:
            dU = da_c.T @ rs
            drs = da_c @ U
            dr = drs * s
            ds = ds + drs * r
            dW = da_c.T @ xx
            dx = dx + da_c @ W
        da_r = dr * r * (1.0 - r)
        ds = ds + da_r @ p.U_r.data
        dx = dx + da_r @ p.W_r.data
        return (
            ds.reshape(s_prev.shape), dx.reshape(x.shape),
            dU, dW, da_c.sum(axis=0),
            da_r.T @ s, da_r.T @ xx, da_r.sum(axis=0),
            da_u.T @ s, da_u.T @ xx, da_u.sum(axis=0),
        )

    inputs = (s_prev, x, p.U, p.W, p.b, p.U_r, p.W_r, p.b_r, p.U_u, p.W_u, p.b_u)
    return T.record_op(out.reshape(lead + (d,)), inputs, backward)


def gru_step(p: GruParams, s_prev: Tensor, x: Tensor) -> Tensor:
    _check(p, s_prev, x)
    return _gru_kernel(p, s_prev, x, inside_minus=False)


def gru_o_step(p: GruOParams, s_prev: Tensor, c: Tensor) -> Tensor:
    """Outside minus: feed ``M = tanh(U_m s - W_m c + b_m)`` to a GRU."""
    if c.shape[-1] != p.W_m.shape[1] or s_prev.shape[-1] != p.U_m.shape[0]:
        raise DimensionError(f"gru-o: state {s_prev.shape} / context {c.shape} vs W_m {p.W_m.shape}")
    minus = T.tanh(T.linear(s_prev, p.U_m, p.b_m) - T.linear(c, p.W_m))
    return gru_step(p.gru, s_prev, minus)


def gru_i_step(p: GruParams, s_prev: Tensor, c: Tensor) -> Tensor:
    """Inside minus; the reset gate filters the input instead of the state."""
    _check(p, s_prev, c)
    if p.input_dim != p.state_dim:
        raise DimensionError(f"gru-i needs input dim == state dim, got {p.input_dim} != {p.state_dim}")
    return _gru_kernel(p, s_prev, c, inside_minus=True)


def future_step(kind: FutureCellKind, params, s_prev: Tensor, c: Tensor) -> Tensor:
    kind = FutureCellKind(kind)
    if kind is FutureCellKind.GRU and isinstance(params, GruParams):
        return gru_step(params, s_prev, c)
    if kind is FutureCellKind.GRU_O and isinstance(params, GruOParams):
        return gru_o_step(params, s_prev, c)
    if kind is FutureCellKind.GRU_I and isinstance(params, GruIParams):
        if params.W_c is not None:
            c = T.linear(c, params.W_c)
        return gru_i_step(params.gru, s_prev, c)
    raise ConfigurationError(f"Future cell {kind.value} cannot use {type(params).__name__}")


def init_future(kind: FutureCellKind, rng: np.random.Generator, d: int, m: int):
    kind = FutureCellKind(kind)
    if kind is FutureCellKind.GRU:
        return GruParams.init(rng, d, m)
    if kind is FutureCellKind.GRU_O:
        return GruOParams.init(rng, d, m)
    return GruIParams.init(rng, d, m)


def past_step(p: GruParams, s_prev: Tensor, c: Tensor) -> Tensor:
    return gru_step(p, s_prev, c)
