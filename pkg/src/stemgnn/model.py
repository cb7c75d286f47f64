"""StemGNN blocks, the two-block residual network and its output layer.

Internal layout for block inputs is ``(batch, channel, node, time)``.  Public
functions also accept the unbatched ``(channel, node, time)`` form.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import spectral
from . import tensor as T
from .correlation import AttentionParams, GruParams, latent_correlation
from .errors import ConfigurationError, DimensionError
from .params import flatten, uniform
from .spectral import ComplexMatrix, SpectralBasis
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_nodes: int
    window: int
    horizon: int = 1
    channels: int = 64
    basis: int = 16
    attn_dim: int = 32
    hidden_dim: int = 32
    kernel_size: int = 3
    tied_gate: bool = False

    def __post_init__(self):
        for name in ("n_nodes", "window", "horizon", "channels", "basis",
                     "attn_dim", "hidden_dim", "kernel_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel_size must be odd")


@dataclass(frozen=True)
class AblationFlags:
    no_lc: bool = False
    no_spe_seq: bool = False
    no_dft: bool = False
    no_gft: bool = False
    no_residual: bool = False
    no_backcast: bool = False


VARIANTS: dict[str, AblationFlags] = {
    "StemGNN": AblationFlags(),
    "w/o LC": AblationFlags(no_lc=True),
    "w/o Spe-Seq Cell": AblationFlags(no_spe_seq=True),
    "w/o DFT": AblationFlags(no_dft=True),
    "w/o GFT": AblationFlags(no_gft=True),
    "w/o Residual": AblationFlags(no_residual=True),
    "w/o Backcasting": AblationFlags(no_backcast=True),
}


# --------------------------------------------------------------------------
# parameters


@dataclass
class SpeSeqPart:
    value_w: Tensor
    value_b: Tensor
    gate_w: Tensor
    gate_b: Tensor


@dataclass
class SpeSeqParams:
    real: SpeSeqPart
    imag: SpeSeqPart


@dataclass
class GraphConvKernel:
    theta: Tensor  # (C_in, C_out, N): one coefficient per eigen-index


@dataclass
class Head:
    coeff_w: Tensor  # (C*N*K, B)
    coeff_b: Tensor  # (B,)
    basis: Tensor    # (D_out, B)


@dataclass
class BlockParams:
    spe_seq: SpeSeqParams
    graph_kernel: GraphConvKernel
    forecast: Head
    backcast: Head


@dataclass
class ChannelLift:
    weight: Tensor  # (C,)
    bias: Tensor    # (C,)


@dataclass
class OutputLayer:
    value_w: Tensor
    value_b: Tensor
    gate_w: Tensor
    gate_b: Tensor
    out_w: Tensor
    out_b: Tensor


@dataclass
class NetworkParams:
    gru: GruParams
    attn: AttentionParams
    lift: ChannelLift
    block1: BlockParams
    block2: BlockParams
    output: OutputLayer
    config: ModelConfig = field(compare=False)

    def named(self) -> dict[str, Tensor]:
        return flatten(self)

    def count(self) -> int:
        return sum(t.data.size for t in flatten(self).values())


def _init_part(rng, C: int, tau: int) -> SpeSeqPart:
    fan = C * tau
    return SpeSeqPart(uniform(rng, (C, C, tau), fan), uniform(rng, (C,), fan),
                      uniform(rng, (C, C, tau), fan), uniform(rng, (C,), fan))


def _init_head(rng, d_in: int, d_out: int, B: int) -> Head:
    return Head(uniform(rng, (d_in, B), d_in), uniform(rng, (B,), d_in),
                uniform(rng, (d_out, B), B))


def _init_block(rng, cfg: ModelConfig) -> BlockParams:
    C, N, K = cfg.channels, cfg.n_nodes, cfg.window
    return BlockParams(
        spe_seq=SpeSeqParams(_init_part(rng, C, cfg.kernel_size),
                             _init_part(rng, C, cfg.kernel_size)),
        graph_kernel=GraphConvKernel(uniform(rng, (C, C, N), C)),
        forecast=_init_head(rng, C * N * K, N * cfg.horizon, cfg.basis),
        backcast=_init_head(rng, C * N * K, N * K, cfg.basis),
    )


def init_params(cfg: ModelConfig, seed: int | np.random.Generator = 0) -> NetworkParams:
    """Uniform(+-1/sqrt(fan_in)) initialisation, deterministic in ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    D = cfg.n_nodes * cfg.horizon
    gru = GruParams.init(rng, cfg.hidden_dim)
    attn = AttentionParams.init(rng, cfg.hidden_dim, cfg.attn_dim)
    lift = ChannelLift(uniform(rng, (cfg.channels,), 1), uniform(rng, (cfg.channels,), 1))
    block1 = _init_block(rng, cfg)
    block2 = _init_block(rng, cfg)
    output = OutputLayer(uniform(rng, (D, D), D), uniform(rng, (D,), D),
                         uniform(rng, (D, D), D), uniform(rng, (D,), D),
                         uniform(rng, (D, D), D), uniform(rng, (D,), D))
    return NetworkParams(gru, attn, lift, block1, block2, output, cfg)


# --------------------------------------------------------------------------
# operations


def glu(value: Tensor, gate: Tensor) -> Tensor:
    return T.mul(value, T.sigmoid(gate))


def _batched(X: Tensor, ndim: int) -> tuple[Tensor, bool]:
    if X.ndim == ndim - 1:
        return T.reshape(X, (1,) + X.shape), True
    if X.ndim != ndim:
        raise DimensionError(f"expected {ndim - 1} or {ndim} axes, got shape {X.shape}")
    return X, False


def _unbatch(X: Tensor, squeeze: bool) -> Tensor:
    return T.reshape(X, X.shape[1:]) if squeeze else X


def _glu_conv(part: SpeSeqPart, x: Tensor, tied_gate: bool) -> Tensor:
    value = T.conv1d_same(x, part.value_w, part.value_b)
    gate = value if tied_gate else T.conv1d_same(x, part.gate_w, part.gate_b)
    return glu(value, gate)


def spe_seq_cell(params: SpeSeqParams, X: Tensor, *, use_dft: bool = True,
                 tied_gate: bool = False) -> Tensor:
    """DFT -> per-part conv+GLU -> IDFT on every (channel, node) series.

    With ``use_dft=False`` the real-part convolutions act on the series in the
    time domain and the imaginary-part parameters are unused.
    """
    if X.ndim < 3:
        raise DimensionError(f"spe_seq_cell needs (..., C, N, K), got {X.shape}")
    xt = T.swapaxes(X, -3, -2)  # conv wants channels next to time
    if use_dft:
        F = spectral.dft_dense(xt)
        re = _glu_conv(params.real, F.re, tied_gate)
        im = _glu_conv(params.imag, F.im, tied_gate)
        out = spectral.idft_dense(ComplexMatrix(re, im))
    else:
        out = _glu_conv(params.real, xt, tied_gate)
    return T.swapaxes(out, -3, -2)


def spectral_graph_conv(basis: SpectralBasis, kernel: GraphConvKernel, X: Tensor,
                        cell: Callable[[Tensor], Tensor] | None = None) -> Tensor:
    """``Z_j = IGFT(sum_i diag(theta[i, j]) S(GFT(X_i)))``.

    ``cell`` is the temporal operator ``S`` applied in the graph-spectral
    domain; ``None`` means identity.
    """
    Xb, squeeze = _batched(X, 4)
    c_in, c_out, n = kernel.theta.shape
    if Xb.shape[1] != c_in or Xb.shape[2] != n or basis.n != n:
        raise DimensionError(
            f"graph conv: kernel {kernel.theta.shape}, basis {basis.n}, input {X.shape}")
    Xh = spectral.gft(basis, Xb)
    if cell is not None:
        Xh = cell(Xh)
    Yh = T.contract("ijn,bink->bjnk", kernel.theta, Xh)
    return _unbatch(spectral.igft(basis, Yh), squeeze)


def _head(head: Head, flat: Tensor, out_shape: tuple[int, ...]) -> Tensor:
    theta = T.add_bias(T.matmul(flat, head.coeff_w), head.coeff_b)
    out = T.matmul(theta, T.transpose(head.basis))
    return T.reshape(out, out_shape)


def block_forward(params: BlockParams, basis: SpectralBasis, X: Tensor,
                  ablation: AblationFlags = AblationFlags(), tied_gate: bool = False,
                  ) -> tuple[Tensor, Tensor]:
    """One StemGNN block on ``(batch, C, N, K)``; returns (backcast, forecast)."""
    Xb, squeeze = _batched(X, 4)
    bsz, C, N, K = Xb.shape
    h_out = params.forecast.basis.shape[0] // N
    cell = None
    if not ablation.no_spe_seq:
        def cell(z):
            return spe_seq_cell(params.spe_seq, z, use_dft=not ablation.no_dft,
                                tied_gate=tied_gate)
    Z = spectral_graph_conv(basis, params.graph_kernel, Xb, cell)
    flat = T.reshape(Z, (bsz, C * N * K))
    backcast = _head(params.backcast, flat, (bsz, N, K))
    forecast = _head(params.forecast, flat, (bsz, N, h_out))
    return _unbatch(backcast, squeeze), _unbatch(forecast, squeeze)


def lift_channels(lift: ChannelLift, X: Tensor) -> Tensor:
    """``(batch, N, K) -> (batch, C, N, K)`` by a learned 1x1 map."""
    C = lift.weight.shape[0]
    out = T.contract("c,bnk->bcnk", lift.weight, X)
    return T.add_bias(out, T.reshape(lift.bias, (C, 1, 1)))


def output_layer(out: OutputLayer, y: Tensor) -> Tensor:
    """GLU of two affine maps, then a final affine map, on flattened forecasts."""
    shape = y.shape
    flat = T.reshape(y, (shape[0], -1))
    value = T.add_bias(T.matmul(flat, out.value_w), out.value_b)
    gate = T.add_bias(T.matmul(flat, out.gate_w), out.gate_b)
    res = T.add_bias(T.matmul(glu(value, gate), out.out_w), out.out_b)
    return T.reshape(res, shape)


@dataclass
class ForwardResult:
    backcast: Tensor
    forecast: Tensor
    W: Tensor | None
    basis: SpectralBasis


def graph_basis(params: NetworkParams, X: Tensor, ablation: AblationFlags,
                graph_override: Tensor | None = None) -> tuple[Tensor | None, SpectralBasis]:
    """Adjacency and spectral basis for a batch of windows ``(batch, N, K)``."""
    N = X.shape[-2]
    if graph_override is not None and graph_override.shape[-2:] != (N, N):
        raise DimensionError(f"graph override {graph_override.shape} does not match N={N}")
    if ablation.no_lc and graph_override is None:
        raise ConfigurationError("the w/o LC variant needs a predefined adjacency")
    if ablation.no_gft:
        return graph_override, SpectralBasis.identity(N)
    if graph_override is not None:
        W = graph_override
    else:
        W = latent_correlation(params.gru, params.attn, X)
    basis = spectral.jacobi_eigh(spectral.normalized_laplacian(W))
    return W, basis


def network_forward(params: NetworkParams, X: Tensor, graph_override: Tensor | None = None,
                    ablation: AblationFlags = AblationFlags(),
                    basis: SpectralBasis | None = None) -> ForwardResult:
    """Full forward pass on windows ``(N, K)`` or ``(batch, N, K)``.

    ``basis`` short-circuits the graph path (used for frozen-graph training).
    """
    Xb, squeeze = _batched(X, 3)
    cfg = params.config
    if Xb.shape[1:] != (cfg.n_nodes, cfg.window):
        raise DimensionError(
            f"input {X.shape} does not match (N={cfg.n_nodes}, K={cfg.window})")
    if basis is None:
        W, basis = graph_basis(params, Xb, ablation, graph_override)
    else:
        W = graph_override
    tied = cfg.tied_gate
    bc1, fc1 = block_forward(params.block1, basis, lift_channels(params.lift, Xb), ablation, tied)
    if ablation.no_residual:
        backcast, fc_pre = bc1, fc1
    else:
        resid = T.sub(Xb, bc1)
        bc2, fc2 = block_forward(params.block2, basis, lift_channels(params.lift, resid),
                                 ablation, tied)
        backcast, fc_pre = T.add(bc1, bc2), T.add(fc1, fc2)
    forecast = output_layer(params.output, fc_pre)
    if squeeze:
        backcast, forecast = _unbatch(backcast, True), _unbatch(forecast, True)
        if W is not None and W.ndim == 3:
            W = _unbatch(W, True)
    return ForwardResult(backcast, forecast, W, basis)


def with_config(params: NetworkParams, **changes) -> NetworkParams:
    return replace(params, config=replace(params.config, **changes))
