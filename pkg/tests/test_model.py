import dataclasses

import numpy as np
import pytest

from conftest import rel_err
from stemgnn import spectral as S
from stemgnn import tensor as T
from stemgnn.errors import ConfigurationError, DimensionError
from stemgnn.model import (VARIANTS, AblationFlags, GraphConvKernel, ModelConfig, block_forward,
                           glu, init_params, network_forward, spe_seq_cell, spectral_graph_conv)
from stemgnn.params import flatten, rebuild
from stemgnn.tensor import Tensor


def cfg(**kw):
    base = dict(n_nodes=4, window=8, channels=3, basis=5, attn_dim=4, hidden_dim=4)
    base.update(kw)
    return ModelConfig(**base)


def identity_spe_seq(params, prefix, C, tau=3):
    """Delta value kernels and saturated gates: the cell passes its input through."""
    delta = np.zeros((C, C, tau))
    delta[np.arange(C), np.arange(C), tau // 2] = 1.0
    vals = {}
    for part in ("real", "imag"):
        p = f"{prefix}.{part}"
        vals.update({f"{p}.value_w": delta, f"{p}.value_b": np.zeros(C),
                     f"{p}.gate_w": np.zeros((C, C, tau)), f"{p}.gate_b": np.full(C, 1e6)})
    return rebuild(params, vals)


# --- glu -------------------------------------------------------------------------

def test_glu_zero_value():
    assert np.array_equal(glu(Tensor([0.0, 0.0]), Tensor([3.0, -1.0])).data, [0, 0])


def test_glu_saturated_gate():
    assert abs(glu(Tensor([2.5]), Tensor([1e6])).data[0] - 2.5) < 1e-9


def test_glu_half_gate():
    assert glu(Tensor([2.0]), Tensor([0.0])).data[0] == 1.0


def test_glu_shape_mismatch():
    with pytest.raises(DimensionError):
        glu(Tensor([1.0, 2.0]), Tensor([1.0]))


# --- spe-seq cell ---------------------------------------------------------------------

def test_spe_seq_zero_in_zero_out():
    p = init_params(cfg(), 0)
    sp = rebuild(p.block1.spe_seq, {"real.value_b": np.zeros(3), "imag.value_b": np.zeros(3)})
    out = spe_seq_cell(sp, Tensor(np.zeros((3, 4, 8))))
    assert np.array_equal(out.data, np.zeros((3, 4, 8)))


def test_spe_seq_identity_configuration(rng):
    p = identity_spe_seq(init_params(cfg(), 0), "block1.spe_seq", 3)
    X = rng.normal(size=(3, 4, 8))
    out = spe_seq_cell(p.block1.spe_seq, Tensor(X)).data
    assert np.max(np.abs(out - X)) < 1e-6


def test_spe_seq_gradients_match_fd(rng):
    c = cfg(channels=2, n_nodes=3)
    sp = init_params(c, 1).block1.spe_seq
    X = Tensor(rng.normal(size=(2, 3, 8)))
    w = rng.normal(size=(2, 3, 8))
    names = flatten(sp)

    def loss(params):
        return T.sum_all(T.mul(spe_seq_cell(params, X), Tensor(w)))

    with T.Tape() as tape:
        out = loss(sp)
    T.backward(tape, out)
    analytic = tape.gradients(names)
    numeric = T.finite_difference_gradient(lambda v: float(loss(rebuild(sp, v)).data),
                                           {k: t.data for k, t in names.items()})
    for k in names:
        assert rel_err(analytic[k], numeric[k]) < 1e-5, k


def test_spe_seq_tied_gate_uses_value_path(rng):
    sp = init_params(cfg(), 2).block1.spe_seq
    X = Tensor(rng.normal(size=(3, 4, 8)))
    tied = spe_seq_cell(sp, X, tied_gate=True).data
    copied = rebuild(sp, {"real.gate_w": sp.real.value_w.data, "real.gate_b": sp.real.value_b.data,
                          "imag.gate_w": sp.imag.value_w.data, "imag.gate_b": sp.imag.value_b.data})
    assert np.array_equal(tied, spe_seq_cell(copied, X).data)


# --- spectral graph conv ----------------------------------------------------------------

def _basis(rng, n):
    w = rng.uniform(0.1, 1, size=(n, n))
    return S.jacobi_eigh(S.normalized_laplacian(Tensor((w + w.T) / 2)))


def test_graph_conv_identity_filter(rng):
    b = _basis(rng, 5)
    X = rng.normal(size=(1, 5, 6))
    Z = spectral_graph_conv(b, GraphConvKernel(Tensor(np.ones((1, 1, 5)))), Tensor(X)).data
    assert np.max(np.abs(Z - X)) < 1e-10


def test_graph_conv_zero_filter(rng):
    b = _basis(rng, 5)
    Z = spectral_graph_conv(b, GraphConvKernel(Tensor(np.zeros((1, 1, 5)))),
                            Tensor(rng.normal(size=(1, 5, 6)))).data
    assert np.array_equal(Z, np.zeros((1, 5, 6)))


def test_graph_conv_channel_sum(rng):
    b = _basis(rng, 4)
    X = rng.normal(size=(2, 4, 6))
    Z = spectral_graph_conv(b, GraphConvKernel(Tensor(np.ones((2, 1, 4)))), Tensor(X)).data
    assert np.max(np.abs(Z[0] - (X[0] + X[1]))) < 1e-10


def test_graph_conv_matches_dense_formula(rng):
    b = _basis(rng, 4)
    X, theta = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 2, 4))
    U = b.U.data
    ref = np.stack([U @ sum(np.diag(theta[i, j]) @ U.T @ X[i] for i in range(3)) for j in range(2)])
    Z = spectral_graph_conv(b, GraphConvKernel(Tensor(theta)), Tensor(X)).data
    assert np.max(np.abs(Z - ref)) < 1e-12


def test_graph_conv_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        spectral_graph_conv(_basis(rng, 4), GraphConvKernel(Tensor(np.ones((1, 1, 3)))),
                            Tensor(np.zeros((1, 4, 6))))


# --- block ----------------------------------------------------------------------------

def test_block_identity_fixture(rng):
    N, K, C = 3, 4, 2
    c = cfg(n_nodes=N, window=K, channels=C, basis=N * K)
    p = identity_spe_seq(init_params(c, 0), "block1.spe_seq", C)
    theta = np.zeros((C, C, N))
    theta[np.arange(C), np.arange(C)] = 1.0
    coeff = np.zeros((C * N * K, N * K))
    coeff[: N * K] = np.eye(N * K)  # select channel 0 of the flattened Z
    p = rebuild(p, {"block1.graph_kernel.theta": theta, "block1.backcast.coeff_w": coeff,
                    "block1.backcast.coeff_b": np.zeros(N * K),
                    "block1.backcast.basis": np.eye(N * K)})
    X = rng.normal(size=(1, C, N, K))
    backcast, _ = block_forward(p.block1, _basis(rng, N), Tensor(X))
    assert np.max(np.abs(backcast.data[0] - X[0, 0])) < 1e-6


def test_block_zero_input_zero_bias(rng):
    c = cfg()
    p = init_params(c, 0)
    zeros = {k: np.zeros(t.shape) for k, t in flatten(p.block1).items() if k.endswith("_b")}
    blk = rebuild(p.block1, zeros)
    _, forecast = block_forward(blk, _basis(rng, 4), Tensor(np.zeros((1, 3, 4, 8))))
    assert np.array_equal(forecast.data, np.zeros((1, 4, 1)))


def test_block_shapes(rng):
    c = cfg(n_nodes=5, window=12, channels=4, basis=16)
    p = init_params(c, 3)
    bc, fc = block_forward(p.block1, _basis(rng, 5), Tensor(rng.normal(size=(4, 5, 12))))
    assert bc.shape == (5, 12) and fc.shape == (5, 1)


# --- network --------------------------------------------------------------------------

def single_node_oracle(p, x):
    """Independent numpy pipeline for N=1 with an identity graph basis."""
    P = {k: t.data for k, t in p.named().items()}
    C = p.config.channels
    K = len(x)

    def conv(z, w, b):  # z: (C, K)
        tau = w.shape[2]
        pad = tau // 2
        zp = np.pad(z, ((0, 0), (pad, pad)))
        return np.array([[b[o] + sum(w[o, i, s] * zp[i, t + s] for i in range(C) for s in range(tau))
                          for t in range(K)] for o in range(C)])

    def gluconv(prefix, z):
        v = conv(z, P[prefix + ".value_w"], P[prefix + ".value_b"])
        g = conv(z, P[prefix + ".gate_w"], P[prefix + ".gate_b"])
        return v / (1 + np.exp(-g))

    def block(name, series):
        lifted = P["lift.weight"][:, None] * series[None, :] + P["lift.bias"][:, None]
        spec = np.fft.fft(lifted, axis=-1)
        re = gluconv(f"{name}.spe_seq.real", spec.real)
        im = gluconv(f"{name}.spe_seq.imag", spec.imag)
        cell = np.fft.ifft(re + 1j * im, axis=-1).real
        theta = P[f"{name}.graph_kernel.theta"][:, :, 0]
        Z = theta.T @ cell  # (C_out, K)
        flat = Z.reshape(-1)
        out = {}
        for head in ("backcast", "forecast"):
            coeff = flat @ P[f"{name}.{head}.coeff_w"] + P[f"{name}.{head}.coeff_b"]
            out[head] = P[f"{name}.{head}.basis"] @ coeff
        return out["backcast"], out["forecast"]

    bc1, fc1 = block("block1", x)
    bc2, fc2 = block("block2", x - bc1)
    y = fc1 + fc2
    v = y @ P["output.value_w"] + P["output.value_b"]
    g = y @ P["output.gate_w"] + P["output.gate_b"]
    return bc1 + bc2, (v / (1 + np.exp(-g))) @ P["output.out_w"] + P["output.out_b"]


def test_without_gft_single_node_matches_hand_wired_pipeline(rng):
    p = init_params(cfg(n_nodes=1, window=8, channels=3, basis=4), 11)
    x = rng.normal(size=8)
    res = network_forward(p, Tensor(x[None, :]), ablation=VARIANTS["w/o GFT"])
    bc, fc = single_node_oracle(p, x)
    assert np.max(np.abs(res.forecast.data[0] - fc)) < 1e-8
    assert np.max(np.abs(res.backcast.data[0] - bc)) < 1e-8


def test_without_residual_ignores_block2(rng):
    p = init_params(cfg(), 4)
    X = Tensor(rng.normal(size=(2, 4, 8)))
    flags = VARIANTS["w/o Residual"]
    a = network_forward(p, X, ablation=flags)
    scrambled = dataclasses.replace(p, block2=rebuild(p.block2, {
        k: rng.normal(size=t.shape) for k, t in flatten(p.block2).items()}))
    b = network_forward(scrambled, X, ablation=flags)
    assert np.array_equal(a.forecast.data, b.forecast.data)
    assert np.array_equal(a.backcast.data, b.backcast.data)


def test_full_forward_smoke(rng):
    p = init_params(cfg(), 5)
    res = network_forward(p, Tensor(rng.normal(size=(4, 8))))
    assert np.all(np.isfinite(res.forecast.data)) and np.all(np.isfinite(res.backcast.data))
    assert res.forecast.shape == (4, 1) and res.backcast.shape == (4, 8)
    assert np.array_equal(res.W.data, res.W.data.T)


def test_batch_matches_single_windows(rng):
    p = init_params(cfg(), 6)
    X = rng.normal(size=(3, 4, 8))
    batch = network_forward(p, Tensor(X)).forecast.data
    for i in range(3):
        assert np.allclose(batch[i], network_forward(p, Tensor(X[i])).forecast.data, atol=1e-12)


def test_without_lc_needs_graph():
    p = init_params(cfg(), 0)
    with pytest.raises(ConfigurationError):
        network_forward(p, Tensor(np.zeros((4, 8))), ablation=VARIANTS["w/o LC"])


def test_graph_override_shape_mismatch():
    p = init_params(cfg(), 0)
    with pytest.raises(DimensionError):
        network_forward(p, Tensor(np.zeros((4, 8))), graph_override=Tensor(np.eye(3)),
                        ablation=VARIANTS["w/o LC"])


def test_graph_override_is_used(rng):
    p = init_params(cfg(), 0)
    W = rng.uniform(0.1, 1, size=(4, 4))
    W = (W + W.T) / 2
    X = Tensor(rng.normal(size=(4, 8)))
    a = network_forward(p, X, graph_override=Tensor(W), ablation=VARIANTS["w/o LC"])
    b = network_forward(p, X, basis=S.jacobi_eigh(S.normalized_laplacian(Tensor(W))))
    assert np.array_equal(a.forecast.data, b.forecast.data)


def test_variant_labels():
    assert list(VARIANTS) == ["StemGNN", "w/o LC", "w/o Spe-Seq Cell", "w/o DFT", "w/o GFT",
                              "w/o Residual", "w/o Backcasting"]


def test_flag_toggled_twice_is_bit_identical(rng):
    p = init_params(cfg(), 7)
    X = Tensor(rng.normal(size=(2, 4, 8)))
    base = AblationFlags()
    for f in dataclasses.fields(AblationFlags):
        if f.name == "no_lc":
            continue
        on = dataclasses.replace(base, **{f.name: True})
        off = dataclasses.replace(on, **{f.name: False})
        assert off == base
        assert np.array_equal(network_forward(p, X, ablation=off).forecast.data,
                              network_forward(p, X, ablation=base).forecast.data)


def test_every_variant_runs(rng):
    p = init_params(cfg(), 8)
    X = Tensor(rng.normal(size=(2, 4, 8)))
    graph = Tensor(np.full((4, 4), 0.25))
    outs = {}
    for label, flags in VARIANTS.items():
        res = network_forward(p, X, graph_override=graph if flags.no_lc else None, ablation=flags)
        assert np.all(np.isfinite(res.forecast.data))
        outs[label] = res.forecast.data
    assert not np.array_equal(outs["StemGNN"], outs["w/o Spe-Seq Cell"])
    assert not np.array_equal(outs["StemGNN"], outs["w/o DFT"])
    # backcasting only changes the loss, not the forward pass
    assert np.array_equal(outs["StemGNN"], outs["w/o Backcasting"])


def test_permutation_equivariance_on_symmetric_fixture(rng):
    N, K, C, B = 4, 6, 2, 3
    c = cfg(n_nodes=N, window=K, channels=C, basis=B)
    p = init_params(c, 9)
    vals = {}
    for blk in ("block1", "block2"):
        for head, d_out in (("forecast", N), ("backcast", N * K)):
            # node-independent coefficients and bases
            per = rng.normal(size=(C, 1, K, B)) * 0.3
            vals[f"{blk}.{head}.coeff_w"] = np.broadcast_to(per, (C, N, K, B)).reshape(C * N * K, B)
            steps = d_out // N
            base = rng.normal(size=(1, steps, B))
            vals[f"{blk}.{head}.basis"] = np.broadcast_to(base, (N, steps, B)).reshape(d_out, B)
    for name in ("value_w", "gate_w", "out_w"):
        a, b = rng.normal(size=2)
        vals[f"output.{name}"] = a * np.eye(N) + b * np.ones((N, N)) / N
    for name in ("value_b", "gate_b", "out_b"):
        vals[f"output.{name}"] = np.full(N, rng.normal())
    p = rebuild(p, vals)
    X = rng.normal(size=(N, K))
    perm = rng.permutation(N)
    a = network_forward(p, Tensor(X))
    b = network_forward(p, Tensor(X[perm]))
    assert np.allclose(b.forecast.data, a.forecast.data[perm], atol=1e-10)
    assert np.allclose(b.backcast.data, a.backcast.data[perm], atol=1e-10)


def test_random_forwards_stay_finite():
    c = cfg(n_nodes=3, window=6, channels=2, basis=3, attn_dim=3, hidden_dim=3)
    rng = np.random.default_rng(0)
    trials = 0
    for seed in range(100):
        p = init_params(c, seed)
        scale = 10.0 ** rng.uniform(-3, 3, size=(10, 1, 1))
        X = rng.normal(size=(10, 3, 6)) * scale
        res = network_forward(p, Tensor(X))
        assert np.all(np.isfinite(res.forecast.data)) and np.all(np.isfinite(res.backcast.data))
        trials += len(X)
    assert trials == 1000


def test_init_is_deterministic():
    a, b = init_params(cfg(), 3), init_params(cfg(), 3)
    assert all(np.array_equal(t.data, b.named()[k].data) for k, t in a.named().items())
    assert not np.array_equal(a.block1.graph_kernel.theta.data,
                              init_params(cfg(), 4).block1.graph_kernel.theta.data)


def test_model_config_rejects_even_kernel():
    with pytest.raises(ConfigurationError):
        cfg(kernel_size=2)
