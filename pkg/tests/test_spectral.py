import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import rel_err
from stemgnn import spectral as S
from stemgnn import tensor as T
from stemgnn.errors import DimensionError, DomainError
from stemgnn.tensor import Tensor


def dft_oracle(x):
    L = len(x)
    k = np.arange(L)
    return np.array([sum(x[t] * np.exp(-2j * np.pi * kk * t / L) for t in range(L)) for kk in k])


def random_symmetric(rng, n):
    a = rng.normal(size=(n, n))
    return (a + a.T) / 2


def random_adjacency(rng, n):
    w = rng.uniform(0, 1, size=(n, n))
    w = (w + w.T) / 2
    np.fill_diagonal(w, 0)
    return w


# --- DFT ------------------------------------------------------------------------------

def test_dft_impulse_is_flat():
    X = S.dft_dense(Tensor([1, 0, 0, 0]))
    assert np.allclose(X.re.data, 1, atol=1e-15) and np.allclose(X.im.data, 0, atol=1e-15)


def test_dft_dc_only():
    X = S.dft_dense(Tensor([1, 1, 1, 1]))
    assert np.allclose(X.re.data, [4, 0, 0, 0], atol=1e-14)
    assert np.allclose(X.im.data, 0, atol=1e-14)


def test_dft_shifted_impulse_matches_direct_sum():
    x = np.array([0.0, 1.0, 0.0, 0.0])
    X = S.dft_dense(Tensor(x))
    ref = dft_oracle(x)
    assert np.allclose(X.re.data, ref.real, atol=1e-14) and np.allclose(X.im.data, ref.imag, atol=1e-14)
    assert np.allclose(X.re.data, [1, 0, -1, 0], atol=1e-14)
    assert np.allclose(X.im.data, [0, -1, 0, 1], atol=1e-14)


def test_idft_round_trip_small():
    x = [3.0, 1.0, 4.0, 1.0]
    assert np.max(np.abs(S.idft_dense(S.dft_dense(Tensor(x))).data - x)) < 1e-10


def test_idft_of_dc_is_ones():
    L = 6
    X = S.ComplexMatrix(Tensor([L] + [0] * (L - 1)), Tensor(np.zeros(L)))
    assert np.allclose(S.idft_dense(X).data, 1.0, atol=1e-14)


def test_idft_round_trip_length_32(rng):
    x = rng.normal(size=32)
    assert np.max(np.abs(S.idft_dense(S.dft_dense(Tensor(x))).data - x)) < 1e-10


def test_complex_matrix_shape_check():
    with pytest.raises(DimensionError):
        S.ComplexMatrix(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e3, 1e3)))
def test_parseval(x):
    X = S.dft_dense(Tensor(x))
    energy = np.sum(X.re.data ** 2 + X.im.data ** 2)
    expected = len(x) * np.sum(x ** 2)
    assert abs(energy - expected) <= 1e-8 * max(expected, 1e-300)


def test_dft_is_linear_on_tape(rng):
    x = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
    w = rng.normal(size=(2, 8))
    with T.Tape() as tape:
        X = S.dft_dense(x)
        loss = T.sum_all(T.mul(S.idft_dense(X), Tensor(w)))
    T.backward(tape, loss)
    assert np.allclose(tape.grad(x), w, atol=1e-12)


# --- FFT ------------------------------------------------------------------------------

def test_fft_length_one():
    X = S.fft_radix2(Tensor([5.0]))
    assert X.re.data.tolist() == [5.0] and X.im.data.tolist() == [0.0]


def test_fft_matches_dense_length_64(rng):
    x = rng.normal(size=64)
    a, b = S.fft_radix2(Tensor(x)), S.dft_dense(Tensor(x))
    assert np.max(np.abs(a.to_numpy() - b.to_numpy())) < 1e-9


def test_fft_impulse_matches_dense_exactly():
    x = Tensor([1.0, 0, 0, 0])
    assert np.array_equal(S.fft_radix2(x).re.data, S.dft_dense(x).re.data)
    assert np.array_equal(S.fft_radix2(x).im.data, S.dft_dense(x).im.data)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(DimensionError):
        S.fft_radix2(Tensor(np.zeros(6)))


@given(st.integers(0, 8), st.integers(0, 2 ** 31 - 1))
def test_fft_equals_dft_all_power_of_two_lengths(p, seed):
    x = np.random.default_rng(seed).normal(size=(3, 2 ** p))
    a, b = S.fft_radix2(x), S.dft_dense(Tensor(x))
    assert np.max(np.abs(a.to_numpy() - b.to_numpy())) < 1e-9


# --- Laplacian and symmetrize -------------------------------------------------------------

def test_laplacian_two_path():
    L = S.normalized_laplacian(Tensor([[0, 1], [1, 0]])).data
    assert np.allclose(L, [[1, -1], [-1, 1]], atol=1e-15)


def test_laplacian_self_loops_only():
    assert np.allclose(S.normalized_laplacian(Tensor(np.eye(2))).data, 0, atol=1e-15)


def test_laplacian_eigenvalues_in_range(rng):
    W = random_adjacency(rng, 5)
    lam = S.jacobi_eigh(S.normalized_laplacian(Tensor(W))).lam.data
    assert lam.min() >= -1e-9 and lam.max() <= 2 + 1e-9


def test_laplacian_rejects_negative_weights():
    with pytest.raises(DomainError):
        S.normalized_laplacian(Tensor([[0, -1], [-1, 0]]))


def test_laplacian_isolated_node_uses_zero_inverse_degree():
    W = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    L = S.normalized_laplacian(Tensor(W)).data
    assert np.all(np.isfinite(L))
    assert L[2, 2] == 1.0 and np.all(L[2, :2] == 0)


def test_laplacian_gradient(rng):
    from conftest import grad_of, numeric_grad
    W = random_adjacency(rng, 4) + 0.1
    w = rng.normal(size=(4, 4))

    def fn(x):
        return T.sum_all(T.mul(S.normalized_laplacian(x), Tensor(w)))

    (a,), (n,) = grad_of(fn, W), numeric_grad(fn, W)
    assert rel_err(a, n) < 1e-7


def test_symmetrize_example():
    assert np.array_equal(S.symmetrize(Tensor([[0, 1], [0, 0]])).data, [[0, 0.5], [0.5, 0]])


def test_symmetrize_fixed_point(rng):
    A = random_symmetric(rng, 4)
    assert np.array_equal(S.symmetrize(Tensor(A)).data, A)


def test_symmetrize_exact(rng):
    out = S.symmetrize(Tensor(rng.normal(size=(6, 6)))).data
    assert np.array_equal(out - out.T, np.zeros((6, 6)))


def test_symmetrize_non_square():
    with pytest.raises(DimensionError):
        S.symmetrize(Tensor(np.zeros((2, 3))))


@given(st.integers(2, 12), st.integers(0, 2 ** 31 - 1))
def test_connected_laplacian_null_vector(n, seed):
    rng = np.random.default_rng(seed)
    W = random_adjacency(rng, n) + 0.01
    np.fill_diagonal(W, 0)
    basis = S.jacobi_eigh(S.normalized_laplacian(Tensor(W)))
    assert abs(basis.lam.data[0]) < 1e-9
    v = np.sqrt(W.sum(axis=1))
    v /= np.linalg.norm(v)
    assert abs(abs(basis.U.data[:, 0] @ v) - 1) < 1e-9


# --- Jacobi -----------------------------------------------------------------------------

def test_jacobi_two_by_two():
    b = S.jacobi_eigh(Tensor([[2, 1], [1, 2]]))
    assert np.allclose(b.lam.data, [1, 3], atol=1e-14)
    r = 1 / np.sqrt(2)
    assert np.allclose(b.U.data[:, 0], [r, -r], atol=1e-14)
    assert np.allclose(b.U.data[:, 1], [r, r], atol=1e-14)


def test_jacobi_diagonal_input():
    b = S.jacobi_eigh(Tensor(np.diag([3.0, 1.0, 2.0])))
    assert np.array_equal(b.lam.data, [1, 2, 3])
    assert np.array_equal(b.U.data, np.eye(3)[:, [1, 2, 0]])


def test_jacobi_reconstruction_8(rng):
    A = random_symmetric(rng, 8)
    b = S.jacobi_eigh(Tensor(A))
    U, lam = b.U.data, b.lam.data
    assert np.max(np.abs(A - U @ np.diag(lam) @ U.T)) < 1e-8


def test_jacobi_rejects_asymmetric():
    with pytest.raises(DomainError):
        S.jacobi_eigh(Tensor([[1, 2], [0, 1]]))


def test_jacobi_batched_matches_single(rng):
    A = np.stack([random_symmetric(rng, 5) for _ in range(3)])
    batch = S.jacobi_eigh(Tensor(A))
    for i in range(3):
        one = S.jacobi_eigh(Tensor(A[i]))
        assert np.allclose(batch.U.data[i], one.U.data, atol=1e-12)
        assert np.allclose(batch.lam.data[i], one.lam.data, atol=1e-12)


@given(st.integers(1, 16), st.integers(0, 2 ** 31 - 1))
def test_jacobi_properties(n, seed):
    A = random_symmetric(np.random.default_rng(seed), n)
    b = S.jacobi_eigh(Tensor(A))
    U, lam = b.U.data, b.lam.data
    assert np.max(np.abs(U.T @ U - np.eye(n))) < 1e-8
    assert np.max(np.abs(A - U @ np.diag(lam) @ U.T)) < 1e-8
    assert np.all(np.diff(lam) >= 0)
    idx = np.argmax(np.abs(U), axis=0)
    assert np.all(U[idx, np.arange(n)] >= 0)
    assert np.allclose(lam, np.linalg.eigvalsh(A), atol=1e-9)


# --- eigh backward ----------------------------------------------------------------------

def test_eigh_backward_eigenvalue_cotangent():
    b = S.jacobi_eigh(Tensor([[2, 1], [1, 2]]))
    dL = S.eigh_backward(b, np.zeros((2, 2)), np.array([1.0, 0.0]))
    assert np.allclose(dL, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-14)


def test_eigh_backward_zero():
    b = S.jacobi_eigh(Tensor([[2, 1], [1, 2]]))
    assert np.array_equal(S.eigh_backward(b, np.zeros((2, 2)), np.zeros(2)), np.zeros((2, 2)))


def test_eigh_backward_gap_clamp_is_finite():
    b = S.jacobi_eigh(Tensor(np.eye(3)))
    dL = S.eigh_backward(b, np.ones((3, 3)), np.ones(3))
    assert np.all(np.isfinite(dL))


def _well_gapped(rng, n, gap=1e-3):
    while True:
        A = random_symmetric(rng, n)
        if np.min(np.diff(np.linalg.eigvalsh(A))) >= gap:
            return A


def test_eigh_chain_matches_fd(rng):
    A = _well_gapped(rng, 4)
    wU, wl = rng.normal(size=(4, 4)), rng.normal(size=4)

    def f_tensor(L):
        b = S.jacobi_eigh(S.symmetrize(L))
        return T.add(T.sum_all(T.mul(b.U, Tensor(wU))), T.sum_all(T.mul(b.lam, Tensor(wl))))

    from conftest import grad_of, numeric_grad
    (a,), (n,) = grad_of(f_tensor, A), numeric_grad(f_tensor, A)
    assert rel_err(a, n) < 1e-4


# --- GFT --------------------------------------------------------------------------------

def test_gft_constant_signal_on_two_path():
    b = S.jacobi_eigh(S.normalized_laplacian(Tensor([[0, 1], [1, 0]])))
    out = S.gft(b, Tensor([[1.0], [1.0]])).data
    assert np.allclose(out, [[np.sqrt(2)], [0]], atol=1e-14)


def test_gft_identity_basis():
    b = S.jacobi_eigh(Tensor(np.zeros((3, 3))))
    X = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(S.gft(b, Tensor(X)).data, X)


def test_gft_round_trip(rng):
    b = S.jacobi_eigh(S.normalized_laplacian(Tensor(random_adjacency(rng, 6))))
    X = rng.normal(size=(6, 10))
    assert np.max(np.abs(S.igft(b, S.gft(b, Tensor(X))).data - X)) < 1e-10


def test_gft_dimension_mismatch():
    with pytest.raises(DimensionError):
        S.gft(S.SpectralBasis.identity(3), Tensor(np.zeros((4, 2))))


def test_gft_broadcasts_over_channels(rng):
    b = S.jacobi_eigh(S.normalized_laplacian(Tensor(random_adjacency(rng, 4))))
    X = rng.normal(size=(3, 4, 5))
    out = S.gft(b, Tensor(X)).data
    for c in range(3):
        assert np.allclose(out[c], b.U.data.T @ X[c], atol=1e-14)


@given(st.integers(2, 10), st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
def test_gft_preserves_energy(n, t, seed):
    rng = np.random.default_rng(seed)
    b = S.jacobi_eigh(S.normalized_laplacian(Tensor(random_adjacency(rng, n))))
    X = rng.normal(size=(n, t))
    assert abs(np.linalg.norm(S.gft(b, Tensor(X)).data) - np.linalg.norm(X)) < 1e-10
