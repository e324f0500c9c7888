import numpy as np
import pytest

from grfuse import linalg
from grfuse.errors import DimensionError, NumericError
from grfuse.tape import Tape, Var, backward_eig, backward_qr, build_ktilde, grad_check

from conftest import random_symmetric
from oracles import fd_grad, filter2_valid_naive


def _pool_cov(x):
    p = x.reshape(3, 2, 2, 2, 2).mean(axis=(2, 4)).reshape(3, -1)
    pc = p - p.mean(1, keepdims=True)
    return pc @ pc.T / (p.shape[1] - 1)


def rel(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))


class TestKtilde:
    def test_antisymmetric_zero_diag(self, rng):
        sigma = np.array([3.0, 1.5, 0.2])
        k, clamped = build_ktilde(sigma)
        assert clamped == 0
        assert np.allclose(k, -k.T)
        assert np.all(np.diagonal(k) == 0)
        assert k[0, 1] == pytest.approx(1.0 / 1.5)

    def test_clamp_counts_and_ties(self):
        k, clamped = build_ktilde(np.array([1.0 + 1e-9, 1.0, 0.0]))
        assert clamped == 1
        assert k[0, 1] == pytest.approx(1e6)  # clamped denominator, sign kept
        k2, c2 = build_ktilde(np.array([2.0, 2.0, 1.0]))
        assert c2 == 1
        assert k2[0, 1] == 0.0  # exact tie: direction undefined, entry zeroed


class TestBackwardEig:
    def test_eigenvalue_grad_of_diagonal(self):
        ctx = linalg.sym_eig(np.diag([3.0, 2.0, 1.0]))
        g, clamped = backward_eig(ctx, np.zeros((3, 3)), np.array([1.0, 0.0, 0.0]))
        assert clamped == 0
        assert np.allclose(g, np.diag([1.0, 0.0, 0.0]), atol=1e-14)

    def test_zero_cotangent(self, rng):
        ctx = linalg.sym_eig(random_symmetric(rng, 5))
        g, _ = backward_eig(ctx, np.zeros((5, 5)), np.zeros(5))
        assert np.all(g == 0)

    def test_output_symmetric(self, rng):
        ctx = linalg.sym_eig(random_symmetric(rng, 6, gap=0.2))
        g, _ = backward_eig(ctx, rng.standard_normal((6, 6)), rng.standard_normal(6))
        assert np.array_equal(g, g.T)

    def test_matches_finite_differences(self, rng):
        a = random_symmetric(rng, 8, gap=0.1)
        cu = rng.standard_normal((8, 8))
        cs = rng.standard_normal(8)

        def functional(mat):
            u, s = linalg.sym_eig(mat)
            return float((cu * u).sum() + (cs * s).sum())

        ctx = linalg.sym_eig(a)
        g_ad, clamped = backward_eig(ctx, cu, cs)
        assert clamped == 0
        g_fd = fd_grad(functional, a, h=1e-5)
        assert np.max(rel(g_ad, g_fd)) <= 1e-5

    def test_sign_convention_invariance(self, rng):
        # flipping eigenvector signs together with their cotangents leaves
        # the input gradient unchanged: the projector semantics are sign-free
        a = random_symmetric(rng, 6, gap=0.15)
        ctx = linalg.sym_eig(a)
        cu = rng.standard_normal((6, 6))
        g1, _ = backward_eig(ctx, cu, np.zeros(6))
        flip = np.diag([1.0, -1.0, 1.0, -1.0, -1.0, 1.0])
        ctx2 = linalg.EigResult(ctx.u @ flip, ctx.sigma)
        g2, _ = backward_eig(ctx2, cu @ flip, np.zeros(6))
        assert np.allclose(g1, g2, atol=1e-12)

    def test_degenerate_raises_flag(self, rng):
        ctx = linalg.sym_eig(np.eye(4))
        _, clamped = backward_eig(ctx, rng.standard_normal((4, 4)), np.zeros(4))
        assert clamped == 6  # all pairs tied


class TestBackwardQR:
    def test_zero_cotangent(self, rng):
        ctx = linalg.thin_qr(rng.standard_normal((6, 3)))
        g = backward_qr(ctx, np.zeros((6, 3)), np.zeros((3, 3)))
        assert np.allclose(g, 0, atol=1e-15)

    def test_matches_finite_differences(self, rng):
        a = rng.standard_normal((6, 3))
        cq = rng.standard_normal((6, 3))
        cr = rng.standard_normal((3, 3))

        def functional(mat):
            q, r = linalg.thin_qr(mat)
            return float((cq * q).sum() + (cr * r).sum())

        ctx = linalg.thin_qr(a)
        g_ad = backward_qr(ctx, cq, cr)
        g_fd = fd_grad(functional, a, h=1e-5)
        assert np.max(rel(g_ad, g_fd)) <= 1e-5

    def test_orthonormal_input_q_only(self, rng):
        y, _ = np.linalg.qr(rng.standard_normal((6, 3)))
        cq = rng.standard_normal((6, 3))

        def functional(mat):
            q, _ = linalg.thin_qr(mat)
            return float((cq * q).sum())

        ctx = linalg.thin_qr(y)
        g_ad = backward_qr(ctx, cq, np.zeros((3, 3)))
        g_fd = fd_grad(functional, y, h=1e-5)
        assert np.max(rel(g_ad, g_fd)) <= 1e-5

    def test_ill_conditioned_rejected(self):
        r = np.diag([1.0, 1e-10])
        q = np.eye(2)
        with pytest.raises(NumericError):
            backward_qr(linalg.QRResult(q, r), np.ones((2, 2)), np.zeros((2, 2)))


def _fd_check_op(rng, shapes, fn_tape, fn_plain, h=1e-6, tol=1e-6):
    """FD-validate a tape op: fn_tape(tape, *vars) and fn_plain(*arrays)
    must be the same scalar-valued function."""
    args = [rng.standard_normal(s) for s in shapes]
    tape = Tape()
    vs = [tape.leaf(a.copy()) for a in args]
    out = fn_tape(tape, *vs)
    tape.backward(out)
    for i, a in enumerate(args):
        def f(x, i=i):
            xs = [p.copy() for p in args]
            xs[i] = x
            return fn_plain(*xs)

        g_fd = fd_grad(f, a, h=h)
        g_ad = vs[i].grad if vs[i].grad is not None else np.zeros_like(a)
        assert np.max(rel(g_ad, g_fd)) <= tol, f"op gradient mismatch on arg {i}"


class TestPrimitiveGradients:
    def test_matmul(self, rng):
        _fd_check_op(
            rng,
            [(4, 3), (3, 5)],
            lambda t, a, b: t.sum(t.matmul(a, b)),
            lambda a, b: float((a @ b).sum()),
        )

    def test_mul_div(self, rng):
        _fd_check_op(
            rng,
            [(4, 3), (4, 3)],
            lambda t, a, b: t.sum(t.div(t.mul(a, a), t.add_const(t.mul(b, b), 1.0))),
            lambda a, b: float((a * a / (b * b + 1.0)).sum()),
        )

    def test_gram(self, rng):
        c = rng.standard_normal((4, 4))
        _fd_check_op(
            rng,
            [(4, 2)],
            lambda t, y: t.sum(t.mul_const(t.gram(y), c)),
            lambda y: float((c * (y @ y.T)).sum()),
        )

    def test_softmax_rows(self, rng):
        c = rng.standard_normal((3, 5))
        _fd_check_op(
            rng,
            [(3, 5)],
            lambda t, a: t.sum(t.mul_const(t.softmax_rows(a), c)),
            lambda a: float((c * (np.exp(a - a.max(1, keepdims=True)) / np.exp(a - a.max(1, keepdims=True)).sum(1, keepdims=True))).sum()),
        )

    def test_layer_norm(self, rng):
        c = rng.standard_normal((5, 4))

        def plain(x, g, b):
            mu = x.mean(1, keepdims=True)
            xc = x - mu
            inv = 1.0 / np.sqrt((xc * xc).mean(1, keepdims=True) + 1e-5)
            return float((c * (xc * inv * g + b)).sum())

        _fd_check_op(
            rng,
            [(5, 4), (4,), (4,)],
            lambda t, x, g, b: t.sum(t.mul_const(t.layer_norm(x, g, b), c)),
            plain,
            tol=5e-6,
        )

    def test_nonlinearities(self, rng):
        for name, plain in [
            ("silu", lambda x: float((x / (1 + np.exp(-x))).sum())),
            ("sigmoid", lambda x: float((1 / (1 + np.exp(-x))).sum())),
            ("leaky_relu", lambda x: float(np.where(x > 0, x, 0.2 * x).sum())),
            ("abs", lambda x: float(np.abs(x).sum())),
        ]:
            _fd_check_op(
                rng,
                [(6, 4)],
                lambda t, a, name=name: t.sum(getattr(t, name)(a)),
                plain,
                tol=5e-6,
            )

    def test_conv2d_with_bias(self, rng):
        _fd_check_op(
            rng,
            [(2, 5, 5), (3, 2, 3, 3), (3,)],
            lambda t, x, w, b: t.sum(t.conv2d(x, w, b)),
            lambda x, w, b: float((linalg.conv2d(x, w) + b[:, None, None]).sum()),
            tol=5e-6,
        )

    def test_filter2_valid(self, rng):
        k = rng.standard_normal((3, 3))
        _fd_check_op(
            rng,
            [(6, 6)],
            lambda t, x: t.sum(t.filter2_valid(x, k)),
            lambda x: float(filter2_valid_naive(x, k).sum()),
        )

    def test_sobel_abs(self, rng):
        x = rng.standard_normal((6, 7))
        tape = Tape()
        v = tape.leaf(x.copy())
        tape.backward(tape.sum(tape.sobel_abs(v)))
        g_fd = fd_grad(lambda z: float(linalg.sobel_mag(z).sum()), x, h=1e-6)
        assert np.max(rel(v.grad, g_fd)) <= 5e-6

    def test_avg_pool2_and_cov(self, rng):
        c = rng.standard_normal((3, 3))
        _fd_check_op(
            rng,
            [(3, 4, 4)],
            lambda t, x: t.sum(t.mul_const(t.channel_covariance(t.avg_pool2(x)), c)),
            lambda x: float((c * _pool_cov(x)).sum()),
        )

    def test_permute_and_slices(self, rng):
        perm = np.random.default_rng(0).permutation(6)
        c = rng.standard_normal((3, 4))
        _fd_check_op(
            rng,
            [(6, 4)],
            lambda t, x: t.sum(t.mul_const(t.slice_rows(t.permute_rows(x, perm), 1, 4), np.ones((3, 4)) * 2.0)),
            lambda x: float((x[perm][1:4] * 2.0).sum()),
        )

    def test_recorded_eig_qr_roundtrip(self, rng):
        a = random_symmetric(rng, 6, gap=0.15)
        cmat = rng.standard_normal((6, 6))

        def run_tape(t, av):
            u, s = t.sym_eig(av)
            basis = t.slice_cols(u, 0, 3)
            q, _ = t.thin_qr(basis)
            return t.sum(t.mul_const(t.gram(q), cmat))

        def plain(mat):
            u, _ = linalg.sym_eig(mat)
            q, _ = linalg.thin_qr(u[:, :3])
            return float((cmat * (q @ q.T)).sum())

        tape = Tape()
        av = tape.leaf(a.copy())
        tape.backward(run_tape(tape, av))
        g_fd = fd_grad(plain, a, h=1e-5)
        assert np.max(rel(av.grad, g_fd)) <= 1e-5


class TestGradCheck:
    def test_quadratic_exact(self, rng):
        params = {"x": rng.standard_normal((4, 4))}
        report = grad_check(lambda p, t: t.sum(t.mul(p["x"], p["x"])), params, n_probes=16, seed=0)
        assert report.max_rel_err <= 1e-8

    def test_projector_chain(self, rng):
        a = random_symmetric(rng, 6, gap=0.15)
        c = rng.standard_normal((6, 6))

        def f(p, t):
            from grfuse import manifold

            basis = manifold.orth_map(p["a"], 2, tape=t)
            return t.sum(t.mul_const(manifold.proj_map(basis, tape=t), c))

        report = grad_check(f, {"a": a}, n_probes=36, seed=1)
        assert report.max_rel_err <= 1e-5

    def test_subspace_invariant_functional_has_zero_gradient(self, rng):
        # trace(Proj(OrthMap(A))) == q identically, so both sides of the
        # check vanish; asserting tiny absolute values is the meaningful
        # form (the relative-error ratio is pure rounding noise here)
        a = random_symmetric(rng, 6, gap=0.15)

        def f(p, t):
            from grfuse import manifold

            basis = manifold.orth_map(p["a"], 2, tape=t)
            return t.sum(t.mul_const(manifold.proj_map(basis, tape=t), np.eye(6)))

        report = grad_check(f, {"a": a}, n_probes=36, seed=2)
        for probe in report.probes:
            assert abs(probe.g_ad) <= 1e-8
            assert abs(probe.g_fd) <= 1e-6

    def test_rejects_float32(self):
        with pytest.raises(NumericError):
            grad_check(lambda p, t: t.sum(p["x"]), {"x": np.zeros(3, np.float32)}, n_probes=1)

    def test_scalar_required(self, rng):
        with pytest.raises(DimensionError):
            grad_check(lambda p, t: p["x"], {"x": rng.standard_normal(3)}, n_probes=1)

    def test_reports_parameter_names(self, rng):
        params = {"alpha": rng.standard_normal(3), "beta": rng.standard_normal(2)}

        def f(p, t):
            return t.add(t.sum(t.mul(p["alpha"], p["alpha"])), t.sum(t.mul(p["beta"], p["beta"])))

        report = grad_check(f, params, n_probes=5, seed=3)
        assert {p.param for p in report.probes} <= {"alpha", "beta"}
        assert len(report.probes) == 5
