import math

import numpy as np
import pytest
from scipy.special import hankel1

from lsenkf.forward import (NoiseModel, StackedForwardOperator, WaveNumberGrid,
                            apply_adjoint, apply_forward, assemble_forward, generate_data,
                            make_wave_grid, read_observations, stack_real, unstack_real,
                            write_observations)
from lsenkf.mesh import ReceiverArray, build_disk_mesh, square_receivers, triangle_quadrature


def brute_force_row(mesh, x, k, amp, quad):
    """Row of H_k for receiver ``x`` by an explicit loop over elements and points."""
    row = np.zeros(mesh.n_nodes, dtype=complex)
    for tri, area in zip(mesh.elements, mesh.areas):
        verts = mesh.nodes[tri]
        for lam, w in zip(quad.barycentric_points, quad.weights):
            y = lam @ verts
            kern = amp * hankel1(0, k * math.dist(x, y))
            for i in range(3):
                row[tri[i]] += w * area * kern * lam[i]
    return row


@pytest.fixture(scope="module")
def tiny():
    mesh = build_disk_mesh(1.0, 0.4)
    rec = square_receivers(2.0, 3)
    kgrid = make_wave_grid(100.0, 1500.0, 2, amplitude=[1.0, 0.7])
    quad = triangle_quadrature(2)
    return mesh, rec, kgrid, quad, assemble_forward(mesh, rec, kgrid, quad)


# ---------------------------------------------------------------- grids

def test_wave_grid_hz():
    g = make_wave_grid(50.0, 10_000.0, 10, c0=343.0)
    np.testing.assert_allclose(g.wave_numbers, 2 * np.pi * g.frequencies_hz / 343.0)
    assert g.frequencies_hz[0] == pytest.approx(50.0) and g.frequencies_hz[-1] == pytest.approx(1e4)
    assert np.all(np.diff(np.log(g.frequencies_hz)) == pytest.approx(np.log(200) / 9))
    assert np.all(g.amplitude == 1.0)


def test_wave_grid_raw_wavenumbers():
    g = make_wave_grid(50.0, 10_000.0, 4, units="wavenumber")
    assert g.wave_numbers[0] == pytest.approx(50.0) and g.wave_numbers[-1] == pytest.approx(1e4)


@pytest.mark.parametrize("kwargs", [dict(count=0), dict(f_min=0.0), dict(f_min=20.0, f_max=10.0),
                                    dict(units="rad"), dict(count=3, amplitude=[1.0])])
def test_wave_grid_rejects(kwargs):
    with pytest.raises(ValueError):
        make_wave_grid(**{"f_min": 50.0, "f_max": 100.0, **kwargs})


def test_wave_grid_requires_increasing():
    with pytest.raises(ValueError):
        WaveNumberGrid(np.array([2.0, 1.0]), 343.0, np.array([2.0, 1.0]), np.ones(2))


# ---------------------------------------------------------------- assembly

def test_matrix_matches_brute_force_loop(tiny):
    mesh, rec, kgrid, quad, op = tiny
    for m, (k, amp) in enumerate(zip(kgrid.wave_numbers, kgrid.amplitude)):
        for j in (0, 3, 7):
            ref = brute_force_row(mesh, rec.points[j], k, amp, quad)
            np.testing.assert_allclose(op.per_k[m][j], ref, rtol=1e-10, atol=1e-14)


def test_adjoint_of_unit_residual_is_real_part_of_row(tiny):
    mesh, rec, kgrid, quad, op = tiny
    m, j = 1, 5
    r = np.zeros(op.total_rows, dtype=complex)
    r[m * rec.count + j] = 1.0
    ref = brute_force_row(mesh, rec.points[j], kgrid.wave_numbers[m], kgrid.amplitude[m], quad)
    np.testing.assert_allclose(apply_adjoint(op, r), ref.real, rtol=1e-10, atol=1e-14)


def test_far_field_point_source():
    mesh = build_disk_mesh(1.0, 0.05)
    k = 2.0
    rec = ReceiverArray(np.array([[12.0, 0.0], [0.0, -15.0]]), 15.0)
    kgrid = make_wave_grid(k, k, 1, units="wavenumber")
    op = assemble_forward(mesh, rec, kgrid, triangle_quadrature(2))
    node = int(np.argmin(np.hypot(*(mesh.nodes - [0.3, 0.2]).T)))
    for j, x in enumerate(rec.points):
        approx = mesh.lumped_areas[node] * hankel1(0, k * math.dist(x, mesh.nodes[node]))
        assert abs(op.per_k[0][j, node] - approx) <= 0.02 * abs(approx)


def test_frequency_blocks_independent_of_grid(tiny):
    mesh, rec, kgrid, quad, op = tiny
    for m in range(2):
        single = make_wave_grid(kgrid.wave_numbers[m], kgrid.wave_numbers[m], 1,
                                units="wavenumber", amplitude=[kgrid.amplitude[m]])
        alone = assemble_forward(mesh, rec, single, quad)
        np.testing.assert_array_equal(alone.per_k[0], op.per_k[m])


def test_parallel_assembly_identical(tiny):
    mesh, rec, kgrid, quad, op = tiny
    par = assemble_forward(mesh, rec, kgrid, quad, workers=3)
    for a, b in zip(op.per_k, par.per_k):
        np.testing.assert_array_equal(a, b)


def test_zeroing_a_block_zeroes_its_rows(tiny, rng):
    *_, op = tiny
    n = op.receiver_count
    blocks = list(op.per_k)
    blocks[1] = np.zeros_like(blocks[1])
    cut = StackedForwardOperator(tuple(blocks), op.wave_numbers)
    out = apply_forward(cut, rng.standard_normal(op.n_nodes))
    assert np.all(out[n:2 * n] == 0)
    assert np.all(out[:n] != 0)


def test_rejects_receiver_inside_disk(coarse_mesh):
    rec = ReceiverArray(np.array([[0.5, 0.0]]), 0.5)
    with pytest.raises(ValueError):
        assemble_forward(coarse_mesh, rec, make_wave_grid(100, 200, 2), triangle_quadrature(2))


def test_rejects_receiver_on_circle(coarse_mesh):
    rec = ReceiverArray(np.array([[1.0, 0.0]]), 1.0)
    with pytest.raises(ValueError):
        assemble_forward(coarse_mesh, rec, make_wave_grid(100, 200, 2), triangle_quadrature(2))


def test_entries_finite(small_op):
    assert np.all(np.isfinite(small_op.matrix))
    assert small_op.matrix.shape == (small_op.total_rows, small_op.n_nodes)
    assert small_op.data_dim == 2 * small_op.total_rows


def test_quadrature_converges_under_refinement():
    rec = square_receivers(2.0, 3)
    kgrid = make_wave_grid(100.0, 400.0, 2)
    quad = triangle_quadrature(2)
    outs = []
    for h in (0.2, 0.1, 0.05):
        mesh = build_disk_mesh(1.0, h)
        r2 = (mesh.nodes ** 2).sum(axis=1)
        outs.append(apply_forward(assemble_forward(mesh, rec, kgrid, quad), 1.0 - r2))
    d1 = np.linalg.norm(outs[0] - outs[1])
    d2 = np.linalg.norm(outs[1] - outs[2])
    assert d2 < d1
    assert d1 / d2 >= 3.0  # second order would give 4


# ---------------------------------------------------------------- apply

def test_apply_zero(small_op):
    assert np.all(apply_forward(small_op, np.zeros(small_op.n_nodes)) == 0)
    assert np.all(apply_adjoint(small_op, np.zeros(small_op.total_rows, complex)) == 0)


def test_linearity(small_op, rng):
    f1, f2 = rng.standard_normal((2, small_op.n_nodes))
    lhs = apply_forward(small_op, f1 + f2)
    rhs = apply_forward(small_op, f1) + apply_forward(small_op, f2)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(lhs)
    np.testing.assert_array_equal(apply_forward(small_op, 2 * f1), 2 * apply_forward(small_op, f1))


def test_apply_columns_match_single(small_op, rng):
    f = rng.standard_normal((small_op.n_nodes, 4))
    many = apply_forward(small_op, f)
    for c in range(4):
        np.testing.assert_allclose(many[:, c], apply_forward(small_op, f[:, c]), rtol=1e-13)


@pytest.mark.parametrize("h", [0.2, 0.1])
def test_adjoint_identity(h, rng):
    mesh = build_disk_mesh(1.0, h)
    op = assemble_forward(mesh, square_receivers(2.0, 7), make_wave_grid(50, 1e4, 6),
                          triangle_quadrature(2))
    for _ in range(20):
        f = rng.standard_normal(op.n_nodes)
        r = rng.standard_normal(op.total_rows) + 1j * rng.standard_normal(op.total_rows)
        lhs = np.vdot(r, apply_forward(op, f)).real  # Re <Hf, r>
        rhs = f @ apply_adjoint(op, r)
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(f) * np.linalg.norm(r)


def test_real_matrix_is_stacked(small_op, rng):
    f = rng.standard_normal(small_op.n_nodes)
    np.testing.assert_allclose(small_op.real_matrix @ f, stack_real(apply_forward(small_op, f)),
                               rtol=1e-13, atol=1e-15)


def test_stack_roundtrip(rng):
    b = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    np.testing.assert_array_equal(unstack_real(stack_real(b)), b)


def test_shape_errors(small_op):
    with pytest.raises(ValueError):
        apply_forward(small_op, np.zeros(small_op.n_nodes + 1))
    with pytest.raises(ValueError):
        apply_adjoint(small_op, np.zeros(small_op.total_rows - 1))


# ---------------------------------------------------------------- data

def test_noise_free_data_exact(small_op, rng):
    f = rng.standard_normal(small_op.n_nodes)
    b = generate_data(small_op, f, NoiseModel(0.0), 5)
    np.testing.assert_array_equal(b, apply_forward(small_op, f))


def test_data_deterministic(small_op):
    f = np.ones(small_op.n_nodes)
    a = generate_data(small_op, f, NoiseModel(0.1), 11)
    b = generate_data(small_op, f, NoiseModel(0.1), 11)
    c = generate_data(small_op, f, NoiseModel(0.1), 12)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_noise_standard_deviation(small_op):
    f = np.ones(small_op.n_nodes)
    clean = apply_forward(small_op, f)
    samples = []
    seed = 0
    while sum(s.size for s in samples) < 10_000:
        samples.append(stack_real(generate_data(small_op, f, NoiseModel(0.1), seed) - clean))
        seed += 1
    eta = np.concatenate(samples)
    assert abs(eta.std() - 0.1) <= 0.03 * 0.1
    assert abs(eta.mean()) <= 4 * 0.1 / math.sqrt(eta.size)


def test_negative_delta_rejected():
    with pytest.raises(ValueError):
        NoiseModel(-0.1)


def test_observation_csv_roundtrip(tmp_path, small_op, rng):
    b = rng.standard_normal(small_op.total_rows) + 1j * rng.standard_normal(small_op.total_rows)
    path = tmp_path / "data.csv"
    write_observations(b, small_op.receiver_count, path)
    back, n = read_observations(path)
    assert n == small_op.receiver_count
    assert back.tobytes() == b.tobytes()
    lines = path.read_text().splitlines()
    assert lines[0] == "freq_index,receiver_index,re,im"
    assert lines[small_op.receiver_count + 1].startswith("1,0,")


def test_observation_csv_rejects_shuffled(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("freq_index,receiver_index,re,im\n0,1,1.0,0.0\n0,0,1.0,0.0\n")
    with pytest.raises(ValueError):
        read_observations(p)
