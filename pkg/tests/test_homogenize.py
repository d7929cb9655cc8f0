import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

import cases
import oracles
from stochaeh import cell_solver as cs
from stochaeh.errors import DomainError, MixedMaterialError
from stochaeh.homogenize import (HomogenizedSet, assemble_A00, assemble_B01, assemble_C00,
                                 energy_order0, energy_total, ensemble_average, homogenize_cell)
from stochaeh.microstructure import PatternSpec, PointProcessConfig, VoxelGrid, generate_realization
from stochaeh.tensors import (CouplingTensor5, ElasticTensor, GradTensor3, IsotropicMaterial, SymTensor2,
                              isotropic_stiffness, reuss_bound, voigt_bound)

C_M, C_I = cases.C_M, cases.C_I


def hset(name):
    mesh, chi0, chi1 = cases.solved(name)
    return homogenize_cell(mesh, C_M, C_I, chi0, chi1)


# ------------------------------------------------------------------ assembly

@pytest.mark.parametrize("name", cases.SMALL)
def test_dense_loop_oracle(name):
    a_ref, c5_ref, d5_ref = cases.dense(name)
    h = hset(name)
    scale = max(1.0, np.abs(a_ref).max())
    assert np.abs(h.A.matrix - a_ref).max() < 1e-10 * scale
    assert np.abs(h.B.matrix - a_ref).max() < 1e-10 * scale
    assert np.abs(h.C5.matrix - c5_ref).max() < 1e-10 * scale
    assert np.abs(h.D5.matrix - d5_ref).max() < 1e-10 * scale


@pytest.mark.parametrize("name", cases.NAMES)
def test_B_equals_A_exactly(name):
    mesh, chi0, _ = cases.solved(name)
    assert np.array_equal(assemble_B01(mesh, chi0, C_M, C_I).matrix, assemble_A00(mesh, chi0, C_M, C_I).matrix)


@pytest.mark.parametrize("name", ["bernoulli", "pattern8", "sphere8", "pattern16"])
def test_A_equals_mean_stress_of_localization(name):
    """Self-adjointness: the energy form and ``<C L0>`` coincide."""
    mesh, chi0, _ = cases.solved(name)
    _, stress = cs.mode_stresses(mesh, C_M, C_I, chi0)
    alt = stress.mean(axis=(1, 2)).T                  # column b = <sigma_b>
    a = assemble_A00(mesh, chi0, C_M, C_I).matrix
    assert np.abs(a - alt).max() < 1e-8 * np.abs(a).max()


@pytest.mark.parametrize("name", ["bernoulli", "pattern8", "sphere8", "pattern16", "laminate32"])
def test_A_spd_and_between_bounds(name):
    h = hset(name)
    assert np.allclose(h.A.matrix, h.A.matrix.T, atol=0)
    assert h.A.is_positive_definite()
    f = h.volume_fraction
    m_a = h.A.mandel()
    gap_v = np.linalg.eigvalsh(voigt_bound(C_M, C_I, f).mandel() - m_a)
    gap_r = np.linalg.eigvalsh(m_a - reuss_bound(C_M, C_I, f).mandel())
    tol = 1e-9 * np.abs(m_a).max()
    assert gap_v.min() > -tol and gap_r.min() > -tol
    # the six basis strains individually
    lo = np.diag(reuss_bound(C_M, C_I, f).matrix)
    hi = np.diag(voigt_bound(C_M, C_I, f).matrix)
    assert np.all(lo - tol <= np.diag(h.A.matrix)) and np.all(np.diag(h.A.matrix) <= hi + tol)


def test_homogeneous_limit():
    h = hset("homogeneous16")
    assert np.abs(h.A.matrix - C_M.matrix).max() <= 1e-8 * np.abs(C_M.matrix).max()
    assert np.abs(h.C5.matrix).max() < 1e-10 and np.abs(h.D5.matrix).max() < 1e-10
    assert h.volume_fraction == 0.0


def test_laminate_closed_form():
    h = hset("laminate32")
    ref = oracles.laminate_stiffness([C_M.matrix, C_I.matrix], [0.5, 0.5])
    nz = np.abs(ref) > 1e-12 * np.abs(ref).max()
    assert np.all(np.abs(h.A.matrix - ref)[nz] <= 0.02 * np.abs(ref)[nz])
    assert np.all(np.abs(h.A.matrix[~nz]) < 1e-8)


def test_laminate_D5_normal_modes_match_1d_oracle():
    name = "laminate_small"
    mesh, chi0, chi1 = cases.solved(name)
    nx, ny, nz = mesh.dims
    layers = [1] * 4 + [0] * 4
    c_layers = [C_M.matrix, C_I.matrix]
    chi0_ref = np.zeros((6, mesh.n_nodes, 3))
    chi1_ref = np.zeros((18, mesh.n_nodes, 3))
    for b in range(6):
        u0 = oracles.laminate_chi0(c_layers, layers, np.eye(6)[b])
        chi0_ref[b] = np.repeat(u0, nx * ny, axis=0)
        chi1_ref[3 * b + 2] = np.repeat(oracles.laminate_chi1_z(u0, c_layers, layers), nx * ny, axis=0)
    c_full = [oracles.full_stiffness(*oracles.lame(m.young_modulus, m.poisson_ratio))
              for m in (cases.MATRIX, cases.INCLUSION)]
    a_ref, c5_ref, d5_ref = oracles.dense_tensors(cases.grid(name).labels, *c_full, chi0_ref, chi1_ref)
    h = hset(name)
    z = [3 * b + 2 for b in range(6)]
    assert np.abs(h.D5.matrix[:, z] - d5_ref[:, z]).max() < 1e-9
    assert np.abs(h.C5.matrix[:, z] - c5_ref[:, z]).max() < 1e-9
    assert np.abs(h.A.matrix - a_ref).max() < 1e-8 * np.abs(a_ref).max()


def test_centered_sphere_has_no_coupling():
    h = hset("sphere8")
    assert np.abs(h.C5.matrix).max() < 1e-8 * np.abs(h.A.matrix).max()


def _solve_labels(labels):
    mesh = cs.build_mesh(VoxelGrid(labels.shape, labels, periodic=True))
    chi0 = cs.solve_chi0(mesh, C_M, C_I, cases.TIGHT)
    return mesh, chi0


def test_point_reflection_negates_coupling():
    labels = cases.grid("bernoulli").labels
    h = hset("bernoulli")
    mesh, chi0 = _solve_labels(np.ascontiguousarray(labels[::-1, ::-1, ::-1]))
    c5 = assemble_C00(mesh, chi0, C_M, C_I).matrix
    assert np.abs(h.C5.matrix).max() > 0.1
    assert np.abs(c5 + h.C5.matrix).max() < 1e-8 * np.abs(h.C5.matrix).max()
    assert np.abs(assemble_A00(mesh, chi0, C_M, C_I).matrix - h.A.matrix).max() < 1e-8 * np.abs(h.A.matrix).max()


def test_translation_invariance():
    labels = cases.grid("bernoulli").labels
    h = hset("bernoulli")
    mesh, chi0 = _solve_labels(np.ascontiguousarray(np.roll(labels, (2, 1, 3), axis=(0, 1, 2))))
    assert np.abs(assemble_A00(mesh, chi0, C_M, C_I).matrix - h.A.matrix).max() < 1e-8 * np.abs(h.A.matrix).max()
    assert np.abs(assemble_C00(mesh, chi0, C_M, C_I).matrix - h.C5.matrix).max() < 1e-8 * np.abs(h.C5.matrix).max()


def test_D5_vanishes_by_cell_equilibrium():
    h = hset("pattern16")
    assert np.abs(h.D5.matrix).max() < 1e-6 * np.abs(h.A.matrix).max()


def test_without_chi1_D5_is_zero_and_flagged():
    mesh, chi0, _ = cases.solved("bernoulli")
    h = homogenize_cell(mesh, C_M, C_I, chi0)
    assert not np.any(h.D5.matrix) and h.metadata["chi1_solved"] is False


def test_json_roundtrip():
    h = hset("bernoulli")
    h2 = HomogenizedSet.from_dict(json.loads(json.dumps(h.to_dict())))
    for k in ("A", "B", "C5", "D5", "matrix", "inclusion"):
        assert np.array_equal(getattr(h, k).matrix, getattr(h2, k).matrix)
    assert h2.volume_fraction == h.volume_fraction


# ------------------------------------------------------------------ ensembles

def _fake_set(a, fraction=0.1, nominal=0.1, c_i=C_I):
    return HomogenizedSet(ElasticTensor(a), ElasticTensor(a), CouplingTensor5.zero(), CouplingTensor5.zero(),
                          fraction, C_M, c_i, nominal, lengths=(3.0, 5.0), eta=0.6)


def test_ensemble_identical_sets():
    h = hset("bernoulli")
    avg = ensemble_average([h, h, h])
    assert np.array_equal(avg.A.matrix, h.A.matrix) and np.array_equal(avg.C5.matrix, h.C5.matrix)
    assert not np.any(avg.variance["A_std"]) and avg.variance["fraction_std"] == 0
    assert avg.n_realizations == 3


def test_ensemble_errors():
    with pytest.raises(ValueError):
        ensemble_average([])
    a = C_M.matrix
    with pytest.raises(MixedMaterialError):
        ensemble_average([_fake_set(a), _fake_set(a, c_i=isotropic_stiffness(IsotropicMaterial(50, 0.3)))])
    with pytest.raises(MixedMaterialError):
        ensemble_average([_fake_set(a), _fake_set(a, nominal=0.2)])


def test_ensemble_means_components_and_lengths():
    rng = np.random.default_rng(0)
    sets = [_fake_set(C_M.matrix + rng.normal(0, 0.01, (6, 6)), fraction=0.1 + 0.01 * k) for k in range(4)]
    avg = ensemble_average(sets)
    assert np.allclose(avg.A.matrix, np.mean([s.A.matrix for s in sets], axis=0), atol=1e-15)
    assert avg.volume_fraction == pytest.approx(0.115)
    assert avg.lengths == (3.0, 5.0) and avg.eta == pytest.approx(0.6)


def test_ensemble_variance_decreases_with_count():
    sets = []
    for seed in range(10):
        cfg = PointProcessConfig(0.08, (8, 8, 8), rng_seed=100 + seed, n_patterns=2)
        g = generate_realization(cfg, PatternSpec(big_radius=1.5))
        mesh = cs.build_mesh(g)
        chi0 = cs.solve_chi0(mesh, C_M, C_I)
        sets.append(homogenize_cell(mesh, C_M, C_I, chi0, nominal_fraction=0.08))
    sem3 = ensemble_average(sets[:3]).variance["A_sem"]
    sem10 = ensemble_average(sets).variance["A_sem"]
    main = [(i, i) for i in range(6)]
    assert np.mean([sem10[k] for k in main]) < np.mean([sem3[k] for k in main])


# ------------------------------------------------------------------ energy

def _homogeneous_set(eta=0.5):
    return HomogenizedSet(C_M, C_M, CouplingTensor5.zero(), CouplingTensor5.zero(), 0.0, C_M, C_I, eta=eta)


def test_energy_order0_examples():
    assert energy_order0(C_M, SymTensor2.uniaxial(1.0)) == pytest.approx(0.67308, abs=5e-6)
    assert energy_order0(C_M, SymTensor2.zero()) == 0.0
    vb = voigt_bound(C_M, C_I, 0.3)
    e = SymTensor2(np.array([0.1, 0.2, -0.1, 0.05, 0, 0.3]))
    assert energy_order0(vb, e) == pytest.approx(0.5 * e.engineering @ vb.matrix @ e.engineering)


def test_energy_total_reduces_to_w0():
    h = hset("bernoulli")
    rep = energy_total(h, SymTensor2.uniaxial(1.0), eta=0.4)
    assert rep.total == rep.w0 and rep.w1 == 0.0
    assert rep.w_minus2 == 0.0 and rep.w_minus1 == 0.0
    assert set(rep.flags) >= {"include_D", "grad_E0_zero", "chi1_solved"}


def test_energy_homogeneous_closed_form():
    h = _homogeneous_set(eta=0.5)
    e0 = SymTensor2(np.array([1.0, 0.2, 0, 0, 0.1, 0]))
    e1 = SymTensor2(np.array([0.3, 0, -0.2, 0.4, 0, 0]))
    g = GradTensor3(np.arange(18.0).reshape(6, 3) / 10)
    rep = energy_total(h, e0, e1, g, include_d=True)
    expected = 0.5 * e0.engineering @ C_M.matrix @ e0.engineering + 0.5 * (e0.engineering @ C_M.matrix @ e1.engineering)
    assert rep.total == pytest.approx(expected, rel=1e-14)
    assert rep.w_reuss == pytest.approx(rep.w_voigt, rel=1e-14)


def test_energy_d_term_only_when_flagged():
    h = hset("bernoulli")
    e0 = SymTensor2.uniaxial(1.0)
    g = GradTensor3(np.ones((6, 3)))
    off = energy_total(h, e0, grad_e0=g, eta=1.0)
    on = energy_total(h, e0, grad_e0=g, eta=1.0, include_d=True)
    assert off.w1_d == on.w1_d and on.total - off.total == pytest.approx(on.w1_d, abs=1e-15)
    assert on.flags["include_D"] and not off.flags["include_D"]


def test_energy_requires_eta():
    h = hset("bernoulli")
    with pytest.raises(DomainError):
        energy_total(h, SymTensor2.uniaxial(1.0))


vec6 = st.lists(st.floats(-1, 1), min_size=6, max_size=6).map(np.array)
vec18 = st.lists(st.floats(-1, 1), min_size=18, max_size=18).map(lambda v: np.array(v).reshape(6, 3))


@given(vec6, vec6, vec6, vec18, vec18, st.floats(-3, 3))
def test_energy_linear_in_e1_and_gradient(e0, e1a, e1b, ga, gb, s):
    h = hset("bernoulli")
    e0 = SymTensor2(e0)

    def w1(e1, g):
        return energy_total(h, e0, SymTensor2(e1), GradTensor3(g), include_d=True, eta=1.0).w1

    scale = 1 + np.abs(h.A.matrix).max() * 100
    assert w1(e1a + s * e1b, ga) == pytest.approx(w1(e1a, ga) + s * w1(e1b, ga) - s * w1(0 * e1a, ga), abs=1e-10 * scale)
    assert w1(e1a, ga + s * gb) == pytest.approx(w1(e1a, ga) + s * w1(e1a, gb) - s * w1(e1a, 0 * ga), abs=1e-10 * scale)


@given(vec6, vec6, vec18, st.floats(-3, 3))
def test_energy_quadratic_joint_scaling(e0, e1, g, s):
    h = hset("bernoulli")

    def total(k):
        return energy_total(h, SymTensor2(k * e0), SymTensor2(k * e1), GradTensor3(k * g), eta=0.7).total

    assert total(s) == pytest.approx(s * s * total(1.0), abs=1e-10 * (1 + abs(total(1.0))) * (1 + s * s))


def test_energy_bounds_use_requested_fraction():
    h = hset("bernoulli")
    rep = energy_total(h, SymTensor2.uniaxial(1.0), eta=0.5, fraction=0.2)
    assert rep.bounds_fraction == 0.2
    assert rep.w_voigt == pytest.approx(energy_order0(voigt_bound(C_M, C_I, 0.2), SymTensor2.uniaxial(1.0)))
