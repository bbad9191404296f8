import numpy as np
import pytest

from thermotomo.errors import ConfigurationError, DegenerateInputError
from thermotomo.grid_field import (
    Grid,
    Region,
    ScalarField,
    WaveState,
    energy,
    harmonic_extension,
    hd_norm,
    l2_norm,
    make_phantom,
    project_HD,
)
from thermotomo.medium import build_medium, uniform_medium
from thermotomo.recon import (
    ReconConfig,
    _non_contraction,
    apply_error_operator,
    energy_decay_ratio,
    estimate_contraction,
    neumann_series,
    pseudo_inverse_step,
    time_reverse,
)
from thermotomo.wave_solver import BoundaryTrace, forward, solve_backward

from conftest import centered_bump, example1_setup


def visible_case(N=201, L=9.2, T=3.5, m_max=6):
    g, m, omega, kset = example1_setup(N=N, L=L)
    cfg = ReconConfig(omega=omega, kset=kset, T=T, m_max=m_max, tol_rel=0.0,
                      harmonic_tol=1e-12)
    return g, m, cfg


def measure(g, m, cfg, f1):
    return forward(WaveState(f1, ScalarField.zeros(g)), m, cfg.omega, cfg.T,
                   cfg.solver_config(m))


class TestReconConfig:
    def test_kset_must_sit_inside_omega(self):
        g, m, omega, _ = example1_setup()
        big = Region.disk(g, (0.0, 0.0), 1.5)
        with pytest.raises(ConfigurationError):
            ReconConfig(omega=omega, kset=big, T=1.0)

    def test_kset_needs_interface_clearance(self):
        g, m, omega, _ = example1_setup()
        hugging = Region.disk(g, (0.0, 0.0), 0.5 - 1.5 * g.h)
        cfg = ReconConfig(omega=omega, kset=hugging, T=1.0)
        with pytest.raises(ConfigurationError):
            cfg.validate_against(m)


class TestTimeReverse:
    def test_zero_trace_gives_zero(self):
        g, m, cfg = visible_case()
        n = cfg.solver_config(m).n_steps
        tr = BoundaryTrace(points=cfg.omega.boundary_coords,
                           dt=cfg.solver_config(m).dt,
                           values=np.zeros((n + 1, cfg.omega.boundary_nodes[0].size)))
        out = time_reverse(tr, m, cfg)
        assert np.all(out.u.data == 0.0) and np.all(out.ut.data == 0.0)

    def test_uses_harmonic_cauchy_data(self):
        # time_reverse must coincide with a backward solve seeded by [phi, 0]
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        f1 = centered_bump(g, cfg.kset)
        tr = measure(g, m, cfg, f1)
        out = time_reverse(tr, m, cfg)
        phi = harmonic_extension(tr.values[-1], cfg.omega, cfg.harmonic_tol)
        # the harmonic residual meets the configured tolerance
        d = phi.data
        stencil = (d[2:, 1:-1] + d[:-2, 1:-1] + d[1:-1, 2:] + d[1:-1, :-2]
                   - 4 * d[1:-1, 1:-1])[cfg.omega.interior_mask[1:-1, 1:-1]]
        assert np.max(np.abs(stencil)) <= cfg.harmonic_tol * max(
            1.0, np.max(np.abs(tr.values[-1])))
        ref = solve_backward(tr, WaveState(phi, ScalarField.zeros(g)), m,
                             cfg.omega, cfg.solver_config(m))
        assert np.allclose(out.u.data, ref.u.data, atol=1e-14)
        assert np.allclose(out.ut.data, ref.ut.data, atol=1e-14)

    def test_harmonic_data_minimizes_energy(self):
        # among Cauchy pairs [phi + delta, 0] with zero-trace delta, the
        # harmonic extension has minimal energy
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        f1 = centered_bump(g, cfg.kset)
        tr = measure(g, m, cfg, f1)
        phi = harmonic_extension(tr.values[-1], cfg.omega, 1e-12)
        e_phi = energy(WaveState(phi, ScalarField.zeros(g)), cfg.omega, m)
        rng = np.random.default_rng(3)
        for _ in range(10):
            delta = np.zeros(g.shape)
            delta[cfg.omega.interior_mask] = rng.standard_normal(
                int(cfg.omega.interior_mask.sum()))
            cand = WaveState(ScalarField(g, phi.data + delta), ScalarField.zeros(g))
            assert energy(cand, cfg.omega, m) >= e_phi - 1e-9 * e_phi


class TestPseudoInverseStep:
    def test_zero_trace(self):
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        scfg = cfg.solver_config(m)
        tr = BoundaryTrace(points=cfg.omega.boundary_coords, dt=scfg.dt,
                           values=np.zeros((scfg.n_steps + 1,
                                            cfg.omega.boundary_nodes[0].size)))
        out = pseudo_inverse_step(tr, m, cfg)
        assert np.all(out.data == 0.0)

    def test_zero_trace_on_kset_boundary(self):
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        f1 = centered_bump(g, cfg.kset)
        out = pseudo_inverse_step(measure(g, m, cfg, f1), m, cfg)
        assert np.all(out.data[cfg.kset.boundary_nodes] == 0.0)
        assert np.all(out.data[~cfg.kset.mask] == 0.0)

    def test_additive_in_the_trace(self):
        # the composed map trace -> projected first term is linear
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        h1 = measure(g, m, cfg, centered_bump(g, cfg.kset, sigma=0.05, center=(0.04, 0.0)))
        h2 = measure(g, m, cfg, centered_bump(g, cfg.kset, sigma=0.04, center=(-0.03, 0.05)))
        lhs = pseudo_inverse_step(h1 + h2, m, cfg)
        rhs = pseudo_inverse_step(h1, m, cfg) + pseudo_inverse_step(h2, m, cfg)
        scale = max(hd_norm(rhs, cfg.kset), 1e-300)
        assert hd_norm(lhs - rhs, cfg.kset) / scale <= 1e-10

    def test_first_term_recovers_most_of_f(self):
        # uniform speed, T far beyond the escape time: the first series term
        # already lands within 50 percent; the converged series is the oracle
        g = Grid(201, 201, 7.2 / 200, origin=(-3.6, -3.6))
        m = uniform_medium(g)
        omega = Region.rectangle_from_physical(g, -0.5, 0.5, -0.5, 0.5)
        kset = Region.disk(g, (0.0, 0.0), 0.15)
        cfg = ReconConfig(omega=omega, kset=kset, T=3.0, m_max=8, tol_rel=0.0,
                          harmonic_tol=1e-12)
        f1 = centered_bump(g, kset, sigma=0.04)
        tr = measure(g, m, cfg, f1)
        first = pseudo_inverse_step(tr, m, cfg)
        rel_first = hd_norm(first - f1, kset) / hd_norm(f1, kset)
        assert rel_first < 0.5
        _, rep = neumann_series(tr, m, cfg, truth=f1)
        assert rep.iterates[-1].err_hd < rel_first


class TestErrorOperator:
    def test_zero_input(self):
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        out = apply_error_operator(ScalarField.zeros(g), m, cfg)
        assert np.all(out.data == 0.0)

    def test_contracts_on_visible_config(self):
        g, m, cfg = visible_case()
        f1 = project_HD(centered_bump(g, cfg.kset), cfg.kset, cfg.harmonic_tol)
        kf = apply_error_operator(f1, m, cfg)
        assert hd_norm(kf, cfg.kset) < hd_norm(f1, cfg.kset)

    def test_linearity(self):
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        a = project_HD(centered_bump(g, cfg.kset, sigma=0.05, center=(0.05, 0.0)),
                       cfg.kset, 1e-12)
        b = project_HD(centered_bump(g, cfg.kset, sigma=0.04, center=(-0.04, 0.03)),
                       cfg.kset, 1e-12)
        lhs = apply_error_operator(2.0 * a - 3.0 * b, m, cfg)
        rhs = 2.0 * apply_error_operator(a, m, cfg) - 3.0 * apply_error_operator(b, m, cfg)
        scale = max(hd_norm(lhs, cfg.kset), 1e-300)
        assert hd_norm(lhs - rhs, cfg.kset) / scale <= 1e-9


class TestNeumannSeries:
    def test_zero_trace_converges_immediately(self):
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        scfg = cfg.solver_config(m)
        tr = BoundaryTrace(points=cfg.omega.boundary_coords, dt=scfg.dt,
                           values=np.zeros((scfg.n_steps + 1,
                                            cfg.omega.boundary_nodes[0].size)))
        rec, rep = neumann_series(tr, m, cfg)
        assert np.all(rec.data == 0.0)
        assert rep.converged and len(rep.iterates) == 1

    def test_error_decreases_monotonically(self):
        g, m, cfg = visible_case()
        f1 = centered_bump(g, cfg.kset)
        rec, rep = neumann_series(measure(g, m, cfg, f1), m, cfg, truth=f1)
        errs = [t.err_hd for t in rep.iterates]
        assert all(b <= a * (1 + 1e-3) for a, b in zip(errs, errs[1:]))
        assert errs[-1] < errs[0]

    def test_partial_sum_identity(self):
        # residual-update iterates equal the partial sums of explicit K powers
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2, m_max=4)
        f1 = centered_bump(g, cfg.kset)
        h = measure(g, m, cfg, f1)
        series_terms = []
        neumann_series(h, m, cfg, on_term=lambda stats, f: series_terms.append(f.copy()))
        power = pseudo_inverse_step(h, m, cfg)   # K^0 b
        partial = power.copy()
        explicit = [partial.copy()]
        for _ in range(len(series_terms) - 1):
            power = apply_error_operator(power, m, cfg)
            partial = partial + power
            explicit.append(partial.copy())
        for k in (1, 2, 3):
            scale = max(hd_norm(series_terms[k], cfg.kset), 1e-300)
            diff = hd_norm(series_terms[k] - explicit[k], cfg.kset)
            assert diff / scale <= 1e-8

    def test_non_contraction_detector(self):
        assert _non_contraction([1.0, 1.1, 1.2, 1.3])
        assert not _non_contraction([1.0, 0.9, 1.1, 0.8, 1.2])
        assert not _non_contraction([1.0, 0.5, 0.25])

    def test_visible_run_reports_no_warning(self):
        g, m, cfg = visible_case()
        f1 = centered_bump(g, cfg.kset)
        _, rep = neumann_series(measure(g, m, cfg, f1), m, cfg)
        assert not rep.non_contraction_warning

    def test_geometric_envelope(self):
        g, m, cfg = visible_case()
        mu = estimate_contraction(m, cfg, n_power_iters=8, seed=1)
        f1 = centered_bump(g, cfg.kset)
        _, rep = neumann_series(measure(g, m, cfg, f1), m, cfg, truth=f1)
        errs = [t.err_hd for t in rep.iterates]
        c0 = max(errs[k] / mu ** k for k in (1, 2, 3))
        assert all(errs[k] <= 2.0 * c0 * mu ** k for k in range(1, len(errs)))


class TestSkullModel:
    def test_series_converges_through_two_interfaces(self):
        # brain disk (c = 1) inside a fast shell (c = 2): rays leaving the
        # shell always transmit, so a small central source region is visible
        T, L, N = 2.5, 12.4, 311          # margin c_max*T = 5 beyond the square
        g = Grid(N, N, L / (N - 1), origin=(-L / 2, -L / 2))
        m = build_medium([(0.8, 2.0), (0.5, 1.0)], g)
        omega = Region.rectangle_from_physical(g, -1.0, 1.0, -1.0, 1.0)
        kset = Region.disk(g, (0.0, 0.0), 0.2)
        cfg = ReconConfig(omega=omega, kset=kset, T=T, m_max=5, tol_rel=0.0,
                          harmonic_tol=1e-12)
        f1 = centered_bump(g, kset, sigma=0.05, center=(0.03, -0.02))
        tr = measure(g, m, cfg, f1)
        assert energy_decay_ratio(f1, m, cfg) < 0.5
        _, rep = neumann_series(tr, m, cfg, truth=f1)
        errs = [t.err_hd for t in rep.iterates]
        assert all(b <= a * (1 + 1e-3) for a, b in zip(errs, errs[1:]))
        assert rep.iterates[-1].err_l2 < 0.02


class TestContractionEstimate:
    def test_visible_config_below_one(self):
        g, m, cfg = visible_case()
        mu = estimate_contraction(m, cfg, n_power_iters=6, seed=1)
        assert 0.0 < mu < 1.0

    def test_uniform_fast_escape(self):
        # c = 1 and T beyond twice the diameter: the resolved band escapes
        # completely; the surrogate floor comes from grid-scale modes
        g = Grid(201, 201, 7.2 / 200, origin=(-3.6, -3.6))
        m = uniform_medium(g)
        omega = Region.rectangle_from_physical(g, -0.5, 0.5, -0.5, 0.5)
        kset = Region.disk(g, (0.0, 0.0), 0.15)
        cfg = ReconConfig(omega=omega, kset=kset, T=3.0, harmonic_tol=1e-12)
        mu = estimate_contraction(m, cfg, n_power_iters=6, seed=3)
        assert mu < 0.65

    def test_deterministic_given_seed(self):
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        a = estimate_contraction(m, cfg, n_power_iters=5, seed=9)
        b = estimate_contraction(m, cfg, n_power_iters=5, seed=9)
        assert a == b

    def test_ratio_invariant_under_scaling(self):
        # K is linear, so the measured ratio is homogeneous of degree zero
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        f1 = project_HD(centered_bump(g, cfg.kset), cfg.kset, 1e-12)
        r1 = hd_norm(apply_error_operator(f1, m, cfg), cfg.kset) / hd_norm(f1, cfg.kset)
        f2 = 37.5 * f1
        r2 = hd_norm(apply_error_operator(f2, m, cfg), cfg.kset) / hd_norm(f2, cfg.kset)
        assert r1 == pytest.approx(r2, rel=1e-12)

    def test_too_few_iterations_rejected(self):
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        with pytest.raises(ConfigurationError):
            estimate_contraction(m, cfg, n_power_iters=4)


class TestEnergyDecay:
    def test_visible_below_one(self):
        g, m, cfg = visible_case()
        f1 = centered_bump(g, cfg.kset)
        assert energy_decay_ratio(f1, m, cfg) < 1.0

    def test_uniform_fast_escape_tiny(self):
        g = Grid(201, 201, 7.2 / 200, origin=(-3.6, -3.6))
        m = uniform_medium(g)
        omega = Region.rectangle_from_physical(g, -0.5, 0.5, -0.5, 0.5)
        kset = Region.disk(g, (0.0, 0.0), 0.15)
        cfg = ReconConfig(omega=omega, kset=kset, T=3.0, harmonic_tol=1e-12)
        f1 = centered_bump(g, kset, sigma=0.04)
        assert energy_decay_ratio(f1, m, cfg) < 0.05

    def test_trapped_ring_retains_energy(self):
        # sources hugging the slow disk emit mostly beyond the critical angle
        N, L, T = 512, 4.1, 1.0
        g = Grid(N, N, L / (N - 1), origin=(-L / 2, -L / 2))
        m = build_medium([(0.5, 0.5)], g)
        omega = Region.rectangle_from_physical(g, -1.0, 1.0, -1.0, 1.0)
        kset = Region.disk(g, (0.0, 0.0), 0.483)
        cfg = ReconConfig(omega=omega, kset=kset, T=T, harmonic_tol=1e-12)
        r0, nb, sig = 0.45, 8, 0.010
        bumps = [((r0 * np.cos(2 * np.pi * k / nb), r0 * np.sin(2 * np.pi * k / nb)), sig)
                 for k in range(nb)]
        ph = make_phantom("sum_of_bumps", {"bumps": bumps}, g, kset)
        assert energy_decay_ratio(ph, m, cfg) > 0.5

    def test_zero_energy_rejected(self):
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        with pytest.raises(DegenerateInputError):
            energy_decay_ratio(ScalarField.zeros(g), m, cfg)

    def test_support_outside_kset_rejected(self):
        g, m, cfg = visible_case(N=161, L=4.6, T=1.2)
        f = ScalarField.zeros(g)
        f.data[g.nearest_node(0.7, 0.0)] = 1.0
        with pytest.raises(ConfigurationError):
            energy_decay_ratio(f, m, cfg)

    def test_diagnostics_consistency(self):
        # the contraction estimate obeys mu_hat <= sqrt(max edr) + 0.1 when the
        # power iterate itself is among the tested sources
        g, m, cfg = visible_case()
        mu, field = estimate_contraction(m, cfg, n_power_iters=8, seed=1,
                                         return_field=True)
        tested = [centered_bump(g, cfg.kset),
                  centered_bump(g, cfg.kset, sigma=0.04, center=(0.05, -0.05)),
                  field]
        edrs = [energy_decay_ratio(f, m, cfg) for f in tested]
        assert mu <= np.sqrt(max(edrs)) + 0.1
