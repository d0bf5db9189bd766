import math

import numpy as np
import pytest
from scipy.integrate import quad

from meltnet.container import pack_blob, read_blob, unpack_blob, write_blob
from meltnet.exceptions import ChecksumError, ConfigurationError, TruncatedBlobError, VersionMismatchError
from meltnet.physics import (
    SS316L,
    TI64,
    EnthalpyModel,
    HeatSolver,
    SimulationConfig,
    SimulationState,
    absorptivity,
    absorptivity_from_scaling,
    carve_keyhole,
    case_grid,
    case_id_for,
    gaussian_flux,
    generate_cases,
    get_material,
    interpolate_property,
    max_diffusivity,
    read_case,
    run_case,
    stable_timestep,
    substep_count,
    write_case,
)


def small_config(**kw):
    base = dict(nx=24, ny=16, nz=8, frame_count=3, frame_interval=5e-6, beam_start=8.0, velocity=0.5)
    base.update(kw)
    return SimulationConfig(**base)


def random_state(config, rng, lo=293.0, hi=1500.0, latent=True):
    model = EnthalpyModel(TI64, config.ambient_temperature, latent_heat=latent, constant_properties=config.constant_properties)
    T = rng.uniform(lo, hi, size=(config.nx, config.ny, config.nz))
    return SimulationState(T, model.enthalpy(T), np.zeros(T.shape, bool)), model


class TestMaterials:
    def test_table_anchors(self):
        assert interpolate_property(TI64, 298.0)[2] == 7.0
        assert interpolate_property(TI64, 1923.0)[2] == 33.4
        assert interpolate_property(TI64, 1110.5)[2] == pytest.approx(20.2)

    def test_clamped_outside_anchors(self):
        assert interpolate_property(TI64, 100.0) == interpolate_property(TI64, 298.0)
        assert interpolate_property(TI64, 3000.0) == interpolate_property(TI64, 1923.0)

    def test_melt_temperatures(self):
        assert TI64.t_melt == 1898.0
        assert SS316L.t_melt == 1705.5

    def test_invalid_material(self):
        with pytest.raises(ConfigurationError):
            TI64.with_overrides(t_vaporization=1000.0)
        with pytest.raises(ConfigurationError):
            TI64.with_overrides(density_298=-1.0)
        with pytest.raises(ConfigurationError):
            get_material("unobtainium")

    def test_lookup_is_forgiving(self):
        assert get_material("ti64") is TI64
        assert get_material("Ti-6Al-4V") is TI64

    def test_default_melting_enthalpy(self):
        mean_cp = (546 + 831) / 2
        assert TI64.melting_enthalpy == pytest.approx(4420 * (mean_cp * (1898 - 298) + 2.86e5))


class TestEnthalpy:
    @pytest.mark.parametrize("material", [TI64, SS316L])
    def test_matches_quadrature(self, material):
        model = EnthalpyModel(material)
        lo, hi = material.mushy_range

        def integrand(t):
            rho, cp, _ = interpolate_property(material, t)
            if lo < t < hi:
                cp += material.latent_fusion / (hi - lo)
            return rho * cp

        for t in (500.0, 1500.0, 0.5 * (lo + hi), 2500.0, 3200.0):
            ref, _ = quad(integrand, 293.0, t, points=[298.0, lo, hi, 1923.0], limit=200)
            assert model.enthalpy(t) == pytest.approx(ref, rel=1e-10)

    def test_inverse_round_trip(self):
        model = EnthalpyModel(TI64)
        t = np.linspace(293.0, 3300.0, 5001)
        np.testing.assert_allclose(model.temperature(model.enthalpy(t)), t, rtol=0, atol=1e-8)

    def test_monotone(self):
        e = EnthalpyModel(SS316L).enthalpy(np.linspace(250.0, 3500.0, 10001))
        assert np.all(np.diff(e) > 0)

    def test_latent_jump_across_mushy_zone(self):
        with_l = EnthalpyModel(TI64).enthalpy(1950.0)
        without = EnthalpyModel(TI64, latent_heat=False).enthalpy(1950.0)
        rho_mid = 0.5 * (interpolate_property(TI64, 1873.0)[0] + interpolate_property(TI64, 1923.0)[0])
        assert with_l - without == pytest.approx(rho_mid * TI64.latent_fusion, rel=1e-3)


class TestSource:
    def test_peak_flux(self):
        assert gaussian_flux(100.0, 50e-6, 0.0) == pytest.approx(1.2732e10, rel=1e-4)

    def test_one_over_e(self):
        q0 = gaussian_flux(100.0, 50e-6, 0.0)
        assert gaussian_flux(100.0, 50e-6, 50e-6 / math.sqrt(2)) == pytest.approx(q0 / math.e)

    def test_plane_integral_is_half_power(self):
        r0, dx = 50e-6, 1e-6
        x = (np.arange(-400, 400) + 0.5) * dx
        r = np.hypot(x[:, None], x[None, :])
        assert gaussian_flux(100.0, r0, r).sum() * dx * dx == pytest.approx(50.0, rel=1e-2)

    def test_absorptivity_limits(self):
        assert absorptivity_from_scaling(0.0) == 0.0
        assert absorptivity_from_scaling(1.0) == pytest.approx(0.33820, abs=1e-5)
        assert absorptivity_from_scaling(20.0) > 0.699

    def test_absorptivity_printed_form_is_tiny(self):
        a = absorptivity(TI64, 200.0, 0.8, 50e-6)
        assert 0.0 < a < 1e-5

    def test_absorptivity_dimensionless_form(self):
        a = absorptivity(TI64, 200.0, 0.8, 50e-6, model="normalized_enthalpy")
        assert 0.3 < a < 0.7
        assert absorptivity(TI64, 300.0, 0.8, 50e-6, model="normalized_enthalpy") > a

    @pytest.mark.parametrize("kw", [dict(velocity=0.0), dict(beam_radius=-1.0)])
    def test_absorptivity_validation(self, kw):
        args = dict(power=200.0, velocity=0.8, beam_radius=50e-6) | kw
        with pytest.raises(ConfigurationError):
            absorptivity(TI64, **args)


class TestTimestep:
    def test_ti64_five_micron(self):
        cfg = SimulationConfig(cell_size=5e-6)
        assert max_diffusivity(TI64) == pytest.approx(1.025e-5, rel=1e-3)
        assert stable_timestep(cfg, TI64) == pytest.approx(3.66e-7, rel=2e-3)
        assert substep_count(cfg, TI64) == 14

    def test_quadratic_in_cell_size(self):
        a = stable_timestep(SimulationConfig(cell_size=5e-6), TI64)
        b = stable_timestep(SimulationConfig(cell_size=10e-6), TI64)
        assert b / a == pytest.approx(4.0)


class TestConfig:
    def test_beam_must_stay_inside(self):
        with pytest.raises(ConfigurationError, match="beam leaves"):
            SimulationConfig(velocity=5.0).validate()
        SimulationConfig(velocity=5.0, allow_exit=True).validate()

    def test_round_trip(self):
        cfg = small_config(power=123.0)
        assert SimulationConfig.from_dict(cfg.to_dict()) == cfg

    def test_case_ids(self):
        assert case_id_for(SimulationConfig(power=200.0, velocity=0.8)) == "Ti64_P200_V800"
        grid = case_grid(SimulationConfig(), [100, 200], [0.5, 1.0])
        assert [(c.power, c.velocity) for c in grid] == [(100, 0.5), (100, 1.0), (200, 0.5), (200, 1.0)]


class TestSolver:
    def test_uniform_field_unchanged(self):
        cfg = small_config(power=0.0)
        solver = HeatSolver(cfg)
        state = SimulationState.ambient(cfg)
        state.temperature[:] = 900.0
        state.enthalpy[:] = solver.model.enthalpy(900.0)
        for _ in range(5):
            solver.step(state)
        np.testing.assert_allclose(state.temperature, 900.0, rtol=0, atol=1e-9)

    def test_maximum_principle(self):
        cfg = small_config(power=0.0)
        state, _ = random_state(cfg, np.random.default_rng(0))
        lo, hi = state.temperature.min(), state.temperature.max()
        solver = HeatSolver(cfg)
        for _ in range(50):
            solver.step(state)
        assert state.temperature.min() >= lo - 1e-9
        assert state.temperature.max() <= hi + 1e-9

    def test_void_faces_are_insulating(self):
        cfg = small_config(power=0.0)
        state, model = random_state(cfg, np.random.default_rng(1))
        state.void[5:9] = True
        state.temperature[state.void] = 293.0
        state.enthalpy[state.void] = 0.0
        total = state.enthalpy.sum()
        solver = HeatSolver(cfg)
        for _ in range(20):
            solver.step(state)
        assert state.enthalpy.sum() == pytest.approx(total, rel=1e-12)
        assert np.all(state.temperature[state.void] == 293.0)

    def test_source_heats_top_layer_first(self):
        cfg = small_config(power=100.0, fixed_absorptivity=0.5)
        solver = HeatSolver(cfg)
        state = SimulationState.ambient(cfg)
        solver.step(state)
        assert state.temperature[:, :, 0].max() > 293.0
        assert np.all(state.temperature[:, :, 1] == 293.0)

    def test_instability_reports_diagnostics(self):
        from meltnet.exceptions import SimulationInstabilityError

        cfg = small_config(power=0.0)
        state, _ = random_state(cfg, np.random.default_rng(2))
        solver = HeatSolver(cfg)
        with pytest.raises(SimulationInstabilityError, match="dt="):
            for _ in range(200):
                solver.step(state, dt=solver.dt * 40)


class TestCarving:
    def test_no_hot_cells_is_noop(self):
        cfg = small_config()
        state = SimulationState.ambient(cfg)
        before = state.temperature.copy()
        carve_keyhole(state, TI64)
        assert np.array_equal(before, state.temperature) and not state.void.any()

    def test_hot_cell_becomes_ambient_void(self):
        cfg = small_config()
        state = SimulationState.ambient(cfg)
        state.temperature[3, 4, 0] = TI64.t_vaporization + 1.0
        state.enthalpy[3, 4, 0] = 1e10
        carve_keyhole(state, TI64)
        assert state.void[3, 4, 0] and state.void.sum() == 1
        assert state.temperature[3, 4, 0] == 293.0 and state.enthalpy[3, 4, 0] == 0.0


class TestRunCase:
    def test_zero_power(self):
        res = run_case(small_config(power=0.0))
        assert np.all(res.frames == np.float32(293.0))
        assert not res.voids.any()
        assert res.frames.dtype == np.float32

    def test_deterministic(self):
        a = run_case(small_config(power=150.0))
        b = run_case(small_config(power=150.0))
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.voids.tobytes() == b.voids.tobytes()

    def test_frame_times(self):
        res = run_case(small_config(frame_count=4))
        assert [res.frame_time(k) for k in range(4)] == pytest.approx([5e-6, 10e-6, 15e-6, 20e-6])

    def test_case_round_trip(self, tmp_path):
        res = run_case(small_config(power=150.0))
        write_case(res, tmp_path / "c")
        back = read_case(tmp_path / "c")
        assert back.frames.tobytes() == res.frames.tobytes()
        assert np.array_equal(back.voids, res.voids)
        assert back.config == res.config
        assert back.meta["substeps_per_frame"] == res.substeps

    def test_generate_cases_writes_one_dir_per_case(self, tmp_path):
        cfgs = case_grid(small_config(frame_count=1), [50.0, 100.0], [0.5])
        paths = generate_cases(cfgs, tmp_path)
        assert sorted(p.name for p in paths) == ["Ti64_P100_V500", "Ti64_P50_V500"]


class TestContainer:
    def test_round_trip(self, tmp_path):
        a = np.random.default_rng(0).random((3, 4)).astype(np.float32)
        write_blob(tmp_path / "a.bin", a)
        assert read_blob(tmp_path / "a.bin", "<f4", (3, 4)).tobytes() == a.tobytes()

    def test_header_is_eight_bytes(self):
        raw = pack_blob(np.zeros(2, np.float32))
        assert raw[:6] == b"MLTNET" and len(raw) == 8 + 8 + 8

    def test_corrupted_byte(self):
        raw = bytearray(pack_blob(np.arange(10, dtype=np.float32)))
        raw[12] ^= 0xFF
        with pytest.raises(ChecksumError):
            unpack_blob(bytes(raw))

    def test_truncated(self):
        raw = pack_blob(np.arange(10, dtype=np.float32))
        with pytest.raises(TruncatedBlobError):
            unpack_blob(raw[:-3])

    def test_version(self):
        raw = bytearray(pack_blob(np.arange(3, dtype=np.float32)))
        raw[6] = 9
        with pytest.raises(VersionMismatchError):
            unpack_blob(bytes(raw))
