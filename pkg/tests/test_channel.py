"""Channel synthesis, SNR/MRT and gain-structure identity tests.

Direct evaluations here rebuild the per-site expressions from scratch (loops
over sites, explicit diagonal phase matrices) so the stacked fast paths are
checked against an independent computation.
"""

import numpy as np
import pytest

from irsma import channel as ch
from irsma import scenario as sc

LAM = 0.1
RADIO = sc.RadioConstants(wavelength=LAM, transmit_power=0.1, noise_power=1e-12)


def single_point_grid():
    return sc.MaGrid(aperture=LAM, step=LAM, points=np.zeros((1, 3)),
                     side=1, count=1)


def make_site(n_rows=1, n_cols=1, position=(5.0, 0.0, 12.0), orientation="vertical"):
    return sc.IrsSite(index=0, position=np.array(position, dtype=float),
                      orientation=orientation, rows=n_rows, cols=n_cols,
                      spacing=LAM / 2, install_cost=10.0)


def direct_effective_row(scenario, area_idx, u, z, v):
    """Per-site reconstruction of the effective row, independent of ChannelSet."""
    row = np.zeros(scenario.grid.count, dtype=complex)
    start = 0
    for i, site in enumerate(scenario.sites):
        n = site.max_elements
        theta = np.diag(np.conj(v[start:start + n]))
        row += z[i] * (ch.irs_user_channel(site, u, scenario.radio)
                       @ theta @ ch.bs_irs_channel(site, scenario.grid, scenario.radio))
        start += n
    return row


class TestUnitDirection:
    def test_five_twelve_thirteen(self):
        d = ch.unit_direction((0, 0, 0), (5, 0, 12))
        assert np.allclose(d, [5 / 13, 0, 12 / 13])

    def test_axis(self):
        assert np.allclose(ch.unit_direction((0, 0, 0), (0, 0, 1)), [0, 0, 1])

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = rng.normal(size=3)
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            c = rng.uniform(0.1, 50.0)
            assert np.allclose(ch.unit_direction(p, p + c * v), v)

    def test_coincident_points_rejected(self):
        with pytest.raises(sc.GeometryError):
            ch.unit_direction((1, 2, 3), (1, 2, 3))


class TestBsIrsChannel:
    def test_single_element_single_antenna_scalar(self):
        site = make_site()
        g = ch.bs_irs_channel(site, single_point_grid(), RADIO)
        assert g.shape == (1, 1)
        assert g[0, 0] == pytest.approx(np.sqrt(RADIO.c0) / 13.0)
        assert g[0, 0].imag == pytest.approx(0.0)

    def test_entry_magnitudes_uniform(self):
        site = make_site(5, 10)
        grid = sc.build_ma_grid(3 * LAM, LAM / 2)
        g = ch.bs_irs_channel(site, grid, RADIO)
        assert np.allclose(np.abs(g), np.sqrt(RADIO.c0) / site.distance_to_bs)

    def test_rank_one(self):
        site = make_site(5, 10)
        grid = sc.build_ma_grid(3 * LAM, LAM / 2)
        g = ch.bs_irs_channel(site, grid, RADIO)
        svals = np.linalg.svd(g, compute_uv=False)
        assert svals[1] < 1e-12 * svals[0]

    def test_binary_selection_zeroes_columns(self):
        site = make_site(2, 2)
        grid = sc.build_ma_grid(3 * LAM, LAM / 2)
        g = ch.bs_irs_channel(site, grid, RADIO)
        x = np.zeros(grid.count)
        x[[3, 8]] = 1.0
        masked = g @ np.diag(x)
        for m in range(grid.count):
            if x[m]:
                assert np.allclose(masked[:, m], g[:, m])
            else:
                assert np.allclose(masked[:, m], 0.0)


class TestIrsUserChannel:
    def test_single_element_scalar(self):
        site = make_site()
        u = np.array([40.0, 3.0, 0.0])
        h = ch.irs_user_channel(site, u, RADIO)
        dist = np.linalg.norm(u - site.position)
        assert h.shape == (1,)
        assert abs(h[0]) == pytest.approx(np.sqrt(RADIO.c0) / dist)

    def test_magnitudes_shared_across_elements(self):
        site = make_site(5, 10)
        u = np.array([55.0, -10.0, 0.0])
        h = ch.irs_user_channel(site, u, RADIO)
        dist = np.linalg.norm(u - site.position)
        assert np.allclose(np.abs(h), np.sqrt(RADIO.c0) / dist)

    def test_broadside_conjugate_symmetric_pattern(self):
        # symmetric panel, observation on the broadside axis through its
        # center: phases referenced to the center element come in conjugate
        # pairs
        site = make_site(3, 3, position=(0.0, 0.0, 5.0), orientation="horizontal")
        pos = site.element_positions()
        center = pos.mean(axis=0)
        u = center + np.array([0.0, 0.0, -30.0])    # straight below
        h = ch.irs_user_channel(site, u, RADIO)
        hc = h / h[4]                                # center of the 3x3 panel
        for k in range(9):
            mirror = 8 - k
            assert hc[k] == pytest.approx(np.conj(hc[mirror]), rel=1e-10)

    def test_coincident_location_rejected(self):
        site = make_site()
        with pytest.raises(sc.GeometryError):
            ch.irs_user_channel(site, site.position, RADIO)


class TestSnrAndMrt:
    def _tiny(self):
        radio = RADIO
        grid = single_point_grid()
        site = make_site()
        conflicts = sc.conflict_set(sc.build_ma_grid(LAM, LAM), LAM / 2)
        scenario = sc.Scenario(radio=radio, grid=grid,
                               conflicts=sc.ConflictSet(pairs=(), min_distance=LAM / 2),
                               sites=(site,),
                               areas=(sc.TargetArea(index=0, corner=np.array([40.0, 0.0]),
                                                    extent=1.0, resolution=2.0,
                                                    snr_threshold=1.0),),
                               cost=sc.CostModel(ma_unit=1.0, element_unit=1.0))
        return scenario, ch.build_channels(scenario)

    def test_closed_form_single_path(self):
        scenario, channels = self._tiny()
        u = channels.samples[0][0]
        d1 = scenario.sites[0].distance_to_bs
        dt = np.linalg.norm(u - scenario.sites[0].position)
        x = np.ones(1)
        v = np.exp(1j * 0.7) * np.ones(1)
        w = ch.mrt(channels, 0, 0, x, np.ones(1), v)
        got = ch.snr(channels, 0, 0, x, np.ones(1), v, w, scenario.radio)
        expect = scenario.radio.pbar * scenario.radio.c0 ** 2 / (d1 ** 2 * dt ** 2)
        assert got == pytest.approx(expect, rel=1e-10)
        # cross-check against the per-site reconstruction
        row = direct_effective_row(scenario, 0, u, np.ones(1), v)
        assert got == pytest.approx(scenario.radio.pbar * abs(row @ (x * w)) ** 2,
                                    rel=1e-12)

    def test_empty_selection_gives_zero(self, default_scenario_small, default_channels):
        s, channels = default_scenario_small, default_channels
        v = np.exp(1j * np.linspace(0, 5, channels.n_total))
        x = np.zeros(s.grid.count)
        w = np.ones(s.grid.count) / np.sqrt(s.grid.count)
        assert ch.snr(channels, 0, 0, x, np.ones(5), v, w, s.radio) == 0.0

    def test_orthogonal_beamformer_gives_zero(self, default_scenario_small,
                                              default_channels):
        s, channels = default_scenario_small, default_channels
        rng = np.random.default_rng(5)
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, channels.n_total))
        x = np.ones(s.grid.count)
        a = ch.effective_row(channels.psi[0][0], np.ones(channels.n_total), v)
        w = rng.normal(size=s.grid.count) + 1j * rng.normal(size=s.grid.count)
        w -= a.conj() * (a @ w) / (a @ a.conj())
        assert abs(a @ w) < 1e-10 * np.linalg.norm(a) * np.linalg.norm(w)
        got = ch.snr(channels, 0, 0, x, np.ones(5), v, w, s.radio)
        assert got < 1e-12 * s.radio.pbar

    def test_mrt_full_selection_matches_conjugate(self, default_scenario_small,
                                                  default_channels):
        s, channels = default_scenario_small, default_channels
        rng = np.random.default_rng(6)
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, channels.n_total))
        x = np.ones(s.grid.count)
        a = ch.effective_row(channels.psi[0][0], np.ones(channels.n_total), v)
        w = ch.mrt(channels, 0, 0, x, np.ones(5), v)
        assert np.allclose(w, np.conj(a) / np.linalg.norm(a))

    def test_mrt_single_antenna_carries_conjugate_phase(self, default_scenario_small,
                                                        default_channels):
        s, channels = default_scenario_small, default_channels
        rng = np.random.default_rng(7)
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, channels.n_total))
        x = np.zeros(s.grid.count)
        x[11] = 1.0
        w = ch.mrt(channels, 0, 0, x, np.ones(5), v)
        a = ch.effective_row(channels.psi[0][0], np.ones(channels.n_total), v)
        assert abs(w[11]) == pytest.approx(1.0)
        assert np.angle(w[11]) == pytest.approx(-np.angle(a[11]))
        assert np.allclose(np.delete(w, 11), 0.0)

    def test_mrt_beats_random_beamformers(self, default_scenario_small,
                                          default_channels):
        s, channels = default_scenario_small, default_channels
        rng = np.random.default_rng(8)
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, channels.n_total))
        x = (rng.uniform(size=s.grid.count) < 0.4).astype(float)
        x[0] = 1.0
        w_star = ch.mrt(channels, 0, 3, x, np.ones(5), v)
        best = ch.snr(channels, 0, 3, x, np.ones(5), v, w_star, s.radio)
        for _ in range(25):
            w = rng.normal(size=s.grid.count) + 1j * rng.normal(size=s.grid.count)
            w = x * w
            w /= np.linalg.norm(w)
            assert ch.snr(channels, 0, 3, x, np.ones(5), v, w, s.radio) <= best * (1 + 1e-12)

    def test_mrt_zero_channel_raises(self, default_scenario_small, default_channels):
        s, channels = default_scenario_small, default_channels
        v = np.ones(channels.n_total, dtype=complex)
        with pytest.raises(ch.NoLinkError):
            ch.mrt(channels, 0, 0, np.zeros(s.grid.count), np.ones(5), v)

    def test_selection_idempotent(self, default_scenario_small, default_channels):
        s, channels = default_scenario_small, default_channels
        rng = np.random.default_rng(9)
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, channels.n_total))
        x = (rng.uniform(size=s.grid.count) < 0.5).astype(float)
        x[3] = 1.0
        w = ch.mrt(channels, 0, 5, x, np.ones(5), v)
        once = ch.snr(channels, 0, 5, x, np.ones(5), v, w, s.radio)
        twice = ch.snr(channels, 0, 5, x, np.ones(5), v, x * w, s.radio)
        assert once == pytest.approx(twice, rel=1e-14)

    def test_global_phase_invariance(self, default_scenario_small, default_channels):
        s, channels = default_scenario_small, default_channels
        rng = np.random.default_rng(10)
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, channels.n_total))
        x = np.ones(s.grid.count)
        w = ch.mrt(channels, 0, 0, x, np.ones(5), v)
        base = ch.snr(channels, 0, 0, x, np.ones(5), v, w, s.radio)
        for phi in rng.uniform(0, 2 * np.pi, 5):
            assert ch.snr(channels, 0, 0, x, np.ones(5), v * np.exp(1j * phi),
                          w, s.radio) == pytest.approx(base, rel=1e-10)
            assert ch.snr(channels, 0, 0, x, np.ones(5), v,
                          w * np.exp(1j * phi), s.radio) == pytest.approx(base, rel=1e-10)


class TestGainStructures:
    def _random_config(self, scenario, channels, seed):
        rng = np.random.default_rng(seed)
        v = [np.exp(1j * rng.uniform(0, 2 * np.pi, channels.n_total))
             for _ in scenario.areas]
        x = (rng.uniform(size=(scenario.grid.count, len(scenario.areas))) < 0.5).astype(float)
        z = rng.integers(0, 2, size=len(scenario.sites)).astype(float)
        if z.sum() == 0:
            z[0] = 1.0
        return rng, x, z, v

    def test_antenna_gain_expansion_identity(self, default_scenario_small,
                                             default_channels):
        s, channels = default_scenario_small, default_channels
        for seed in range(5):
            rng, x, z, v = self._random_config(s, channels, seed)
            j, smp = seed % 2, (7 * seed) % 36
            u = channels.samples[j][smp]
            gains = ch.antenna_gains(channels.psi[j][smp], channels.element_mask(z), v[j])
            lhs = float(gains @ x[:, j])
            row = direct_effective_row(s, j, u, z, v[j])
            rhs = float(np.sum(np.abs(row * x[:, j]) ** 2))
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_pair_product_hermitian_structure(self, default_scenario_small,
                                              default_channels):
        s, channels = default_scenario_small, default_channels
        rng = np.random.default_rng(21)
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, channels.n_total))
        pairs, prod = ch.site_pair_products(channels.psi[0][0],
                                            channels.site_slices(), v)
        b = ch.site_rows(channels.psi[0][0], channels.site_slices(), v)
        for p, (l, lp) in enumerate(pairs):
            assert np.allclose(prod[p], b[l] * np.conj(b[lp]))
            if l == lp:
                assert np.all(prod[p].real >= -1e-15)
                assert np.allclose(prod[p].imag, 0.0, atol=1e-18)

    def test_phase_gram_psd_and_identity(self, default_scenario_small,
                                         default_channels):
        s, channels = default_scenario_small, default_channels
        for seed in range(4):
            rng, x, z, v = self._random_config(s, channels, 100 + seed)
            r = ch.phase_gram(channels.psi[0][seed], x[:, 0])
            eig = np.linalg.eigvalsh(r)
            assert eig.min() >= -1e-10 * max(np.trace(r).real, 1e-30)
            quad = float(np.real(np.conj(v[0]) @ r @ v[0]))
            gains = ch.antenna_gains(channels.psi[0][seed],
                                     np.ones(channels.n_total), v[0])
            assert quad == pytest.approx(float(gains @ (x[:, 0] ** 2)), rel=1e-10)

    def test_element_gram_identities(self, default_scenario_small, default_channels):
        s, channels = default_scenario_small, default_channels
        for seed in range(4):
            rng, x, z, v = self._random_config(s, channels, 200 + seed)
            j, smp = seed % 2, (11 * seed) % 36
            q = ch.element_gram(channels.psi[j][smp], x[:, j],
                                channels.element_mask(z), v[j])
            assert np.allclose(q, np.conj(q.T))
            # all-ones indicator reproduces the selected-squared norm
            ones = np.ones(channels.n_total)
            lhs = float(np.real(ones @ q @ ones))
            row = direct_effective_row(s, j, channels.samples[j][smp], z, v[j])
            rhs = float(np.sum(np.abs(row * x[:, j]) ** 2))
            assert lhs == pytest.approx(rhs, rel=1e-10)
            # single-element selector reads the non-negative diagonal
            k = int(rng.integers(channels.n_total))
            e_k = np.zeros(channels.n_total)
            e_k[k] = 1.0
            assert float(np.real(e_k @ q @ e_k)) == pytest.approx(q[k, k].real, rel=1e-12)
            assert q[k, k].real >= -1e-18

    def test_magnitude_structure(self, default_scenario_small, default_channels):
        s, channels = default_scenario_small, default_channels
        start = 0
        for i, site in enumerate(s.sites):
            n = site.max_elements
            block = channels.gbar[start:start + n]
            assert np.allclose(np.abs(block),
                               np.sqrt(s.radio.c0) / site.distance_to_bs)
            dists = channels.context.sample_distances[0][:, i]
            h_block = channels.h[0][:, start:start + n]
            assert np.allclose(np.abs(h_block), np.sqrt(s.radio.c0) / dists[:, None])
            start += n

    def test_steering_context_unit_norm(self, default_channels):
        ctx = default_channels.context
        assert np.allclose(np.linalg.norm(ctx.bs_to_site, axis=1), 1.0)
        for dep in ctx.departures:
            assert np.allclose(np.linalg.norm(dep, axis=2), 1.0)

    def test_cascade_rows_match_diag_product(self, default_channels):
        channels = default_channels
        psi = channels.psi[1][17]
        h = channels.h[1][17]
        assert np.allclose(psi, np.diag(h) @ channels.gbar)


class TestAuditPath:
    def test_reference_matches_fast_path_on_samples(self, default_scenario_small,
                                                    default_channels):
        s, channels = default_scenario_small, default_channels
        rng = np.random.default_rng(31)
        v = [np.exp(1j * rng.uniform(0, 2 * np.pi, channels.n_total)) for _ in range(2)]
        x = np.zeros((s.grid.count, 2))
        x[rng.permutation(s.grid.count)[:5], 0] = 1.0
        x[rng.permutation(s.grid.count)[:4], 1] = 1.0
        z = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        for j in (0, 1):
            for smp in (0, 9, 35):
                w = ch.mrt(channels, j, smp, x[:, j], z, v[j])
                fast = ch.snr(channels, j, smp, x[:, j], z, v[j], w, s.radio)
                ref = ch.reference_snr(s, j, channels.samples[j][smp], x[:, j], z, v[j])
                assert ref == pytest.approx(fast, rel=1e-10)

    def test_dump_channels_round_trips(self, default_channels, tmp_path):
        import json
        path = tmp_path / "channels.jsonl"
        ch.dump_channels(default_channels, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 72
        rec = json.loads(lines[0])
        assert rec["area"] == 0 and len(rec["magnitude"]) == 250
