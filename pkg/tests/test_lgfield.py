"""Field-synthesis tests: Laguerre recurrence vs closed-form oracle, mode physics."""

import math
from fractions import Fraction

import numpy as np
import pytest

from lgdemux import lgfield as lg


def laguerre_sum_oracle(p: int, alpha: int, x: Fraction) -> Fraction:
    """Independent closed form: L_p^a(x) = sum_k C(p+a, p-k) (-x)^k / k!."""
    total = Fraction(0)
    for k in range(p + 1):
        total += math.comb(p + alpha, p - k) * (-x) ** k / math.factorial(k)
    return total


def count_petals(inten: np.ndarray, grid: lg.GridSpec, ring_r: float) -> int:
    """Dominant azimuthal frequency of the intensity on a ring.

    The angular profile of a two-mode ring is const + cos(dl * phi), so the
    strongest nonzero Fourier bin is |l1 - l2|; FFT counting is immune to the
    staircase wiggles bilinear ring sampling picks up on coarse grids.
    """
    angles = np.linspace(0.0, 2.0 * math.pi, 720, endpoint=False)
    px = (ring_r * np.cos(angles) + grid.extent) / grid.pixel_size - 0.5
    py = (ring_r * np.sin(angles) + grid.extent) / grid.pixel_size - 0.5
    x0, y0 = np.floor(px).astype(int), np.floor(py).astype(int)
    fx, fy = px - x0, py - y0
    vals = (
        inten[y0, x0] * (1 - fx) * (1 - fy)
        + inten[y0, x0 + 1] * fx * (1 - fy)
        + inten[y0 + 1, x0] * (1 - fx) * fy
        + inten[y0 + 1, x0 + 1] * fx * fy
    )
    spectrum = np.abs(np.fft.rfft(vals - vals.mean()))
    return int(np.argmax(spectrum[1:]) + 1)


class TestLaguerre:
    def test_degree_zero_is_one(self):
        assert lg.laguerre(0, 3, 7.2) == 1.0

    def test_degree_one(self):
        assert lg.laguerre(1, 0, 2.0) == -1.0

    def test_hand_value_p3_alpha2(self):
        # exact closed-form value at x = 3/2 is 1/16
        assert laguerre_sum_oracle(3, 2, Fraction(3, 2)) == Fraction(1, 16)
        assert lg.laguerre(3, 2, 1.5) == pytest.approx(0.0625, abs=1e-15)

    @pytest.mark.parametrize("p", range(6))
    @pytest.mark.parametrize("alpha", range(6))
    def test_recurrence_matches_closed_form(self, p, alpha):
        for num, den in [(0, 1), (1, 2), (3, 2), (5, 1), (17, 3), (40, 1)]:
            x = Fraction(num, den)
            want = float(laguerre_sum_oracle(p, alpha, x))
            got = float(lg.laguerre(p, alpha, float(x)))
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_vectorized(self):
        x = np.linspace(0.0, 10.0, 33)
        got = lg.laguerre(2, 1, x)
        want = np.array([float(lg.laguerre(2, 1, float(v))) for v in x])
        np.testing.assert_allclose(got, want, rtol=1e-14)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            lg.laguerre(-1, 0, 1.0)
        with pytest.raises(ValueError):
            lg.laguerre(2, -1, 1.0)


@pytest.fixture(scope="module")
def beam():
    return lg.BeamParams(w0=1.0)


@pytest.fixture(scope="module")
def grid():
    return lg.GridSpec(side=128, extent=lg.auto_extent(3, 3, 1.0))


class TestSynthMode:
    def test_fundamental_is_real_gaussian(self, beam, grid):
        field = lg.synth_mode(lg.ModeIndex(0, 0), beam, grid)
        X, Y = grid.coords()
        want = (1.0 / beam.w0) * math.sqrt(2.0 / math.pi) * np.exp(-(X**2 + Y**2) / beam.w0**2)
        assert np.max(np.abs(field.values.imag)) == 0.0
        np.testing.assert_allclose(field.values.real, want, atol=1e-12)

    def test_fundamental_intensity_analytic(self, beam, grid):
        field = lg.synth_mode(lg.ModeIndex(0, 0), beam, grid)
        X, Y = grid.coords()
        want = (2.0 / math.pi) * np.exp(-2.0 * (X**2 + Y**2) / beam.w0**2)
        assert np.max(np.abs(lg.intensity(field) - want)) < 1e-12

    # Sharp null depth on a grid that resolves the core.  The innermost pixel
    # centers sit at r_min = pixel/sqrt(2), so the center-to-peak ratio is
    # floored at ~e*(2 r_min^2/w0^2)^l; for l = 1 that floor is ~1e-4 here
    # (1e-6 would need a ~8000-pixel side), for l >= 2 it is far below 1e-6.
    @pytest.mark.parametrize("l,bound", [(1, 2e-4), (2, 1e-6), (3, 1e-6)])
    def test_on_axis_null_fine_grid(self, beam, l, bound):
        mode = lg.ModeIndex(0, l)
        fine = lg.GridSpec(side=512, extent=1.30 * lg.rms_radius(mode, beam) / 0.8)
        inten = lg.intensity(lg.synth_mode(mode, beam, fine))
        mid = fine.side // 2
        center4 = inten[mid - 1 : mid + 1, mid - 1 : mid + 1]
        assert center4.max() < bound * inten.max()

    @pytest.mark.parametrize("p", [0, 2, 5])
    @pytest.mark.parametrize("l", [1, 3, 5])
    def test_on_axis_null_local_minimum(self, beam, p, l):
        # at any geometry, the 4 innermost pixels sit strictly below the pixel
        # ring around them (intensity grows as r^{2l} off the vortex core)
        grid = lg.GridSpec(256, lg.auto_extent(5, 5, beam.w0))
        inten = lg.intensity(lg.synth_mode(lg.ModeIndex(p, l), beam, grid))
        mid = grid.side // 2
        center4 = inten[mid - 1 : mid + 1, mid - 1 : mid + 1].max()
        block = inten[mid - 2 : mid + 2, mid - 2 : mid + 2].copy()
        block[1:3, 1:3] = np.inf
        assert center4 < block.min()

    def test_p1_zero_crossing_at_root(self, beam):
        # L_1^0(2 r^2 / w0^2) = 0  at r = w0 / sqrt(2); scan a dense radial ray
        r = np.linspace(1e-4, 3.0, 20000)
        w0 = beam.w0
        amp = lg.laguerre(1, 0, 2.0 * r**2 / w0**2) * np.exp(-(r**2) / w0**2)
        sign_changes = np.where(np.diff(np.sign(amp)) != 0)[0]
        assert len(sign_changes) == 1
        r_cross = r[sign_changes[0]]
        assert r_cross == pytest.approx(w0 / math.sqrt(2.0), abs=2e-4)

    def test_p1_two_radial_maxima(self, beam, grid):
        inten = lg.intensity(lg.synth_mode(lg.ModeIndex(1, 0), beam, grid))
        mid = grid.side // 2
        ray = inten[mid, mid:]
        interior = ray[1:-1]
        maxima = np.where((interior > ray[:-2]) & (interior >= ray[2:]))[0]
        maxima = maxima[interior[maxima] > 1e-9 * ray.max()]
        # central lobe peaks at r=0 (first sample of the ray), plus one ring
        is_center_peak = ray[0] > ray[1]
        assert int(is_center_peak) + len(maxima) == 2

    @pytest.mark.parametrize("p,l", [(0, 0), (1, 2), (3, 3), (2, 1)])
    def test_radial_zero_crossings_count(self, beam, p, l):
        # the radial profile crosses zero exactly p times (roots of L_p^|l|)
        r = np.linspace(1e-4, 4.0, 40000)
        amp = lg.laguerre(p, l, 2.0 * r**2 / beam.w0**2) * np.exp(-(r**2) / beam.w0**2)
        crossings = np.sum(np.diff(np.sign(amp)) != 0)
        assert crossings == p

    def test_rejects_mode_too_large(self, beam):
        small = lg.GridSpec(side=32, extent=1.0)
        with pytest.raises(lg.ModeTooLargeError):
            lg.synth_mode(lg.ModeIndex(5, 5), beam, small)

    def test_mode_index_validation(self):
        with pytest.raises(ValueError):
            lg.ModeIndex(-1, 0)
        with pytest.raises(ValueError):
            lg.ModeIndex(0, -2)


class TestNormalizationOrthogonality:
    def test_power_normalized(self, beam, grid):
        for mode in lg.mode_basis(3, 3):
            power = lg.total_power(lg.synth_mode(mode, beam, grid))
            assert abs(power - 1.0) < 1e-3, f"mode {mode}: power {power}"

    def test_pairwise_orthogonality(self, beam, grid):
        modes = lg.mode_basis(2, 2)
        fields = [lg.synth_mode(m, beam, grid) for m in modes]
        for i in range(len(modes)):
            for j in range(i + 1, len(modes)):
                ip = abs(lg.inner_product(fields[i], fields[j]))
                assert ip < 1e-3, f"<{modes[i]}, {modes[j]}> = {ip}"

    def test_normalization_at_nonzero_z(self):
        beam = lg.BeamParams(w0=1.0, wavelength=0.5, z=math.pi * 2.0)  # z = z_R
        assert beam.w_z == pytest.approx(math.sqrt(2.0))
        grid = lg.GridSpec(side=160, extent=lg.auto_extent(2, 2, beam.w_z))
        for mode in [lg.ModeIndex(0, 0), lg.ModeIndex(2, 1)]:
            power = lg.total_power(lg.synth_mode(mode, beam, grid))
            assert abs(power - 1.0) < 1e-3

    def test_beam_accessors_at_z0(self, beam):
        assert beam.w_z == beam.w0
        assert beam.gouy_phase == 0.0
        assert math.isinf(beam.curvature_radius)
        assert beam.rayleigh_range == pytest.approx(math.pi * beam.w0**2 / beam.wavelength)


class TestSuperpose:
    def test_single_mode_identity(self, beam, grid):
        m = lg.ModeIndex(1, 2)
        a = lg.superpose([m], beam, grid).values
        b = lg.synth_mode(m, beam, grid).values
        np.testing.assert_array_equal(a, b)

    def test_empty_list_rejected(self, beam, grid):
        with pytest.raises(ValueError):
            lg.superpose([], beam, grid)

    def test_linearity_sqrt_n(self, beam, grid):
        m = lg.ModeIndex(0, 2)
        single = lg.synth_mode(m, beam, grid).values
        triple = lg.superpose([m, m, m], beam, grid).values
        np.testing.assert_allclose(triple, math.sqrt(3.0) * single, rtol=1e-12)

    @pytest.mark.parametrize("l1,l2,petals", [(1, 2, 1), (2, 5, 3), (0, 3, 3)])
    def test_azimuthal_petal_count(self, beam, grid, l1, l2, petals):
        # |e^{i l1 phi} + e^{i l2 phi}|^2 = 2 + 2 cos((l1-l2) phi): |l1-l2| maxima
        field = lg.superpose([lg.ModeIndex(0, l1), lg.ModeIndex(0, l2)], beam, grid)
        inten = lg.intensity(field)
        assert count_petals(inten, grid, beam.w0 * math.sqrt(max(max(l1, l2) / 2.0, 0.5))) == petals

    def test_rotation_keyword_rotates_pattern(self, beam, grid):
        modes = [lg.ModeIndex(0, 1), lg.ModeIndex(0, 2)]
        base = lg.intensity(lg.superpose(modes, beam, grid))
        quarter = lg.intensity(lg.superpose(modes, beam, grid, rotation=math.pi / 2.0))
        # rotating the beam 90 deg == rotating the sampled image 90 deg
        np.testing.assert_allclose(np.rot90(base, k=-1), quarter, atol=1e-10 * base.max())


class TestIntensity:
    def test_zero_field(self, grid):
        z = lg.FieldGrid(grid, np.zeros((grid.side, grid.side), dtype=complex))
        assert np.all(lg.intensity(z) == 0.0)

    @pytest.mark.parametrize("p,l", [(0, 1), (2, 3), (1, 0)])
    def test_rot90_invariance_single_mode(self, beam, grid, p, l):
        inten = lg.intensity(lg.synth_mode(lg.ModeIndex(p, l), beam, grid))
        assert np.max(np.abs(np.rot90(inten) - inten)) < 1e-12 * inten.max()

    def test_nonnegative(self, beam, grid):
        inten = lg.intensity(lg.superpose([lg.ModeIndex(0, 1), lg.ModeIndex(2, 0)], beam, grid))
        assert inten.min() >= 0.0


class TestGridSpec:
    def test_pixel_centers_match_convention(self):
        g = lg.GridSpec(side=16, extent=2.0)
        X, _ = g.coords()
        i = np.arange(16)
        want = -g.extent + (i + 0.5) * g.pixel_size
        np.testing.assert_allclose(X[0], want, atol=1e-14)

    def test_antisymmetric_exactly(self):
        g = lg.GridSpec(side=17, extent=1.3)
        X, Y = g.coords()
        assert np.all(X[:, ::-1] == -X)
        assert np.all(Y[::-1, :] == -Y)

    def test_validation(self):
        with pytest.raises(ValueError):
            lg.GridSpec(side=4, extent=1.0)
        with pytest.raises(ValueError):
            lg.GridSpec(side=16, extent=0.0)
