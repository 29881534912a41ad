import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqportrait import spectral
from freqportrait.errors import ContractError, InvalidInputError
from oracles import check_grad, direct_dft2, direct_frequency_loss, gaussian_blur

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def t64(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def test_constant_image_has_only_dc():
    x = torch.full((1, 5, 7), 0.3, dtype=torch.float64)
    s = spectral.fft2(x).data
    assert s[0, 0, 0].real == pytest.approx(0.3 * 35)
    rest = s.clone()
    rest[0, 0, 0] = 0
    assert rest.abs().max() < 1e-12


def test_impulse_2x2_all_ones():
    x = torch.zeros(1, 2, 2, dtype=torch.float64)
    x[0, 0, 0] = 1
    assert torch.allclose(spectral.fft2(x).data, torch.ones(1, 2, 2, dtype=torch.complex128))


def test_fft2_matches_direct_dft(rng):
    x = rng.standard_normal((2, 8, 8))
    got = spectral.fft2(t64(x)).data.numpy()
    want = direct_dft2(x)
    assert np.abs(got - want).max() / np.abs(want).max() < 1e-6


def test_fft2_rejects_non_finite():
    x = torch.zeros(1, 4, 4)
    x[0, 1, 1] = float("nan")
    with pytest.raises(InvalidInputError):
        spectral.fft2(x)
    with pytest.raises(InvalidInputError):
        spectral.fft2(torch.tensor([[1.0, float("inf")]]))


def test_round_trip_float32(rng):
    x = torch.as_tensor(rng.standard_normal((3, 16, 16)), dtype=torch.float32)
    assert (spectral.ifft2(spectral.fft2(x)) - x).abs().max() < 1e-5


def test_ifft2_of_zero_is_zero():
    z = spectral.Spectrum(torch.zeros(2, 4, 4, dtype=torch.complex64))
    assert torch.equal(spectral.ifft2(z), torch.zeros(2, 4, 4))


def test_all_ones_real_filter_is_identity(rng):
    x = t64(rng.standard_normal((1, 4, 4)))
    s = spectral.fft2(x) * spectral.Spectrum.from_real_filter(torch.ones(1, 4, 4, dtype=torch.float64))
    assert torch.allclose(spectral.ifft2(s), x, atol=1e-12)


def test_conjugate_symmetry_of_real_input(rng):
    x = t64(rng.standard_normal((2, 6, 5)))
    d = spectral.fft2(x).data
    h, w = d.shape[-2:]
    k = (-torch.arange(h)) % h
    l = (-torch.arange(w)) % w
    mirrored = d[:, k][:, :, l].conj()
    assert torch.allclose(d, mirrored, atol=1e-12)


def test_frequency_loss_examples(rng):
    a = torch.zeros(1, 2, 2, dtype=torch.float64)
    b = torch.zeros(1, 2, 2, dtype=torch.float64)
    a[0, 0, 0] = 1
    b[0, 1, 1] = 1
    assert spectral.frequency_loss(a, b).item() == pytest.approx(1.0, abs=1e-15)
    assert spectral.frequency_loss(a, a).item() == 0.0

    x, y = rng.standard_normal((2, 1, 8, 8))
    got = spectral.frequency_loss(t64(x), t64(y)).item()
    assert got == pytest.approx(direct_frequency_loss(x, y), rel=1e-6)


def test_frequency_loss_shape_mismatch():
    with pytest.raises(ContractError):
        spectral.frequency_loss(torch.zeros(1, 4, 4), torch.zeros(1, 4, 5))


def test_frequency_loss_gradient(rng):
    a = t64(rng.standard_normal((2, 8, 8))).requires_grad_()
    b = t64(rng.standard_normal((2, 8, 8)))
    assert check_grad(lambda: spectral.frequency_loss(a, b), [a]) < 1e-4


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 6, 6), elements=finite))
def test_parseval(x):
    s = spectral.fft2(t64(x)).data
    lhs = (x ** 2).sum()
    rhs = (s.abs() ** 2).sum().item() / 36
    assert rhs == pytest.approx(lhs, rel=1e-6, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (1, 4, 5), elements=finite), arrays(np.float64, (1, 4, 5), elements=finite),
       finite, finite)
def test_linearity(x, y, alpha, beta):
    lhs = spectral.fft2(t64(alpha * x + beta * y)).data
    rhs = alpha * spectral.fft2(t64(x)).data + beta * spectral.fft2(t64(y)).data
    assert torch.allclose(lhs, rhs, atol=1e-8 * (1 + rhs.abs().max().item()))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 1, 4, 4), elements=finite))
def test_frequency_loss_metric_axioms(abc):
    a, b, c = (t64(v) for v in abc)
    ab = spectral.frequency_loss(a, b).item()
    assert ab >= 0
    assert ab == spectral.frequency_loss(b, a).item()
    ac = spectral.frequency_loss(a, c).item()
    cb = spectral.frequency_loss(c, b).item()
    assert ab <= ac + cb + 1e-9


def test_radial_profile_constant_image():
    prof = spectral.radial_energy_profile(spectral.fft2(torch.full((1, 8, 8), 0.5)), 4)
    assert prof[0] > 0
    assert np.all(prof[1:] == 0)


def test_radial_profile_sums_to_energy(rng):
    s = spectral.fft2(t64(rng.standard_normal((3, 9, 8))))
    prof = spectral.radial_energy_profile(s, 7)
    assert prof.sum() == pytest.approx(s.energy().item(), rel=1e-6)


def test_radial_profile_white_noise_fills_all_bins(rng):
    s = spectral.fft2(t64(rng.standard_normal((1, 32, 32))))
    assert np.all(spectral.radial_energy_profile(s, 8) > 0)


def test_blur_removes_high_radius_energy(rng):
    img = rng.random((1, 32, 32))
    n = 8
    orig = spectral.radial_energy_profile(spectral.fft2(t64(img)), n)
    blur = spectral.radial_energy_profile(spectral.fft2(t64(gaussian_blur(img))), n)
    assert blur[n // 2:].sum() < orig[n // 2:].sum()


def test_radial_profile_bin_count_validated():
    with pytest.raises(ContractError):
        spectral.radial_energy_profile(spectral.fft2(torch.zeros(1, 4, 4)), 0)
