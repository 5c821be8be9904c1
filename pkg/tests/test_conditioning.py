import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from morphopolicy.conditioning import ConditioningError, FilmGenerator, FilmParams, generate, modulate

from oracles import affine


def t(x):
    return torch.tensor(x, dtype=torch.float64)


def test_zero_init_is_identity():
    gen = FilmGenerator(8).double()
    s = torch.randn(5, 12, dtype=torch.float64) * 10
    z = torch.randn(5, 8, dtype=torch.float64)
    p = generate(gen, s)
    assert (p.gamma == 0).all() and (p.beta == 0).all()
    assert torch.equal(modulate(z, p), z)


def test_gamma_one_doubles():
    z = t([1.0, -2.0, 3.5])
    assert torch.equal(modulate(z, FilmParams(torch.ones(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))), 2 * z)


def test_hand_example():
    out = modulate(t([1.0, 2.0]), FilmParams(t([0.5, -1.0]), t([1.0, 3.0])))
    assert out.tolist() == [2.5, 3.0]


def test_generator_matches_affine_reference():
    torch.manual_seed(4)
    gen = FilmGenerator(3, final_layer_zero_init=False).double()
    s = torch.randn(12, dtype=torch.float64)
    p = gen(s)
    ref = affine(gen.proj.weight.tolist(), gen.proj.bias.tolist(), s.tolist())
    np.testing.assert_allclose(torch.cat([p.gamma, p.beta]).detach().numpy(), ref, rtol=0, atol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_linear_in_descriptor(seed, a, b):
    g = torch.Generator().manual_seed(seed)
    gen = FilmGenerator(4, final_layer_zero_init=False).double()
    with torch.no_grad():
        gen.proj.bias.zero_()
    s1, s2 = (torch.randn(12, generator=g, dtype=torch.float64) for _ in range(2))
    p = generate(gen, a * s1 + b * s2)
    p1, p2 = generate(gen, s1), generate(gen, s2)
    torch.testing.assert_close(p.gamma, a * p1.gamma + b * p2.gamma, rtol=1e-10, atol=1e-10)
    torch.testing.assert_close(p.beta, a * p1.beta + b * p2.beta, rtol=1e-10, atol=1e-10)


def test_broadcast_over_chunks():
    z = torch.randn(4, 3, 6, dtype=torch.float64)
    p = FilmParams(torch.randn(4, 1, 6, dtype=torch.float64), torch.randn(4, 1, 6, dtype=torch.float64))
    out = modulate(z, p)
    for c in range(3):
        torch.testing.assert_close(out[:, c], (1 + p.gamma[:, 0]) * z[:, c] + p.beta[:, 0], rtol=0, atol=0)


def test_descriptor_length_error():
    with pytest.raises(ConditioningError, match="descriptor length 11"):
        generate(FilmGenerator(4), torch.zeros(11))


def test_width_error():
    with pytest.raises(ConditioningError, match="embedding width 5"):
        modulate(torch.zeros(5), FilmParams(torch.zeros(4), torch.zeros(4)))
