import math

import numpy as np
import pytest
import torch

from relattr.data import TripletBatch
from relattr.losses import (
    DEFAULT_WEIGHTS,
    LOSS_KEYS,
    LOSS_TERMS,
    LossReport,
    NonFiniteLossError,
    cycle_loss,
    gradient_penalty,
    interp_losses,
    match_losses,
    match_losses_from_scores,
    ortho_reg,
    real_losses,
    reduce_scores,
    self_loss,
    total_losses,
)
from relattr.networks import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    image_to_tensor,
)
from relattr.types import AttributeVector, ImageBatch, RangeError

SIZE = 16
N_ATTRS = 3


@pytest.fixture(scope="module")
def tiny_gen():
    torch.manual_seed(10)
    g = Generator(
        GeneratorConfig(
            n_attributes=N_ATTRS, base_channels=8, n_residual_blocks=1,
            image_size=SIZE, normalization="instance",
        )
    ).double()
    return g.eval()


@pytest.fixture(scope="module")
def tiny_disc():
    torch.manual_seed(11)
    d = Discriminator(
        DiscriminatorConfig(
            n_attributes=N_ATTRS, base_channels=8, n_trunk_layers=2, image_size=SIZE
        )
    ).double()
    return d.eval()


def images(b, seed):
    rng = np.random.default_rng(seed)
    return ImageBatch(rng.uniform(-1, 1, size=(b, SIZE, SIZE, 3)).astype(np.float32))


def labels(rows):
    names = tuple(f"a{i}" for i in range(N_ATTRS))
    return tuple(AttributeVector(np.array(r), names) for r in rows)


def triplet(seed=0, b=2):
    rng = np.random.default_rng(seed)
    rows = lambda: labels(rng.integers(0, 2, size=(b, N_ATTRS)))
    return TripletBatch(
        x1=images(b, seed + 1), x2=images(b, seed + 2), x3=images(b, seed + 3),
        a1=rows(), a2=rows(), a3=rows(),
    )


class TestRealLosses:
    def test_perfect_discriminator(self):
        d, g = real_losses(torch.ones(4), torch.zeros(4))
        assert d.item() == 0.0
        assert g.item() == 1.0

    def test_fooled_discriminator(self):
        _, g = real_losses(torch.ones(4), torch.ones(4))
        assert g.item() == 0.0

    def test_halfway_scores(self):
        d, g = real_losses(torch.full((4,), 0.5), torch.full((4,), 0.5))
        assert d.item() == pytest.approx(0.5)
        assert g.item() == pytest.approx(0.25)

    def test_score_maps_are_reduced_per_image(self):
        real = torch.tensor([[[[1.0, 0.0], [1.0, 0.0]]]])  # spatial mean 0.5
        fake = torch.zeros(1, 1, 2, 2)
        d, _ = real_losses(real, fake)
        assert d.item() == pytest.approx((0.5 - 1.0) ** 2)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteLossError) as exc:
            real_losses(torch.tensor([float("nan")]), torch.zeros(1))
        assert exc.value.term == "real_D"


class TestReduceScores:
    def test_map_to_per_image_scalar(self):
        maps = torch.arange(16.0).reshape(2, 1, 2, 4)
        out = reduce_scores(maps)
        assert out.shape == (2,)
        assert out[0].item() == pytest.approx(3.5)

    def test_identity_on_vectors(self):
        v = torch.tensor([1.0, 2.0])
        assert torch.equal(reduce_scores(v), v)


class TestMatchFromScores:
    def test_optimum_is_zero(self):
        one, zero = torch.ones(2), torch.zeros(2)
        d, g = match_losses_from_scores(one, zero, [zero] * 4)
        assert d.item() == 0.0
        assert g.item() == 1.0

    def test_documented_example(self):
        s_r = torch.tensor([0.8])
        s_f = torch.tensor([0.3])
        s_w = [torch.tensor([x]) for x in (0.1, 0.2, 0.0, 0.4)]
        d, g = match_losses_from_scores(s_r, s_f, s_w)
        # (0.8-1)^2 + 0.3^2 + 0.01 + 0.04 + 0 + 0.16
        assert d.item() == pytest.approx(0.34)
        assert g.item() == pytest.approx(0.49)

    def test_generator_term_ignores_wrong_scores(self):
        s_r, s_f = torch.tensor([0.9]), torch.tensor([0.4])
        wrongs = [torch.tensor([0.7])] * 4
        _, g1 = match_losses_from_scores(s_r, s_f, wrongs)
        _, g2 = match_losses_from_scores(s_r, s_f, [torch.zeros(1)] * 4)
        assert g1.item() == g2.item() == pytest.approx(0.36)

    def test_requires_exactly_four_wrong_scores(self):
        one = torch.ones(1)
        for k in (3, 5):
            with pytest.raises(ValueError):
                match_losses_from_scores(one, one, [one] * k)


def reference_match(gen, disc, trip):
    """Independent per-image transliteration of the matching objective."""
    a1, a2, a3 = (np.stack([a.values for a in rows]) for rows in (trip.a1, trip.a2, trip.a3))
    as_t = lambda arr: torch.as_tensor(arr, dtype=torch.float64)
    v12, v32, v13 = as_t(a2 - a1), as_t(a2 - a3), as_t(a3 - a1)
    x1 = image_to_tensor(trip.x1, torch.float64)
    x2 = image_to_tensor(trip.x2, torch.float64)
    x3 = image_to_tensor(trip.x3, torch.float64)
    fake = gen(x1, v12)
    f = lambda t: disc.features(t)
    score = lambda fx, v, fy: reduce_scores(disc.match_score(fx, v, fy))

    s_real = score(f(x1), v12, f(x2))
    s_fake = score(f(x1), v12, f(fake))
    wrongs = [
        score(f(x3), v12, f(x2)),
        score(f(x1), v32, f(x2)),
        score(f(x1), v13, f(x2)),
        score(f(x1), v12, f(x3)),
    ]
    loss_d = ((s_real - 1) ** 2).mean() + (s_fake ** 2).mean()
    for w in wrongs:
        loss_d = loss_d + (w ** 2).mean()
    loss_g = ((s_fake - 1) ** 2).mean()
    return loss_d, loss_g


class TestMatchLosses:
    def test_agrees_with_reference(self, tiny_gen, tiny_disc):
        for seed in (0, 1, 2):
            trip = triplet(seed)
            d, g = match_losses(tiny_gen, tiny_disc, trip)
            rd, rg = reference_match(tiny_gen, tiny_disc, trip)
            assert d.item() == pytest.approx(rd.item(), rel=1e-12)
            assert g.item() == pytest.approx(rg.item(), rel=1e-12)

    def test_generator_loss_blind_to_third_image(self, tiny_gen, tiny_disc):
        # swapping x3 moves the discriminator loss but not the generator's
        trip_a = triplet(5)
        trip_b = TripletBatch(
            x1=trip_a.x1, x2=trip_a.x2, x3=images(2, 999),
            a1=trip_a.a1, a2=trip_a.a2, a3=trip_a.a3,
        )
        da, ga = match_losses(tiny_gen, tiny_disc, trip_a)
        db, gb = match_losses(tiny_gen, tiny_disc, trip_b)
        assert ga.item() == pytest.approx(gb.item(), rel=1e-12)
        assert da.item() != pytest.approx(db.item(), rel=1e-12)

    def test_generator_gradient_flows_only_through_fake_score(self, tiny_gen, tiny_disc):
        trip = triplet(7)
        _, g = match_losses(tiny_gen, tiny_disc, trip)
        grads = torch.autograd.grad(g, list(tiny_gen.parameters()), allow_unused=True)
        assert any(gr is not None and gr.abs().sum() > 0 for gr in grads)

    def test_discriminator_loss_detaches_generator(self, tiny_gen, tiny_disc):
        trip = triplet(8)
        d, _ = match_losses(tiny_gen, tiny_disc, trip)
        grads = torch.autograd.grad(d, list(tiny_gen.parameters()), allow_unused=True)
        assert all(gr is None or gr.abs().sum() == 0 for gr in grads)


def reference_interp(gen, disc, x, v, alphas):
    xt = image_to_tensor(x, torch.float64)
    vt = torch.as_tensor(v, dtype=torch.float64)
    rows_d, rows_g = [], []
    for i, a in enumerate(alphas):
        xi, vi = xt[i : i + 1], vt[i : i + 1]
        y = lambda img: disc.interp_score(disc.features(img))
        y_mid = y(gen(xi, a * vi))
        if a <= 0.5:
            y_ref = y(gen(xi, 0 * vi))
            target = a
        else:
            y_ref = y(gen(xi, vi))
            target = 1.0 - a
        rows_d.append((y_ref.detach() ** 2, (y_mid.detach() - target) ** 2))
        rows_g.append(y_mid ** 2)
    loss_d = torch.cat([r[0] for r in rows_d]).mean() + torch.cat(
        [r[1] for r in rows_d]
    ).mean()
    loss_g = torch.cat(rows_g).mean()
    return loss_d, loss_g


class TestInterpLosses:
    @pytest.mark.parametrize("alphas", [(0.2, 0.4), (0.7, 0.9), (0.3, 0.8)])
    def test_agrees_with_reference(self, tiny_gen, tiny_disc, alphas):
        x = images(2, 20)
        v = np.array([[1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        d, g = interp_losses(tiny_gen, tiny_disc, x, v, np.array(alphas))
        rd, rg = reference_interp(tiny_gen, tiny_disc, x, v, alphas)
        assert d.item() == pytest.approx(rd.item(), rel=1e-12)
        assert g.item() == pytest.approx(rg.item(), rel=1e-12)

    def test_midpoint_targets_half(self, tiny_gen, tiny_disc):
        x = images(1, 21)
        v = np.array([[1.0, 1.0, 0.0]])
        d, _ = interp_losses(tiny_gen, tiny_disc, x, v, 0.5)
        xt = image_to_tensor(x, torch.float64)
        vt = torch.as_tensor(v, dtype=torch.float64)
        y0 = tiny_disc.interp_score(tiny_disc.features(tiny_gen(xt, 0 * vt)))
        ym = tiny_disc.interp_score(tiny_disc.features(tiny_gen(xt, 0.5 * vt)))
        expected = y0.item() ** 2 + (ym.item() - 0.5) ** 2
        assert d.item() == pytest.approx(expected, rel=1e-12)

    def test_zero_alpha_uses_identity_reference(self, tiny_gen, tiny_disc):
        x = images(1, 22)
        v = np.array([[0.0, 1.0, 1.0]])
        d, _ = interp_losses(tiny_gen, tiny_disc, x, v, 0.0)
        xt = image_to_tensor(x, torch.float64)
        y0 = tiny_disc.interp_score(
            tiny_disc.features(tiny_gen(xt, torch.zeros(1, 3, dtype=torch.float64)))
        )
        # reference and midpoint coincide at alpha == 0
        assert d.item() == pytest.approx(2 * y0.item() ** 2, rel=1e-12)

    def test_generator_term_is_squared_midpoint_score(self, tiny_gen, tiny_disc):
        x = images(2, 23)
        v = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
        alphas = np.array([0.25, 0.75])
        _, g = interp_losses(tiny_gen, tiny_disc, x, v, alphas)
        xt = image_to_tensor(x, torch.float64)
        vt = torch.as_tensor(v, dtype=torch.float64)
        at = torch.as_tensor(alphas, dtype=torch.float64).reshape(2, 1)
        ym = tiny_disc.interp_score(tiny_disc.features(tiny_gen(xt, at * vt)))
        assert g.item() == pytest.approx((ym ** 2).mean().item(), rel=1e-12)

    def test_rejects_alpha_outside_unit_interval(self, tiny_gen, tiny_disc):
        with pytest.raises(RangeError):
            interp_losses(tiny_gen, tiny_disc, images(1, 24), np.zeros((1, 3)), 1.2)

    def test_discriminator_loss_detaches_generator(self, tiny_gen, tiny_disc):
        d, _ = interp_losses(
            tiny_gen, tiny_disc, images(2, 25), np.ones((2, 3)), np.array([0.3, 0.6])
        )
        grads = torch.autograd.grad(d, list(tiny_gen.parameters()), allow_unused=True)
        assert all(gr is None or gr.abs().sum() == 0 for gr in grads)


class _ShiftStub:
    """Callable generator stand-in: adds a constant, ignores v."""

    def __init__(self, delta):
        self.delta = delta

    def __call__(self, x, v):
        return x + self.delta


class TestReconstructionLosses:
    def test_identity_generator_scores_zero(self):
        x = images(2, 30)
        assert cycle_loss(_ShiftStub(0.0), x, np.zeros((2, N_ATTRS))).item() == 0.0
        assert self_loss(_ShiftStub(0.0), x, N_ATTRS).item() == 0.0

    def test_constant_shift_accumulates_over_cycle(self):
        x = images(2, 31)
        v = np.zeros((2, N_ATTRS))
        loss = cycle_loss(_ShiftStub(0.1), x, v)
        assert loss.item() == pytest.approx(0.2, rel=1e-6)
        assert self_loss(_ShiftStub(0.1), x, N_ATTRS).item() == pytest.approx(0.1, rel=1e-6)

    def test_cycle_negates_v_on_the_way_back(self, tiny_gen):
        x = images(1, 32)
        v = np.array([[1.0, 0.0, 0.0]])
        xt = image_to_tensor(x, torch.float64)
        vt = torch.as_tensor(v, dtype=torch.float64)
        expected = (tiny_gen(tiny_gen(xt, vt), -vt) - xt).abs().mean()
        got = cycle_loss(tiny_gen, x, v)
        assert got.item() == pytest.approx(expected.item(), rel=1e-12)

    def test_losses_are_nonnegative(self, tiny_gen):
        x = images(2, 33)
        v = np.tile(np.array([[0.0, -1.0, 1.0]]), (2, 1))
        assert cycle_loss(tiny_gen, x, v).item() >= 0
        assert self_loss(tiny_gen, x).item() >= 0


class TestOrthoReg:
    def test_all_ones_kernel(self):
        w = torch.ones(2, 1, 1, 2)  # rows identical: gram off-diagonal 2, squared 4, twice
        assert ortho_reg([w]).item() == pytest.approx(8.0)

    def test_orthogonal_rows_score_zero(self):
        w = torch.empty(8, 32)
        torch.nn.init.orthogonal_(w)
        assert ortho_reg([w.reshape(8, 8, 2, 2)]).item() == pytest.approx(0.0, abs=1e-10)

    def test_quartic_scaling(self):
        w = torch.randn(4, 3, 3, 3, generator=torch.Generator().manual_seed(0))
        base = ortho_reg([w]).item()
        assert ortho_reg([2 * w]).item() == pytest.approx(16 * base, rel=1e-5)

    def test_freshly_initialized_generator_scores_near_zero(self, tiny_gen):
        # every generator kernel has out <= in * k * k, so orthogonal rows exist
        assert ortho_reg(tiny_gen).item() < 1e-8

    def test_module_form_counts_only_conv_kernels(self, tiny_gen):
        manual = ortho_reg(
            [
                m.weight
                for m in tiny_gen.modules()
                if isinstance(m, (torch.nn.Conv2d, torch.nn.ConvTranspose2d))
            ]
        )
        assert ortho_reg(tiny_gen).item() == manual.item()

    def test_empty_source(self):
        assert ortho_reg([]).item() == 0.0


class TestGradientPenalty:
    def test_unit_gradient_scores_zero(self):
        w = torch.full((3, 4, 4), 1.0 / math.sqrt(48))
        score = lambda img: (img * w).sum(dim=(1, 2, 3))
        real = torch.randn(2, 3, 4, 4, dtype=torch.float64)
        fake = torch.randn(2, 3, 4, 4, dtype=torch.float64)
        gp = gradient_penalty(score, real, fake, np.array([0.3, 0.8]))
        assert gp.item() == pytest.approx(0.0, abs=1e-12)

    def test_documented_linear_example(self):
        score = lambda img: 2.0 * img.sum(dim=(1, 2, 3))
        real = torch.randn(2, 3, 4, 4, dtype=torch.float64)
        fake = torch.randn(2, 3, 4, 4, dtype=torch.float64)
        gp = gradient_penalty(score, real, fake, np.array([0.5, 0.1]))
        n = real[0].numel()
        assert gp.item() == pytest.approx((2 * math.sqrt(n) - 1) ** 2, rel=1e-12)

    def test_anchors_interpolate_real_and_fake(self):
        seen = []

        def score(img):
            seen.append(img.detach().clone())
            return img.sum(dim=(1, 2, 3))

        real = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
        fake = torch.ones(1, 3, 4, 4, dtype=torch.float64)
        gradient_penalty(score, real, fake, np.array([0.25]))
        # u mixes toward the real sample: anchor = u*real + (1-u)*fake
        assert seen[0].mean().item() == pytest.approx(0.75)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gradient_penalty(
                lambda im: im.sum(dim=(1, 2, 3)),
                torch.zeros(1, 3, 4, 4),
                torch.zeros(1, 3, 8, 8),
                np.array([0.5]),
            )

    def test_penalty_reaches_discriminator_parameters(self, tiny_disc):
        real = torch.randn(2, 3, SIZE, SIZE, dtype=torch.float64)
        fake = torch.randn(2, 3, SIZE, SIZE, dtype=torch.float64)
        score = lambda img: reduce_scores(tiny_disc.real_score(tiny_disc.features(img)))
        gp = gradient_penalty(score, real, fake, np.array([0.4, 0.6]))
        grads = torch.autograd.grad(gp, list(tiny_disc.parameters()), allow_unused=True)
        assert any(g is not None and g.abs().sum() > 0 for g in grads)


class TestTotals:
    def _terms(self, value=0.0):
        return {k: torch.tensor(value) for k in LOSS_TERMS}

    def test_zero_terms_give_zero_totals(self):
        out = total_losses(self._terms(0.0))
        assert out["total_D"].item() == 0.0
        assert out["total_G"].item() == 0.0

    def test_weighted_sums(self):
        terms = {k: torch.tensor(float(i + 1)) for i, k in enumerate(LOSS_TERMS)}
        out = total_losses(
            terms, weight_match=2.0, weight_interp=3.0, weight_cycle=5.0,
            weight_self=7.0, weight_ortho=11.0, weight_gp=13.0,
        )
        t = {k: float(i + 1) for i, k in enumerate(LOSS_TERMS)}
        want_d = t["real_D"] + 2 * t["match_D"] + 3 * t["interp_D"] + 13 * (t["gp_real"] + t["gp_match"])
        want_g = t["real_G"] + 2 * t["match_G"] + 3 * t["interp_G"] + 5 * t["cycle"] + 7 * t["self"] + 11 * t["ortho"]
        assert out["total_D"].item() == pytest.approx(want_d)
        assert out["total_G"].item() == pytest.approx(want_g)

    def test_default_weights_match_published_recipe(self):
        assert DEFAULT_WEIGHTS == {
            "weight_match": 1.0, "weight_interp": 10.0, "weight_cycle": 10.0,
            "weight_self": 10.0, "weight_ortho": 1e-6, "weight_gp": 10.0,
        }

    def test_missing_term_rejected(self):
        terms = self._terms()
        terms.pop("cycle")
        with pytest.raises(ValueError, match="cycle"):
            total_losses(terms)

    def test_keeps_component_terms(self):
        out = total_losses(self._terms(1.0))
        assert set(out) == set(LOSS_KEYS)


class TestLossReport:
    def _values(self):
        return {k: float(i) for i, k in enumerate(LOSS_KEYS)}

    def test_attribute_and_mapping_access(self):
        r = LossReport(self._values())
        assert r["self"] == r.self
        assert r.total_G == self._values()["total_G"]

    def test_exact_key_set_required(self):
        values = self._values()
        values.pop("ortho")
        with pytest.raises(ValueError):
            LossReport(values)
        values = self._values()
        values["extra"] = 1.0
        with pytest.raises(ValueError):
            LossReport(values)

    def test_non_finite_rejected(self):
        values = self._values()
        values["cycle"] = float("inf")
        with pytest.raises(NonFiniteLossError):
            LossReport(values)

    def test_json_round_trip_and_order(self):
        import json

        r = LossReport(self._values())
        blob = r.to_json(iteration=12)
        parsed = json.loads(blob)
        assert list(parsed)[: len(LOSS_KEYS)] == list(LOSS_KEYS)
        assert parsed["iteration"] == 12
