"""Adversarial training loop: alternating least-squares updates for the
generator and the three-headed discriminator, with deterministic resume.

Per-iteration randomness (triplet draw, interpolation coefficients,
penalty anchors) comes from a generator seeded with (seed, iteration), so
a resumed run replays the exact trajectory of an uninterrupted one.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import TripletBatch, sample_triplets
from .losses import (
    LossReport,
    gradient_penalty,
    match_losses_from_scores,
    ortho_reg,
    reduce_scores,
    total_losses,
)
from .networks import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    config_hash,
    image_to_tensor,
    load_checkpoint,
    save_checkpoint,
)


class CheckpointWriteError(RuntimeError):
    """Checkpoint could not be written; carries the live state for a retry."""

    def __init__(self, path, cause, state):
        super().__init__(f"failed to write checkpoint {path}: {cause}")
        self.state = state


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 4
    total_iterations: int = 100000
    weight_match: float = 1.0
    weight_interp: float = 10.0
    weight_cycle: float = 10.0
    weight_self: float = 10.0
    weight_ortho: float = 1e-6
    weight_gp: float = 10.0
    d_steps_per_g_step: int = 1
    d_lr_multiplier: float = 1.0
    grad_clip_norm: float | None = None
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 100
    normalization: str = "switchable"
    dataset: str = "toy"
    image_size: int = 256
    generator_base_channels: int = 64
    n_residual_blocks: int = 6
    discriminator_base_channels: int = 64
    n_trunk_layers: int = 6
    resample_wrong_triplets: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("weight_match", "weight_interp", "weight_cycle",
                     "weight_self", "weight_ortho", "weight_gp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be >= 1")
        if self.d_lr_multiplier <= 0:
            raise ValueError("d_lr_multiplier must be > 0")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be > 0 when set")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale preset: small nets, 64x64, hotter lr for the short budget."""
        defaults = dict(
            learning_rate=2e-4,
            batch_size=16,
            total_iterations=8000,
            image_size=64,
            grad_clip_norm=100.0,
            normalization="switchable",
            generator_base_channels=12,
            n_residual_blocks=3,
            discriminator_base_channels=16,
            n_trunk_layers=4,
            # at this scale the matching game needs a heavy thumb on the
            # scale: with the published weights the discriminator's match
            # head settles into scoring every triplet alike (the constant
            # minimum of its loss) and the generator never learns to apply
            # edits at all; boosting the match weight and letting the
            # discriminator outpace the generator keeps that head sharp
            weight_match=10.0,
            resample_wrong_triplets=True,
            d_lr_multiplier=4.0,
            checkpoint_every=1000,
            log_every=100,
            dataset="toy",
        )
        defaults.update(overrides)
        return cls(**defaults)

    def weights(self) -> dict:
        return {
            "weight_match": self.weight_match,
            "weight_interp": self.weight_interp,
            "weight_cycle": self.weight_cycle,
            "weight_self": self.weight_self,
            "weight_ortho": self.weight_ortho,
            "weight_gp": self.weight_gp,
        }


def network_configs(config: TrainConfig, n_attributes: int):
    gen = GeneratorConfig(
        n_attributes=n_attributes,
        base_channels=config.generator_base_channels,
        n_residual_blocks=config.n_residual_blocks,
        normalization=config.normalization,
        image_size=config.image_size,
    )
    disc = DiscriminatorConfig(
        n_attributes=n_attributes,
        base_channels=config.discriminator_base_channels,
        n_trunk_layers=config.n_trunk_layers,
        image_size=config.image_size,
    )
    return gen, disc


@dataclass
class TrainState:
    config: TrainConfig
    generator: Generator
    discriminator: Discriminator
    g_optimizer: torch.optim.Optimizer
    d_optimizer: torch.optim.Optimizer
    attribute_names: tuple = ()
    iteration: int = 0
    running: dict = field(default_factory=dict)

    def update_running(self, report: LossReport, decay: float = 0.99):
        for key, value in report.items():
            prev = self.running.get(key)
            self.running[key] = value if prev is None else decay * prev + (1 - decay) * value


def init_state(config: TrainConfig, n_attributes: int, attribute_names=()) -> TrainState:
    torch.manual_seed(config.seed)
    gen_cfg, disc_cfg = network_configs(config, n_attributes)
    generator = Generator(gen_cfg)
    discriminator = Discriminator(disc_cfg)
    g_opt = torch.optim.Adam(
        generator.parameters(), lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    d_opt = torch.optim.Adam(
        discriminator.parameters(),
        lr=config.learning_rate * config.d_lr_multiplier,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    return TrainState(
        config=config, generator=generator, discriminator=discriminator,
        g_optimizer=g_opt, d_optimizer=d_opt,
        attribute_names=tuple(attribute_names),
    )


def rng_for_iteration(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng((seed, 3, iteration))


def train_step(state: TrainState, triplet: TripletBatch, rng,
               *, update_generator: bool = True,
               update_discriminator: bool = True) -> tuple[TrainState, LossReport]:
    """One alternation: d_steps_per_g_step discriminator updates, one generator update.

    The four generator forwards (edit, identity, interpolation, cycle) are
    computed once with graph; the discriminator phase consumes detached
    copies, the generator phase re-scores the stored graph against the
    freshly updated discriminator.
    """
    cfg = state.config
    G, D = state.generator, state.discriminator
    p = next(D.parameters())
    a1, a2, a3 = triplet.label_arrays()
    v12 = a2 - a1
    v32 = a2 - a3
    v13 = a3 - a1
    b = triplet.batch_size

    to_t = lambda arr: torch.as_tensor(np.asarray(arr, np.float64), dtype=p.dtype, device=p.device)
    x1 = image_to_tensor(triplet.x1, p.dtype, p.device)
    x2 = image_to_tensor(triplet.x2, p.dtype, p.device)
    x3 = image_to_tensor(triplet.x3, p.dtype, p.device)
    v12_t, v32_t, v13_t = to_t(v12), to_t(v32), to_t(v13)

    alpha = rng.uniform(0.0, 1.0, size=b)
    alpha_t = to_t(alpha)

    # all generator outputs for this iteration, kept with graph
    fake = G(x1, v12_t)
    zero = G(x1, torch.zeros_like(v12_t))
    mid = G(x1, alpha_t.view(b, 1) * v12_t)
    cyc = G(fake, -v12_t)

    low = (alpha_t <= 0.5).view(b, 1, 1, 1)
    degree = torch.minimum(alpha_t, 1.0 - alpha_t)

    d_report = {}
    for _ in range(cfg.d_steps_per_g_step if update_discriminator else 0):
        fake_d, zero_d, mid_d = fake.detach(), zero.detach(), mid.detach()
        ref_d = torch.where(low, zero_d, fake.detach())

        feats = D.features(torch.cat([x1, x2, x3, fake_d], dim=0))
        f1, f2, f3, ff = feats[:b], feats[b:2 * b], feats[2 * b:3 * b], feats[3 * b:]

        s_real = reduce_scores(D.real_score(f1))
        s_fake = reduce_scores(D.real_score(ff))
        real_d = ((s_real - 1.0) ** 2).mean() + (s_fake ** 2).mean()

        m_real = reduce_scores(D.match_score(f1, v12_t, f2))
        m_fake = reduce_scores(D.match_score(f1, v12_t, ff))
        m_wrong = (
            reduce_scores(D.match_score(f3, v12_t, f2)),
            reduce_scores(D.match_score(f1, v32_t, f2)),
            reduce_scores(D.match_score(f1, v13_t, f2)),
            reduce_scores(D.match_score(f1, v12_t, f3)),
        )
        match_d, _ = match_losses_from_scores(m_real, m_fake, m_wrong)

        y_ref = D.interp_score(D.features(ref_d))
        y_mid = D.interp_score(D.features(mid_d))
        interp_d = (y_ref ** 2).mean() + ((y_mid - degree) ** 2).mean()

        u_real = rng.uniform(0.0, 1.0, size=b)
        u_match = rng.uniform(0.0, 1.0, size=b)
        gp_real = gradient_penalty(
            lambda img: D.real_score(D.features(img)), x1, fake_d, u_real
        )
        gp_match = gradient_penalty(
            lambda img: D.match_score(f1, v12_t, D.features(img)), x2, fake_d, u_match
        )

        total_d = (
            real_d
            + cfg.weight_match * match_d
            + cfg.weight_interp * interp_d
            + cfg.weight_gp * (gp_real + gp_match)
        )
        state.d_optimizer.zero_grad(set_to_none=True)
        state.g_optimizer.zero_grad(set_to_none=True)
        total_d.backward(retain_graph=True)
        # rare penalty-anchor spikes blow up Adam without this cap
        if cfg.grad_clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(D.parameters(), cfg.grad_clip_norm)
        state.d_optimizer.step()

        d_report = {
            "real_D": float(real_d.detach()),
            "match_D": float(match_d.detach()),
            "interp_D": float(interp_d.detach()),
            "gp_real": float(gp_real.detach()),
            "gp_match": float(gp_match.detach()),
        }

    if not d_report:
        d_report = {"real_D": 0.0, "match_D": 0.0, "interp_D": 0.0,
                    "gp_real": 0.0, "gp_match": 0.0}

    # generator phase scores the stored graph against the updated discriminator
    feats_g = D.features(torch.cat([x1, fake, mid], dim=0))
    f1g, ffg, fmg = feats_g[:b], feats_g[b:2 * b], feats_g[2 * b:]
    real_g = ((reduce_scores(D.real_score(ffg)) - 1.0) ** 2).mean()
    match_g = ((reduce_scores(D.match_score(f1g, v12_t, ffg)) - 1.0) ** 2).mean()
    interp_g = (D.interp_score(fmg) ** 2).mean()
    cycle = (cyc - x1).abs().mean()
    self_term = (zero - x1).abs().mean()
    ortho = ortho_reg(G)

    total_g = (
        real_g
        + cfg.weight_match * match_g
        + cfg.weight_interp * interp_g
        + cfg.weight_cycle * cycle
        + cfg.weight_self * self_term
        + cfg.weight_ortho * ortho
    )
    if update_generator:
        state.g_optimizer.zero_grad(set_to_none=True)
        state.d_optimizer.zero_grad(set_to_none=True)
        total_g.backward()
        if cfg.grad_clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(G.parameters(), cfg.grad_clip_norm)
        state.g_optimizer.step()
        state.d_optimizer.zero_grad(set_to_none=True)

    terms = dict(
        d_report,
        real_G=float(real_g.detach()),
        match_G=float(match_g.detach()),
        interp_G=float(interp_g.detach()),
        cycle=float(cycle.detach()),
        ortho=float(ortho.detach()),
        **{"self": float(self_term.detach())},
    )
    report = LossReport(total_losses(terms, **cfg.weights()))
    state.iteration += 1
    state.update_running(report)
    return state, report


def _as_table_fetch(dataset, split: str = "train"):
    if hasattr(dataset, "table") and hasattr(dataset, "fetch"):
        return dataset.table(split), dataset.fetch(split)
    table, fetch = dataset
    return table, fetch


def _write_checkpoint(path, state: TrainState):
    try:
        save_checkpoint(
            path,
            generator=state.generator,
            discriminator=state.discriminator,
            g_optimizer=state.g_optimizer,
            d_optimizer=state.d_optimizer,
            iteration=state.iteration,
            train_config=asdict(state.config),
            attribute_names=state.attribute_names,
            extra={"running": dict(state.running)},
        )
    except (OSError, RuntimeError) as e:
        # torch.save wraps filesystem failures in RuntimeError
        raise CheckpointWriteError(path, e, state) from e


def resume_state(config: TrainConfig, payload: dict) -> TrainState:
    stored = payload.get("train_config")
    if stored is None or config_hash(stored) != config_hash(asdict(config)):
        from .networks import CheckpointMismatchError

        raise CheckpointMismatchError("resume config differs from checkpointed config")
    state = init_state(config, payload["generator_config"]["n_attributes"],
                       payload.get("attribute_names", ()))
    state.generator.load_state_dict(payload["generator_state"])
    state.discriminator.load_state_dict(payload["discriminator_state"])
    if payload.get("g_optimizer_state"):
        state.g_optimizer.load_state_dict(payload["g_optimizer_state"])
    if payload.get("d_optimizer_state"):
        state.d_optimizer.load_state_dict(payload["d_optimizer_state"])
    state.iteration = payload["iteration"]
    state.running = dict(payload.get("extra", {}).get("running", {}))
    return state


def train(config: TrainConfig, dataset, out_dir, *, log_sink=None,
          resume_from=None, step_callback=None) -> Path:
    """Run the full loop; returns the path of the final checkpoint.

    ``log_sink`` receives one JSON line per log_every iterations.
    ``step_callback(state, report)`` runs after every step when given.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, fetch = _as_table_fetch(dataset)

    if resume_from is not None:
        state = resume_state(config, load_checkpoint(resume_from))
    else:
        state = init_state(config, len(table.names), table.names)
    state.generator.train()
    state.discriminator.train()

    periodic = out / "checkpoint.pt"
    final = out / "final.pt"
    t0 = time.time()
    for it in range(state.iteration, config.total_iterations):
        rng = rng_for_iteration(config.seed, it)
        triplet = sample_triplets(
            table, fetch, config.batch_size, rng,
            avoid_attribute_collisions=config.resample_wrong_triplets,
        )
        state, report = train_step(state, triplet, rng)
        if log_sink is not None and (it + 1) % config.log_every == 0:
            line = report.to_json(iteration=state.iteration, wall_time=round(time.time() - t0, 3))
            if callable(log_sink):
                log_sink(line)
            else:
                log_sink.write(line + "\n")
                log_sink.flush()
        if (it + 1) % config.checkpoint_every == 0:
            _write_checkpoint(periodic, state)
        if step_callback is not None:
            step_callback(state, report)
    _write_checkpoint(final, state)
    return final
