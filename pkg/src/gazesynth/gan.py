"""Spectrally regularised GANs for velocity sequences.

Four generator/discriminator pairings are supported (LSTM or CNN on either
side). Generators emit one channel in [0, 1]; the discriminator returns one
probability per sequence. Training alternates one discriminator Adam step
and one generator Adam step per minibatch, the generator minimising
``L_G + lambda * L_spectral``.
"""

from __future__ import annotations

import contextlib
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import neural as nn
from .data import DataError, Normalizer
from .metrics import DEFAULT_BINS, DEFAULT_EPS_H, js_between_samples
from .neural.tape import Tensor, clamp, log, mean
from .spectral import EPS_SPEC, spectral_loss

logger = logging.getLogger(__name__)

EPS_P = 1e-7
KINDS = ("lstm", "cnn")
ALL_PAIRINGS = (("cnn", "cnn"), ("lstm", "cnn"), ("cnn", "lstm"), ("lstm", "lstm"))


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GanConfig:
    generator: str = "lstm"
    discriminator: str = "cnn"
    seq_len: int = 200
    batch_size: int = 128
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    noise_dim: int = 256
    epochs: int = 500
    spectral_weight: float = 0.1
    eps_spec: float = EPS_SPEC
    seed: int = 0
    eval_samples: int = 128
    eval_bins: int = DEFAULT_BINS
    window_start: int = 100
    lstm_hidden: int = 16
    disc_lstm_hidden: int = 64
    leaky_slope: float = 0.2

    def validate(self):
        if self.generator not in KINDS or self.discriminator not in KINDS:
            raise ConfigError(f"architecture kinds must be in {KINDS}")
        if self.spectral_weight < 0:
            raise ConfigError("spectral weight (lambda) must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2")
        if self.seq_len < 2:
            raise ConfigError("sequence length must be >= 2")
        if self.noise_dim < 1:
            raise ConfigError("noise dimension must be >= 1")
        if self.eval_samples < 1:
            raise ConfigError("eval_samples must be >= 1")
        if "cnn" in (self.generator, self.discriminator) and (self.seq_len % 8 or self.seq_len < 8):
            lo = self.seq_len // 8 * 8
            raise ConfigError(
                f"CNN ladder needs a sequence length divisible by 8 (base length L/8); "
                f"got {self.seq_len}, try {max(lo, 8)} or {lo + 8}"
            )
        return self

    @property
    def pairing(self):
        return f"{self.generator.upper()}-{self.discriminator.upper()}"


# architectures -------------------------------------------------------------------

class Network:
    """A bag of layers with a forward function."""

    layers: list

    def parameters(self):
        out = {}
        for layer in self.layers:
            out.update(layer.parameters())
        return out

    def state_arrays(self):
        out = {}
        for layer in self.layers:
            out.update(layer.state_arrays())
        return out


def _unit_interval(y):
    # tanh output mapped affinely from [-1, 1] to [0, 1]
    return (nn.tanh(y) + 1.0) * 0.5


class LstmGenerator(Network):
    """Independent uniform noise vector per time step -> LSTM -> dense -> [0, 1]."""

    def __init__(self, config, rng):
        self.config = config
        self.lstm = nn.LSTM(config.noise_dim, config.lstm_hidden, rng, name="g.lstm")
        self.out = nn.Dense(config.lstm_hidden, 1, rng, name="g.out")
        self.layers = [self.lstm, self.out]

    def sample_noise(self, count, rng):
        return rng.random((count, self.config.seq_len, self.config.noise_dim))

    def __call__(self, noise, training=True):
        h = self.lstm(noise)
        y = _unit_interval(self.out(h))  # B, T, 1
        return y.transpose(0, 2, 1)


class CnnGenerator(Network):
    """Noise vector -> projection to (256, L/8) -> three fractional-strided convs -> [0, 1]."""

    channels = (256, 128, 64, 1)

    def __init__(self, config, rng):
        self.config = config
        self.base = config.seq_len // 8
        c = self.channels
        self.project = nn.Dense(config.noise_dim, c[0] * self.base, rng, name="g.project")
        self.deconvs = [nn.ConvTranspose1d(c[i], c[i + 1], 4, 2, 1, rng, name=f"g.deconv{i}") for i in range(3)]
        self.norms = [nn.BatchNorm1d(c[i + 1], name=f"g.bn{i}") for i in range(2)]
        self.layers = [self.project, *self.deconvs, *self.norms]

    def sample_noise(self, count, rng):
        return rng.random((count, self.config.noise_dim))

    def __call__(self, noise, training=True):
        x = self.project(noise).reshape(-1, self.channels[0], self.base)
        for i in range(2):
            x = nn.relu(self.norms[i](self.deconvs[i](x), training=training))
        return _unit_interval(self.deconvs[2](x))


class CnnDiscriminator(Network):
    """Three strided convs (L -> L/8, channels 1 -> 256) with LeakyReLU, then dense + sigmoid."""

    channels = (1, 64, 128, 256)

    def __init__(self, config, rng):
        self.config = config
        c = self.channels
        self.convs = [nn.Conv1d(c[i], c[i + 1], 4, 2, 1, rng, name=f"d.conv{i}") for i in range(3)]
        self.norms = [nn.BatchNorm1d(c[i + 1], name=f"d.bn{i}") for i in (1, 2)]
        self.out = nn.Dense(c[3] * (config.seq_len // 8), 1, rng, name="d.out")
        self.layers = [*self.convs, *self.norms, self.out]

    def logits(self, x, training=True):
        slope = self.config.leaky_slope
        h = nn.leaky_relu(self.convs[0](x), slope)
        for conv, bn in zip(self.convs[1:], self.norms):
            h = nn.leaky_relu(bn(conv(h), training=training), slope)
        return self.out(h.reshape(h.shape[0], -1)).reshape(-1)

    def __call__(self, x, training=True):
        return nn.sigmoid(self.logits(x, training))


class LstmDiscriminator(Network):
    """LSTM over the sequence, per-step dense + sigmoid, mean probability over steps."""

    def __init__(self, config, rng):
        self.config = config
        self.lstm = nn.LSTM(1, config.disc_lstm_hidden, rng, name="d.lstm")
        self.out = nn.Dense(config.disc_lstm_hidden, 1, rng, name="d.out")
        self.layers = [self.lstm, self.out]

    def __call__(self, x, training=True):
        h = self.lstm(nn.as_tensor(x).transpose(0, 2, 1))  # B, T, hidden
        p = nn.sigmoid(self.out(h))  # B, T, 1
        return mean(p.reshape(p.shape[0], -1), axis=1)


def build_generator(config, seed=None):
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return (LstmGenerator if config.generator == "lstm" else CnnGenerator)(config, rng)


def build_discriminator(config, seed=None):
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return (LstmDiscriminator if config.discriminator == "lstm" else CnnDiscriminator)(config, rng)


# losses ----------------------------------------------------------------------------

def _probabilities(p):
    p = nn.as_tensor(p)
    if p.data.size == 0:
        raise ValueError("empty batch")
    return clamp(p, EPS_P, 1.0 - EPS_P)


def generator_loss(d_on_fake):
    """Non-saturating generator loss, -mean(log D(G(z)))."""
    return -mean(log(_probabilities(d_on_fake)))


def discriminator_loss(d_on_real, d_on_fake):
    """Minimisation form: -mean(log D(x) + log(1 - D(G(z))))."""
    real = _probabilities(d_on_real)
    fake = _probabilities(d_on_fake)
    return -(mean(log(real)) + mean(log(1.0 - fake)))


def combined_loss(l_g, l_spectral, spectral_weight):
    if spectral_weight < 0:
        raise ConfigError("spectral weight must be >= 0")
    if spectral_weight == 0:
        return nn.as_tensor(l_g)
    return l_g + spectral_weight * l_spectral


# training --------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    l_g: float
    l_d: float
    l_spectral: float
    l_final: float
    d_js: float
    seconds: float


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, include_seconds=False):
        cols = ["epoch", "l_g", "l_d", "l_spectral", "l_final", "d_js"] + (["seconds"] if include_seconds else [])
        lines = [",".join(cols)]
        for r in self.records:
            lines.append(",".join(str(r.epoch) if c == "epoch" else repr(float(getattr(r, c))) for c in cols))
        return "\n".join(lines) + "\n"


@dataclass
class GanModel:
    generator: Network
    discriminator: Network
    config: GanConfig
    normalizer: Normalizer | None
    seed: int

    def to_payload(self):
        def arrays(net):
            out = {k: t.data.tolist() for k, t in net.parameters().items()}
            out.update({k: v.tolist() for k, v in net.state_arrays().items()})
            return out

        return {
            "architecture": asdict(self.config),
            "generator": arrays(self.generator),
            "discriminator": arrays(self.discriminator),
            "normalizer": None if self.normalizer is None else self.normalizer.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_payload(cls, payload):
        config = GanConfig(**payload["architecture"]).validate()
        gen = build_generator(config)
        disc = build_discriminator(config)
        for net, stored in ((gen, payload["generator"]), (disc, payload["discriminator"])):
            targets = {k: t.data for k, t in net.parameters().items()}
            targets.update(net.state_arrays())
            if set(targets) != set(stored):
                raise DataError("stored parameter names do not match the architecture")
            for k, arr in targets.items():
                value = np.asarray(stored[k], dtype=np.float64)
                if value.shape != arr.shape:
                    raise DataError(f"parameter {k}: stored shape {value.shape} != {arr.shape}")
                arr[...] = value
        norm = payload.get("normalizer")
        return cls(gen, disc, config, None if norm is None else Normalizer(norm["min"], norm["max"]), payload["seed"])


@contextlib.contextmanager
def _frozen(net):
    params = list(net.parameters().values())
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    if n <= batch_size:
        return [perm]
    full = n // batch_size
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(full)]


def _check_dataset(dataset, config):
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise DataError("dataset must be a non-empty (n_sequences, length) array")
    if data.shape[1] != config.seq_len:
        raise DataError(f"dataset sequence length {data.shape[1]} != configured {config.seq_len}")
    if len(data) < 2:
        raise DataError("dataset needs at least 2 sequences")
    if not np.all(np.isfinite(data)):
        raise DataError("dataset contains non-finite values")
    return data


def _finite(value, what, epoch, batch):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} at epoch {epoch}, batch {batch}")
    return value


def sample_generator(generator, count, rng, chunk=256):
    """Run the generator in eval mode; returns (count, L) values in [0, 1]."""
    out = []
    for start in range(0, count, chunk):
        n = min(chunk, count - start)
        out.append(generator(generator.sample_noise(n, rng), training=False).data[:, 0, :])
    return np.concatenate(out) if out else np.empty((0, generator.config.seq_len))


def train(dataset, config, normalizer=None, callback=None):
    """Train a GAN on normalised sequences; returns ``(GanModel, TrainingHistory)``."""
    config = config.validate()
    data = _check_dataset(dataset, config)
    g_seed, d_seed, train_seed, eval_seed = np.random.SeedSequence(config.seed).spawn(4)
    gen = build_generator(config, g_seed)
    disc = build_discriminator(config, d_seed)
    rng = np.random.default_rng(train_seed)
    eval_rng = np.random.default_rng(eval_seed)
    adam_kw = dict(lr=config.lr, betas=(config.beta1, config.beta2))
    opt_g = nn.Adam(gen.parameters(), **adam_kw)
    opt_d = nn.Adam(disc.parameters(), **adam_kw)
    pool = data.ravel()
    history = TrainingHistory()

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        sums = np.zeros(4)
        batches = _batches(len(data), config.batch_size, rng)
        for b, idx in enumerate(batches):
            real = data[idx]
            real_t = Tensor(real[:, None, :])
            fake = gen(gen.sample_noise(len(idx), rng), training=True)

            loss_d = discriminator_loss(disc(real_t), disc(fake.detach()))
            _finite(loss_d.item(), "discriminator loss", epoch, b)
            opt_d.step(nn.tape_backward(loss_d))

            with _frozen(disc):
                l_g = generator_loss(disc(fake))
                l_spec = spectral_loss(real, fake.reshape(len(idx), -1), config.eps_spec)
                l_final = combined_loss(l_g, l_spec, config.spectral_weight)
                _finite(l_final.item(), "generator loss", epoch, b)
                opt_g.step(nn.tape_backward(l_final))
            sums += (l_g.item(), loss_d.item(), l_spec.item(), l_final.item())

        means = sums / len(batches)
        synthetic = sample_generator(gen, config.eval_samples, eval_rng)
        d_js = js_between_samples(synthetic, pool, config.eval_bins, DEFAULT_EPS_H)
        record = EpochRecord(epoch, *map(float, means), float(d_js), time.perf_counter() - start)
        history.records.append(record)
        if callback is not None:
            callback(record)
        logger.debug("epoch %d: %s", epoch, record)

    return GanModel(gen, disc, config, normalizer, config.seed), history


def generate(model, count, seed, normalized=False):
    """Draw ``count`` sequences, denormalised to original units unless ``normalized``."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if model.normalizer is None and not normalized:
        raise DataError("model has no normalizer; cannot map back to velocity units")
    rng = np.random.default_rng(seed)
    values = sample_generator(model.generator, count, rng)
    return values if normalized else model.normalizer.denormalize(values)


# architecture sweep ----------------------------------------------------------------

def trapezoid_integral(epochs, values, start, end=None):
    """Trapezoid rule over the records with ``start <= epoch <= end``."""
    epochs = np.asarray(epochs, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    end = epochs.max() if end is None else end
    keep = (epochs >= start) & (epochs <= end)
    e, v = epochs[keep], values[keep]
    if len(e) < 2:
        return 0.0
    return float(np.sum((e[1:] - e[:-1]) * (v[1:] + v[:-1]) * 0.5))


@dataclass
class SweepEntry:
    pairing: str
    integral_spectral: float
    integral_djs: float
    mean_seconds: float
    window: tuple
    history: TrainingHistory = field(repr=False)

    def summary(self):
        return {
            "pairing": self.pairing,
            "integral_l_spectral": self.integral_spectral,
            "integral_d_js": self.integral_djs,
            "mean_seconds_per_epoch": self.mean_seconds,
            "window": list(self.window),
        }


@dataclass
class SweepReport:
    entries: dict
    winner: str | None
    ranking: str
    scores: dict
    failures: dict = field(default_factory=dict)

    @property
    def partial(self):
        return bool(self.failures)

    def to_dict(self):
        return {
            "entries": [e.summary() for e in self.entries.values()],
            "winner": self.winner,
            "ranking": self.ranking,
            "scores": self.scores,
            "failures": self.failures,
            "partial": self.partial,
        }


RANKINGS = ("product", "l_spectral", "d_js", "time")


def rank_entries(entries, ranking="product"):
    """Score each entry (lower is better); ``product`` multiplies max-normalised metrics."""
    if ranking not in RANKINGS:
        raise ConfigError(f"ranking must be one of {RANKINGS}")
    names = list(entries)
    metrics = np.array([[entries[n].integral_spectral, entries[n].integral_djs, entries[n].mean_seconds] for n in names])
    if ranking == "product":
        scale = metrics.max(axis=0)
        scale[scale == 0] = 1.0
        scores = np.prod(metrics / scale, axis=1)
    else:
        scores = metrics[:, RANKINGS.index(ranking) - 1]
    return {n: float(s) for n, s in zip(names, scores)}


def architecture_sweep(dataset, base_config, pairings=ALL_PAIRINGS, ranking="product",
                       continue_on_error=False, normalizer=None):
    """Train every pairing on the same data and integrate L_spectral and D_JS over the window."""
    if not base_config.window_start < base_config.epochs:
        raise ConfigError("window start must be before the final epoch")
    entries, failures = {}, {}
    for i, (g_kind, d_kind) in enumerate(pairings):
        seed = int(np.random.SeedSequence([base_config.seed, i]).generate_state(1)[0])
        config = replace(base_config, generator=g_kind, discriminator=d_kind, seed=seed)
        name = config.pairing
        try:
            _, history = train(dataset, config, normalizer)
        except Exception as exc:
            if not continue_on_error:
                raise TrainingError(f"{name}: {exc}") from exc
            failures[name] = f"{type(exc).__name__}: {exc}"
            continue
        ep = history.column("epoch")
        entries[name] = SweepEntry(
            pairing=name,
            integral_spectral=trapezoid_integral(ep, history.column("l_spectral"), base_config.window_start),
            integral_djs=trapezoid_integral(ep, history.column("d_js"), base_config.window_start),
            mean_seconds=float(history.column("seconds").mean()),
            window=(base_config.window_start, base_config.epochs),
            history=history,
        )
    scores = rank_entries(entries, ranking) if entries else {}
    winner = min(scores, key=scores.get) if scores else None
    return SweepReport(entries, winner, ranking, scores, failures)
