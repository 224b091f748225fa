"""Encoder / latent-ODE / decoder forecasting model.

A per-node GRU (weights shared across stations) reads the normalized history
into a hidden state; an affine head with a tanh bottleneck emits the latent
mean and log-std; the latent state is integrated through the physics-gated
differential equation and an affine readout maps each latent step back to one
normalized PM2.5 value, de-normalized for reporting. Minibatches stack
samples along the node axis so every shared map stays a single matmul.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, no_grad
from .data import NormStats, WindowSample
from .errors import (ConfigurationError, ContractError, DimensionError,
                     FormatError)
from .graph import ScaledLaplacian, SensorGraph, scaled_laplacian
from .odeint import SolverConfig, TimeGrid, ode_solve
from .physics import (ChebBranchParams, DEFunction, FlowNetParams, FusionParams,
                      GATE_MODES, uniform_param)


@dataclass(frozen=True)
class ModelConfig:
    history_steps: int = 24
    horizon_steps: int = 24
    latent_dim: int = 16
    gru_hidden: int = 64
    head_hidden: int = 50
    cheb_order: int = 3
    cheb_layers: int = 2
    flownet_hidden: int = 16
    gate_mode: str = "learned"
    diffusion_coeff_init: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("history_steps", "horizon_steps", "latent_dim", "gru_hidden",
                     "head_hidden", "cheb_order", "cheb_layers", "flownet_hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if self.gate_mode not in GATE_MODES:
            raise ConfigurationError(f"gate_mode must be one of {GATE_MODES}")
        if self.diffusion_coeff_init <= 0:
            raise ConfigurationError("diffusion_coeff_init must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GRUParams:
    """Update/reset/candidate gates of a shared per-node GRU (input size 1)."""

    w_z: Parameter
    u_z: Parameter
    b_z: Parameter
    w_r: Parameter
    u_r: Parameter
    b_r: Parameter
    w_n: Parameter
    u_n: Parameter
    b_n: Parameter

    @classmethod
    def create(cls, rng, hidden: int, prefix: str = "gru") -> "GRUParams":
        def w(name):
            return uniform_param(rng, (1, hidden), 1, f"{prefix}.{name}")

        def u(name):
            return uniform_param(rng, (hidden, hidden), hidden, f"{prefix}.{name}")

        def b(name):
            return uniform_param(rng, (1, hidden), hidden, f"{prefix}.{name}")

        return cls(w_z=w("w_z"), u_z=u("u_z"), b_z=b("b_z"),
                   w_r=w("w_r"), u_r=u("u_r"), b_r=b("b_r"),
                   w_n=w("w_n"), u_n=u("u_n"), b_n=b("b_n"))

    @property
    def hidden(self) -> int:
        return self.u_z.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r,
                self.w_n, self.u_n, self.b_n]


def gru_step(x: Tensor, h: Tensor, params: GRUParams) -> Tensor:
    """One GRU update: h' = (1 - z)*h + z*n with reset-gated candidate n."""
    if x.data.ndim != 2 or x.shape[1] != 1:
        raise DimensionError(f"gru input must be (rows, 1), got {x.shape}")
    if h.shape != (x.shape[0], params.hidden):
        raise DimensionError(
            f"hidden state {h.shape} does not match input rows {x.shape[0]} "
            f"and width {params.hidden}")
    z = ad.sigmoid(ad.matmul(x, params.w_z) + ad.matmul(h, params.u_z) + params.b_z)
    r = ad.sigmoid(ad.matmul(x, params.w_r) + ad.matmul(h, params.u_r) + params.b_r)
    n = ad.tanh(ad.matmul(x, params.w_n)
                + ad.matmul(ad.mul(r, h), params.u_n) + params.b_n)
    return ad.mul(ad.sub(1.0, z), h) + ad.mul(z, n)


@dataclass
class LatentHeadParams:
    """hidden -> head (tanh) -> 2 * latent affine emitting (mu, log sigma)."""

    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    latent_dim: int

    @classmethod
    def create(cls, rng, hidden: int, head_hidden: int, latent_dim: int,
               prefix: str = "head") -> "LatentHeadParams":
        return cls(
            w1=uniform_param(rng, (hidden, head_hidden), hidden, f"{prefix}.w1"),
            b1=uniform_param(rng, (1, head_hidden), hidden, f"{prefix}.b1"),
            w2=uniform_param(rng, (head_hidden, 2 * latent_dim), head_hidden,
                             f"{prefix}.w2"),
            b2=uniform_param(rng, (1, 2 * latent_dim), head_hidden,
                             f"{prefix}.b2"),
            latent_dim=latent_dim,
        )

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


def latent_head(h: Tensor, params: LatentHeadParams) -> tuple[Tensor, Tensor]:
    """(mu, sigma) with sigma = exp(log sigma); the two halves of the output."""
    out = ad.matmul(ad.tanh(ad.matmul(h, params.w1) + params.b1), params.w2) \
        + params.b2
    d = params.latent_dim
    mu = ad.slice_cols(out, 0, d)
    sigma = ad.exp(ad.slice_cols(out, d, 2 * d))
    return mu, sigma


def encode_history(x_hist: np.ndarray, gru: GRUParams,
                   head: LatentHeadParams) -> tuple[Tensor, Tensor]:
    """Run the shared GRU over (steps, rows, 1) history and apply the head."""
    x_hist = np.asarray(x_hist, dtype=np.float64)
    if x_hist.ndim != 3 or x_hist.shape[2] != 1:
        raise DimensionError(f"history must be (steps, rows, 1), got {x_hist.shape}")
    rows = x_hist.shape[1]
    h = Tensor(np.zeros((rows, gru.hidden)))
    for t in range(x_hist.shape[0]):
        h = gru_step(Tensor(x_hist[t]), h, gru)
    return latent_head(h, head)


def reparameterize(mu: Tensor, sigma: Tensor, eps: np.ndarray | None) -> Tensor:
    """mu + sigma*eps for training draws; mu when eps is None (inference)."""
    if eps is None:
        return mu
    if mu.shape != sigma.shape:
        raise DimensionError(f"mu {mu.shape} and sigma {sigma.shape} differ")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape:
        raise DimensionError(f"eps {eps.shape} does not match latent {mu.shape}")
    return mu + ad.mul(sigma, Tensor(eps))


@dataclass
class DecoderParams:
    """Shared affine readout latent -> 1 per node per step."""

    w: Parameter
    b: Parameter

    @classmethod
    def create(cls, rng, latent_dim: int, prefix: str = "decoder") -> "DecoderParams":
        return cls(w=uniform_param(rng, (latent_dim, 1), latent_dim, f"{prefix}.w"),
                   b=uniform_param(rng, (1, 1), latent_dim, f"{prefix}.b"))

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def decode_trajectory(traj: Tensor, params: DecoderParams) -> Tensor:
    """(steps, rows, latent) -> (steps, rows, 1) through the shared affine map."""
    steps, rows, latent = traj.shape
    flat = ad.reshape(traj, (steps * rows, latent))
    out = ad.matmul(flat, params.w) + params.b
    return ad.reshape(out, (steps, rows, 1))


class Model:
    """Full forecasting model bound to one sensor graph."""

    def __init__(self, graph: SensorGraph, config: ModelConfig,
                 stats: NormStats | None = None,
                 solver: SolverConfig | None = None):
        self.graph = graph
        self.config = config
        self.stats = stats
        self.solver = solver or SolverConfig()
        self.dist_lap: ScaledLaplacian = scaled_laplacian(graph.weights, "distance")
        rng = np.random.default_rng(config.seed)
        self.gru = GRUParams.create(rng, config.gru_hidden)
        self.head = LatentHeadParams.create(rng, config.gru_hidden,
                                            config.head_hidden, config.latent_dim)
        self.decoder = DecoderParams.create(rng, config.latent_dim)
        self.de = DEFunction(
            dist_lap=self.dist_lap,
            flow=FlowNetParams.create(rng, config.flownet_hidden),
            diff_branch=ChebBranchParams.create(
                rng, config.latent_dim, config.cheb_order, config.cheb_layers,
                prefix="diff"),
            adv_branch=ChebBranchParams.create(
                rng, config.latent_dim, config.cheb_order, config.cheb_layers,
                prefix="adv"),
            fusion=FusionParams.create(rng, config.latent_dim),
            diffusion_coeff_raw=Parameter(
                DEFunction.raw_coefficient(config.diffusion_coeff_init),
                "physics.diffusion_coeff_raw"),
            gate_mode=config.gate_mode,
        )
        self._mask_cache: dict[int, np.ndarray] = {}
        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ConfigurationError(f"duplicate parameter names: {dup}")

    @property
    def n_stations(self) -> int:
        return self.graph.n_stations

    def parameters(self) -> list[Parameter]:
        return (self.gru.parameters() + self.head.parameters()
                + self.decoder.parameters() + self.de.parameters())

    def parameter_groups(self) -> dict[str, list[Parameter]]:
        return {
            "gru": self.gru.parameters(),
            "head": self.head.parameters(),
            "decoder": self.decoder.parameters(),
            "flownet": self.de.flow.parameters(),
            "cheb_diff": self.de.diff_branch.parameters(),
            "cheb_adv": self.de.adv_branch.parameters(),
            "fusion": self.de.fusion.parameters(),
            "diffusion_coeff": [self.de.diffusion_coeff_raw],
        }

    def _block_mask(self, batch: int) -> np.ndarray:
        mask = self._mask_cache.get(batch)
        if mask is None:
            n = self.n_stations
            mask = np.kron(np.eye(batch), np.ones((n, n)) - np.eye(n))
            self._mask_cache[batch] = mask
        return mask

    def _stack_batch(self, samples: Sequence[WindowSample]
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cfg = self.config
        n = self.n_stations
        for s in samples:
            if s.x_hist.shape != (cfg.history_steps, n, 1):
                raise DimensionError(
                    f"history shape {s.x_hist.shape} does not match "
                    f"({cfg.history_steps}, {n}, 1)")
            if s.x_future.shape != (cfg.horizon_steps, n, 1):
                raise DimensionError(
                    f"future shape {s.x_future.shape} does not match "
                    f"({cfg.horizon_steps}, {n}, 1)")
            if s.p_hist.shape != (cfg.history_steps, n, 2):
                raise DimensionError(
                    f"wind shape {s.p_hist.shape} does not match "
                    f"({cfg.history_steps}, {n}, 2)")
        # (steps, batch*n, c): samples stacked along the node axis
        x = np.concatenate([s.x_hist for s in samples], axis=1)
        wind_last = np.concatenate([s.p_hist[-1] for s in samples], axis=0)
        future = np.concatenate([s.x_future for s in samples], axis=1)
        return x, wind_last, future

    def forward_batch(self, samples: Sequence[WindowSample], mode: str,
                      eps_rng: np.random.Generator | None = None) -> Tensor:
        """Normalized predictions (horizon, batch*n, 1) for stacked samples."""
        if not samples:
            raise ContractError("empty batch")
        if mode not in ("train", "infer"):
            raise ContractError(f"mode must be 'train' or 'infer', got {mode!r}")
        x, wind_last, _ = self._stack_batch(samples)
        mu, sigma = encode_history(x, self.gru, self.head)
        if mode == "train":
            if eps_rng is None:
                raise ContractError("training forward needs an eps generator")
            eps = eps_rng.standard_normal(mu.shape)
        else:
            eps = None
        z0 = reparameterize(mu, sigma, eps)
        self.de.set_flow_from_wind(Tensor(wind_last),
                                   self._block_mask(len(samples)))
        grid = TimeGrid.unit(self.config.horizon_steps)
        traj = ode_solve(self.de, z0, grid, self.solver, mode)
        return decode_trajectory(traj, self.decoder)

    def forward_sample(self, sample: WindowSample, mode: str = "infer",
                       eps_rng: np.random.Generator | None = None) -> np.ndarray:
        """De-normalized forecast (horizon, n, 1) in ug/m3 for one sample."""
        if self.stats is None:
            raise ConfigurationError(
                "model has no normalization statistics; attach stats or load "
                "a checkpoint")
        if mode == "infer":
            with no_grad():
                pred = self.forward_batch([sample], mode)
        else:
            pred = self.forward_batch([sample], mode, eps_rng)
        return self.stats.denormalize(pred.data)

    predict = forward_sample


CHECKPOINT_FORMAT = "aircast-checkpoint-v1"
_LAPLACIAN_KEY = "graph.dist_laplacian"


@dataclass
class ModelCheckpoint:
    """Self-describing snapshot: config, named arrays, normalization stats."""

    config: ModelConfig
    arrays: dict
    norm_mean: float
    norm_std: float
    n_stations: int
    split_ratio: tuple | None = None

    def __post_init__(self):
        if self.norm_std <= 0:
            raise ConfigurationError("checkpoint std must be positive")


def make_checkpoint(model: Model, split_ratio: tuple | None = None
                    ) -> ModelCheckpoint:
    if model.stats is None:
        raise ConfigurationError("cannot checkpoint a model without stats")
    arrays = {p.name: p.data.copy() for p in model.parameters()}
    arrays[_LAPLACIAN_KEY] = model.dist_lap.matrix.copy()
    return ModelCheckpoint(config=model.config, arrays=arrays,
                           norm_mean=model.stats.mean, norm_std=model.stats.std,
                           n_stations=model.n_stations,
                           split_ratio=split_ratio)


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(ckpt.config),
        "norm_mean": ckpt.norm_mean,
        "norm_std": ckpt.norm_std,
        "n_stations": ckpt.n_stations,
        "split_ratio": list(ckpt.split_ratio) if ckpt.split_ratio else None,
    }
    with open(path, "wb") as fh:
        np.savez(fh, _meta=np.array(json.dumps(meta)), **ckpt.arrays)


def load_checkpoint(path) -> ModelCheckpoint:
    try:
        archive = np.load(path, allow_pickle=False)
    except (zipfile.BadZipFile, OSError, ValueError) as e:
        raise FormatError(f"{path}: not a readable checkpoint ({e})") from None
    with archive:
        if "_meta" not in archive:
            raise FormatError(f"{path}: missing metadata entry")
        try:
            meta = json.loads(str(archive["_meta"]))
        except json.JSONDecodeError:
            raise FormatError(f"{path}: corrupt metadata") from None
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"{path}: unsupported format {meta.get('format')!r}")
        arrays = {key: archive[key] for key in archive.files if key != "_meta"}
    return ModelCheckpoint(
        config=ModelConfig.from_dict(meta["config"]),
        arrays=arrays,
        norm_mean=meta["norm_mean"],
        norm_std=meta["norm_std"],
        n_stations=meta["n_stations"],
        split_ratio=tuple(meta["split_ratio"]) if meta.get("split_ratio") else None,
    )


def model_from_checkpoint(ckpt: ModelCheckpoint, graph: SensorGraph,
                          solver: SolverConfig | None = None) -> Model:
    """Rebuild a model and load parameters, verifying every array shape."""
    saved_lap = ckpt.arrays.get(_LAPLACIAN_KEY)
    if saved_lap is None:
        raise FormatError(f"checkpoint missing array {_LAPLACIAN_KEY!r}")
    if graph.n_stations != ckpt.n_stations:
        raise DimensionError(
            f"checkpoint was trained on {ckpt.n_stations} stations but the "
            f"graph has {graph.n_stations} (array {_LAPLACIAN_KEY!r} is "
            f"{saved_lap.shape})")
    model = Model(graph, ckpt.config,
                  stats=NormStats(ckpt.norm_mean, ckpt.norm_std), solver=solver)
    if saved_lap.shape != model.dist_lap.matrix.shape:
        raise DimensionError(
            f"array {_LAPLACIAN_KEY!r} has shape {saved_lap.shape}, graph "
            f"needs {model.dist_lap.matrix.shape}")
    for p in model.parameters():
        saved = ckpt.arrays.get(p.name)
        if saved is None:
            raise FormatError(f"checkpoint missing array {p.name!r}")
        if saved.shape != p.data.shape:
            raise DimensionError(
                f"array {p.name!r} has shape {saved.shape}, model needs "
                f"{p.data.shape}")
        p.data[...] = saved
    return model


def checkpoint_roundtrip(model: Model, path) -> Model:
    """Save and reload; parameters of the result are bitwise equal."""
    save_checkpoint(make_checkpoint(model), path)
    return model_from_checkpoint(load_checkpoint(path), model.graph,
                                 solver=model.solver)
