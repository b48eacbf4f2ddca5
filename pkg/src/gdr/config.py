"""Flat run configuration, presets, and the single-switch swaps used by ``sweep``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from .affinity import AffinityConfig
from .initialization import InitConfig
from .kernels import KernelParams, fit_ab
from .optimizer import RunConfig

PRESETS = ("tsne", "umap", "gdr")
KNN_MODES = ("auto", "exact", "nn_descent")
AUTO_EXACT_MAX_N = 20_000
RANDOM_SD_NORMALIZED = 1e-2
# standard deviation of uniform(-10, 10), the spectral box
RANDOM_SD_UNNORMALIZED = 10.0 / 3.0 ** 0.5


@dataclass
class PipelineConfig:
    """Every switch of one end-to-end run, one field per CLI flag."""

    preset: str = "gdr"
    normalized: bool = False
    init: str = "spectral"
    random_sd: float | None = None
    pseudo_distance: bool = True
    symmetrization: str = "probabilistic"
    sym_attraction: bool = False
    ab: str = "fixed"
    min_dist: float = 0.1
    spread: float = 1.0
    loss: str = "kl"
    sampling: str = "explicit"
    apply: str = "collected"
    amplification: bool | None = None
    epochs: int = 500
    lr: float | None = None
    neg_rate: int | None = None
    clip: float | None = None
    seed: int = 0
    workers: int = 1
    calibration: str = "umap"
    perplexity: float = 30.0
    k: int = 15
    knn: str = "auto"
    dim: int = 2
    theta: float = 0.5
    frob_form: str = "printed"
    exaggeration: float = 1.0
    override_coupling: bool = False
    loss_every: int = 10
    angle_every: int = 0

    def __post_init__(self):
        if self.ab not in ("fixed", "fit"):
            raise ValueError(f"unknown ab mode {self.ab!r} (fixed or fit)")
        if self.knn not in KNN_MODES:
            raise ValueError(f"unknown knn mode {self.knn!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.k < 2:
            raise ValueError("k must be >= 2")

    # -- resolution into component configs

    def kernel_params(self):
        if self.ab == "fit":
            a, b = fit_ab(self.min_dist, self.spread)
            return KernelParams(a, b)
        return KernelParams()

    def affinity_config(self):
        return AffinityConfig(self.calibration, self.perplexity, self.pseudo_distance,
                              symmetrization=self.symmetrization, normalize=self.normalized)

    def init_config(self):
        return InitConfig(self.init, self.seed, self.resolved_random_sd())

    def resolved_random_sd(self):
        # normalized (TSNE-like) runs start from a tight Gaussian; unnormalized
        # (UMAP-like) runs need a spread comparable to the spectral box, since
        # their unclipped repulsion diverges as points coincide
        if self.random_sd is not None:
            return self.random_sd
        return RANDOM_SD_NORMALIZED if self.normalized else RANDOM_SD_UNNORMALIZED

    def run_config(self):
        return RunConfig(
            normalized=self.normalized, loss=self.loss, sampling=self.sampling, apply=self.apply,
            amplification=self.amplification, sym_attraction=self.sym_attraction, lr=self.lr,
            epochs=self.epochs, neg_rate=self.neg_rate, clip=self.clip, seed=self.seed,
            kernel=self.kernel_params(), override_coupling=self.override_coupling, lr_k=self.k,
            theta=self.theta, frob_form=self.frob_form, exaggeration=self.exaggeration,
            workers=self.workers, loss_every=self.loss_every, angle_every=self.angle_every)

    def validate(self):
        """Build every component config so that conflicts surface before any computation."""
        self.affinity_config()
        self.init_config()
        self.run_config()
        return self

    def resolved(self):
        """Copy with ``None`` fields replaced by the values the optimizer will use."""
        rc = self.run_config()
        return replace(self, amplification=rc.amplification, lr=rc.lr, neg_rate=rc.neg_rate,
                       clip=rc.clip, random_sd=self.resolved_random_sd())

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        blob = json.dumps(self.resolved().to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


def preset(name, **overrides):
    """Configuration reproducing one row of the TSNE/UMAP differences table, or GDR's defaults."""
    if name == "tsne":
        base = PipelineConfig(
            preset="tsne", normalized=True, init="random", pseudo_distance=False,
            symmetrization="average", sym_attraction=False, ab="fixed", sampling="barnes_hut",
            apply="collected", calibration="perplexity", perplexity=30.0, k=90)
    elif name == "umap":
        base = PipelineConfig(
            preset="umap", normalized=False, init="spectral", pseudo_distance=True,
            symmetrization="probabilistic", sym_attraction=True, ab="fit",
            sampling="scalar_sampling", apply="in_loop", calibration="umap", k=15, clip=4.0)
    elif name == "gdr":
        # UMAP's distances, initialization, neighbors and symmetrization; TSNE's
        # asymmetric attraction and a = b = 1
        base = PipelineConfig(
            preset="gdr", normalized=False, init="spectral", pseudo_distance=True,
            symmetrization="probabilistic", sym_attraction=False, ab="fixed", sampling="explicit",
            apply="collected", calibration="umap", k=15, clip=4.0)
    else:
        raise ValueError(f"unknown preset {name!r} (choose from {', '.join(PRESETS)})")
    return replace(base, **overrides) if overrides else base


# single-switch swaps of the parameter-irrelevance study, in table column order
SWEEP_SWITCHES = ("frobenius", "init", "pseudo_distance", "symmetrization", "sym_attraction",
                  "scalars")


def swap(cfg, switch):
    """``cfg`` with one switch flipped to its opposite setting."""
    if switch == "frobenius":
        return replace(cfg, loss="frobenius" if cfg.loss == "kl" else "kl")
    if switch == "init":
        return replace(cfg, init="random" if cfg.init == "spectral" else "spectral")
    if switch == "pseudo_distance":
        return replace(cfg, pseudo_distance=not cfg.pseudo_distance)
    if switch == "symmetrization":
        other = "average" if cfg.symmetrization == "probabilistic" else "probabilistic"
        return replace(cfg, symmetrization=other)
    if switch == "sym_attraction":
        return replace(cfg, sym_attraction=not cfg.sym_attraction)
    if switch == "scalars":
        return replace(cfg, ab="fit" if cfg.ab == "fixed" else "fixed")
    raise ValueError(f"unknown switch {switch!r} (choose from {', '.join(SWEEP_SWITCHES)})")


def load_config_file(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a flat JSON object")
    return data
