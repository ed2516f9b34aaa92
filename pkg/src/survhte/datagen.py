"""Synthetic survival datasets with known potential outcomes.

Five survival scenarios (``A``-``E``) are crossed with eight causal
configurations.  Every unit carries both potential event times and the
ground-truth conditional effect on the chosen estimand, so estimators can
be scored exactly.

All randomness flows through :class:`survhte.rng.Stream`, keyed by
``(seed, purpose, unit index)``: generating a dataset twice, or in chunks,
gives bit-identical arrays.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .rng import Stream

__all__ = [
    "Scenario",
    "CausalKind",
    "CausalConfig",
    "Estimand",
    "Latents",
    "DatasetSpec",
    "SyntheticDataset",
    "ALL_CONFIGS",
    "sample_covariates",
    "propensity_score",
    "assign_treatment",
    "generate_potential_outcomes",
    "generate_censoring",
    "arm_mean",
    "true_cate",
    "build_dataset",
    "population_ate",
]

# Exponential informative-censoring rate: base + slope * T(W).  These values
# reproduce the published censoring rates of all -InfC cells; the textbook
# pair (1.0, 0.1) can be passed explicitly.
INFORMATIVE_BASE_RATE = 0.1
INFORMATIVE_SLOPE = 0.05

POISSON_RATE_FLOOR = 1e-6
LATENT_NOISE_SD = math.sqrt(0.1)


class Scenario(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"


class CausalKind(str, enum.Enum):
    RCT50 = "RCT-50"
    RCT5 = "RCT-5"
    OBS_CPS = "OBS-CPS"
    OBS_UCONF = "OBS-UConf"
    OBS_NOPOS = "OBS-NoPos"

    @property
    def is_rct(self):
        return self in (CausalKind.RCT50, CausalKind.RCT5)


class Estimand(str, enum.Enum):
    RMST = "RMST"
    SURV_PROB = "SURV_PROB"


@dataclass(frozen=True)
class CausalConfig:
    """Treatment mechanism plus censoring mechanism.

    ``latent_censoring`` selects the variant where censoring is driven by
    the unobserved confounder (only meaningful together with
    ``OBS-UConf``).
    """

    kind: CausalKind
    informative_censoring: bool = False
    latent_censoring: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", CausalKind(self.kind))
        if self.latent_censoring and (
            self.kind is not CausalKind.OBS_UCONF or self.informative_censoring
        ):
            raise ValueError(
                "latent censoring requires OBS-UConf without informative censoring"
            )
        if self.informative_censoring and self.kind.is_rct:
            raise ValueError("informative censoring is only defined for OBS configs")

    @property
    def name(self):
        if self.latent_censoring:
            return self.kind.value + "-LatC"
        return self.kind.value + ("-InfC" if self.informative_censoring else "")

    @classmethod
    def from_name(cls, name):
        name = name.strip()
        if name.endswith("-InfC"):
            return cls(CausalKind(name[:-5]), informative_censoring=True)
        if name.endswith("-LatC"):
            return cls(CausalKind(name[:-5]), latent_censoring=True)
        return cls(CausalKind(name))

    def __str__(self):
        return self.name


ALL_CONFIGS = (
    CausalConfig(CausalKind.RCT50),
    CausalConfig(CausalKind.RCT5),
    CausalConfig(CausalKind.OBS_CPS),
    CausalConfig(CausalKind.OBS_UCONF),
    CausalConfig(CausalKind.OBS_NOPOS),
    CausalConfig(CausalKind.OBS_CPS, informative_censoring=True),
    CausalConfig(CausalKind.OBS_UCONF, informative_censoring=True),
    CausalConfig(CausalKind.OBS_NOPOS, informative_censoring=True),
)


@dataclass(frozen=True)
class Latents:
    """Observed covariates ``x`` (n, 5), latent confounders ``u`` (n, 2),
    and a standard-normal per-unit noise ``z`` used only by the
    latent-censoring variant."""

    x: np.ndarray
    u: np.ndarray
    z: np.ndarray
    index: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, item):
        return Latents(self.x[item], self.u[item], self.z[item], self.index[item])


def sample_covariates(n, seed, index=None):
    """Draw ``n`` units of X ~ U(0,1)^5 and U ~ U(0,1)^2.

    ``index`` gives the unit ids used as stream counters (default
    ``0..n-1``); unit ``i`` always receives the same values for a given seed.
    """
    if n < 1:
        raise ValueError("cannot sample an empty set of units (n must be >= 1)")
    if index is None:
        index = np.arange(n, dtype=np.uint64)
    index = np.asarray(index, dtype=np.uint64)
    s = Stream(seed, "covariates")
    x = np.column_stack([s.uniform(index, k) for k in range(5)])
    u = np.column_stack([s.uniform(index, 5 + k) for k in range(2)])
    z = Stream(seed, "latent-noise").normal(index)
    return Latents(x, u, z, index)


def _beta24(v):
    return 20.0 * v * (1.0 - v) ** 3


def propensity_score(config, latents):
    """True P(W=1 | X, U) for each unit."""
    kind = config.kind
    x1 = latents.x[:, 0]
    if kind is CausalKind.RCT50:
        return np.full(len(latents), 0.5)
    if kind is CausalKind.RCT5:
        return np.full(len(latents), 0.05)
    if kind is CausalKind.OBS_CPS:
        return (1.0 + _beta24(x1)) / 4.0
    if kind is CausalKind.OBS_UCONF:
        return (1.0 + _beta24(0.3 * x1 + 0.7 * latents.u[:, 0])) / 4.0
    return np.where(x1 > 0.8, 1.0, np.where(x1 < 0.2, 0.0, 0.5))


def assign_treatment(config, latents, seed):
    e = propensity_score(config, latents)
    return Stream(seed, "treatment").bernoulli(latents.index, e)


def _confounding(config, latents):
    if config.kind is CausalKind.OBS_UCONF:
        return 0.5 * (latents.u[:, 0] - latents.x[:, 1])
    return np.zeros(len(latents))


def _event_law(scenario, config, latents, w, u1=None):
    """Parameters of the arm-``w`` event-time law.

    Returns ``(family, param)`` where family is ``"cox"`` (param = linear
    predictor), ``"lognormal"`` (param = log-time mean) or ``"poisson"``
    (param = rate).  ``u1`` overrides the latent confounder (used when
    marginalising over it).
    """
    scenario = Scenario(scenario)
    x1, x2, x3 = latents.x[:, 0], latents.x[:, 1], latents.x[:, 2]
    if u1 is None:
        u1 = latents.u[:, 0]
    if config.kind is CausalKind.OBS_UCONF:
        eps = 0.5 * (u1 - x2)
    else:
        eps = 0.0
    low = (x1 < 0.5).astype(float)
    sq2 = np.sqrt(x2)
    if scenario is Scenario.A:
        return "cox", x1 + (-0.5 + x2) * w + eps
    if scenario is Scenario.B:
        mu = -1.85 - 0.8 * low + 0.7 * sq2 + 0.2 * x3 + (0.7 - 0.4 * low - 0.4 * sq2) * w
        return "lognormal", mu + eps
    if scenario is Scenario.D:
        mu = 0.3 - 0.5 * low + 0.5 * sq2 + 0.2 * x3 + (1.0 - 0.8 * low - 0.8 * sq2) * w
        return "lognormal", mu + eps
    base = 6.0 if scenario is Scenario.C else 7.0
    if config.latent_censoring and scenario is Scenario.C:
        lam = (x2 ** 2 + x3 + base
               + 2.0 * (np.sqrt(0.3 * x1 + 0.7 * u1) - 0.3) * w
               + LATENT_NOISE_SD * latents.z)
    else:
        lam = x2 ** 2 + x3 + base + 2.0 * (np.sqrt(x1) - 0.3) * w + eps
    return "poisson", np.maximum(lam, POISSON_RATE_FLOOR)


def generate_potential_outcomes(scenario, config, latents, seed):
    """Draw (T(0), T(1)) for every unit; arms use independent noise."""
    out = []
    for w in (0, 1):
        s = Stream(seed, f"event{w}")
        family, p = _event_law(scenario, config, latents, w)
        if family == "cox":
            # S(t) = exp(-sqrt(t) e^p)  =>  t = (-log V / e^p)^2
            t = (-np.log(s.uniform(latents.index)) / np.exp(p)) ** 2
        elif family == "lognormal":
            t = np.exp(p + s.normal(latents.index))
        else:
            t = s.poisson(latents.index, p)
        out.append(np.asarray(t, dtype=float))
    return out[0], out[1]


def generate_censoring(scenario, config, latents, w, t_event, seed,
                       informative_rate=(INFORMATIVE_BASE_RATE, INFORMATIVE_SLOPE)):
    """Censoring times; ``np.inf`` marks a unit that is never censored.

    ``t_event`` is the factual event time T(W), needed only under
    informative censoring.
    """
    t_event = np.asarray(t_event, dtype=float)
    if np.any(t_event < 0) or np.any(np.isnan(t_event)):
        raise ValueError("event times must be non-negative")
    scenario = Scenario(scenario)
    s = Stream(seed, "censoring")
    idx = latents.index
    x1, x2, x3, x4 = (latents.x[:, k] for k in range(4))
    w = np.asarray(w, dtype=float)
    if config.latent_censoring:
        return np.where(latents.u[:, 0] <= 0.6, np.inf, 1.0 + (x4 < 0.5))
    if config.informative_censoring:
        base, slope = informative_rate
        return s.exponential(idx, rate=base + slope * t_event)
    if scenario is Scenario.A:
        return 3.0 * s.uniform(idx)
    if scenario in (Scenario.B, Scenario.D):
        sq2 = np.sqrt(x2)
        arm = (1.15 + 0.5 * (x1 < 0.5) - 0.3 * sq2) * w
        if scenario is Scenario.B:
            lp = -1.75 - 0.5 * sq2 + 0.2 * x3 + arm
        else:
            lp = -0.9 + 2.0 * sq2 + 2.0 * x3 + arm
        # cumulative hazard t^2 e^lp
        return np.sqrt(-np.log(s.uniform(idx)) / np.exp(lp))
    if scenario is Scenario.C:
        return np.where(s.uniform(idx) < 0.6, np.inf, 1.0 + (x4 < 0.5))
    rate = 3.0 + np.log1p(np.exp(2.0 * x2 + x3))
    return s.poisson(idx, rate).astype(float)


def _poisson_rmst(lam, h):
    if np.isinf(h):
        return lam.copy()
    kmax = int(math.floor(h))
    # beyond this point every survival term is below double precision
    cut = int(math.ceil(lam.max() + 40.0 * math.sqrt(lam.max()) + 50.0))
    total = np.zeros_like(lam)
    for k in range(min(kmax, cut)):
        total += stats.poisson.sf(k, lam)
    if kmax < cut:
        total += (h - kmax) * stats.poisson.sf(kmax, lam)
    return total


def arm_mean(scenario, config, latents, w, estimand, horizon, u1=None):
    """E[y(T(w)) | X, U] for each unit, in closed form.

    ``y(t) = min(t, h)`` for RMST and ``1(t > h)`` for SURV_PROB; ``h`` may be
    ``inf`` for the unrestricted mean.
    """
    h = float(horizon)
    if not h > 0:
        raise ValueError("horizon must be positive")
    estimand = Estimand(estimand)
    family, p = _event_law(scenario, config, latents, w, u1=u1)
    if family == "cox":
        a = np.exp(p)
        if estimand is Estimand.SURV_PROB:
            return np.exp(-a * math.sqrt(h)) if np.isfinite(h) else np.zeros_like(a)
        if np.isinf(h):
            return 2.0 / a ** 2
        r = a * math.sqrt(h)
        # integral of exp(-a sqrt(t)) on [0, h]; -expm1 keeps small r accurate
        return (2.0 / a ** 2) * (-np.expm1(-r) - r * np.exp(-r))
    if family == "lognormal":
        if estimand is Estimand.SURV_PROB:
            return special.ndtr(p - math.log(h)) if np.isfinite(h) else np.zeros_like(p)
        if np.isinf(h):
            return np.exp(p + 0.5)
        lh = math.log(h)
        return np.exp(p + 0.5) * special.ndtr(lh - p - 1.0) + h * special.ndtr(p - lh)
    if estimand is Estimand.SURV_PROB:
        return stats.poisson.sf(math.floor(h), p) if np.isfinite(h) else np.zeros_like(p)
    return _poisson_rmst(p, h)


def true_cate(scenario, config, latents, estimand, horizon, marginalize_u=False,
              n_nodes=48):
    """Ground-truth per-unit effect E[y(T(1)) - y(T(0)) | X, U].

    With ``marginalize_u`` the latent confounder U1 is integrated out by
    Gauss-Legendre quadrature, giving E[. | X] instead.
    """
    if not marginalize_u:
        return (arm_mean(scenario, config, latents, 1, estimand, horizon)
                - arm_mean(scenario, config, latents, 0, estimand, horizon))
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    nodes, weights = 0.5 * (nodes + 1.0), 0.5 * weights
    total = np.zeros(len(latents))
    for v, wt in zip(nodes, weights):
        u1 = np.full(len(latents), v)
        total += wt * (arm_mean(scenario, config, latents, 1, estimand, horizon, u1=u1)
                       - arm_mean(scenario, config, latents, 0, estimand, horizon, u1=u1))
    return total


@dataclass(frozen=True)
class DatasetSpec:
    """Everything needed to regenerate a dataset.

    ``horizon=None`` resolves to the maximum observed time of the generated
    data; a positive number (possibly ``inf``) fixes it.
    """

    scenario: Scenario
    config: CausalConfig
    n: int
    seed: int
    estimand: Estimand = Estimand.RMST
    horizon: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "estimand", Estimand(self.estimand))
        if isinstance(self.config, str):
            object.__setattr__(self, "config", CausalConfig.from_name(self.config))
        if self.n < 1:
            raise ValueError("dataset size must be >= 1")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("fixed horizon must be positive")


@dataclass
class SyntheticDataset:
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    obs_time: np.ndarray
    event: np.ndarray
    t0: np.ndarray
    t1: np.ndarray
    cate_true: np.ndarray
    scenario: Scenario
    config: CausalConfig
    seed: int
    horizon: float
    estimand: Estimand = Estimand.RMST
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.w))

    def __len__(self):
        return len(self.w)

    @property
    def t_factual(self):
        return np.where(self.w == 1, self.t1, self.t0)

    def subset(self, idx):
        idx = np.asarray(idx)
        return SyntheticDataset(
            self.x[idx], self.u[idx], self.w[idx], self.obs_time[idx],
            self.event[idx], self.t0[idx], self.t1[idx], self.cate_true[idx],
            self.scenario, self.config, self.seed, self.horizon, self.estimand,
            self.ids[idx],
        )

    def equals(self, other):
        arrays = ("x", "u", "w", "obs_time", "event", "t0", "t1", "cate_true", "ids")
        return (
            all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and self.scenario == other.scenario
            and self.config == other.config
            and self.seed == other.seed
            and self.horizon == other.horizon
            and self.estimand == other.estimand
        )


def build_dataset(spec, index=None):
    """Generate the dataset described by ``spec``."""
    lat = sample_covariates(spec.n, spec.seed, index=index)
    w = assign_treatment(spec.config, lat, spec.seed)
    t0, t1 = generate_potential_outcomes(spec.scenario, spec.config, lat, spec.seed)
    t_fact = np.where(w == 1, t1, t0)
    c = generate_censoring(spec.scenario, spec.config, lat, w, t_fact, spec.seed)
    obs = np.minimum(t_fact, c)
    event = (t_fact <= c).astype(np.int8)
    h = float(obs.max()) if spec.horizon is None else float(spec.horizon)
    tau = true_cate(spec.scenario, spec.config, lat, spec.estimand, h)
    return SyntheticDataset(
        x=lat.x, u=lat.u, w=w.astype(np.int8), obs_time=obs, event=event,
        t0=t0, t1=t1, cate_true=tau, scenario=spec.scenario, config=spec.config,
        seed=spec.seed, horizon=h, estimand=spec.estimand,
        ids=lat.index.astype(np.int64),
    )


def population_ate(scenario, config, estimand, horizon, n=50_000, seed=0x5EED):
    """Average true CATE over a large reference sample."""
    if isinstance(config, str):
        config = CausalConfig.from_name(config)
    scenario, estimand = Scenario(scenario), Estimand(estimand)
    lat = sample_covariates(n, seed)
    return float(np.mean(true_cate(scenario, config, lat, estimand, horizon)))
