import math
from enum import Enum
from typing import Annotated, List, Literal, Optional

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator

# Transmit power levels (dBm)
DEFAULT_POWER_LEVELS = [-8.4, -2.3, 0.0, 4.0, 7.0, 9.0]
SPEED_OF_LIGHT = 299_792_458.0


def _split_list(value):
    """Accept comma separated text for list fields (INI values arrive as strings)."""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


FloatList = Annotated[List[float], BeforeValidator(_split_list)]
IntList = Annotated[List[int], BeforeValidator(_split_list)]


class RunMode(str, Enum):
    FEDDRL = "feddrl"
    IDRL = "idrl"
    RA = "ra"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# Network model
class TopologyConfig(_Section):
    num_edge_clouds: int = Field(default=1, ge=1)
    aps_per_ec: int = Field(default=4, ge=1)
    transmitters: int = Field(default=12, ge=1, description="Transmitters per edge cloud (N_e)")
    coverage_radius: float = Field(default=100.0, gt=0, description="AP coverage radius in meters")
    speed: float = Field(default=3.0 / 3.6, ge=0, description="Transmitter speed in m/s (3 km/h)")
    step_duration: float = Field(default=1e-3, gt=0, description="Time step tau in seconds")
    rng_seed: int = 0

    @property
    def total_aps(self) -> int:
        return self.num_edge_clouds * self.aps_per_ec

    @property
    def total_transmitters(self) -> int:
        return self.num_edge_clouds * self.transmitters


class ChannelConfig(_Section):
    pathloss_exponent: float = Field(default=3.0, gt=0)
    reference_distance: float = Field(default=1.0, gt=0, description="d0 in meters")
    pathloss_intercept: Optional[float] = Field(default=30.0, description="xi in dB; blank derives it from the carrier")
    shadowing_sigma: float = Field(default=8.0, ge=0, description="Log-normal shadowing std in dB")
    fading_model: Literal["rayleigh", "none"] = "rayleigh"
    noise_power: float = Field(default=-110.0, description="Noise power in dBm")
    interference_mode: Literal["overlap", "noise_limited"] = "overlap"
    carrier_frequency_ghz: float = Field(default=3.0, gt=0)

    @field_validator("pathloss_intercept", mode="before")
    @classmethod
    def blank_intercept_is_free_space(cls, v):
        return None if v == "" else v

    @property
    def intercept_db(self) -> float:
        """xi, or the free-space loss at d0 for the carrier frequency when xi is unset."""
        if self.pathloss_intercept is not None:
            return self.pathloss_intercept
        wavelength = SPEED_OF_LIGHT / (self.carrier_frequency_ghz * 1e9)
        return 20.0 * math.log10(4.0 * math.pi * self.reference_distance / wavelength)


class PhyConfig(_Section):
    power_levels: FloatList = Field(default_factory=lambda: list(DEFAULT_POWER_LEVELS))
    prbs_per_transmitter: int = Field(default=4, ge=1, description="zeta_n")
    prb_bandwidth: float = Field(default=180e3, gt=0, description="Hz")
    max_prbs: int = Field(default=8, ge=1, description="zeta_max")
    sinr_margin_low: float = -6.7
    sinr_margin_high: float = 11.7
    mcs_table_path: Optional[str] = None

    @field_validator("mcs_table_path", mode="before")
    @classmethod
    def blank_path_is_bundled(cls, v):
        return v or None

    @field_validator("power_levels")
    @classmethod
    def power_levels_increasing(cls, v):
        if not v:
            raise ValueError("power_levels must not be empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("power_levels must be strictly increasing")
        return v

    @model_validator(mode="after")
    def check_prbs(self):
        if self.prbs_per_transmitter > self.max_prbs:
            raise ValueError("prbs_per_transmitter must not exceed max_prbs")
        if self.sinr_margin_high <= self.sinr_margin_low:
            raise ValueError("sinr_margin_high must exceed sinr_margin_low")
        return self


class RewardWeights(_Section):
    alpha1: float = Field(default=0.5, ge=0, le=1)
    alpha2: float = Field(default=0.5, ge=0, le=1)
    tau1: float = Field(default=0.2, ge=0, le=1)
    tau2: float = Field(default=0.2, ge=0, le=1)
    tau3: float = Field(default=0.2, ge=0, le=1)
    penalty_constant: float = Field(default=1.0, gt=0, description="C")


class ConstraintThresholds(_Section):
    min_throughput: float = Field(default=1e5, ge=0, description="T_min in bits/s")
    max_power: float = Field(default=9.0, description="P_max in dBm")
    min_sinr: float = Field(default=-6.7, description="Psi_min in dB")
    max_prbs: int = Field(default=8, ge=1, description="zeta_max")


class DrlHyper(_Section):
    learning_rate: float = Field(default=0.001, gt=0)
    gamma: float = Field(default=0.995, gt=0, lt=1)
    momentum: float = Field(default=0.9, ge=0, lt=1, description="eta")
    epsilon_start: float = Field(default=1.0, gt=0, le=1)
    epsilon_decay: float = Field(default=0.9995, gt=0, le=1)
    epsilon_min: float = Field(default=0.1, gt=0, le=1)
    target_sync_period: int = Field(default=200, ge=1, description="Z, counted in gradient updates")
    batch_size: int = Field(default=32, ge=1, description="delta")
    update_period: int = Field(default=50, ge=1, description="varkappa, in time steps")
    hidden_layers: IntList = Field(default_factory=lambda: [32, 32])

    @field_validator("hidden_layers")
    @classmethod
    def hidden_positive(cls, v):
        if not v or any(width < 1 for width in v):
            raise ValueError("hidden_layers needs at least one positive width")
        return v

    @model_validator(mode="after")
    def check_epsilon(self):
        if self.epsilon_min > self.epsilon_start:
            raise ValueError("epsilon_min must not exceed epsilon_start")
        return self


class ReplayConfig(_Section):
    capacity: int = Field(default=4000, ge=1)
    alpha: float = Field(default=0.6, ge=0)
    beta_start: float = Field(default=0.4, ge=0, le=1)
    beta_end: float = Field(default=1.0, ge=0, le=1)
    priority_epsilon: float = Field(default=1e-3, gt=0)


class FederateConfig(_Section):
    rounds: int = Field(default=60, ge=1, description="R")
    steps_per_round: int = Field(default=500, ge=1, description="T")
    checkpoint_dir: Optional[str] = None
    weighted_aggregation: bool = False

    @field_validator("checkpoint_dir", mode="before")
    @classmethod
    def blank_dir_is_none(cls, v):
        return v or None


class ExperimentConfig(_Section):
    modes: Annotated[List[RunMode], BeforeValidator(_split_list)] = Field(
        default_factory=lambda: [RunMode.FEDDRL, RunMode.IDRL, RunMode.RA]
    )
    seeds: IntList = Field(default_factory=lambda: [1])
    transmitter_counts: IntList = Field(default_factory=list)
    output_dir: str = "results"
    final_k: int = Field(default=10, ge=1)
    trace: bool = False

    @field_validator("modes", "seeds")
    @classmethod
    def not_empty(cls, v):
        if not v:
            raise ValueError("at least one value is required")
        return v

    @field_validator("transmitter_counts")
    @classmethod
    def counts_positive(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("transmitter counts must be positive")
        return v


class RunConfig(_Section):
    topology: TopologyConfig = Field(default_factory=TopologyConfig)
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    phy: PhyConfig = Field(default_factory=PhyConfig)
    reward: RewardWeights = Field(default_factory=RewardWeights)
    constraints: ConstraintThresholds = Field(default_factory=ConstraintThresholds)
    drl: DrlHyper = Field(default_factory=DrlHyper)
    replay: ReplayConfig = Field(default_factory=ReplayConfig)
    federate: FederateConfig = Field(default_factory=FederateConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)

    @model_validator(mode="after")
    def check_constraints(self):
        if self.constraints.max_power != max(self.phy.power_levels):
            raise ValueError("constraints.max_power must equal the largest phy.power_levels entry")
        if self.constraints.max_prbs != self.phy.max_prbs:
            raise ValueError("constraints.max_prbs must equal phy.max_prbs")
        return self

    def with_transmitters(self, transmitters: int) -> "RunConfig":
        return self.model_copy(
            update={"topology": self.topology.model_copy(update={"transmitters": transmitters})}
        )

    def transmitter_grid(self) -> List[int]:
        return list(self.experiment.transmitter_counts) or [self.topology.transmitters]


# Reports
class RoundReport(BaseModel):
    round: int = Field(..., ge=1)
    step_span: str
    system_throughput_bps: float = Field(..., ge=0)
    cum_reward: float
    avg_energy_mj: float = Field(..., ge=0)
    avg_eff_bits_per_mj: float = Field(..., ge=0)
    c1: int = Field(default=0, ge=0)
    c2: int = Field(default=0, ge=0)
    c3: int = Field(default=0, ge=0)
    c4: int = Field(default=0, ge=0)
    gradient_updates: int = Field(default=0, ge=0)
    mean_epsilon: float = Field(default=0.0, ge=0, le=1)


CSV_COLUMNS = [
    "round",
    "step_span",
    "system_throughput_bps",
    "cum_reward",
    "avg_energy_mj",
    "avg_eff_bits_per_mj",
    "c1",
    "c3",
]

SUMMARY_METRICS = ["system_throughput_bps", "cum_reward", "avg_energy_mj", "avg_eff_bits_per_mj"]


class SummaryRow(BaseModel):
    mode: RunMode
    transmitters: int
    seeds: List[int]
    mean: dict[str, float]
    std: dict[str, float]
    normalized: dict[str, float]


class Summary(BaseModel):
    final_k: int
    rows: List[SummaryRow] = []

    def row(self, mode: RunMode, transmitters: int) -> Optional[SummaryRow]:
        for row in self.rows:
            if row.mode == mode and row.transmitters == transmitters:
                return row
        return None


class ComparisonRow(BaseModel):
    transmitters: int
    baseline: RunMode
    metric: str
    feddrl: float
    baseline_value: float
    delta_pct: Optional[float] = None


class ComparisonTable(BaseModel):
    rows: List[ComparisonRow] = []

    def delta(self, transmitters: int, baseline: RunMode, metric: str) -> Optional[float]:
        for row in self.rows:
            if row.transmitters == transmitters and row.baseline == baseline and row.metric == metric:
                return row.delta_pct
        raise KeyError((transmitters, baseline, metric))
