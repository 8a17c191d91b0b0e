"""Deterministic battery home-energy environment.

One episode is a 24-hour day. Each step the controller picks a charge signal
in [-1, 1] (directly, or as an index into the discrete level set), the
battery integrates it with asymmetric efficiency, and the step cost is the
sum of an energy term (consumption priced at the hourly rate, injection
credited at a fraction of it) and a capacity term on the aggregate power.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

N_FEATURES = 5
FEATURE_NAMES = ("hour", "soc", "price", "demand", "pv")
ACTION_NAMES = ("discharge_full", "discharge_half", "idle", "charge_half", "charge_full")


@dataclass(frozen=True)
class BatteryParams:
    capacity_kwh: float = 10.0
    max_power_kw: float = 4.0
    efficiency: float = 0.9
    action_levels: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)

    def __post_init__(self):
        if self.capacity_kwh <= 0 or self.max_power_kw <= 0:
            raise ConfigError("battery capacity and max power must be positive")
        if not (0.0 < self.efficiency <= 1.0):
            raise ConfigError(f"efficiency must be in (0, 1], got {self.efficiency}")
        lv = self.action_levels
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ConfigError("action_levels must be strictly increasing")
        if 0.0 not in lv or any(-l not in lv for l in lv):
            raise ConfigError("action_levels must contain 0 and be symmetric around it")


@dataclass(frozen=True)
class TariffParams:
    injection_fraction: float = 0.25
    capacity_rate_eur_per_kw: float = 0.05
    contracted_min_kw: float = 4.0
    timestep_hours: float = 1.0
    horizon_steps: int = 24

    def __post_init__(self):
        if self.timestep_hours <= 0 or self.horizon_steps <= 0:
            raise ConfigError("timestep and horizon must be positive")
        if self.capacity_rate_eur_per_kw < 0:
            raise ConfigError("capacity rate cannot be negative")


@dataclass(frozen=True)
class EnvState:
    """Raw physical quantities at one hour plus their normalized 5-vector."""

    hour: int
    energy_kwh: float
    price_eur_per_kwh: float
    demand_kw: float
    pv_kw: float
    normalized: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    cost_eur: float
    energy_cost_eur: float
    capacity_cost_eur: float
    realized_power_kw: float
    battery_power_kw: float
    clipped: bool


def battery_update(
    energy_kwh: float, u_signal: float, params: BatteryParams, dt_hours: float
) -> tuple[float, float, bool]:
    """Integrate one battery step.

    Positive signals charge at ``u * max_power``; the stored energy gains the
    efficiency-scaled amount when charging and loses the inverse when
    discharging. If the raw update would leave [0, capacity] the energy is
    clipped and the realized grid-side power is recomputed from the actual
    energy change, so costs always reflect what physically happened.

    Returns (new_energy_kwh, realized_battery_power_kw, clipped).
    """
    power = u_signal * params.max_power_kw
    eta = params.efficiency
    if power >= 0:
        raw = energy_kwh + eta * power * dt_hours
    else:
        raw = energy_kwh + power * dt_hours / eta
    new_e = min(max(raw, 0.0), params.capacity_kwh)
    clipped = new_e != raw
    if clipped:
        delta = new_e - energy_kwh
        power = delta / (eta * dt_hours) if delta >= 0 else delta * eta / dt_hours
    return new_e, power, clipped


def aggregate_power(demand_kw: float, pv_kw: float, battery_power_kw: float) -> float:
    """Net grid draw: PV is a generation magnitude and offsets demand."""
    return demand_kw - pv_kw + battery_power_kw


def energy_cost(p_agg_kw: float, price_eur_per_kwh: float, tariff: TariffParams) -> float:
    """Consumption billed at the hourly price; injection credited at a fraction of it."""
    dt = tariff.timestep_hours
    if p_agg_kw >= 0:
        return price_eur_per_kwh * p_agg_kw * dt
    return tariff.injection_fraction * price_eur_per_kwh * p_agg_kw * dt


def capacity_cost(p_agg_kw: float, tariff: TariffParams) -> float:
    """Per-step capacity charge on max(realized power, contracted minimum)."""
    return tariff.capacity_rate_eur_per_kw * max(p_agg_kw, tariff.contracted_min_kw)


def rbc_action(demand_kw: float, pv_kw: float, params: BatteryParams) -> float:
    """Built-in battery controller: signal proportional to net load, saturated at +/-1."""
    net = demand_kw - pv_kw
    if net <= -params.max_power_kw:
        return -1.0
    if net >= params.max_power_kw:
        return 1.0
    return net / params.max_power_kw


def _state_at(day, hour: int, energy: float, battery: BatteryParams,
              tariff: TariffParams, stats) -> EnvState:
    price = float(day.prices_eur_per_kwh[hour])
    demand = float(day.demand_kw[hour])
    pv = float(day.pv_kw[hour])
    norm = stats.normalize(hour, energy, price, demand, pv,
                           tariff.horizon_steps, battery.capacity_kwh)
    return EnvState(hour, energy, price, demand, pv, norm)


def step_transition(state: EnvState, u_signal: float, day, battery: BatteryParams,
                    tariff: TariffParams, stats) -> StepOutcome:
    """Pure one-hour transition under a continuous charge signal in [-1, 1]."""
    new_e, bat_power, clipped = battery_update(state.energy_kwh, u_signal, battery,
                                               tariff.timestep_hours)
    p_agg = aggregate_power(state.demand_kw, state.pv_kw, bat_power)
    e_cost = energy_cost(p_agg, state.price_eur_per_kwh, tariff)
    c_cost = capacity_cost(p_agg, tariff)
    next_hour = (state.hour + 1) % tariff.horizon_steps
    next_state = _state_at(day, next_hour, new_e, battery, tariff, stats)
    return StepOutcome(next_state, e_cost + c_cost, e_cost, c_cost, p_agg, bat_power, clipped)


def env_step(state: EnvState, action_index: int, day, battery: BatteryParams,
             tariff: TariffParams, stats) -> StepOutcome:
    """Pure discrete-action transition; the index is validated against the level set."""
    levels = battery.action_levels
    if not (isinstance(action_index, (int, np.integer)) and 0 <= action_index < len(levels)):
        raise ValueError(f"action index {action_index!r} outside [0, {len(levels)})")
    return step_transition(state, levels[action_index], day, battery, tariff, stats)


class HomeEnv:
    """Stateful episode wrapper around the pure transition.

    Owns the battery/tariff parameters and the normalization statistics so
    that every state it emits carries a ready-to-use normalized feature
    vector. One instance rolls one day at a time; instances share nothing.
    """

    def __init__(self, battery: BatteryParams, tariff: TariffParams, stats):
        self.battery = battery
        self.tariff = tariff
        self.stats = stats
        self._day = None
        self._state = None
        self._step_idx = 0

    def reset(self, day, initial_soc: float = 0.5) -> EnvState:
        if len(day.prices_eur_per_kwh) != self.tariff.horizon_steps:
            raise ConfigError(
                f"day '{day.label}' has {len(day.prices_eur_per_kwh)} steps, "
                f"expected {self.tariff.horizon_steps}"
            )
        if not (0.0 <= initial_soc <= 1.0):
            raise ConfigError(f"initial_soc must be in [0, 1], got {initial_soc}")
        self._day = day
        self._step_idx = 0
        self._state = _state_at(day, 0, initial_soc * self.battery.capacity_kwh,
                                self.battery, self.tariff, self.stats)
        return self._state

    @property
    def state(self) -> EnvState:
        return self._state

    @property
    def done(self) -> bool:
        return self._step_idx >= self.tariff.horizon_steps

    def step_signal(self, u_signal: float) -> StepOutcome:
        """Advance one hour under a continuous charge signal in [-1, 1]."""
        if self.done:
            raise ConfigError("episode is finished; call reset() first")
        outcome = step_transition(self._state, u_signal, self._day,
                                  self.battery, self.tariff, self.stats)
        self._step_idx += 1
        self._state = outcome.next_state
        return outcome

    def step(self, action_index: int) -> StepOutcome:
        """Advance one hour under a discrete action index."""
        levels = self.battery.action_levels
        if not (isinstance(action_index, (int, np.integer)) and 0 <= action_index < len(levels)):
            raise ValueError(f"action index {action_index!r} outside [0, {len(levels)})")
        return self.step_signal(levels[action_index])
