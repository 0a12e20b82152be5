"""Synthetic cohort generator with known ground truth.

Minute-level counts follow a zero-inflated lognormal: each minute is active
with probability given by a smooth diurnal curve (near zero at night, a
person-specific daytime bell plus a waking-hours floor), and active minutes
draw a lognormal count.  Each participant has one template day; observed
days multiply the template by day-level and minute-level lognormal factors
scaled by ``day_noise``, so ``day_noise=0`` reproduces the template exactly.

Survival times are exponential with log-hazard
``true_gamma * race + fixed covariate effects``, administratively censored
at ``horizon_months``; ``censoring_rate`` sets the approximate censored
fraction at the reference covariate profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from distmatch.errors import ConfigError
from distmatch.ingest import (
    ACTIVITY_HEADER,
    DEMOGRAPHICS_HEADER,
    MINUTES_PER_DAY,
    MORTALITY_HEADER,
    Cohort,
    DayPolicy,
    DayRecord,
    InclusionConfig,
    RawTables,
    _format_counts,
    build_cohort,
    estimate_wear_minutes,
)
from distmatch.util import atomic_write, derive_seed

# fixed covariate effects on the log-hazard scale
AGE_LOG_HAZARD_PER_YEAR = 0.03
GENDER_LOG_HAZARD = -0.15
BMI_LOG_HAZARD_PER_UNIT = 0.02

_GENDERS = ("female", "male")


@dataclass(frozen=True)
class SimSpec:
    """Knobs for one synthetic cohort; every field has a reproducible default."""

    n_treated: int = 50
    n_control: int = 75
    seed: int = 0
    days_min: int = 3
    days_max: int = 7
    day_noise: float = 0.15
    true_gamma: float = 0.0
    censoring_rate: float = 0.3
    horizon_months: float = 120.0
    treated_age_mean: float = 63.0
    treated_age_sd: float = 7.0
    control_age_mean: float = 66.0
    control_age_sd: float = 8.0
    treated_bmi_mean: float = 30.0
    treated_bmi_sd: float = 4.5
    control_bmi_mean: float = 28.0
    control_bmi_sd: float = 4.0
    activity_log_mean: float = 4.5
    activity_log_between_sd: float = 0.6
    activity_log_minute_sd: float = 1.2
    bad_day_rate: float = 0.0
    treated_label: str = "treated_group"
    control_label: str = "control_group"

    def __post_init__(self):
        if self.n_treated < 1 or self.n_control < 1:
            raise ConfigError("n_treated and n_control must be >= 1")
        if not 1 <= self.days_min <= self.days_max <= 7:
            raise ConfigError("need 1 <= days_min <= days_max <= 7")
        for name in ("censoring_rate", "bad_day_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.day_noise < 0:
            raise ConfigError("day_noise must be >= 0")
        if self.horizon_months <= 0:
            raise ConfigError("horizon_months must be > 0")


@dataclass(eq=False)
class _SimParticipant:
    participant_id: str
    race: str
    age: float
    gender: str
    bmi: float
    followup_months: float
    event: bool
    days: list  # list[(day_index, wear_minutes, calibrated, reliable, counts)]


def _diurnal_activity_probability(rng: np.random.Generator) -> np.ndarray:
    """Per-minute probability of a non-zero count for one person."""
    t = (np.arange(MINUTES_PER_DAY) + 0.5) / MINUTES_PER_DAY
    peak = rng.uniform(0.45, 0.70)
    width = rng.uniform(0.12, 0.22)
    height = rng.uniform(0.45, 0.85)
    bell = height * np.exp(-0.5 * ((t - peak) / width) ** 2)
    awake = (t >= 0.33) & (t <= 0.92)
    prob = np.where(awake, np.maximum(bell, 0.15), np.minimum(bell, 0.02))
    return prob


def _baseline_hazard(spec: SimSpec) -> float:
    # censored fraction exp(-lambda*H) == censoring_rate at the reference profile
    rate = min(max(spec.censoring_rate, 1e-9), 1.0 - 1e-9)
    treated_share = spec.n_treated / (spec.n_treated + spec.n_control)
    reference_lp = spec.true_gamma * treated_share + GENDER_LOG_HAZARD * 0.5
    return -math.log(rate) / (spec.horizon_months * math.exp(reference_lp))


def _simulate_participant(spec: SimSpec, index: int, treated: bool, lam0: float) -> _SimParticipant:
    rng = np.random.default_rng(derive_seed(spec.seed, index))
    race = spec.treated_label if treated else spec.control_label
    prefix = "t" if treated else "c"
    pid = f"{prefix}{index:05d}"

    if treated:
        age = rng.normal(spec.treated_age_mean, spec.treated_age_sd)
        bmi = rng.normal(spec.treated_bmi_mean, spec.treated_bmi_sd)
    else:
        age = rng.normal(spec.control_age_mean, spec.control_age_sd)
        bmi = rng.normal(spec.control_bmi_mean, spec.control_bmi_sd)
    age = float(np.clip(age, 51.0, 85.0))
    bmi = float(np.clip(bmi, 18.0, 55.0))
    gender = _GENDERS[int(rng.integers(2))]

    prob = _diurnal_activity_probability(rng)
    mu = rng.normal(spec.activity_log_mean, spec.activity_log_between_sd)
    active = rng.random(MINUTES_PER_DAY) < prob
    magnitude = np.exp(mu + spec.activity_log_minute_sd * rng.standard_normal(MINUTES_PER_DAY))
    template = np.rint(np.where(active, magnitude, 0.0))

    n_days = int(rng.integers(spec.days_min, spec.days_max + 1))
    days = []
    for day_index in range(1, n_days + 1):
        if spec.day_noise > 0:
            day_factor = math.exp(spec.day_noise * rng.standard_normal())
            jitter = np.exp(0.5 * spec.day_noise * rng.standard_normal(MINUTES_PER_DAY))
            counts = np.rint(template * day_factor * jitter)
        else:
            counts = template.copy()
        reliable = rng.random() >= spec.bad_day_rate
        wear = estimate_wear_minutes(counts)
        days.append((day_index, wear, True, bool(reliable), counts))

    lp = (
        spec.true_gamma * (1.0 if treated else 0.0)
        + AGE_LOG_HAZARD_PER_YEAR * (age - 65.0)
        + GENDER_LOG_HAZARD * (1.0 if gender == "male" else 0.0)
        + BMI_LOG_HAZARD_PER_UNIT * (bmi - 28.0)
    )
    hazard = lam0 * math.exp(lp)
    survival_time = float(rng.exponential(1.0 / hazard))
    event = survival_time <= spec.horizon_months
    followup = min(survival_time, spec.horizon_months)

    return _SimParticipant(
        participant_id=pid,
        race=race,
        age=age,
        gender=gender,
        bmi=bmi,
        followup_months=followup,
        event=event,
        days=days,
    )


def simulate_participants(spec: SimSpec) -> list[_SimParticipant]:
    lam0 = _baseline_hazard(spec)
    people = []
    for i in range(spec.n_treated):
        people.append(_simulate_participant(spec, i, treated=True, lam0=lam0))
    for i in range(spec.n_control):
        people.append(_simulate_participant(spec, spec.n_treated + i, treated=False, lam0=lam0))
    return people


def simulate_tables(spec: SimSpec) -> RawTables:
    """In-memory tables identical to what a CSV round-trip would produce."""
    people = simulate_participants(spec)
    days = []
    demographics = {}
    mortality = {}
    for person in people:
        for day_index, wear, calibrated, reliable, counts in person.days:
            days.append(
                DayRecord(
                    participant_id=person.participant_id,
                    day_index=day_index,
                    counts=counts,
                    wear_minutes=wear,
                    calibrated=calibrated,
                    reliable=reliable,
                )
            )
        demographics[person.participant_id] = {
            "age": repr(person.age),
            "gender": person.gender,
            "bmi": repr(person.bmi),
            "race": person.race,
        }
        mortality[person.participant_id] = {
            "followup_months": repr(person.followup_months),
            "event": "1" if person.event else "0",
        }
    return RawTables(days=days, demographics=demographics, mortality=mortality)


def simulate_cohort(
    spec: SimSpec,
    inclusion: InclusionConfig | None = None,
    day_policy: DayPolicy = DayPolicy(),
) -> Cohort:
    """Generate and run the standard inclusion filters in one step."""
    if inclusion is None:
        inclusion = InclusionConfig(
            treated_race=spec.treated_label, control_race=spec.control_label
        )
    return build_cohort(simulate_tables(spec), inclusion=inclusion, day_policy=day_policy)


def generate(spec: SimSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write activity.csv, demographics.csv, mortality.csv under ``out_dir``.

    Output is byte-identical for equal specs and round-trips through the
    ingest loaders.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    people = simulate_participants(spec)

    activity_path = out_dir / "activity.csv"
    with atomic_write(activity_path) as out:
        out.write(",".join(ACTIVITY_HEADER) + "\n")
        for person in people:
            for day_index, wear, calibrated, reliable, counts in person.days:
                out.write(
                    f"{person.participant_id},{day_index},{wear},"
                    f"{int(calibrated)},{int(reliable)},{_format_counts(counts)}\n"
                )

    demographics_path = out_dir / "demographics.csv"
    with atomic_write(demographics_path) as out:
        out.write(",".join(DEMOGRAPHICS_HEADER) + "\n")
        for person in people:
            out.write(
                f"{person.participant_id},{person.age!r},{person.gender},"
                f"{person.bmi!r},{person.race}\n"
            )

    mortality_path = out_dir / "mortality.csv"
    with atomic_write(mortality_path) as out:
        out.write(",".join(MORTALITY_HEADER) + "\n")
        for person in people:
            out.write(
                f"{person.participant_id},{person.followup_months!r},{int(person.event)}\n"
            )

    return {
        "activity": activity_path,
        "demographics": demographics_path,
        "mortality": mortality_path,
    }
