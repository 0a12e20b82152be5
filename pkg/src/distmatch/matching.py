"""One-to-one random caliper matching without replacement.

Each treated participant's candidate pool is the set of controls within the
age, BMI, gender, and activity-distance calipers (all boundaries inclusive).
A single matching pass visits treated units in a seed-determined uniformly
random order; each visits samples one control uniformly from its remaining
candidates and removes it from the pool.  Repetitions use independent seeds
derived from a master seed with a 64-bit mixing function (see
``distmatch.util.derive_seed``), so any repetition is reproducible in
isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from distmatch.distance import DistanceConfig, DistanceMatrix
from distmatch.errors import ConfigError, DataError
from distmatch.ingest import Cohort, Participant
from distmatch.util import derive_seed

UNMATCHED_REASONS = ("demographics", "pa_caliper", "consumed")


@dataclass(frozen=True)
class CaliperSpec:
    """Caliper widths; ``pa_caliper`` is the activity-distance cutoff C."""

    pa_caliper: float
    age_caliper: float = 3.0
    bmi_caliper: float = 2.0
    gender_exact: bool = True
    distance_config: DistanceConfig | None = None

    def __post_init__(self):
        for name in ("pa_caliper", "age_caliper", "bmi_caliper"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigError(f"{name} must be > 0, got {value!r}")


@dataclass(eq=False)
class MatchSet:
    """One realized matched sample.

    ``unmatched_reasons`` records, per unmatched treated id, which constraint
    exhausted the pool: no demographic candidate at all ("demographics"),
    demographic candidates but none within the activity caliper
    ("pa_caliper"), or eligible candidates all claimed earlier in the pass
    ("consumed").
    """

    pairs: list[tuple[str, str]]
    seed: int
    unmatched_treated: list[str]
    unmatched_reasons: dict[str, str]

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


class _CandidateIndex:
    """Per-treated candidate positions into the control list, precomputed once."""

    def __init__(self, cohort: Cohort, spec: CaliperSpec, distances: DistanceMatrix):
        self.treated = cohort.treated()
        self.controls = cohort.controls()
        control_ids = [c.participant_id for c in self.controls]
        ages = np.array([c.age for c in self.controls])
        bmis = np.array([c.bmi for c in self.controls])
        genders = np.array([c.gender for c in self.controls])
        col = np.array([distances.index_of(pid) for pid in control_ids], dtype=np.intp)

        self.control_ids = control_ids
        self.demographic: dict[str, np.ndarray] = {}
        self.eligible: dict[str, np.ndarray] = {}
        for t in self.treated:
            ok = np.abs(ages - t.age) <= spec.age_caliper
            ok &= np.abs(bmis - t.bmi) <= spec.bmi_caliper
            if spec.gender_exact:
                ok &= genders == t.gender
            demo_idx = np.flatnonzero(ok)
            self.demographic[t.participant_id] = demo_idx
            if demo_idx.size:
                row = distances.values[distances.index_of(t.participant_id)]
                within = row[col[demo_idx]] <= spec.pa_caliper
                self.eligible[t.participant_id] = demo_idx[within]
            else:
                self.eligible[t.participant_id] = demo_idx


def candidate_set(
    treated: Participant,
    controls: Sequence[Participant],
    spec: CaliperSpec,
    distances: DistanceMatrix,
) -> list[str]:
    """Ids of controls within every caliper of the given treated participant."""
    out = []
    for control in controls:
        if abs(control.age - treated.age) > spec.age_caliper:
            continue
        if abs(control.bmi - treated.bmi) > spec.bmi_caliper:
            continue
        if spec.gender_exact and control.gender != treated.gender:
            continue
        if distances.distance(treated.participant_id, control.participant_id) > spec.pa_caliper:
            continue
        out.append(control.participant_id)
    return out


def match_once(
    cohort: Cohort,
    spec: CaliperSpec,
    distances: DistanceMatrix,
    seed: int,
    _candidates: _CandidateIndex | None = None,
) -> MatchSet:
    """One matching pass; deterministic given (cohort, spec, seed)."""
    cand = _candidates if _candidates is not None else _CandidateIndex(cohort, spec, distances)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(cand.treated))

    consumed = np.zeros(len(cand.controls), dtype=bool)
    pairs: list[tuple[str, str]] = []
    unmatched: list[str] = []
    reasons: dict[str, str] = {}
    for idx in order:
        t = cand.treated[int(idx)]
        tid = t.participant_id
        eligible = cand.eligible[tid]
        remaining = eligible[~consumed[eligible]]
        if remaining.size:
            pick = remaining[int(rng.integers(remaining.size))]
            consumed[pick] = True
            pairs.append((tid, cand.control_ids[int(pick)]))
        else:
            unmatched.append(tid)
            if cand.demographic[tid].size == 0:
                reasons[tid] = "demographics"
            elif eligible.size == 0:
                reasons[tid] = "pa_caliper"
            else:
                reasons[tid] = "consumed"
    return MatchSet(pairs=pairs, seed=seed, unmatched_treated=unmatched, unmatched_reasons=reasons)


def repetition_seed(master_seed: int, rep_index: int) -> int:
    """Seed of repetition ``rep_index`` (0-based) under ``master_seed``."""
    return derive_seed(master_seed, rep_index)


def match_repeat(
    cohort: Cohort,
    spec: CaliperSpec,
    distances: DistanceMatrix,
    reps: int,
    master_seed: int,
) -> list[MatchSet]:
    """``reps`` independent matching passes with derived per-repetition seeds."""
    if reps < 1:
        raise ConfigError(f"reps must be >= 1, got {reps}")
    cand = _CandidateIndex(cohort, spec, distances)
    return [
        match_once(cohort, spec, distances, repetition_seed(master_seed, r), _candidates=cand)
        for r in range(reps)
    ]


def audit_matchset(
    matchset: MatchSet,
    cohort: Cohort,
    spec: CaliperSpec,
    distances: DistanceMatrix,
) -> dict[str, int]:
    """Re-verify every pair against all four calipers and the set invariants.

    Raises DataError on any violation; returns unmatched counts by reason.
    """
    treated_ids = [t.participant_id for t in cohort.treated()]
    control_ids = {c.participant_id for c in cohort.controls()}
    seen_treated: set[str] = set()
    seen_controls: set[str] = set()
    for tid, cid in matchset.pairs:
        if tid in seen_treated:
            raise DataError(f"treated {tid} appears in more than one pair")
        if cid in seen_controls:
            raise DataError(f"control {cid} consumed more than once")
        seen_treated.add(tid)
        seen_controls.add(cid)
        if cid not in control_ids:
            raise DataError(f"{cid} is not a control participant")
        t = cohort.by_id(tid)
        c = cohort.by_id(cid)
        if abs(t.age - c.age) > spec.age_caliper:
            raise DataError(f"pair ({tid},{cid}) violates the age caliper")
        if abs(t.bmi - c.bmi) > spec.bmi_caliper:
            raise DataError(f"pair ({tid},{cid}) violates the BMI caliper")
        if spec.gender_exact and t.gender != c.gender:
            raise DataError(f"pair ({tid},{cid}) violates exact gender matching")
        if distances.distance(tid, cid) > spec.pa_caliper:
            raise DataError(f"pair ({tid},{cid}) violates the activity caliper")
    if len(matchset.pairs) + len(matchset.unmatched_treated) != len(treated_ids):
        raise DataError("pairs plus unmatched do not partition the treated participants")
    if set(matchset.unmatched_treated) & seen_treated:
        raise DataError("a treated participant is both matched and unmatched")
    counts = {reason: 0 for reason in UNMATCHED_REASONS}
    for tid in matchset.unmatched_treated:
        reason = matchset.unmatched_reasons.get(tid)
        if reason not in counts:
            raise DataError(f"unmatched {tid} has unknown reason {reason!r}")
        counts[reason] += 1
    return counts


def matched_sample(cohort: Cohort, matchset: MatchSet) -> list[Participant]:
    """Participants entering the outcome model: every matched treated and control."""
    out: list[Participant] = []
    for tid, cid in matchset.pairs:
        out.append(cohort.by_id(tid))
        out.append(cohort.by_id(cid))
    return out


def relaxed_spec(spec: CaliperSpec) -> CaliperSpec:
    """Same demographics calipers with the activity caliper effectively removed."""
    return CaliperSpec(
        pa_caliper=math.inf,
        age_caliper=spec.age_caliper,
        bmi_caliper=spec.bmi_caliper,
        gender_exact=spec.gender_exact,
        distance_config=spec.distance_config,
    )
