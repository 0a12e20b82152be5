"""Load activity/demographic/mortality tables and build the analysis cohort.

Input schemas (CSV, header required unless the file is completely empty):

    activity.csv      participant_id,day_index,wear_minutes,calibrated,reliable,m1,...,m1440
    demographics.csv  participant_id,age,gender,bmi,race
    mortality.csv     participant_id,followup_months,event

Booleans are 0/1.  Missing values are empty fields; a missing matching
covariate or outcome excludes the participant rather than failing the load.
An empty ``wear_minutes`` field is estimated from the counts: a minute is
non-wear when it belongs to a run of at least ``zero_run_threshold``
consecutive zeros (90 by default).
"""

from __future__ import annotations

import csv
import io
import json
import zipfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from distmatch.errors import ConfigError, DataError, EmptyCohortError
from distmatch.util import atomic_write

MINUTES_PER_DAY = 1440
SNAPSHOT_FORMAT_VERSION = 1

_ACTIVITY_FIXED = ["participant_id", "day_index", "wear_minutes", "calibrated", "reliable"]
ACTIVITY_HEADER = _ACTIVITY_FIXED + [f"m{i}" for i in range(1, MINUTES_PER_DAY + 1)]
DEMOGRAPHICS_HEADER = ["participant_id", "age", "gender", "bmi", "race"]
MORTALITY_HEADER = ["participant_id", "followup_months", "event"]


@dataclass(frozen=True, eq=False)
class DayRecord:
    """One participant-day: 1,440 minute-level activity counts plus quality flags."""

    participant_id: str
    day_index: int
    counts: np.ndarray
    wear_minutes: int
    calibrated: bool
    reliable: bool

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64)
        object.__setattr__(self, "counts", counts)
        if counts.shape != (MINUTES_PER_DAY,):
            raise DataError(
                f"day {self.participant_id}/{self.day_index}: expected "
                f"{MINUTES_PER_DAY} counts, got {counts.size}"
            )
        if not np.all(np.isfinite(counts)) or counts.min() < 0:
            raise DataError(
                f"day {self.participant_id}/{self.day_index}: counts must be finite and >= 0"
            )
        if not 0 <= self.wear_minutes <= MINUTES_PER_DAY:
            raise DataError(
                f"day {self.participant_id}/{self.day_index}: wear_minutes "
                f"{self.wear_minutes} outside [0, {MINUTES_PER_DAY}]"
            )


@dataclass(frozen=True, eq=False)
class Participant:
    """Demographics, survival outcome, and the good days retained for analysis."""

    participant_id: str
    age: float
    gender: str
    bmi: float
    race: str
    followup_months: float
    event: bool
    good_days: tuple[DayRecord, ...]


@dataclass(frozen=True)
class DayPolicy:
    """What counts as a good day.

    The wear threshold is strict by default (> 600 minutes, i.e. over ten
    hours); set ``wear_inclusive`` to accept exactly the threshold.
    """

    min_wear_minutes: int = 600
    wear_inclusive: bool = False
    require_calibrated: bool = True
    require_reliable: bool = True
    zero_run_threshold: int = 90


@dataclass(frozen=True)
class InclusionConfig:
    """Cohort inclusion rules: age cut, study race labels, minimum good days."""

    min_age: float = 50.0
    min_good_days: int = 3
    treated_race: str = "treated_group"
    control_race: str = "control_group"


DEFAULT_DAY_POLICY = DayPolicy()
DEFAULT_INCLUSION = InclusionConfig()


@dataclass(eq=False)
class RawTables:
    """Parsed input rows before quality filtering and the cohort join."""

    days: list[DayRecord]
    demographics: dict[str, dict]
    mortality: dict[str, dict]


@dataclass(eq=False)
class Cohort:
    """Participants surviving all inclusion rules, plus filter provenance."""

    participants: list[Participant]
    provenance: list[tuple[str, int]]
    inclusion: InclusionConfig
    day_policy: DayPolicy

    def __post_init__(self):
        self._by_id = {p.participant_id: p for p in self.participants}
        if len(self._by_id) != len(self.participants):
            raise DataError("cohort participant ids are not unique")

    @property
    def n(self) -> int:
        return len(self.participants)

    def ids(self) -> list[str]:
        return [p.participant_id for p in self.participants]

    def by_id(self, participant_id: str) -> Participant:
        return self._by_id[participant_id]

    def treated(self) -> list[Participant]:
        return [p for p in self.participants if p.race == self.inclusion.treated_race]

    def controls(self) -> list[Participant]:
        return [p for p in self.participants if p.race == self.inclusion.control_race]


def wear_minute_mask(counts: np.ndarray, zero_run_threshold: int = 90) -> np.ndarray:
    """Boolean mask of wear minutes: True unless inside a long run of zeros."""
    zero = counts == 0
    mask = np.ones(counts.size, dtype=bool)
    start = None
    for i, z in enumerate(zero):
        if z and start is None:
            start = i
        elif not z and start is not None:
            if i - start >= zero_run_threshold:
                mask[start:i] = False
            start = None
    if start is not None and counts.size - start >= zero_run_threshold:
        mask[start:] = False
    return mask


def estimate_wear_minutes(counts: np.ndarray, zero_run_threshold: int = 90) -> int:
    """Wear time from counts alone: minutes outside long zero-runs."""
    return int(wear_minute_mask(counts, zero_run_threshold).sum())


def good_day(day: DayRecord, policy: DayPolicy = DEFAULT_DAY_POLICY) -> bool:
    """True iff the day passes the wear-time, calibration, and reliability checks."""
    if policy.wear_inclusive:
        enough_wear = day.wear_minutes >= policy.min_wear_minutes
    else:
        enough_wear = day.wear_minutes > policy.min_wear_minutes
    if not enough_wear:
        return False
    if policy.require_calibrated and not day.calibrated:
        return False
    if policy.require_reliable and not day.reliable:
        return False
    return True


def _parse_bool(text: str, where: str) -> bool:
    if text == "0":
        return False
    if text == "1":
        return True
    raise DataError(f"{where}: expected boolean 0/1, got {text!r}")


def _open_rows(path: Path) -> Iterable[list[str]]:
    with path.open(newline="") as handle:
        yield from csv.reader(handle)


def _load_activity(path: Path, day_policy: DayPolicy) -> list[DayRecord]:
    if not path.is_file():
        raise ConfigError(f"activity file not found: {path}")
    days: list[DayRecord] = []
    seen: set[tuple[str, int]] = set()
    rows = _open_rows(path)
    try:
        header = next(rows)
    except StopIteration:
        return days  # completely empty file: vacuous input
    if header != ACTIVITY_HEADER:
        raise DataError(
            f"{path}:1: bad activity header (expected participant_id,day_index,"
            f"wear_minutes,calibrated,reliable,m1..m{MINUTES_PER_DAY})"
        )
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(ACTIVITY_HEADER):
            raise DataError(f"{path}:{lineno}: expected {len(ACTIVITY_HEADER)} fields, got {len(row)}")
        pid = row[0]
        if not pid:
            raise DataError(f"{path}:{lineno}: empty participant_id")
        try:
            day_index = int(row[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: column day_index: non-integer {row[1]!r}") from None
        if not 1 <= day_index <= 7:
            raise DataError(f"{path}:{lineno}: column day_index: {day_index} outside 1..7")
        if (pid, day_index) in seen:
            raise DataError(f"{path}:{lineno}: duplicate (participant, day) ({pid}, {day_index})")
        seen.add((pid, day_index))
        try:
            counts = np.array(row[5:], dtype=np.float64)
        except ValueError:
            counts = None
        if counts is None or np.any(np.isnan(counts)):
            for offset, text in enumerate(row[5:]):
                try:
                    value = float(text)
                except ValueError:
                    value = float("nan")
                if not np.isfinite(value):
                    raise DataError(
                        f"{path}:{lineno}: column m{offset + 1}: non-numeric count {text!r}"
                    ) from None
            raise DataError(f"{path}:{lineno}: malformed counts")
        if np.any(~np.isfinite(counts)):
            bad = int(np.flatnonzero(~np.isfinite(counts))[0])
            raise DataError(f"{path}:{lineno}: column m{bad + 1}: non-finite count")
        if counts.min() < 0:
            bad = int(np.flatnonzero(counts < 0)[0])
            raise DataError(
                f"{path}:{lineno}: column m{bad + 1}: negative count {counts[bad]!r}"
            )
        if row[2] == "":
            wear = estimate_wear_minutes(counts, day_policy.zero_run_threshold)
        else:
            try:
                wear = int(row[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: column wear_minutes: non-integer {row[2]!r}") from None
            if not 0 <= wear <= MINUTES_PER_DAY:
                raise DataError(f"{path}:{lineno}: column wear_minutes: {wear} outside 0..{MINUTES_PER_DAY}")
        calibrated = _parse_bool(row[3], f"{path}:{lineno}: column calibrated")
        reliable = _parse_bool(row[4], f"{path}:{lineno}: column reliable")
        days.append(
            DayRecord(
                participant_id=pid,
                day_index=day_index,
                counts=counts,
                wear_minutes=wear,
                calibrated=calibrated,
                reliable=reliable,
            )
        )
    return days


def _float_or_none(text: str, where: str) -> float | None:
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{where}: non-numeric value {text!r}") from None
    if not np.isfinite(value):
        raise DataError(f"{where}: non-finite value {text!r}")
    return value


def _load_simple_table(path: Path, header: list[str], kind: str) -> dict[str, dict]:
    if not path.is_file():
        raise ConfigError(f"{kind} file not found: {path}")
    table: dict[str, dict] = {}
    rows = _open_rows(path)
    try:
        got = next(rows)
    except StopIteration:
        return table
    if got != header:
        raise DataError(f"{path}:1: bad {kind} header (expected {','.join(header)})")
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        pid = row[0]
        if not pid:
            raise DataError(f"{path}:{lineno}: empty participant_id")
        if pid in table:
            raise DataError(f"{path}:{lineno}: duplicate participant_id {pid!r}")
        table[pid] = {"_line": lineno, **dict(zip(header[1:], row[1:]))}
    return table


def load_tables(
    activity_path: str | Path,
    demographics_path: str | Path,
    mortality_path: str | Path,
    day_policy: DayPolicy = DEFAULT_DAY_POLICY,
) -> RawTables:
    """Parse the three input files; raises DataError naming file/line/column on malformed rows."""
    days = _load_activity(Path(activity_path), day_policy)
    demographics = _load_simple_table(Path(demographics_path), DEMOGRAPHICS_HEADER, "demographics")
    mortality = _load_simple_table(Path(mortality_path), MORTALITY_HEADER, "mortality")
    return RawTables(days=days, demographics=demographics, mortality=mortality)


def build_cohort(
    tables: RawTables,
    inclusion: InclusionConfig = DEFAULT_INCLUSION,
    day_policy: DayPolicy = DEFAULT_DAY_POLICY,
) -> Cohort:
    """Apply the inclusion filter chain and return the analysis cohort.

    Stage order (counts recorded in provenance): demographics rows, race in
    the two study groups, age over the minimum, complete covariates and
    outcome, minimum good days.
    """
    days_by_pid: dict[str, list[DayRecord]] = {}
    for day in tables.days:
        days_by_pid.setdefault(day.participant_id, []).append(day)

    provenance: list[tuple[str, int]] = []
    ids = sorted(tables.demographics)
    provenance.append(("demographics_rows", len(ids)))

    study_races = {inclusion.treated_race, inclusion.control_race}
    ids = [pid for pid in ids if tables.demographics[pid]["race"] in study_races]
    provenance.append(("race_in_study_groups", len(ids)))

    survivors: list[str] = []
    for pid in ids:
        age = _float_or_none(tables.demographics[pid]["age"], f"demographics {pid}")
        if age is not None and age > inclusion.min_age:
            survivors.append(pid)
    ids = survivors
    provenance.append(("age_over_minimum", len(ids)))

    complete: list[Participant] = []
    for pid in ids:
        demo = tables.demographics[pid]
        mort = tables.mortality.get(pid)
        age = _float_or_none(demo["age"], f"demographics {pid}")
        bmi = _float_or_none(demo["bmi"], f"demographics {pid}")
        gender = demo["gender"]
        if age is None or bmi is None or bmi <= 0 or not gender or mort is None:
            continue
        followup = _float_or_none(mort["followup_months"], f"mortality {pid}")
        event_text = mort["event"]
        if followup is None or followup <= 0 or event_text == "":
            continue
        event = _parse_bool(event_text, f"mortality {pid}: column event")
        complete.append(
            Participant(
                participant_id=pid,
                age=age,
                gender=gender,
                bmi=bmi,
                race=demo["race"],
                followup_months=followup,
                event=event,
                good_days=(),
            )
        )
    provenance.append(("complete_covariates_outcome", len(complete)))

    final: list[Participant] = []
    for participant in complete:
        candidate_days = sorted(
            days_by_pid.get(participant.participant_id, []), key=lambda d: d.day_index
        )
        good = tuple(d for d in candidate_days if good_day(d, day_policy))
        if len(good) >= inclusion.min_good_days:
            final.append(replace(participant, good_days=good))
    provenance.append(("min_good_days", len(final)))

    if not final:
        raise EmptyCohortError(
            "no participants satisfy the inclusion rules; "
            f"stage counts: {', '.join(f'{s}={c}' for s, c in provenance)}"
        )
    return Cohort(participants=final, provenance=provenance, inclusion=inclusion, day_policy=day_policy)


# --- cohort snapshot -------------------------------------------------------
#
# Snapshot = one zip file holding the filtered tables as CSV plus a JSON
# metadata entry (format version, inclusion/day-policy config, provenance).
# Zip entry timestamps are fixed so identical cohorts produce identical bytes.

_SNAP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _format_counts(counts: np.ndarray) -> str:
    # integer-valued counts (the common case) print compactly; anything else
    # uses repr for exact float round-trip
    if counts.max(initial=0.0) < 2**53 and np.all(counts == np.floor(counts)):
        return ",".join(map(str, counts.astype(np.int64)))
    return ",".join(repr(float(c)) for c in counts)


def _activity_csv_text(participants: Sequence[Participant]) -> str:
    buf = io.StringIO()
    buf.write(",".join(ACTIVITY_HEADER) + "\n")
    for p in participants:
        for day in p.good_days:
            buf.write(
                f"{p.participant_id},{day.day_index},{day.wear_minutes},"
                f"{int(day.calibrated)},{int(day.reliable)},{_format_counts(day.counts)}\n"
            )
    return buf.getvalue()


def _demographics_csv_text(participants: Sequence[Participant]) -> str:
    lines = [",".join(DEMOGRAPHICS_HEADER)]
    for p in participants:
        lines.append(f"{p.participant_id},{p.age!r},{p.gender},{p.bmi!r},{p.race}")
    return "\n".join(lines) + "\n"


def _mortality_csv_text(participants: Sequence[Participant]) -> str:
    lines = [",".join(MORTALITY_HEADER)]
    for p in participants:
        lines.append(f"{p.participant_id},{p.followup_months!r},{int(p.event)}")
    return "\n".join(lines) + "\n"


def save_cohort(cohort: Cohort, path: str | Path) -> None:
    """Write a versioned single-file snapshot with deterministic bytes."""
    meta = {
        "format_version": SNAPSHOT_FORMAT_VERSION,
        "inclusion": vars(cohort.inclusion).copy(),
        "day_policy": vars(cohort.day_policy).copy(),
        "provenance": [[stage, count] for stage, count in cohort.provenance],
        "n_participants": cohort.n,
    }
    entries = [
        ("meta.json", json.dumps(meta, sort_keys=True, indent=1)),
        ("activity.csv", _activity_csv_text(cohort.participants)),
        ("demographics.csv", _demographics_csv_text(cohort.participants)),
        ("mortality.csv", _mortality_csv_text(cohort.participants)),
    ]
    with atomic_write(path, mode="wb") as raw:
        with zipfile.ZipFile(raw, mode="w", compression=zipfile.ZIP_DEFLATED) as archive:
            for name, text in entries:
                info = zipfile.ZipInfo(name, date_time=_SNAP_EPOCH)
                info.compress_type = zipfile.ZIP_DEFLATED
                info.external_attr = 0o644 << 16
                archive.writestr(info, text)


def load_cohort(path: str | Path) -> Cohort:
    """Read a snapshot written by :func:`save_cohort`."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"cohort snapshot not found: {path}")
    try:
        with zipfile.ZipFile(path) as archive:
            meta = json.loads(archive.read("meta.json"))
            activity = archive.read("activity.csv").decode()
            demographics = archive.read("demographics.csv").decode()
            mortality = archive.read("mortality.csv").decode()
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: not a valid cohort snapshot ({exc})") from None
    version = meta.get("format_version")
    if version != SNAPSHOT_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported snapshot format version {version!r}")
    inclusion = InclusionConfig(**meta["inclusion"])
    day_policy = DayPolicy(**meta["day_policy"])

    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        (tmp_path / "activity.csv").write_text(activity)
        (tmp_path / "demographics.csv").write_text(demographics)
        (tmp_path / "mortality.csv").write_text(mortality)
        tables = load_tables(
            tmp_path / "activity.csv",
            tmp_path / "demographics.csv",
            tmp_path / "mortality.csv",
            day_policy=day_policy,
        )
    cohort = build_cohort(tables, inclusion=inclusion, day_policy=day_policy)
    # preserve the original filter history rather than the re-filtered counts
    cohort.provenance = [(stage, count) for stage, count in meta["provenance"]]
    return cohort
