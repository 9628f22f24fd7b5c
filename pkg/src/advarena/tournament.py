"""Tournament engine: submission registry with rate limiting and
compliance gating, continuous evaluation against the top-5 sets,
successive-halving rounds, the final all-pairs evaluation, and
append-only leaderboard persistence.

State directory layout:

    config                      frozen arena configuration
    registry.log                one line per registration event
    models/*.ckpt               baseline checkpoints
    rounds/<rid>/records.log    RunRecord lines, tagged <rid>:<phase>
    rounds/<rid>/leaderboard    track / rank / submission / score rows
    rounds/<rid>/report         schedule, top-5 sets, config hash
    artifacts/<rid>/*.avt1      registered adversarials (or grey fallbacks)
    LATEST                      id of the most recent round

Record lines are written once per executed run under the `<rid>:run` tag
and then again per scoring phase (`:full`, `:m`, `:a`) so each phase is a
complete, self-describing table that `replay` can rescore without any
side knowledge.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .attacks import (Attack, AttackResult, additive_gaussian_attack,
                      boundary_attack, interpolation_attack, pointwise_attack,
                      salt_and_pepper_attack, transfer_attack_iterative,
                      transfer_attack_single_step)
from .config import ArenaConfig, save_config
from .evaluation import EvalSettings, evaluate_pair
from .httpserve import HttpOracle, serve_meter
from .images import Dataset, Image, Sample, make_image
from .models import (FrozenNoiseModel, adversarial_train, apply_mask,
                     frozen_noise_mask, load_model, save_model, train)
from .oracle import (ComplianceReport, DecisionOracle, check_determinism,
                     check_statelessness)
from .rng import RngKey
from .scoring import (RecordSet, attack_score, format_record_line,
                      model_score, parse_record_line)
from .synthdata import generate_synthetic_dataset
from .tensorio import load_image, save_image

__all__ = [
    "TRACKS",
    "LogicalClock",
    "Submission",
    "RegistrationResult",
    "Registry",
    "assign_targets",
    "stage_schedule",
    "StagePlan",
    "RoundState",
    "Leaderboard",
    "ReplayReport",
    "replay_records",
    "Arena",
    "ArenaError",
]

TRACKS = ("model", "untargeted_attack", "targeted_attack")
ATTACK_TRACKS = ("untargeted_attack", "targeted_attack")
SUBMISSION_KINDS = ("builtin", "external-process", "http-endpoint")

BASELINE_MODELS = ("vanilla", "frozen-noise", "adv-trained")
BASELINE_UNTARGETED = ("gaussian", "salt-pepper", "pointwise", "boundary",
                       "transfer-step", "transfer-pgd")
BASELINE_TARGETED = ("interpolation", "pointwise-t", "boundary-t")


class ArenaError(Exception):
    """Domain-level failure (bad state, unsatisfiable protocol step)."""


class LogicalClock:
    """Simulated time in hours, advanced explicitly by tests and drivers."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, hours: float) -> None:
        if hours < 0:
            raise ValueError("clock cannot run backwards")
        self._now += hours


class WallClock:
    def now(self) -> float:
        return time.time() / 3600.0


@dataclass(frozen=True)
class Submission:
    submission_id: str
    track: str
    team_id: str
    kind: str
    locator: str
    open_source: bool = True
    registered_at: float = 0.0
    seq: int = 0

    def __post_init__(self):
        if self.track not in TRACKS:
            raise ValueError(f"unknown track {self.track!r}")
        if self.kind not in SUBMISSION_KINDS:
            raise ValueError(f"unknown submission kind {self.kind!r}")
        for field in (self.submission_id, self.team_id, self.locator):
            if "\t" in field:
                raise ValueError("tabs not allowed in ids or locators")


@dataclass(frozen=True)
class RegistrationResult:
    accepted: bool
    reason: str | None = None
    reports: tuple[ComplianceReport, ...] = ()


class Registry:
    """Accepted submissions, newest-per-team active sets, and the
    append-only registration event log."""

    def __init__(self, clock, state_dir: Path | None = None,
                 rate_limit_hours: float = 24.0, model_checker=None):
        self._clock = clock
        self._rate_limit = rate_limit_hours
        self._model_checker = model_checker
        self._log_path = (Path(state_dir) / "registry.log"
                          if state_dir is not None else None)
        self._subs: dict[str, Submission] = {}
        self._team_last: dict[tuple[str, str], float] = {}
        self._seq = 0

    def __len__(self) -> int:
        return len(self._subs)

    def __contains__(self, submission_id: str) -> bool:
        return submission_id in self._subs

    def get(self, submission_id: str) -> Submission:
        return self._subs[submission_id]

    def all_submissions(self) -> list[Submission]:
        return sorted(self._subs.values(), key=lambda s: s.seq)

    def active(self, track: str) -> list[Submission]:
        """Newest accepted submission per team, in registration order."""
        latest: dict[str, Submission] = {}
        for sub in self.all_submissions():
            if sub.track == track:
                latest[sub.team_id] = sub
        return sorted(latest.values(), key=lambda s: s.seq)

    def _log(self, event: str, sub: Submission, reason: str | None) -> None:
        if self._log_path is None:
            return
        line = "\t".join([
            event, sub.submission_id, sub.track, sub.team_id,
            f"{sub.registered_at:.9g}", sub.kind, sub.locator,
            "1" if sub.open_source else "0", reason or "-",
        ])
        with open(self._log_path, "a") as fh:
            fh.write(line + "\n")

    def register(self, submission: Submission) -> RegistrationResult:
        if submission.submission_id in self._subs:
            raise ValueError(f"duplicate id {submission.submission_id!r}")
        now = self._clock.now()
        submission = replace(submission, registered_at=now)
        key = (submission.team_id, submission.track)
        last = self._team_last.get(key)
        if last is not None and now - last < self._rate_limit:
            self._log("rejected", submission, "rate_limited")
            return RegistrationResult(False, "rate_limited")
        reports: tuple[ComplianceReport, ...] = ()
        if submission.track == "model" and self._model_checker is not None:
            reports = tuple(self._model_checker(submission))
            if not all(r.passed for r in reports):
                failed = ",".join(r.check for r in reports if not r.passed)
                self._log("rejected", submission, f"compliance_failed:{failed}")
                return RegistrationResult(False, "compliance_failed", reports)
        self._seq += 1
        submission = replace(submission, seq=self._seq)
        self._subs[submission.submission_id] = submission
        self._team_last[key] = now
        self._log("accepted", submission, None)
        return RegistrationResult(True, reports=reports)

    def restore(self, state_dir: Path) -> None:
        """Rebuild accepted submissions from the event log, skipping the
        gates they already passed."""
        log = Path(state_dir) / "registry.log"
        if not log.exists():
            return
        for line in log.read_text().splitlines():
            parts = line.split("\t")
            if len(parts) != 9 or parts[0] != "accepted":
                continue
            self._seq += 1
            sub = Submission(
                submission_id=parts[1], track=parts[2], team_id=parts[3],
                kind=parts[5], locator=parts[6], open_source=parts[7] == "1",
                registered_at=float(parts[4]), seq=self._seq,
            )
            self._subs[sub.submission_id] = sub
            self._team_last[(sub.team_id, sub.track)] = sub.registered_at


def assign_targets(dataset: Dataset, seed: int) -> Dataset:
    """Give every sample a target drawn uniformly from the other classes.

    Streams are keyed by sample id, so targets are stable no matter how
    the dataset is sliced or reordered.
    """
    if dataset.num_classes < 2:
        raise ValueError("targets need at least 2 classes")
    key = RngKey(seed)
    samples = []
    for s in dataset:
        if s.target_label is not None:
            samples.append(s)
            continue
        gen = key.child("targets", s.sample_id).generator()
        draw = int(gen.integers(0, dataset.num_classes - 1))
        target = draw if draw < s.true_label else draw + 1
        samples.append(s.with_target(target))
    return Dataset(dataset.num_classes, dataset.split_tag, tuple(samples))


@dataclass(frozen=True)
class StagePlan:
    index: int
    samples: int
    before: dict[str, int]
    after: dict[str, int]


def _cut_count(count: int, top_pool: int) -> int:
    return count if count <= top_pool else math.ceil(count / 2)


def stage_schedule(track_counts: dict[str, int], stage_start: int,
                   top_pool: int, max_samples: int) -> list[StagePlan]:
    """Halving arithmetic only: how many stages, on how many samples, and
    the survivor counts per track. Tracks already inside the pool are
    never cut."""
    counts = dict(track_counts)
    plans: list[StagePlan] = []
    index = 0
    while any(c > top_pool for c in counts.values()):
        index += 1
        samples = min(stage_start * 2 ** (index - 1), max_samples)
        after = {t: _cut_count(c, top_pool) for t, c in counts.items()}
        plans.append(StagePlan(index, samples, dict(counts), after))
        counts = after
    return plans


@dataclass(frozen=True)
class RoundState:
    round_id: str
    surviving_models: tuple[str, ...]
    surviving_untargeted: tuple[str, ...]
    surviving_targeted: tuple[str, ...]
    samples_per_stage: tuple[int, ...]
    stage_index: int
    frozen: bool

    def __post_init__(self):
        sizes = self.samples_per_stage
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"stage sample counts must increase: {sizes}")


@dataclass(frozen=True)
class Leaderboard:
    source_round_id: str
    rankings: dict[str, tuple[tuple[str, float], ...]]
    top5_models: tuple[str, ...]
    top5_untargeted: tuple[str, ...]
    top5_targeted: tuple[str, ...]

    def top5(self, track: str) -> tuple[str, ...]:
        return {
            "model": self.top5_models,
            "untargeted_attack": self.top5_untargeted,
            "targeted_attack": self.top5_targeted,
        }[track]

    def render_rows(self) -> str:
        lines = []
        for track in TRACKS:
            for rank, (sid, score) in enumerate(self.rankings.get(track, ()), 1):
                lines.append(f"{track}\t{rank}\t{sid}\t{score:.9g}\n")
        return "".join(lines)

    def render_text(self) -> str:
        out = [f"leaderboard (round {self.source_round_id})"]
        direction = {"model": "higher is better",
                     "untargeted_attack": "lower is better",
                     "targeted_attack": "lower is better"}
        for track in TRACKS:
            rows = self.rankings.get(track, ())
            if not rows:
                continue
            out.append(f"\n{track} ({direction[track]})")
            width = max(len(sid) for sid, _ in rows)
            for rank, (sid, score) in enumerate(rows, 1):
                star = " *" if sid in self.top5(track) else ""
                out.append(f"  {rank:>3}  {sid:<{width}}  {score:.9g}{star}")
        return "\n".join(out) + "\n"


def _parse_leaderboard_rows(text: str) -> list[tuple[str, int, str, str]]:
    rows = []
    for line in text.splitlines():
        track, rank, sid, score = line.split("\t")
        rows.append((track, int(rank), sid, score))
    return rows


@dataclass(frozen=True)
class ReplayReport:
    """Outcome of rescoring a round from its record log alone."""

    records_path: str
    leaderboard_path: str
    recomputed: str
    stored: str

    @property
    def identical(self) -> bool:
        return self.recomputed == self.stored

    def diff(self) -> str:
        import difflib

        return "".join(difflib.unified_diff(
            self.stored.splitlines(keepends=True),
            self.recomputed.splitlines(keepends=True),
            fromfile=self.leaderboard_path, tofile="recomputed",
        ))


def replay_records(records_path) -> ReplayReport:
    """Rescore a round purely from its records.log and compare against the
    stored leaderboard, byte for byte.

    Each scoring phase in the log is a complete cross-product block, so
    the opponent pools are recovered structurally: in an `:m` block the
    attacks present are the pool the models are scored against, and vice
    versa for `:a`. Rows are re-rendered in stored order with recomputed
    scores, which keeps the comparison independent of tie-break metadata
    the log does not carry.
    """
    records_path = Path(records_path)
    leaderboard_path = records_path.parent / "leaderboard"
    phases: dict[str, RecordSet] = {}
    orders: dict[str, tuple[dict, dict, dict]] = {}
    for line in records_path.read_text().splitlines():
        tag, rec = parse_record_line(line)
        phase = tag.rsplit(":", 1)[1]
        if phase == "run":
            continue
        rset = phases.setdefault(phase, RecordSet())
        if rset.has(*rec.key):
            raise ValueError(f"duplicate {rec.key} in phase {phase!r}")
        rset.add(rec)
        models, attacks, samples = orders.setdefault(phase, ({}, {}, {}))
        models[rec.model_id] = None
        attacks[rec.attack_id] = None
        samples[rec.sample_id] = None
    stored = leaderboard_path.read_text()
    out = []
    for track, rank, sid, _ in _parse_leaderboard_rows(stored):
        if track == "model":
            rset = phases["m"]
            _, attacks, samples = orders["m"]
            score = model_score(rset, sid, attacks, samples)
        else:
            rset = phases["a"]
            models, _, samples = orders["a"]
            score = attack_score(rset, sid, models, samples)
        out.append(f"{track}\t{rank}\t{sid}\t{score:.9g}\n")
    return ReplayReport(str(records_path), str(leaderboard_path),
                        "".join(out), stored)


class Arena:
    """Owns the state directory and drives the whole protocol."""

    def __init__(self, config: ArenaConfig, state_dir, clock=None):
        self.config = config
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        (self.state_dir / "rounds").mkdir(exist_ok=True)
        (self.state_dir / "artifacts").mkdir(exist_ok=True)
        (self.state_dir / "models").mkdir(exist_ok=True)
        config_path = self.state_dir / "config"
        if not config_path.exists():
            save_config(config, config_path)
        self.clock = clock if clock is not None else LogicalClock()
        self.key = RngKey(config.seed)
        self.registry = Registry(
            self.clock, self.state_dir,
            rate_limit_hours=config.rate_limit_hours,
            model_checker=self.check_model_compliance,
        )
        self.registry.restore(self.state_dir)
        self._oracles: dict[str, DecisionOracle] = {}
        self._attacks: dict[str, Attack] = {}
        self._data: dict[str, Dataset] = {}
        self.workers_override: int | None = None
        self.top5: dict[str, tuple[str, ...]] = {t: () for t in TRACKS}
        self._load_top5()

    # ---------------- data ----------------

    def _seed_for(self, *labels) -> int:
        return self.key.child(*labels).stream_id

    @property
    def train_data(self) -> Dataset:
        if "train" not in self._data:
            c = self.config
            self._data["train"] = generate_synthetic_dataset(
                c.seed, c.classes, c.per_class(c.train_total), c.shape, "train"
            )
        return self._data["train"]

    @property
    def validation_data(self) -> Dataset:
        if "validation" not in self._data:
            c = self.config
            data = generate_synthetic_dataset(
                c.seed, c.classes, c.per_class(c.validation_total), c.shape,
                "validation",
            )
            self._data["validation"] = assign_targets(data, c.seed)
        return self._data["validation"]

    @property
    def final_data(self) -> Dataset:
        if "final" not in self._data:
            c = self.config
            data = generate_synthetic_dataset(
                c.seed, c.classes, c.per_class(c.final_total), c.shape,
                "test-final",
            )
            self._data["final"] = assign_targets(data, c.seed)
        return self._data["final"]

    def round_data(self, round_index: int) -> Dataset:
        """Fresh secret samples for each round: the test-round stream is
        deterministic per (class, index), so round r takes per-class
        indices [r*n, (r+1)*n) of a larger generation."""
        c = self.config
        per = c.per_class(c.round_total)
        big = generate_synthetic_dataset(
            c.seed, c.classes, per * round_index, c.shape, "test-round"
        )
        lo, hi = per * (round_index - 1), per * round_index
        keep = [
            s for s in big if lo <= int(s.sample_id.rsplit("-", 1)[1]) < hi
        ]
        data = Dataset(c.classes, "test-round", tuple(keep))
        return assign_targets(data, c.seed)

    # ---------------- compliance ----------------

    def _compliance_kit(self):
        c = self.config
        gen = self.key.child("compliance").generator()
        h, w, ch = c.shape

        def draw():
            return make_image(gen.uniform(0.0, 1.0, size=(h, w, ch)))

        probes = [draw() for _ in range(8)]
        probe = draw()
        contexts = [[draw() for _ in range(3)] for _ in range(3)]
        return probes, probe, contexts

    def check_model_compliance(self, submission: Submission) -> list[ComplianceReport]:
        oracle = self._resolve_oracle(submission)
        return self.run_compliance(oracle)

    def run_compliance(self, oracle: DecisionOracle) -> list[ComplianceReport]:
        probes, probe, contexts = self._compliance_kit()
        return [
            check_determinism(oracle, probes, repeats=3),
            check_statelessness(oracle, probe, contexts),
        ]

    # ---------------- bootstrap ----------------

    @property
    def bootstrapped(self) -> bool:
        return len(self.registry) > 0

    def bootstrap(self) -> None:
        """Train and register the baseline models and attacks; they seed
        the initial top-5 sets."""
        if self.bootstrapped:
            return
        c = self.config
        data = self.train_data
        trained = {
            "vanilla": train(data, c.train_epochs, c.learning_rate,
                             seed=self._seed_for("train", "vanilla")),
            "adv-trained": adversarial_train(
                data, c.train_epochs, c.learning_rate, epsilon=c.adv_epsilon,
                seed=self._seed_for("train", "adv-trained")),
            # the frozen-noise inner trains on the masked inputs it will
            # actually see, so the defense keeps its clean accuracy
            "frozen-noise": FrozenNoiseModel(
                train(apply_mask(data, frozen_noise_mask(
                          c.height * c.width * c.channels,
                          self._seed_for("noise", "frozen-noise"),
                          c.noise_sigma)),
                      c.train_epochs, c.learning_rate,
                      seed=self._seed_for("train", "frozen-noise")),
                noise_seed=self._seed_for("noise", "frozen-noise"),
                noise_sigma=c.noise_sigma),
            "substitute": train(data, c.train_epochs, c.learning_rate,
                                seed=self._seed_for("train", "substitute")),
        }
        for name, model in trained.items():
            save_model(model, self.state_dir / "models" / f"{name}.ckpt")
        for name in BASELINE_MODELS:
            self._must_register(Submission(
                submission_id=name, track="model", team_id=f"baseline-{name}",
                kind="builtin", locator=f"models/{name}.ckpt"))
        for name in BASELINE_UNTARGETED:
            self._must_register(Submission(
                submission_id=name, track="untargeted_attack",
                team_id=f"baseline-{name}", kind="builtin", locator=name))
        for name in BASELINE_TARGETED:
            self._must_register(Submission(
                submission_id=name, track="targeted_attack",
                team_id=f"baseline-{name}", kind="builtin", locator=name))
        self.top5 = {
            "model": tuple(BASELINE_MODELS),
            "untargeted_attack": tuple(BASELINE_UNTARGETED[:self.config.top_k]),
            "targeted_attack": tuple(BASELINE_TARGETED),
        }

    def _must_register(self, submission: Submission) -> None:
        result = self.registry.register(submission)
        if not result.accepted:
            raise ArenaError(
                f"baseline {submission.submission_id} rejected: {result.reason}"
            )

    # ---------------- resolution ----------------

    def _resolve_oracle(self, sub: Submission) -> DecisionOracle:
        if sub.submission_id in self._oracles:
            return self._oracles[sub.submission_id]
        if sub.kind == "builtin":
            oracle = load_model(self.state_dir / sub.locator)
        elif sub.kind == "http-endpoint":
            oracle = HttpOracle(sub.locator)
        else:
            raise ArenaError(
                f"model submissions cannot be {sub.kind} ({sub.submission_id})"
            )
        self._oracles[sub.submission_id] = oracle
        return oracle

    def substitute_model(self):
        path = self.state_dir / "models" / "substitute.ckpt"
        if not path.exists():
            raise ArenaError("arena not bootstrapped: substitute missing")
        return load_model(path)

    def pool_by_class(self) -> dict[int, list[Image]]:
        pools: dict[int, list[Image]] = {}
        for s in self.train_data:
            pools.setdefault(s.true_label, []).append(s.image)
        return pools

    def _resolve_attack(self, sub: Submission) -> Attack:
        if sub.submission_id in self._attacks:
            return self._attacks[sub.submission_id]
        if sub.kind == "builtin":
            attack = self._builtin_attack(sub)
        elif sub.kind == "external-process":
            attack = self._external_attack(sub)
        else:
            raise ArenaError(
                f"attack submissions cannot be {sub.kind} ({sub.submission_id})"
            )
        self._attacks[sub.submission_id] = attack
        return attack

    def _builtin_attack(self, sub: Submission) -> Attack:
        parts = sub.locator.split()
        name, params = parts[0], dict(p.split("=", 1) for p in parts[1:])
        c = self.config
        task = "untargeted" if sub.track == "untargeted_attack" else "targeted"
        run = build_builtin_attack(
            name,
            substitute=lambda: self.substitute_model(),
            pool_by_class=lambda: self.pool_by_class(),
            boundary_iterations=int(params.get("iterations",
                                               c.boundary_iterations)),
            pgd_steps=int(params.get("steps", c.pgd_steps)),
            trials=int(params.get("trials", 10)),
        )
        return Attack(sub.submission_id, task, run)

    def _external_attack(self, sub: Submission) -> Attack:
        task = ("untargeted" if sub.track == "untargeted_attack"
                else "targeted")
        argv = shlex.split(sub.locator)

        def run(ctx):
            return run_external_attack(argv, ctx)

        return Attack(sub.submission_id, task, run)

    # ---------------- evaluation plumbing ----------------

    def _settings(self) -> EvalSettings:
        c = self.config
        return EvalSettings(
            budget=c.query_budget, query_timeout=c.query_timeout,
            sample_deadline=c.sample_deadline, refine_steps=c.refine_steps,
            workers=self.workers_override or c.workers,
        )

    def _round_dir(self, rid: str) -> Path:
        path = self.state_dir / "rounds" / rid
        path.mkdir(parents=True, exist_ok=True)
        return path

    def _append_lines(self, path: Path, lines) -> None:
        if lines:
            with open(path, "a") as fh:
                fh.writelines(line + "\n" for line in lines)

    def _eval_missing(self, rid: str, master: RecordSet, model_subs,
                      attack_subs, samples) -> None:
        """Run every (model, attack, sample) triple not yet in `master`,
        logging fresh runs under the `<rid>:run` tag."""
        log_path = self._round_dir(rid) / "records.log"
        artifact_dir = self.state_dir / "artifacts" / rid
        settings = self._settings()
        base_key = self.key.child("run", rid)
        for m_sub in model_subs:
            oracle = self._resolve_oracle(m_sub)
            for a_sub in attack_subs:
                attack = self._resolve_attack(a_sub)
                missing = [
                    s for s in samples
                    if not master.has(m_sub.submission_id,
                                      attack.attack_id, s.sample_id)
                ]
                if not missing:
                    continue
                records = evaluate_pair(
                    oracle, m_sub.submission_id, attack, missing, base_key,
                    settings, artifact_dir=artifact_dir,
                    artifact_prefix=f"artifacts/{rid}/",
                )
                master.extend(records)
                self._append_lines(
                    log_path,
                    [format_record_line(f"{rid}:run", r) for r in records],
                )

    def _write_phase(self, rid: str, phase: str, master: RecordSet,
                     model_ids, attack_ids, sample_ids) -> None:
        """Append the complete cross-product table for one scoring phase."""
        log_path = self._round_dir(rid) / "records.log"
        lines = [
            format_record_line(f"{rid}:{phase}", master.get(m, a, s))
            for m in model_ids for a in attack_ids for s in sample_ids
        ]
        self._append_lines(log_path, lines)

    @staticmethod
    def _rank(scored: list[tuple[str, float, int]],
              descending: bool) -> list[tuple[str, float]]:
        """Sort by score with ties broken toward earlier registration."""
        ordered = sorted(
            scored,
            key=lambda t: ((-t[1] if descending else t[1]), t[2]),
        )
        return [(sid, score) for sid, score, _ in ordered]

    def _score_models(self, master, model_subs, attack_ids, sample_ids,
                      descending=True):
        return self._rank(
            [(m.submission_id,
              model_score(master, m.submission_id, attack_ids, sample_ids),
              m.seq) for m in model_subs],
            descending=descending,
        )

    def _score_attacks(self, master, attack_subs, model_ids, sample_ids):
        return self._rank(
            [(a.submission_id,
              attack_score(master, a.submission_id, model_ids, sample_ids),
              a.seq) for a in attack_subs],
            descending=False,
        )

    # ---------------- continuous evaluation ----------------

    def continuous_eval(self, submission: Submission) -> float:
        """Provisional score for one submission against the current top-5
        opponents on the validation subset."""
        if not self.bootstrapped:
            raise ArenaError("bootstrap the arena before evaluating")
        existing = (self.state_dir / "rounds").glob("cont-*")
        rid = f"cont-{len(list(existing)) + 1:04d}-{submission.submission_id}"
        samples = list(self.validation_data)[: self.config.continuous_samples]
        sample_ids = [s.sample_id for s in samples]
        master = RecordSet()
        if submission.track == "model":
            opp = [self.registry.get(a)
                   for a in (self.top5["untargeted_attack"]
                             + self.top5["targeted_attack"])]
            self._eval_missing(rid, master, [submission], opp, samples)
            attack_ids = [a.submission_id for a in opp]
            self._write_phase(rid, "m", master, [submission.submission_id],
                              attack_ids, sample_ids)
            score = model_score(master, submission.submission_id, attack_ids,
                                sample_ids)
        else:
            opp = [self.registry.get(m) for m in self.top5["model"]]
            self._eval_missing(rid, master, opp, [submission], samples)
            model_ids = [m.submission_id for m in opp]
            self._write_phase(rid, "a", master, model_ids,
                              [submission.submission_id], sample_ids)
            score = attack_score(master, submission.submission_id, model_ids,
                                 sample_ids)
        rankings = {submission.track: ((submission.submission_id, score),)}
        board = Leaderboard(rid, rankings, self.top5["model"],
                            self.top5["untargeted_attack"],
                            self.top5["targeted_attack"])
        (self._round_dir(rid) / "leaderboard").write_text(board.render_rows())
        return score

    # ---------------- rounds ----------------

    def _round_index(self) -> int:
        existing = (self.state_dir / "rounds").glob("round-*")
        return len(list(existing)) + 1

    def run_round(self) -> tuple[Leaderboard, list[RoundState]]:
        if not self.bootstrapped:
            raise ArenaError("bootstrap the arena before running a round")
        c = self.config
        index = self._round_index()
        rid = f"round-{index:04d}"
        entrants = {t: self.registry.active(t) for t in TRACKS}
        for track, subs in entrants.items():
            if not subs:
                raise ArenaError(f"no submissions in track {track}")
        samples = list(self.round_data(index))
        sample_ids = [s.sample_id for s in samples]
        schedule = stage_schedule(
            {t: len(subs) for t, subs in entrants.items()},
            c.stage_start, c.top_pool, len(samples),
        )
        degenerate = not schedule
        survivors = {t: list(subs) for t, subs in entrants.items()}
        master = RecordSet()
        history: list[RoundState] = []
        stage_sizes: list[int] = []

        for plan in schedule:
            stage_samples = samples[: plan.samples]
            stage_ids = sample_ids[: plan.samples]
            stage_sizes.append(plan.samples)
            attack_pool = (survivors["untargeted_attack"]
                           + survivors["targeted_attack"])
            self._eval_missing(rid, master, survivors["model"], attack_pool,
                               stage_samples)
            attack_ids = [a.submission_id for a in attack_pool]
            model_ids = [m.submission_id for m in survivors["model"]]
            ranked_models = self._score_models(
                master, survivors["model"], attack_ids, stage_ids)
            keep = plan.after["model"]
            kept_models = {sid for sid, _ in ranked_models[:keep]}
            survivors["model"] = [m for m in survivors["model"]
                                  if m.submission_id in kept_models]
            for track in ATTACK_TRACKS:
                ranked = self._score_attacks(
                    master, survivors[track], model_ids, stage_ids)
                keep = plan.after[track]
                kept = {sid for sid, _ in ranked[:keep]}
                survivors[track] = [a for a in survivors[track]
                                    if a.submission_id in kept]
            history.append(RoundState(
                round_id=rid,
                surviving_models=tuple(
                    m.submission_id for m in survivors["model"]),
                surviving_untargeted=tuple(
                    a.submission_id for a in survivors["untargeted_attack"]),
                surviving_targeted=tuple(
                    a.submission_id for a in survivors["targeted_attack"]),
                samples_per_stage=tuple(stage_sizes),
                stage_index=plan.index,
                frozen=True,
            ))

        # full evaluation of the surviving pool on the whole round set
        attack_pool = (survivors["untargeted_attack"]
                       + survivors["targeted_attack"])
        self._eval_missing(rid, master, survivors["model"], attack_pool,
                           samples)
        pool_attack_ids = [a.submission_id for a in attack_pool]
        pool_model_ids = [m.submission_id for m in survivors["model"]]
        self._write_phase(rid, "full", master, pool_model_ids,
                          pool_attack_ids, sample_ids)
        top5_models = tuple(sid for sid, _ in self._score_models(
            master, survivors["model"], pool_attack_ids, sample_ids
        )[: c.top_k])
        top5_unt = tuple(sid for sid, _ in self._score_attacks(
            master, survivors["untargeted_attack"], pool_model_ids, sample_ids
        )[: c.top_k])
        top5_tgt = tuple(sid for sid, _ in self._score_attacks(
            master, survivors["targeted_attack"], pool_model_ids, sample_ids
        )[: c.top_k])

        board = self._rescore_all(rid, master, top5_models, top5_unt, top5_tgt)
        self._write_report(rid, schedule, history, degenerate, board)
        self.top5 = {
            "model": top5_models,
            "untargeted_attack": top5_unt,
            "targeted_attack": top5_tgt,
        }
        (self.state_dir / "LATEST").write_text(rid + "\n")
        return board, history

    def _rescore_all(self, rid: str, master: RecordSet,
                     top5_models, top5_unt, top5_tgt) -> Leaderboard:
        """Re-score every active submission against the new top-5 sets on
        the validation subset; this is what the leaderboard shows."""
        samples = list(self.validation_data)[: self.config.continuous_samples]
        sample_ids = [s.sample_id for s in samples]
        model_subs = self.registry.active("model")
        attack_subs = (self.registry.active("untargeted_attack")
                       + self.registry.active("targeted_attack"))
        a5_subs = [self.registry.get(a) for a in top5_unt + top5_tgt]
        m5_subs = [self.registry.get(m) for m in top5_models]
        self._eval_missing(rid, master, model_subs, a5_subs, samples)
        self._eval_missing(rid, master, m5_subs, attack_subs, samples)
        a5_ids = [a.submission_id for a in a5_subs]
        m5_ids = [m.submission_id for m in m5_subs]
        self._write_phase(rid, "m", master,
                          [m.submission_id for m in model_subs],
                          a5_ids, sample_ids)
        self._write_phase(rid, "a", master, m5_ids,
                          [a.submission_id for a in attack_subs], sample_ids)
        rankings = {
            "model": tuple(self._score_models(master, model_subs, a5_ids,
                                              sample_ids)),
            "untargeted_attack": tuple(self._score_attacks(
                master, self.registry.active("untargeted_attack"), m5_ids,
                sample_ids)),
            "targeted_attack": tuple(self._score_attacks(
                master, self.registry.active("targeted_attack"), m5_ids,
                sample_ids)),
        }
        board = Leaderboard(rid, rankings, top5_models, top5_unt, top5_tgt)
        (self._round_dir(rid) / "leaderboard").write_text(board.render_rows())
        return board

    def _write_report(self, rid: str, schedule, history, degenerate,
                      board: Leaderboard, extra_lines=()) -> None:
        lines = [
            f"round\t{rid}",
            f"config-hash\t{self.config.config_hash}",
            f"degenerate\t{1 if degenerate else 0}",
        ]
        for plan in schedule:
            before = ",".join(f"{t}={plan.before[t]}" for t in TRACKS)
            after = ",".join(f"{t}={plan.after[t]}" for t in TRACKS)
            lines.append(
                f"stage\t{plan.index}\tsamples\t{plan.samples}\t{before}\t{after}"
            )
        for state in history:
            lines.append(
                "survivors\t{}\tmodels\t{}\tuntargeted\t{}\ttargeted\t{}".format(
                    state.stage_index,
                    ",".join(state.surviving_models),
                    ",".join(state.surviving_untargeted),
                    ",".join(state.surviving_targeted),
                )
            )
        lines.append("top5-models\t" + ",".join(board.top5_models))
        lines.append("top5-untargeted\t" + ",".join(board.top5_untargeted))
        lines.append("top5-targeted\t" + ",".join(board.top5_targeted))
        lines.extend(extra_lines)
        (self._round_dir(rid) / "report").write_text("\n".join(lines) + "\n")

    def _load_top5(self) -> None:
        latest = self.state_dir / "LATEST"
        if not latest.exists():
            return
        report = self._round_dir(latest.read_text().strip()) / "report"
        if not report.exists():
            return
        keys = {"top5-models": "model",
                "top5-untargeted": "untargeted_attack",
                "top5-targeted": "targeted_attack"}
        for line in report.read_text().splitlines():
            parts = line.split("\t")
            if parts[0] in keys:
                ids = tuple(p for p in parts[1].split(",") if p)
                self.top5[keys[parts[0]]] = ids

    # ---------------- final evaluation ----------------

    def run_final(self) -> Leaderboard:
        if not self.bootstrapped:
            raise ArenaError("bootstrap the arena before the final")
        c = self.config
        rid = "final"
        excluded = []
        eligible: dict[str, list[Submission]] = {}
        for track in TRACKS:
            eligible[track] = []
            for sub in self.registry.active(track):
                if sub.open_source:
                    eligible[track].append(sub)
                else:
                    excluded.append((sub.submission_id, "not open-source"))
            if not eligible[track]:
                raise ArenaError(f"no eligible submissions in track {track}")
        samples = list(self.final_data)
        sample_ids = [s.sample_id for s in samples]
        model_subs = eligible["model"]
        attack_subs = (eligible["untargeted_attack"]
                       + eligible["targeted_attack"])
        master = RecordSet()
        self._eval_missing(rid, master, model_subs, attack_subs, samples)
        model_ids = [m.submission_id for m in model_subs]
        attack_ids = [a.submission_id for a in attack_subs]
        self._write_phase(rid, "full", master, model_ids, attack_ids,
                          sample_ids)
        # pass 1: provisional scores against the full opposing cohorts
        top5_models = tuple(sid for sid, _ in self._score_models(
            master, model_subs, attack_ids, sample_ids)[: c.top_k])
        top5_unt = tuple(sid for sid, _ in self._score_attacks(
            master, eligible["untargeted_attack"], model_ids, sample_ids
        )[: c.top_k])
        top5_tgt = tuple(sid for sid, _ in self._score_attacks(
            master, eligible["targeted_attack"], model_ids, sample_ids
        )[: c.top_k])
        # pass 2: the published scores use the top-5 opponent sets
        a5_ids = list(top5_unt + top5_tgt)
        m5_ids = list(top5_models)
        self._write_phase(rid, "m", master, model_ids, a5_ids, sample_ids)
        self._write_phase(rid, "a", master, m5_ids, attack_ids, sample_ids)
        rankings = {
            "model": tuple(self._score_models(master, model_subs, a5_ids,
                                              sample_ids)),
            "untargeted_attack": tuple(self._score_attacks(
                master, eligible["untargeted_attack"], m5_ids, sample_ids)),
            "targeted_attack": tuple(self._score_attacks(
                master, eligible["targeted_attack"], m5_ids, sample_ids)),
        }
        board = Leaderboard(rid, rankings, top5_models, top5_unt, top5_tgt)
        (self._round_dir(rid) / "leaderboard").write_text(board.render_rows())
        extra = [f"excluded\t{sid}\t{reason}" for sid, reason in excluded]
        extra += [
            f"winner\t{track}\t{rankings[track][0][0]}"
            for track in TRACKS if rankings[track]
        ]
        self._write_report(rid, [], [], False, board, extra_lines=extra)
        self.top5 = {
            "model": top5_models,
            "untargeted_attack": top5_unt,
            "targeted_attack": top5_tgt,
        }
        (self.state_dir / "LATEST").write_text(rid + "\n")
        return board


# ---------------- builtin attack wiring ----------------


def build_builtin_attack(name: str, substitute, pool_by_class,
                         boundary_iterations: int, pgd_steps: int,
                         trials: int = 10):
    """Returns a run(ctx) closure for a named builtin attack.

    `substitute` and `pool_by_class` are zero-argument callables so the
    expensive resources are only materialized for attacks that need them.
    """

    def target_pool(ctx):
        return pool_by_class().get(ctx.sample.target_label, [])

    if name == "gaussian":
        return additive_gaussian_attack
    if name == "salt-pepper":
        return lambda ctx: salt_and_pepper_attack(ctx, trials=trials)
    if name == "pointwise":
        return pointwise_attack
    if name == "boundary":
        return lambda ctx: boundary_attack(ctx, boundary_iterations)
    if name == "transfer-step":
        return lambda ctx: transfer_attack_single_step(ctx, substitute())
    if name == "transfer-pgd":
        return lambda ctx: transfer_attack_iterative(ctx, substitute(),
                                                     steps=pgd_steps)
    if name == "interpolation":
        return lambda ctx: interpolation_attack(ctx, target_pool(ctx))
    if name == "pointwise-t":
        def run(ctx):
            seeded = interpolation_attack(ctx, target_pool(ctx))
            if seeded.candidate is None:
                return seeded
            return pointwise_attack(ctx, starting_point=seeded.candidate)
        return run
    if name == "boundary-t":
        return lambda ctx: boundary_attack(ctx, boundary_iterations,
                                           pool=target_pool(ctx))
    raise ArenaError(f"unknown builtin attack {name!r}")


def run_external_attack(argv: list[str], ctx) -> AttackResult:
    """External-process contract: the attack is handed a metered oracle
    URL, the sample file, task, target, and budget, and must write its
    candidate tensor to the output path. Anything it prints is its own
    business; a missing output file means no candidate."""
    from .attacks import DeadlineExceeded

    with tempfile.TemporaryDirectory(prefix="advarena-ext-") as tmp:
        sample_path = Path(tmp) / "sample.avt1"
        out_path = Path(tmp) / "candidate.avt1"
        save_image(ctx.sample.image, sample_path)
        target = (ctx.sample.target_label
                  if ctx.task == "targeted" else -1)
        with serve_meter(ctx.meter) as server:
            cmd = argv + [
                "--oracle-url", server.url,
                "--sample", str(sample_path),
                "--task", ctx.task,
                "--target", str(target),
                "--budget", str(ctx.meter.budget),
                "--out", str(out_path),
            ]
            timeout = None
            if ctx.deadline_at is not None:
                timeout = max(ctx.deadline_at - time.monotonic(), 0.1)
            try:
                proc = subprocess.run(
                    cmd, capture_output=True, timeout=timeout)
            except subprocess.TimeoutExpired:
                raise DeadlineExceeded
        if proc.returncode != 0:
            raise RuntimeError(
                f"external attack exited {proc.returncode}: "
                f"{proc.stderr[-500:]!r}"
            )
        if not out_path.exists():
            return AttackResult(None, ctx.meter.used)
        return AttackResult(load_image(out_path), ctx.meter.used)
