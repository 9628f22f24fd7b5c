"""Operator command line: data generation, model training and serving,
compliance checks, standalone attack runs, pairwise evaluation, rounds,
the final, leaderboard rendering, and record-log replay.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .attacks import AttackContext, DeadlineExceeded, OutOfBudget
from .config import ArenaConfig, load_config
from .evaluation import EvalSettings, evaluate_pair
from .httpserve import HttpOracle, metered_http_predict, serve_model
from .images import Sample
from .models import (FrozenNoiseModel, adversarial_train, apply_mask,
                     frozen_noise_mask, load_model, save_model, train)
from .oracle import (DEFAULT_QUERY_BUDGET, Verdict, check_determinism,
                     check_statelessness)
from .rng import RngKey
from .scoring import (RecordSet, attack_score, format_record_line,
                      l2_distance, model_score)
from .synthdata import generate_synthetic_dataset
from .tensorio import load_dataset, load_image, save_dataset, save_image
from .tournament import (Arena, ArenaError, Leaderboard, assign_targets,
                         build_builtin_attack, replay_records)

PROG = "advarena"

UNTARGETED_ATTACKS = ("gaussian", "salt-pepper", "pointwise", "boundary",
                      "transfer-step", "transfer-pgd")
TARGETED_ATTACKS = ("interpolation", "pointwise-t", "boundary-t")


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ValueError(f"shape must look like 8x8x1, got {text!r}")
    h, w, c = (int(p) for p in parts)
    return (h, w, c)


def _state_dir(args) -> Path:
    if getattr(args, "state_dir", None):
        return Path(args.state_dir)
    env = os.environ.get("ARENA_STATE_DIR")
    if env:
        return Path(env)
    return Path("arena-state")


def _open_arena(args) -> Arena:
    state_dir = _state_dir(args)
    stored = state_dir / "config"
    if stored.exists():
        config = load_config(stored)
        if getattr(args, "config", None):
            wanted = load_config(args.config)
            if wanted != config:
                raise ArenaError(
                    f"{state_dir} is already configured differently; "
                    f"use a fresh state directory"
                )
    elif getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = ArenaConfig()
    if getattr(args, "seed", None) is not None:
        if stored.exists() and config.seed != args.seed:
            raise ArenaError(f"{state_dir} was seeded with {config.seed}")
        config = replace(config, seed=args.seed)
    arena = Arena(config, state_dir)
    if getattr(args, "workers", None):
        arena.workers_override = args.workers
    return arena


# ---------------- subcommands ----------------


def cmd_gen_data(args) -> int:
    shape = _parse_shape(args.shape)
    data = generate_synthetic_dataset(args.seed, args.classes, args.per_class,
                                      shape, args.split)
    if args.targets:
        data = assign_targets(data, args.seed)
    save_dataset(data, args.out)
    print(f"wrote {len(data)} samples ({args.classes} classes, "
          f"{args.shape}) to {args.out}")
    return 0


def cmd_train_model(args) -> int:
    data = load_dataset(args.data)
    if args.kind == "vanilla":
        model = train(data, args.epochs, args.learning_rate, seed=args.seed)
    elif args.kind == "adv-trained":
        model = adversarial_train(data, args.epochs, args.learning_rate,
                                  epsilon=args.epsilon, seed=args.seed)
    else:
        # the inner model trains on the masked inputs it will see at
        # prediction time, so the defense keeps its clean accuracy
        h, w, c = data.shape
        mask = frozen_noise_mask(h * w * c, args.noise_seed, args.noise_sigma)
        inner = train(apply_mask(data, mask), args.epochs,
                      args.learning_rate, seed=args.seed)
        model = FrozenNoiseModel(inner, noise_seed=args.noise_seed,
                                 noise_sigma=args.noise_sigma)
    save_model(model, args.out)
    from .models import accuracy

    print(f"{args.kind} model: train accuracy "
          f"{accuracy(model, data):.3f} -> {args.out}")
    return 0


def cmd_serve_model(args) -> int:
    model = load_model(args.model)
    server = serve_model(model, args.host, args.port)
    print(server.url, flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def cmd_check_compliance(args) -> int:
    oracle = HttpOracle(args.url) if args.url else load_model(args.model)
    gen = RngKey(args.seed).child("compliance").generator()
    h, w, c = oracle.shape
    from .images import make_image

    def draw():
        return make_image(gen.uniform(0.0, 1.0, size=(h, w, c)))

    reports = [
        check_determinism(oracle, [draw() for _ in range(8)], repeats=3),
        check_statelessness(oracle, draw(),
                            [[draw() for _ in range(3)] for _ in range(3)]),
    ]
    ok = True
    for report in reports:
        print(f"{report.check}: {'pass' if report.passed else 'fail'}")
        for failure in report.failures:
            print(f"  {failure}")
        ok = ok and report.passed
    return 0 if ok else 1


class _RemoteMeter:
    """Client-side mirror of a server-enforced budget: refuses locally at
    the declared budget so the server never even sees the query after the
    last allowed one. Accounting matches the server: only forwarded
    predictions count."""

    def __init__(self, url: str, shape, num_classes: int, budget: int,
                 timeout: float = 5.0):
        self.shape = tuple(shape)
        self.num_classes = num_classes
        self.budget = budget
        self.used = 0
        self._url = url
        self._timeout = timeout

    def predict(self, image) -> Verdict:
        if image.shape != self.shape:
            return Verdict(error="invalid_input")
        if self.used >= self.budget:
            return Verdict(error="budget_exhausted")
        verdict = metered_http_predict(self._url, image, self._timeout)
        if verdict.error not in ("invalid_input", "budget_exhausted"):
            self.used += 1
        return verdict


def _make_attack_runner(name: str, args):
    if name in UNTARGETED_ATTACKS:
        task = "untargeted"
    elif name in TARGETED_ATTACKS:
        task = "targeted"
    else:
        raise ArenaError(f"unknown attack {name!r}; choose from "
                         f"{UNTARGETED_ATTACKS + TARGETED_ATTACKS}")

    def substitute():
        if not getattr(args, "substitute", None):
            raise ArenaError(f"attack {name!r} needs --substitute CKPT")
        return load_model(args.substitute)

    def pool_by_class():
        if not getattr(args, "pool_data", None):
            raise ArenaError(f"attack {name!r} needs --pool-data DIR")
        pools = {}
        for s in load_dataset(args.pool_data):
            pools.setdefault(s.true_label, []).append(s.image)
        return pools

    run = build_builtin_attack(
        name, substitute=substitute, pool_by_class=pool_by_class,
        boundary_iterations=args.boundary_iterations, pgd_steps=args.pgd_steps,
    )
    return task, run


def cmd_run_attack(args) -> int:
    """Standalone attack against a served oracle URL; this is also the
    reference implementation of the external-process submission contract."""
    probe = HttpOracle(args.oracle_url)
    image = load_image(args.sample)
    meter = _RemoteMeter(args.oracle_url, probe.shape, probe.num_classes,
                         args.budget)
    task, run = _make_attack_runner(args.attack, args)
    if task != args.task:
        raise ArenaError(f"{args.attack} is a {task} attack, asked to "
                         f"run {args.task}")

    # Decision-based ground rules: the true label is not handed over, so
    # spend one query to read the oracle's clean-sample label.
    clean = meter.predict(image)
    if task == "targeted":
        if args.target < 0:
            raise ArenaError("targeted run needs --target >= 0")
        if clean.label == args.target:
            save_image(image, args.out)
            print(f"clean sample already classed {args.target}; "
                  f"queries_used {meter.used}")
            return 0
        reference = clean.label if clean.label is not None else \
            (args.target + 1) % probe.num_classes
        sample = Sample("remote", image, reference, args.target)
    else:
        if clean.label is None:
            # oracle failed on its own clean sample: that counts as
            # adversarial behaviour, so the clean image itself qualifies
            save_image(image, args.out)
            print(f"oracle errored on clean sample ({clean.error}); "
                  f"queries_used {meter.used}")
            return 0
        sample = Sample("remote", image, clean.label)

    ctx = AttackContext(meter, sample, task, RngKey(args.seed).child("run"),
                        refine_steps=args.refine_steps)
    try:
        result = run(ctx)
    except (OutOfBudget, DeadlineExceeded):
        result = None
    if result is not None and result.candidate is not None:
        save_image(result.candidate, args.out)
        dist = l2_distance(sample.image, result.candidate)
        print(f"adversarial written to {args.out}; distance {dist:.9g}; "
              f"queries_used {meter.used}")
    else:
        print(f"no adversarial found; queries_used {meter.used}")
    return 0


def cmd_eval_pair(args) -> int:
    model = HttpOracle(args.model_url) if args.model_url else \
        load_model(args.model)
    model_id = args.model_id or (
        args.model_url if args.model_url else Path(args.model).stem)
    dataset = load_dataset(args.samples)
    task, run = _make_attack_runner(args.attack, args)
    if task == "targeted":
        dataset = assign_targets(dataset, args.seed)
    from .attacks import Attack

    attack = Attack(args.attack, task, run)
    settings = EvalSettings(
        budget=args.budget, query_timeout=args.query_timeout,
        sample_deadline=args.sample_deadline,
        refine_steps=args.refine_steps, workers=args.workers,
    )
    base_key = RngKey(args.seed).child("run", "eval")
    artifact_dir = Path(args.artifacts) if args.artifacts else None
    records = evaluate_pair(model, model_id, attack, list(dataset), base_key,
                            settings, artifact_dir=artifact_dir)
    lines = [format_record_line("eval:run", r) for r in records]
    Path(args.out).write_text("".join(line + "\n" for line in lines))
    rset = RecordSet(records)
    sample_ids = [s.sample_id for s in dataset]
    a_score = attack_score(rset, args.attack, [model_id], sample_ids)
    m_score = model_score(rset, model_id, [args.attack], sample_ids)
    print(f"wrote {len(records)} records to {args.out}")
    print(f"attack-score {a_score:.9g} (lower is better)")
    print(f"model-score {m_score:.9g} (higher is better)")
    return 0


def cmd_round(args) -> int:
    arena = _open_arena(args)
    arena.bootstrap()
    board, history = arena.run_round()
    print(board.render_text())
    if history:
        stages = ", ".join(
            f"stage {s.stage_index}: {s.samples_per_stage[-1]} samples"
            for s in history
        )
        print(f"halving stages run: {stages}")
    else:
        print("registry fits the finalist pool; single full evaluation")
    return 0


def cmd_final(args) -> int:
    arena = _open_arena(args)
    arena.bootstrap()
    board = arena.run_final()
    print(board.render_text())
    for track in ("model", "untargeted_attack", "targeted_attack"):
        rows = board.rankings.get(track, ())
        if rows:
            print(f"winner {track}: {rows[0][0]}")
    return 0


def cmd_leaderboard(args) -> int:
    state_dir = _state_dir(args)
    rid = args.round
    if rid is None:
        latest = state_dir / "LATEST"
        if not latest.exists():
            raise ArenaError(f"no rounds recorded under {state_dir}")
        rid = latest.read_text().strip()
    board_path = state_dir / "rounds" / rid / "leaderboard"
    if not board_path.exists():
        raise ArenaError(f"no leaderboard for round {rid!r}")
    text = board_path.read_text()
    if args.tsv:
        sys.stdout.write(text)
        return 0
    rankings = {}
    for line in text.splitlines():
        track, _rank, sid, score = line.split("\t")
        rankings.setdefault(track, []).append((sid, float(score)))
    top5 = {t: tuple(sid for sid, _ in rows[:5])
            for t, rows in rankings.items()}
    board = Leaderboard(
        rid, {t: tuple(rows) for t, rows in rankings.items()},
        top5.get("model", ()), top5.get("untargeted_attack", ()),
        top5.get("targeted_attack", ()),
    )
    print(board.render_text())
    print(f"tab-separated file: {board_path}")
    return 0


def cmd_replay(args) -> int:
    report = replay_records(args.records)
    if report.identical:
        rows = report.stored.count("\n")
        print(f"replay: {report.leaderboard_path} reproduced "
              f"byte-identically ({rows} rows)")
        return 0
    sys.stderr.write(report.diff())
    print("replay: recomputed scores differ", file=sys.stderr)
    return 1


# ---------------- parser ----------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="adversarial-robustness evaluation arena",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--shape", default="8x8x1")
    p.add_argument("--split", default="train",
                   choices=("train", "validation", "test-round", "test-final"))
    p.add_argument("--targets", action="store_true",
                   help="also assign per-sample target labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-model", help="train a reference model")
    p.add_argument("--kind", required=True,
                   choices=("vanilla", "frozen-noise", "adv-trained"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=0.5,
                   help="adversarial-training step size")
    p.add_argument("--noise-seed", type=int, default=1)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.set_defaults(func=cmd_train_model)

    p = sub.add_parser("serve-model", help="serve a checkpoint over HTTP")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(func=cmd_serve_model)

    p = sub.add_parser("check-compliance",
                       help="determinism and statelessness checks")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--url")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_check_compliance)

    p = sub.add_parser("run-attack",
                       help="run one attack against a served oracle")
    p.add_argument("--attack", required=True)
    p.add_argument("--oracle-url", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--task", default="untargeted",
                   choices=("untargeted", "targeted"))
    p.add_argument("--target", type=int, default=-1)
    p.add_argument("--budget", type=int, default=DEFAULT_QUERY_BUDGET)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--refine-steps", type=int, default=12)
    p.add_argument("--boundary-iterations", type=int, default=200)
    p.add_argument("--pgd-steps", type=int, default=10)
    p.add_argument("--substitute")
    p.add_argument("--pool-data")
    p.set_defaults(func=cmd_run_attack)

    p = sub.add_parser("eval-pair",
                       help="evaluate one model against one attack")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--model-url")
    p.add_argument("--model-id")
    p.add_argument("--attack", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", default="records.log")
    p.add_argument("--budget", type=int, default=DEFAULT_QUERY_BUDGET)
    p.add_argument("--query-timeout", type=float, default=0.1)
    p.add_argument("--sample-deadline", type=float, default=90.0)
    p.add_argument("--refine-steps", type=int, default=12)
    p.add_argument("--boundary-iterations", type=int, default=200)
    p.add_argument("--pgd-steps", type=int, default=10)
    p.add_argument("--substitute")
    p.add_argument("--pool-data")
    p.add_argument("--artifacts")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval_pair)

    for name, func, help_text in (
        ("round", cmd_round, "run one successive-halving round"),
        ("final", cmd_final, "run the final all-pairs evaluation"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--state-dir")
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("leaderboard", help="render stored standings")
    p.add_argument("--state-dir")
    p.add_argument("--round", help="round id (defaults to the latest)")
    p.add_argument("--tsv", action="store_true",
                   help="emit the raw tab-separated rows")
    p.set_defaults(func=cmd_leaderboard)

    p = sub.add_parser("replay",
                       help="rescore a records.log and diff the leaderboard")
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.func(args)
    except ArenaError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
