"""Rebuild the committed replay fixtures.

The fixtures are the record logs and leaderboards of one staged round,
one continuous evaluation, and one final, produced by a fully seeded
tiny arena. Regeneration is deterministic: running this script must
reproduce the committed files byte for byte (test_fixtures.py checks
exactly that).

Usage: python3 tests/fixtures/regenerate.py
"""

import shutil
import tempfile
from pathlib import Path

from advarena.config import ArenaConfig
from advarena.tournament import Arena, Submission

FIXTURE_CONFIG = ArenaConfig(
    seed=11, classes=4, height=4, width=4, channels=1,
    train_total=40, validation_total=8, round_total=8, final_total=8,
    query_budget=120, train_epochs=15, boundary_iterations=40, pgd_steps=5,
    stage_start=2, top_pool=4, top_k=2, continuous_samples=8,
)

FIXTURE_ROUNDS = ("round-0001", "cont-0001-copycat", "final")


def build(dest: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        arena = Arena(FIXTURE_CONFIG, Path(tmp))
        arena.bootstrap()
        arena.run_round()
        arena.registry.register(Submission(
            submission_id="copycat", track="model", team_id="team-copy",
            kind="builtin", locator="models/vanilla.ckpt"))
        arena.continuous_eval(arena.registry.get("copycat"))
        arena.run_final()
        for rid in FIXTURE_ROUNDS:
            out = dest / rid
            out.mkdir(parents=True, exist_ok=True)
            for name in ("records.log", "leaderboard"):
                shutil.copyfile(Path(tmp) / "rounds" / rid / name,
                                out / name)


if __name__ == "__main__":
    build(Path(__file__).resolve().parent / "replay")
    print("fixtures rebuilt")
