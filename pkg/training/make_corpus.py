"""Generate a synthetic multi-user corpus of paired sessions for pretraining and calibration."""

from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from earcardio.config import PipelineConfig, provenance
from earcardio.synth import PerturbDimension, SynthConfig, generate_session, perturb, write_truth


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Generate synthetic users and sessions.")
    parser.add_argument("--users", type=int, default=5, help="Number of synthetic users.")
    parser.add_argument("--sessions", type=int, default=1, help="Sessions (remounts) per user.")
    parser.add_argument("--minutes", type=float, default=2.0, help="Duration of each session in minutes.")
    parser.add_argument("--heart-rate", type=float, default=75.0, help="Mean heart rate in bpm.")
    parser.add_argument("--noise-db", type=float, default=-15.0, help="Ear noise level relative to the clean signal.")
    parser.add_argument("--seed", type=int, default=42, help="Master seed.")
    parser.add_argument("--output", type=str, default="data/corpus", help="Output directory.")
    return parser.parse_args(argv)


def user_configs(base: SynthConfig, users: int) -> List[SynthConfig]:
    """User 0 is `base`; every further user is a User perturbation of it."""
    return [base] + [perturb(base, PerturbDimension.USER, seed=u) for u in range(1, users)]


def build_corpus(base: SynthConfig, users: int, sessions: int, output: str | Path) -> List[Path]:
    written = []
    for u, user_cfg in enumerate(user_configs(base, users)):
        for s in range(sessions):
            cfg = user_cfg if s == 0 else perturb(user_cfg, PerturbDimension.SESSION, seed=s)
            session, truth = generate_session(cfg)
            out = Path(output) / f"user{u:02d}" / f"session{s:02d}"
            stamp = dict(provenance(PipelineConfig(seed=cfg.seed, synth=cfg)), user=u, session=s)
            session.save(out, stamp)
            write_truth(out / "truth.json", truth, stamp)
            written.append(out)
    return written


def main(argv: Optional[Sequence[str]] = None) -> None:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    base = replace(
        SynthConfig(), seed=args.seed, duration_s=args.minutes * 60.0,
        heart_rate_bpm=args.heart_rate, noise_db=args.noise_db,
    )
    written = build_corpus(base, args.users, args.sessions, args.output)
    print(f"Wrote {len(written)} sessions to {args.output}")


if __name__ == "__main__":
    main()
