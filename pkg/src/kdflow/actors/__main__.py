"""Actor process entry point: ``python -m kdflow.actors --role R --run-id X --config PATH``."""

from __future__ import annotations

import argparse
import logging
import sys

from .base import ShutdownRequested, log
from .protocol import EXIT_FAILURE, EXIT_OK, EXIT_STARTUP
from .spawn import build_actor, run_actor


def main(argv=None) -> int:
    from ..workflows.config import load_config

    p = argparse.ArgumentParser(prog="python -m kdflow.actors")
    p.add_argument("--role", required=True, choices=["teacher", "student", "rollout"])
    p.add_argument("--run-id", required=True)
    p.add_argument("--config", required=True)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format=f"%(levelname)s {args.role}: %(message)s")
    try:
        actor = build_actor(args.role, load_config(args.config), args.run_id, shared=True)
    except Exception as e:
        log.error("startup failed: %s", e)
        return EXIT_STARTUP
    try:
        run_actor(actor)
    except ShutdownRequested as e:
        log.error("%s", e)
        return EXIT_FAILURE
    except Exception as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
