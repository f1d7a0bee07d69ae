"""Teacher, student and rollout actors plus the controller that drives them."""

from .base import Actor, ShutdownRequested
from .controller import ActorDied, Controller, Responses, new_run_id
from .protocol import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_STARTUP,
    FIRST_REQUEST_SEQ,
    LINKS,
    ActorError,
    create_links,
    send_weights,
    weights_crc,
)
from .rollout import RolloutActor, WeightReceiver, generate_batch, sample_seed
from .spawn import ActorHandle, build_actor, run_actor, spawn
from .student import StudentActor
from .teacher import TeacherActor

__all__ = [
    "EXIT_FAILURE",
    "EXIT_OK",
    "EXIT_STARTUP",
    "FIRST_REQUEST_SEQ",
    "LINKS",
    "Actor",
    "ActorDied",
    "ActorError",
    "ActorHandle",
    "Controller",
    "Responses",
    "RolloutActor",
    "ShutdownRequested",
    "StudentActor",
    "TeacherActor",
    "WeightReceiver",
    "build_actor",
    "create_links",
    "generate_batch",
    "new_run_id",
    "run_actor",
    "sample_seed",
    "send_weights",
    "spawn",
    "weights_crc",
]
