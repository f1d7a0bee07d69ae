"""One launch interface for actor threads (test mode) and processes."""

from __future__ import annotations

import subprocess
import sys
import threading

from ..transport import Opcode
from .base import ShutdownRequested, log
from .protocol import control


def build_actor(role: str, config, run_id: str, shared: bool):
    from .rollout import RolloutActor
    from .student import StudentActor
    from .teacher import TeacherActor

    cls = {"teacher": TeacherActor, "student": StudentActor, "rollout": RolloutActor}.get(role)
    if cls is None:
        raise ValueError(f"unknown actor role {role!r}")
    return cls(config, run_id, shared)


def run_actor(actor) -> None:
    """Run an actor's loop; on failure report an ERROR frame, then re-raise."""
    try:
        actor.run()
    except ShutdownRequested:
        raise
    except BaseException as e:
        link = getattr(actor, "to_controller", None)
        if link is not None:
            try:
                control(link, Opcode.ERROR, {"role": actor.role, "message": f"{type(e).__name__}: {e}"}, timeout=1.0)
            except Exception:  # the channel itself may be the problem
                pass
        raise
    finally:
        actor.close()


class ActorHandle:
    def __init__(self, role: str):
        self.role = role

    def alive(self) -> bool:
        raise NotImplementedError

    def join(self, timeout: float) -> bool:
        raise NotImplementedError

    def kill(self) -> None:
        pass

    @property
    def failure(self) -> str | None:
        raise NotImplementedError


class ThreadHandle(ActorHandle):
    def __init__(self, role: str, config, run_id: str):
        super().__init__(role)
        self.error: BaseException | None = None
        self.actor = None
        self._thread = threading.Thread(target=self._main, args=(config, run_id), name=f"kdflow-{role}", daemon=True)
        self._thread.start()

    def _main(self, config, run_id):
        try:
            self.actor = build_actor(self.role, config, run_id, shared=False)
            run_actor(self.actor)
        except ShutdownRequested:
            pass
        except BaseException as e:
            self.error = e
            log.error("%s actor failed: %s", self.role, e)

    def alive(self) -> bool:
        return self._thread.is_alive()

    def join(self, timeout: float) -> bool:
        self._thread.join(timeout)
        return not self._thread.is_alive()

    def kill(self) -> None:
        if self.actor is not None:
            self.actor.stop.set()
        self._thread.join(5.0)

    @property
    def failure(self) -> str | None:
        return None if self.error is None else f"{type(self.error).__name__}: {self.error}"


class ProcessHandle(ActorHandle):
    def __init__(self, role: str, config_path: str, run_id: str):
        super().__init__(role)
        cmd = [sys.executable, "-m", "kdflow.actors", "--role", role, "--run-id", run_id, "--config", str(config_path)]
        self._proc = subprocess.Popen(cmd)

    def alive(self) -> bool:
        return self._proc.poll() is None

    def join(self, timeout: float) -> bool:
        try:
            self._proc.wait(timeout)
            return True
        except subprocess.TimeoutExpired:
            return False

    def kill(self) -> None:
        if self.alive():
            self._proc.kill()
            self._proc.wait()

    @property
    def exitcode(self) -> int | None:
        return self._proc.poll()

    @property
    def failure(self) -> str | None:
        code = self._proc.poll()
        return None if code in (None, 0) else f"exit code {code}"


def spawn(role: str, config, run_id: str, config_path: str | None = None) -> ActorHandle:
    if config.actor_mode == "process":
        if config_path is None:
            raise ValueError("process mode needs the config written to disk")
        return ProcessHandle(role, config_path, run_id)
    return ThreadHandle(role, config, run_id)
