"""Line-delimited JSON control protocol for driving episodes remotely.

One request object per line, one response object per line. Requests:

    {"op": "reset", "seed": 7}                    optional config/config_path
    {"op": "step", "actions": {"0": [p, q, a, b], ...}}
    {"op": "close"}

Every response carries {"protocol": 1, "ok": bool}; successful reset and
step responses add t, done, observations (agent id -> list of floats),
and step adds per-agent rewards plus a small market info block. Errors
are reported in-band ({"ok": false, "error": ...}); the session keeps
serving until close or EOF.
"""

from __future__ import annotations

import json
import socket
from typing import Any, IO, Mapping

import numpy as np

from .config import ConfigError, ScenarioConfig, from_dict, load_config
from .environment import EnvState, reset, step

PROTOCOL_VERSION = 1


def _obs_payload(observations: Mapping[int, np.ndarray]) -> dict[str, list[float]]:
    return {str(agent): [float(x) for x in vec] for agent, vec in observations.items()}


class ServeSession:
    """Protocol state machine: holds the scenario and the live episode."""

    def __init__(self, config: ScenarioConfig):
        self._config = config
        self._state: EnvState | None = None

    def handle(self, request: Any) -> tuple[dict[str, Any], bool]:
        """Process one decoded request; returns (response, keep_serving)."""
        if not isinstance(request, dict):
            return self._error("request must be a JSON object"), True
        op = request.get("op")
        if op == "close":
            return {"protocol": PROTOCOL_VERSION, "ok": True}, False
        if op == "reset":
            return self._reset(request), True
        if op == "step":
            return self._step(request), True
        return self._error(f"unknown op {op!r}"), True

    def handle_line(self, line: str) -> tuple[str, bool]:
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return json.dumps(self._error(f"invalid JSON: {exc}")), True
        response, keep = self.handle(request)
        return json.dumps(response), keep

    def _error(self, message: str) -> dict[str, Any]:
        return {"protocol": PROTOCOL_VERSION, "ok": False, "error": message}

    def _reset(self, request: Mapping[str, Any]) -> dict[str, Any]:
        config = self._config
        try:
            if "config" in request and request["config"] is not None:
                config = from_dict(request["config"])
            elif "config_path" in request and request["config_path"] is not None:
                config = load_config(str(request["config_path"]))
            seed = request.get("seed")
            if seed is not None and not isinstance(seed, int):
                return self._error("seed must be an integer")
            state, observations = reset(config, seed)
        except (ConfigError, ValueError) as exc:
            return self._error(str(exc))
        self._config = config
        self._state = state
        return {
            "protocol": PROTOCOL_VERSION,
            "ok": True,
            "t": state.t,
            "done": state.done,
            "n_agents": config.n_agents,
            "observations": _obs_payload(observations),
        }

    def _step(self, request: Mapping[str, Any]) -> dict[str, Any]:
        if self._state is None:
            return self._error("no episode: send reset first")
        raw_actions = request.get("actions", {})
        if not isinstance(raw_actions, dict):
            return self._error("actions must be an object mapping agent id to a 4-vector")
        actions: dict[int, list[float]] = {}
        try:
            for key, value in raw_actions.items():
                actions[int(key)] = [float(x) for x in value]
        except (TypeError, ValueError):
            return self._error("actions must map agent ids to numeric 4-vectors")
        try:
            state, observations, rewards, done, info = step(self._state, actions)
        except (RuntimeError, ValueError) as exc:
            return self._error(str(exc))
        self._state = state
        stats = info["stats"]
        return {
            "protocol": PROTOCOL_VERSION,
            "ok": True,
            "t": state.t,
            "done": done,
            "observations": _obs_payload(observations),
            "rewards": {str(agent): float(r) for agent, r in rewards.items()},
            "info": {
                "clearing_price": stats.clearing_price,
                "matched_price": stats.matched_price,
                "p2p_volume": stats.p2p_volume,
                "dso_volume": stats.dso_volume,
                "total_volume": stats.total_volume,
            },
        }


def serve_stream(config: ScenarioConfig, lines: IO[str], out: IO[str]) -> None:
    """Serve a line stream until close, EOF, or a blank line."""
    session = ServeSession(config)
    for line in lines:
        line = line.strip()
        if not line:
            break
        response, keep = session.handle_line(line)
        out.write(response + "\n")
        out.flush()
        if not keep:
            break


def serve_stdio(config: ScenarioConfig) -> None:
    import sys

    serve_stream(config, sys.stdin, sys.stdout)


def serve_socket(config: ScenarioConfig, host: str = "127.0.0.1", port: int = 0) -> None:
    """Serve a single client connection on a localhost TCP socket.

    The chosen port is announced on stdout as 'listening on HOST:PORT'
    before the first accept, so callers can connect to an ephemeral port.
    """
    import sys

    with socket.create_server((host, port)) as server:
        actual = server.getsockname()[1]
        print(f"listening on {host}:{actual}", flush=True)
        conn, _ = server.accept()
        with conn:
            reader = conn.makefile("r", encoding="utf-8", newline="\n")
            writer = conn.makefile("w", encoding="utf-8", newline="\n")
            serve_stream(config, reader, writer)
    sys.stderr.write("session closed\n")
