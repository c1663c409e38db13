"""Simulated neighbor-to-neighbor channels for the consensus rounds."""

from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import structlog

logger = structlog.get_logger(__name__)


class ChannelError(RuntimeError):
    """Raised on a send along a non-edge or a receive from an empty or mismatched channel."""
    pass


@dataclass(frozen=True, eq=False)
class Message:
    iteration: int
    src: int
    dst: int
    block: str
    payload: np.ndarray


class MessageBus:
    """
    Reliable FIFO channels, one per ordered pair of neighboring agents.

    Every delivered message is appended to ``log`` as
    (iteration, src, dst, block).
    """

    def __init__(self, neighborhoods: Iterable[Iterable[int]]):
        self._channels: dict[tuple[int, int], deque[Message]] = {}
        for i, N in enumerate(neighborhoods):
            for j in N:
                if j != i:
                    self._channels[(i, j)] = deque()
        self.log: list[tuple[int, int, int, str]] = []

    @property
    def edges(self) -> set[tuple[int, int]]:
        return set(self._channels)

    def send(self, iteration: int, src: int, dst: int, block: str, payload) -> None:
        channel = self._channels.get((src, dst))
        if channel is None:
            raise ChannelError(f"no channel from agent {src} to agent {dst}")
        channel.append(Message(iteration, src, dst, block, np.array(payload, dtype=float, copy=True)))

    def receive(self, dst: int, src: int, block: str) -> np.ndarray:
        channel = self._channels.get((src, dst))
        if channel is None:
            raise ChannelError(f"no channel from agent {src} to agent {dst}")
        if not channel:
            raise ChannelError(f"channel {src}->{dst} is empty, expected {block!r}")
        message = channel.popleft()
        if message.block != block:
            raise ChannelError(f"channel {src}->{dst} delivered {message.block!r}, expected {block!r}")
        self.log.append((message.iteration, src, dst, block))
        return message.payload

    def pending(self) -> int:
        return sum(len(c) for c in self._channels.values())

    def message_count(self, iteration: int | None = None) -> int:
        if iteration is None:
            return len(self.log)
        return sum(1 for entry in self.log if entry[0] == iteration)

    def reset(self) -> None:
        for channel in self._channels.values():
            channel.clear()
        self.log.clear()
