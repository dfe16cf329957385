"""Cloud-side knowledge sharing across heterogeneous pruned agents.

Every client trains a masked copy of one base model.  Each round the server
collects one gradient per client and returns the mask-count weighted mean::

    aggregated[j] = sum_i grad_i[j] / sum_i mask_i[j]    (0 where no client keeps j)
"""

from __future__ import annotations

import csv
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .agent import Agent, Hyperparams
from .tensorlite import (
    ACTOR_SIZES,
    CRITIC_SIZES,
    GradientSet,
    MaskedModel,
    make_mask,
    param_shapes,
    payload_bytes,
)


class RoundTimeout(RuntimeError):
    def __init__(self, round_id: int, missing: Sequence[int]):
        self.round_id = round_id
        self.missing = tuple(missing)
        super().__init__(f"round {round_id} timed out waiting for clients {list(self.missing)}")


class IncompleteRound(RuntimeError):
    pass


class ClientFault(ValueError):
    def __init__(self, client_id: int, message: str):
        self.client_id = client_id
        super().__init__(f"client {client_id}: {message}")


@dataclass(frozen=True)
class ClientInfo:
    client_id: int
    mask: np.ndarray
    actor_shapes: tuple
    critic_shapes: tuple


@dataclass
class ClientRegistry:
    clients: dict[int, ClientInfo] = field(default_factory=dict)
    round_counter: int = 0

    def register(self, info: ClientInfo) -> None:
        if self.clients:
            first = next(iter(self.clients.values()))
            if (first.actor_shapes, first.critic_shapes) != (info.actor_shapes, info.critic_shapes):
                raise ValueError("all clients must share the base-model shapes")
        info.mask.setflags(write=False)
        self.clients[info.client_id] = info

    @property
    def ids(self) -> list[int]:
        return sorted(self.clients)


@dataclass
class Round:
    round_id: int
    expected: frozenset[int]
    received: dict[int, GradientSet] = field(default_factory=dict)

    def submit(self, client_id: int, grad: GradientSet) -> None:
        if client_id not in self.expected:
            raise ClientFault(client_id, f"not registered for round {self.round_id}")
        if client_id in self.received:
            raise ClientFault(client_id, f"already contributed to round {self.round_id}")
        self.received[client_id] = grad

    @property
    def complete(self) -> bool:
        return set(self.received) == set(self.expected)

    @property
    def missing(self) -> list[int]:
        return sorted(self.expected - set(self.received))


def _layer_matrix_shapes(sizes):
    return [s for s in param_shapes(sizes) if len(s) == 2]


@dataclass
class Provisioned:
    registry: ClientRegistry
    base_actor: MaskedModel
    base_critic: MaskedModel
    models: list[tuple[MaskedModel, MaskedModel]]


def provision(n_clients: int, rates: Sequence[float] = (0.0, 0.0), base_seed: int = 0,
              critic_rates: Sequence[float] | None = None,
              actor_head_scale: float = 0.01) -> Provisioned:
    """One base draw, then a distinct seeded mask per client applied to it."""
    if n_clients < 1:
        raise ValueError("need at least one client")
    critic_rates = rates if critic_rates is None else critic_rates
    base_actor = MaskedModel.initialize(ACTOR_SIZES, seed=base_seed, head_scale=actor_head_scale)
    base_critic = MaskedModel.initialize(CRITIC_SIZES, seed=base_seed + 1)
    registry = ClientRegistry()
    models = []
    for cid in range(n_clients):
        mask_seed = base_seed * 7919 + 2 * cid + 2
        a_mask = make_mask(_layer_matrix_shapes(ACTOR_SIZES), rates, mask_seed)
        c_mask = make_mask(_layer_matrix_shapes(CRITIC_SIZES), critic_rates, mask_seed + 1)
        actor = MaskedModel(ACTOR_SIZES, base_actor.params, a_mask)
        critic = MaskedModel(CRITIC_SIZES, base_critic.params, c_mask)
        registry.register(ClientInfo(
            cid,
            np.concatenate([actor.flat_mask(), critic.flat_mask()]),
            tuple(param_shapes(ACTOR_SIZES)),
            tuple(param_shapes(CRITIC_SIZES)),
        ))
        models.append((actor, critic))
    return Provisioned(registry, base_actor, base_critic, models)


def make_agents(prov: Provisioned, hp: Hyperparams, seed: int,
                pressure_kind: str = "hp") -> list[Agent]:
    return [
        Agent(actor, critic, hp, seed=seed * 1000 + 17 * cid + 1,
              client_id=cid, pressure_kind=pressure_kind)
        for cid, (actor, critic) in enumerate(prov.models)
    ]


def aggregate_gradients(gradients: Mapping[int, np.ndarray],
                        masks: Mapping[int, np.ndarray]) -> np.ndarray:
    """Mask-count weighted mean; client-id order fixes the summation order."""
    ids = sorted(gradients)
    if not ids:
        raise IncompleteRound("no gradients to aggregate")
    total = np.zeros_like(np.asarray(gradients[ids[0]], dtype=float))
    count = np.zeros_like(total)
    for cid in ids:
        grad = np.asarray(gradients[cid], dtype=float)
        mask = np.asarray(masks[cid], dtype=float)
        if grad.shape != mask.shape:
            raise ClientFault(cid, f"gradient shape {grad.shape} != mask shape {mask.shape}")
        if np.any(grad[mask == 0] != 0):
            raise ClientFault(cid, "non-zero gradient at a pruned position")
        total += grad
        count += mask
    out = np.zeros_like(total)
    np.divide(total, count, out=out, where=count > 0)
    return out


def aggregate(rnd: Round, registry: ClientRegistry) -> np.ndarray:
    if not rnd.complete:
        raise IncompleteRound(f"round {rnd.round_id} is missing clients {rnd.missing}")
    return aggregate_gradients(
        {cid: g.vector for cid, g in rnd.received.items()},
        {cid: registry.clients[cid].mask for cid in rnd.received},
    )


@dataclass(frozen=True)
class RoundLog:
    round_id: int
    client_norms: tuple[float, ...]
    aggregated_norm: float
    bytes_exchanged: int


class FedServer:
    """Single logical aggregator; clients may submit from any thread."""

    def __init__(self, registry: ClientRegistry):
        self.registry = registry
        self._cond = threading.Condition()
        self._round = self._new_round()
        self._results: dict[int, np.ndarray] = {}
        self.log: list[RoundLog] = []

    def _new_round(self) -> Round:
        return Round(self.registry.round_counter, frozenset(self.registry.ids))

    @property
    def round_id(self) -> int:
        return self._round.round_id

    def submit(self, client_id: int, grad: GradientSet, round_id: int | None = None) -> int:
        with self._cond:
            rnd = self._round
            if round_id is not None and round_id != rnd.round_id:
                raise ClientFault(client_id, f"submitted to round {round_id}, open round is {rnd.round_id}")
            rnd.submit(client_id, grad)
            if rnd.complete:
                result = aggregate(rnd, self.registry)
                result.setflags(write=False)
                self._results[rnd.round_id] = result
                self._record(rnd, result)
                self._results.pop(rnd.round_id - 2, None)
                self.registry.round_counter += 1
                self._round = self._new_round()
                self._cond.notify_all()
            return rnd.round_id

    def wait(self, round_id: int, timeout: float | None = None) -> np.ndarray:
        with self._cond:
            done = self._cond.wait_for(lambda: round_id in self._results, timeout=timeout)
            if not done:
                missing = self._round.missing if self._round.round_id == round_id else []
                raise RoundTimeout(round_id, missing)
            return self._results[round_id]

    def _record(self, rnd: Round, result: np.ndarray) -> None:
        ids = sorted(rnd.received)
        payload = sum(payload_bytes(self.registry.clients[c].mask) for c in ids)
        self.log.append(RoundLog(
            rnd.round_id,
            tuple(rnd.received[c].norm for c in ids),
            float(np.linalg.norm(result)),
            2 * payload,  # upload plus masked download
        ))

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "client_norms", "aggregated_norm", "bytes_exchanged"])
            for row in self.log:
                writer.writerow([row.round_id, ";".join(repr(n) for n in row.client_norms),
                                 repr(row.aggregated_norm), row.bytes_exchanged])


class Transport(Protocol):
    def exchange(self, client_id: int, grad: GradientSet, timeout: float | None) -> np.ndarray:
        ...


class InProcessTransport:
    def __init__(self, server: FedServer):
        self.server = server

    def exchange(self, client_id: int, grad: GradientSet, timeout: float | None = None) -> np.ndarray:
        round_id = self.server.submit(client_id, grad)
        return self.server.wait(round_id, timeout)


def _client_round(agent: Agent, transport: Transport, timeout: float | None) -> int:
    result = agent.train_on_batch()
    aggregated = transport.exchange(agent.client_id, result.gradient, timeout)
    agent.apply_aggregated(aggregated)
    return agent.client_id


class RoundRunner:
    """Runs federated rounds either on one thread per client or sequentially."""

    def __init__(self, server: FedServer, parallel: bool = False, timeout: float | None = 30.0,
                 transport: Transport | None = None):
        self.server = server
        self.parallel = parallel
        self.timeout = timeout
        self.transport = transport or InProcessTransport(server)
        self._pool: ThreadPoolExecutor | None = None

    def run_round(self, agents: Sequence[Agent]) -> int:
        """Train, exchange and apply for every agent; returns the completed round id."""
        round_id = self.server.round_id
        if not self.parallel:
            results = [agent.train_on_batch() for agent in agents]
            for res in results:
                self.server.submit(res.gradient.client_id, res.gradient, round_id)
            aggregated = self.server.wait(round_id, self.timeout)
            for agent in agents:
                agent.apply_aggregated(aggregated)
            return round_id
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=len(agents), thread_name_prefix="client")
        futures = [self._pool.submit(_client_round, a, self.transport, self.timeout) for a in agents]
        for fut in futures:
            fut.result()
        return round_id

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def run_round(agents: Sequence[Agent], server: FedServer, parallel: bool = False,
              timeout: float | None = 30.0) -> int:
    runner = RoundRunner(server, parallel, timeout)
    try:
        return runner.run_round(agents)
    finally:
        runner.close()


def apply_aggregated(agent: Agent, aggregated: np.ndarray) -> None:
    expected = agent.actor.size + agent.critic.size
    if np.shape(aggregated) != (expected,):
        raise ValueError(f"aggregated gradient has shape {np.shape(aggregated)}, expected ({expected},)")
    agent.apply_aggregated(aggregated)
