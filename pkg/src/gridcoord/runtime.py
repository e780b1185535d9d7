"""Simulated coordinator/planner agent system.

The coordinator (``TPC``) and the regional planners (one per region) talk
only through an in-process :class:`Bus`.  Every message is logged; the log is
a deterministic function of the network, the configuration and the schedule
seed, and exports as JSON lines.

Message kinds and payloads
--------------------------
``AnnounceStage``     ``{"stage": 1 | 2}``
``RegionalProposal``  stage 1: ``u``, ``flows``, ``angles``, ``objective``;
                      stage 2: ``beliefs``, ``objective``
``TpcDecision``       ``u``, ``flows``, ``phi``, ``objective`` (stage 1 only)
``DualUpdate``        stage 1: ``pi``, ``mu``, ``xi``, ``step``; stage 2: ``lambda``
``BoundReport``       stage 1: ``LB``, ``UB``, ``UB_recovery``, ``gap``;
                      stage 2: ``residual``
``Terminate``         ``{"stage", "reason"}``

Tuple keys are flattened with ``|`` (``"s1|k|k1"``).  ``TpcDecision`` is a
broadcast: it is logged once with receiver ``"*"`` and delivered to every
planner.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stage1 as s1
from .centralized import PlanResult
from .config import RunConfig, Schedule, Stage1Config, Stage2Config
from .errors import ConvergenceError
from .netmodel import Network
from .serialize import canonical, dumps

TPC = "TPC"
BROADCAST = "*"
KINDS = ("AnnounceStage", "DualUpdate", "RegionalProposal", "TpcDecision", "BoundReport", "Terminate")


@dataclass
class Message:
    kind: str
    sender: str
    receiver: str
    round: int
    payload: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sender": self.sender, "receiver": self.receiver,
                "round": self.round, "payload": canonical(self.payload)}


class Bus:
    """Explicit FIFO queues per receiver plus a complete message log.

    Messages addressed to :data:`BROADCAST` are logged once and handed to
    every receiver other than the sender, in log order with its own mail.
    """

    def __init__(self):
        self.log: list[Message] = []
        self.queues: dict[str, deque[tuple[int, Message]]] = {}
        self._broadcast: list[tuple[int, Message]] = []
        self._seen: dict[str, int] = {}
        self._last_round: dict[str, int] = {}

    def send(self, msg: Message) -> None:
        if msg.kind not in KINDS:
            raise ValueError(f"unknown message kind {msg.kind!r}")
        if msg.round < self._last_round.get(msg.sender, -1):
            raise ValueError(f"round stamp of {msg.sender} went backwards")
        self._last_round[msg.sender] = msg.round
        # snapshot: senders keep mutating their dicts after the message leaves
        msg = Message(msg.kind, msg.sender, msg.receiver, msg.round, copy.deepcopy(msg.payload))
        entry = (len(self.log), msg)
        self.log.append(msg)
        if msg.receiver == BROADCAST:
            self._broadcast.append(entry)
        else:
            self.queues.setdefault(msg.receiver, deque()).append(entry)

    def receive(self, receiver: str) -> list[Message]:
        q = self.queues.get(receiver)
        own = list(q) if q else []
        if q:
            q.clear()
        start = self._seen.get(receiver, 0)
        self._seen[receiver] = len(self._broadcast)
        shared = [e for e in self._broadcast[start:] if e[1].sender != receiver]
        return [m for _, m in sorted(own + shared, key=lambda e: e[0])]

    def to_jsonl(self) -> str:
        return "".join(dumps(m.to_dict(), indent=None) + "\n" for m in self.log)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())


class Scheduler:
    """Chooses the participating planners of each round.

    Synchronous: everybody.  Asynchronous: each planner independently sits
    out with probability ``p`` unless it has already sat out ``staleness``
    consecutive rounds.  Every planner participates in the first round so
    the coordinator has a proposal from each.
    """

    def __init__(self, schedule: Schedule, regions: list[str]):
        schedule.check()
        self.schedule = schedule
        self.regions = list(regions)
        self.rng = np.random.default_rng(schedule.seed)
        self.skipped = {z: 0 for z in regions}

    def participants(self, round_: int) -> list[str]:
        if self.schedule.mode == "synchronous":
            return list(self.regions)
        draws = self.rng.random(len(self.regions))
        out = []
        for z, d in zip(self.regions, draws):
            if round_ > 1 and d < self.schedule.p and self.skipped[z] < self.schedule.staleness:
                self.skipped[z] += 1
            else:
                self.skipped[z] = 0
                out.append(z)
        return out


def _dual_payload(d: s1.DualSet, step: float) -> dict:
    return {"pi": d.pi, "mu": d.mu, "xi": d.xi, "step": step}


class Stage1Session:
    """Event loop of the Stage I mechanism over a bus."""

    def __init__(self, net: Network, config: Stage1Config, schedule: Schedule | None = None,
                 bus: Bus | None = None):
        config.check()
        self.net = net
        self.cfg = config
        self.bus = bus if bus is not None else Bus()
        self.scheduler = Scheduler(schedule or Schedule(), net.regions)
        self.state = s1.Stage1State.initial(net, config)
        self.phys_cache: dict = {}
        self.reason: str | None = None
        self._pending: dict[str, s1.RegionalProposal] = {}

    def announce(self) -> None:
        for z in self.net.regions:
            self.bus.send(Message("AnnounceStage", TPC, z, 0, {"stage": 1}))

    def step_round(self) -> bool:
        """Run one round; return True when the mechanism has terminated."""
        st = self.state
        st.round += 1
        r = st.round
        parts = self.scheduler.participants(r)
        for z in parts:
            self.bus.receive(z)
            p = self._pending[z] = s1.solve_regional(st.layout, z, st.duals[z], self.cfg, r)
            self.bus.send(Message("RegionalProposal", z, TPC, r, {
                "u": p.u, "flows": p.flows, "angles": p.angles, "objective": p.objective}))
        for m in self.bus.receive(TPC):
            if m.kind == "RegionalProposal":
                # the coordinator keeps the solved object; the message is its audit copy
                st.proposals[m.sender] = self._pending.pop(m.sender)
        st.copies = s1.solve_tpc(st.layout, st.duals, self.cfg)
        self.bus.send(Message("TpcDecision", TPC, BROADCAST, r, {
            "u": st.copies.u, "flows": st.copies.flows, "phi": st.copies.phi,
            "objective": st.copies.objective}))

        s1.compute_lower_bound(st)
        s1.lagrangian_bound(st, r)
        s1.primal_recovery_upper_bound(st, phys_cache=self.phys_cache)
        st.consensus = s1.consensus_reached(st, self.cfg.consensus_tol_flow, self.cfg.consensus_tol_angle)
        for z in self.net.regions:
            self.bus.send(Message("BoundReport", TPC, z, r, {
                "LB": st.LB, "UB": st.UB, "UB_recovery": st.UB_recovery, "gap": st.gap}))
        s1.update_agreement(st)
        st.trace.extend(self._trace_rows())

        stop, reason = s1.check_termination(st, self.cfg.eps, self.cfg.max_iter, self.cfg.stable_rounds)
        if stop:
            self.reason = reason
            for z in self.net.regions:
                self.bus.send(Message("Terminate", TPC, z, r, {"stage": 1, "reason": reason}))
            return True
        steps, weights = None, None
        if self.cfg.step_rule == "polyak":
            value = st.copies.objective + sum(p.objective for p in st.proposals.values())
            s1.adapt_rho(st, value, self.cfg.polyak_patience)
            weights = s1.StepWeights.scaled(st.layout, self.cfg.xi_weight)
            steps = s1.polyak_steps(st, st.proposals, st.copies, parts, st.rho, self.cfg.eps / 2, weights)
        if steps is None:
            steps, weights = {z: st.step(z) for z in parts}, None
        s1.update_duals(st, st.proposals, st.copies, parts, steps, weights)
        for z in parts:
            self.bus.send(Message("DualUpdate", TPC, z, r, _dual_payload(st.duals[z], steps[z])))
        return False

    def _trace_rows(self) -> list[dict]:
        rows = s1.trace_rows(self.state)
        for row in rows:
            n = self.state.duals[row["region"]].norms()
            row.update({"pi_norm": n["pi"], "mu_norm": n["mu"], "xi_norm": n["xi"]})
        return rows

    def run(self) -> s1.Stage1Result:
        self.announce()
        while not self.step_round():
            pass
        return s1.result_from_state(self.state, self.reason)


class Stage2Session:
    """Event loop of the Stage II APP iterations over a bus."""

    def __init__(self, net: Network, u: dict[str, int], config: Stage2Config,
                 schedule: Schedule | None = None, bus: Bus | None = None, round_offset: int = 0):
        from .stage2 import Stage2Engine

        config.check()
        self.net = net
        self.cfg = config
        self.bus = bus if bus is not None else Bus()
        self.scheduler = Scheduler(schedule or Schedule(), net.regions)
        self.engine = Stage2Engine(net, u, config)
        self.offset = round_offset

    def announce(self) -> None:
        for z in self.net.regions:
            self.bus.send(Message("AnnounceStage", TPC, z, self.offset, {"stage": 2, "u": self.engine.state.layout.u}))

    def step_round(self) -> float:
        eng = self.engine
        st = eng.state
        r = self.offset + st.sigma + 1
        parts = self.scheduler.participants(st.sigma + 1)
        results = {}
        for z in parts:
            self.bus.receive(z)
            results[z] = eng.solve_region(z)
            self.bus.send(Message("RegionalProposal", z, TPC, r, {
                "beliefs": results[z][1], "objective": results[z][0].objective}))
        self.bus.receive(TPC)
        res = eng.commit(results)
        for z in self.net.regions:
            lam = {k: v for k, v in st.duals.lam.items() if k[0] == z}
            self.bus.send(Message("DualUpdate", TPC, z, r, {"lambda": lam}))
        for z in self.net.regions:
            self.bus.send(Message("BoundReport", TPC, z, r, {"residual": res}))
        return res

    def run(self):
        self.announce()
        reason = "iteration-limit"
        while self.engine.state.sigma < self.cfg.max_iter:
            self.step_round()
            if self.engine.settled():
                reason = "residual"
                break
        r = self.offset + self.engine.state.sigma
        for z in self.net.regions:
            self.bus.send(Message("Terminate", TPC, z, r, {"stage": 2, "reason": reason}))
        return self.engine.result(reason)


def step_round(session: Stage1Session | Stage2Session) -> Stage1Session | Stage2Session:
    """Advance either session by one round of message exchange and return it."""
    session.step_round()
    return session


@dataclass
class PipelineResult:
    """Outcome of the two-stage mechanism together with its message log."""

    stage1: s1.Stage1Result | None
    stage2: object | None
    plan: PlanResult | None
    bus: Bus
    reason: str

    @property
    def messages(self) -> list[Message]:
        return self.bus.log

    @property
    def u(self) -> dict[str, int]:
        return dict(self.stage1.u) if self.stage1 else {}

    def to_dict(self) -> dict:
        out = {"reason": self.reason, "u": self.u, "plan": self.plan.to_dict() if self.plan else None}
        if self.stage1 is not None:
            r = self.stage1
            out["stage1"] = {"u": r.u, "LB": r.LB, "UB": r.UB, "UB_recovery": r.UB_recovery, "gap": r.gap,
                             "iterations": r.iterations, "reason": r.reason,
                             "build_consensus": r.build_consensus}
        if self.stage2 is not None:
            r = self.stage2
            out["stage2"] = {"iterations": r.iterations, "reason": r.reason,
                             "residual": r.residuals[-1] if r.residuals else None,
                             "objective": r.plan.objective}
        return out


def run_pipeline(net: Network, config: RunConfig | None = None) -> PipelineResult:
    """Announce, run Stage I, publish the build decisions, then run Stage II.

    Raises
    ------
    ConvergenceError
        When either stage hits its iteration limit; ``partial`` holds the
        :class:`PipelineResult` reached so far, including the message log.
    """
    config = config or RunConfig()
    config.check()
    bus = Bus()
    session1 = Stage1Session(net, config.stage1, config.schedule, bus)
    r1 = session1.run()
    if not r1.converged:
        partial = PipelineResult(r1, None, r1.plan, bus, "stage1-" + r1.reason)
        raise ConvergenceError(f"stage 1 stopped on {r1.reason} after {r1.iterations} rounds", partial)
    offset = r1.iterations
    bus.send(Message("TpcDecision", TPC, BROADCAST, offset, {"u": r1.u, "final": True}))
    session2 = Stage2Session(net, r1.u, config.stage2, config.schedule, bus, round_offset=offset)
    r2 = session2.run()
    result = PipelineResult(r1, r2, r2.plan, bus, r2.reason)
    if not r2.converged:
        result.reason = "stage2-" + r2.reason
        raise ConvergenceError(f"stage 2 stopped on {r2.reason} after {r2.iterations} iterations", result)
    return result
