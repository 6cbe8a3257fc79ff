"""Discrete-event model of a token-metered compute marketplace.

A requester submits a job (a batch of positions to score), validators admit
it into a block, a provider node is picked by stake and free capacity, the
payment is escrowed, the node executes, a validator re-executes to check
the result hash, and the escrow is either released or refunded.

Every state change is an event. Events wait in a pending pool and are
sealed into hash-chained blocks by ``validate_round``. Replaying the sealed
blocks through the same ``_apply`` reproduces the live state exactly.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Protocol, Sequence

DIGEST = "sha256"
LOG_FORMAT = "uavtwin-ledger"
LOG_VERSION = 1
ZERO_HASH = "0" * 64


class LedgerError(RuntimeError):
    pass


class InsufficientBalance(LedgerError):
    def __init__(self, account: str, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(f"account {account}: requires {required} tokens, {available} available")


class NotFinal(LedgerError):
    def __init__(self, task_id: int, depth: int, required: int):
        self.depth = depth
        self.required = required
        super().__init__(f"task {task_id} not final: depth {depth}, required {required}")


class ReplayError(LedgerError):
    def __init__(self, message: str, height: int | None = None):
        self.height = height
        super().__init__(message if height is None else f"height {height}: {message}")


class TaskStatus(str, Enum):
    SUBMITTED = "SUBMITTED"
    VALIDATED = "VALIDATED"
    ASSIGNED = "ASSIGNED"
    EXECUTED = "EXECUTED"
    VERIFIED = "VERIFIED"
    SETTLED = "SETTLED"
    REFUNDED = "REFUNDED"


TERMINAL = (TaskStatus.SETTLED, TaskStatus.REFUNDED)


class EscrowState(str, Enum):
    LOCKED = "LOCKED"
    RELEASED = "RELEASED"
    REFUNDED = "REFUNDED"


@dataclass
class DePinNode:
    id: str
    stake: int
    capacity: int
    honest: bool
    account: str
    active: int = 0

    @property
    def free(self) -> int:
        return self.capacity - self.active


@dataclass(frozen=True)
class TaskSpec:
    scene_ref: str
    radio_ref: str
    positions: tuple[tuple[float, float, float], ...]

    def to_json(self) -> dict:
        return {"scene": self.scene_ref, "radio": self.radio_ref, "positions": [list(p) for p in self.positions]}

    @classmethod
    def from_json(cls, d: dict) -> "TaskSpec":
        return cls(d["scene"], d["radio"], tuple(tuple(float(c) for c in p) for p in d["positions"]))


@dataclass
class Task:
    id: int
    requester: str
    spec: TaskSpec
    payment: int
    gas_limit: int
    status: TaskStatus = TaskStatus.SUBMITTED
    node: str | None = None
    result: tuple[float, ...] | None = None
    result_hash: str | None = None
    gas_used: int = 0
    reason: str | None = None
    history: list[str] = field(default_factory=list)
    terminal_height: int | None = None
    notified: bool = False


@dataclass
class Escrow:
    task_id: int
    locked: int
    state: EscrowState = EscrowState.LOCKED


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    events: tuple
    hash: str


@dataclass(frozen=True)
class LedgerConfig:
    gas_price: int = 1
    gas_base: int = 100
    gas_per_eval: int = 1
    slash_fraction: float = 0.1
    finality_depth: int = 1

    def problems(self) -> list[str]:
        out = []
        for name in ("gas_price", "gas_base", "gas_per_eval"):
            if getattr(self, name) < 0:
                out.append(f"ledger.{name} must be >= 0")
        if not 0.0 <= self.slash_fraction <= 1.0:
            out.append(f"ledger.slash_fraction must be in [0, 1], got {self.slash_fraction}")
        if self.finality_depth < 0:
            out.append(f"ledger.finality_depth must be >= 0, got {self.finality_depth}")
        return out


class ComputeHooks(Protocol):
    def evaluate(self, spec: TaskSpec) -> list[float]: ...

    def n_receivers(self, spec: TaskSpec) -> int: ...


@dataclass(frozen=True)
class ExecutionRecord:
    task_id: int
    node: str
    gas_used: int
    out_of_gas: bool
    result_hash: str | None


@dataclass(frozen=True)
class Settlement:
    task_id: int
    verified: bool
    validator: str
    paid_to_node: int
    refunded: int
    burned: int
    slashed: int


@dataclass(frozen=True)
class Notification:
    task_id: int
    status: TaskStatus
    result: tuple[float, ...] | None
    reason: str | None


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def digest(data: bytes) -> str:
    return hashlib.new(DIGEST, data).hexdigest()


def result_hash(values: Sequence[float]) -> str:
    """Hash of a result vector packed as big-endian IEEE-754 doubles."""
    return digest(struct.pack(f">{len(values)}d", *values))


def block_hash(height: int, prev_hash: str, events: Sequence[dict]) -> str:
    return digest(canonical({"height": height, "prev": prev_hash, "events": list(events)}))


class Ledger:
    def __init__(
        self,
        accounts: dict[str, int] | None = None,
        nodes: Iterable[DePinNode] = (),
        validators: Sequence[str] = ("v0",),
        config: LedgerConfig = LedgerConfig(),
        seed: int = 0,
        *,
        _genesis: dict | None = None,
    ):
        self.accounts: dict[str, int] = {}
        self.nodes: dict[str, DePinNode] = {}
        self.tasks: dict[int, Task] = {}
        self.escrows: dict[int, Escrow] = {}
        self.rejections: dict[int, str] = {}
        self.blocks: list[Block] = []
        self.pending: list[dict] = []
        self.validators: tuple[str, ...] = ()
        self.config = config
        self.burned = 0
        self.minted = 0
        self.next_task_id = 0
        self.seed = seed
        if _genesis is None:
            _genesis = {
                "op": "genesis",
                "accounts": dict(sorted((accounts or {}).items())),
                "nodes": [
                    {"id": n.id, "stake": n.stake, "capacity": n.capacity, "honest": n.honest, "account": n.account}
                    for n in sorted(nodes, key=lambda n: n.id)
                ],
                "validators": list(validators),
                "config": {
                    "gas_price": config.gas_price,
                    "gas_base": config.gas_base,
                    "gas_per_eval": config.gas_per_eval,
                    "slash_fraction": config.slash_fraction,
                    "finality_depth": config.finality_depth,
                },
                "digest": DIGEST,
                "seed": seed,
            }
        self._apply(_genesis)
        self._seal([_genesis])

    # -- accounting -------------------------------------------------------

    def locked_total(self) -> int:
        return sum(e.locked for e in self.escrows.values() if e.state is EscrowState.LOCKED)

    def circulating(self) -> int:
        return (
            sum(self.accounts.values())
            + sum(n.stake for n in self.nodes.values())
            + self.locked_total()
            + self.burned
        )

    def conservation_holds(self) -> bool:
        return self.circulating() == self.minted

    @property
    def height(self) -> int:
        return self.blocks[-1].height

    def gas_required(self, spec: TaskSpec, n_receivers: int) -> int:
        return self.config.gas_base + self.config.gas_per_eval * len(spec.positions) * n_receivers

    def _deposit(self, task: Task) -> int:
        return task.gas_limit * self.config.gas_price

    # -- operations -------------------------------------------------------

    def submit_request(self, requester: str, spec: TaskSpec, payment: int, gas_limit: int) -> int:
        if requester not in self.accounts:
            raise LedgerError(f"unknown account {requester}")
        if payment <= 0:
            raise LedgerError(f"payment must be > 0, got {payment}")
        if gas_limit < 0:
            raise LedgerError(f"gas_limit must be >= 0, got {gas_limit}")
        if not spec.positions:
            raise LedgerError("task spec has no positions")
        required = payment + gas_limit * self.config.gas_price
        available = self.accounts[requester]
        if available < required:
            raise InsufficientBalance(requester, required, available)
        event = {
            "op": "request",
            "task": self.next_task_id,
            "requester": requester,
            "spec": spec.to_json(),
            "payment": payment,
            "gas_limit": gas_limit,
        }
        self._create_task(event)
        self.pending.append(event)
        return event["task"]

    def validate_round(self) -> Block:
        """Seal the pending pool into a block.

        Non-request events keep their order; admitted requests follow in
        submission order and have their escrow locked. Every validator on the
        roster approves a well-formed request, so the quorum check only fails
        for malformed ones.
        """
        if not self.pending:
            raise LedgerError("validate_round: pending pool is empty")
        others = [e for e in self.pending if e["op"] != "request"]
        requests = [e for e in self.pending if e["op"] == "request"]
        sealed = list(others)
        for req in requests:
            reason = self._request_problem(req)
            votes = 0 if reason else len(self.validators)
            quorum = math.ceil(2 * len(self.validators) / 3)
            verdict = dict(req, votes=votes, accepted=reason is None and votes >= quorum)
            if reason is not None:
                verdict["reason"] = reason
            self._admit(verdict)
            sealed.append(verdict)
        self.pending = []
        return self._seal(sealed)

    def select_node(self, task_id: int) -> str | None:
        task = self._task(task_id, TaskStatus.VALIDATED)
        free = [n for n in self.nodes.values() if n.free > 0]
        if not free:
            return None
        best = min(free, key=lambda n: (-(n.stake * n.free), n.id))
        event = {"op": "assign", "task": task.id, "node": best.id}
        self._apply(event)
        self.pending.append(event)
        return best.id

    def execute_task(self, task_id: int, hooks: ComputeHooks) -> ExecutionRecord:
        task = self._task(task_id, TaskStatus.ASSIGNED)
        node = self.nodes[task.node]
        needed = self.gas_required(task.spec, hooks.n_receivers(task.spec))
        if needed > task.gas_limit:
            event = {"op": "execute", "task": task.id, "node": node.id, "gas_used": task.gas_limit,
                     "out_of_gas": True, "result": None, "result_hash": None}
        else:
            values = [float(v) for v in hooks.evaluate(task.spec)]
            if not node.honest:
                values = corrupt(values)
            event = {"op": "execute", "task": task.id, "node": node.id, "gas_used": needed,
                     "out_of_gas": False, "result": values, "result_hash": result_hash(values)}
        self._apply(event)
        self.pending.append(event)
        return ExecutionRecord(task.id, node.id, event["gas_used"], event["out_of_gas"], event["result_hash"])

    def verify_and_settle(self, task_id: int, hooks: ComputeHooks) -> Settlement:
        task = self._task(task_id, TaskStatus.EXECUTED)
        validator = self.validators[task.id % len(self.validators)]
        expected = result_hash([float(v) for v in hooks.evaluate(task.spec)])
        verified = expected == task.result_hash
        before = (self.accounts[self.nodes[task.node].account], self.accounts[task.requester], self.burned,
                  self.nodes[task.node].stake)
        event = {"op": "settle", "task": task.id, "validator": validator,
                 "expected_hash": expected, "verified": verified}
        self._apply(event)
        self.pending.append(event)
        after = (self.accounts[self.nodes[task.node].account], self.accounts[task.requester], self.burned,
                 self.nodes[task.node].stake)
        return Settlement(task.id, verified, validator, after[0] - before[0], after[1] - before[1],
                          after[2] - before[2], before[3] - after[3])

    def depth(self, task_id: int) -> int:
        task = self.tasks[task_id]
        if task.terminal_height is None:
            return 0
        return self.height - task.terminal_height + 1

    def notify(self, task_id: int) -> Notification:
        if task_id not in self.tasks:
            raise LedgerError(f"unknown task {task_id}")
        task = self.tasks[task_id]
        if task.status not in TERMINAL:
            raise LedgerError(f"task {task_id} is {task.status.value}, not settled or refunded")
        if task.notified:
            raise LedgerError(f"task {task_id} result already delivered")
        d = self.depth(task_id)
        if task.terminal_height is None or d < self.config.finality_depth:
            raise NotFinal(task_id, d, self.config.finality_depth)
        event = {"op": "notify", "task": task_id}
        self._apply(event)
        self.pending.append(event)
        if task.status is TaskStatus.SETTLED:
            return Notification(task_id, task.status, task.result, None)
        return Notification(task_id, task.status, None, task.reason)

    # -- state machine ----------------------------------------------------

    def _task(self, task_id: int, expected: TaskStatus) -> Task:
        if task_id not in self.tasks:
            raise LedgerError(f"unknown task {task_id}")
        task = self.tasks[task_id]
        if task.status is not expected:
            raise LedgerError(f"task {task_id} is {task.status.value}, expected {expected.value}")
        return task

    def _set_status(self, task: Task, status: TaskStatus) -> None:
        task.status = status
        task.history.append(status.value)

    def _create_task(self, event: dict) -> None:
        tid = event["task"]
        if tid != self.next_task_id:
            raise LedgerError(f"task id {tid} out of sequence, expected {self.next_task_id}")
        self.next_task_id += 1
        task = Task(tid, event["requester"], TaskSpec.from_json(event["spec"]), event["payment"], event["gas_limit"])
        task.history.append(TaskStatus.SUBMITTED.value)
        self.tasks[tid] = task

    def _request_problem(self, req: dict) -> str | None:
        requester = req["requester"]
        if requester not in self.accounts:
            return f"unknown account {requester}"
        if req["payment"] <= 0 or req["gas_limit"] < 0 or not req["spec"]["positions"]:
            return "malformed request"
        required = req["payment"] + req["gas_limit"] * self.config.gas_price
        if self.accounts[requester] < required:
            return f"insufficient balance: requires {required}, available {self.accounts[requester]}"
        return None

    def _admit(self, verdict: dict) -> None:
        task = self.tasks[verdict["task"]]
        if not verdict["accepted"]:
            self.rejections[task.id] = verdict.get("reason", "rejected by quorum")
            del self.tasks[task.id]
            return
        locked = task.payment + self._deposit(task)
        self.accounts[task.requester] -= locked
        self.escrows[task.id] = Escrow(task.id, locked)
        self._set_status(task, TaskStatus.VALIDATED)

    def _release(self, task: Task, state: EscrowState) -> None:
        escrow = self.escrows[task.id]
        if escrow.state is not EscrowState.LOCKED:
            raise LedgerError(f"escrow for task {task.id} already {escrow.state.value}")
        escrow.state = state

    def _apply(self, e: dict) -> None:
        op = e["op"]
        if op == "genesis":
            self.accounts = {k: int(v) for k, v in e["accounts"].items()}
            self.nodes = {
                n["id"]: DePinNode(n["id"], n["stake"], n["capacity"], n["honest"], n["account"])
                for n in e["nodes"]
            }
            for n in self.nodes.values():
                self.accounts.setdefault(n.account, 0)
            self.validators = tuple(e["validators"])
            self.config = LedgerConfig(**e["config"])
            self.seed = int(e.get("seed", 0))
            self.minted = sum(self.accounts.values()) + sum(n.stake for n in self.nodes.values())
        elif op == "assign":
            task = self.tasks[e["task"]]
            node = self.nodes[e["node"]]
            node.active += 1
            task.node = node.id
            self._set_status(task, TaskStatus.ASSIGNED)
        elif op == "execute":
            task = self.tasks[e["task"]]
            self.nodes[task.node].active -= 1
            task.gas_used = e["gas_used"]
            if e["out_of_gas"]:
                gas_cost = task.gas_used * self.config.gas_price
                self._release(task, EscrowState.REFUNDED)
                self.accounts[task.requester] += self.escrows[task.id].locked - gas_cost
                self.burned += gas_cost
                task.reason = f"out of gas: limit {task.gas_limit}"
                self._set_status(task, TaskStatus.REFUNDED)
            else:
                task.result = tuple(e["result"])
                task.result_hash = e["result_hash"]
                self._set_status(task, TaskStatus.EXECUTED)
        elif op == "settle":
            task = self.tasks[e["task"]]
            node = self.nodes[task.node]
            escrow = self.escrows[task.id]
            if e["verified"]:
                gas_cost = task.gas_used * self.config.gas_price
                self._set_status(task, TaskStatus.VERIFIED)
                self._release(task, EscrowState.RELEASED)
                self.accounts[node.account] += task.payment
                self.accounts[task.requester] += escrow.locked - task.payment - gas_cost
                self.burned += gas_cost
                self._set_status(task, TaskStatus.SETTLED)
            else:
                self._release(task, EscrowState.REFUNDED)
                self.accounts[task.requester] += escrow.locked
                slashed = int(node.stake * self.config.slash_fraction)
                node.stake -= slashed
                self.burned += slashed
                task.reason = f"verification failed: result hash mismatch (validator {e['validator']})"
                self._set_status(task, TaskStatus.REFUNDED)
        elif op == "notify":
            self.tasks[e["task"]].notified = True
        else:
            raise LedgerError(f"unknown event op {op!r}")

    def _seal(self, events: list[dict]) -> Block:
        height = self.blocks[-1].height + 1 if self.blocks else 0
        prev = self.blocks[-1].hash if self.blocks else ZERO_HASH
        block = Block(height, prev, tuple(events), block_hash(height, prev, events))
        self.blocks.append(block)
        for e in events:
            task = self.tasks.get(e.get("task", -1))
            if task is None:
                continue
            if (e["op"] == "settle" or (e["op"] == "execute" and e["out_of_gas"])) and task.terminal_height is None:
                task.terminal_height = height
        return block

    # -- persistence ------------------------------------------------------

    def snapshot(self) -> dict:
        """Canonical JSON-able view of the full state."""
        return {
            "accounts": dict(sorted(self.accounts.items())),
            "nodes": [
                [n.id, n.stake, n.capacity, n.honest, n.account, n.active]
                for n in sorted(self.nodes.values(), key=lambda n: n.id)
            ],
            "tasks": [
                [t.id, t.requester, t.spec.to_json(), t.payment, t.gas_limit, t.status.value, t.node,
                 list(t.result) if t.result is not None else None, t.result_hash, t.gas_used, t.reason,
                 t.history, t.terminal_height, t.notified]
                for t in sorted(self.tasks.values(), key=lambda t: t.id)
            ],
            "escrows": [[e.task_id, e.locked, e.state.value] for e in sorted(self.escrows.values(), key=lambda e: e.task_id)],
            "rejections": {str(k): v for k, v in sorted(self.rejections.items())},
            "blocks": [b.hash for b in self.blocks],
            "burned": self.burned,
            "minted": self.minted,
            "next_task_id": self.next_task_id,
            "validators": list(self.validators),
            "seed": self.seed,
        }

    def state_hash(self) -> str:
        return digest(canonical(self.snapshot()))

    def event_log(self) -> bytes:
        """Length-prefixed canonical records: a run header, then one per block."""
        records = [{"format": LOG_FORMAT, "version": LOG_VERSION, "digest": DIGEST}]
        records += [
            {"height": b.height, "prev": b.prev_hash, "events": list(b.events), "hash": b.hash} for b in self.blocks
        ]
        return b"".join(_frame(canonical(r)) for r in records)


def _frame(payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + payload


def corrupt(values: list[float]) -> list[float]:
    """What a faulty node submits: the first entry nudged by one unit."""
    out = list(values)
    out[0] = out[0] + 1.0
    return out


def read_records(data: bytes) -> list[bytes]:
    out = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ReplayError(f"truncated length prefix at offset {pos}", max(len(out) - 1, 0))
        (n,) = struct.unpack(">I", data[pos : pos + 4])
        if pos + 4 + n > len(data):
            raise ReplayError(f"record at offset {pos} overruns log ({n} bytes)", max(len(out) - 1, 0))
        out.append(data[pos + 4 : pos + 4 + n])
        pos += 4 + n
    return out


def replay(data: bytes) -> Ledger:
    """Rebuild a ledger from its event log, checking every block hash."""
    records = read_records(data)
    if not records:
        return Ledger()
    try:
        header = json.loads(records[0])
    except ValueError as exc:
        raise ReplayError(f"unreadable run header: {exc}") from None
    if header.get("format") != LOG_FORMAT or header.get("version") != LOG_VERSION:
        raise ReplayError(f"unsupported log header {header!r}")
    if header.get("digest") != DIGEST:
        raise ReplayError(f"log uses digest {header.get('digest')!r}, this build supports {DIGEST}")
    if len(records) == 1:
        return Ledger()

    ledger: Ledger | None = None
    prev = ZERO_HASH
    for expected_height, raw in enumerate(records[1:]):
        try:
            rec = json.loads(raw)
            height, rec_prev, events, rec_hash = rec["height"], rec["prev"], rec["events"], rec["hash"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ReplayError(f"hash-chain break: unreadable block body ({exc})", expected_height) from None
        if height != expected_height:
            raise ReplayError(f"hash-chain break: height field {height}", expected_height)
        if rec_prev != prev:
            raise ReplayError("hash-chain break: previous-hash mismatch", expected_height)
        if block_hash(height, rec_prev, events) != rec_hash:
            raise ReplayError("hash-chain break: block hash mismatch", expected_height)
        try:
            if ledger is None:
                if len(events) != 1 or events[0].get("op") != "genesis":
                    raise ReplayError("first block must hold only the genesis event", 0)
                ledger = Ledger(_genesis=events[0])
            else:
                for e in events:
                    if e["op"] == "request":
                        ledger._create_task(e)
                        reason = ledger._request_problem(e)
                        if (reason is None) != bool(e["accepted"]):
                            raise ReplayError(f"request {e['task']} admission differs from record", height)
                        ledger._admit(e)
                    else:
                        ledger._apply(e)
                ledger._seal(events)
        except ReplayError:
            raise
        except (LedgerError, KeyError, TypeError, ValueError) as exc:
            raise ReplayError(f"invalid event: {exc}", height) from None
        if ledger.blocks[-1].hash != rec_hash:
            raise ReplayError("hash-chain break: recomputed block differs", height)
        prev = rec_hash
    assert ledger is not None
    return ledger


# -- invariant audit ------------------------------------------------------


class InvariantViolation(LedgerError):
    def __init__(self, event_index: int, message: str):
        self.event_index = event_index
        super().__init__(f"event {event_index}: {message}")


@dataclass(frozen=True)
class AuditReport:
    events: int
    blocks: int
    minted: int
    burned: int
    settled: int
    refunded: int
    open_tasks: int
    payments_checked: int

    def lines(self) -> list[str]:
        return [
            f"blocks={self.blocks} events={self.events}",
            f"conservation: ok (minted {self.minted}, burned {self.burned})",
            f"no payment without verification: ok ({self.payments_checked} payments checked)",
            f"exactly-once settlement: ok (settled {self.settled}, refunded {self.refunded}, open {self.open_tasks})",
        ]


def audit(log: bytes) -> AuditReport:
    """Walk an event log one event at a time and check the ledger invariants.

    Conservation is checked after every event. Any increase of a node's
    account must come from a settle event whose recorded validator hash
    equals the hash the node submitted, for exactly that task's payment.
    Every task may take at most one terminal transition.
    """
    records = read_records(log)
    if len(records) <= 1:
        return AuditReport(0, 0, 0, 0, 0, 0, 0, 0)
    blocks = [json.loads(r) for r in records[1:]]
    genesis = blocks[0]["events"][0]
    live = Ledger(_genesis=genesis)
    node_accounts = {n.account for n in live.nodes.values()}
    submitted_hash: dict[int, str | None] = {}
    terminal: dict[int, str] = {}
    index = 0
    paid = 0
    for block in blocks[1:]:
        for e in block["events"]:
            index += 1
            before = {a: live.accounts[a] for a in node_accounts}
            try:
                if e["op"] == "request":
                    live._create_task(e)
                    live._admit(e)
                else:
                    live._apply(e)
            except LedgerError as exc:
                raise InvariantViolation(index, f"event cannot be applied: {exc}") from None
            if not live.conservation_holds():
                raise InvariantViolation(index, f"conservation broken: {live.circulating()} != {live.minted}")
            op = e["op"]
            if op == "execute":
                submitted_hash[e["task"]] = e["result_hash"]
            if op == "settle" or (op == "execute" and e["out_of_gas"]):
                if e["task"] in terminal:
                    raise InvariantViolation(index, f"task {e['task']} reached a second terminal state")
                terminal[e["task"]] = op
                esc = live.escrows[e["task"]]
                task = live.tasks[e["task"]]
                if (task.status is TaskStatus.SETTLED) != (esc.state is EscrowState.RELEASED):
                    raise InvariantViolation(index, f"task {task.id} is {task.status.value} with escrow {esc.state.value}")
            for account, old in before.items():
                gain = live.accounts[account] - old
                if gain <= 0:
                    continue
                task = live.tasks.get(e.get("task", -1))
                ok = (
                    op == "settle"
                    and task is not None
                    and e["verified"]
                    and e["expected_hash"] == submitted_hash.get(task.id)
                    and TaskStatus.VERIFIED.value in task.history
                    and live.nodes[task.node].account == account
                    and gain == task.payment
                )
                if not ok:
                    raise InvariantViolation(index, f"account {account} credited {gain} without a verified task")
                paid += 1
        live._seal(block["events"])
    statuses = [t.status for t in live.tasks.values()]
    return AuditReport(
        index,
        len(blocks),
        live.minted,
        live.burned,
        statuses.count(TaskStatus.SETTLED),
        statuses.count(TaskStatus.REFUNDED),
        sum(s not in TERMINAL for s in statuses),
        paid,
    )


# -- marketplace simulation -----------------------------------------------


class EnvHooks:
    """Scores task positions with the environment reward, one EnvConfig per
    (scene, radio) reference pair."""

    def __init__(self, scenes: dict, radios: dict, **env_kwargs):
        from .env import EnvConfig

        self._make = lambda s, r: EnvConfig(scenes[s], radios[r], **env_kwargs)
        self._configs: dict = {}
        self._scenes = scenes

    def config(self, spec: TaskSpec):
        key = (spec.scene_ref, spec.radio_ref)
        if key not in self._configs:
            self._configs[key] = self._make(*key)
        return self._configs[key]

    def evaluate(self, spec: TaskSpec) -> list[float]:
        from .env import evaluate_position

        cfg = self.config(spec)
        return [evaluate_position(cfg, p)[0] for p in spec.positions]

    def n_receivers(self, spec: TaskSpec) -> int:
        return self._scenes[spec.scene_ref].n_receivers


@dataclass(frozen=True)
class SimConfig:
    n_tasks: int = 100
    n_nodes: int = 5
    n_validators: int = 4
    fault_rate: float = 0.0
    n_requesters: int = 10
    requester_balance: int = 100_000
    node_stake: int = 1_000
    node_capacity: int = 2
    payment: int = 50
    gas_limit: int = 500
    positions_per_task: int = 10
    submissions_per_round: int = 10
    max_rounds: int = 100_000

    def problems(self) -> list[str]:
        out = []
        for name in ("n_tasks", "n_requesters", "positions_per_task", "submissions_per_round", "max_rounds"):
            if getattr(self, name) < 1:
                out.append(f"ledger.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("n_nodes", "n_validators"):
            if getattr(self, name) < 1:
                out.append(f"ledger.{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.fault_rate <= 1.0:
            out.append(f"ledger.fault_rate must be in [0, 1], got {self.fault_rate}")
        for name in ("requester_balance", "node_stake", "gas_limit"):
            if getattr(self, name) < 0:
                out.append(f"ledger.{name} must be >= 0, got {getattr(self, name)}")
        if self.node_capacity < 1:
            out.append(f"ledger.node_capacity must be >= 1, got {self.node_capacity}")
        if self.payment < 1:
            out.append(f"ledger.payment must be >= 1, got {self.payment}")
        return out


@dataclass
class SimResult:
    ledger: Ledger
    notifications: list[Notification]
    rejected_submissions: int
    audit: AuditReport

    def timeline(self) -> list[dict]:
        """Per-task block heights for each recorded step, from the sealed log."""
        rows: dict[int, dict] = {}
        for b in self.ledger.blocks[1:]:
            for e in b.events:
                tid = e.get("task")
                if tid not in self.ledger.tasks:
                    continue
                row = rows.setdefault(tid, {})
                key = {"request": "validated", "assign": "assigned", "execute": "executed",
                       "settle": "settled", "notify": "notified"}[e["op"]]
                row.setdefault(f"{key}_height", b.height)
        out = []
        for tid, task in sorted(self.ledger.tasks.items()):
            r = rows.get(tid, {})
            node = self.ledger.nodes.get(task.node) if task.node else None
            out.append({
                "task": tid,
                "requester": task.requester,
                "node": task.node or "",
                "node_honest": "" if node is None else int(node.honest),
                "status": task.status.value,
                "payment": task.payment,
                "gas_used": task.gas_used,
                "validated_height": r.get("validated_height", ""),
                "assigned_height": r.get("assigned_height", ""),
                "executed_height": r.get("executed_height", ""),
                "terminal_height": "" if task.terminal_height is None else task.terminal_height,
                "notified_height": r.get("notified_height", ""),
                "reason": task.reason or "",
            })
        return out


TIMELINE_COLUMNS = (
    "task", "requester", "node", "node_honest", "status", "payment", "gas_used", "validated_height",
    "assigned_height", "executed_height", "terminal_height", "notified_height", "reason",
)


def make_marketplace(sim: SimConfig, config: LedgerConfig, seed: int) -> Ledger:
    import numpy as np

    rng = np.random.Generator(np.random.PCG64(seed))
    n_bad = int(round(sim.fault_rate * sim.n_nodes))
    bad = set(int(i) for i in rng.choice(sim.n_nodes, size=n_bad, replace=False)) if n_bad else set()
    width = len(str(sim.n_nodes - 1))
    nodes = [
        DePinNode(f"node-{i:0{width}d}", sim.node_stake, sim.node_capacity, i not in bad, f"acct-node-{i:0{width}d}")
        for i in range(sim.n_nodes)
    ]
    rwidth = len(str(sim.n_requesters - 1))
    accounts = {f"user-{i:0{rwidth}d}": sim.requester_balance for i in range(sim.n_requesters)}
    validators = [f"validator-{i}" for i in range(sim.n_validators)]
    return Ledger(accounts, nodes, validators, config, seed)


def simulate(
    sim: SimConfig,
    config: LedgerConfig,
    hooks: EnvHooks,
    workload: Sequence[TaskSpec],
    seed: int = 0,
) -> SimResult:
    """Drive ``sim.n_tasks`` jobs through submit, admit, assign, execute,
    settle and notify, sealing one block per round.

    Jobs are drawn round-robin from ``workload``. Within a round every phase
    handles tasks in task-id order. The log is audited at the end and any
    invariant failure raises ``InvariantViolation``.
    """
    if not workload:
        raise LedgerError("simulation workload is empty")
    ledger = make_marketplace(sim, config, seed)
    requesters = [a for a in sorted(ledger.accounts) if a.startswith("user-")]
    notes: list[Notification] = []
    submitted = rejected = 0
    for _ in range(sim.max_rounds):
        for _ in range(sim.submissions_per_round):
            if submitted >= sim.n_tasks:
                break
            who = requesters[submitted % len(requesters)]
            spec = workload[submitted % len(workload)]
            submitted += 1
            try:
                ledger.submit_request(who, spec, sim.payment, sim.gas_limit)
            except InsufficientBalance:
                rejected += 1
        if ledger.pending:
            ledger.validate_round()
        for tid, task in sorted(ledger.tasks.items()):
            if task.status in TERMINAL and not task.notified and ledger.depth(tid) >= config.finality_depth:
                notes.append(ledger.notify(tid))
        for tid in [t for t, task in sorted(ledger.tasks.items()) if task.status is TaskStatus.VALIDATED]:
            if ledger.select_node(tid) is None:
                break
        for tid in [t for t, task in sorted(ledger.tasks.items()) if task.status is TaskStatus.ASSIGNED]:
            ledger.execute_task(tid, hooks)
        for tid in [t for t, task in sorted(ledger.tasks.items()) if task.status is TaskStatus.EXECUTED]:
            ledger.verify_and_settle(tid, hooks)
        if submitted >= sim.n_tasks and not ledger.pending and all(t.notified for t in ledger.tasks.values()):
            break
    else:
        raise LedgerError(f"simulation did not finish within {sim.max_rounds} rounds")
    report = audit(ledger.event_log())
    return SimResult(ledger, notes, rejected + len(ledger.rejections), report)
