"""Discrete-event Chord simulator under Poisson churn.

Time is measured in units of the mean node lifetime (``lambda_f = 1`` unless
``failure_rate`` says otherwise).  Joins arrive at aggregate rate
``lambda_f * N`` so the population is an M/M/infinity process with mean ``N``;
every live node fails at rate ``lambda_f`` and spends a maintenance budget of
``r * lambda_f``.  Failures are silent: a dead node is only discovered when
somebody tries to contact it.

Each stochastic channel (joins, failures, maintenance, lookup probes,
measurement snapshots) keeps exactly one pending event in a time-ordered heap.
Channels whose rate depends on the population are resampled whenever the
population changes, which is exact because the clocks are memoryless.  A
channel event then picks a uniformly random live node.  State-dependent
correction-on-change rates are realised by thinning against the largest
per-node rate.

Lookup probes and snapshots never mutate the ring.  Correction lookups under
correction-on-change are maintenance and do.

Random numbers come from numpy's PCG64 seeded through ``SeedSequence(seed)``;
identical ``(params, cfg, seed)`` reproduce the run bit for bit.
"""

from __future__ import annotations

import bisect
import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .ring import DomainError, RingParams
from .steady_state import CorrectionOnChange, MaintenanceConfig, Periodic

__all__ = [
    "SimRun",
    "SimResult",
    "SimulationError",
    "LookupOutcome",
    "ChordSimulator",
    "run",
]

logger = logging.getLogger(__name__)

_JOIN, _FAIL, _MAINT, _PROBE, _SNAP = range(5)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimRun:
    """Configuration of one simulation run.

    ``warmup_events`` and ``measure_events`` count state-changing events
    (joins, failures, maintenance actions).  Left as None they are sized from
    the slowest relaxation time of the dead-finger fraction; see
    :meth:`resolved_budget`.  With ``failure_rate == 0`` the ring is frozen
    and ``measure_events`` is the number of lookup probes instead.
    """

    params: RingParams
    cfg: MaintenanceConfig
    seed: int = 0
    warmup_events: int | None = None
    measure_events: int | None = None
    failure_rate: float = 1.0
    successor_list_size: int = 4
    probe_rate: float = 10.0
    snapshot_rate: float = 20.0
    batches: int = 10
    correction_target: Literal["self", "stale"] = "self"
    piggyback: bool = True
    warmup_relaxations: float = 5.0
    measure_time: float = 1.5

    def __post_init__(self) -> None:
        if self.failure_rate < 0:
            raise DomainError("failure_rate must be >= 0")
        if self.successor_list_size < 1:
            raise DomainError("successor list needs at least one entry")
        if self.correction_target not in ("self", "stale"):
            raise DomainError(f"unknown correction_target {self.correction_target!r}")
        if self.batches < 2:
            raise DomainError("need at least two batches for a confidence interval")

    def state_event_rate(self) -> float:
        """Expected state-changing events per unit time at mean population."""
        s = self.cfg.strategy
        if isinstance(s, Periodic):
            per_node = self.cfg.r
        else:
            per_node = self.cfg.r * max(s.alpha, s.a + s.c)
        return self.failure_rate * self.params.population * (2.0 + per_node)

    def relaxation_time(self) -> float:
        """Slowest first-order relaxation time of a finger entry (failure units)."""
        s, r, M = self.cfg.strategy, self.cfg.r, self.params.finger_count
        repair = (1.0 - s.beta) * r / M if isinstance(s, Periodic) else s.c * r / M
        return 1.0 / (1.0 + repair)

    def resolved_budget(self) -> tuple[int, int]:
        N = self.params.population
        if self.failure_rate == 0:
            return 0, self.measure_events or 20_000
        rate = self.state_event_rate()
        warm = self.warmup_events
        if warm is None:
            warm = max(20 * N, math.ceil(rate * self.warmup_relaxations * self.relaxation_time()))
        meas = self.measure_events
        if meas is None:
            meas = math.ceil(rate * self.measure_time)
        return warm, meas


@dataclass
class SimResult:
    run: SimRun
    mean_hops: float
    hop_ci_halfwidth: float
    mean_timeouts: float
    lookups: int
    failed_lookups: int
    measured_f: np.ndarray = field(repr=False)
    measured_w: float
    measured_w1: float
    measured_w1_prime: float
    measured_P_S1: float
    mean_population: float
    population_std: float
    sim_time: float
    events: int
    corrections_sent: int = 0
    corrections_applied: int = 0
    dead_contacts_in_maintenance: int = 0
    stranded_successor_repairs: int = 0

    @property
    def lookup_failure_fraction(self) -> float:
        total = self.lookups + self.failed_lookups
        return self.failed_lookups / total if total else 0.0

    @property
    def mean_f(self) -> float:
        """Dead fraction averaged over fingers 2..M."""
        return float(self.measured_f[1:].mean()) if self.measured_f.size > 1 else float(self.measured_f[0])

    @property
    def outside_model_validity(self) -> bool:
        return self.lookup_failure_fraction > 0.005


@dataclass
class LookupOutcome:
    hops: int
    timeouts: int
    owner: int | None

    @property
    def ok(self) -> bool:
        return self.owner is not None

    @property
    def forwards(self) -> int:
        return self.hops - self.timeouts


class _Node:
    __slots__ = ("id", "fingers", "succ", "pred", "s2", "next_msg", "stale")

    def __init__(self, node_id: int, fingers: list[int], succ: list[int], pred: int | None):
        self.id = node_id
        self.fingers = fingers
        self.succ = succ
        self.pred = pred
        self.s2 = False
        self.next_msg = 1
        self.stale: int | None = None


class _Uniforms:
    """Block-buffered uniform draws; per-call numpy overhead dominates otherwise."""

    def __init__(self, rng: np.random.Generator, block: int = 1 << 16):
        self._rng = rng
        self._block = block
        self._buf = rng.random(block).tolist()
        self._i = 0

    def __call__(self) -> float:
        if self._i == self._block:
            self._buf = self._rng.random(self._block).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u

    def below(self, n: int) -> int:
        return min(int(self() * n), n - 1)

    def expo(self, rate: float) -> float:
        return -math.log1p(-self()) / rate


class ChordSimulator:
    """Mutable ring state plus the event loop for one :class:`SimRun`."""

    def __init__(self, sim: SimRun):
        self.sim = sim
        p = sim.params
        self.K = p.keyspace_size
        self.offsets = p.finger_offsets
        self.M = len(self.offsets)
        self.S = sim.successor_list_size
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(sim.seed)))
        self.u = _Uniforms(self.rng)
        self.max_hops = 4 * self.M + 4 * self.S + 16
        ids = np.sort(self.rng.choice(self.K, size=p.population, replace=False))
        self.ids: list[int] = [int(i) for i in ids]
        self.used: set[int] = set(self.ids)
        self.nodes: dict[int, _Node] = {}
        for n in self.ids:
            self.nodes[n] = _Node(n, self._true_fingers(n), self._true_succ_list(n), self._true_pred(n))
        self.dead_contacts = 0
        self.stranded = 0
        self.corrections_sent = 0
        self.corrections_applied = 0

    # ring truth ---------------------------------------------------------------

    def successor_of_key(self, key: int) -> int:
        i = bisect.bisect_left(self.ids, key % self.K)
        return self.ids[i % len(self.ids)]

    def _true_succ_list(self, n: int) -> list[int]:
        i = bisect.bisect_right(self.ids, n)
        L = len(self.ids)
        return [self.ids[(i + j) % L] for j in range(min(self.S, L))]

    def _true_pred(self, n: int) -> int:
        i = bisect.bisect_left(self.ids, n)
        return self.ids[i - 1]

    def _true_fingers(self, n: int) -> list[int]:
        return [self.successor_of_key(n + o) for o in self.offsets]

    def alive(self, n: int | None) -> bool:
        return n is not None and n in self.nodes

    def _between(self, x: int, a: int, b: int) -> bool:
        """x strictly inside the clockwise interval (a, b)."""
        return 0 < (x - a) % self.K < (b - a) % self.K or (a == b and x != a)

    # routing ------------------------------------------------------------------

    def lookup(self, origin: int, key: int) -> LookupOutcome:
        """Greedy lookup from ``origin`` for ``key``, counting timeouts as hops.

        At each node: if the key falls between the node and its first
        successor, contact that successor (a dead one costs a timeout and the
        next list entry takes its place).  Otherwise forward to the closest
        preceding finger, falling back to closer fingers on timeouts and to
        successor-list entries once every preceding finger is dead.
        """
        K = self.K
        nodes = self.nodes
        cur = origin
        hops = timeouts = 0
        key %= K
        dead: set[int] = set()
        while hops <= self.max_hops:
            node = nodes[cur]
            d_key = (key - cur) % K or K
            forward = None
            for s in node.succ:
                if (s - cur) % K < d_key and s != cur:
                    break
                if s in dead:
                    continue
                hops += 1
                if s in nodes:
                    return LookupOutcome(hops, timeouts, s)
                timeouts += 1
                dead.add(s)
            for table in (node.fingers, node.succ):
                cands = {}
                for e in table:
                    d = (e - cur) % K
                    if 0 < d < d_key and e not in dead:
                        cands[e] = d
                for e in sorted(cands, key=cands.__getitem__, reverse=True):
                    hops += 1
                    if e in nodes:
                        forward = e
                        break
                    timeouts += 1
                    dead.add(e)
                if forward is not None:
                    break
            if forward is None:
                # every pointer short of the key is dead: the first live
                # successor-list entry past the key owns it
                for s in node.succ:
                    if s in dead:
                        continue
                    hops += 1
                    if s in nodes:
                        return LookupOutcome(hops, timeouts, s)
                    timeouts += 1
                    dead.add(s)
                return LookupOutcome(hops, timeouts, None)
            cur = forward
        return LookupOutcome(hops, timeouts, None)

    # churn --------------------------------------------------------------------

    def join(self) -> None:
        K = self.K
        while True:
            nid = self.u.below(K)
            if nid not in self.used:
                break
        self.used.add(nid)
        boot = self.ids[self.u.below(len(self.ids))]
        res = self.lookup(boot, nid)
        s = res.owner
        if s is None or s == nid:
            self.stranded += 1
            s = self.successor_of_key(nid)
        sn = self.nodes[s]
        # starts up to s are known to map to s; the rest are copied, possibly stale
        gap = (s - nid) % K
        fingers = [s if o <= gap else e for o, e in zip(self.offsets, sn.fingers)]
        succ = ([s] + sn.succ)[: self.S]
        node = _Node(nid, fingers, succ, sn.pred)
        bisect.insort(self.ids, nid)
        self.nodes[nid] = node
        if not self.alive(sn.pred) or self._between(nid, sn.pred, s):
            sn.pred = nid

    def fail(self) -> None:
        if len(self.ids) <= 1:
            raise SimulationError("population would drop to zero")
        i = self.u.below(len(self.ids))
        nid = self.ids.pop(i)
        del self.nodes[nid]

    # maintenance --------------------------------------------------------------

    def stabilize_successor(self, node: _Node) -> bool:
        """Refresh the first successor; return True when it had been wrong."""
        old = node.succ[0]
        s = None
        for e in node.succ:
            if e in self.nodes and e != node.id:
                s = e
                break
            self.dead_contacts += 1
        if s is None:
            self.stranded += 1
            s = self.successor_of_key(node.id + 1)
        p = self.nodes[s].pred
        if p is not None and p in self.nodes and self._between(p, node.id, s):
            s = p
        sn = self.nodes[s]
        node.succ = ([s] + [e for e in sn.succ if e != node.id])[: self.S]
        node.fingers[0] = s
        if not self.alive(sn.pred) or self._between(node.id, sn.pred, s):
            sn.pred = node.id
        return s != old

    def refresh_finger(self, node: _Node, k: int) -> None:
        node.fingers[k - 1] = self.successor_of_key(node.id + self.offsets[k - 1])
        if k == 1:
            node.succ[0] = node.fingers[0]

    def send_correction(self, node: _Node) -> None:
        k = node.next_msg
        ref = node.id if self.sim.correction_target == "self" or node.stale is None else node.stale
        target = (ref - self.offsets[k - 1]) % self.K
        self.corrections_sent += 1
        res = self.lookup(node.id, target)
        if res.ok:
            # p fixes its entry and hands the update on to successors whose
            # k-th finger names the same stale node
            pnode = self.nodes[res.owner]
            for _ in range(len(self.ids)):
                entry = pnode.fingers[k - 1]
                if entry != node.stale and entry in self.nodes:
                    break
                pnode.fingers[k - 1] = self.successor_of_key(pnode.id + self.offsets[k - 1])
                self.corrections_applied += 1
                if not self.sim.piggyback:
                    break
                nxt = self.successor_of_key(pnode.id + 1)
                if nxt == pnode.id or nxt == res.owner:
                    break
                pnode = self.nodes[nxt]
        else:
            self.dead_contacts += 1
        node.next_msg += 1
        if node.next_msg > self.M:
            node.s2 = False
            node.next_msg = 1
            node.stale = None

    def maintain(self, node: _Node) -> None:
        s, u = self.sim.cfg.strategy, self.u
        if isinstance(s, Periodic):
            if u() < s.beta:
                self.stabilize_successor(node)
            else:
                self.refresh_finger(node, 1 + u.below(self.M))
            return
        top = max(s.alpha, s.a + s.c)
        x = u() * top
        if not node.s2:
            if x < s.alpha:
                old = node.succ[0]
                if self.stabilize_successor(node):
                    node.s2, node.next_msg, node.stale = True, 1, old
            return
        if x < s.a:
            old = node.succ[0]
            if self.stabilize_successor(node):
                node.next_msg, node.stale = 1, old
        elif x < s.a + s.c:
            self.send_correction(node)

    # measurement --------------------------------------------------------------

    def snapshot(self) -> tuple[np.ndarray, int, int, int, int, int]:
        """Dead counts per finger, plus wrong-successor counts by S1/S2 state."""
        dead = np.zeros(self.M)
        nodes = self.nodes
        n1 = n2 = w1 = w2 = 0
        L = len(self.ids)
        for i, nid in enumerate(self.ids):
            node = nodes[nid]
            for k, e in enumerate(node.fingers):
                if e not in nodes:
                    dead[k] += 1
            wrong = node.succ[0] != self.ids[(i + 1) % L]
            if node.s2:
                n2 += 1
                w2 += wrong
            else:
                n1 += 1
                w1 += wrong
        return dead, n1, n2, w1, w2, L

    def probe(self) -> LookupOutcome:
        origin = self.ids[self.u.below(len(self.ids))]
        t = 1 + self.u.below(self.K - 1)
        return self.lookup(origin, origin + t)


def run(sim: SimRun) -> SimResult:
    """Execute one run and return time-averaged measurements after warmup."""
    eng = ChordSimulator(sim)
    warm, meas = sim.resolved_budget()
    u = eng.u
    lam_f = sim.failure_rate
    s = sim.cfg.strategy
    per_node_maint = sim.cfg.r * (1.0 if isinstance(s, Periodic) else max(s.alpha, s.a + s.c))
    N0 = sim.params.population

    hop_batches = [[0, 0, 0] for _ in range(sim.batches)]  # hops, timeouts, count
    failed = 0
    dead_acc = np.zeros(eng.M)
    finger_obs = 0
    n1_acc = n2_acc = w1_acc = w2_acc = 0
    pops: list[int] = []

    if lam_f == 0:
        for j in range(meas):
            res = eng.probe()
            b = hop_batches[j * sim.batches // meas]
            if res.ok:
                b[0] += res.hops
                b[1] += res.timeouts
                b[2] += 1
            else:
                failed += 1
        dead, n1, n2, w1, w2, L = eng.snapshot()
        return _summarize(sim, hop_batches, failed, dead, L, n1, n2, w1, w2, [L], 0.0, 0, eng)

    rates = {
        _JOIN: lambda: lam_f * N0,
        _FAIL: lambda: lam_f * len(eng.ids),
        _MAINT: lambda: lam_f * per_node_maint * len(eng.ids),
        _PROBE: lambda: sim.probe_rate * lam_f * N0,
        _SNAP: lambda: sim.snapshot_rate * lam_f,
    }
    version = dict.fromkeys(rates, 0)
    heap: list[tuple[float, int, int, int]] = []
    seq = 0
    now = 0.0

    def schedule(ch: int) -> None:
        nonlocal seq
        version[ch] += 1
        rate = rates[ch]()
        if rate > 0:
            heapq.heappush(heap, (now + u.expo(rate), seq, ch, version[ch]))
            seq += 1

    for ch in (_JOIN, _FAIL, _MAINT):
        schedule(ch)

    events = 0
    measuring = warm == 0
    t_measure = 0.0
    if measuring:
        schedule(_PROBE)
        schedule(_SNAP)
    total = warm + meas
    while events < total:
        if not heap:
            raise SimulationError("event queue ran dry")
        t, _, ch, ver = heapq.heappop(heap)
        if ver != version[ch]:
            continue
        now = t
        if ch == _PROBE:
            res = eng.probe()
            b = hop_batches[min((events - warm) * sim.batches // max(meas, 1), sim.batches - 1)]
            if res.ok:
                b[0] += res.hops
                b[1] += res.timeouts
                b[2] += 1
            else:
                failed += 1
            schedule(_PROBE)
            continue
        if ch == _SNAP:
            dead, n1, n2, w1, w2, L = eng.snapshot()
            dead_acc += dead
            finger_obs += L
            n1_acc += n1
            n2_acc += n2
            w1_acc += w1
            w2_acc += w2
            pops.append(L)
            schedule(_SNAP)
            continue
        events += 1
        if ch == _JOIN:
            eng.join()
            schedule(_JOIN)
            schedule(_FAIL)
            schedule(_MAINT)
        elif ch == _FAIL:
            eng.fail()
            schedule(_FAIL)
            schedule(_MAINT)
        else:
            node = eng.nodes[eng.ids[u.below(len(eng.ids))]]
            eng.maintain(node)
            schedule(_MAINT)
        if not measuring and events >= warm:
            measuring = True
            t_measure = now
            schedule(_PROBE)
            schedule(_SNAP)

    if not pops:
        dead, n1, n2, w1, w2, L = eng.snapshot()
        dead_acc, finger_obs, n1_acc, n2_acc, w1_acc, w2_acc = dead, L, n1, n2, w1, w2
        pops = [L]
    return _summarize(
        sim, hop_batches, failed, dead_acc, finger_obs, n1_acc, n2_acc, w1_acc, w2_acc,
        pops, now - t_measure, events, eng,
    )


def _summarize(sim, hop_batches, failed, dead, finger_obs, n1, n2, w1, w2, pops, span, events, eng):
    counts = np.array([b[2] for b in hop_batches], dtype=float)
    hops = np.array([b[0] for b in hop_batches], dtype=float)
    touts = np.array([b[1] for b in hop_batches], dtype=float)
    n = counts.sum()
    if n == 0:
        raise SimulationError("no successful lookups were measured")
    mean_hops = hops.sum() / n
    used = counts > 0
    batch_means = hops[used] / counts[used]
    if batch_means.size > 1:
        half = 1.96 * batch_means.std(ddof=1) / math.sqrt(batch_means.size)
    else:
        half = math.nan
    nodes_obs = n1 + n2
    return SimResult(
        run=sim,
        mean_hops=float(mean_hops),
        hop_ci_halfwidth=float(half),
        mean_timeouts=float(touts.sum() / n),
        lookups=int(n),
        failed_lookups=int(failed),
        measured_f=dead / max(finger_obs, 1),
        measured_w=(w1 + w2) / nodes_obs if nodes_obs else 0.0,
        measured_w1=w1 / n1 if n1 else 0.0,
        measured_w1_prime=w2 / n2 if n2 else math.nan,
        measured_P_S1=n1 / nodes_obs if nodes_obs else 1.0,
        mean_population=float(np.mean(pops)),
        population_std=float(np.std(pops)),
        sim_time=float(span),
        events=int(events),
        corrections_sent=eng.corrections_sent,
        corrections_applied=eng.corrections_applied,
        dead_contacts_in_maintenance=eng.dead_contacts,
        stranded_successor_repairs=eng.stranded,
    )
