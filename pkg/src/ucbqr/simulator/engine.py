"""Continuous-time simulation of a skill-based queueing network.

Two service disciplines share one state:

* rate-based routing: every arrival joins the virtual queue of a server
  drawn with probability ``x_ij / lambda_i``; each server serves its own
  virtual queue FCFS (:meth:`Simulation.run_interval`);
* allocation policies: arrivals wait in per-type queues and a policy assigns
  servers at arrival and completion epochs
  (:meth:`Simulation.run_allocation_policy`).

Random inputs are drawn in fixed-size chunks from named streams, so two
simulations with the same seed share arrival times and per-server service
durations regardless of the discipline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..model import CompatibilityNetwork, PayoffModel
from . import _kernel as K
from .rng import RngStreams

CHUNK = 1 << 14


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Customer:
    id: int
    type: int
    arrival_time: float


class AllocationPolicy(Protocol):
    """Decision hooks for allocation mode.

    ``on_arrival`` gets the arriving customer and the idle compatible
    servers (ascending) and returns a server or ``None`` to queue the
    customer.  ``on_completion`` gets the server and the heads of its
    nonempty compatible type queues (ascending type) and returns a type or
    ``None`` to idle.  A policy may expose ``discipline`` (a kernel code)
    to run compiled instead of through the hooks.
    """

    def on_arrival(self, customer: Customer, idle_servers: list[int], sim: "Simulation"): ...

    def on_completion(self, server: int, heads: dict[int, Customer], sim: "Simulation"): ...


def _theta_matrix(network, theta) -> np.ndarray:
    if isinstance(theta, PayoffModel):
        return theta.matrix()
    arr = np.asarray(theta, dtype=float)
    if arr.shape == (network.num_types, network.num_servers):
        return arr.copy()
    if arr.shape == (network.num_lines,):
        out = np.zeros((network.num_types, network.num_servers))
        for (i, j), v in zip(network.lines, arr):
            out[i, j] = v
        return out
    raise SimulationError(f"cannot interpret payoff means of shape {arr.shape}")


class Simulation:
    """Mutable simulation state for one replication.

    Public counters: ``departures`` and ``payoffs`` (I x J, cumulative),
    ``arrivals`` (per type), ``queue_hist`` (time spent by each server's
    virtual queue, in-service customer included, at each length; the last
    bin collects longer queues) and ``area`` / ``area_sq`` (time integrals of
    the number in system and its square).
    """

    def __init__(self, network: CompatibilityNetwork, theta, streams: RngStreams,
                 *, hist_bins: int = 64, log_capacity: int = 0, chunk: int = CHUNK):
        self.network = network
        self.streams = streams
        self.chunk = int(chunk)
        I, J = network.num_types, network.num_servers
        self.I, self.J = I, J
        self.lam = np.array([float(v) for v in network.arrival_rates])
        self.mu = np.array([float(v) for v in network.service_rates])
        self.theta = _theta_matrix(network, theta)
        self.compat = network.compatibility_matrix()

        self.iv = np.zeros(6, dtype=np.int64)
        self.fv = np.zeros(3)
        cap = 1024
        self.c_type = np.zeros(cap, dtype=np.int32)
        self.c_time = np.zeros(cap)
        self.c_pay = np.zeros(cap)
        self.c_next = np.full(cap, -1, dtype=np.int64)
        self.vq_head = np.full(J, -1, dtype=np.int64)
        self.vq_tail = np.full(J, -1, dtype=np.int64)
        self.vq_len = np.zeros(J, dtype=np.int64)
        self.pq_head = np.full(I, -1, dtype=np.int64)
        self.pq_tail = np.full(I, -1, dtype=np.int64)
        self.pq_len = np.zeros(I, dtype=np.int64)
        self.srv_cust = np.full(J, -1, dtype=np.int64)
        self.srv_done = np.full(J, np.inf)
        self.srv_idle = np.zeros(J)

        self.arr_t = np.zeros((I, self.chunk))
        self.arr_ru = np.zeros((I, self.chunk))
        self.arr_pu = np.zeros((I, self.chunk))
        self.arr_cur = np.zeros(I, dtype=np.int64)
        self._arr_last = np.zeros(I)
        for i in range(I):
            self._refill_arrivals(i)
        self.svc = np.zeros((J, self.chunk))
        self.svc_cur = np.zeros(J, dtype=np.int64)
        for j in range(J):
            self._refill_service(j)
        self.dec = np.zeros(self.chunk)
        self._refill_decisions()

        self.route_cdf = np.ones((I, J))
        self.route_srv = np.zeros((I, J), dtype=np.int64)
        self.route_n = np.zeros(I, dtype=np.int64)
        self.srv_types = np.zeros((J, I), dtype=np.int64)
        self.srv_ntypes = np.zeros(J, dtype=np.int64)
        self.type_srvs = np.zeros((I, J), dtype=np.int64)
        self.type_nsrvs = np.zeros(I, dtype=np.int64)
        for j in range(J):
            ts = network.types_of(j)
            self.srv_types[j, :len(ts)] = ts
            self.srv_ntypes[j] = len(ts)
        for i in range(I):
            ss = network.servers_of(i)
            self.type_srvs[i, :len(ss)] = ss
            self.type_nsrvs[i] = len(ss)

        self.departures = np.zeros((I, J), dtype=np.int64)
        self.payoffs = np.zeros((I, J), dtype=np.int64)
        self.arrivals = np.zeros(I, dtype=np.int64)
        self.queue_hist = np.zeros((J, hist_bins))
        self.log_t = np.zeros(log_capacity)
        self.log_ev = np.zeros((log_capacity, 3), dtype=np.int64)
        self.mode: str | None = None
        self.routing_rates: np.ndarray | None = None

    # ------------------------------------------------------------------ state
    @property
    def clock(self) -> float:
        return float(self.fv[K.F_CLOCK])

    @property
    def number_in_system(self) -> int:
        return int(self.iv[K.I_NSYS])

    @property
    def area(self) -> float:
        return float(self.fv[K.F_AREA])

    @property
    def area_sq(self) -> float:
        return float(self.fv[K.F_AREA2])

    def in_service(self) -> np.ndarray:
        """Per-type count of customers currently in service."""
        out = np.zeros(self.I, dtype=np.int64)
        for c in self.srv_cust:
            if c >= 0:
                out[self.c_type[c]] += 1
        return out

    def waiting(self) -> np.ndarray:
        """Per-type count of customers waiting in any queue."""
        out = np.zeros(self.I, dtype=np.int64)
        for ids in (self.virtual_queue(j) for j in range(self.J)):
            np.add.at(out, self.c_type[ids], 1)
        for i in range(self.I):
            out[i] += self.pq_len[i]
        return out

    def _walk(self, head, qlen, q) -> np.ndarray:
        out = np.empty(int(qlen[q]), dtype=np.int64)
        c = head[q]
        for k in range(len(out)):
            out[k] = c
            c = self.c_next[c]
        return out

    def virtual_queue(self, j: int) -> np.ndarray:
        """Ids of customers waiting (not in service) for server ``j``."""
        return self._walk(self.vq_head, self.vq_len, j)

    def type_queue(self, i: int) -> np.ndarray:
        return self._walk(self.pq_head, self.pq_len, i)

    def customer(self, cid: int) -> Customer:
        return Customer(int(cid), int(self.c_type[cid]), float(self.c_time[cid]))

    def event_log(self) -> list[tuple[float, str, int, int]]:
        """Most recent events, oldest first, as ``(time, kind, type, server)``."""
        cap = len(self.log_t)
        n = min(int(self.iv[K.I_LOGCOUNT]), cap)
        start = (int(self.iv[K.I_LOGPOS]) - n) % cap if cap else 0
        names = {K.EV_ARRIVAL: "arrival", K.EV_START: "start", K.EV_DEPART: "departure"}
        out = []
        for k in range(n):
            p = (start + k) % cap
            code, i, j = self.log_ev[p]
            out.append((float(self.log_t[p]), names[int(code)], int(i), int(j)))
        return out

    def set_theta(self, theta) -> None:
        self.theta[:] = _theta_matrix(self.network, theta)

    # ---------------------------------------------------------------- buffers
    def _refill_arrivals(self, i: int) -> None:
        gaps = self.streams.stream("arrivals", i).exponential(1.0 / self.lam[i], self.chunk)
        times = self._arr_last[i] + np.cumsum(gaps)
        self._arr_last[i] = times[-1]
        self.arr_t[i] = times
        self.arr_ru[i] = self.streams.stream("routing", i).random(self.chunk)
        self.arr_pu[i] = self.streams.stream("payoffs", i).random(self.chunk)
        self.arr_cur[i] = 0

    def _refill_service(self, j: int) -> None:
        self.svc[j] = self.streams.stream("services", j).standard_exponential(self.chunk)
        self.svc_cur[j] = 0

    def _refill_decisions(self) -> None:
        self.dec[:] = self.streams.stream("decisions").random(self.chunk)
        self.iv[K.I_DEC] = 0

    def _grow_customers(self) -> None:
        n = 2 * len(self.c_type)
        for name in ("c_type", "c_time", "c_pay", "c_next"):
            old = getattr(self, name)
            new = np.full(n, -1, dtype=old.dtype) if name == "c_next" else np.zeros(n, dtype=old.dtype)
            new[:len(old)] = old
            setattr(self, name, new)

    def _service_refill(self, status: int) -> None:
        if status == K.NEED_ARRIVALS:
            self._refill_arrivals(int(self.iv[K.I_NEED]))
        elif status == K.NEED_SERVICE:
            self._refill_service(int(self.iv[K.I_NEED]))
        elif status == K.NEED_DECISIONS:
            self._refill_decisions()
        elif status == K.NEED_CUSTOMERS:
            self._grow_customers()
        else:
            raise SimulationError(f"unexpected kernel status {status}")

    def _advance(self, t_end: float, discipline: int) -> None:
        while True:
            status = K.advance(
                t_end, discipline, self.iv, self.fv,
                self.c_type, self.c_time, self.c_pay, self.c_next,
                self.vq_head, self.vq_tail, self.vq_len, self.pq_head, self.pq_tail, self.pq_len,
                self.srv_cust, self.srv_done, self.srv_idle,
                self.arr_t, self.arr_ru, self.arr_pu, self.arr_cur,
                self.svc, self.svc_cur, self.dec,
                self.mu, self.route_cdf, self.route_srv, self.route_n,
                self.srv_types, self.srv_ntypes, self.type_srvs, self.type_nsrvs,
                self.theta, self.departures, self.payoffs, self.arrivals, self.queue_hist,
                self.log_t, self.log_ev)
            if status == K.DONE:
                return
            self._service_refill(status)

    def _enter_mode(self, mode: str) -> None:
        if self.mode is None:
            self.mode = mode
        elif self.mode != mode:
            raise SimulationError(f"simulation is in {self.mode} mode, cannot switch to {mode}")

    # ---------------------------------------------------------------- routing
    def _set_routing(self, rates) -> np.ndarray:
        x = np.zeros((self.I, self.J))
        rates = np.asarray(rates, dtype=float)
        if rates.shape == (self.network.num_lines,):
            for (i, j), v in zip(self.network.lines, rates):
                x[i, j] = v
        elif rates.shape == (self.I, self.J):
            x[:] = rates
        else:
            raise SimulationError(f"routing rates of shape {rates.shape}")
        if np.any(x < 0) or np.any(x[~self.compat] != 0):
            raise SimulationError("routing rates must be nonnegative and on compatible lines")
        if not np.allclose(x.sum(axis=1), self.lam, rtol=1e-12, atol=1e-12):
            raise SimulationError("routing rates of each type must sum to its arrival rate")
        for i in range(self.I):
            srvs = [j for j in self.network.servers_of(i) if x[i, j] > 0]
            cdf = np.cumsum(x[i, srvs]) / self.lam[i]
            cdf[-1] = 1.0
            self.route_n[i] = len(srvs)
            self.route_srv[i, :len(srvs)] = srvs
            self.route_cdf[i, :len(srvs)] = cdf
        self.routing_rates = x
        return x

    def run_interval(self, rates, duration: float) -> None:
        """Route arrivals at ``rates`` (line vector or I x J) for ``duration``."""
        if duration < 0:
            raise SimulationError("duration must be nonnegative")
        self._enter_mode("routing")
        self._set_routing(rates)
        self._advance(self.clock + duration, K.ROUTING)

    def reallocate(self, rates) -> None:
        """Reassign every waiting customer to a virtual queue drawn from ``rates``.

        Customers in service stay put; each queue is FCFS by arrival afterwards.
        """
        self._enter_mode("routing")
        x = self._set_routing(rates)
        total = int(self.vq_len.sum())
        if total == 0:
            return
        ids = np.empty(total, dtype=np.int64)
        K.collect_waiting(self.vq_head, self.vq_len, self.c_next, ids)
        ids.sort()
        u = self.streams.stream("reallocation").random(total)
        types = self.c_type[ids]
        targets = np.empty(total, dtype=np.int64)
        for i in range(self.I):
            sel = types == i
            if not sel.any():
                continue
            srvs = np.array([j for j in range(self.J) if x[i, j] > 0])
            cdf = np.cumsum(x[i, srvs]) / self.lam[i]
            cdf[-1] = 1.0
            targets[sel] = srvs[np.searchsorted(cdf, u[sel], side="right")]
        K.relink(ids, targets, self.vq_head, self.vq_tail, self.vq_len, self.c_next)
        # idle servers with a nonempty queue start serving immediately
        self._advance(self.clock, K.ROUTING)

    # ------------------------------------------------------------- allocation
    def run_allocation_policy(self, policy, duration: float, *, compiled: bool | None = None) -> None:
        """Simulate ``duration`` time units with server assignment by ``policy``."""
        if duration < 0:
            raise SimulationError("duration must be nonnegative")
        self._enter_mode("allocation")
        code = getattr(policy, "discipline", None)
        if compiled is None:
            compiled = code is not None
        if compiled:
            if code is None:
                raise SimulationError("policy has no compiled discipline")
            self._advance(self.clock + duration, code)
        else:
            self._advance_hooks(self.clock + duration, policy)

    def decision_uniform(self) -> float:
        """Next uniform from the allocation-decision stream."""
        if self.iv[K.I_DEC] >= len(self.dec):
            self._refill_decisions()
        u = float(self.dec[self.iv[K.I_DEC]])
        self.iv[K.I_DEC] += 1
        return u

    def _start(self, j: int, c: int) -> None:
        if self.svc_cur[j] >= self.chunk:
            self._refill_service(j)
        self.srv_cust[j] = c
        self.srv_done[j] = self.clock + self.svc[j, self.svc_cur[j]] / self.mu[j]
        self.svc_cur[j] += 1
        self._log(K.EV_START, int(self.c_type[c]), j)

    def _log(self, code, i, j) -> None:
        cap = len(self.log_t)
        if cap:
            pos = int(self.iv[K.I_LOGPOS])
            self.log_t[pos] = self.clock
            self.log_ev[pos] = (code, i, j)
            self.iv[K.I_LOGPOS] = (pos + 1) % cap
            self.iv[K.I_LOGCOUNT] += 1

    def _pop_type(self, i: int) -> int:
        c = int(self.pq_head[i])
        self.pq_head[i] = self.c_next[c]
        self.pq_len[i] -= 1
        if self.pq_len[i] == 0:
            self.pq_head[i] = self.pq_tail[i] = -1
        return c

    def _push_type(self, i: int, c: int) -> None:
        self.c_next[c] = -1
        if self.pq_len[i] == 0:
            self.pq_head[i] = c
        else:
            self.c_next[self.pq_tail[i]] = c
        self.pq_tail[i] = c
        self.pq_len[i] += 1

    def _advance_hooks(self, t_end: float, policy) -> None:
        """Interpreted event loop calling the policy hooks.

        Consumes random buffers exactly like the compiled loop.
        """
        hbins = self.queue_hist.shape[1]
        while True:
            for i in range(self.I):
                if self.arr_cur[i] >= self.chunk:
                    self._refill_arrivals(i)
            if self.iv[K.I_NCUST] >= len(self.c_type):
                self._grow_customers()
            nxt_arr = self.arr_t[np.arange(self.I), self.arr_cur]
            ia = int(np.argmin(nxt_arr))
            js = int(np.argmin(self.srv_done))
            if nxt_arr[ia] <= self.srv_done[js]:
                t_next, kind, who = float(nxt_arr[ia]), 0, ia
            else:
                t_next, kind, who = float(self.srv_done[js]), 1, js
            stop = t_next > t_end
            t_new = t_end if stop else t_next
            dt = t_new - self.clock
            if dt > 0:
                n = int(self.iv[K.I_NSYS])
                self.fv[K.F_AREA] += n * dt
                self.fv[K.F_AREA2] += n * n * dt
                busy = (self.srv_cust >= 0).astype(np.int64)
                self.queue_hist[np.arange(self.J), np.minimum(self.vq_len + busy, hbins - 1)] += dt
                self.fv[K.F_CLOCK] = t_new
            if stop:
                return
            if kind == 0:
                i = who
                c = int(self.iv[K.I_NCUST])
                self.iv[K.I_NCUST] += 1
                pos = self.arr_cur[i]
                self.c_type[c], self.c_time[c], self.c_pay[c] = i, self.clock, self.arr_pu[i, pos]
                self.c_next[c] = -1
                self.arr_cur[i] += 1
                self.arrivals[i] += 1
                self.iv[K.I_NSYS] += 1
                self._log(K.EV_ARRIVAL, i, -1)
                idle = [j for j in self.network.servers_of(i) if self.srv_cust[j] < 0]
                choice = policy.on_arrival(self.customer(c), idle, self) if idle else None
                if choice is None:
                    self._push_type(i, c)
                else:
                    if choice not in idle:
                        raise SimulationError(f"policy chose server {choice}, not an idle "
                                              f"compatible server of type {i}")
                    self._start(choice, c)
            else:
                j = who
                c = int(self.srv_cust[j])
                i = int(self.c_type[c])
                self.departures[i, j] += 1
                if self.c_pay[c] < self.theta[i, j]:
                    self.payoffs[i, j] += 1
                self.iv[K.I_NSYS] -= 1
                self._log(K.EV_DEPART, i, j)
                heads = {q: self.customer(self.pq_head[q]) for q in self.network.types_of(j)
                         if self.pq_len[q] > 0}
                choice = policy.on_completion(j, heads, self) if heads else None
                if choice is None:
                    self.srv_cust[j] = -1
                    self.srv_done[j] = np.inf
                    self.srv_idle[j] = self.clock
                else:
                    if choice not in heads:
                        raise SimulationError(f"policy chose type {choice}, not a nonempty "
                                              f"compatible queue of server {j}")
                    self._start(j, self._pop_type(choice))
