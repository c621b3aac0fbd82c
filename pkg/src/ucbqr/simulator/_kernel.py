"""Compiled event loop.

The loop runs until ``t_end`` or until one of the pre-drawn random buffers
(or the customer table) is exhausted, in which case it returns a status code
and the caller refills before calling again.  The loop only mutates state
after its buffer checks pass, so a refill-and-resume is indistinguishable from
an uninterrupted run.
"""

import numba as nb
import numpy as np

# status codes
DONE = 0
NEED_ARRIVALS = 1
NEED_SERVICE = 2
NEED_DECISIONS = 3
NEED_CUSTOMERS = 4

# disciplines
ROUTING = 0
FCFS_ALIS = 1
GREEDY = 2
RANDOM = 3

# integer scalars
I_NSYS = 0
I_NCUST = 1
I_DEC = 2
I_LOGPOS = 3
I_LOGCOUNT = 4
I_NEED = 5

# float scalars
F_CLOCK = 0
F_AREA = 1
F_AREA2 = 2

# event log codes
EV_ARRIVAL = 0
EV_START = 1
EV_DEPART = 2


@nb.njit(cache=True)
def _log(log_t, log_ev, iv, t, code, i, j):
    cap = log_t.shape[0]
    if cap == 0:
        return
    pos = iv[I_LOGPOS]
    log_t[pos] = t
    log_ev[pos, 0] = code
    log_ev[pos, 1] = i
    log_ev[pos, 2] = j
    iv[I_LOGPOS] = (pos + 1) % cap
    iv[I_LOGCOUNT] += 1


@nb.njit(cache=True)
def _push(head, tail, qlen, nxt, q, c):
    nxt[c] = -1
    if qlen[q] == 0:
        head[q] = c
    else:
        nxt[tail[q]] = c
    tail[q] = c
    qlen[q] += 1


@nb.njit(cache=True)
def _pop(head, tail, qlen, nxt, q):
    c = head[q]
    head[q] = nxt[c]
    qlen[q] -= 1
    if qlen[q] == 0:
        head[q] = -1
        tail[q] = -1
    return c


@nb.njit(cache=True)
def advance(t_end, discipline, iv, fv,
            c_type, c_time, c_pay, c_next,
            vq_head, vq_tail, vq_len, pq_head, pq_tail, pq_len,
            srv_cust, srv_done, srv_idle,
            arr_t, arr_ru, arr_pu, arr_cur,
            svc, svc_cur, dec,
            mu, route_cdf, route_srv, route_n,
            srv_types, srv_ntypes, type_srvs, type_nsrvs,
            theta, D, P, arrivals, hist, log_t, log_ev):
    n_types = arr_t.shape[0]
    n_srv = svc.shape[0]
    buf = arr_t.shape[1]
    sbuf = svc.shape[1]
    hbins = hist.shape[1]
    cap = c_type.shape[0]
    clock = fv[F_CLOCK]

    # idle servers with waiting customers (after a reallocation) start at once
    if discipline == ROUTING:
        for j in range(n_srv):
            if srv_cust[j] < 0 and vq_len[j] > 0:
                if svc_cur[j] >= sbuf:
                    iv[I_NEED] = j
                    return NEED_SERVICE
                c = _pop(vq_head, vq_tail, vq_len, c_next, j)
                srv_cust[j] = c
                srv_done[j] = clock + svc[j, svc_cur[j]] / mu[j]
                svc_cur[j] += 1
                _log(log_t, log_ev, iv, clock, EV_START, c_type[c], j)

    while True:
        for i in range(n_types):
            if arr_cur[i] >= buf:
                iv[I_NEED] = i
                return NEED_ARRIVALS
        for j in range(n_srv):
            if svc_cur[j] >= sbuf:
                iv[I_NEED] = j
                return NEED_SERVICE
        if iv[I_DEC] >= dec.shape[0]:
            return NEED_DECISIONS
        if iv[I_NCUST] >= cap:
            return NEED_CUSTOMERS

        t_next = np.inf
        kind = -1
        who = -1
        for i in range(n_types):
            t = arr_t[i, arr_cur[i]]
            if t < t_next:
                t_next = t
                kind = 0
                who = i
        for j in range(n_srv):
            t = srv_done[j]
            if t < t_next:
                t_next = t
                kind = 1
                who = j

        stop = t_next > t_end
        t_new = t_end if stop else t_next
        dt = t_new - clock
        if dt > 0:
            n = iv[I_NSYS]
            fv[F_AREA] += n * dt
            fv[F_AREA2] += n * n * dt
            for j in range(n_srv):
                k = vq_len[j] + (1 if srv_cust[j] >= 0 else 0)
                if k >= hbins:
                    k = hbins - 1
                hist[j, k] += dt
            clock = t_new
        fv[F_CLOCK] = clock
        if stop:
            return DONE

        if kind == 0:
            i = who
            pos = arr_cur[i]
            c = iv[I_NCUST]
            iv[I_NCUST] = c + 1
            c_type[c] = i
            c_time[c] = clock
            c_pay[c] = arr_pu[i, pos]
            c_next[c] = -1
            arr_cur[i] = pos + 1
            arrivals[i] += 1
            iv[I_NSYS] += 1
            _log(log_t, log_ev, iv, clock, EV_ARRIVAL, i, -1)
            target = -1
            if discipline == ROUTING:
                u = arr_ru[i, pos]
                target = route_srv[i, route_n[i] - 1]
                for k in range(route_n[i]):
                    if u < route_cdf[i, k]:
                        target = route_srv[i, k]
                        break
                if srv_cust[target] >= 0:
                    _push(vq_head, vq_tail, vq_len, c_next, target, c)
                    target = -1
            else:
                best = -1
                if discipline == RANDOM:
                    n_idle = 0
                    for k in range(type_nsrvs[i]):
                        if srv_cust[type_srvs[i, k]] < 0:
                            n_idle += 1
                    if n_idle > 0:
                        pick = int(dec[iv[I_DEC]] * n_idle)
                        iv[I_DEC] += 1
                        for k in range(type_nsrvs[i]):
                            j = type_srvs[i, k]
                            if srv_cust[j] < 0:
                                if pick == 0:
                                    best = j
                                    break
                                pick -= 1
                else:
                    for k in range(type_nsrvs[i]):
                        j = type_srvs[i, k]
                        if srv_cust[j] >= 0:
                            continue
                        if best < 0:
                            best = j
                        elif discipline == FCFS_ALIS:
                            if srv_idle[j] < srv_idle[best]:
                                best = j
                        elif theta[i, j] > theta[i, best]:
                            best = j
                if best < 0:
                    _push(pq_head, pq_tail, pq_len, c_next, i, c)
                target = best
            if target >= 0:
                srv_cust[target] = c
                srv_done[target] = clock + svc[target, svc_cur[target]] / mu[target]
                svc_cur[target] += 1
                _log(log_t, log_ev, iv, clock, EV_START, i, target)
        else:
            j = who
            c = srv_cust[j]
            i = c_type[c]
            D[i, j] += 1
            if c_pay[c] < theta[i, j]:
                P[i, j] += 1
            iv[I_NSYS] -= 1
            _log(log_t, log_ev, iv, clock, EV_DEPART, i, j)
            nxt = -1
            if discipline == ROUTING:
                if vq_len[j] > 0:
                    nxt = _pop(vq_head, vq_tail, vq_len, c_next, j)
            else:
                best = -1
                if discipline == RANDOM:
                    n_ne = 0
                    for k in range(srv_ntypes[j]):
                        if pq_len[srv_types[j, k]] > 0:
                            n_ne += 1
                    if n_ne > 0:
                        pick = int(dec[iv[I_DEC]] * n_ne)
                        iv[I_DEC] += 1
                        for k in range(srv_ntypes[j]):
                            q = srv_types[j, k]
                            if pq_len[q] > 0:
                                if pick == 0:
                                    best = q
                                    break
                                pick -= 1
                else:
                    for k in range(srv_ntypes[j]):
                        q = srv_types[j, k]
                        if pq_len[q] == 0:
                            continue
                        if best < 0:
                            best = q
                        elif discipline == FCFS_ALIS:
                            if pq_head[q] < pq_head[best]:
                                best = q
                        elif theta[q, j] > theta[best, j]:
                            best = q
                if best >= 0:
                    nxt = _pop(pq_head, pq_tail, pq_len, c_next, best)
            if nxt >= 0:
                srv_cust[j] = nxt
                srv_done[j] = clock + svc[j, svc_cur[j]] / mu[j]
                svc_cur[j] += 1
                _log(log_t, log_ev, iv, clock, EV_START, c_type[nxt], j)
            else:
                srv_cust[j] = -1
                srv_done[j] = np.inf
                srv_idle[j] = clock


@nb.njit(cache=True)
def collect_waiting(head, qlen, nxt, out):
    """Write ids of all queued customers into ``out``; return the count."""
    n = 0
    for q in range(head.shape[0]):
        c = head[q]
        for _ in range(qlen[q]):
            out[n] = c
            n += 1
            c = nxt[c]
    return n


@nb.njit(cache=True)
def relink(ids, targets, head, tail, qlen, nxt):
    """Rebuild the queues from customers ``ids`` (ascending) and their targets."""
    for q in range(head.shape[0]):
        head[q] = -1
        tail[q] = -1
        qlen[q] = 0
    for k in range(ids.shape[0]):
        _push(head, tail, qlen, nxt, targets[k], ids[k])
