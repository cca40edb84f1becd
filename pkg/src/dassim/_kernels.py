"""Compiled inner loops of the dissemination engine.

All state lives in flat numpy arrays owned by ``engine.World``. Cells are
addressed as ``row * n_cols + col``; a cell's position inside a row topic is
its column and inside a column topic its row. Directed mesh edges carry a
bitmap (one bit per position) of cells already sent over the edge or
received over its reverse.
"""

import numpy as np
from numba import njit

# indices into the per-step stats vector
DELIVERED = 0      # custody samples held, with validator multiplicity
READY = 1          # custodians holding all their custody cells
ARRIVALS = 2       # messages delivered this step
ACQUIRED = 3       # cells newly held this step (arrivals + repairs)
REPAIRED = 4       # cells added by reconstruction this step
SENT = 5           # messages sent this step
N_STATS = 6


@njit(cache=True)
def _acquire(u, cell, held, row_cnt, col_cnt, row_mult, col_mult, have, need,
             n_rows, n_cols, row_k, col_k, malicious, log, log_start, log_len,
             work_node, work_line, work_n, stats):
    held[u, cell] = 1
    r = cell // n_cols
    c = cell - r * n_cols
    row_cnt[u, r] += 1
    col_cnt[u, c] += 1
    gain = row_mult[u, r] + col_mult[u, c]
    if gain > 0:
        have[u] += gain
        stats[DELIVERED] += gain
        if have[u] == need[u]:
            stats[READY] += 1
    stats[ACQUIRED] += 1
    if malicious[u] == 0:
        log[log_start[u] + log_len[u]] = cell
        log_len[u] += 1
    # a line crosses its threshold exactly once since counts grow by one
    if row_mult[u, r] > 0 and row_k < n_cols and row_cnt[u, r] == row_k:
        work_node[work_n[0]] = u
        work_line[work_n[0]] = r
        work_n[0] += 1
    if col_mult[u, c] > 0 and col_k < n_rows and col_cnt[u, c] == col_k:
        work_node[work_n[0]] = u
        work_line[work_n[0]] = n_rows + c
        work_n[0] += 1


@njit(cache=True)
def deliver_and_repair(slot, msg_edge, msg_pos, msg_count,
                       edge_dst, edge_topic, edge_rev, known,
                       held, row_cnt, col_cnt, row_mult, col_mult, have, need,
                       n_rows, n_cols, row_k, col_k, malicious,
                       log, log_start, log_len, work_node, work_line, stats):
    """Deliver every message due in ``slot``, then run custody-restricted repair."""
    work_n = np.zeros(1, dtype=np.int64)
    for i in range(msg_count[slot]):
        e = msg_edge[slot, i]
        pos = msg_pos[slot, i]
        v = edge_dst[e]
        t = edge_topic[e]
        if t < n_rows:
            cell = t * n_cols + pos
        else:
            cell = pos * n_cols + (t - n_rows)
        rev = edge_rev[e]
        if rev >= 0:
            known[rev, pos >> 6] |= np.uint64(1) << np.uint64(pos & 63)
        stats[ARRIVALS] += 1
        if held[v, cell] == 0:
            _acquire(v, cell, held, row_cnt, col_cnt, row_mult, col_mult, have, need,
                     n_rows, n_cols, row_k, col_k, malicious, log, log_start, log_len,
                     work_node, work_line, work_n, stats)
    msg_count[slot] = 0

    j = 0
    while j < work_n[0]:
        u = work_node[j]
        line = work_line[j]
        j += 1
        if line < n_rows:
            for c in range(n_cols):
                cell = line * n_cols + c
                if held[u, cell] == 0:
                    stats[REPAIRED] += 1
                    _acquire(u, cell, held, row_cnt, col_cnt, row_mult, col_mult, have, need,
                             n_rows, n_cols, row_k, col_k, malicious, log, log_start, log_len,
                             work_node, work_line, work_n, stats)
        else:
            c = line - n_rows
            for r in range(n_rows):
                cell = r * n_cols + c
                if held[u, cell] == 0:
                    stats[REPAIRED] += 1
                    _acquire(u, cell, held, row_cnt, col_cnt, row_mult, col_mult, have, need,
                             n_rows, n_cols, row_k, col_k, malicious, log, log_start, log_len,
                             work_node, work_line, work_n, stats)


@njit(cache=True)
def send(arrival_slot, msg_edge, msg_pos, msg_count,
         sub_slot, slot_start, slot_end, known,
         n_rows, n_cols, cell_bits, malicious,
         log, log_start, log_len, log_cur, bucket, step_bits, sent_cells, stats):
    """Drain each node's queue in FIFO order while its token bucket allows.

    The queue of node u is ``log[u][log_cur[u]:]``: every held cell, in the
    order acquired, fanned out to all neighbours on each subscribed topic
    containing it. Targets already known to hold the cell are skipped. After
    sending, buckets are refilled; a drained node forfeits its idle whole-cell
    capacity and carries only the sub-cell remainder.
    """
    n = log_len.shape[0]
    for u in range(n):
        sent = 0
        budget = bucket[u]
        if malicious[u] == 0:
            while log_cur[u] < log_len[u]:
                cell = log[log_start[u] + log_cur[u]]
                r = cell // n_cols
                c = cell - r * n_cols
                blocked = False
                for side in range(2):
                    if side == 0:
                        t = r
                        pos = c
                    else:
                        t = n_rows + c
                        pos = r
                    s = sub_slot[u, t]
                    if s < 0:
                        continue
                    w = pos >> 6
                    bit = np.uint64(1) << np.uint64(pos & 63)
                    for e in range(slot_start[s], slot_end[s]):
                        if known[e, w] & bit:
                            continue
                        if budget < cell_bits:
                            blocked = True
                            break
                        known[e, w] |= bit
                        budget -= cell_bits
                        k = msg_count[arrival_slot]
                        msg_edge[arrival_slot, k] = e
                        msg_pos[arrival_slot, k] = pos
                        msg_count[arrival_slot] = k + 1
                        sent += 1
                    if blocked:
                        break
                if blocked:
                    break
                log_cur[u] += 1
        if log_cur[u] == log_len[u]:
            budget = budget % cell_bits
        bucket[u] = budget + step_bits[u]
        sent_cells[u] = sent
        stats[SENT] += sent
