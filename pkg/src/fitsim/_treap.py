"""Array-backed treap kernels shared by :class:`fitsim.site_index.SiteIndex`
and the batch simulation loop.

Each node is one site. ``nodes`` holds six int64 columns per node (left,
right, parent, site size, subtree population, subtree site count); keys and
heap priorities live in parallel arrays. ``meta`` carries the root, the next
never-used slot, the free-list top, and the priority counter.

Priorities come from splitmix64 over an insertion counter, so the tree shape
is a deterministic function of the operation sequence.
"""

import numpy as np
from numba import njit

LEFT, RIGHT, PARENT, SIZE, POP, NSITES = 0, 1, 2, 3, 4, 5
N_COLS = 6

ROOT, NEXT, FREE_TOP, PRIO_CTR = 0, 1, 2, 3
N_META = 4

# event kinds
MUTATION, INHERITANCE, DEATH, IDLE = 0, 1, 2, 3

PROPORTIONAL, UNIFORM_SENATE = 0, 1

_INV_2_53 = 1.0 / 9007199254740992.0


def allocate(capacity):
    nodes = np.full((capacity, N_COLS), -1, dtype=np.int64)
    keys = np.zeros(capacity, dtype=np.float64)
    prio = np.zeros(capacity, dtype=np.uint64)
    free = np.zeros(capacity, dtype=np.int64)
    meta = np.zeros(N_META, dtype=np.int64)
    meta[ROOT] = -1
    return nodes, keys, prio, meta, free


def grow(nodes, keys, prio, free, capacity):
    old = nodes.shape[0]
    new_nodes = np.full((capacity, N_COLS), -1, dtype=np.int64)
    new_nodes[:old] = nodes
    new_keys = np.zeros(capacity, dtype=np.float64)
    new_keys[:old] = keys
    new_prio = np.zeros(capacity, dtype=np.uint64)
    new_prio[:old] = prio
    new_free = np.zeros(capacity, dtype=np.int64)
    new_free[:old] = free
    return new_nodes, new_keys, new_prio, new_free


@njit(cache=True)
def splitmix64(x):
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def total_population(nodes, meta):
    root = meta[ROOT]
    if root == -1:
        return 0
    return nodes[root, POP]


@njit(cache=True)
def total_sites(nodes, meta):
    root = meta[ROOT]
    if root == -1:
        return 0
    return nodes[root, NSITES]


@njit(cache=True)
def _pull(nodes, i):
    pop = nodes[i, SIZE]
    cnt = 1
    child = nodes[i, LEFT]
    if child != -1:
        pop += nodes[child, POP]
        cnt += nodes[child, NSITES]
    child = nodes[i, RIGHT]
    if child != -1:
        pop += nodes[child, POP]
        cnt += nodes[child, NSITES]
    nodes[i, POP] = pop
    nodes[i, NSITES] = cnt


@njit(cache=True)
def _rotate_up(nodes, meta, x):
    p = nodes[x, PARENT]
    g = nodes[p, PARENT]
    if nodes[p, LEFT] == x:
        b = nodes[x, RIGHT]
        nodes[p, LEFT] = b
        if b != -1:
            nodes[b, PARENT] = p
        nodes[x, RIGHT] = p
    else:
        b = nodes[x, LEFT]
        nodes[p, RIGHT] = b
        if b != -1:
            nodes[b, PARENT] = p
        nodes[x, LEFT] = p
    nodes[p, PARENT] = x
    nodes[x, PARENT] = g
    if g == -1:
        meta[ROOT] = x
    elif nodes[g, LEFT] == p:
        nodes[g, LEFT] = x
    else:
        nodes[g, RIGHT] = x
    _pull(nodes, p)
    _pull(nodes, x)


@njit(cache=True)
def find(nodes, keys, meta, key):
    cur = meta[ROOT]
    while cur != -1:
        k = keys[cur]
        if key == k:
            return cur
        if key < k:
            cur = nodes[cur, LEFT]
        else:
            cur = nodes[cur, RIGHT]
    return -1


@njit(cache=True)
def insert(nodes, keys, prio, meta, free, key):
    """Insert a size-1 site; returns the node id, or -1 if the key exists.

    The caller guarantees a free slot.
    """
    cur = meta[ROOT]
    par = -1
    go_left = False
    while cur != -1:
        k = keys[cur]
        if key == k:
            return -1
        par = cur
        go_left = key < k
        if go_left:
            cur = nodes[cur, LEFT]
        else:
            cur = nodes[cur, RIGHT]

    if meta[FREE_TOP] > 0:
        meta[FREE_TOP] -= 1
        x = free[meta[FREE_TOP]]
    else:
        x = meta[NEXT]
        meta[NEXT] += 1
    meta[PRIO_CTR] += 1
    prio[x] = splitmix64(np.uint64(meta[PRIO_CTR]))
    keys[x] = key
    nodes[x, LEFT] = -1
    nodes[x, RIGHT] = -1
    nodes[x, PARENT] = par
    nodes[x, SIZE] = 1
    nodes[x, POP] = 1
    nodes[x, NSITES] = 1
    if par == -1:
        meta[ROOT] = x
        return x
    if go_left:
        nodes[par, LEFT] = x
    else:
        nodes[par, RIGHT] = x
    a = par
    while a != -1:
        nodes[a, POP] += 1
        nodes[a, NSITES] += 1
        a = nodes[a, PARENT]
    while nodes[x, PARENT] != -1 and prio[x] > prio[nodes[x, PARENT]]:
        _rotate_up(nodes, meta, x)
    return x


@njit(cache=True)
def add_members(nodes, i, delta):
    nodes[i, SIZE] += delta
    a = i
    while a != -1:
        nodes[a, POP] += delta
        a = nodes[a, PARENT]


@njit(cache=True)
def select_by_population(nodes, meta, target):
    """Node owning the ``target``-th individual (0-based, fitness-ascending)."""
    cur = meta[ROOT]
    while True:
        left = nodes[cur, LEFT]
        lp = 0 if left == -1 else nodes[left, POP]
        if target < lp:
            cur = left
            continue
        target -= lp
        if target < nodes[cur, SIZE]:
            return cur
        target -= nodes[cur, SIZE]
        cur = nodes[cur, RIGHT]


@njit(cache=True)
def select_by_rank(nodes, meta, target):
    """Node of the ``target``-th site (0-based, fitness-ascending)."""
    cur = meta[ROOT]
    while True:
        left = nodes[cur, LEFT]
        ls = 0 if left == -1 else nodes[left, NSITES]
        if target < ls:
            cur = left
            continue
        if target == ls:
            return cur
        target -= ls + 1
        cur = nodes[cur, RIGHT]


@njit(cache=True)
def leftmost(nodes, meta):
    cur = meta[ROOT]
    if cur == -1:
        return -1
    while nodes[cur, LEFT] != -1:
        cur = nodes[cur, LEFT]
    return cur


@njit(cache=True)
def _unlink_leftmost(nodes, meta, free, m):
    r = nodes[m, RIGHT]
    p = nodes[m, PARENT]
    if p == -1:
        meta[ROOT] = r
    else:
        nodes[p, LEFT] = r
    if r != -1:
        nodes[r, PARENT] = p
    removed = nodes[m, SIZE]
    a = p
    while a != -1:
        nodes[a, POP] -= removed
        nodes[a, NSITES] -= 1
        a = nodes[a, PARENT]
    nodes[m, LEFT] = -1
    nodes[m, RIGHT] = -1
    nodes[m, PARENT] = -1
    nodes[m, SIZE] = 0
    nodes[m, POP] = 0
    nodes[m, NSITES] = 0
    free[meta[FREE_TOP]] = m
    meta[FREE_TOP] += 1


@njit(cache=True)
def remove_lowest_member(nodes, keys, meta, free):
    m = leftmost(nodes, meta)
    key = keys[m]
    if nodes[m, SIZE] > 1:
        add_members(nodes, m, -1)
    else:
        _unlink_leftmost(nodes, meta, free, m)
    return key


@njit(cache=True)
def remove_lowest_site(nodes, keys, meta, free):
    m = leftmost(nodes, meta)
    key = keys[m]
    size = nodes[m, SIZE]
    _unlink_leftmost(nodes, meta, free, m)
    return key, size


@njit(cache=True)
def population_at_or_below(nodes, keys, meta, f):
    acc = 0
    cur = meta[ROOT]
    while cur != -1:
        if keys[cur] <= f:
            left = nodes[cur, LEFT]
            if left != -1:
                acc += nodes[left, POP]
            acc += nodes[cur, SIZE]
            cur = nodes[cur, RIGHT]
        else:
            cur = nodes[cur, LEFT]
    return acc


@njit(cache=True)
def export_sites(nodes, keys, meta):
    """In-order (fitness-ascending) copy of all (key, size) pairs."""
    n = total_sites(nodes, meta)
    out_keys = np.empty(n, dtype=np.float64)
    out_sizes = np.empty(n, dtype=np.int64)
    stack = np.empty(128, dtype=np.int64)
    top = 0
    cur = meta[ROOT]
    j = 0
    while cur != -1 or top > 0:
        while cur != -1:
            if top == stack.shape[0]:
                bigger = np.empty(2 * top, dtype=np.int64)
                bigger[:top] = stack
                stack = bigger
            stack[top] = cur
            top += 1
            cur = nodes[cur, LEFT]
        top -= 1
        cur = stack[top]
        out_keys[j] = keys[cur]
        out_sizes[j] = nodes[cur, SIZE]
        j += 1
        cur = nodes[cur, RIGHT]
    return out_keys, out_sizes


@njit(cache=True)
def check_aggregates(nodes, keys, meta):
    """Recompute every subtree aggregate bottom-up; return the number of
    mismatches (BST order, heap order, parent links, and cached sums)."""
    bad = 0
    root = meta[ROOT]
    if root == -1:
        return 0
    if nodes[root, PARENT] != -1:
        bad += 1
    # post-order via explicit stack
    n = nodes[root, NSITES]
    order = np.empty(n, dtype=np.int64)
    stack = np.empty(n + 1, dtype=np.int64)
    top = 0
    stack[top] = root
    top += 1
    j = 0
    while top > 0:
        top -= 1
        cur = stack[top]
        if j >= n:
            return bad + 1
        order[j] = cur
        j += 1
        for col in (LEFT, RIGHT):
            child = nodes[cur, col]
            if child != -1:
                if top >= n + 1:
                    return bad + 1
                stack[top] = child
                top += 1
    if j != n:
        bad += 1
    for idx in range(j - 1, -1, -1):
        cur = order[idx]
        pop = nodes[cur, SIZE]
        cnt = 1
        if nodes[cur, SIZE] < 1:
            bad += 1
        left = nodes[cur, LEFT]
        right = nodes[cur, RIGHT]
        if left != -1:
            pop += nodes[left, POP]
            cnt += nodes[left, NSITES]
            if nodes[left, PARENT] != cur or not keys[left] < keys[cur]:
                bad += 1
        if right != -1:
            pop += nodes[right, POP]
            cnt += nodes[right, NSITES]
            if nodes[right, PARENT] != cur or not keys[right] > keys[cur]:
                bad += 1
        if pop != nodes[cur, POP] or cnt != nodes[cur, NSITES]:
            bad += 1
    return bad


@njit(cache=True)
def run_steps(nodes, keys, prio, meta, free, words, start, stop,
              thr_p, thr_r, variant, log_kind, log_fit, log_pop):
    """Apply steps ``start..stop-1`` whose (X, R, V) words sit at
    ``words[3*i : 3*i+3]``.

    Returns the index of the first step whose mutation hit an existing
    fitness (the caller resamples it), or ``stop`` if every step completed.
    Event arrays are written when ``log_kind`` is non-empty.
    """
    logging = log_kind.shape[0] > 0
    for i in range(start, stop):
        x = words[3 * i] < thr_p
        rr = words[3 * i + 1] < thr_r
        v = (words[3 * i + 2] >> np.uint64(11)) * _INV_2_53
        root = meta[ROOT]
        pop = 0 if root == -1 else nodes[root, POP]
        if x:
            if rr or pop == 0:
                node = insert(nodes, keys, prio, meta, free, v)
                if node == -1:
                    return i
                kind = MUTATION
                fit = v
                pop += 1
            else:
                if variant == PROPORTIONAL:
                    t = np.int64(v * pop)
                    if t >= pop:
                        t = pop - 1
                    node = select_by_population(nodes, meta, t)
                else:
                    ns = nodes[root, NSITES]
                    t = np.int64(v * ns)
                    if t >= ns:
                        t = ns - 1
                    node = select_by_rank(nodes, meta, t)
                add_members(nodes, node, 1)
                kind = INHERITANCE
                fit = keys[node]
                pop += 1
        elif pop > 0:
            if variant == PROPORTIONAL:
                fit = remove_lowest_member(nodes, keys, meta, free)
                pop -= 1
            else:
                fit, size = remove_lowest_site(nodes, keys, meta, free)
                pop -= size
            kind = DEATH
        else:
            kind = IDLE
            fit = np.nan
        if logging:
            log_kind[i] = kind
            log_fit[i] = fit
            log_pop[i] = pop
    return stop


@njit(cache=True)
def bulk_insert(nodes, keys, prio, meta, free, fitness, sizes):
    """Insert sites with the given sizes; returns how many keys were
    duplicates (and therefore skipped). The caller reserves capacity."""
    dup = 0
    for j in range(fitness.shape[0]):
        node = insert(nodes, keys, prio, meta, free, fitness[j])
        if node == -1:
            dup += 1
        elif sizes[j] > 1:
            add_members(nodes, node, sizes[j] - 1)
    return dup
