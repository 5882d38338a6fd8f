"""Fused numba implementation of one engine tick.

Mirrors ``Engine._tick_numpy`` operation for operation; the test-suite holds
the two to agreement at round-off level.

Line-of-sight queries are accelerated by a table over square blocks of the
arena: a block pair is "clear" when the convex hull of the two blocks touches
no wall, in which case every segment between them is unobstructed and the
exact segment test is skipped. Remaining queries test only walls whose
bounding box overlaps the query segment.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .engine import Coupling, SimState

_EPS = 1e-12
_TWO_PI = 2.0 * math.pi


@njit(cache=True, inline="always")
def _blocked(ax, ay, bx, by, walls, bbox):
    rx = bx - ax
    ry = by - ay
    lox, hix = min(ax, bx), max(ax, bx)
    loy, hiy = min(ay, by), max(ay, by)
    for s in range(walls.shape[0]):
        if hix < bbox[s, 0] or lox > bbox[s, 1] or hiy < bbox[s, 2] or loy > bbox[s, 3]:
            continue
        cx, cy, dx, dy = walls[s, 0], walls[s, 1], walls[s, 2], walls[s, 3]
        sx = dx - cx
        sy = dy - cy
        denom = rx * sy - ry * sx
        qpx = cx - ax
        qpy = cy - ay
        if abs(denom) > _EPS:
            t = (qpx * sy - qpy * sx) / denom
            u = (qpx * ry - qpy * rx) / denom
            if t > _EPS and t < 1.0 - _EPS and u >= -_EPS and u <= 1.0 + _EPS:
                return True
        elif abs(qpx * ry - qpy * rx) <= _EPS:
            rr = rx * rx + ry * ry
            if rr > 0:
                t0 = (qpx * rx + qpy * ry) / rr
                t1 = t0 + (sx * rx + sy * ry) / rr
                if max(t0, t1) > _EPS and min(t0, t1) < 1.0 - _EPS:
                    return True
    return False


@njit(cache=True, inline="always")
def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


@njit(cache=True, inline="always")
def _seg_touch(ax, ay, bx, by, cx, cy, dx, dy):
    # closed-segment intersection, touching included
    d1 = _cross(cx, cy, dx, dy, ax, ay)
    d2 = _cross(cx, cy, dx, dy, bx, by)
    d3 = _cross(ax, ay, bx, by, cx, cy)
    d4 = _cross(ax, ay, bx, by, dx, dy)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and min(cx, dx) <= ax <= max(cx, dx) and min(cy, dy) <= ay <= max(cy, dy):
        return True
    if d2 == 0 and min(cx, dx) <= bx <= max(cx, dx) and min(cy, dy) <= by <= max(cy, dy):
        return True
    if d3 == 0 and min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by):
        return True
    if d4 == 0 and min(ax, bx) <= dx <= max(ax, bx) and min(ay, by) <= dy <= max(ay, by):
        return True
    return False


@njit(cache=True)
def _hull_clear(pts, walls):
    # monotone-chain hull of up to 8 corner points (already sorted by x, then y)
    n = pts.shape[0]
    hull = np.empty((2 * n, 2))
    k = 0
    for i in range(n):
        while k >= 2 and _cross(hull[k - 2, 0], hull[k - 2, 1], hull[k - 1, 0], hull[k - 1, 1], pts[i, 0], pts[i, 1]) <= 0:
            k -= 1
        hull[k] = pts[i]
        k += 1
    lower = k + 1
    for i in range(n - 2, -1, -1):
        while k >= lower and _cross(hull[k - 2, 0], hull[k - 2, 1], hull[k - 1, 0], hull[k - 1, 1], pts[i, 0], pts[i, 1]) <= 0:
            k -= 1
        hull[k] = pts[i]
        k += 1
    k -= 1
    lox, hix = pts[:, 0].min(), pts[:, 0].max()
    loy, hiy = pts[:, 1].min(), pts[:, 1].max()
    for s in range(walls.shape[0]):
        cx, cy, dx, dy = walls[s, 0], walls[s, 1], walls[s, 2], walls[s, 3]
        if max(cx, dx) < lox or min(cx, dx) > hix or max(cy, dy) < loy or min(cy, dy) > hiy:
            continue
        inside = True
        for e in range(k):
            if _cross(hull[e, 0], hull[e, 1], hull[e + 1, 0], hull[e + 1, 1], cx, cy) < 0:
                inside = False
                break
        if inside:
            return False
        for e in range(k):
            if _seg_touch(hull[e, 0], hull[e, 1], hull[e + 1, 0], hull[e + 1, 1], cx, cy, dx, dy):
                return False
    return True


@njit(cache=True)
def clear_block_pairs(solid, walls, size):
    """``clear[a, b]`` is True when every segment from block ``a`` to block ``b`` is unobstructed.

    ``solid[a]`` marks blocks that contain any non-interior cell.
    """
    nby, nbx = solid.shape
    nb = nby * nbx
    clear = np.zeros((nb, nb), dtype=np.bool_)
    pts = np.empty((8, 2))
    for a in range(nb):
        ay, ax = a // nbx, a % nbx
        if solid[ay, ax]:
            continue
        for b in range(a, nb):
            by, bx = b // nbx, b % nbx
            if solid[by, bx]:
                continue
            x0, y0, x1, y1 = ax * size, ay * size, bx * size, by * size
            c = 0
            for ox in (0.0, size):
                for oy in (0.0, size):
                    pts[c, 0] = x0 + ox
                    pts[c, 1] = y0 + oy
                    pts[c + 4, 0] = x1 + ox
                    pts[c + 4, 1] = y1 + oy
                    c += 1
            order = np.argsort(pts[:, 0] * 1e6 + pts[:, 1])
            ok = _hull_clear(pts[order], walls)
            clear[a, b] = ok
            clear[b, a] = ok
    return clear


BLOCK = 16.0


def block_table(env, size=BLOCK):
    rows, cols = env.interior.shape
    nby, nbx = int(math.ceil(rows / size)), int(math.ceil(cols / size))
    s = int(size)
    padded = np.zeros((nby * s, nbx * s), dtype=bool)
    padded[:rows, :cols] = ~env.interior
    solid = padded.reshape(nby, s, nbx, s).any(axis=(1, 3))
    return clear_block_pairs(solid, np.ascontiguousarray(env.walls, dtype=float), float(size)), nbx


@njit(cache=True, inline="always")
def _visible(ax, ay, bx, by, walls, bbox, clear, nbx, inv_size):
    ia = int(ay * inv_size) * nbx + int(ax * inv_size)
    ib = int(by * inv_size) * nbx + int(bx * inv_size)
    if clear[ia, ib]:
        return True
    return not _blocked(ax, ay, bx, by, walls, bbox)


@njit(cache=True)
def blocked_pairs(a, b, walls, bbox):
    out = np.empty(a.shape[0], dtype=np.bool_)
    for i in range(a.shape[0]):
        out[i] = _blocked(a[i, 0], a[i, 1], b[i, 0], b[i, 1], walls, bbox)
    return out


@njit(cache=True, inline="always")
def _sample(fd, fn, px, py):
    rows, cols = fd.shape
    fx = min(max(px - 0.5, 0.0), cols - 1.0)
    fy = min(max(py - 0.5, 0.0), rows - 1.0)
    i0 = min(int(math.floor(fx)), cols - 2)
    j0 = min(int(math.floor(fy)), rows - 2)
    tx = fx - i0
    ty = fy - j0
    a = (1 - tx)
    b = (1 - ty)
    d = b * (a * fd[j0, i0] + tx * fd[j0, i0 + 1]) + ty * (a * fd[j0 + 1, i0] + tx * fd[j0 + 1, i0 + 1])
    nx = b * (a * fn[j0, i0, 0] + tx * fn[j0, i0 + 1, 0]) + ty * (a * fn[j0 + 1, i0, 0] + tx * fn[j0 + 1, i0 + 1, 0])
    ny = b * (a * fn[j0, i0, 1] + tx * fn[j0, i0 + 1, 1]) + ty * (a * fn[j0 + 1, i0, 1] + tx * fn[j0 + 1, i0 + 1, 1])
    norm = math.sqrt(nx * nx + ny * ny)
    if norm > 1e-12:
        return d, nx / norm, ny / norm
    jr = int(math.floor(fy + 0.5))
    ir = int(math.floor(fx + 0.5))
    return d, fn[jr, ir, 0], fn[jr, ir, 1]


@njit(cache=True, inline="always")
def _project(interior, near, px, py):
    rows, cols = interior.shape
    col = int(math.floor(px))
    row = int(math.floor(py))
    if 0 <= col < cols and 0 <= row < rows and interior[row, col]:
        return px, py
    col = min(max(col, 0), cols - 1)
    row = min(max(row, 0), rows - 1)
    return near[row, col, 1] + 0.5, near[row, col, 0] + 0.5


@njit(cache=True, inline="always")
def _blend(vx, vy, d, nx, ny, lam):
    beta = math.exp(-d / lam)
    mag = math.sqrt(vx * vx + vy * vy)
    return (1.0 - beta) * vx + beta * mag * nx, (1.0 - beta) * vy + beta * mag * ny


@njit(cache=True, error_model="numpy")
def step(single, x, xs, v, m, theta, c, r, q, active, vcstar,
         walls, bbox, clear, nbx, cue_xy, rew_xy, fd, fn, near, interior, fp,
         V, D, Vc, Vr, Dr, Vd, W, Wr, Wn, Wrn, q_new, full):
    (dt, dmax, sigma, kappa, tau_c, tau_r, tau_q, g_c, g_r, g_s, omega_0, omega_I,
     eta, eta_r, alpha, lam, mu, e_max, exact, cap, sgn) = (
        fp[0], fp[1], fp[2], fp[3], fp[4], fp[5], fp[6], fp[7], fp[8], fp[9], fp[10], fp[11],
        fp[12], fp[13], fp[14], fp[15], fp[16], fp[17], fp[18], fp[19], fp[20])
    P = xs if single else x
    n = P.shape[0]
    nc = cue_xy.shape[0]
    nr = rew_xy.shape[0]
    inv_s2 = 1.0 / (sigma * sigma)
    inv_b = 1.0 / BLOCK

    # (1) visibility and distances, (2) weights; the full matrices only on request
    dmax2 = dmax * dmax * (1.0 + 1e-9)
    for i in range(n):
        V[i, i] = False
        if full:
            D[i, i] = 0.0
            W[i, i] = 0.0
        for j in range(i + 1, n):
            ddx = P[j, 0] - P[i, 0]
            ddy = P[j, 1] - P[i, 1]
            d2 = ddx * ddx + ddy * ddy
            vis = False
            if d2 <= dmax2:
                vis = math.sqrt(d2) <= dmax and _visible(P[i, 0], P[i, 1], P[j, 0], P[j, 1], walls, bbox, clear, nbx, inv_b)
            V[i, j] = vis
            V[j, i] = vis
            if full:
                dist = math.sqrt(d2)
                D[i, j] = dist
                D[j, i] = dist
                w = math.exp(-(dist * dist) * inv_s2) if vis else 0.0
                W[i, j] = w
                W[j, i] = w
        for k in range(nc):
            same = P[i, 0] == cue_xy[k, 0] and P[i, 1] == cue_xy[k, 1]
            Vc[i, k] = same or _visible(P[i, 0], P[i, 1], cue_xy[k, 0], cue_xy[k, 1], walls, bbox, clear, nbx, inv_b)
        for k in range(nr):
            ddx = rew_xy[k, 0] - P[i, 0]
            ddy = rew_xy[k, 1] - P[i, 1]
            Dr[i, k] = math.sqrt(ddx * ddx + ddy * ddy)
            same = ddx == 0.0 and ddy == 0.0
            vis = active[k] and (same or _visible(P[i, 0], P[i, 1], rew_xy[k, 0], rew_xy[k, 1], walls, bbox, clear, nbx, inv_b))
            Vr[i, k] = vis
            Wr[i, k] = math.exp(-Dr[i, k] / kappa) if vis else 0.0
        if single:
            same = P[i, 0] == x[0, 0] and P[i, 1] == x[0, 1]
            Vd[i] = same or _visible(x[0, 0], x[0, 1], P[i, 0], P[i, 1], walls, bbox, clear, nbx, inv_b)
        else:
            Vd[i] = True

    # (3)-(8) row by row: everything for unit i depends only on its own p_i
    c_new = np.empty_like(c)
    r_new = np.empty_like(r)
    kc, kr, kq = dt / tau_c, dt / tau_r, dt / tau_q
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    p = np.empty(n)
    theta_new = np.empty(n)
    xs_new = np.empty_like(xs)
    drow = np.empty(n)
    wrow = np.empty(n)
    for i in range(n):
        cnt = 0.0
        tot = 0.0
        for k in range(nc):
            drive = 1.0 if (Vc[i, k] and vcstar[i, k]) else 0.0
            c_new[i, k] = c[i, k] + kc * (drive - c[i, k])
            if Vc[i, k]:
                cnt += 1.0
                tot += c_new[i, k]
        I_c = g_c * tot / cnt if cnt > 0 else 0.0
        cnt = 0.0
        tot = 0.0
        for k in range(nr):
            drive = 1.0 if Vr[i, k] else 0.0
            r_new[i, k] = r[i, k] + kr * (drive - r[i, k])
            cnt += drive
            tot += Wr[i, k] * r_new[i, k]
        I_r = g_r * tot / cnt if cnt > 0 else 0.0
        cnt = 0.0
        tot = 0.0
        ci = cos_t[i]
        si = sin_t[i]
        for j in range(n):
            if V[i, j]:
                qn = q[i, j] + kq * (cos_t[j] * ci + sin_t[j] * si - q[i, j])
                ddx = P[j, 0] - P[i, 0]
                ddy = P[j, 1] - P[i, 1]
                dist = math.sqrt(ddx * ddx + ddy * ddy)
                w0 = math.exp(-(dist * dist) * inv_s2)
                drow[j] = dist
                wrow[j] = w0
                cnt += 1.0
                tot += w0 * qn
            else:
                qn = q[i, j] - kq * q[i, j]
            q_new[i, j] = qn
        I_q = g_s * tot / cnt if cnt > 0 else 0.0
        act = I_c + I_r + I_q
        pi = act if act > 0.0 else 0.0
        p[i] = pi
        th = (theta[i] + _TWO_PI * (omega_0 + omega_I * pi) * dt) % _TWO_PI
        theta_new[i] = 0.0 if th >= _TWO_PI else th

        # (6) learning, (7) desired distances, (8) field-location shift
        fx = 0.0
        fy = 0.0
        cnt = 0.0
        learn_row = (not single) or Vd[i]
        rate = dt * eta * pi
        for j in range(n):
            if not V[i, j]:
                if full:
                    Wn[i, j] = 0.0
                continue
            w0 = wrow[j]
            dist = drow[j]
            if learn_row and (not single or Vd[j]) and rate != 0.0:
                w = w0 + rate * (q_new[i, j] - pi * w0)
                w = min(max(w, 1e-12), 1.0)
                lw = math.log(w)
            else:
                w = min(max(w0, 1e-12), 1.0)
                # unchanged weight: log of the kernel is known in closed form
                lw = -(dist * dist) * inv_s2 if w == w0 else math.log(w)
            if full:
                Wn[i, j] = w
            if exact:
                dn = sigma * math.sqrt(-lw)
            else:
                dn = math.sqrt(-2.0 * sigma * sigma * lw)
            dn = min(dn, cap)
            if dist > 0:
                s = (dn - dist) / dist
                fx += s * (P[j, 0] - P[i, 0])
                fy += s * (P[j, 1] - P[i, 1])
            cnt += 1.0
        if cnt > 0:
            fx /= 2.0 * cnt
            fy /= 2.0 * cnt
        frx = 0.0
        fry = 0.0
        cnt = 0.0
        for k in range(nr):
            if not Vr[i, k]:
                Wrn[i, k] = Wr[i, k]
                continue
            w = Wr[i, k]
            if learn_row:
                w = w + dt * eta_r * pi * (r_new[i, k] - pi * w)
            w = min(max(w, 1e-12), 1.0)
            Wrn[i, k] = w
            dn = min(-kappa * math.log(w), cap)
            dist = Dr[i, k]
            if dist > 0:
                s = (dn - dist) / dist
                frx += s * (rew_xy[k, 0] - P[i, 0])
                fry += s * (rew_xy[k, 1] - P[i, 1])
            cnt += 1.0
        if cnt > 0:
            frx /= cnt
            fry /= cnt
        dxx = sgn * (alpha * fx + (1.0 - alpha) * frx)
        dxy = sgn * (alpha * fy + (1.0 - alpha) * fry)
        d, nx, ny = _sample(fd, fn, xs[i, 0], xs[i, 1])
        bx, by = _blend(dxx, dxy, d, nx, ny, lam)
        xs_new[i, 0] = xs[i, 0] + bx
        xs_new[i, 1] = xs[i, 1] + by

    # (9) velocity pipeline
    na = x.shape[0]
    v_new = np.empty_like(v)
    x_new = np.empty_like(x)
    for a in range(na):
        if single:
            sw = 0.0
            ox = 0.0
            oy = 0.0
            for i in range(n):
                if Vd[i]:
                    wt = p[i] ** 3
                    sw += wt
                    ox += wt * (xs_new[i, 0] - x[0, 0])
                    oy += wt * (xs_new[i, 1] - x[0, 1])
            if sw > 0:
                vsx = ox / (dt * sw)
                vsy = oy / (dt * sw)
            else:
                vsx = 0.0
                vsy = 0.0
        else:
            vsx = (xs_new[a, 0] - x[a, 0]) / dt
            vsy = (xs_new[a, 1] - x[a, 1]) / dt
        vmx = mu * v[a, 0] + (1.0 - mu) * vsx
        vmy = mu * v[a, 1] + (1.0 - mu) * vsy
        vmax = math.sqrt(2.0 * e_max / m[a])
        speed = math.sqrt(vmx * vmx + vmy * vmy)
        if speed > 0:
            sc = vmax * math.tanh(speed / vmax) / speed
            vkx = sc * vmx
            vky = sc * vmy
        else:
            vkx = 0.0
            vky = 0.0
        d, nx, ny = _sample(fd, fn, x[a, 0], x[a, 1])
        vx, vy = _blend(vkx, vky, d, nx, ny, lam)
        v_new[a, 0] = vx
        v_new[a, 1] = vy
        # (10) integrate and project
        x_new[a, 0], x_new[a, 1] = _project(interior, near, x[a, 0] + vx * dt, x[a, 1] + vy * dt)
    for i in range(n):
        xs_new[i, 0], xs_new[i, 1] = _project(interior, near, xs_new[i, 0], xs_new[i, 1])
    return x_new, xs_new, v_new, theta_new, c_new, r_new, q_new, p


def wall_bboxes(walls):
    w = np.asarray(walls, dtype=float).reshape(-1, 4)
    return np.stack([np.minimum(w[:, 0], w[:, 2]), np.maximum(w[:, 0], w[:, 2]),
                     np.minimum(w[:, 1], w[:, 3]), np.maximum(w[:, 1], w[:, 3])], axis=1)


class FastTick:
    """Binds one engine's geometry and parameters to the compiled step."""

    def __init__(self, engine):
        cfg, p, env, fld = engine.config, engine.params, engine.env, engine.field
        self.single = cfg.single
        self.walls = np.ascontiguousarray(env.walls, dtype=float)
        self.bbox = wall_bboxes(self.walls)
        self.clear, self.nbx = engine.blocks
        self.cue_xy = np.ascontiguousarray(env.cue_positions, dtype=float)
        self.rew_xy = np.ascontiguousarray(env.reward_positions, dtype=float)
        self.fd = np.ascontiguousarray(fld.d)
        self.fn = np.ascontiguousarray(fld.n)
        self.near = np.ascontiguousarray(fld.nearest_interior, dtype=np.int64)
        self.interior = np.ascontiguousarray(env.interior)
        self.fp = np.array([
            p.dt, p.D_max_pts, p.sigma_pts, p.kappa_pts, p.tau_c, p.tau_r, p.tau_q,
            p.g_c, p.g_r, p.g_s, p.omega_0, p.omega_I, p.eta, p.eta_r, p.alpha, p.lambda_,
            p.mu, p.E_max, 1.0 if p.inverse == "exact" else 0.0, engine.diag, -1.0 if p.shift == "approach" else 1.0,
        ])
        n, nc, nr = p.N_s, len(self.cue_xy), len(self.rew_xy)
        self._scratch = lambda: (
            np.empty((n, n), np.bool_), np.empty((n, n)), np.empty((n, nc), np.bool_),
            np.empty((n, nr), np.bool_), np.empty((n, nr)), np.empty(n, np.bool_),
            np.empty((n, n)), np.empty((n, nr)), np.empty((n, n)), np.empty((n, nr)),
        )
        self.buffers = self._scratch()
        self._q_pool = (np.empty((n, n)), np.empty((n, n)))

    def tick(self, s: SimState, keep_coupling: bool, reuse: bool = False) -> SimState:
        """One tick. With ``reuse`` the returned ``q`` may share memory with a
        state two ticks old, so callers must not hold on to older states."""
        bufs = self._scratch() if keep_coupling else self.buffers
        if reuse and not keep_coupling:
            q_out = self._q_pool[1] if s.q is self._q_pool[0] else self._q_pool[0]
        else:
            q_out = np.empty_like(s.q)
        x, xs, v, theta, c, r, q, p = step(
            self.single, s.x, s.x_s, s.v, s.m, s.theta, s.c, s.r, s.q, s.active, s.V_cstar,
            self.walls, self.bbox, self.clear, self.nbx, self.cue_xy, self.rew_xy, self.fd, self.fn, self.near,
            self.interior, self.fp, *bufs, q_out, keep_coupling,
        )
        coupling = None
        if keep_coupling:
            V, D, Vc, Vr, Dr, Vd, W, Wr, Wn, Wrn = bufs
            coupling = Coupling(V, Vc, Vr, Vd, D, Dr, W, Wr, Wn, Wrn)
        return SimState(tick=s.tick + 1, x=x, x_s=xs, v=v, m=s.m, theta=theta, c=c, r=r, q=q, p=p,
                        active=s.active.copy(), V_cstar=s.V_cstar, coupling=coupling)
