"""Numpy implementations of the geometry kernels (vectorised over rays/points)."""

import numpy as np

SPHERE, BOX, CYLINDER, CONE = 0, 1, 2, 3

_TINY = 1e-300


def _ray_sphere(o, d, r):
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - r * r
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        t = -b - np.sqrt(disc)
    t = np.where((disc < 0) | (t < 0), np.inf, t)
    return np.where(c <= 0, 0.0, t)


def _ray_box(o, d, h):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
    flat = np.abs(d) < _TINY
    lo = np.where(flat, -np.inf, np.minimum(t1, t2))
    hi = np.where(flat, np.inf, np.maximum(t1, t2))
    miss_flat = np.any(flat & (np.abs(o) > h), axis=1)
    tmin = lo.max(axis=1)
    tmax = hi.min(axis=1)
    hit = ~miss_flat & (tmax >= tmin) & (tmax >= 0)
    return np.where(hit, np.maximum(tmin, 0.0), np.inf)


def _ray_cylinder(o, d, r, h):
    ox, oy, oz = o.T
    dx, dy, dz = d.T
    inside = (ox * ox + oy * oy <= r * r) & (np.abs(oz) <= h)
    best = np.full(len(o), np.inf)
    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - r * r
    disc = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-b - np.sqrt(disc)) / a
    ok = (a > _TINY) & (disc >= 0) & (t >= 0) & (np.abs(oz + t * dz) <= h)
    best = np.where(ok, t, best)
    for zc in (h, -h):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (zc - oz) / dz
        x = ox + t * dx
        y = oy + t * dy
        ok = (np.abs(dz) > _TINY) & (t >= 0) & (t < best) & (x * x + y * y <= r * r)
        best = np.where(ok, t, best)
    return np.where(inside, 0.0, best)


def _ray_cone(o, d, rb, h):
    ox, oy, oz = o.T
    dx, dy, dz = d.T
    k2 = (rb / (2.0 * h)) ** 2
    w = h - oz
    inside = (np.abs(oz) <= h) & (ox * ox + oy * oy <= k2 * w * w)
    A = dx * dx + dy * dy - k2 * dz * dz
    B = 2.0 * (ox * dx + oy * dy + k2 * w * dz)
    C = ox * ox + oy * oy - k2 * w * w
    best = np.full(len(o), np.inf)
    quad = np.abs(A) > 1e-14
    disc = B * B - 4.0 * A * C
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(disc)
        r0 = np.where(quad, (-B - sq) / (2.0 * A), -C / B)
        r1 = np.where(quad, (-B + sq) / (2.0 * A), np.nan)
    valid_q = np.where(quad, disc >= 0, np.abs(B) > _TINY)
    for t, extra in ((r0, valid_q), (r1, quad & (disc >= 0))):
        z = oz + t * dz
        ok = extra & (t >= 0) & (t < best) & (z >= -h) & (z <= h)
        best = np.where(ok, t, best)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-h - oz) / dz
    x = ox + t * dx
    y = oy + t * dy
    ok = (np.abs(dz) > _TINY) & (t >= 0) & (t < best) & (x * x + y * y <= rb * rb)
    best = np.where(ok, t, best)
    return np.where(inside, 0.0, best)


def _sdf_box(p, h):
    q = np.abs(p) - h
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    return outside + np.minimum(q.max(axis=1), 0.0)


def _sdf_cylinder(p, r, h):
    dr = np.hypot(p[:, 0], p[:, 1]) - r
    dz = np.abs(p[:, 2]) - h
    return np.minimum(np.maximum(dr, dz), 0.0) + np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))


def _sdf_cone(p, rb, h):
    qx = np.hypot(p[:, 0], p[:, 1])
    qy = p[:, 2]
    k2x, k2y = -rb, 2.0 * h
    rsel = np.where(qy < 0, rb, 0.0)
    cax = qx - np.minimum(qx, rsel)
    cay = np.abs(qy) - h
    tt = np.clip(((0.0 - qx) * k2x + (h - qy) * k2y) / (k2x * k2x + k2y * k2y), 0.0, 1.0)
    cbx = qx + k2x * tt
    cby = qy - h + k2y * tt
    s = np.where((cbx < 0) & (cay < 0), -1.0, 1.0)
    return s * np.sqrt(np.minimum(cax * cax + cay * cay, cbx * cbx + cby * cby))


def sdf_local(kind, p, half):
    if kind == SPHERE:
        return np.linalg.norm(p, axis=1) - half[0]
    if kind == BOX:
        return _sdf_box(p, half)
    if kind == CYLINDER:
        return _sdf_cylinder(p, half[0], half[2])
    return _sdf_cone(p, half[0], half[2])


def raycast_batch(origins, dirs, max_range, kinds, centers, rots, halfs, bounds):
    best = np.array(max_range, dtype=np.float64, copy=True)
    for j in range(len(kinds)):
        rel = origins - centers[j]
        lo = rel @ rots[j].T
        ld = dirs @ rots[j].T
        kind = kinds[j]
        if kind == SPHERE:
            t = _ray_sphere(lo, ld, halfs[j, 0])
        elif kind == BOX:
            t = _ray_box(lo, ld, halfs[j])
        elif kind == CYLINDER:
            t = _ray_cylinder(lo, ld, halfs[j, 0], halfs[j, 2])
        else:
            t = _ray_cone(lo, ld, halfs[j, 0], halfs[j, 2])
        np.minimum(best, t, out=best)
    return best


def sdf_batch(points, kinds, centers, rots, halfs, bounds, cap):
    best = np.full(len(points), float(cap))
    for j in range(len(kinds)):
        rel = points - centers[j]
        near = np.linalg.norm(rel, axis=1) - bounds[j] < best
        if not np.any(near):
            continue
        d = sdf_local(kinds[j], rel[near] @ rots[j].T, halfs[j])
        best[near] = np.minimum(best[near], d)
    return best
