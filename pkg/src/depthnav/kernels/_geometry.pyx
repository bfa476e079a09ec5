# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray/obstacle intersection and signed-distance kernels.

Obstacles arrive packed as parallel arrays (see ``depthnav.kernels.pack``):
kind codes, centres, world-to-local rotations, half-dimensions and bounding
radii. Both entry points take the minimum over all obstacles per ray/point.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

cdef enum:
    SPHERE = 0
    BOX = 1
    CYLINDER = 2
    CONE = 3


cdef inline double _ray_sphere(double ox, double oy, double oz, double dx, double dy, double dz,
                               double r) nogil:
    cdef double b = ox * dx + oy * dy + oz * dz
    cdef double c = ox * ox + oy * oy + oz * oz - r * r
    if c <= 0.0:
        return 0.0
    cdef double disc = b * b - c
    if disc < 0.0:
        return INFINITY
    cdef double t = -b - sqrt(disc)
    if t < 0.0:
        return INFINITY
    return t


cdef inline double _ray_box(double ox, double oy, double oz, double dx, double dy, double dz,
                            double hx, double hy, double hz) nogil:
    cdef double tmin = -INFINITY
    cdef double tmax = INFINITY
    cdef double o[3]
    cdef double d[3]
    cdef double h[3]
    cdef double t1, t2, tmp
    cdef int i
    o[0] = ox; o[1] = oy; o[2] = oz
    d[0] = dx; d[1] = dy; d[2] = dz
    h[0] = hx; h[1] = hy; h[2] = hz
    for i in range(3):
        if fabs(d[i]) < 1e-300:
            if fabs(o[i]) > h[i]:
                return INFINITY
        else:
            t1 = (-h[i] - o[i]) / d[i]
            t2 = (h[i] - o[i]) / d[i]
            if t1 > t2:
                tmp = t1; t1 = t2; t2 = tmp
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
    if tmax < tmin or tmax < 0.0:
        return INFINITY
    if tmin < 0.0:
        return 0.0
    return tmin


cdef inline double _ray_cylinder(double ox, double oy, double oz, double dx, double dy, double dz,
                                 double r, double h) nogil:
    if ox * ox + oy * oy <= r * r and fabs(oz) <= h:
        return 0.0
    cdef double best = INFINITY
    cdef double a = dx * dx + dy * dy
    cdef double b, c, disc, t, z, x, y, zc
    cdef int s
    if a > 1e-300:
        b = ox * dx + oy * dy
        c = ox * ox + oy * oy - r * r
        disc = b * b - a * c
        if disc >= 0.0:
            t = (-b - sqrt(disc)) / a
            if t >= 0.0:
                z = oz + t * dz
                if fabs(z) <= h:
                    best = t
    if fabs(dz) > 1e-300:
        for s in range(2):
            zc = h if s == 0 else -h
            t = (zc - oz) / dz
            if t >= 0.0 and t < best:
                x = ox + t * dx
                y = oy + t * dy
                if x * x + y * y <= r * r:
                    best = t
    return best


cdef inline double _ray_cone(double ox, double oy, double oz, double dx, double dy, double dz,
                             double rb, double h) nogil:
    cdef double k = rb / (2.0 * h)
    cdef double k2 = k * k
    cdef double w = h - oz
    if fabs(oz) <= h and ox * ox + oy * oy <= k2 * w * w:
        return 0.0
    cdef double best = INFINITY
    cdef double A = dx * dx + dy * dy - k2 * dz * dz
    cdef double B = 2.0 * (ox * dx + oy * dy + k2 * w * dz)
    cdef double C = ox * ox + oy * oy - k2 * w * w
    cdef double disc, sq, t, z, x, y
    cdef double roots[2]
    cdef int nroots = 0
    cdef int i
    if fabs(A) > 1e-14:
        disc = B * B - 4.0 * A * C
        if disc >= 0.0:
            sq = sqrt(disc)
            roots[0] = (-B - sq) / (2.0 * A)
            roots[1] = (-B + sq) / (2.0 * A)
            nroots = 2
    elif fabs(B) > 1e-300:
        roots[0] = -C / B
        nroots = 1
    for i in range(nroots):
        t = roots[i]
        if t >= 0.0 and t < best:
            z = oz + t * dz
            if z >= -h and z <= h:
                best = t
    if fabs(dz) > 1e-300:
        t = (-h - oz) / dz
        if t >= 0.0 and t < best:
            x = ox + t * dx
            y = oy + t * dy
            if x * x + y * y <= rb * rb:
                best = t
    return best


cdef inline double _sdf_box(double x, double y, double z, double hx, double hy, double hz) nogil:
    cdef double qx = fabs(x) - hx
    cdef double qy = fabs(y) - hy
    cdef double qz = fabs(z) - hz
    cdef double mx = qx if qx > 0.0 else 0.0
    cdef double my = qy if qy > 0.0 else 0.0
    cdef double mz = qz if qz > 0.0 else 0.0
    cdef double inner = qx
    if qy > inner:
        inner = qy
    if qz > inner:
        inner = qz
    if inner > 0.0:
        inner = 0.0
    return sqrt(mx * mx + my * my + mz * mz) + inner


cdef inline double _sdf_cylinder(double x, double y, double z, double r, double h) nogil:
    cdef double dr = sqrt(x * x + y * y) - r
    cdef double dz = fabs(z) - h
    cdef double inner = dr if dr > dz else dz
    if inner > 0.0:
        inner = 0.0
    cdef double mr = dr if dr > 0.0 else 0.0
    cdef double mz = dz if dz > 0.0 else 0.0
    return inner + sqrt(mr * mr + mz * mz)


cdef inline double _sdf_cone(double x, double y, double z, double rb, double h) nogil:
    # capped cone, base radius rb at z=-h, apex at z=+h
    cdef double qx = sqrt(x * x + y * y)
    cdef double qy = z
    cdef double k2x = -rb
    cdef double k2y = 2.0 * h
    cdef double rsel = rb if qy < 0.0 else 0.0
    cdef double cax = qx - (qx if qx < rsel else rsel)
    cdef double cay = fabs(qy) - h
    cdef double tt = ((0.0 - qx) * k2x + (h - qy) * k2y) / (k2x * k2x + k2y * k2y)
    if tt < 0.0:
        tt = 0.0
    elif tt > 1.0:
        tt = 1.0
    cdef double cbx = qx - 0.0 + k2x * tt
    cdef double cby = qy - h + k2y * tt
    cdef double s = -1.0 if (cbx < 0.0 and cay < 0.0) else 1.0
    cdef double da = cax * cax + cay * cay
    cdef double db = cbx * cbx + cby * cby
    return s * sqrt(da if da < db else db)


cdef inline double _sdf_one(int kind, double x, double y, double z,
                            double hx, double hy, double hz) nogil:
    if kind == SPHERE:
        return sqrt(x * x + y * y + z * z) - hx
    if kind == BOX:
        return _sdf_box(x, y, z, hx, hy, hz)
    if kind == CYLINDER:
        return _sdf_cylinder(x, y, z, hx, hz)
    return _sdf_cone(x, y, z, hx, hz)


def raycast_batch(const double[:, ::1] origins, const double[:, ::1] dirs,
                  const double[::1] max_range, const int[::1] kinds, const double[:, ::1] centers,
                  const double[:, :, ::1] rots, const double[:, ::1] halfs, const double[::1] bounds):
    """Nearest hit distance per ray, capped at ``max_range``."""
    cdef Py_ssize_t n_rays = origins.shape[0]
    cdef Py_ssize_t n_obs = kinds.shape[0]
    out_arr = np.empty(n_rays, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double best, ox, oy, oz, dx, dy, dz, px, py, pz, lx, ly, lz, ldx, ldy, ldz
    cdef double b, c, disc, tb, t, br
    with nogil:
        for i in range(n_rays):
            best = max_range[i]
            ox = origins[i, 0]; oy = origins[i, 1]; oz = origins[i, 2]
            dx = dirs[i, 0]; dy = dirs[i, 1]; dz = dirs[i, 2]
            for j in range(n_obs):
                px = ox - centers[j, 0]
                py = oy - centers[j, 1]
                pz = oz - centers[j, 2]
                br = bounds[j]
                b = px * dx + py * dy + pz * dz
                c = px * px + py * py + pz * pz - br * br
                if c > 0.0:
                    disc = b * b - c
                    if disc < 0.0:
                        continue
                    tb = -b - sqrt(disc)
                    if tb < 0.0 or tb >= best:
                        continue
                lx = rots[j, 0, 0] * px + rots[j, 0, 1] * py + rots[j, 0, 2] * pz
                ly = rots[j, 1, 0] * px + rots[j, 1, 1] * py + rots[j, 1, 2] * pz
                lz = rots[j, 2, 0] * px + rots[j, 2, 1] * py + rots[j, 2, 2] * pz
                ldx = rots[j, 0, 0] * dx + rots[j, 0, 1] * dy + rots[j, 0, 2] * dz
                ldy = rots[j, 1, 0] * dx + rots[j, 1, 1] * dy + rots[j, 1, 2] * dz
                ldz = rots[j, 2, 0] * dx + rots[j, 2, 1] * dy + rots[j, 2, 2] * dz
                if kinds[j] == SPHERE:
                    t = _ray_sphere(lx, ly, lz, ldx, ldy, ldz, halfs[j, 0])
                elif kinds[j] == BOX:
                    t = _ray_box(lx, ly, lz, ldx, ldy, ldz, halfs[j, 0], halfs[j, 1], halfs[j, 2])
                elif kinds[j] == CYLINDER:
                    t = _ray_cylinder(lx, ly, lz, ldx, ldy, ldz, halfs[j, 0], halfs[j, 2])
                else:
                    t = _ray_cone(lx, ly, lz, ldx, ldy, ldz, halfs[j, 0], halfs[j, 2])
                if t < best:
                    best = t
            out[i] = best
    return out_arr


def sdf_batch(const double[:, ::1] points, const int[::1] kinds, const double[:, ::1] centers,
              const double[:, :, ::1] rots, const double[:, ::1] halfs, const double[::1] bounds,
              double cap):
    """Minimum signed distance per point, capped at ``cap`` when nothing is closer."""
    cdef Py_ssize_t n_pts = points.shape[0]
    cdef Py_ssize_t n_obs = kinds.shape[0]
    out_arr = np.empty(n_pts, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double best, px, py, pz, lx, ly, lz, dist, d
    with nogil:
        for i in range(n_pts):
            best = cap
            for j in range(n_obs):
                px = points[i, 0] - centers[j, 0]
                py = points[i, 1] - centers[j, 1]
                pz = points[i, 2] - centers[j, 2]
                dist = sqrt(px * px + py * py + pz * pz)
                if dist - bounds[j] >= best:
                    continue
                lx = rots[j, 0, 0] * px + rots[j, 0, 1] * py + rots[j, 0, 2] * pz
                ly = rots[j, 1, 0] * px + rots[j, 1, 1] * py + rots[j, 1, 2] * pz
                lz = rots[j, 2, 0] * px + rots[j, 2, 1] * py + rots[j, 2, 2] * pz
                d = _sdf_one(kinds[j], lx, ly, lz, halfs[j, 0], halfs[j, 1], halfs[j, 2])
                if d < best:
                    best = d
            out[i] = best
    return out_arr
