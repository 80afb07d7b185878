# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled interpolation kernels; same contracts as _fallback.py."""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


cdef inline Py_ssize_t _lower(double coord, Py_ssize_t extent) noexcept nogil:
    cdef Py_ssize_t i = <Py_ssize_t>coord
    if i > extent - 2:
        i = extent - 2
    if i < 0:
        i = 0
    return i


cdef inline double _frac(double coord, Py_ssize_t lower) noexcept nogil:
    cdef double f = coord - <double>lower
    if f < 0.0:
        return 0.0
    if f > 1.0:
        return 1.0
    return f


def plane_gather(floating[:, :, ::1] plane, floating[::1] xs, floating[::1] ys):
    cdef Py_ssize_t n_pts = xs.shape[0]
    cdef Py_ssize_t n_chan = plane.shape[0]
    cdef Py_ssize_t height = plane.shape[1]
    cdef Py_ssize_t width = plane.shape[2]
    out_arr = np.empty((n_pts, n_chan), dtype=np.asarray(plane).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t n, r, x0, y0
    cdef double fx, fy, w00, w01, w10, w11
    with nogil:
        for n in range(n_pts):
            x0 = _lower(xs[n], width)
            y0 = _lower(ys[n], height)
            fx = _frac(xs[n], x0)
            fy = _frac(ys[n], y0)
            w00 = (1.0 - fy) * (1.0 - fx)
            w01 = (1.0 - fy) * fx
            w10 = fy * (1.0 - fx)
            w11 = fy * fx
            for r in range(n_chan):
                out[n, r] = <floating>(
                    plane[r, y0, x0] * w00 + plane[r, y0, x0 + 1] * w01
                    + plane[r, y0 + 1, x0] * w10 + plane[r, y0 + 1, x0 + 1] * w11)
    return out_arr


def plane_scatter(floating[:, ::1] grad_out, floating[::1] xs, floating[::1] ys,
                  Py_ssize_t height, Py_ssize_t width):
    cdef Py_ssize_t n_pts = grad_out.shape[0]
    cdef Py_ssize_t n_chan = grad_out.shape[1]
    out_arr = np.zeros((n_chan, height, width), dtype=np.asarray(grad_out).dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t n, r, x0, y0
    cdef double fx, fy, w00, w01, w10, w11, g
    with nogil:
        for n in range(n_pts):
            x0 = _lower(xs[n], width)
            y0 = _lower(ys[n], height)
            fx = _frac(xs[n], x0)
            fy = _frac(ys[n], y0)
            w00 = (1.0 - fy) * (1.0 - fx)
            w01 = (1.0 - fy) * fx
            w10 = fy * (1.0 - fx)
            w11 = fy * fx
            for r in range(n_chan):
                g = grad_out[n, r]
                out[r, y0, x0] += <floating>(g * w00)
                out[r, y0, x0 + 1] += <floating>(g * w01)
                out[r, y0 + 1, x0] += <floating>(g * w10)
                out[r, y0 + 1, x0 + 1] += <floating>(g * w11)
    return out_arr


def zvec_gather(floating[:, ::1] vec, floating[::1] zs):
    cdef Py_ssize_t n_pts = zs.shape[0]
    cdef Py_ssize_t n_chan = vec.shape[0]
    cdef Py_ssize_t depth = vec.shape[1]
    out_arr = np.empty((n_pts, n_chan), dtype=np.asarray(vec).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t n, r, z0
    cdef double fz
    with nogil:
        for n in range(n_pts):
            z0 = _lower(zs[n], depth)
            fz = _frac(zs[n], z0)
            for r in range(n_chan):
                out[n, r] = <floating>(vec[r, z0] * (1.0 - fz) + vec[r, z0 + 1] * fz)
    return out_arr


def zvec_scatter(floating[:, ::1] grad_out, floating[::1] zs, Py_ssize_t depth):
    cdef Py_ssize_t n_pts = grad_out.shape[0]
    cdef Py_ssize_t n_chan = grad_out.shape[1]
    out_arr = np.zeros((n_chan, depth), dtype=np.asarray(grad_out).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t n, r, z0
    cdef double fz, g
    with nogil:
        for n in range(n_pts):
            z0 = _lower(zs[n], depth)
            fz = _frac(zs[n], z0)
            for r in range(n_chan):
                g = grad_out[n, r]
                out[r, z0] += <floating>(g * (1.0 - fz))
                out[r, z0 + 1] += <floating>(g * fz)
    return out_arr
