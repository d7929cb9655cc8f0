# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled element-by-element kernels for periodic voxel meshes.

Element ``e = i + nx * (j + ny * k)`` has local nodes ordered
(0,0,0) (1,0,0) (1,1,0) (0,1,0) (0,0,1) (1,0,1) (1,1,1) (0,1,1); local dof
``3 * a + c``.  Loops run in a fixed order so results are bitwise stable.
"""
import numpy as np
cimport numpy as cnp

cdef int DX[8]
cdef int DY[8]
cdef int DZ[8]
DX[:] = [0, 1, 1, 0, 0, 1, 1, 0]
DY[:] = [0, 0, 1, 1, 0, 0, 1, 1]
DZ[:] = [0, 0, 0, 0, 1, 1, 1, 1]


cdef inline void _element_dofs(Py_ssize_t i, Py_ssize_t j, Py_ssize_t k,
                               Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz,
                               Py_ssize_t* dofs) nogil:
    cdef Py_ssize_t a, ii, jj, kk, node
    for a in range(8):
        ii = i + DX[a]
        if ii == nx:
            ii = 0
        jj = j + DY[a]
        if jj == ny:
            jj = 0
        kk = k + DZ[a]
        if kk == nz:
            kk = 0
        node = ii + nx * (jj + ny * kk)
        dofs[3 * a] = 3 * node
        dofs[3 * a + 1] = 3 * node + 1
        dofs[3 * a + 2] = 3 * node + 2


def voxel_matvec(const double[::1] u, const unsigned char[::1] phase,
                 const double[:, :, ::1] ke, Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz):
    cdef Py_ssize_t ndof = 3 * nx * ny * nz
    out_arr = np.zeros(ndof)
    cdef double[::1] out = out_arr
    # transposed blocks: the update below is an axpy over contiguous memory, which vectorizes
    cdef double[:, :, ::1] kt = np.ascontiguousarray(np.transpose(ke, (0, 2, 1)))
    cdef Py_ssize_t dofs[24]
    cdef double ue[24]
    cdef double fe[24]
    cdef const double* col
    cdef Py_ssize_t i, j, k, a, b, e
    cdef double ub
    with nogil:
        e = 0
        for k in range(nz):
            for j in range(ny):
                for i in range(nx):
                    _element_dofs(i, j, k, nx, ny, nz, dofs)
                    for a in range(24):
                        ue[a] = u[dofs[a]]
                        fe[a] = 0.0
                    col = &kt[phase[e], 0, 0]
                    for b in range(24):
                        ub = ue[b]
                        for a in range(24):
                            fe[a] += col[24 * b + a] * ub
                    for a in range(24):
                        out[dofs[a]] += fe[a]
                    e += 1
    return out_arr


def gather(const double[::1] u, Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz):
    cdef Py_ssize_t ne = nx * ny * nz
    res = np.empty((ne, 24))
    cdef double[:, ::1] r = res
    cdef Py_ssize_t dofs[24]
    cdef Py_ssize_t i, j, k, a, e
    with nogil:
        e = 0
        for k in range(nz):
            for j in range(ny):
                for i in range(nx):
                    _element_dofs(i, j, k, nx, ny, nz, dofs)
                    for a in range(24):
                        r[e, a] = u[dofs[a]]
                    e += 1
    return res


def scatter_add(const double[:, ::1] fe, Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz):
    out_arr = np.zeros(3 * nx * ny * nz)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t dofs[24]
    cdef Py_ssize_t i, j, k, a, e
    with nogil:
        e = 0
        for k in range(nz):
            for j in range(ny):
                for i in range(nx):
                    _element_dofs(i, j, k, nx, ny, nz, dofs)
                    for a in range(24):
                        out[dofs[a]] += fe[e, a]
                    e += 1
    return out_arr
