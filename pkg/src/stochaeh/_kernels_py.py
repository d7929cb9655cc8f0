"""Pure-numpy versions of the voxel kernels (same signatures as ``_kernels``)."""
from functools import lru_cache

import numpy as np

_LOCAL = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                   (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)])


@lru_cache(maxsize=8)
def element_dofs(nx, ny, nz):
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    nodes = ((i[:, None] + _LOCAL[:, 0]) % nx
             + nx * (((j[:, None] + _LOCAL[:, 1]) % ny) + ny * ((k[:, None] + _LOCAL[:, 2]) % nz)))
    dofs = (3 * nodes[:, :, None] + np.arange(3)).reshape(-1, 24)
    dofs.setflags(write=False)
    return dofs


def gather(u, nx, ny, nz):
    return u[element_dofs(nx, ny, nz)]


def scatter_add(fe, nx, ny, nz):
    dofs = element_dofs(nx, ny, nz)
    return np.bincount(dofs.ravel(), weights=np.asarray(fe).ravel(), minlength=3 * nx * ny * nz)


def voxel_matvec(u, phase, ke, nx, ny, nz):
    ue = gather(u, nx, ny, nz)
    fe = np.empty_like(ue)
    for p in range(ke.shape[0]):
        sel = phase == p
        if sel.any():
            fe[sel] = ue[sel] @ ke[p].T
    return scatter_add(fe, nx, ny, nz)
