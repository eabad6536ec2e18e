"""Smooth random perturbation directions and a finite-difference Hessian form."""

import numpy as np

from pekarlab.hessian import ChannelFunction, ray_energy, sector_channels

L_MAX = 4


def smooth_direction(grid, L, rng, l_max=L_MAX):
    """Random exchange-symmetric sector function with smooth decaying channels."""
    chans = sector_channels(L, l_max)
    r = grid.nodes
    vals = np.zeros((len(chans), grid.n, grid.n))
    index = {c: k for k, c in enumerate(chans)}
    for k, (a, b) in enumerate(chans):
        if a > b:
            continue
        g = r**a * np.exp(-rng.uniform(0.3, 0.8) * r) * (1 + rng.normal() * np.cos(r / 2))
        h = r**b * np.exp(-rng.uniform(0.3, 0.8) * r) * (1 + rng.normal() * np.sin(r / 3))
        # comparable weight in every channel, whatever r^a does at large r
        block = rng.normal() * np.outer(g / np.max(np.abs(g)), h / np.max(np.abs(h)))
        sign = -1.0 if (a + b - L) % 2 else 1.0
        if a == b:
            vals[k] = 0.5 * (block + sign * block.T)
        else:
            vals[k] = block
            vals[index[(b, a)]] = sign * block.T
    j = ChannelFunction(grid, L, chans, vals)
    return j * (1.0 / j.norm())


def fd_form(sol, j, h=1e-3, l_max=L_MAX):
    """Richardson-extrapolated second difference of the energy along the ray."""
    e = ray_energy(sol, j, [-2 * h, -h, 0.0, h, 2 * h], l_max=l_max)
    d1 = (e[3] - 2 * e[2] + e[1]) / h**2
    d2 = (e[4] - 2 * e[2] + e[0]) / (4 * h**2)
    return 0.5 * (4 * d1 - d2) / 3
