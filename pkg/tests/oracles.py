"""Independent reference computations used only by the tests."""
import numpy as np


def direct_weak_entry(u, vx, vy, grid, spec, centre, kind):
    """Weak column / right-hand side entry by a direct triple Riemann sum.

    The test function is evaluated analytically on every node of the window
    and zeroed outside its truncation box; derivatives of ``u`` use the same
    second-order stencils as the library (``numpy.gradient``).
    """
    i0, j0, k0 = centre
    x = np.arange(grid.n_x) * grid.dx
    y = np.arange(grid.n_y) * grid.dy
    t = np.arange(grid.n_t) * grid.dt
    sx, sy, st = spec.sigma_x * grid.dx, spec.sigma_y * grid.dy, spec.sigma_t * grid.dt
    X = x[None, :, None] - x[i0]
    Y = y[:, None, None] - y[j0]
    Tt = t[None, None, :] - t[k0]
    mask = ((np.abs(X) <= spec.k_sigma * sx + 1e-9 * grid.dx)
            & (np.abs(Y) <= spec.k_sigma * sy + 1e-9 * grid.dy)
            & (np.abs(Tt) <= spec.k_sigma * st + 1e-9 * grid.dt))
    phi = np.exp(-X**2 / (2 * sx**2) - Y**2 / (2 * sy**2) - Tt**2 / (2 * st**2)) * mask
    phi_x = -X / sx**2 * phi
    phi_y = -Y / sy**2 * phi
    phi_t = -Tt / st**2 * phi
    ux = np.gradient(u, grid.dx, axis=1, edge_order=2)
    uy = np.gradient(u, grid.dy, axis=0, edge_order=2)
    g2 = ux**2 + uy**2
    V = {"vx": vx[None, None, :], "vy": vy[None, None, :]}
    terms = {
        "b": -phi_t * u,
        "const": phi,
        "u": phi * u,
        "u2": phi * u * u,
        "grad2": phi * g2,
        "u_grad2": phi * u * g2,
        "lap": -phi_x * ux - phi_y * uy,
        "vx_ux": phi_x * V["vx"] * u,
        "vy_uy": phi_y * V["vy"] * u,
    }[kind]
    w = grid.dx * grid.dy * grid.dt
    return float(terms.sum() * w), float(np.abs(terms).sum() * w)
