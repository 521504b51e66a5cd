"""Independent dense reference computations for tiny meshes."""
import numpy as np

from tfmkit.fem import quadrature


class DenseP2:
    """Quadratic Lagrange triangles from barycentric formulas, assembled densely."""

    EDGES = ((0, 1), (1, 2), (0, 2))

    def __init__(self, mesh, degree):
        coords = []
        self.cell_nodes = []
        for cell in mesh.cells:
            X = mesh.vertices[cell]
            pts = list(X) + [(X[i] + X[j]) / 2 for i, j in self.EDGES]
            ids = []
            for q in pts:
                for k, c in enumerate(coords):
                    if np.allclose(c, q):
                        ids.append(k)
                        break
                else:
                    coords.append(q)
                    ids.append(len(coords) - 1)
            self.cell_nodes.append(ids)
        self.coords = np.array(coords)
        self.n = len(coords)
        self.mesh = mesh
        self.qp, self.qw = quadrature("triangle", degree)
        on_bnd = np.zeros(self.n, bool)
        for k, c in enumerate(self.coords):
            on_bnd[k] = np.isclose(np.abs(c), 0.5).any()
        self.free_nodes = np.flatnonzero(~on_bnd)

    def basis(self, xi):
        l = np.array([1 - xi[0] - xi[1], xi[0], xi[1]])
        dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        vals = [l[i] * (2 * l[i] - 1) for i in range(3)] + [4 * l[i] * l[j] for i, j in self.EDGES]
        grads = [(4 * l[i] - 1) * dl[i] for i in range(3)] + [4 * (l[i] * dl[j] + l[j] * dl[i]) for i, j in self.EDGES]
        return np.array(vals), np.array(grads)

    def cells(self):
        for cell, ids in zip(self.mesh.cells, self.cell_nodes):
            X = self.mesh.vertices[cell]
            J = np.array([X[1] - X[0], X[2] - X[0]]).T
            yield ids, J, abs(np.linalg.det(J)), np.linalg.inv(J)

    def mass(self):
        M = np.zeros((self.n, self.n))
        for ids, J, det, Jinv in self.cells():
            for xi, w in zip(self.qp, self.qw):
                v, _ = self.basis(xi)
                M[np.ix_(ids, ids)] += w * det * np.outer(v, v)
        return M

    def internal_force(self, U, stress):
        """Residual vector (2, n) of ``int stress(grad u) : grad phi``."""
        R = np.zeros((2, self.n))
        for ids, J, det, Jinv in self.cells():
            for xi, w in zip(self.qp, self.qw):
                _, g = self.basis(xi)
                G = g @ Jinv  # physical gradients (6, 2)
                grad_u = U[:, ids] @ G
                R[:, ids] += w * det * stress(grad_u) @ G.T
        return R


def _free_residual(dense, stress, T, scale=1.0):
    F = (dense.mass() @ T(dense.coords)).T
    fr = dense.free_nodes

    def res(z):
        U = np.zeros((2, dense.n))
        U[:, fr] = z.reshape(2, -1)
        return (dense.internal_force(U, stress) - F)[:, fr].ravel() / scale

    return res, 2 * len(fr)


def _fd_jacobian(res, n, h=1e-6):
    return np.column_stack([res(h * e) - res(-h * e) for e in np.eye(n)]) / (2 * h)


def dense_linear_solve(mesh, params, T):
    """Hooke solve for the interior P2 nodes; returns (points, displacement) with components stacked."""
    from tfmkit import material as mat

    dense = DenseP2(mesh, 4)
    res, n = _free_residual(dense, lambda G: mat.hooke_stress(G, params), T)
    # the residual is affine, so the Jacobian from exact differences is exact
    J = np.column_stack([res(e) - res(np.zeros(n)) for e in np.eye(n)])
    return dense.coords[dense.free_nodes], np.linalg.solve(J, -res(np.zeros(n)))


def dense_nonlinear_solve(mesh, params, T, quad_degree):
    """Hyperelastic equilibrium at the interior P2 nodes via a dense root solve."""
    from scipy.optimize import root

    from tfmkit import material as mat

    dense = DenseP2(mesh, quad_degree)
    res, n = _free_residual(dense, lambda G: mat.piola_stress(np.eye(2) + G, params), T, scale=1e4)
    z0 = np.zeros(n)
    sol = root(res, np.linalg.solve(_fd_jacobian(res, n), -res(z0)), tol=1e-15)
    return dense.coords[dense.free_nodes], sol.x
