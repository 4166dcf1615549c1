"""Kernel based Galerkin multigrid for elliptic equations on compact manifolds.

Nested point sets on the unit sphere or the flat torus span spaces of local
Lagrange functions of a restricted surface spline kernel. The Galerkin
matrices of these spaces form a multigrid hierarchy solved with damped Jacobi
smoothing and exact transfers between nested spaces.
"""
