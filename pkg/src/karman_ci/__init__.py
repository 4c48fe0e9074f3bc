"""Numerical convex integration for the von Karman constraint
``2 sym grad w + grad v (x) grad v = A`` on a planar grid."""

__version__ = "0.1.0"
