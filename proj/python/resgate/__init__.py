"""Residual-gated transformer with token-wise layer skipping."""

try:  # wheel layout: extension lives inside the package
    from resgate._resgate import *  # noqa: F401,F403
    from resgate._resgate import __doc__  # noqa: F401
except ImportError:  # build-tree layout: extension on PYTHONPATH
    from _resgate import *  # noqa: F401,F403
    from _resgate import __doc__  # noqa: F401
