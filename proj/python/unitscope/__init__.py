"""Python bindings for the unitscope neuron-explanation pipeline."""

try:
    from ._unitscope import *  # noqa: F401,F403  (installed layout)
    from ._unitscope import __version__  # noqa: F401
except ImportError:  # build-tree layout: extension sits on sys.path
    from _unitscope import *  # noqa: F401,F403
    from _unitscope import __version__  # noqa: F401
