"""Numerical geometry of Riemannian foliations: adapted connection, F-Jacobi
fields, distance to a leaf, Laplacian comparison and bottom-of-spectrum bounds.

JAX runs in float64.  Compiled kernels are cached on disk under
``$LEAFGEOM_JAX_CACHE`` (default ``~/.cache/leafgeom/jax``); set the variable
to an empty string to disable the cache.
"""

__version__ = "0.1.0"

import os as _os

import jax as _jax

_jax.config.update("jax_enable_x64", True)

_cache = _os.environ.get("LEAFGEOM_JAX_CACHE",
                         _os.path.join(_os.environ.get("XDG_CACHE_HOME", _os.path.expanduser("~/.cache")),
                                       "leafgeom", "jax"))
if _cache:
    _jax.config.update("jax_compilation_cache_dir", _cache)
    _jax.config.update("jax_persistent_cache_min_compile_time_secs", 0.1)
