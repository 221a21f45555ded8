"""
Loading of training plugins by module name.

A plugin name is the dotted name of an importable module, e.g.
``invlab.plugins.flip`` or ``my_project.hooks``. Names given with ``-p`` or
``INVLAB_PLUGINS`` and the ``plugins`` key of an experiment config all go
through :func:`resolve_all`.
"""
import importlib
import inspect
import logging
import sys
from os import getcwd
from types import ModuleType
from typing import Iterable, Iterator, List

from invlab.plugins.contracts import (
    Contract,
    InvalidContractError,
    InvalidPluginError,
    Plugin,
    contract,
)


class NoPluginError(ValueError):
    """Raised for a plugin module that holds no @plugin function."""

    def __init__(self, module: ModuleType) -> None:
        super().__init__(f"no @plugin function found in module {module.__name__}")
        self.module = module


def resolve(name: str) -> Iterator[Plugin]:
    """
    Import the module called *name* and yield the plugin functions it defines.

    The current directory is importable, so that project-local hook modules
    can be named without installing them.

    :raise ImportError: if name does not match an accessible module.
    :raise TypeError: from load_plugins_from_module.
    :raise InvalidContractError: from load_plugins_from_module.
    :raise NoPluginError: from load_plugins_from_module.
    """
    if getcwd() not in sys.path:
        sys.path.append(getcwd())
    module = importlib.import_module(name)
    for p in load_plugins_from_module(module):
        logging.info("training plugin %s hooks %s", _n(p), contract(p))
        yield p


def resolve_all(names: Iterable[str]) -> List[Plugin]:
    """
    Plugins of several modules, in the order of *names*.

    Order matters: :func:`invlab.plugins.contracts.apply` chains OnBatch
    plugins in this order.
    """
    return [p for name in names for p in resolve(name)]


def load_plugins_from_module(module: ModuleType) -> Iterator[Plugin]:
    """
    :param module: Python module from which to load plugin functions.
    :raise TypeError: if module is not a Python module.
    :raise InvalidContractError: if a function carries something other than a
        :class:`Contract`.
    :raise NoPluginError: if module doesn't contain at least one plugin function.
    """
    if not inspect.ismodule(module):
        raise TypeError(f"expected a module, got {module!r}")

    found = 0
    for _, obj in inspect.getmembers(module, inspect.isfunction):
        try:
            c = contract(obj)
        except InvalidPluginError:
            logging.debug("skipping %s in %s: no @plugin", _n(obj), module.__name__)
            continue
        if not isinstance(c, Contract):
            raise InvalidContractError(f"{_n(obj)} has an invalid contract {c!r}")
        found += 1
        yield obj

    if not found:
        raise NoPluginError(module)


def _n(x) -> str:
    return getattr(x, "__qualname__", None) or repr(x)
