"""
:mod:`invlab.plugins` -- Plugin System
======================================

This module exposes the API needed to create your own training plugins.
"""
from .contracts import Contract, apply, group_by_contract, plugin
from .resolve import resolve, resolve_all

__all__ = ["resolve", "resolve_all", "plugin", "Contract", "apply", "group_by_contract"]
