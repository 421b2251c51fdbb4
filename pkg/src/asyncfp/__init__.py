"""Partitioned asynchronous fixed-point iteration lab."""

from . import accel, bench, engine, fpcore, lapjac, mdpvi, numkit, ppscf  # noqa: F401
