"""Offline figure generation from driftdiff run artifacts.

Pure consumers: every script reads persisted CSV/JSON outputs of the solver
CLI and renders a figure. Nothing here recomputes physics, so the solver
package does not need to be installed.
"""

__version__ = "0.1.0"
