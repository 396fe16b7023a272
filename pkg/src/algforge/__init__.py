"""algforge: Lie algebroids, connections, and infinitesimal gauge
transformations with a numeric verification suite."""

__version__ = "0.1.0"
