"""AdaGO optimizer library."""
